//! Static line, band and histogram charts written as SVG and PNG.
//!
//! A [`Figure`] is laid out once into pixel-space shapes; both backends draw
//! the same shapes. PNG text uses an 8x8 bitmap font.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut, draw_polygon_mut};
use imageproc::point::Point;
use imageproc::rect::Rect;

const WIDTH: u32 = 900;
const HEIGHT: u32 = 540;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;
const GLYPH: f64 = 8.0;

pub type Color = [u8; 3];

pub const BLUE: Color = [31, 119, 180];
pub const ORANGE: Color = [255, 127, 14];
pub const GREEN: Color = [44, 160, 44];
pub const RED: Color = [214, 39, 40];
pub const GREY: Color = [127, 127, 127];
const BLACK: Color = [0, 0, 0];
const LIGHT: Color = [225, 225, 225];
const WHITE: Color = [255, 255, 255];

#[derive(Debug, Clone)]
pub struct Line {
    pub label: String,
    pub color: Color,
    pub points: Vec<(f64, f64)>,
}

/// Filled area between `lower` and `upper` at each `x`.
#[derive(Debug, Clone)]
pub struct Band {
    pub label: String,
    pub color: Color,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Histogram bar over `[x0, x1)`.
#[derive(Debug, Clone, Copy)]
pub struct Bar {
    pub x0: f64,
    pub x1: f64,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct Marker {
    pub x: f64,
    pub label: String,
    pub color: Color,
}

#[derive(Debug, Clone, Default)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    pub bars: Vec<Bar>,
    pub bar_color: Option<Color>,
    pub markers: Vec<Marker>,
    /// Custom x tick labels; numeric ticks otherwise.
    pub x_ticks: Option<Vec<(f64, String)>>,
    pub y_from_zero: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Rect { x: f64, y: f64, w: f64, h: f64, fill: Color },
    Polygon { points: Vec<(f64, f64)>, fill: Color },
    Polyline { points: Vec<(f64, f64)>, stroke: Color, width: f64 },
    Text { x: f64, y: f64, text: String, color: Color, anchor: Anchor, vertical: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Anchor {
    Start,
    Middle,
    End,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN_LEFT + (x - self.x0) / span * (WIDTH as f64 - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT as f64 - MARGIN_BOTTOM - (y - self.y0) / span * (HEIGHT as f64 - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Roughly `n` round tick positions covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![lo];
    }
    let raw = (hi - lo) / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a >= 1e6 || a < 1e-3) {
        format!("{v:.2e}")
    } else if a >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

impl Figure {
    fn frame(&self) -> Frame {
        let xs = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.0))
            .chain(self.bands.iter().flat_map(|b| b.x.iter().copied()))
            .chain(self.bars.iter().flat_map(|b| [b.x0, b.x1]))
            .chain(self.markers.iter().map(|m| m.x));
        let ys = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.1))
            .chain(self.bands.iter().flat_map(|b| b.lower.iter().chain(&b.upper).copied()))
            .chain(self.bars.iter().map(|b| b.height));
        let (x0, x1) = bounds(xs).unwrap_or((0.0, 1.0));
        let (mut y0, mut y1) = bounds(ys).unwrap_or((0.0, 1.0));
        if self.y_from_zero || !self.bars.is_empty() {
            y0 = y0.min(0.0);
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        Frame {
            x0,
            x1: if x1 > x0 { x1 } else { x0 + 1.0 },
            y0: if self.y_from_zero || !self.bars.is_empty() { y0 } else { y0 - pad },
            y1: y1 + pad,
        }
    }

    fn layout(&self) -> Vec<Shape> {
        let f = self.frame();
        let (left, right) = (MARGIN_LEFT, WIDTH as f64 - MARGIN_RIGHT);
        let (top, bottom) = (MARGIN_TOP, HEIGHT as f64 - MARGIN_BOTTOM);
        let mut out = vec![Shape::Rect {
            x: 0.0,
            y: 0.0,
            w: WIDTH as f64,
            h: HEIGHT as f64,
            fill: WHITE,
        }];

        let y_ticks = nice_ticks(f.y0, f.y1, 6);
        for &t in &y_ticks {
            let y = f.py(t);
            out.push(Shape::Polyline {
                points: vec![(left, y), (right, y)],
                stroke: LIGHT,
                width: 1.0,
            });
            out.push(Shape::Text {
                x: left - 6.0,
                y: y + 4.0,
                text: tick_label(t),
                color: BLACK,
                anchor: Anchor::End,
                vertical: false,
            });
        }
        let x_ticks: Vec<(f64, String)> = match &self.x_ticks {
            Some(t) => t.clone(),
            None => nice_ticks(f.x0, f.x1, 8).into_iter().map(|t| (t, tick_label(t))).collect(),
        };
        for (t, label) in &x_ticks {
            let x = f.px(*t);
            out.push(Shape::Polyline {
                points: vec![(x, bottom), (x, bottom + 5.0)],
                stroke: BLACK,
                width: 1.0,
            });
            out.push(Shape::Text {
                x,
                y: bottom + 20.0,
                text: label.clone(),
                color: BLACK,
                anchor: Anchor::Middle,
                vertical: false,
            });
        }

        for b in &self.bands {
            let mut points: Vec<(f64, f64)> = b.x.iter().zip(&b.upper).map(|(&x, &y)| (f.px(x), f.py(y))).collect();
            points.extend(b.x.iter().zip(&b.lower).rev().map(|(&x, &y)| (f.px(x), f.py(y))));
            out.push(Shape::Polygon {
                points,
                fill: blend(b.color, 0.3),
            });
        }
        let bar_color = self.bar_color.unwrap_or(BLUE);
        for b in &self.bars {
            let (xa, xb) = (f.px(b.x0), f.px(b.x1));
            let (ya, yb) = (f.py(b.height.max(0.0)), f.py(0.0f64.max(f.y0)));
            out.push(Shape::Rect {
                x: xa,
                y: ya,
                w: (xb - xa - 1.0).max(1.0),
                h: (yb - ya).max(0.0),
                fill: bar_color,
            });
        }
        for l in &self.lines {
            out.push(Shape::Polyline {
                points: l.points.iter().map(|&(x, y)| (f.px(x), f.py(y))).collect(),
                stroke: l.color,
                width: 2.0,
            });
        }
        for m in &self.markers {
            let x = f.px(m.x);
            out.push(Shape::Polyline {
                points: vec![(x, top), (x, bottom)],
                stroke: m.color,
                width: 1.5,
            });
            out.push(Shape::Text {
                x: x + 4.0,
                y: top + 14.0,
                text: m.label.clone(),
                color: m.color,
                anchor: Anchor::Start,
                vertical: false,
            });
        }

        out.push(Shape::Polyline {
            points: vec![(left, top), (left, bottom), (right, bottom)],
            stroke: BLACK,
            width: 1.0,
        });
        out.push(Shape::Text {
            x: WIDTH as f64 / 2.0,
            y: 28.0,
            text: self.title.clone(),
            color: BLACK,
            anchor: Anchor::Middle,
            vertical: false,
        });
        out.push(Shape::Text {
            x: (left + right) / 2.0,
            y: HEIGHT as f64 - 20.0,
            text: self.x_label.clone(),
            color: BLACK,
            anchor: Anchor::Middle,
            vertical: false,
        });
        out.push(Shape::Text {
            x: 20.0,
            y: (top + bottom) / 2.0,
            text: self.y_label.clone(),
            color: BLACK,
            anchor: Anchor::Middle,
            vertical: true,
        });

        // Legend, top right.
        let entries: Vec<(&str, Color)> = self
            .lines
            .iter()
            .map(|l| (l.label.as_str(), l.color))
            .chain(self.bands.iter().map(|b| (b.label.as_str(), blend(b.color, 0.3))))
            .filter(|(l, _)| !l.is_empty())
            .collect();
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = top + 10.0 + 16.0 * i as f64;
            let x = right - 10.0 - GLYPH * label.len() as f64 - 26.0;
            out.push(Shape::Rect {
                x,
                y: y - 5.0,
                w: 18.0,
                h: 6.0,
                fill: *color,
            });
            out.push(Shape::Text {
                x: x + 24.0,
                y: y + 3.0,
                text: label.to_string(),
                color: BLACK,
                anchor: Anchor::Start,
                vertical: false,
            });
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">"#
        );
        for shape in self.layout() {
            match shape {
                Shape::Rect { x, y, w, h, fill } => {
                    let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{}"/>"#, hex(fill));
                }
                Shape::Polygon { points, fill } => {
                    let _ = writeln!(s, r#"<polygon points="{}" fill="{}"/>"#, svg_points(&points), hex(fill));
                }
                Shape::Polyline { points, stroke, width } => {
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{width}"/>"#,
                        svg_points(&points),
                        hex(stroke)
                    );
                }
                Shape::Text {
                    x,
                    y,
                    text,
                    color,
                    anchor,
                    vertical,
                } => {
                    let anchor = match anchor {
                        Anchor::Start => "start",
                        Anchor::Middle => "middle",
                        Anchor::End => "end",
                    };
                    let rotate = if vertical {
                        format!(r#" transform="rotate(-90 {x:.2} {y:.2})""#)
                    } else {
                        String::new()
                    };
                    let _ = writeln!(
                        s,
                        r#"<text x="{x:.2}" y="{y:.2}" fill="{}" text-anchor="{anchor}"{rotate}>{}</text>"#,
                        hex(color),
                        escape(&text)
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn to_png(&self) -> RgbImage {
        let mut img = RgbImage::new(WIDTH, HEIGHT);
        for shape in self.layout() {
            match shape {
                Shape::Rect { x, y, w, h, fill } => {
                    if w >= 0.5 && h >= 0.5 {
                        let r = Rect::at(x.round() as i32, y.round() as i32).of_size(w.round().max(1.0) as u32, h.round().max(1.0) as u32);
                        draw_filled_rect_mut(&mut img, r, Rgb(fill));
                    }
                }
                Shape::Polygon { points, fill } => {
                    let mut poly: Vec<Point<i32>> = points.iter().map(|&(x, y)| Point::new(x.round() as i32, y.round() as i32)).collect();
                    poly.dedup();
                    if poly.len() > 2 && poly.first() == poly.last() {
                        poly.pop();
                    }
                    if poly.len() >= 3 {
                        draw_polygon_mut(&mut img, &poly, Rgb(fill));
                    }
                }
                Shape::Polyline { points, stroke, width } => {
                    let offsets: &[f32] = if width > 1.0 { &[-0.5, 0.5] } else { &[0.0] };
                    for w in points.windows(2) {
                        for &o in offsets {
                            let (a, b) = ((w[0].0 as f32, w[0].1 as f32 + o), (w[1].0 as f32, w[1].1 as f32 + o));
                            draw_line_segment_mut(&mut img, a, b, Rgb(stroke));
                        }
                    }
                }
                Shape::Text {
                    x,
                    y,
                    text,
                    color,
                    anchor,
                    vertical,
                } => draw_text(&mut img, x, y, &text, color, anchor, vertical),
            }
        }
        img
    }

    /// Writes `<stem>.svg` and `<stem>.png`; returns both paths.
    pub fn save(&self, stem: &Path) -> Result<[PathBuf; 2]> {
        let svg = stem.with_extension("svg");
        let png = stem.with_extension("png");
        std::fs::write(&svg, self.to_svg()).with_context(|| format!("writing {}", svg.display()))?;
        self.to_png()
            .save(&png)
            .with_context(|| format!("writing {}", png.display()))?;
        Ok([svg, png])
    }
}

fn blend(c: Color, alpha: f64) -> Color {
    c.map(|v| (v as f64 * alpha + 255.0 * (1.0 - alpha)).round() as u8)
}

fn hex(c: Color) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn svg_points(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bitmap text; `(x, y)` is the baseline anchor as in SVG.
fn draw_text(img: &mut RgbImage, x: f64, y: f64, text: &str, color: Color, anchor: Anchor, vertical: bool) {
    let len = GLYPH * text.chars().count() as f64;
    let shift = match anchor {
        Anchor::Start => 0.0,
        Anchor::Middle => len / 2.0,
        Anchor::End => len,
    };
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::legacy::BASIC_LEGACY
            .get(ch as usize)
            .copied()
            .unwrap_or(font8x8::legacy::BASIC_LEGACY['?' as usize]);
        let along = i as f64 * GLYPH - shift;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                let (px, py) = if vertical {
                    (x - GLYPH + 2.0 + row as f64, y - along - col as f64)
                } else {
                    (x + along + col as f64, y - GLYPH + 1.0 + row as f64)
                };
                if px >= 0.0 && py >= 0.0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, Rgb(color));
                }
            }
        }
    }
}
