//! Recurrent weak forecaster: one LSTM layer over the input window, a
//! rectified fully-connected layer (`fc1`) and a linear scalar head.
//!
//! Forward and backward passes are written out by hand over a flat
//! parameter buffer so the same code runs for any [`Scalar`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Window, WindowSample, DEFAULT_WINDOW};
use crate::optim::Adam;
use crate::scalar::Scalar;

pub const LEARNER_FORMAT_VERSION: u32 = 1;
const LEARNER_KIND: &str = "lstm_weak_learner";

/// Anything that maps a normalized input window to a normalized next-day
/// close.
pub trait Forecaster<T: Scalar>: Send + Sync {
    /// `(steps, dim)` of accepted windows.
    fn input_shape(&self) -> (usize, usize);

    fn predict(&self, window: &Window<T>) -> Result<T>;

    fn check_window(&self, window: &Window<T>) -> Result<()> {
        let (steps, dim) = self.input_shape();
        if window.steps() != steps || window.dim() != dim {
            return Err(Error::Shape {
                expected: format!("{steps}x{dim} window"),
                got: format!("{}x{} window", window.steps(), window.dim()),
            });
        }
        window.check_finite()
    }
}

impl<T: Scalar, F: Forecaster<T> + ?Sized> Forecaster<T> for &F {
    fn input_shape(&self) -> (usize, usize) {
        (**self).input_shape()
    }

    fn predict(&self, window: &Window<T>) -> Result<T> {
        (**self).predict(window)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSite {
    #[default]
    None,
    /// Final hidden state of the recurrent layer.
    RecurrentLastHidden,
    /// Rectified output of `fc1`.
    Fc1Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub input_dim: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    pub hidden: usize,
    pub fc1: usize,
    #[serde(default)]
    pub dropout_site: DropoutSite,
    #[serde(default)]
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl LearnerConfig {
    /// Defaults: H=64, F=32, 200 epochs, Adam at 3e-4, batches of 32.
    pub fn new(input_dim: usize) -> Self {
        LearnerConfig {
            input_dim,
            window: DEFAULT_WINDOW,
            hidden: 64,
            fc1: 32,
            dropout_site: DropoutSite::None,
            dropout_rate: 0.0,
            epochs: 200,
            learning_rate: 3e-4,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("window", self.window),
            ("hidden", self.hidden),
            ("fc1", self.fc1),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("learner {name} must be >= 1")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Offsets of each named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    h: usize,
    f: usize,
    w_ih: usize,
    w_hh: usize,
    b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(d: usize, h: usize, f: usize) -> Self {
        let g = 4 * h;
        let w_ih = 0;
        let w_hh = w_ih + g * d;
        let b = w_hh + g * h;
        let w1 = b + g;
        let b1 = w1 + f * h;
        let w2 = b1 + f;
        let b2 = w2 + f;
        Layout {
            d,
            h,
            f,
            w_ih,
            w_hh,
            b,
            w1,
            b1,
            w2,
            b2,
            total: b2 + 1,
        }
    }

    fn tensors(&self) -> Vec<TensorEntry> {
        let (d, h, f) = (self.d, self.h, self.f);
        let e = |name: &str, shape: Vec<usize>, offset| TensorEntry {
            name: name.to_string(),
            shape,
            offset,
        };
        vec![
            e("lstm.weight_ih", vec![4 * h, d], self.w_ih),
            e("lstm.weight_hh", vec![4 * h, h], self.w_hh),
            e("lstm.bias", vec![4 * h], self.b),
            e("fc1.weight", vec![f, h], self.w1),
            e("fc1.bias", vec![f], self.b1),
            e("out.weight", vec![1, f], self.w2),
            e("out.bias", vec![1], self.b2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Activations kept from a forward pass for backpropagation.
struct Trace<T> {
    /// Activated gates (i, f, g, o) per step, `steps × 4H`.
    gates: Vec<T>,
    /// Cell states `c_0..c_steps`, `(steps + 1) × H`.
    cells: Vec<T>,
    /// Hidden states `h_0..h_steps`, `(steps + 1) × H`.
    hiddens: Vec<T>,
    tanh_c: Vec<T>,
    h_drop: Vec<T>,
    a1: Vec<T>,
    r_drop: Vec<T>,
    out: T,
}

/// Per-sample dropout masks (already scaled by `1 / (1 - rate)`).
#[derive(Debug, Clone, Default)]
struct Masks<T> {
    hidden: Option<Vec<T>>,
    fc1: Option<Vec<T>>,
}

/// LSTM → fc1 (ReLU) → linear network with parameters in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork<T> {
    input_dim: usize,
    hidden: usize,
    fc1: usize,
    params: Vec<T>,
}

impl<T: Scalar> LstmNetwork<T> {
    /// Uniform initialization in ±1/√fan_in for every tensor.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, fc1: usize, rng: &mut R) -> Self {
        let layout = Layout::new(input_dim, hidden, fc1);
        let mut params = vec![T::zero(); layout.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        };
        fill(layout.w_ih..layout.w1, hidden);
        fill(layout.w1..layout.w2, hidden);
        fill(layout.w2..layout.total, fc1);
        LstmNetwork {
            input_dim,
            hidden,
            fc1,
            params,
        }
    }

    pub fn from_params(input_dim: usize, hidden: usize, fc1: usize, params: Vec<T>) -> Result<Self> {
        let expected = Layout::new(input_dim, hidden, fc1).total;
        if params.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} parameters"),
                got: format!("{} parameters", params.len()),
            });
        }
        Ok(LstmNetwork {
            input_dim,
            hidden,
            fc1,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.input_dim, self.hidden, self.fc1)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensors(&self) -> Vec<TensorEntry> {
        self.layout().tensors()
    }

    fn forward_trace(&self, x: &[T], steps: usize, masks: &Masks<T>) -> Trace<T> {
        let l = self.layout();
        let (d, h, f) = (l.d, l.h, l.f);
        let p = &self.params;
        let mut tr = Trace {
            gates: vec![T::zero(); steps * 4 * h],
            cells: vec![T::zero(); (steps + 1) * h],
            hiddens: vec![T::zero(); (steps + 1) * h],
            tanh_c: vec![T::zero(); steps * h],
            h_drop: vec![T::zero(); h],
            a1: vec![T::zero(); f],
            r_drop: vec![T::zero(); f],
            out: T::zero(),
        };

        let mut z = vec![T::zero(); 4 * h];
        for t in 0..steps {
            let xt = &x[t * d..(t + 1) * d];
            let h_prev = &tr.hiddens[t * h..(t + 1) * h];
            for (k, zk) in z.iter_mut().enumerate() {
                let wi = &p[l.w_ih + k * d..l.w_ih + (k + 1) * d];
                let wh = &p[l.w_hh + k * h..l.w_hh + (k + 1) * h];
                let mut acc = p[l.b + k];
                for (w, v) in wi.iter().zip(xt) {
                    acc = acc + *w * *v;
                }
                for (w, v) in wh.iter().zip(h_prev) {
                    acc = acc + *w * *v;
                }
                *zk = acc;
            }
            let gates = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                gates[j] = sigmoid(z[j]);
                gates[h + j] = sigmoid(z[h + j]);
                gates[2 * h + j] = z[2 * h + j].tanh();
                gates[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let (i, fg, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let c = fg * tr.cells[t * h + j] + i * g;
                let tc = c.tanh();
                tr.cells[(t + 1) * h + j] = c;
                tr.tanh_c[t * h + j] = tc;
                tr.hiddens[(t + 1) * h + j] = o * tc;
            }
        }

        let h_last = &tr.hiddens[steps * h..];
        for j in 0..h {
            let m = masks.hidden.as_ref().map_or(T::one(), |m| m[j]);
            tr.h_drop[j] = h_last[j] * m;
        }
        let mut out = p[l.b2];
        for i in 0..f {
            let w = &p[l.w1 + i * h..l.w1 + (i + 1) * h];
            let mut acc = p[l.b1 + i];
            for (wv, hv) in w.iter().zip(&tr.h_drop) {
                acc = acc + *wv * *hv;
            }
            tr.a1[i] = acc;
            let m = masks.fc1.as_ref().map_or(T::one(), |m| m[i]);
            tr.r_drop[i] = acc.max(T::zero()) * m;
            out = out + p[l.w2 + i] * tr.r_drop[i];
        }
        tr.out = out;
        tr
    }

    /// Accumulates `d_out · ∂out/∂θ` into `grad`.
    fn backward(&self, x: &[T], steps: usize, tr: &Trace<T>, masks: &Masks<T>, d_out: T, grad: &mut [T]) {
        let l = self.layout();
        let (d, h, f) = (l.d, l.h, l.f);
        let p = &self.params;

        grad[l.b2] = grad[l.b2] + d_out;
        let mut dh = vec![T::zero(); h];
        for i in 0..f {
            grad[l.w2 + i] = grad[l.w2 + i] + d_out * tr.r_drop[i];
            let m = masks.fc1.as_ref().map_or(T::one(), |m| m[i]);
            if tr.a1[i] <= T::zero() {
                continue;
            }
            let da = d_out * p[l.w2 + i] * m;
            grad[l.b1 + i] = grad[l.b1 + i] + da;
            let w = &p[l.w1 + i * h..l.w1 + (i + 1) * h];
            let gw = &mut grad[l.w1 + i * h..l.w1 + (i + 1) * h];
            for j in 0..h {
                gw[j] = gw[j] + da * tr.h_drop[j];
                dh[j] = dh[j] + w[j] * da;
            }
        }
        if let Some(m) = &masks.hidden {
            for j in 0..h {
                dh[j] = dh[j] * m[j];
            }
        }

        let one = T::one();
        let mut dc = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        let mut dh_prev = vec![T::zero(); h];
        for t in (0..steps).rev() {
            let gates = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &tr.cells[t * h..(t + 1) * h];
            let tc = &tr.tanh_c[t * h..(t + 1) * h];
            for j in 0..h {
                let (i, fg, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let d_o = dh[j] * tc[j];
                dc[j] = dc[j] + dh[j] * o * (one - tc[j] * tc[j]);
                let d_i = dc[j] * g;
                let d_g = dc[j] * i;
                let d_f = dc[j] * c_prev[j];
                dz[j] = d_i * i * (one - i);
                dz[h + j] = d_f * fg * (one - fg);
                dz[2 * h + j] = d_g * (one - g * g);
                dz[3 * h + j] = d_o * o * (one - o);
                dc[j] = dc[j] * fg;
            }

            let xt = &x[t * d..(t + 1) * d];
            let h_prev = &tr.hiddens[t * h..(t + 1) * h];
            dh_prev.iter_mut().for_each(|v| *v = T::zero());
            for (k, &dzk) in dz.iter().enumerate() {
                if dzk == T::zero() {
                    continue;
                }
                grad[l.b + k] = grad[l.b + k] + dzk;
                let gi = &mut grad[l.w_ih + k * d..l.w_ih + (k + 1) * d];
                for (g, &xv) in gi.iter_mut().zip(xt) {
                    *g = *g + dzk * xv;
                }
                let gh = &mut grad[l.w_hh + k * h..l.w_hh + (k + 1) * h];
                for (g, &hv) in gh.iter_mut().zip(h_prev) {
                    *g = *g + dzk * hv;
                }
                let wh = &p[l.w_hh + k * h..l.w_hh + (k + 1) * h];
                for (acc, &w) in dh_prev.iter_mut().zip(wh) {
                    *acc = *acc + w * dzk;
                }
            }
            std::mem::swap(&mut dh, &mut dh_prev);
        }
    }

    fn check_shape(&self, x: &Window<T>) -> Result<()> {
        if x.dim() != self.input_dim || x.steps() == 0 {
            return Err(Error::Shape {
                expected: format!("window with {} channels", self.input_dim),
                got: format!("{}x{} window", x.steps(), x.dim()),
            });
        }
        Ok(())
    }

    /// Deterministic forward pass, no dropout.
    pub fn forward(&self, x: &Window<T>) -> Result<T> {
        self.check_shape(x)?;
        Ok(self.forward_trace(x.as_slice(), x.steps(), &Masks::default()).out)
    }

    /// Mean squared error over `batch` without dropout.
    pub fn loss(&self, batch: &[WindowSample<T>]) -> Result<T> {
        let mut sum = T::zero();
        for s in batch {
            let e = self.forward(&s.x)? - s.y;
            sum = sum + e * e;
        }
        Ok(sum / T::of(batch.len() as f64))
    }

    /// Mean squared error over `batch` and its gradient (no dropout), with
    /// `grad` overwritten.
    pub fn loss_and_grad(&self, batch: &[WindowSample<T>], grad: &mut [T]) -> Result<T> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} gradient slots", self.params.len()),
                got: format!("{}", grad.len()),
            });
        }
        grad.iter_mut().for_each(|g| *g = T::zero());
        let scale = T::of(2.0 / batch.len() as f64);
        let mut sum = T::zero();
        for s in batch {
            self.check_shape(&s.x)?;
            sum = sum + self.accumulate(s, &Masks::default(), scale, grad);
        }
        Ok(sum / T::of(batch.len() as f64))
    }

    /// Squared error of one sample; adds `scale · (ŷ − y) · ∂ŷ/∂θ` to `grad`.
    fn accumulate(&self, s: &WindowSample<T>, masks: &Masks<T>, scale: T, grad: &mut [T]) -> T {
        let x = s.x.as_slice();
        let tr = self.forward_trace(x, s.x.steps(), masks);
        let err = tr.out - s.y;
        self.backward(x, s.x.steps(), &tr, masks, scale * err, grad);
        err * err
    }
}

/// Dropout mask of `n` entries, each `0` with probability `rate` and
/// `1 / (1 − rate)` otherwise.
fn dropout_mask<T: Scalar, R: Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training MSE of each epoch (normalized units).
    pub train_loss: Vec<f64>,
    /// `(epoch, validation MAE)` recorded every ten epochs.
    pub val_mae: Vec<(usize, f64)>,
}

/// A trained, immutable forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakLearner<T> {
    config: LearnerConfig,
    net: LstmNetwork<T>,
    log: TrainingLog,
}

impl<T: Scalar> WeakLearner<T> {
    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn network(&self) -> &LstmNetwork<T> {
        &self.net
    }

    pub fn training_log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data_file = format!("{stem}.bin");
        let manifest = LearnerManifest {
            format_version: LEARNER_FORMAT_VERSION,
            kind: LEARNER_KIND.to_string(),
            scalar: T::type_name().to_string(),
            config: self.config.clone(),
            tensors: self.net.tensors(),
            param_count: self.net.num_params(),
            data_file: data_file.clone(),
            training_log: self.log.clone(),
        };
        let mut bytes = Vec::with_capacity(self.net.num_params() * 8);
        for p in self.net.params() {
            bytes.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        let data_path = dir.join(&data_file);
        fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;
        let manifest_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: LearnerManifest = serde_json::from_str(&text)?;
        if m.format_version != LEARNER_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported learner format version {} (expected {LEARNER_FORMAT_VERSION})",
                manifest_path.display(),
                m.format_version
            )));
        }
        if m.kind != LEARNER_KIND {
            return Err(Error::Format(format!("unexpected learner kind `{}`", m.kind)));
        }
        m.config.validate()?;
        let layout = Layout::new(m.config.input_dim, m.config.hidden, m.config.fc1);
        if m.tensors != layout.tensors() || m.param_count != layout.total {
            return Err(Error::Format(format!(
                "{}: tensor table does not match the configured architecture",
                manifest_path.display()
            )));
        }
        let data_path = dir.join(&m.data_file);
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != m.param_count * 8 {
            return Err(Error::Format(format!(
                "{}: expected {} bytes, found {}",
                data_path.display(),
                m.param_count * 8,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let net = LstmNetwork::from_params(m.config.input_dim, m.config.hidden, m.config.fc1, params)?;
        Ok(WeakLearner {
            config: m.config,
            net,
            log: m.training_log,
        })
    }
}

impl<T: Scalar> Forecaster<T> for WeakLearner<T> {
    fn input_shape(&self) -> (usize, usize) {
        (self.config.window, self.config.input_dim)
    }

    fn predict(&self, window: &Window<T>) -> Result<T> {
        self.check_window(window)?;
        self.net.forward(window)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LearnerManifest {
    format_version: u32,
    kind: String,
    scalar: String,
    config: LearnerConfig,
    tensors: Vec<TensorEntry>,
    param_count: usize,
    data_file: String,
    training_log: TrainingLog,
}

fn mean_abs_error<T: Scalar, F: Forecaster<T>>(model: &F, samples: &[WindowSample<T>]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        sum += (model.predict(&s.x)? - s.y).abs().as_f64();
    }
    Ok(sum / samples.len() as f64)
}

/// Trains one learner with Adam on mean-squared error. Dropout, when
/// configured, is sampled per sample during training only.
pub fn train_learner<T: Scalar>(
    samples: &[WindowSample<T>],
    val_samples: &[WindowSample<T>],
    config: &LearnerConfig,
) -> Result<WeakLearner<T>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for s in samples.iter().chain(val_samples) {
        if s.x.dim() != config.input_dim || s.x.steps() != config.window {
            return Err(Error::Shape {
                expected: format!("{}x{} windows", config.window, config.input_dim),
                got: format!("{}x{} window for {}", s.x.steps(), s.x.dim(), s.date),
            });
        }
        s.x.check_finite()?;
        if !s.y.is_finite() {
            return Err(Error::invalid(format!("non-finite target for {}", s.date)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = LstmNetwork::init(config.input_dim, config.hidden, config.fc1, &mut rng);
    let mut adam = Adam::new(T::of(config.learning_rate), net.num_params());
    let mut grad = vec![T::zero(); net.num_params()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainingLog::default();
    let rate = config.dropout_rate;
    let use_dropout = rate > 0.0 && config.dropout_site != DropoutSite::None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::of(2.0 / chunk.len() as f64);
            let mut batch_sum = T::zero();
            for &i in chunk {
                let masks = if use_dropout {
                    match config.dropout_site {
                        DropoutSite::RecurrentLastHidden => Masks {
                            hidden: Some(dropout_mask(config.hidden, rate, &mut rng)),
                            fc1: None,
                        },
                        DropoutSite::Fc1Output => Masks {
                            hidden: None,
                            fc1: Some(dropout_mask(config.fc1, rate, &mut rng)),
                        },
                        DropoutSite::None => Masks::default(),
                    }
                } else {
                    Masks::default()
                };
                batch_sum = batch_sum + net.accumulate(&samples[i], &masks, scale, &mut grad);
            }
            let loss = batch_sum.as_f64() / chunk.len() as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch, loss });
            }
            adam.step(net.params_mut(), &grad);
            epoch_sum += batch_sum.as_f64();
        }
        log.train_loss.push(epoch_sum / samples.len() as f64);

        if epoch % 10 == 0 && !val_samples.is_empty() {
            let snapshot = WeakLearner {
                config: config.clone(),
                net: net.clone(),
                log: TrainingLog::default(),
            };
            log.val_mae.push((epoch, mean_abs_error(&snapshot, val_samples)?));
        }
    }

    Ok(WeakLearner {
        config: config.clone(),
        net,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn sample<T: Scalar>(values: &[f64], dim: usize, y: f64) -> WindowSample<T> {
        WindowSample {
            x: Window::new(values.len() / dim, dim, values.iter().map(|&v| T::of(v)).collect()).unwrap(),
            y: T::of(y),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        }
    }

    fn random_samples(n: usize, steps: usize, dim: usize, seed: u64) -> Vec<WindowSample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..steps * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                sample(&v, dim, rng.random_range(0.0..1.0))
            })
            .collect()
    }

    #[test]
    fn parameter_count_matches_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = LstmNetwork::<f64>::init(18, 64, 32, &mut rng);
        let expected = 4 * 64 * 18 + 4 * 64 * 64 + 4 * 64 + 32 * 64 + 32 + 32 + 1;
        assert_eq!(net.num_params(), expected);
        let last = net.tensors().last().cloned().unwrap();
        assert_eq!(last.offset + 1, expected);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = LstmNetwork::<f64>::init(2, 3, 2, &mut rng);
        // Push fc1 pre-activations away from the ReLU kink.
        let b1 = Layout::new(2, 3, 2).b1;
        net.params_mut()[b1] = 0.7;
        net.params_mut()[b1 + 1] = 0.9;
        let batch = random_samples(4, 7, 2, 3);
        let mut grad = vec![0.0; net.num_params()];
        net.loss_and_grad(&batch, &mut grad).unwrap();
        let eps = 1e-6;
        for k in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[k] += eps;
            let mut minus = net.clone();
            minus.params_mut()[k] -= eps;
            let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * eps);
            let denom = fd.abs().max(grad[k].abs()).max(1e-8);
            assert!((fd - grad[k]).abs() / denom < 1e-4, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = LstmNetwork::<f64>::init(2, 4, 3, &mut rng);
        let s = &random_samples(1, 7, 2, 5)[0];
        let masks = Masks {
            hidden: Some(dropout_mask(4, 0.0, &mut rng)),
            fc1: Some(dropout_mask(3, 0.0, &mut rng)),
        };
        let with = net.forward_trace(s.x.as_slice(), 7, &masks).out;
        assert_eq!(with, net.forward(&s.x).unwrap());
    }

    fn small_config(dim: usize) -> LearnerConfig {
        LearnerConfig {
            hidden: 8,
            fc1: 4,
            epochs: 20,
            learning_rate: 1e-2,
            batch_size: 8,
            seed: 11,
            ..LearnerConfig::new(dim)
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = random_samples(40, 7, 2, 9);
        let cfg = LearnerConfig {
            dropout_site: DropoutSite::Fc1Output,
            dropout_rate: 0.2,
            ..small_config(2)
        };
        let a = train_learner(&data, &data[..5], &cfg).unwrap();
        let b = train_learner(&data, &data[..5], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.training_log().train_loss.len(), 20);
        assert_eq!(
            a.training_log().val_mae.iter().map(|(e, _)| *e).collect::<Vec<_>>(),
            vec![10, 20]
        );
        let w = &data[0].x;
        assert_eq!(a.predict(w).unwrap(), a.predict(w).unwrap());
    }

    #[test]
    fn fits_constant_target() {
        let mut data = random_samples(64, 7, 1, 4);
        data.iter_mut().for_each(|s| s.y = 0.5);
        let cfg = LearnerConfig {
            hidden: 8,
            fc1: 4,
            epochs: 200,
            learning_rate: 3e-3,
            batch_size: 16,
            seed: 3,
            ..LearnerConfig::new(1)
        };
        let l = train_learner(&data, &[], &cfg).unwrap();
        for s in &data {
            assert!((l.predict(&s.x).unwrap() - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let data = random_samples(4, 7, 2, 1);
        assert!(matches!(
            train_learner::<f64>(&[], &[], &small_config(2)),
            Err(Error::EmptyTrainingSet)
        ));
        assert!(matches!(
            train_learner(&data, &[], &small_config(3)),
            Err(Error::Shape { .. })
        ));
        let l = train_learner(&data, &[], &LearnerConfig { epochs: 1, ..small_config(2) }).unwrap();
        let mut v = vec![0.1; 14];
        v[3] = f64::NAN;
        let bad = Window::new(7, 2, v).unwrap();
        assert!(matches!(l.predict(&bad), Err(Error::NonFiniteInput { row: 1, col: 1 })));
        let wrong = Window::new(6, 2, vec![0.0; 12]).unwrap();
        assert!(matches!(l.predict(&wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn diverging_training_reports_epoch_and_batch() {
        let mut data = random_samples(8, 7, 1, 1);
        data[5].y = 1e200;
        let cfg = LearnerConfig { epochs: 2, batch_size: 8, ..small_config(1) };
        match train_learner(&data, &[], &cfg) {
            Err(Error::NonFiniteLoss { epoch: 1, batch: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<WindowSample<f32>> = random_samples(16, 7, 2, 8)
            .into_iter()
            .map(|s| sample::<f32>(s.x.as_slice(), 2, s.y))
            .collect();
        let l = train_learner(&data, &data[..4], &LearnerConfig { epochs: 10, ..small_config(2) }).unwrap();
        l.save(dir.path(), "learner_00").unwrap();
        let back = WeakLearner::<f32>::load(dir.path(), "learner_00").unwrap();
        assert_eq!(back, l);

        let manifest = dir.path().join("learner_00.json");
        let text = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(WeakLearner::<f32>::load(dir.path(), "learner_00"), Err(Error::Format(_))));
    }
}
