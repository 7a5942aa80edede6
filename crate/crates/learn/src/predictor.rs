//! Traffic forecaster: a probsparse-attention encoder with distilling
//! convolution and pooling, a masked-attention decoder with cross attention,
//! and a regression head producing the next long slot's per-slot counts.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sliceoff_core::slicer::Forecaster;
use sliceoff_core::traffic::TrafficSeries;

use crate::attention::{AttentionKind, MultiHead};
use crate::graph::{Bound, Graph, Mat, Var};
use crate::optim::Adam;
use crate::params::{uniform_init, Params};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub input_window_slots: usize,
    pub horizon_slots: usize,
    /// Most recent history slots repeated at the start of the decoder input.
    pub decoder_context_slots: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub top_u_factor: f64,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Distance between consecutive training windows, in slots.
    pub window_stride: usize,
    pub validation_fraction: f64,
    pub slots_per_day: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            input_window_slots: 48,
            horizon_slots: 6,
            decoder_context_slots: 24,
            model_dim: 32,
            num_heads: 4,
            encoder_layers: 2,
            decoder_layers: 1,
            top_u_factor: 5.0,
            train_epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 10,
            window_stride: 1,
            validation_fraction: 0.2,
            slots_per_day: 144,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_window_slots,
            self.horizon_slots,
            self.model_dim,
            self.num_heads,
            self.encoder_layers,
            self.train_epochs,
            self.batch_size,
            self.window_stride,
            self.slots_per_day,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("predictor sizes must be positive".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config("model_dim must be divisible by num_heads".into()));
        }
        if self.decoder_context_slots > self.input_window_slots {
            return Err(Error::Config("decoder context longer than the input window".into()));
        }
        if !(self.top_u_factor > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::Config("top_u_factor and learning_rate must be > 0".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn feature_dim(&self, regions: usize) -> usize {
        3 + regions
    }
}

fn positional_encoding(len: usize, dim: usize) -> Mat {
    Mat::from_shape_fn((len, dim), |(p, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = p as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayer {
    attn: MultiHead,
    conv: [usize; 3],
    conv_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLayer {
    self_attn: MultiHead,
    cross_attn: MultiHead,
    ff_w1: usize,
    ff_b1: usize,
    ff_w2: usize,
    ff_b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed_w: usize,
    embed_b: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
}

impl Layout {
    fn build(cfg: &PredictorConfig, regions: usize, rng: &mut ChaCha8Rng) -> (Self, Params) {
        let d = cfg.model_dim;
        let f = cfg.feature_dim(regions);
        let mut p = Params::new();
        let embed_w = p.add("embed.w", uniform_init(f, d, f, rng));
        let embed_b = p.add("embed.b", uniform_init(1, d, f, rng));
        let encoder = (0..cfg.encoder_layers)
            .map(|j| {
                let attn = MultiHead::register(&mut p, &format!("enc{j}.attn"), d, cfg.num_heads, rng);
                let conv = [0, 1, 2].map(|t| p.add(format!("enc{j}.conv{t}"), uniform_init(d, d, 3 * d, rng)));
                let conv_b = p.add(format!("enc{j}.conv_b"), uniform_init(1, d, 3 * d, rng));
                EncoderLayer { attn, conv, conv_b }
            })
            .collect();
        let decoder = (0..cfg.decoder_layers)
            .map(|j| {
                let self_attn = MultiHead::register(&mut p, &format!("dec{j}.self"), d, cfg.num_heads, rng);
                let cross_attn = MultiHead::register(&mut p, &format!("dec{j}.cross"), d, cfg.num_heads, rng);
                DecoderLayer {
                    self_attn,
                    cross_attn,
                    ff_w1: p.add(format!("dec{j}.ff_w1"), uniform_init(d, d, d, rng)),
                    ff_b1: p.add(format!("dec{j}.ff_b1"), uniform_init(1, d, d, rng)),
                    ff_w2: p.add(format!("dec{j}.ff_w2"), uniform_init(d, d, d, rng)),
                    ff_b2: p.add(format!("dec{j}.ff_b2"), uniform_init(1, d, d, rng)),
                }
            })
            .collect();
        let layout = Self {
            embed_w,
            embed_b,
            encoder,
            decoder,
            head_w1: p.add("head.w1", uniform_init(d, d, d, rng)),
            head_b1: p.add("head.b1", uniform_init(1, d, d, rng)),
            head_w2: p.add("head.w2", uniform_init(d, 1, d, rng)),
            head_b2: p.add("head.b2", Mat::zeros((1, 1))),
        };
        (layout, p)
    }
}

/// One forecasting example: a region's history window and what follows.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub region: usize,
    /// Absolute index of the first history slot.
    pub start: usize,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
}

/// Chronologically split training and validation windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
}

impl WindowDataset {
    /// Windows whose targets end before the split point train; windows whose
    /// targets start after it validate.
    pub fn from_series(series: &TrafficSeries, cfg: &PredictorConfig) -> Result<Self> {
        let (l, h) = (cfg.input_window_slots, cfg.horizon_slots);
        let n = series.len();
        let split = ((1.0 - cfg.validation_fraction) * n as f64).floor() as usize;
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for r in 0..series.num_regions() {
            let counts: Vec<f64> = series.counts(r).iter().map(|&c| f64::from(c)).collect();
            let mut t = 0;
            while t + l + h <= n {
                let w = Window {
                    region: r,
                    start: t,
                    history: counts[t..t + l].to_vec(),
                    target: counts[t + l..t + l + h].to_vec(),
                };
                if t + l + h <= split {
                    train.push(w);
                } else if t + l >= split {
                    validation.push(w);
                }
                t += cfg.window_stride;
            }
        }
        if train.is_empty() || validation.is_empty() {
            return Err(Error::Config(format!(
                "series of {n} slots too short for windows of {} slots plus a validation split",
                l + h
            )));
        }
        Ok(Self { train, validation })
    }
}

/// Repeats the last observation, or the mean of the last `window` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NaiveKind {
    LastValue,
    MovingAverage { window: usize },
}

pub fn naive_predict(history: &[f64], kind: NaiveKind, horizon: usize) -> Result<Vec<f64>> {
    let Some(&last) = history.last() else {
        return Err(Error::Config("naive prediction needs a non-empty history".into()));
    };
    let value = match kind {
        NaiveKind::LastValue => last,
        NaiveKind::MovingAverage { window } => {
            if window == 0 || window > history.len() {
                return Err(Error::Config(format!(
                    "moving-average window {window} invalid for history of {}",
                    history.len()
                )));
            }
            history[history.len() - window..].iter().sum::<f64>() / window as f64
        }
    };
    Ok(vec![value; horizon])
}

/// Naive predictor behind the slicer's forecasting interface.
#[derive(Debug, Clone, Copy)]
pub struct NaiveForecaster {
    pub kind: NaiveKind,
    pub horizon: usize,
}

impl Forecaster for NaiveForecaster {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, history: &TrafficSeries, end_slot: usize) -> sliceoff_core::Result<Vec<Vec<f64>>> {
        (0..history.num_regions())
            .map(|r| {
                let h: Vec<f64> = history.counts(r)[..end_slot].iter().map(|&c| f64::from(c)).collect();
                naive_predict(&h, self.kind, self.horizon)
                    .map_err(|e| sliceoff_core::Error::Domain(e.to_string()))
            })
            .collect()
    }
}

/// Mean squared error of a naive predictor over a set of windows.
pub fn naive_mse(windows: &[Window], kind: NaiveKind) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for w in windows {
        let p = naive_predict(&w.history, kind, w.target.len())?;
        sum += p.iter().zip(&w.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += w.target.len();
    }
    Ok(sum / n.max(1) as f64)
}

/// Raw and integer forecasts, one row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub raw: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPredictor {
    pub config: PredictorConfig,
    pub region_ids: Vec<String>,
    /// Counts are divided by this before entering the network.
    pub value_scale: f64,
    params: Params,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: PredictorConfig,
    region_ids: Vec<String>,
    value_scale: f64,
    params: Params,
}

/// Per-epoch losses in squared counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

impl TrafficPredictor {
    pub fn new(config: PredictorConfig, region_ids: Vec<String>, value_scale: f64) -> Result<Self> {
        config.validate()?;
        if region_ids.is_empty() {
            return Err(Error::Config("predictor needs at least one region".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (layout, params) = Layout::build(&config, region_ids.len(), &mut rng);
        Ok(Self {
            config,
            region_ids,
            value_scale: value_scale.max(1e-9),
            params,
            layout,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn features(&self, region: usize, start: usize, values: &[f64], mean: f64) -> Mat {
        let r = self.region_ids.len();
        let mut x = Mat::zeros((values.len(), self.config.feature_dim(r)));
        for (k, &v) in values.iter().enumerate() {
            let phase = 2.0 * PI * ((start + k) % self.config.slots_per_day) as f64 / self.config.slots_per_day as f64;
            x[[k, 0]] = v / self.value_scale - mean;
            x[[k, 1]] = phase.sin();
            x[[k, 2]] = phase.cos();
            x[[k, 3 + region]] = 1.0;
        }
        x
    }

    /// Encoder input, decoder input and the window mean subtracted from both.
    pub fn inputs(&self, region: usize, start: usize, history: &[f64]) -> (Mat, Mat, f64) {
        let l = history.len();
        let mean = history.iter().sum::<f64>() / l as f64 / self.value_scale;
        let enc = self.features(region, start, history, mean);
        let c = self.config.decoder_context_slots;
        let mut dec = Mat::zeros((c + self.config.horizon_slots, enc.ncols()));
        dec.slice_mut(ndarray::s![..c, ..]).assign(&enc.slice(ndarray::s![l - c.., ..]));
        (enc, dec, mean)
    }

    fn embed(&self, g: &mut Graph, b: &Bound, x: Mat) -> Var {
        let pe = positional_encoding(x.nrows(), self.config.model_dim);
        let xv = g.constant(x);
        let e = g.matmul(xv, b.var(self.layout.embed_w));
        let e = g.add_row(e, b.var(self.layout.embed_b));
        let pe = g.constant(pe);
        g.add(e, pe)
    }

    /// Encoder stack; the output has `⌈L/2^j⌉` rows after `j` layers.
    pub fn encode(&self, g: &mut Graph, b: &Bound, enc: Mat) -> Result<Var> {
        let mut h = self.embed(g, b, enc);
        for layer in &self.layout.encoder {
            h = encoder_layer(g, b, layer, h, self.config.top_u_factor)?;
        }
        Ok(h)
    }

    /// Normalized predictions (`horizon × 1`) for one window.
    pub fn forward(&self, g: &mut Graph, b: &Bound, enc: Mat, dec: Mat) -> Result<Var> {
        let memory = self.encode(g, b, enc)?;
        let mut y = self.embed(g, b, dec);
        for layer in &self.layout.decoder {
            let a = layer.self_attn.forward(g, b, y, y, AttentionKind::Causal, 0.0)?;
            y = g.add(y, a);
            let c = layer.cross_attn.forward(g, b, y, memory, AttentionKind::Dense, 0.0)?;
            y = g.add(y, c);
            let f = g.matmul(y, b.var(layer.ff_w1));
            let f = g.add_row(f, b.var(layer.ff_b1));
            let f = g.relu(f);
            let f = g.matmul(f, b.var(layer.ff_w2));
            let f = g.add_row(f, b.var(layer.ff_b2));
            y = g.add(y, f);
        }
        let rows = g.value(y).nrows();
        let idx: Vec<usize> = (rows - self.config.horizon_slots..rows).collect();
        let last = g.gather_rows(y, &idx);
        let h = g.matmul(last, b.var(self.layout.head_w1));
        let h = g.add_row(h, b.var(self.layout.head_b1));
        let h = g.relu(h);
        let out = g.matmul(h, b.var(self.layout.head_w2));
        Ok(g.add_row(out, b.var(self.layout.head_b2)))
    }

    /// Squared-error loss of one window in normalized units.
    pub fn window_loss(&self, g: &mut Graph, b: &Bound, w: &Window) -> Result<Var> {
        let (enc, dec, mean) = self.inputs(w.region, w.start, &w.history);
        let out = self.forward(g, b, enc, dec)?;
        let target = Mat::from_shape_fn((w.target.len(), 1), |(k, _)| w.target[k] / self.value_scale - mean);
        Ok(g.mse(out, target))
    }

    /// Real-valued forecast of the slots following `history`.
    pub fn predict_window(&self, region: usize, start: usize, history: &[f64]) -> Result<Vec<f64>> {
        let (enc, dec, mean) = self.inputs(region, start, history);
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.params);
        let out = self.forward(&mut g, &b, enc, dec)?;
        Ok(g.value(out).iter().map(|v| (v + mean) * self.value_scale).collect())
    }

    /// Forecasts for every region from the `L` slots before `end_slot`.
    pub fn predict(&self, history: &TrafficSeries, end_slot: usize) -> Result<Forecast> {
        let l = self.config.input_window_slots;
        if end_slot < l || end_slot > history.len() {
            return Err(Error::Config(format!(
                "need {l} slots of history before slot {end_slot}, series has {}",
                history.len()
            )));
        }
        if history.region_ids() != self.region_ids.as_slice() {
            return Err(Error::Config("history regions differ from the trained regions".into()));
        }
        let mut raw = Vec::with_capacity(history.num_regions());
        for r in 0..history.num_regions() {
            let h: Vec<f64> = history.counts(r)[end_slot - l..end_slot].iter().map(|&c| f64::from(c)).collect();
            raw.push(self.predict_window(r, end_slot - l, &h)?);
        }
        let counts = raw
            .iter()
            .map(|row| row.iter().map(|v| v.max(0.0).round() as u32).collect())
            .collect();
        Ok(Forecast { raw, counts })
    }

    /// Mean squared error in counts² over `windows`.
    pub fn mse(&self, windows: &[Window]) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for w in windows {
            let p = self.predict_window(w.region, w.start, &w.history)?;
            sum += p.iter().zip(&w.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += w.target.len();
        }
        Ok(sum / n.max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            config: self.config.clone(),
            region_ids: self.region_ids.clone(),
            value_scale: self.value_scale,
            params: self.params.clone(),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &ck)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        let mut p = Self::new(ck.config, ck.region_ids, ck.value_scale)?;
        if p.params.names() != ck.params.names()
            || p.params.values().iter().zip(ck.params.values()).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::Config("checkpoint parameters do not match its config".into()));
        }
        p.params = ck.params;
        Ok(p)
    }
}

/// Attention block, then kernel-3 same-padded convolution, ELU and stride-2
/// max pooling.
fn encoder_layer(g: &mut Graph, b: &Bound, layer: &EncoderLayer, x: Var, top_u_factor: f64) -> Result<Var> {
    let a = layer.attn.forward(g, b, x, x, AttentionKind::Sparse, top_u_factor)?;
    let h = g.add(x, a);
    let prev = g.shift_rows(h, 1);
    let next = g.shift_rows(h, -1);
    let c0 = g.matmul(prev, b.var(layer.conv[0]));
    let c1 = g.matmul(h, b.var(layer.conv[1]));
    let c2 = g.matmul(next, b.var(layer.conv[2]));
    let c = g.add(c0, c1);
    let c = g.add(c, c2);
    let c = g.add_row(c, b.var(layer.conv_b));
    let c = g.elu(c);
    Ok(g.max_pool_rows(c))
}

impl Forecaster for TrafficPredictor {
    fn horizon(&self) -> usize {
        self.config.horizon_slots
    }

    fn forecast(&self, history: &TrafficSeries, end_slot: usize) -> sliceoff_core::Result<Vec<Vec<f64>>> {
        self.predict(history, end_slot)
            .map(|f| f.raw)
            .map_err(|e| sliceoff_core::Error::Domain(e.to_string()))
    }
}

/// Outcome of [`train_predictor`].
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub model: TrafficPredictor,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Adam on the windowed squared error with early stopping on validation
/// MSE; returns the best-validation parameters.
pub fn train_predictor(series: &TrafficSeries, cfg: &PredictorConfig) -> Result<TrainedPredictor> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::Config("empty traffic series".into()));
    }
    let data = WindowDataset::from_series(series, cfg)?;
    let scale = f64::from(series.max_count().max(1));
    let mut model = TrafficPredictor::new(cfg.clone(), series.region_ids().to_vec(), scale)?;
    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut g = Graph::new();
    for epoch in 0..cfg.train_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<Vec<Mat>> = None;
            for &i in batch {
                g.clear();
                let b = g.bind(&model.params);
                let loss = model.window_loss(&mut g, &b, &data.train[i])?;
                sum += g.scalar(loss);
                g.backward(loss);
                let gi = g.grads_of(&b);
                match &mut grads {
                    None => grads = Some(gi),
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, x)| *a += x),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let k = batch.len() as f64;
            grads.iter_mut().for_each(|m| *m /= k);
            opt.step(&mut model.params, &grads);
        }
        let train_mse = sum / data.train.len() as f64 * scale * scale;
        let val_mse = model.mse(&data.validation)?;
        info!("predictor epoch {epoch}: train {train_mse:.4} val {val_mse:.4}");
        curve.push(EpochLoss {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best.0 {
            best = (val_mse, epoch, model.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    model.params = best.2;
    Ok(TrainedPredictor {
        model,
        curve,
        best_epoch: best.1,
    })
}

pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[EpochLoss]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_mse,val_mse")?;
    for e in curve {
        writeln!(f, "{},{},{}", e.epoch, e.train_mse, e.val_mse)?;
    }
    f.flush()?;
    Ok(())
}
