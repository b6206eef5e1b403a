use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UtilPoint;
use crate::neural::{
    accumulate_batch, read_file, Activation, Adam, DenseNet, GradientSet, GruCell, Optimizer, Parameterized, TextReader,
    TextWriter,
};
use crate::par::Execution;
use crate::{Error, Result};

/// Anything that maps the last `window()` utilization points to the next one.
pub trait Forecaster {
    fn window(&self) -> usize;
    fn forecast(&self, window: &[UtilPoint]) -> Result<UtilPoint>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub window: usize,
    /// Steps ahead of the window's last point that the target lies.
    pub horizon: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            window: 12,
            horizon: 1,
            hidden: 32,
            epochs: 20,
            lr: 0.005,
            batch: 32,
            seed: 0,
        }
    }
}

/// Per-resource min-max scaling fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: UtilPoint,
    pub max: UtilPoint,
}

impl MinMax {
    pub fn fit(points: &[UtilPoint]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for r in 0..2 {
                min[r] = min[r].min(p[r]);
                max[r] = max[r].max(p[r]);
            }
        }
        Self { min, max }
    }

    fn span(&self, r: usize) -> f64 {
        let s = self.max[r] - self.min[r];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn normalize(&self, p: UtilPoint) -> UtilPoint {
        [(p[0] - self.min[0]) / self.span(0), (p[1] - self.min[1]) / self.span(1)]
    }

    pub fn denormalize(&self, p: UtilPoint) -> UtilPoint {
        [p[0] * self.span(0) + self.min[0], p[1] * self.span(1) + self.min[1]]
    }
}

/// GRU over the window followed by a linear readout to (cpu, mem).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub gru: GruCell,
    pub readout: DenseNet,
}

impl Parameterized for PredictorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.gru.tensors();
        t.extend(self.readout.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.gru.tensors_mut();
        t.extend(self.readout.tensors_mut());
        t
    }
}

const GRU_TENSORS: usize = 9;

impl PredictorParams {
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            gru: GruCell::new(2, hidden, seed),
            readout: DenseNet::new(&[hidden, 2], &[Activation::Identity], seed.wrapping_add(1))?,
        })
    }

    pub fn run(&self, window: &[UtilPoint]) -> Result<UtilPoint> {
        let h = self.gru.run(window)?;
        let y = self.readout.predict(&h)?;
        Ok([y[0], y[1]])
    }

    /// Squared error on one normalized pair, times `scale`; gradients are
    /// added into `acc`.
    fn accumulate(&self, window: &[UtilPoint], target: UtilPoint, scale: f64, acc: &mut GradientSet) -> Result<f64> {
        let (h, gru_cache) = self.gru.forward(window)?;
        let (y, out_cache) = self.readout.forward(&h)?;
        let d = [y[0] - target[0], y[1] - target[1]];
        let upstream = [2.0 * d[0] * scale, 2.0 * d[1] * scale];
        let mut gru_grads = GradientSet {
            tensors: std::mem::take(&mut acc.tensors),
        };
        let mut out_grads = GradientSet {
            tensors: gru_grads.tensors.split_off(GRU_TENSORS),
        };
        let result = self
            .readout
            .backward_accumulate(&out_cache, &upstream, &mut out_grads)
            .and_then(|dh| self.gru.backward_accumulate(&gru_cache, &dh, &mut gru_grads));
        acc.tensors = gru_grads.tensors;
        acc.tensors.append(&mut out_grads.tensors);
        result?;
        Ok((d[0] * d[0] + d[1] * d[1]) * scale)
    }
}

/// A trained forecaster with its normalization and training report.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub params: PredictorParams,
    pub norm: MinMax,
    pub window: usize,
    pub horizon: usize,
    /// Mean over both resources, in utilization units.
    pub train_mse: f64,
    pub val_mse: f64,
}

impl Forecaster for PredictorModel {
    fn window(&self) -> usize {
        self.window
    }

    fn forecast(&self, window: &[UtilPoint]) -> Result<UtilPoint> {
        self.predict(window)
    }
}

impl PredictorModel {
    /// Forecast `horizon` steps past the window, clamped to [0, 1].
    pub fn predict(&self, window: &[UtilPoint]) -> Result<UtilPoint> {
        if window.len() != self.window {
            return Err(Error::dim("predictor window", self.window, window.len()));
        }
        let normalized: Vec<UtilPoint> = window.iter().map(|&p| self.norm.normalize(p)).collect();
        let y = self.norm.denormalize(self.params.run(&normalized)?);
        Ok([y[0].clamp(0.0, 1.0), y[1].clamp(0.0, 1.0)])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = TextWriter::new();
        w.line_usize(&[2, self.params.gru.hidden_dim(), 2, self.window, self.horizon]);
        w.line_f64(&[self.norm.min[0], self.norm.min[1], self.norm.max[0], self.norm.max[1]]);
        w.line_f64(&[self.train_mse, self.val_mse]);
        self.params.gru.write_text(&mut w);
        self.params.readout.write_text(&mut w);
        w.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let mut r = TextReader::new(path.display().to_string(), &text);
        let dims = r.line_usize()?;
        if dims.len() != 5 || dims[0] != 2 || dims[2] != 2 {
            return Err(r.error("expected `2 <hidden> 2 <window> <horizon>`"));
        }
        let norm = r.line_f64_exact(4)?;
        let mse = r.line_f64_exact(2)?;
        let gru = GruCell::read_text(&mut r)?;
        let readout = DenseNet::read_text(&mut r)?;
        if gru.hidden_dim() != dims[1] || readout.input_dim() != dims[1] || gru.input_dim() != 2 {
            return Err(r.error("hidden size does not match the header"));
        }
        Ok(Self {
            params: PredictorParams { gru, readout },
            norm: MinMax {
                min: [norm[0], norm[1]],
                max: [norm[2], norm[3]],
            },
            window: dims[3],
            horizon: dims[4],
            train_mse: mse[0],
            val_mse: mse[1],
        })
    }
}

/// Index where the validation segment starts under an 80/20 chronological
/// split.
pub fn split_point(len: usize) -> usize {
    len * 4 / 5
}

/// Windows `[i, i + window)` whose target `i + window + horizon - 1` lies in
/// `targets`.
fn pair_starts(window: usize, horizon: usize, targets: std::ops::Range<usize>) -> Vec<usize> {
    let lead = window + horizon - 1;
    (targets.start.max(lead)..targets.end).map(|t| t - lead).collect()
}

/// Shortest series that yields at least one training and one validation pair.
pub fn min_series_len(window: usize, horizon: usize) -> usize {
    (window + horizon..)
        .find(|&n| {
            let split = split_point(n);
            !pair_starts(window, horizon, 0..split).is_empty() && !pair_starts(window, horizon, split..n).is_empty()
        })
        .expect("a long enough series always exists")
}

pub fn train_predictor(series: &[UtilPoint], cfg: &PredictorConfig) -> Result<PredictorModel> {
    train_predictor_with(Execution::default(), series, cfg)
}

/// Trains on windows whose targets fall in the first 80% of the series and
/// reports MSE on windows whose targets fall in the rest.
pub fn train_predictor_with(exec: Execution, series: &[UtilPoint], cfg: &PredictorConfig) -> Result<PredictorModel> {
    if cfg.window == 0 || cfg.horizon == 0 || cfg.hidden == 0 || cfg.batch == 0 {
        return Err(Error::Config("predictor window, horizon, hidden and batch must be positive".into()));
    }
    let required = min_series_len(cfg.window, cfg.horizon);
    if series.len() < required {
        return Err(Error::TraceTooShort {
            required,
            actual: series.len(),
        });
    }
    let split = split_point(series.len());
    let train_starts = pair_starts(cfg.window, cfg.horizon, 0..split);
    let val_starts = pair_starts(cfg.window, cfg.horizon, split..series.len());
    if series.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("utilization series must be finite".into()));
    }
    let norm = MinMax::fit(&series[..split]);
    let normalized: Vec<UtilPoint> = series.iter().map(|&p| norm.normalize(p)).collect();
    let lead = cfg.window + cfg.horizon - 1;

    let mut params = PredictorParams::new(cfg.hidden, cfg.seed)?;
    let mut opt = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6A0_11CE);
    let mut order = train_starts.clone();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let scale = 1.0 / (2.0 * batch.len() as f64);
            let p = &params;
            let (grads, _) = accumulate_batch(exec, p, batch, |&s, acc| {
                p.accumulate(&normalized[s..s + cfg.window], normalized[s + lead], scale, acc)
            })?;
            opt.step(&mut params, &grads, cfg.lr)?;
        }
    }
    let mut model = PredictorModel {
        params,
        norm,
        window: cfg.window,
        horizon: cfg.horizon,
        train_mse: 0.0,
        val_mse: 0.0,
    };
    model.train_mse = direct_mse(exec, &model, series, &train_starts)?;
    model.val_mse = direct_mse(exec, &model, series, &val_starts)?;
    Ok(model)
}

fn direct_mse(exec: Execution, model: &PredictorModel, series: &[UtilPoint], starts: &[usize]) -> Result<f64> {
    let lead = model.window + model.horizon - 1;
    let parts = exec.map_chunks(starts, 64, |chunk| -> Result<f64> {
        let mut sum = 0.0;
        for &s in chunk {
            let y = model.predict(&series[s..s + model.window])?;
            let t = series[s + lead];
            sum += ((y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2)) / 2.0;
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / starts.len() as f64)
}

/// Mean squared error of recursive forecasts for horizons `1..=max_horizon`,
/// averaged over both resources. Every window start with all horizons
/// available contributes to every horizon.
pub fn evaluate_mse<F: Forecaster + Sync>(model: &F, series: &[UtilPoint], max_horizon: usize) -> Result<Vec<f64>> {
    evaluate_mse_with(Execution::default(), model, series, max_horizon)
}

pub fn evaluate_mse_with<F: Forecaster + Sync>(
    exec: Execution,
    model: &F,
    series: &[UtilPoint],
    max_horizon: usize,
) -> Result<Vec<f64>> {
    let w = model.window();
    if max_horizon == 0 {
        return Ok(Vec::new());
    }
    if series.len() < w + max_horizon {
        return Err(Error::TraceTooShort {
            required: w + max_horizon,
            actual: series.len(),
        });
    }
    let starts: Vec<usize> = (0..=series.len() - w - max_horizon).collect();
    let parts = exec.map_chunks(&starts, 64, |chunk| -> Result<Vec<f64>> {
        let mut sums = vec![0.0; max_horizon];
        let mut window: Vec<UtilPoint> = Vec::with_capacity(w + max_horizon);
        for &s in chunk {
            window.clear();
            window.extend_from_slice(&series[s..s + w]);
            for (h, sum) in sums.iter_mut().enumerate() {
                let y = model.forecast(&window[h..h + w])?;
                let t = series[s + w + h];
                *sum += ((y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2)) / 2.0;
                window.push(y);
            }
        }
        Ok(sums)
    });
    let mut totals = vec![0.0; max_horizon];
    for p in parts {
        for (t, v) in totals.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(totals.into_iter().map(|t| t / starts.len() as f64).collect())
}

/// One-step forecast for every index: entry `t` predicts `series[t]` from
/// the window ending at `t - 1`. The first `window` entries, which have no
/// full history, repeat the observed value.
pub fn forecast_series<F: Forecaster + Sync>(exec: Execution, model: &F, series: &[UtilPoint]) -> Result<Vec<UtilPoint>> {
    let w = model.window();
    let idx: Vec<usize> = (0..series.len()).collect();
    exec.map(&idx, |&t| if t < w { Ok(series[t]) } else { model.forecast(&series[t - w..t]) })
        .into_iter()
        .collect()
}
