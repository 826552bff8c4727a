//! Noise-aware soft-prompt tuning against a frozen surrogate model.
//!
//! The surrogate stands in for the frozen LLM: the prompt `S` (`T x D`) is
//! concatenated with the input tokens along the token axis, the result is
//! mean-pooled, and a fixed linear readout produces class logits trained with
//! cross-entropy. Only `S` is trained.
//!
//! During noise-aware tuning every step perturbs `S` with magnitude-dependent
//! Gaussian noise ([`inject_noise`]), evaluates the gradient at the perturbed
//! point and applies it to the clean `S` (straight-through).

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::VirtualTokenSet;
use crate::device::DeviceProfile;
use crate::error::{Error, Result};
use crate::rng::{normal, stream, streams};
use crate::selection::BufferedSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    /// Multipliers for `|S^| > 0.75`, `[0.5, 0.75]`, `[0.25, 0.5)`, `< 0.25`.
    pub factors: [f64; 4],
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: 0.1,
            factors: [1.0; 4],
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec {
            sigma,
            seed,
            ..Default::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn off() -> Self {
        NoiseSpec {
            sigma: 0.0,
            ..Default::default()
        }
    }

    /// Factors follow a 4-level device's per-level sigma, normalized by its
    /// maximum: the top magnitude interval maps to the top level.
    pub fn from_profile(profile: &DeviceProfile, sigma: f64, seed: u64) -> Result<Self> {
        if profile.num_levels != 4 {
            return Err(Error::arg(format!(
                "profile-derived factors need a 4-level device, {} has {}",
                profile.name, profile.num_levels
            )));
        }
        let max = profile.max_sigma();
        let s = &profile.sigma_per_level;
        let factors = if max > 0.0 {
            [s[3] / max, s[2] / max, s[1] / max, s[0] / max]
        } else {
            [0.0; 4]
        };
        let spec = NoiseSpec { sigma, factors, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.sigma) || !self.factors.iter().all(|f| ok(*f)) {
            return Err(Error::arg("noise sigma and factors must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        self.sigma == 0.0
    }
}

/// Interval index (0-based, `f1..f4`) for a normalized magnitude.
pub fn noise_interval(normalized_abs: f64) -> usize {
    if normalized_abs > 0.75 {
        0
    } else if normalized_abs >= 0.5 {
        1
    } else if normalized_abs >= 0.25 {
        2
    } else {
        3
    }
}

/// `S' = S + N * max|S|` with `N_ij ~ N(0, (sigma * f_interval(|S_ij| / max|S|))^2)`.
pub fn inject_noise<R: Rng + ?Sized>(s: &ArrayView2<f64>, spec: &NoiseSpec, rng: &mut R) -> Array2<f64> {
    let m = s.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if m == 0.0 || spec.is_off() {
        return s.to_owned();
    }
    s.mapv(|v| {
        let f = spec.factors[noise_interval(v.abs() / m)];
        v + normal(rng) * spec.sigma * f * m
    })
}

/// Frozen linear readout over mean-pooled `[prompt; input]` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTask {
    /// `C x D`.
    readout: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(skip)]
    w: Array2<f64>,
    #[serde(skip)]
    c: Array1<f64>,
}

impl SurrogateTask {
    pub fn with_readout(w: Array2<f64>, c: Array1<f64>) -> Result<Self> {
        if w.nrows() < 2 || w.ncols() == 0 || c.len() != w.nrows() {
            return Err(Error::arg(format!(
                "readout {:?} and bias {} are inconsistent (need >= 2 classes)",
                w.dim(),
                c.len()
            )));
        }
        if w.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("surrogate readout must be finite"));
        }
        Ok(SurrogateTask {
            readout: w.outer_iter().map(|r| r.to_vec()).collect(),
            bias: c.to_vec(),
            w,
            c,
        })
    }

    /// Random readout, `W ~ N(0, 1/D)`, `c ~ N(0, 1)`.
    pub fn random(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, streams::TASK);
        let std = 1.0 / (dim.max(1) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((classes, dim), || std * normal(&mut rng));
        let c = Array1::from_shape_simple_fn(classes, || normal(&mut rng));
        Self::with_readout(w, c)
    }

    /// Readout whose class rows point along `directions` (one row per class,
    /// normalized) scaled by `gain`, plus `N(0, jitter^2)` entries and a
    /// `N(0, bias_std^2)` class prior the prompt has to override.
    pub fn aligned(directions: &ArrayView2<f64>, gain: f64, jitter: f64, bias_std: f64, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, streams::TASK);
        let mut w = directions.to_owned();
        for mut row in w.outer_iter_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| gain * v / norm);
            }
        }
        w.mapv_inplace(|v| v + jitter * normal(&mut rng));
        let c = Array1::from_shape_simple_fn(w.nrows(), || bias_std * normal(&mut rng));
        Self::with_readout(w, c)
    }

    pub fn classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn readout(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.c
    }

    /// Class a sample should be steered to.
    pub fn target_for(&self, sample: &BufferedSample) -> Result<usize> {
        let tag = sample
            .domain_tag
            .ok_or_else(|| Error::arg(format!("sample {} has no label to tune toward", sample.id)))?;
        Ok(tag as usize % self.classes())
    }

    fn pooled(&self, prompt: &ArrayView2<f64>, input: &ArrayView2<f64>) -> Result<Array1<f64>> {
        if prompt.ncols() != self.dim() || input.ncols() != self.dim() {
            return Err(Error::arg(format!(
                "prompt/input widths {}/{} do not match task dimension {}",
                prompt.ncols(),
                input.ncols(),
                self.dim()
            )));
        }
        let rows = prompt.nrows() + input.nrows();
        if rows == 0 {
            return Err(Error::arg("prompt and input are both empty"));
        }
        let sum = prompt.sum_axis(Axis(0)) + input.sum_axis(Axis(0));
        Ok(sum / rows as f64)
    }

    pub fn logits(&self, prompt: &ArrayView2<f64>, input: &ArrayView2<f64>) -> Result<Array1<f64>> {
        let h = self.pooled(prompt, input)?;
        Ok(self.w.dot(&h) + &self.c)
    }

    /// Cross-entropy loss and logits.
    pub fn forward(&self, prompt: &ArrayView2<f64>, input: &ArrayView2<f64>, target: usize) -> Result<(f64, Array1<f64>)> {
        self.check_target(target)?;
        let logits = self.logits(prompt, input)?;
        let max = logits.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Ok((lse - logits[target], logits))
    }

    /// Analytic gradient of [`forward`](Self::forward)'s loss with respect to
    /// the prompt. Every row is identical.
    pub fn grad_tokens(&self, prompt: &ArrayView2<f64>, input: &ArrayView2<f64>, target: usize) -> Result<Array2<f64>> {
        let (_, logits) = self.forward(prompt, input, target)?;
        let max = logits.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut p = logits.mapv(|v| (v - max).exp());
        let z = p.sum();
        p /= z;
        p[target] -= 1.0;
        let rows = (prompt.nrows() + input.nrows()) as f64;
        let row_grad = self.w.t().dot(&p) / rows;
        let mut grad = Array2::zeros(prompt.raw_dim());
        for mut r in grad.outer_iter_mut() {
            r.assign(&row_grad);
        }
        Ok(grad)
    }

    pub fn predict(&self, prompt: &ArrayView2<f64>, input: &ArrayView2<f64>) -> Result<usize> {
        let logits = self.logits(prompt, input)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.classes() {
            return Err(Error::arg(format!("target {target} >= {} classes", self.classes())));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SurrogateTask = serde_json::from_str(text)?;
        let rows = raw.readout.len();
        let cols = raw.readout.first().map_or(0, Vec::len);
        let flat: Vec<f64> = raw.readout.into_iter().flatten().collect();
        let w = Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::Format(e.to_string()))?;
        Self::with_readout(w, Array1::from(raw.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub num_tokens: usize,
    pub init_std: f64,
    /// `sigma = 0` gives plain prompt tuning.
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            steps: 200,
            lr: 5.0,
            num_tokens: 10,
            init_std: 0.02,
            noise: NoiseSpec::default(),
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("tuning needs at least one step"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.num_tokens == 0 {
            return Err(Error::arg("prompt needs at least one token"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::arg("init std must be finite and non-negative"));
        }
        self.noise.validate()
    }
}

/// Clean-prompt loss before each step, plus the final loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneLog {
    pub losses: Vec<f64>,
}

impl TuneLog {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    /// `step,loss` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["step", "loss"])?;
        for (i, l) in self.losses.iter().enumerate() {
            wtr.write_record([i.to_string(), format!("{l:.12e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Tunes a prompt for one sample, steering the surrogate toward its label.
pub fn tune_prompt(sample: &BufferedSample, task: &SurrogateTask, cfg: &TuneConfig) -> Result<(VirtualTokenSet, TuneLog)> {
    cfg.validate()?;
    let target = task.target_for(sample)?;
    let input = sample.embedding.view();
    let mut init_rng = stream(cfg.seed, streams::TUNE_INIT);
    let mut noise_rng = stream(cfg.noise.seed ^ cfg.seed, streams::TUNE_NOISE);

    let mut s = Array2::from_shape_simple_fn((cfg.num_tokens, task.dim()), || cfg.init_std * normal(&mut init_rng));
    let mut log = TuneLog::default();
    for _ in 0..cfg.steps {
        log.losses.push(task.forward(&s.view(), &input, target)?.0);
        let grad = if cfg.noise.is_off() {
            task.grad_tokens(&s.view(), &input, target)?
        } else {
            let noisy = inject_noise(&s.view(), &cfg.noise, &mut noise_rng);
            task.grad_tokens(&noisy.view(), &input, target)?
        };
        s.scaled_add(-cfg.lr, &grad);
    }
    log.losses.push(task.forward(&s.view(), &input, target)?.0);
    let vts = VirtualTokenSet::new(s, format!("prompt-{}", sample.id), sample.domain_tag)?;
    Ok((vts, log))
}
