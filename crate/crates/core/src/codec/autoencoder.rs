//! Linear autoencoder mapping `D`-dimensional token rows to `d_enc` codes.
//!
//! Training minimizes the mean per-sample squared reconstruction error
//! `(1/N) sum ||x E D - x||^2` with mini-batch SGD. The step size is `lr`
//! divided by the top eigenvalue of the corpus second-moment matrix, so one
//! `lr` works across data scales and spectra. Reported losses are
//! per-element MSE (the objective over `D`).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, seeded};

const MAGIC: &[u8; 4] = b"NVPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            epochs: 100,
            lr: 0.15,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Per-element MSE before training (`losses[0]`) and after every epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearAutoencoder {
    enc: Array2<f64>,
    dec: Array2<f64>,
}

impl LinearAutoencoder {
    pub fn from_weights(enc: Array2<f64>, dec: Array2<f64>) -> Result<Self> {
        let (d, k) = enc.dim();
        if d == 0 || k == 0 || dec.dim() != (k, d) {
            return Err(Error::arg(format!(
                "encoder {:?} and decoder {:?} shapes are inconsistent",
                enc.dim(),
                dec.dim()
            )));
        }
        if enc.iter().chain(dec.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("autoencoder weights must be finite"));
        }
        Ok(LinearAutoencoder { enc, dec })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_weights(Array2::eye(dim), Array2::eye(dim))
    }

    /// Random init: `enc ~ N(0, 1/D)`, `dec = enc^T`.
    pub fn random(input_dim: usize, code_dim: usize, seed: u64) -> Result<Self> {
        if code_dim == 0 || code_dim > input_dim {
            return Err(Error::arg(format!(
                "code dimension {code_dim} must be in 1..={input_dim}"
            )));
        }
        let mut rng = seeded(seed);
        let std = 1.0 / (input_dim as f64).sqrt();
        let enc = Array2::from_shape_simple_fn((input_dim, code_dim), || std * normal(&mut rng));
        let dec = enc.t().to_owned();
        Self::from_weights(enc, dec)
    }

    pub fn input_dim(&self) -> usize {
        self.enc.nrows()
    }

    pub fn code_dim(&self) -> usize {
        self.enc.ncols()
    }

    pub fn enc_matrix(&self) -> &Array2<f64> {
        &self.enc
    }

    pub fn dec_matrix(&self) -> &Array2<f64> {
        &self.dec
    }

    pub fn encode_rows(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::arg(format!(
                "rows have {} columns, autoencoder expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(x.dot(&self.enc))
    }

    pub fn decode_rows(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if h.ncols() != self.code_dim() {
            return Err(Error::arg(format!(
                "codes have {} columns, autoencoder expects {}",
                h.ncols(),
                self.code_dim()
            )));
        }
        Ok(h.dot(&self.dec))
    }

    /// Per-element mean squared reconstruction error over `x`.
    pub fn reconstruction_mse(&self, x: &ArrayView2<f64>) -> Result<f64> {
        let recon = self.decode_rows(&self.encode_rows(x)?.view())?;
        let n = x.len().max(1) as f64;
        Ok((&recon - x).iter().map(|v| v * v).sum::<f64>() / n)
    }

    /// Continues SGD from the current weights on `leftover`.
    pub fn update(&mut self, leftover: &ArrayView2<f64>, cfg: &AeTrainConfig) -> Result<TrainLog> {
        if leftover.nrows() == 0 {
            return Err(Error::arg("autoencoder update needs a non-empty corpus"));
        }
        if cfg.batch_size == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Error::arg("batch size must be >= 1 and lr > 0"));
        }
        if leftover.ncols() != self.input_dim() {
            return Err(Error::arg(format!(
                "corpus has {} columns, autoencoder expects {}",
                leftover.ncols(),
                self.input_dim()
            )));
        }
        let n = leftover.nrows();
        let top = top_eigenvalue(leftover);
        let step = if top > 0.0 { cfg.lr / top } else { cfg.lr };

        let mut rng = seeded(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut log = TrainLog {
            losses: vec![self.reconstruction_mse(leftover)?],
        };
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = leftover.select(Axis(0), chunk);
                self.sgd_step(&batch.view(), step);
            }
            log.losses.push(self.reconstruction_mse(leftover)?);
        }
        Ok(log)
    }

    fn sgd_step(&mut self, x: &ArrayView2<f64>, step: f64) {
        let b = x.nrows() as f64;
        let h = x.dot(&self.enc);
        let r = h.dot(&self.dec) - x;
        let grad_dec = h.t().dot(&r) * (2.0 / b);
        let grad_enc = x.t().dot(&r.dot(&self.dec.t())) * (2.0 / b);
        self.dec.scaled_add(-step, &grad_dec);
        self.enc.scaled_add(-step, &grad_enc);
    }

    /// Writes the `NVPT` container: magic, version, `D`, `d_enc` (u32 LE),
    /// then `enc` and `dec` as row-major f32 LE.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.code_dim() as u32).to_le_bytes())?;
        for v in self.enc.iter().chain(self.dec.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an NVPT autoencoder file".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported NVPT version {version}")));
        }
        let d = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; 4 * 2 * d * k];
        r.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let enc = Array2::from_shape_vec((d, k), vals[..d * k].to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        let dec = Array2::from_shape_vec((k, d), vals[d * k..].to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        Self::from_weights(enc, dec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::read(path)?.as_slice())
    }
}

/// Largest eigenvalue of `X^T X / N` by power iteration.
fn top_eigenvalue(x: &ArrayView2<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut v = ndarray::Array1::from_shape_fn(x.ncols(), |i| 1.0 + (i as f64 * 0.618).fract());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = x.t().dot(&x.dot(&v)) / n;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.dot(&v).sqrt();
        v = w / norm;
    }
    lambda
}

/// Trains a fresh autoencoder on `corpus` (one sample per row).
pub fn train_autoencoder(
    corpus: &ArrayView2<f64>,
    code_dim: usize,
    cfg: &AeTrainConfig,
) -> Result<(LinearAutoencoder, TrainLog)> {
    if corpus.nrows() == 0 {
        return Err(Error::arg("autoencoder training needs a non-empty corpus"));
    }
    let mut ae = LinearAutoencoder::random(corpus.ncols(), code_dim, cfg.seed)?;
    // Init and shuffling draw from separate seeds.
    let run = AeTrainConfig {
        seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..*cfg
    };
    let log = ae.update(corpus, &run)?;
    Ok((ae, log))
}

/// Stacks the token rows of several matrices into one corpus.
pub(crate) fn stack_rows<'a>(mats: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Option<Array2<f64>> {
    let mats: Vec<_> = mats.into_iter().collect();
    let cols = mats.first()?.ncols();
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for m in mats {
        out.slice_mut(s![at..at + m.nrows(), ..]).assign(&m);
        at += m.nrows();
    }
    Some(out)
}
