use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, stream, streams};
use crate::selection::{read_jsonl, write_jsonl, BufferedSample};

/// Synthetic domain-clustered token data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub num_domains: usize,
    /// Samples streamed through the buffer, per domain.
    pub samples_per_domain: usize,
    /// Held-out queries per domain.
    pub queries_per_domain: usize,
    /// Samples per domain used only to pre-train the autoencoder.
    pub pretrain_per_domain: usize,
    pub dim: usize,
    pub tokens: usize,
    /// Pairwise centroid distance in units of the within-domain token std.
    pub separation: f64,
    /// Token spread inside the content subspace.
    pub token_std: f64,
    /// Dimension of the subspace holding the centroids and the token spread.
    pub intrinsic_dim: usize,
    /// Isotropic noise added in every dimension.
    pub ambient_std: f64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            num_domains: 5,
            samples_per_domain: 24,
            queries_per_domain: 20,
            pretrain_per_domain: 16,
            dim: 64,
            tokens: 10,
            separation: 1.0,
            token_std: 1.0,
            intrinsic_dim: 32,
            ambient_std: 0.05,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 || self.samples_per_domain == 0 || self.dim == 0 || self.tokens == 0 {
            return Err(Error::arg("workload counts must be >= 1"));
        }
        if self.num_domains > self.intrinsic_dim || self.intrinsic_dim > self.dim {
            return Err(Error::arg(format!(
                "need domains ({}) <= intrinsic dimension ({}) <= dimension ({})",
                self.num_domains, self.intrinsic_dim, self.dim
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::arg(format!("separation must be positive, got {}", self.separation)));
        }
        if !(self.token_std > 0.0 && self.token_std.is_finite()) {
            return Err(Error::arg("token std must be positive"));
        }
        if !(self.ambient_std >= 0.0 && self.ambient_std.is_finite()) {
            return Err(Error::arg("ambient std must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: WorkloadSpec,
    /// `num_domains x dim`.
    pub centroids: Array2<f64>,
    /// Training stream, domains interleaved.
    pub stream: Vec<BufferedSample>,
    pub queries: Vec<BufferedSample>,
    pub pretrain: Vec<BufferedSample>,
}

/// Random orthonormal rows via Gram-Schmidt.
fn orthonormal_rows<R: rand::Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let mut basis = Array2::<f64>::zeros((rows, dim));
    for i in 0..rows {
        let mut v = Array1::from_shape_simple_fn(dim, || normal(rng));
        for prev in basis.outer_iter().take(i) {
            let proj = v.dot(&prev);
            v.scaled_add(-proj, &prev);
        }
        let norm = v.dot(&v).sqrt();
        basis.row_mut(i).assign(&(v / norm));
    }
    basis
}

/// Tokens are `centroid + token_std * (basis z) + ambient_std * n` with the
/// basis spanning an `intrinsic_dim` subspace that contains the centroids.
/// Centroids are orthogonal and every pair sits exactly
/// `separation * token_std` apart.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let mut rng = stream(spec.seed, streams::WORKLOAD);
    let radius = spec.separation * spec.token_std / std::f64::consts::SQRT_2;
    let basis = orthonormal_rows(spec.intrinsic_dim, spec.dim, &mut rng);
    let centroids = basis.slice(ndarray::s![..spec.num_domains, ..]).to_owned() * radius;

    let sample = |domain: usize, kind: &str, i: usize, rng: &mut crate::rng::SimRng| {
        let z = Array2::from_shape_simple_fn((spec.tokens, spec.intrinsic_dim), || spec.token_std * normal(rng));
        let mut emb = z.dot(&basis);
        for mut row in emb.outer_iter_mut() {
            row += &centroids.row(domain);
            row.mapv_inplace(|v| v + spec.ambient_std * normal(rng));
        }
        BufferedSample::new(format!("{kind}-d{domain}-{i}"), emb, Vec::new(), Some(domain as u32))
    };

    let mut train = Vec::new();
    for i in 0..spec.samples_per_domain {
        for d in 0..spec.num_domains {
            train.push(sample(d, "s", i, &mut rng)?);
        }
    }
    train.shuffle(&mut rng);
    let mut queries = Vec::new();
    for i in 0..spec.queries_per_domain {
        for d in 0..spec.num_domains {
            queries.push(sample(d, "q", i, &mut rng)?);
        }
    }
    let mut pretrain = Vec::new();
    for i in 0..spec.pretrain_per_domain {
        for d in 0..spec.num_domains {
            pretrain.push(sample(d, "p", i, &mut rng)?);
        }
    }
    Ok(Workload {
        spec: *spec,
        centroids,
        stream: train,
        queries,
        pretrain,
    })
}

impl Workload {
    /// Writes `workload.jsonl`, `queries.jsonl`, `pretrain.jsonl` and `workload.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, samples) in [
            ("workload.jsonl", &self.stream),
            ("queries.jsonl", &self.queries),
            ("pretrain.jsonl", &self.pretrain),
        ] {
            write_jsonl(BufWriter::new(fs::File::create(dir.join(name))?), samples)?;
        }
        let meta = WorkloadMeta {
            spec: self.spec,
            centroids: self.centroids.outer_iter().map(|r| r.to_vec()).collect(),
        };
        fs::write(dir.join("workload.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: WorkloadMeta = serde_json::from_slice(&fs::read(dir.join("workload.json"))?)?;
        let read = |name: &str| -> Result<Vec<BufferedSample>> {
            read_jsonl(BufReader::new(fs::File::open(dir.join(name))?))
        };
        let rows = meta.centroids.len();
        let flat: Vec<f64> = meta.centroids.into_iter().flatten().collect();
        let cols = flat.len().checked_div(rows).unwrap_or(0);
        let centroids = Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Workload {
            spec: meta.spec,
            centroids,
            stream: read("workload.jsonl")?,
            queries: read("queries.jsonl")?,
            pretrain: read("pretrain.jsonl")?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkloadMeta {
    spec: WorkloadSpec,
    centroids: Vec<Vec<f64>>,
}
