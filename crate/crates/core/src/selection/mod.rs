//! Bounded sample buffer and representative selection.
//!
//! When the buffer is full its samples are clustered on their token-mean
//! embeddings, `k` is chosen by [`adaptive_k`], and from every cluster the
//! member most cosine-similar to the centroid becomes a representative.
//! Everything else is returned as leftovers for autoencoder updating.

pub(crate) mod kmeans;

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub use kmeans::{kmeans, mean_row, ClusterResult};

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedSample {
    pub id: String,
    /// `T x D` token embeddings.
    pub embedding: Array2<f64>,
    pooled: Array1<f64>,
    pub payload: Vec<u8>,
    pub domain_tag: Option<u32>,
}

impl BufferedSample {
    pub fn new(
        id: impl Into<String>,
        embedding: Array2<f64>,
        payload: Vec<u8>,
        domain_tag: Option<u32>,
    ) -> Result<Self> {
        if embedding.nrows() == 0 || embedding.ncols() == 0 {
            return Err(Error::arg("sample embedding must have at least one token"));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("sample embedding must be finite"));
        }
        let pooled = embedding.mean_axis(Axis(0)).expect("non-empty");
        Ok(BufferedSample {
            id: id.into(),
            embedding,
            pooled,
            payload,
            domain_tag,
        })
    }

    /// Token-mean summary used for clustering.
    pub fn pooled(&self) -> ArrayView1<'_, f64> {
        self.pooled.view()
    }

    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }
}

/// One line of the JSON-lines ingestion format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub embedding: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<u32>,
    #[serde(default)]
    pub payload: String,
}

impl SampleRecord {
    pub fn from_sample(s: &BufferedSample) -> Self {
        SampleRecord {
            id: s.id.clone(),
            embedding: s
                .embedding
                .outer_iter()
                .map(|row| row.iter().map(|v| *v as f32).collect())
                .collect(),
            domain: s.domain_tag,
            payload: String::from_utf8_lossy(&s.payload).into_owned(),
        }
    }

    pub fn into_sample(self) -> Result<BufferedSample> {
        let rows = self.embedding.len();
        let cols = self.embedding.first().map_or(0, Vec::len);
        if self.embedding.iter().any(|r| r.len() != cols) {
            return Err(Error::arg(format!("sample {} has ragged embedding rows", self.id)));
        }
        let flat: Vec<f64> = self.embedding.into_iter().flatten().map(f64::from).collect();
        let embedding = Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::arg(e.to_string()))?;
        BufferedSample::new(self.id, embedding, self.payload.into_bytes(), self.domain)
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<BufferedSample>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec.into_sample()?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, samples: &[BufferedSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecord::from_sample(s))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub base_threshold: f64,
    pub scale_factor: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub max_iter: usize,
    /// Keep only the representative of the largest cluster.
    pub largest_cluster_only: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            base_threshold: 20.0,
            scale_factor: 1.5,
            n_min: 2,
            n_max: 10,
            max_iter: 100,
            largest_cluster_only: false,
        }
    }
}

/// `k = min(max(floor(n_min + s * log2(b_s / b_0)), n_min), n_max)`.
pub fn adaptive_k(buffer_size: usize, base_threshold: f64, scale_factor: f64, n_min: usize, n_max: usize) -> Result<usize> {
    if buffer_size == 0 {
        return Err(Error::arg("buffer size must be positive"));
    }
    if !(base_threshold > 0.0 && base_threshold.is_finite()) {
        return Err(Error::arg(format!("base threshold must be positive, got {base_threshold}")));
    }
    if !scale_factor.is_finite() {
        return Err(Error::arg("scale factor must be finite"));
    }
    if n_min == 0 || n_min > n_max {
        return Err(Error::arg(format!("need 1 <= n_min <= n_max, got {n_min}..{n_max}")));
    }
    let raw = (n_min as f64 + scale_factor * (buffer_size as f64 / base_threshold).log2()).floor();
    Ok(raw.clamp(n_min as f64, n_max as f64) as usize)
}

/// Similarities closer than this are ties.
const TIE_EPS: f64 = 1e-12;

/// Cosine similarity, `-inf` for a zero-norm member and 0 for a zero centroid.
fn cosine(member: ArrayView1<f64>, centroid: ArrayView1<f64>) -> f64 {
    let mm = member.dot(&member);
    if mm == 0.0 {
        return f64::NEG_INFINITY;
    }
    let cc = centroid.dot(&centroid);
    if cc == 0.0 {
        return 0.0;
    }
    member.dot(&centroid) / (mm * cc).sqrt()
}

/// Index of the member most cosine-similar to `centroid`; lowest index wins
/// ties (similarities within `1e-12`).
pub fn representative<'a>(
    members: impl IntoIterator<Item = ArrayView1<'a, f64>>,
    centroid: ArrayView1<f64>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in members.into_iter().enumerate() {
        if m.len() != centroid.len() {
            return Err(Error::arg("member and centroid dimensions differ"));
        }
        let sim = cosine(m, centroid);
        if best.is_none_or(|(_, b)| sim > b + TIE_EPS) {
            best = Some((i, sim));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Error::arg("cluster has no members"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub k: usize,
    pub representative_ids: Vec<String>,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub representatives: Vec<BufferedSample>,
    pub leftovers: Vec<BufferedSample>,
    pub report: SelectionReport,
    pub clusters: ClusterResult,
}

#[derive(Debug, Clone)]
pub struct DataBuffer {
    capacity: usize,
    samples: Vec<BufferedSample>,
    pub params: SelectionParams,
}

impl DataBuffer {
    pub fn new(capacity: usize, params: SelectionParams) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::arg("buffer capacity must be positive"));
        }
        adaptive_k(capacity, params.base_threshold, params.scale_factor, params.n_min, params.n_max)?;
        Ok(DataBuffer {
            capacity,
            samples: Vec::with_capacity(capacity),
            params,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn samples(&self) -> &[BufferedSample] {
        &self.samples
    }

    pub fn push(&mut self, sample: BufferedSample) -> Result<()> {
        if self.is_full() {
            return Err(Error::state(format!("buffer is full ({} samples)", self.capacity)));
        }
        if let Some(first) = self.samples.first() {
            if first.dim() != sample.dim() {
                return Err(Error::arg(format!(
                    "sample {} has dimension {}, buffer holds {}",
                    sample.id,
                    sample.dim(),
                    first.dim()
                )));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Number of clusters for this buffer, capped at its capacity.
    pub fn cluster_count(&self) -> usize {
        let p = &self.params;
        adaptive_k(self.capacity, p.base_threshold, p.scale_factor, p.n_min, p.n_max)
            .expect("validated at construction")
            .min(self.capacity)
    }

    /// Selects representatives and empties the buffer.
    pub fn select_all(&mut self, seed: u64) -> Result<Selection> {
        if !self.is_full() {
            return Err(Error::state(format!(
                "buffer holds {} of {} samples; selection needs a full buffer",
                self.samples.len(),
                self.capacity
            )));
        }
        let k = self.cluster_count();
        let dim = self.samples[0].dim();
        let mut pooled = Array2::zeros((self.samples.len(), dim));
        for (mut row, s) in pooled.outer_iter_mut().zip(&self.samples) {
            row.assign(&s.pooled);
        }
        let clusters = kmeans(&pooled.view(), k, self.params.max_iter, &mut seeded(seed))?;
        let sizes = clusters.cluster_sizes();

        let mut picks: Vec<usize> = Vec::with_capacity(k);
        for c in 0..k {
            let members = clusters.members(c);
            let local = representative(members.iter().map(|&i| pooled.row(i)), clusters.centroids.row(c))?;
            picks.push(members[local]);
        }
        if self.params.largest_cluster_only {
            let largest = (0..k).fold(0, |best, c| if sizes[c] > sizes[best] { c } else { best });
            picks = vec![picks[largest]];
        }

        let samples = std::mem::take(&mut self.samples);
        let mut slots: Vec<Option<BufferedSample>> = samples.into_iter().map(Some).collect();
        let representatives: Vec<BufferedSample> =
            picks.iter().map(|&i| slots[i].take().expect("picks are distinct")).collect();
        let leftovers: Vec<BufferedSample> = slots.into_iter().flatten().collect();

        let report = SelectionReport {
            k,
            representative_ids: representatives.iter().map(|s| s.id.clone()).collect(),
            cluster_sizes: sizes,
        };
        Ok(Selection {
            representatives,
            leftovers,
            report,
            clusters,
        })
    }
}
