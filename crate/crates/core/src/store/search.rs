use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::device::VariationConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub scales: Vec<usize>,
    pub weights: Vec<f64>,
    pub read_noise: bool,
    /// Relative perturbation of the read-back values, drawn per entry and scale.
    pub variation: VariationConfig,
    pub similarity: Similarity,
    /// Optional uniform quantizer on each cell's read conductance.
    pub adc_bits: Option<u32>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            scales: vec![1, 2, 4],
            weights: vec![1.0, 0.8, 0.6],
            read_noise: false,
            variation: VariationConfig::none(),
            similarity: Similarity::Dot,
            adc_bits: None,
        }
    }
}

impl SearchConfig {
    /// Single scale 1 with weight 1.
    pub fn mips() -> Self {
        SearchConfig {
            scales: vec![1],
            weights: vec![1.0],
            ..Default::default()
        }
    }

    pub fn noiseless(&self) -> Self {
        SearchConfig {
            read_noise: false,
            variation: VariationConfig::none(),
            adc_bits: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.len() != self.weights.len() {
            return Err(Error::arg(format!(
                "{} scales but {} weights",
                self.scales.len(),
                self.weights.len()
            )));
        }
        if self.scales.contains(&0) {
            return Err(Error::arg("scales must be >= 1"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::arg("weights must be non-negative with a positive sum"));
        }
        if let Some(bits) = self.adc_bits {
            if !(1..=16).contains(&bits) {
                return Err(Error::arg(format!("ADC bits must be in 1..=16, got {bits}")));
            }
        }
        self.variation.validate()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Averages non-overlapping windows of `scale` rows; the last window may be short.
pub fn pool(x: &ArrayView2<f64>, scale: usize) -> Result<Array2<f64>> {
    if scale < 1 {
        return Err(Error::arg("pooling scale must be >= 1"));
    }
    let t = x.nrows();
    let out_rows = t.div_ceil(scale);
    let mut out = Array2::zeros((out_rows, x.ncols()));
    for (w, mut row) in out.outer_iter_mut().enumerate() {
        let start = w * scale;
        let end = (start + scale).min(t);
        let window = x.slice(s![start..end, ..]);
        row.assign(&(window.sum_axis(ndarray::Axis(0)) / (end - start) as f64));
    }
    Ok(out)
}

/// Truncates or zero-pads `x` to `rows` token rows.
pub fn align_length(x: &ArrayView2<f64>, rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, x.ncols()));
    let keep = rows.min(x.nrows());
    out.slice_mut(s![..keep, ..]).assign(&x.slice(s![..keep, ..]));
    out
}

pub(crate) fn similarity(a: &ArrayView2<f64>, b: &ArrayView2<f64>, kind: Similarity) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    match kind {
        Similarity::Dot => dot,
        Similarity::Cosine => {
            let na: f64 = a.iter().map(|x| x * x).sum();
            let nb: f64 = b.iter().map(|x| x * x).sum();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb).sqrt()
            }
        }
    }
}

/// Weighted multi-scale similarity of query `e` against a stored entry given
/// as one matrix per configured scale (`stored[i]` pairs with `cfg.scales[i]`).
/// `e` is aligned to the scale-1 row count `stored_tokens` first.
pub fn wmsdp(e: &ArrayView2<f64>, stored: &[ArrayView2<f64>], stored_tokens: usize, cfg: &SearchConfig) -> Result<f64> {
    cfg.validate()?;
    if stored.len() != cfg.scales.len() {
        return Err(Error::arg(format!(
            "{} stored scales for {} configured",
            stored.len(),
            cfg.scales.len()
        )));
    }
    let aligned = align_length(e, stored_tokens);
    let mut total = 0.0;
    for ((&scale, &w), p) in cfg.scales.iter().zip(&cfg.weights).zip(stored) {
        let q = pool(&aligned.view(), scale)?;
        if q.dim() != p.dim() {
            return Err(Error::arg(format!(
                "query pooled to {:?} but stored scale {scale} is {:?}",
                q.dim(),
                p.dim()
            )));
        }
        total += w * similarity(&q.view(), p, cfg.similarity);
    }
    Ok(total / cfg.weight_sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn pool_examples() {
        let x = array![[1.0], [3.0], [5.0], [7.0]];
        assert_eq!(pool(&x.view(), 1).unwrap(), x);
        assert_eq!(pool(&x.view(), 2).unwrap(), array![[2.0], [6.0]]);
        let y = array![[1.0], [3.0], [5.0]];
        assert_eq!(pool(&y.view(), 2).unwrap(), array![[2.0], [5.0]]);
        assert_eq!(pool(&y.view(), 4).unwrap(), array![[3.0]]);
        assert!(matches!(pool(&y.view(), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn align_pads_and_truncates() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(align_length(&x.view(), 3), array![[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]]);
        assert_eq!(align_length(&x.view(), 1), array![[1.0, 2.0]]);
    }

    #[test]
    fn self_score_formula() {
        let mut rng = seeded(1);
        let p = Array2::from_shape_simple_fn((10, 6), || normal(&mut rng));
        let cfg = SearchConfig::default();
        let pooled: Vec<Array2<f64>> = cfg.scales.iter().map(|&s| pool(&p.view(), s).unwrap()).collect();
        let views: Vec<_> = pooled.iter().map(|m| m.view()).collect();
        let got = wmsdp(&p.view(), &views, 10, &cfg).unwrap();
        let sq = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
        let want = (sq(&pooled[0]) + 0.8 * sq(&pooled[1]) + 0.6 * sq(&pooled[2])) / 2.4;
        assert!((got - want).abs() <= 1e-9 * want.abs());
    }

    #[test]
    fn orthogonal_scores_zero_and_width_mismatch_errors() {
        let e = array![[1.0, 0.0], [1.0, 0.0]];
        let p = array![[0.0, 1.0], [0.0, 1.0]];
        let cfg = SearchConfig::mips();
        assert_eq!(wmsdp(&e.view(), &[p.view()], 2, &cfg).unwrap(), 0.0);
        let wide = Array2::<f64>::zeros((2, 3));
        assert!(matches!(wmsdp(&e.view(), &[wide.view()], 2, &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SearchConfig::default();
        cfg.weights.pop();
        assert!(cfg.validate().is_err());
        let cfg = SearchConfig {
            weights: vec![0.0; 3],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SearchConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn pooling_is_linear(
            vals in prop::collection::vec(-100.0f64..100.0, 24),
            other in prop::collection::vec(-100.0f64..100.0, 24),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            scale in 1usize..6,
        ) {
            let x = Array2::from_shape_vec((8, 3), vals).unwrap();
            let y = Array2::from_shape_vec((8, 3), other).unwrap();
            let lhs = pool(&(&x * a + &y * b).view(), scale).unwrap();
            let rhs = pool(&x.view(), scale).unwrap() * a + pool(&y.view(), scale).unwrap() * b;
            prop_assert_eq!(lhs.ncols(), 3);
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-9 * (1.0 + r.abs()));
            }
        }

        #[test]
        fn query_scaling_scales_score(alpha in 0.01f64..100.0, seed in 0u64..500) {
            let mut rng = seeded(seed);
            let e = Array2::from_shape_simple_fn((7, 4), || normal(&mut rng));
            let p = Array2::from_shape_simple_fn((10, 4), || normal(&mut rng));
            let cfg = SearchConfig::default();
            let pooled: Vec<Array2<f64>> = cfg.scales.iter().map(|&s| pool(&p.view(), s).unwrap()).collect();
            let views: Vec<_> = pooled.iter().map(|m| m.view()).collect();
            let base = wmsdp(&e.view(), &views, 10, &cfg).unwrap();
            let scaled = wmsdp(&(&e * alpha).view(), &views, 10, &cfg).unwrap();
            prop_assert!((scaled - alpha * base).abs() <= 1e-9 * (1.0 + (alpha * base).abs()));
        }
    }
}
