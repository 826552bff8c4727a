use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::LinearAutoencoder;
use crate::error::{Error, Result};

/// Largest magnitude an encoded value may take. `-32768` is never produced.
pub const QMAX: i16 = i16::MAX;

/// A `T x D` soft prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTokenSet {
    pub tokens: Array2<f64>,
    pub id: String,
    pub domain_tag: Option<u32>,
}

impl VirtualTokenSet {
    pub fn new(tokens: Array2<f64>, id: impl Into<String>, domain_tag: Option<u32>) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::arg("virtual token set must be at least 1x1"));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("virtual tokens must be finite"));
        }
        Ok(VirtualTokenSet {
            tokens,
            id: id.into(),
            domain_tag,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// The int16, dimension-reduced form of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPrompt {
    pub data: Array2<i16>,
    pub scale: f64,
    pub source_id: String,
    pub domain_tag: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EncodedMeta {
    source_id: String,
    domain_tag: Option<u32>,
    rows: usize,
    cols: usize,
    scale: f64,
    payload: String,
}

const PAYLOAD_FORMAT: &str = "i16-le-row-major";

impl EncodedPrompt {
    pub fn num_tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn code_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn dequantized(&self) -> Array2<f64> {
        dequantize(&self.data.view(), self.scale)
    }

    /// Writes JSON metadata to `meta` and the row-major little-endian int16
    /// payload to `payload`.
    pub fn write_parts<M: Write, P: Write>(&self, meta: M, mut payload: P) -> Result<()> {
        let header = EncodedMeta {
            source_id: self.source_id.clone(),
            domain_tag: self.domain_tag,
            rows: self.data.nrows(),
            cols: self.data.ncols(),
            scale: self.scale,
            payload: PAYLOAD_FORMAT.to_string(),
        };
        serde_json::to_writer_pretty(meta, &header)?;
        for v in self.data.iter() {
            payload.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_parts<M: Read, P: Read>(meta: M, mut payload: P) -> Result<Self> {
        let header: EncodedMeta = serde_json::from_reader(meta)?;
        if header.payload != PAYLOAD_FORMAT {
            return Err(Error::Format(format!("unknown payload format {}", header.payload)));
        }
        let mut bytes = vec![0u8; 2 * header.rows * header.cols];
        payload.read_exact(&mut bytes)?;
        let vals: Vec<i16> = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        if vals.contains(&i16::MIN) {
            return Err(Error::Format("payload contains -32768".into()));
        }
        if !(header.scale > 0.0 && header.scale.is_finite()) {
            return Err(Error::Format(format!("invalid scale {}", header.scale)));
        }
        let data = Array2::from_shape_vec((header.rows, header.cols), vals)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(EncodedPrompt {
            data,
            scale: header.scale,
            source_id: header.source_id,
            domain_tag: header.domain_tag,
        })
    }

    /// Saves as `<stem>.json` and `<stem>.i16` inside `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let (meta, payload) = part_paths(dir, stem);
        let mut m = Vec::new();
        let mut p = Vec::new();
        self.write_parts(&mut m, &mut p)?;
        fs::write(meta, m)?;
        fs::write(payload, p)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (meta, payload) = part_paths(dir, stem);
        Self::read_parts(fs::File::open(meta)?, fs::File::open(payload)?)
    }
}

fn part_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.i16")))
}

/// Symmetric per-tensor quantization: `scale = max|x| / 32767` (1 when all
/// zero), values rounded to nearest and clamped to `[-32767, 32767]`.
pub fn quantize(x: &ArrayView2<f64>) -> (Array2<i16>, f64) {
    let max_abs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs > 0.0 { max_abs / QMAX as f64 } else { 1.0 };
    let q = QMAX as f64;
    let data = x.mapv(|v| (v / scale).round().clamp(-q, q) as i16);
    (data, scale)
}

pub fn dequantize(data: &ArrayView2<i16>, scale: f64) -> Array2<f64> {
    data.mapv(|v| v as f64 * scale)
}

/// Projects each token through the encoder and quantizes to int16.
pub fn encode(vts: &VirtualTokenSet, ae: &LinearAutoencoder) -> Result<EncodedPrompt> {
    let projected = ae.encode_rows(&vts.tokens.view())?;
    let (data, scale) = quantize(&projected.view());
    Ok(EncodedPrompt {
        data,
        scale,
        source_id: vts.id.clone(),
        domain_tag: vts.domain_tag,
    })
}

pub fn decode(ep: &EncodedPrompt, ae: &LinearAutoencoder) -> Result<VirtualTokenSet> {
    let tokens = ae.decode_rows(&ep.dequantized().view())?;
    VirtualTokenSet::new(tokens, ep.source_id.clone(), ep.domain_tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded};
    use proptest::prelude::*;

    #[test]
    fn zero_tokens_encode_to_zero() {
        let ae = LinearAutoencoder::random(16, 4, 1).unwrap();
        let vts = VirtualTokenSet::new(Array2::zeros((3, 16)), "z", None).unwrap();
        let ep = encode(&vts, &ae).unwrap();
        assert_eq!(ep.scale, 1.0);
        assert!(ep.data.iter().all(|v| *v == 0));
        let back = decode(&ep, &ae).unwrap();
        assert!(back.tokens.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn max_hits_full_range() {
        // Identity encoder, so the projection max is the constructed value.
        let ae = LinearAutoencoder::identity(3).unwrap();
        let k = 0.25;
        let tokens = ndarray::array![[32767.0 * k, -1.0, 2.0], [0.5, -32767.0 * k, 7.0]];
        let ep = encode(&VirtualTokenSet::new(tokens, "m", Some(2)).unwrap(), &ae).unwrap();
        let max = ep.data.iter().map(|v| v.unsigned_abs()).max().unwrap();
        assert_eq!(max, 32767);
        assert_eq!(ep.scale, k);
        assert_eq!(ep.domain_tag, Some(2));
    }

    #[test]
    fn default_prompt_shape() {
        let ae = LinearAutoencoder::random(2048, 48, 2).unwrap();
        let mut rng = seeded(4);
        let tokens = Array2::from_shape_simple_fn((10, 2048), || normal(&mut rng));
        let ep = encode(&VirtualTokenSet::new(tokens, "p", None).unwrap(), &ae).unwrap();
        assert_eq!(ep.data.dim(), (10, 48));
    }

    #[test]
    fn shape_mismatch_is_argument_error() {
        let ae = LinearAutoencoder::random(8, 4, 1).unwrap();
        let vts = VirtualTokenSet::new(Array2::ones((2, 9)), "x", None).unwrap();
        assert!(matches!(encode(&vts, &ae), Err(Error::Argument(_))));
        let ep = EncodedPrompt {
            data: Array2::zeros((2, 5)),
            scale: 1.0,
            source_id: "x".into(),
            domain_tag: None,
        };
        assert!(matches!(decode(&ep, &ae), Err(Error::Argument(_))));
    }

    #[test]
    fn parts_roundtrip() {
        let ep = EncodedPrompt {
            data: ndarray::array![[1, -2, 32767], [-32767, 0, 5]],
            scale: 0.125,
            source_id: "abc".into(),
            domain_tag: Some(4),
        };
        let mut meta = Vec::new();
        let mut payload = Vec::new();
        ep.write_parts(&mut meta, &mut payload).unwrap();
        assert_eq!(payload.len(), 12);
        assert_eq!(&payload[..4], &[1, 0, 0xfe, 0xff]);
        let back = EncodedPrompt::read_parts(meta.as_slice(), payload.as_slice()).unwrap();
        assert_eq!(back, ep);
    }

    proptest! {
        #[test]
        fn quantization_error_is_half_scale(vals in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            let x = Array2::from_shape_vec((1, vals.len()), vals).unwrap();
            let (q, scale) = quantize(&x.view());
            let back = dequantize(&q.view(), scale);
            for (a, b) in x.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() <= scale / 2.0 * (1.0 + 1e-12));
            }
            prop_assert!(q.iter().all(|v| *v != i16::MIN));
        }

        #[test]
        fn encoding_is_linear_before_rounding(a in 0.01f64..100.0, seed in 0u64..1000) {
            let ae = LinearAutoencoder::random(12, 4, seed).unwrap();
            let mut rng = seeded(seed + 1);
            let tokens = Array2::from_shape_simple_fn((3, 12), || normal(&mut rng));
            let base = encode(&VirtualTokenSet::new(tokens.clone(), "v", None).unwrap(), &ae).unwrap();
            let scaled = encode(&VirtualTokenSet::new(tokens * a, "v", None).unwrap(), &ae).unwrap();
            let lhs = scaled.dequantized();
            let rhs = base.dequantized() * a;
            let bound = scaled.scale / 2.0 + a * base.scale / 2.0;
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= bound * (1.0 + 1e-9));
            }
        }
    }
}
