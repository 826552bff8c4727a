use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const OFFSET: i32 = 32768;

/// How one int16 is spread over `16 / bits_per_device` multi-level cells.
/// Slice `i` carries weight `2^(bits_per_device * i)`; slice 0 is least significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSliceLayout {
    bits_per_device: u32,
}

impl Default for BitSliceLayout {
    fn default() -> Self {
        BitSliceLayout { bits_per_device: 2 }
    }
}

impl BitSliceLayout {
    pub fn new(bits_per_device: u32) -> Result<Self> {
        match bits_per_device {
            1 | 2 | 4 => Ok(BitSliceLayout { bits_per_device }),
            b => Err(Error::arg(format!("bits per device must be 1, 2 or 4, got {b}"))),
        }
    }

    pub fn bits_per_device(&self) -> u32 {
        self.bits_per_device
    }

    pub fn num_slices(&self) -> usize {
        (16 / self.bits_per_device) as usize
    }

    pub fn levels_per_device(&self) -> usize {
        1 << self.bits_per_device
    }

    pub fn weight(&self, slice: usize) -> f64 {
        (1u64 << (self.bits_per_device as usize * slice)) as f64
    }

    /// Offset applied to signed values before slicing.
    pub fn offset(&self) -> f64 {
        OFFSET as f64
    }
}

/// Splits `value` (offset-binary, `u = value + 32768`) into device levels,
/// least-significant slice first.
pub fn bit_slice(value: i16, layout: BitSliceLayout) -> Result<Vec<u8>> {
    if value == i16::MIN {
        return Err(Error::arg("-32768 is outside the symmetric int16 range"));
    }
    let mut u = (value as i32 + OFFSET) as u32;
    let b = layout.bits_per_device;
    let mask = (1u32 << b) - 1;
    let mut levels = Vec::with_capacity(layout.num_slices());
    for _ in 0..layout.num_slices() {
        levels.push((u & mask) as u8);
        u >>= b;
    }
    Ok(levels)
}

/// Inverse of [`bit_slice`].
pub fn unslice(levels: &[u8], layout: BitSliceLayout) -> Result<i16> {
    if levels.len() != layout.num_slices() {
        return Err(Error::arg(format!(
            "expected {} slices, got {}",
            layout.num_slices(),
            levels.len()
        )));
    }
    let b = layout.bits_per_device;
    let mut u: u32 = 0;
    for (i, &level) in levels.iter().enumerate() {
        if level as usize >= layout.levels_per_device() {
            return Err(Error::arg(format!(
                "level {level} at slice {i} exceeds {}-bit device",
                b
            )));
        }
        u |= (level as u32) << (b as usize * i);
    }
    let value = u as i32 - OFFSET;
    if value == i16::MIN as i32 {
        return Err(Error::arg("levels decode to -32768, which encode never produces"));
    }
    Ok(value as i16)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Base-`2^b` digits by repeated division, independent of the shift path.
    fn digits_oracle(mut u: u64, base: u64, n: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for _ in 0..n {
            out.push((u % base) as u8);
            u /= base;
        }
        out
    }

    #[test]
    fn zero_and_extremes() {
        let l2 = BitSliceLayout::new(2).unwrap();
        assert_eq!(bit_slice(0, l2).unwrap(), digits_oracle(32768, 4, 8));
        assert_eq!(bit_slice(0, l2).unwrap(), vec![0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(bit_slice(-32767, l2).unwrap(), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(unslice(&[3; 8], l2).unwrap(), 32767);
        assert!(bit_slice(i16::MIN, l2).is_err());
        assert!(unslice(&[0; 8], l2).is_err());
    }

    #[test]
    fn layouts() {
        assert_eq!(BitSliceLayout::new(1).unwrap().num_slices(), 16);
        assert_eq!(BitSliceLayout::new(4).unwrap().num_slices(), 4);
        assert_eq!(BitSliceLayout::default().num_slices(), 8);
        assert_eq!(BitSliceLayout::default().weight(3), 64.0);
        assert!(BitSliceLayout::new(3).is_err());
    }

    #[test]
    fn rejects_bad_levels() {
        let l2 = BitSliceLayout::default();
        assert!(unslice(&[4, 0, 0, 0, 0, 0, 0, 2], l2).is_err());
        assert!(unslice(&[0, 0, 0], l2).is_err());
    }

    #[test]
    fn matches_division_oracle() {
        for b in [1u32, 2, 4] {
            let layout = BitSliceLayout::new(b).unwrap();
            for v in (-32767i32..=32767).step_by(97) {
                let got = bit_slice(v as i16, layout).unwrap();
                let want = digits_oracle((v + 32768) as u64, 1 << b, layout.num_slices());
                assert_eq!(got, want, "value {v} b {b}");
            }
        }
    }

    #[test]
    fn exhaustive_roundtrip() {
        for b in [1u32, 2, 4] {
            let layout = BitSliceLayout::new(b).unwrap();
            for v in -32767i16..=32767 {
                assert_eq!(unslice(&bit_slice(v, layout).unwrap(), layout).unwrap(), v);
            }
        }
    }
}
