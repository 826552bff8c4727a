//! On-disk layout: `manifest.json` plus, per subarray, `subarray_NNN.bin`
//! (row-major `u8` levels) and `subarray_NNN.dev.bin` (row-major
//! little-endian `f64` write deviations).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CrossbarSubArray, PromptStore, SearchConfig, StoreConfig, StoredEntry};
use crate::device::DeviceProfile;
use crate::error::{Error, Result};

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SubarrayRecord {
    levels: String,
    deviations: String,
    used_cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: StoreConfig,
    profile: DeviceProfile,
    search: SearchConfig,
    write_pulses: u64,
    entries: Vec<StoredEntry>,
    subarrays: Vec<SubarrayRecord>,
}

impl PromptStore {
    /// Writes the store into `dir`, recording `search` as its default search settings.
    pub fn save(&self, dir: &Path, search: &SearchConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut records = Vec::new();
        for (i, sa) in self.subarrays.iter().enumerate() {
            let levels = format!("subarray_{i:03}.bin");
            let deviations = format!("subarray_{i:03}.dev.bin");
            fs::write(dir.join(&levels), sa.levels())?;
            let dev: Vec<u8> = sa.deviations().iter().flat_map(|d| d.to_le_bytes()).collect();
            fs::write(dir.join(&deviations), dev)?;
            records.push(SubarrayRecord {
                levels,
                deviations,
                used_cols: sa.used_cols(),
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            config: self.config.clone(),
            profile: self.profile.clone(),
            search: search.clone(),
            write_pulses: self.write_pulses,
            entries: self.entries.clone(),
            subarrays: records,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads a store and the search settings it was saved with.
    pub fn load(dir: &Path) -> Result<(Self, SearchConfig)> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
        }
        let mut store = PromptStore::new(manifest.config, manifest.profile).map_err(|e| Error::Format(e.to_string()))?;
        let (rows, cols) = (store.config.rows, store.config.cols);
        for rec in manifest.subarrays {
            let levels = fs::read(dir.join(&rec.levels))?;
            let raw = fs::read(dir.join(&rec.deviations))?;
            if raw.len() % 8 != 0 {
                return Err(Error::Format(format!("{} is not a whole number of f64", rec.deviations)));
            }
            let deviations = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if levels.iter().any(|&l| l as usize >= store.profile.num_levels) {
                return Err(Error::Format(format!("{} holds an out-of-range level", rec.levels)));
            }
            store
                .subarrays
                .push(CrossbarSubArray::from_parts(rows, cols, levels, deviations, rec.used_cols)?);
        }
        for (i, e) in manifest.entries.iter().enumerate() {
            if e.index != i || e.subarray >= store.subarrays.len() || e.col_end > cols {
                return Err(Error::Format(format!("entry {i} has an invalid location")));
            }
        }
        store.entries = manifest.entries;
        store.write_pulses = manifest.write_pulses;
        manifest.search.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok((store, manifest.search))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::EncodedPrompt;
    use crate::device::builtin_profile;
    use crate::rng::seeded;
    use crate::store::WriteVerifyPolicy;
    use ndarray::Array2;

    #[test]
    fn roundtrip_preserves_reads() {
        let mut store = PromptStore::new(StoreConfig::default(), builtin_profile("NVM-4").unwrap()).unwrap();
        let mut rng = seeded(3);
        for i in 0..9 {
            let ep = EncodedPrompt {
                data: Array2::from_shape_fn((10, 48), |(t, j)| (t * 48 + j) as i16 * 13 - 3000 + i),
                scale: 0.5,
                source_id: format!("p{i}"),
                domain_tag: Some(i as u32),
            };
            store.program(&ep, &WriteVerifyPolicy::default(), &mut rng).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let search = SearchConfig::mips();
        store.save(dir.path(), &search).unwrap();
        assert!(dir.path().join("subarray_001.bin").exists());
        let (back, back_search) = PromptStore::load(dir.path()).unwrap();
        assert_eq!(back_search, search);
        assert_eq!(back.entries(), store.entries());
        assert_eq!(back.subarrays(), store.subarrays());
        let cfg = SearchConfig::default();
        let a = store.read_snapshot(&cfg, &mut seeded(1)).unwrap();
        let b = back.read_snapshot(&cfg, &mut seeded(1)).unwrap();
        for i in 0..9 {
            assert_eq!(a.entry_values(i), b.entry_values(i));
        }
    }

    #[test]
    fn corrupt_level_dump_is_format_error() {
        let mut store = PromptStore::new(StoreConfig::default(), builtin_profile("NVM-1").unwrap()).unwrap();
        let ep = EncodedPrompt {
            data: Array2::zeros((2, 4)),
            scale: 1.0,
            source_id: "z".into(),
            domain_tag: None,
        };
        store.program(&ep, &WriteVerifyPolicy::default(), &mut seeded(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path(), &SearchConfig::default()).unwrap();
        let mut levels = fs::read(dir.path().join("subarray_000.bin")).unwrap();
        levels[0] = 9;
        fs::write(dir.path().join("subarray_000.bin"), levels).unwrap();
        let err = PromptStore::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert_eq!(err.exit_code(), 4);
    }
}
