//! Crossbar-backed prompt store.
//!
//! Every stored prompt keeps pooled versions at each configured scale. Each
//! pooled int16 token row is bit-sliced into `d_enc * slices` cells laid out
//! down one crossbar column (spilling into further columns when taller than
//! the subarray). Retrieval reads the cells back through a [`StoreSnapshot`],
//! which fixes one draw of read noise and variation so that every scoring
//! path sees the same values.

mod crossbar;
mod persist;
mod search;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crossbar::{CrossbarSubArray, WriteVerifyPolicy};
pub use search::{align_length, pool, wmsdp, SearchConfig, Similarity};

use crate::codec::{bit_slice, BitSliceLayout, EncodedPrompt, QMAX};
use crate::device::{perturb_in_place, DeviceProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub rows: usize,
    pub cols: usize,
    pub max_subarrays: usize,
    /// Pooling scales stored per entry; must include 1.
    pub scales: Vec<usize>,
    pub layout: BitSliceLayout,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            rows: 384,
            cols: 128,
            max_subarrays: 1024,
            scales: vec![1, 2, 4],
            layout: BitSliceLayout::default(),
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.max_subarrays == 0 {
            return Err(Error::arg("subarray dimensions and count must be positive"));
        }
        if !self.scales.contains(&1) || self.scales.contains(&0) {
            return Err(Error::arg(format!("stored scales {:?} must include 1 and be >= 1", self.scales)));
        }
        let mut sorted = self.scales.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.scales.len() {
            return Err(Error::arg("stored scales must be distinct"));
        }
        Ok(())
    }
}

/// Placement of one pooled version of an entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledBlock {
    pub scale: usize,
    pub rows: usize,
    pub col_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    /// Position in the store; ties in retrieval go to the lowest.
    pub index: usize,
    pub source_id: String,
    pub domain_tag: Option<u32>,
    pub quant_scale: f64,
    pub tokens: usize,
    pub code_dim: usize,
    pub subarray: usize,
    pub col_start: usize,
    pub col_end: usize,
    pub blocks: Vec<ScaledBlock>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub macs: u64,
    pub cell_reads: u64,
    pub adc_conversions: u64,
}

impl Counters {
    pub fn add(&mut self, other: Counters) {
        self.macs += other.macs;
        self.cell_reads += other.cell_reads;
        self.adc_conversions += other.adc_conversions;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub entry: usize,
    pub source_id: String,
    pub domain_tag: Option<u32>,
    pub score: f64,
    /// Best minus second-best score; `None` with a single entry.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PromptStore {
    config: StoreConfig,
    profile: DeviceProfile,
    subarrays: Vec<CrossbarSubArray>,
    entries: Vec<StoredEntry>,
    write_pulses: u64,
}

impl PromptStore {
    pub fn new(config: StoreConfig, profile: DeviceProfile) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        if profile.num_levels != config.layout.levels_per_device() {
            return Err(Error::arg(format!(
                "{} has {} levels but the layout needs {}",
                profile.name,
                profile.num_levels,
                config.layout.levels_per_device()
            )));
        }
        Ok(PromptStore {
            config,
            profile,
            subarrays: Vec::new(),
            entries: Vec::new(),
            write_pulses: 0,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn entries(&self) -> &[StoredEntry] {
        &self.entries
    }

    pub fn subarrays(&self) -> &[CrossbarSubArray] {
        &self.subarrays
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_pulses(&self) -> u64 {
        self.write_pulses
    }

    fn token_height(&self, code_dim: usize) -> usize {
        code_dim * self.config.layout.num_slices()
    }

    fn cols_per_token(&self, code_dim: usize) -> usize {
        self.token_height(code_dim).div_ceil(self.config.rows)
    }

    /// Columns an entry of `tokens x code_dim` occupies.
    pub fn entry_cols(&self, tokens: usize, code_dim: usize) -> usize {
        self.config
            .scales
            .iter()
            .map(|&s| tokens.div_ceil(s) * self.cols_per_token(code_dim))
            .sum()
    }

    fn allocate(&mut self, cols: usize) -> Result<(usize, usize)> {
        if cols > self.config.cols {
            return Err(Error::Capacity(format!(
                "entry needs {cols} columns but a subarray has {}",
                self.config.cols
            )));
        }
        if let Some(i) = self.subarrays.iter().position(|sa| sa.free_cols() >= cols) {
            return Ok((i, self.subarrays[i].reserve(cols)));
        }
        if self.subarrays.len() >= self.config.max_subarrays {
            return Err(Error::Capacity(format!(
                "all {} subarrays are full",
                self.config.max_subarrays
            )));
        }
        let mut sa = CrossbarSubArray::new(self.config.rows, self.config.cols);
        let start = sa.reserve(cols);
        self.subarrays.push(sa);
        Ok((self.subarrays.len() - 1, start))
    }

    /// Cell holding slice `k` of value `j` in token row `t` of `block`.
    fn cell(&self, block: &ScaledBlock, code_dim: usize, t: usize, j: usize, k: usize) -> (usize, usize) {
        let idx = j * self.config.layout.num_slices() + k;
        let col = block.col_start + t * self.cols_per_token(code_dim) + idx / self.config.rows;
        (idx % self.config.rows, col)
    }

    /// Programs the pooled versions of `ep` into free columns.
    pub fn program<R: Rng + ?Sized>(&mut self, ep: &EncodedPrompt, policy: &WriteVerifyPolicy, rng: &mut R) -> Result<&StoredEntry> {
        if policy.enabled {
            policy.validate()?;
        }
        let (tokens, code_dim) = ep.data.dim();
        if tokens == 0 || code_dim == 0 {
            return Err(Error::arg("cannot store an empty prompt"));
        }
        if ep.data.iter().any(|v| *v == i16::MIN) {
            return Err(Error::arg("encoded prompt contains -32768"));
        }
        let total = self.entry_cols(tokens, code_dim);
        let (subarray, col_start) = self.allocate(total)?;
        let layout = self.config.layout;

        let mut blocks = Vec::new();
        let mut col = col_start;
        for &scale in &self.config.scales {
            let rows = tokens.div_ceil(scale);
            blocks.push(ScaledBlock { scale, rows, col_start: col });
            col += rows * self.cols_per_token(code_dim);
        }

        let base = ep.data.mapv(f64::from);
        for block in &blocks {
            let pooled = pooled_ints(&base.view(), block.scale)?;
            for ((t, j), &v) in pooled.indexed_iter() {
                for (k, level) in bit_slice(v, layout)?.into_iter().enumerate() {
                    let (r, c) = self.cell(block, code_dim, t, j, k);
                    let pulses = self.subarrays[subarray].write(r, c, level, &self.profile, policy, rng)?;
                    self.write_pulses += pulses as u64;
                }
            }
        }

        self.entries.push(StoredEntry {
            index: self.entries.len(),
            source_id: ep.source_id.clone(),
            domain_tag: ep.domain_tag,
            quant_scale: ep.scale,
            tokens,
            code_dim,
            subarray,
            col_start,
            col_end: col_start + total,
            blocks,
        });
        Ok(self.entries.last().unwrap())
    }

    /// Frozen write deviations of every programmed cell.
    pub fn programmed_deviations(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.entries {
            let sa = &self.subarrays[e.subarray];
            for block in &e.blocks {
                for t in 0..block.rows {
                    for j in 0..e.code_dim {
                        for k in 0..self.config.layout.num_slices() {
                            let (r, c) = self.cell(block, e.code_dim, t, j, k);
                            out.push(sa.deviation(r, c));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn programmed_deviation_rms(&self) -> f64 {
        let devs = self.programmed_deviations();
        if devs.is_empty() {
            return 0.0;
        }
        (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt()
    }

    /// Reads one stored block back to int16-domain values.
    fn read_block<R: Rng + ?Sized>(
        &self,
        entry: &StoredEntry,
        block: &ScaledBlock,
        cfg: &SearchConfig,
        rng: &mut R,
    ) -> Array2<f64> {
        let sa = &self.subarrays[entry.subarray];
        let layout = self.config.layout;
        let max_level = (self.profile.num_levels - 1) as f64;
        let adc_steps = cfg.adc_bits.map(|b| ((1u64 << b) - 1) as f64);
        let mut out = Array2::zeros((block.rows, entry.code_dim));
        for t in 0..block.rows {
            for j in 0..entry.code_dim {
                let mut acc = 0.0;
                for k in 0..layout.num_slices() {
                    let (r, c) = self.cell(block, entry.code_dim, t, j, k);
                    let mut g = if cfg.read_noise {
                        sa.read(r, c, &self.profile, Some(&mut *rng))
                    } else {
                        sa.read::<R>(r, c, &self.profile, None)
                    };
                    if let Some(steps) = adc_steps {
                        g = (g.clamp(0.0, 1.0) * steps).round() / steps;
                    }
                    acc += g * max_level * layout.weight(k);
                }
                out[[t, j]] = acc - layout.offset();
            }
        }
        out
    }

    /// Reads every stored scale of every entry once. With `cfg.read_noise` a
    /// fresh read sample is drawn per cell; `cfg.variation` then perturbs each
    /// entry's per-scale matrix relative to its own maximum.
    pub fn read_snapshot<R: Rng + ?Sized>(&self, cfg: &SearchConfig, rng: &mut R) -> Result<StoreSnapshot<'_>> {
        cfg.validate()?;
        if self.entries.is_empty() {
            return Err(Error::state("prompt store is empty"));
        }
        let mut scale_index = Vec::with_capacity(cfg.scales.len());
        for s in &cfg.scales {
            let i = self.config.scales.iter().position(|x| x == s).ok_or_else(|| {
                Error::arg(format!("scale {s} is not stored (stored: {:?})", self.config.scales))
            })?;
            scale_index.push(i);
        }
        let mut values = Vec::with_capacity(self.entries.len());
        let mut cells = 0u64;
        for e in &self.entries {
            let mut per_scale = Vec::with_capacity(e.blocks.len());
            for block in &e.blocks {
                let mut m = self.read_block(e, block, cfg, rng);
                perturb_in_place(&mut m, cfg.variation.global_sigma, rng);
                cells += (m.len() * self.config.layout.num_slices()) as u64;
                per_scale.push(m);
            }
            values.push(per_scale);
        }
        Ok(StoreSnapshot {
            store: self,
            values,
            scale_index,
            cfg: cfg.clone(),
            counters: Counters {
                cell_reads: cells,
                ..Default::default()
            },
        })
    }

    pub fn retrieve<R: Rng + ?Sized>(&self, query: &ArrayView2<f64>, cfg: &SearchConfig, rng: &mut R) -> Result<Retrieval> {
        let snap = self.read_snapshot(cfg, rng)?;
        Ok(snap.retrieve(query)?.0)
    }

    /// Plain inner product on the scale-1 values, read with `cfg`'s noise settings.
    pub fn retrieve_mips<R: Rng + ?Sized>(&self, query: &ArrayView2<f64>, cfg: &SearchConfig, rng: &mut R) -> Result<Retrieval> {
        let mips = SearchConfig {
            scales: vec![1],
            weights: vec![1.0],
            similarity: Similarity::Dot,
            ..cfg.clone()
        };
        let snap = self.read_snapshot(&mips, rng)?;
        Ok(snap.retrieve(query)?.0)
    }

    pub fn batched_retrieval_gemm<R: Rng + ?Sized>(
        &self,
        queries: &[Array2<f64>],
        cfg: &SearchConfig,
        rng: &mut R,
    ) -> Result<Vec<Retrieval>> {
        let snap = self.read_snapshot(cfg, rng)?;
        Ok(snap.retrieve_batch(queries)?.0)
    }
}

/// Means over pooling windows re-rounded to int16.
fn pooled_ints(x: &ArrayView2<f64>, scale: usize) -> Result<Array2<i16>> {
    let q = QMAX as f64;
    Ok(pool(x, scale)?.mapv(|v| v.round().clamp(-q, q) as i16))
}

/// One read-out of the whole store.
#[derive(Debug, Clone)]
pub struct StoreSnapshot<'a> {
    store: &'a PromptStore,
    /// `values[entry][stored scale]`.
    values: Vec<Vec<Array2<f64>>>,
    /// Stored-scale index for each configured search scale.
    scale_index: Vec<usize>,
    cfg: SearchConfig,
    counters: Counters,
}

impl<'a> StoreSnapshot<'a> {
    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    /// Read counters for producing the snapshot.
    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Read-back scale-1 values of `entry`.
    pub fn entry_values(&self, entry: usize) -> &Array2<f64> {
        let i = self.store.config.scales.iter().position(|&s| s == 1).unwrap();
        &self.values[entry][i]
    }

    fn entry_views(&self, entry: usize) -> Vec<ArrayView2<'_, f64>> {
        self.scale_index.iter().map(|&i| self.values[entry][i].view()).collect()
    }

    fn score_counters(&self, queries: usize) -> Counters {
        let mut c = Counters::default();
        let slices = self.store.config.layout.num_slices() as u64;
        for per_scale in &self.values {
            for &i in &self.scale_index {
                let m = &per_scale[i];
                c.macs += (queries * m.len()) as u64;
                c.adc_conversions += queries as u64 * m.nrows() as u64 * slices;
            }
        }
        c
    }

    /// Scores `query` against every entry one at a time.
    pub fn scores(&self, query: &ArrayView2<f64>) -> Result<Vec<f64>> {
        self.store
            .entries
            .iter()
            .map(|e| {
                self.check_width(query, e)?;
                wmsdp(query, &self.entry_views(e.index), e.tokens, &self.cfg)
            })
            .collect()
    }

    fn check_width(&self, query: &ArrayView2<f64>, e: &StoredEntry) -> Result<()> {
        if query.ncols() != e.code_dim {
            return Err(Error::arg(format!(
                "query width {} does not match stored width {}",
                query.ncols(),
                e.code_dim
            )));
        }
        Ok(())
    }

    pub fn retrieve(&self, query: &ArrayView2<f64>) -> Result<(Retrieval, Counters)> {
        let scores = self.scores(query)?;
        Ok((self.pick(&scores), self.score_counters(1)))
    }

    /// Scores all queries with one matrix product per scale and token count.
    pub fn score_matrix(&self, queries: &[Array2<f64>]) -> Result<Array2<f64>> {
        let entries = &self.store.entries;
        let mut scores = Array2::<f64>::zeros((queries.len(), entries.len()));
        let mut groups: Vec<usize> = entries.iter().map(|e| e.tokens).collect();
        groups.sort_unstable();
        groups.dedup();
        for &t in &groups {
            let members: Vec<&StoredEntry> = entries.iter().filter(|e| e.tokens == t).collect();
            let width = members[0].code_dim;
            for e in &members {
                if e.code_dim != width {
                    return Err(Error::arg("stored entries disagree on width"));
                }
            }
            for q in queries {
                if q.ncols() != width {
                    return Err(Error::arg(format!(
                        "query width {} does not match stored width {width}",
                        q.ncols()
                    )));
                }
            }
            for ((&scale, &w), &si) in self.cfg.scales.iter().zip(&self.cfg.weights).zip(&self.scale_index) {
                let rows = t.div_ceil(scale);
                let flat = rows * width;
                let mut qm = Array2::<f64>::zeros((queries.len(), flat));
                for (qi, q) in queries.iter().enumerate() {
                    let pooled = pool(&align_length(&q.view(), t).view(), scale)?;
                    qm.row_mut(qi).assign(&ndarray::ArrayView1::from(pooled.as_slice().unwrap()));
                }
                let mut pm = Array2::<f64>::zeros((members.len(), flat));
                for (ei, e) in members.iter().enumerate() {
                    let m = &self.values[e.index][si];
                    pm.row_mut(ei).assign(&ndarray::ArrayView1::from(m.as_standard_layout().as_slice().unwrap()));
                }
                if self.cfg.similarity == Similarity::Cosine {
                    normalize_rows(&mut qm);
                    normalize_rows(&mut pm);
                }
                let block = qm.dot(&pm.t());
                for (ei, e) in members.iter().enumerate() {
                    for qi in 0..queries.len() {
                        scores[[qi, e.index]] += w * block[[qi, ei]];
                    }
                }
            }
        }
        scores /= self.cfg.weight_sum();
        Ok(scores)
    }

    pub fn retrieve_batch(&self, queries: &[Array2<f64>]) -> Result<(Vec<Retrieval>, Counters)> {
        let scores = self.score_matrix(queries)?;
        let results = scores.outer_iter().map(|row| self.pick(row.as_slice().unwrap())).collect();
        Ok((results, self.score_counters(queries.len())))
    }

    fn pick(&self, scores: &[f64]) -> Retrieval {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        let second = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, s)| *s)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
        let e = &self.store.entries[best];
        Retrieval {
            entry: best,
            source_id: e.source_id.clone(),
            domain_tag: e.domain_tag,
            score: scores[best],
            margin: second.map(|s| scores[best] - s),
        }
    }
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut r in m.outer_iter_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::unslice;
    use crate::device::{builtin_profile, VariationConfig};
    use crate::rng::{normal, seeded};

    fn random_prompt(tokens: usize, dim: usize, seed: u64, id: &str) -> EncodedPrompt {
        let mut rng = seeded(seed);
        let data = Array2::from_shape_simple_fn((tokens, dim), || (normal(&mut rng) * 8000.0).round().clamp(-32767.0, 32767.0) as i16);
        EncodedPrompt {
            data,
            scale: 1.0,
            source_id: id.into(),
            domain_tag: Some(seed as u32),
        }
    }

    fn ideal_store() -> PromptStore {
        PromptStore::new(StoreConfig::default(), DeviceProfile::ideal(4).unwrap()).unwrap()
    }

    #[test]
    fn pool_then_requantize() {
        let x = ndarray::array![[1.0, -1.0], [2.0, -2.0], [4.0, 7.0]];
        assert_eq!(pooled_ints(&x.view(), 2).unwrap(), ndarray::array![[2, -2], [4, 7]]);
    }

    #[test]
    fn noiseless_readback_is_exact() {
        let mut store = ideal_store();
        let ep = random_prompt(10, 48, 1, "a");
        store.program(&ep, &WriteVerifyPolicy::default(), &mut seeded(0)).unwrap();
        let snap = store.read_snapshot(&SearchConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(snap.entry_values(0), &ep.data.mapv(f64::from));
        let base = ep.data.mapv(f64::from);
        for (i, &s) in store.config().scales.iter().enumerate() {
            let want = pooled_ints(&base.view(), s).unwrap().mapv(f64::from);
            assert_eq!(snap.values[0][i], want);
        }
    }

    #[test]
    fn cell_levels_unslice_to_stored_values() {
        let mut store = ideal_store();
        let ep = random_prompt(5, 48, 2, "a");
        store.program(&ep, &WriteVerifyPolicy::default(), &mut seeded(0)).unwrap();
        let e = store.entries()[0].clone();
        let sa = &store.subarrays()[0];
        let layout = store.config().layout;
        for t in 0..5 {
            for j in 0..48 {
                let levels: Vec<u8> = (0..layout.num_slices())
                    .map(|k| {
                        let (r, c) = store.cell(&e.blocks[0], 48, t, j, k);
                        sa.level(r, c)
                    })
                    .collect();
                assert_eq!(unslice(&levels, layout).unwrap(), ep.data[[t, j]]);
            }
        }
        assert!(sa.levels().iter().all(|&l| (l as usize) < 4));
    }

    #[test]
    fn packing_and_capacity() {
        let config = StoreConfig {
            max_subarrays: 2,
            ..Default::default()
        };
        let mut store = PromptStore::new(config, DeviceProfile::ideal(4).unwrap()).unwrap();
        // 10 + 5 + 3 columns per entry, 7 per subarray.
        assert_eq!(store.entry_cols(10, 48), 18);
        let mut rng = seeded(0);
        for i in 0..14 {
            let e = store.program(&random_prompt(10, 48, i, "p"), &WriteVerifyPolicy::default(), &mut rng).unwrap();
            assert_eq!(e.subarray, (i / 7) as usize);
        }
        let err = store.program(&random_prompt(10, 48, 99, "p"), &WriteVerifyPolicy::default(), &mut rng);
        assert!(matches!(err, Err(Error::Capacity(_))));
        assert_eq!(Error::Capacity(String::new()).exit_code(), 3);
    }

    #[test]
    fn tall_tokens_span_columns() {
        let mut store = ideal_store();
        assert_eq!(store.entry_cols(4, 100), (4 + 2 + 1) * 3);
        let ep = random_prompt(4, 100, 3, "t");
        store.program(&ep, &WriteVerifyPolicy::default(), &mut seeded(0)).unwrap();
        let snap = store.read_snapshot(&SearchConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(snap.entry_values(0), &ep.data.mapv(f64::from));
    }

    #[test]
    fn layout_must_match_device_levels() {
        let cfg = StoreConfig {
            layout: BitSliceLayout::new(1).unwrap(),
            ..Default::default()
        };
        assert!(PromptStore::new(cfg, builtin_profile("NVM-1").unwrap()).is_err());
    }

    #[test]
    fn empty_store_is_state_error() {
        let store = ideal_store();
        let q = Array2::zeros((10, 48));
        let cfg = SearchConfig::default();
        assert!(matches!(store.retrieve(&q.view(), &cfg, &mut seeded(0)), Err(Error::State(_))));
        assert!(matches!(store.retrieve_mips(&q.view(), &cfg, &mut seeded(0)), Err(Error::State(_))));
        assert!(matches!(store.batched_retrieval_gemm(&[q], &cfg, &mut seeded(0)), Err(Error::State(_))));
    }

    #[test]
    fn single_entry_always_wins() {
        let mut store = ideal_store();
        store.program(&random_prompt(10, 48, 1, "only"), &WriteVerifyPolicy::default(), &mut seeded(0)).unwrap();
        let q = random_prompt(10, 48, 50, "q").data.mapv(|v| -f64::from(v));
        let r = store.retrieve(&q.view(), &SearchConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(r.source_id, "only");
        assert_eq!(r.margin, None);
    }

    #[test]
    fn scaled_copy_wins_mips() {
        let mut store = ideal_store();
        let mut rng = seeded(0);
        for i in 0..5 {
            store.program(&random_prompt(10, 48, i, &format!("e{i}")), &WriteVerifyPolicy::default(), &mut rng).unwrap();
        }
        let q = random_prompt(10, 48, 3, "q").data.mapv(|v| 0.37 * f64::from(v));
        let r = store.retrieve_mips(&q.view(), &SearchConfig::default(), &mut rng).unwrap();
        assert_eq!(r.entry, 3);
        assert!(r.margin.unwrap() > 0.0);
    }

    #[test]
    fn duplicated_entries_tie_to_lowest() {
        let mut store = ideal_store();
        let ep = random_prompt(10, 48, 1, "dup");
        let mut rng = seeded(0);
        store.program(&random_prompt(10, 48, 2, "other"), &WriteVerifyPolicy::default(), &mut rng).unwrap();
        store.program(&ep, &WriteVerifyPolicy::default(), &mut rng).unwrap();
        store.program(&ep, &WriteVerifyPolicy::default(), &mut rng).unwrap();
        let q = ep.data.mapv(f64::from);
        let cfg = SearchConfig::default();
        assert_eq!(store.retrieve(&q.view(), &cfg, &mut rng).unwrap().entry, 1);
        assert_eq!(store.batched_retrieval_gemm(&[q], &cfg, &mut rng).unwrap()[0].entry, 1);
    }

    #[test]
    fn gemm_matches_loop_with_noise() {
        let mut store = PromptStore::new(StoreConfig::default(), builtin_profile("NVM-3").unwrap()).unwrap();
        let mut rng = seeded(0);
        for i in 0..8 {
            store.program(&random_prompt(10, 48, i, "e"), &WriteVerifyPolicy::default(), &mut rng).unwrap();
        }
        let cfg = SearchConfig {
            read_noise: true,
            variation: VariationConfig::default(),
            ..Default::default()
        };
        let snap = store.read_snapshot(&cfg, &mut seeded(5)).unwrap();
        let queries: Vec<Array2<f64>> = (0..6).map(|i| random_prompt(7 + i, 48, 100 + i as u64, "q").data.mapv(f64::from)).collect();
        let (batch, _) = snap.retrieve_batch(&queries).unwrap();
        for (q, b) in queries.iter().zip(&batch) {
            let (single, _) = snap.retrieve(&q.view()).unwrap();
            assert_eq!(single.entry, b.entry);
            assert!((single.score - b.score).abs() <= 1e-9 * single.score.abs());
        }
    }

    #[test]
    fn write_verify_shrinks_deviation() {
        let profile = builtin_profile("NVM-2").unwrap();
        let mut plain = PromptStore::new(StoreConfig::default(), profile.clone()).unwrap();
        let mut verified = PromptStore::new(StoreConfig::default(), profile).unwrap();
        let ep = random_prompt(10, 48, 1, "w");
        plain.program(&ep, &WriteVerifyPolicy::default(), &mut seeded(1)).unwrap();
        verified
            .program(&ep, &WriteVerifyPolicy::enabled(0.005, 20).unwrap(), &mut seeded(1))
            .unwrap();
        assert!(verified.programmed_deviation_rms() < plain.programmed_deviation_rms());
        assert!(verified.write_pulses() > plain.write_pulses());
    }

    #[test]
    fn counters_are_tallied() {
        let mut store = ideal_store();
        store.program(&random_prompt(10, 48, 1, "a"), &WriteVerifyPolicy::default(), &mut seeded(0)).unwrap();
        let snap = store.read_snapshot(&SearchConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(snap.counters().cell_reads, (10 + 5 + 3) * 48 * 8);
        let q = Array2::zeros((10, 48));
        let (_, c) = snap.retrieve(&q.view()).unwrap();
        assert_eq!(c.macs, (10 + 5 + 3) * 48);
        assert_eq!(c.adc_conversions, 18 * 8);
    }
}
