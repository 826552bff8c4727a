use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{pretrain_autoencoder, run_pipeline, Method, PipelineSettings, RunPoint, RunReport, Tuning};
use super::workload::{gen_workload, WorkloadSpec};
use crate::device::resolve_profile;
use crate::error::{Error, Result};

/// Cross product of sweep axes plus the settings shared by every point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed `s` generates its workload with `workload.seed + s`.
    pub workload: WorkloadSpec,
    /// Built-in profile name or path to a profile JSON file.
    pub profile: String,
    pub buffer_sizes: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    pub tunings: Vec<Tuning>,
    pub write_verify: Vec<bool>,
    pub seeds: Vec<u64>,
    pub settings: PipelineSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workload: WorkloadSpec::default(),
            profile: "NVM-3".into(),
            buffer_sizes: vec![10, 20, 30, 40, 50, 60],
            sigmas: vec![0.025, 0.05, 0.075, 0.1, 0.125, 0.15],
            methods: vec![Method::Ssa, Method::Mips],
            tunings: vec![Tuning::NoiseAware, Tuning::Plain],
            write_verify: vec![false, true],
            seeds: vec![0, 1, 2],
            settings: PipelineSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let empty = self.buffer_sizes.is_empty()
            || self.sigmas.is_empty()
            || self.methods.is_empty()
            || self.tunings.is_empty()
            || self.write_verify.is_empty()
            || self.seeds.is_empty();
        if empty {
            return Err(Error::arg("every sweep axis needs at least one value"));
        }
        if self.buffer_sizes.contains(&0) {
            return Err(Error::arg("buffer sizes must be positive"));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::arg("sigmas must be finite and non-negative"));
        }
        self.workload.validate()?;
        self.settings.validate()
    }

    pub fn num_rows(&self) -> usize {
        self.buffer_sizes.len()
            * self.sigmas.len()
            * self.methods.len()
            * self.tunings.len()
            * self.write_verify.len()
            * self.seeds.len()
    }

    pub fn points(&self) -> Vec<RunPoint> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &buffer_size in &self.buffer_sizes {
                for &sigma in &self.sigmas {
                    for &tuning in &self.tunings {
                        for &write_verify in &self.write_verify {
                            out.push(RunPoint {
                                buffer_size,
                                sigma,
                                tuning,
                                write_verify,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn workload_for(&self, seed: u64) -> WorkloadSpec {
        WorkloadSpec {
            seed: self.workload.seed.wrapping_add(seed),
            ..self.workload
        }
    }
}

fn row_order(a: &RunReport, b: &RunReport) -> std::cmp::Ordering {
    a.buffer_size
        .cmp(&b.buffer_size)
        .then(a.sigma.total_cmp(&b.sigma))
        .then(a.method.cmp(&b.method))
        .then(a.tuning.cmp(&b.tuning))
        .then(a.write_verify.cmp(&b.write_verify))
        .then(a.seed.cmp(&b.seed))
}

/// Runs every point in parallel; rows come back sorted by configuration key.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    let profile = resolve_profile(&cfg.profile)?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let prepared: BTreeMap<u64, _> = seeds
        .par_iter()
        .map(|&seed| {
            let workload = gen_workload(&cfg.workload_for(seed))?;
            let ae = pretrain_autoencoder(&workload, &cfg.settings, seed)?;
            Ok((seed, (workload, ae)))
        })
        .collect::<Result<_>>()?;

    let batches: Vec<Vec<RunReport>> = cfg
        .points()
        .par_iter()
        .map(|point| {
            let (workload, ae) = &prepared[&point.seed];
            run_pipeline(workload, &profile, &cfg.settings, point, &cfg.methods, Some(ae))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<RunReport> = batches.into_iter().flatten().collect();
    rows.sort_by(row_order);
    Ok(rows)
}

/// Fixed CSV schema, in column order. Wall time is left out so that
/// repeated sweeps produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub buffer_size: usize,
    pub sigma: f64,
    pub method: Method,
    pub tuning: Tuning,
    pub write_verify: bool,
    pub seed: u64,
    pub profile: String,
    pub num_entries: usize,
    pub num_queries: usize,
    pub retrieval_accuracy: f64,
    pub surrogate_accuracy: f64,
    pub surrogate_accuracy_clean: f64,
    pub surrogate_drop: f64,
    pub mean_margin: f64,
    pub deviation_rms: f64,
    pub write_pulses: u64,
    pub macs: u64,
    pub cell_reads: u64,
    pub adc_conversions: u64,
}

impl From<&RunReport> for CsvRow {
    fn from(r: &RunReport) -> Self {
        CsvRow {
            buffer_size: r.buffer_size,
            sigma: r.sigma,
            method: r.method,
            tuning: r.tuning,
            write_verify: r.write_verify,
            seed: r.seed,
            profile: r.profile.clone(),
            num_entries: r.num_entries,
            num_queries: r.num_queries,
            retrieval_accuracy: r.retrieval_accuracy,
            surrogate_accuracy: r.surrogate_accuracy,
            surrogate_accuracy_clean: r.surrogate_accuracy_clean,
            surrogate_drop: r.surrogate_drop,
            mean_margin: r.mean_margin,
            deviation_rms: r.deviation_rms,
            write_pulses: r.write_pulses,
            macs: r.counters.macs,
            cell_reads: r.counters.cell_reads,
            adc_conversions: r.counters.adc_conversions,
        }
    }
}

pub fn write_csv<W: Write>(w: W, rows: &[RunReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(CsvRow::from(r))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows = rdr.deserialize().collect::<Result<Vec<CsvRow>, _>>()?;
    Ok(rows)
}
