use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::workload::Workload;
use crate::codec::{encode, stack_rows, train_autoencoder, AeTrainConfig, EncodedPrompt, LinearAutoencoder, VirtualTokenSet};
use crate::device::{DeviceProfile, VariationConfig};
use crate::error::{Error, Result};
use crate::rng::{stream, streams};
use crate::selection::{BufferedSample, DataBuffer, SelectionParams, SelectionReport};
use crate::store::{Counters, PromptStore, SearchConfig, Similarity, StoreConfig, WriteVerifyPolicy};
use crate::tuning::{tune_prompt, NoiseSpec, SurrogateTask, TuneConfig, TuneLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ssa,
    Mips,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ssa => "ssa",
            Method::Mips => "mips",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssa" => Ok(Method::Ssa),
            "mips" => Ok(Method::Mips),
            other => Err(Error::arg(format!("unknown method {other:?} (expected ssa or mips)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    NoiseAware,
    Plain,
}

impl Tuning {
    pub fn as_str(self) -> &'static str {
        match self {
            Tuning::NoiseAware => "noise_aware",
            Tuning::Plain => "plain",
        }
    }
}

impl fmt::Display for Tuning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tuning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "noise_aware" | "on" => Ok(Tuning::NoiseAware),
            "plain" | "off" => Ok(Tuning::Plain),
            other => Err(Error::arg(format!("unknown tuning mode {other:?} (expected noise_aware or plain)"))),
        }
    }
}

/// Shape of the frozen surrogate readout; see [`SurrogateTask::aligned`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub gain: f64,
    pub jitter: f64,
    pub bias_std: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            gain: 10.0,
            jitter: 0.1,
            bias_std: 200.0,
        }
    }
}

impl TaskSpec {
    pub fn build(&self, workload: &Workload, seed: u64) -> Result<SurrogateTask> {
        SurrogateTask::aligned(&workload.centroids.view(), self.gain, self.jitter, self.bias_std, seed)
    }
}

/// Settings shared by every point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub code_dim: usize,
    pub scales: Vec<usize>,
    pub weights: Vec<f64>,
    /// Per-read cell noise from the device profile.
    pub read_noise: bool,
    pub similarity: Similarity,
    pub adc_bits: Option<u32>,
    pub verify_tolerance: f64,
    pub verify_max_iters: u32,
    pub selection: SelectionParams,
    pub tune_steps: usize,
    pub tune_lr: f64,
    pub prompt_tokens: usize,
    pub init_std: f64,
    pub task: TaskSpec,
    pub ae_pretrain: AeTrainConfig,
    pub ae_update: AeTrainConfig,
    /// Queries sharing one store read-out.
    pub query_batch: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            code_dim: 48,
            scales: vec![1, 2, 4],
            weights: vec![1.0, 0.8, 0.6],
            read_noise: true,
            similarity: Similarity::Dot,
            adc_bits: None,
            verify_tolerance: 0.01,
            verify_max_iters: 20,
            selection: SelectionParams::default(),
            tune_steps: 200,
            tune_lr: 5.0,
            prompt_tokens: 10,
            init_std: 0.02,
            task: TaskSpec::default(),
            ae_pretrain: AeTrainConfig::default(),
            ae_update: AeTrainConfig {
                epochs: 2,
                ..AeTrainConfig::default()
            },
            query_batch: 1,
        }
    }
}

impl PipelineSettings {
    pub fn search_config(&self, method: Method, sigma: f64) -> SearchConfig {
        let (scales, weights) = match method {
            Method::Ssa => (self.scales.clone(), self.weights.clone()),
            Method::Mips => (vec![1], vec![1.0]),
        };
        let similarity = match method {
            Method::Ssa => self.similarity,
            Method::Mips => Similarity::Dot,
        };
        SearchConfig {
            scales,
            weights,
            read_noise: self.read_noise,
            variation: VariationConfig {
                global_sigma: sigma,
                seed: 0,
            },
            similarity,
            adc_bits: self.adc_bits,
        }
    }

    pub fn store_config(&self) -> StoreConfig {
        let mut scales = self.scales.clone();
        if !scales.contains(&1) {
            scales.insert(0, 1);
        }
        StoreConfig {
            scales,
            ..StoreConfig::default()
        }
    }

    pub fn verify_policy(&self, enabled: bool) -> Result<WriteVerifyPolicy> {
        if enabled {
            WriteVerifyPolicy::enabled(self.verify_tolerance, self.verify_max_iters)
        } else {
            Ok(WriteVerifyPolicy::default())
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search_config(Method::Ssa, 0.0).validate()?;
        self.store_config().validate()?;
        if self.code_dim == 0 || self.query_batch == 0 {
            return Err(Error::arg("code_dim and query_batch must be positive"));
        }
        self.verify_policy(true)?;
        self.tune_config(Tuning::Plain, &DeviceProfile::ideal(4)?, 0.0, 0)?.validate()
    }

    pub fn tune_config(&self, tuning: Tuning, profile: &DeviceProfile, sigma: f64, seed: u64) -> Result<TuneConfig> {
        let noise = match tuning {
            Tuning::NoiseAware => NoiseSpec::from_profile(profile, sigma, seed)?,
            Tuning::Plain => NoiseSpec::off(),
        };
        Ok(TuneConfig {
            steps: self.tune_steps,
            lr: self.tune_lr,
            num_tokens: self.prompt_tokens,
            init_std: self.init_std,
            noise,
            seed,
        })
    }
}

/// One configuration of the training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub buffer_size: usize,
    pub sigma: f64,
    pub tuning: Tuning,
    pub write_verify: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub buffer_size: usize,
    pub sigma: f64,
    pub method: Method,
    pub tuning: Tuning,
    pub write_verify: bool,
    pub seed: u64,
    pub profile: String,
    pub num_entries: usize,
    pub num_queries: usize,
    /// Fraction of queries whose retrieved prompt has the query's domain.
    pub retrieval_accuracy: f64,
    /// Surrogate accuracy with the retrieved prompt as read from the cells.
    pub surrogate_accuracy: f64,
    /// Same, with the retrieved prompt's exact encoded values.
    pub surrogate_accuracy_clean: f64,
    pub surrogate_drop: f64,
    pub mean_margin: f64,
    pub deviation_rms: f64,
    pub write_pulses: u64,
    pub counters: Counters,
    pub wall_time_ms: f64,
}

/// Store and models after the training stage.
#[derive(Debug, Clone)]
pub struct TrainedStore {
    pub store: PromptStore,
    pub prompts: Vec<EncodedPrompt>,
    pub autoencoder: LinearAutoencoder,
    pub task: SurrogateTask,
    pub selections: Vec<SelectionReport>,
    pub train_time_ms: f64,
}

fn token_corpus(samples: &[BufferedSample]) -> Option<Array2<f64>> {
    stack_rows(samples.iter().map(|s| s.embedding.view()))
}

/// Trains the autoencoder on the workload's pre-training samples.
pub fn pretrain_autoencoder(workload: &Workload, settings: &PipelineSettings, seed: u64) -> Result<LinearAutoencoder> {
    let corpus = token_corpus(&workload.pretrain)
        .or_else(|| token_corpus(&workload.stream))
        .ok_or_else(|| Error::arg("workload has no samples to pre-train on"))?;
    let cfg = AeTrainConfig {
        seed: stream(seed, streams::AUTOENCODER).random(),
        ..settings.ae_pretrain
    };
    Ok(train_autoencoder(&corpus.view(), settings.code_dim, &cfg)?.0)
}

/// Prompts produced by streaming a workload through the buffer.
#[derive(Debug, Clone)]
pub struct TunedPrompts {
    pub prompts: Vec<EncodedPrompt>,
    pub logs: Vec<TuneLog>,
    /// Autoencoder after the last leftover update.
    pub autoencoder: LinearAutoencoder,
    pub selections: Vec<SelectionReport>,
}

/// Streams samples through the buffer; on every fill, selects
/// representatives, tunes and encodes one prompt each, and updates the
/// autoencoder on the leftovers. `on_prompt` sees each prompt as it is made.
pub fn tune_stream(
    workload: &Workload,
    task: &SurrogateTask,
    profile: &DeviceProfile,
    settings: &PipelineSettings,
    point: &RunPoint,
    mut ae: LinearAutoencoder,
    mut on_prompt: impl FnMut(&EncodedPrompt) -> Result<()>,
) -> Result<TunedPrompts> {
    let mut buffer = DataBuffer::new(point.buffer_size, settings.selection)?;
    let mut seeds = stream(point.seed, streams::TUNE_INIT);
    let mut select_seeds = stream(point.seed, streams::SELECTION);
    let mut prompts = Vec::new();
    let mut logs = Vec::new();
    let mut selections = Vec::new();

    for sample in &workload.stream {
        buffer.push(sample.clone())?;
        if !buffer.is_full() {
            continue;
        }
        let selection = buffer.select_all(select_seeds.random())?;
        for rep in &selection.representatives {
            let cfg = settings.tune_config(point.tuning, profile, point.sigma, seeds.random())?;
            let (vts, log) = tune_prompt(rep, task, &cfg)?;
            let ep = encode(&vts, &ae)?;
            on_prompt(&ep)?;
            prompts.push(ep);
            logs.push(log);
        }
        if let Some(corpus) = token_corpus(&selection.leftovers) {
            let cfg = AeTrainConfig {
                seed: seeds.random(),
                ..settings.ae_update
            };
            ae.update(&corpus.view(), &cfg)?;
        }
        selections.push(selection.report);
    }
    if prompts.is_empty() {
        return Err(Error::state(format!(
            "buffer of size {} never filled: the stream has only {} samples, so no prompt was produced",
            point.buffer_size,
            workload.stream.len()
        )));
    }
    Ok(TunedPrompts {
        prompts,
        logs,
        autoencoder: ae,
        selections,
    })
}

/// Training mode: tune prompts from the stream and program each into the store.
pub fn train_store(
    workload: &Workload,
    profile: &DeviceProfile,
    settings: &PipelineSettings,
    point: &RunPoint,
    ae: LinearAutoencoder,
) -> Result<TrainedStore> {
    let start = Instant::now();
    let task = settings.task.build(workload, point.seed)?;
    let mut store = PromptStore::new(settings.store_config(), profile.clone())?;
    let policy = settings.verify_policy(point.write_verify)?;
    let mut program_rng = stream(point.seed, streams::PROGRAM);
    let tuned = tune_stream(workload, &task, profile, settings, point, ae, |ep| {
        store.program(ep, &policy, &mut program_rng).map(|_| ())
    })?;
    Ok(TrainedStore {
        store,
        prompts: tuned.prompts,
        autoencoder: tuned.autoencoder,
        task,
        selections: tuned.selections,
        train_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Encodes a query's tokens into the stored space.
pub fn encode_query(sample: &BufferedSample, ae: &LinearAutoencoder) -> Result<Array2<f64>> {
    let vts = VirtualTokenSet::new(sample.embedding.clone(), sample.id.clone(), sample.domain_tag)?;
    Ok(encode(&vts, ae)?.data.mapv(f64::from))
}

fn surrogate_hit(trained: &TrainedStore, stored: &ArrayView2<f64>, scale: f64, query: &BufferedSample) -> Result<bool> {
    let prompt = trained.autoencoder.decode_rows(&(stored * scale).view())?;
    let target = trained.task.target_for(query)?;
    Ok(trained.task.predict(&prompt.view(), &query.embedding.view())? == target)
}

/// Inference mode: retrieve a prompt for every held-out query.
pub fn evaluate(
    trained: &TrainedStore,
    workload: &Workload,
    settings: &PipelineSettings,
    point: &RunPoint,
    method: Method,
) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = settings.search_config(method, point.sigma);
    let queries = &workload.queries;
    if queries.is_empty() {
        return Err(Error::arg("workload has no queries"));
    }
    let encoded: Vec<Array2<f64>> = queries
        .iter()
        .map(|q| encode_query(q, &trained.autoencoder))
        .collect::<Result<_>>()?;

    let mut counters = Counters::default();
    let (mut hits, mut sur, mut sur_clean, mut margin_sum, mut margins) = (0usize, 0usize, 0usize, 0.0, 0usize);
    for (b, chunk) in encoded.chunks(settings.query_batch).enumerate() {
        let mut rng = stream(point.seed, streams::PER_ITEM_BASE + b as u64);
        let snapshot = trained.store.read_snapshot(&cfg, &mut rng)?;
        counters.add(snapshot.counters());
        let (results, c) = snapshot.retrieve_batch(chunk)?;
        counters.add(c);
        for (i, r) in results.iter().enumerate() {
            let query = &queries[b * settings.query_batch + i];
            if r.domain_tag == query.domain_tag {
                hits += 1;
            }
            if let Some(m) = r.margin {
                margin_sum += m;
                margins += 1;
            }
            let entry = &trained.store.entries()[r.entry];
            if surrogate_hit(trained, &snapshot.entry_values(r.entry).view(), entry.quant_scale, query)? {
                sur += 1;
            }
            let clean = trained.prompts[r.entry].data.mapv(f64::from);
            if surrogate_hit(trained, &clean.view(), entry.quant_scale, query)? {
                sur_clean += 1;
            }
        }
    }
    let n = queries.len() as f64;
    let surrogate_accuracy = sur as f64 / n;
    let surrogate_accuracy_clean = sur_clean as f64 / n;
    Ok(RunReport {
        buffer_size: point.buffer_size,
        sigma: point.sigma,
        method,
        tuning: point.tuning,
        write_verify: point.write_verify,
        seed: point.seed,
        profile: trained.store.profile().name.clone(),
        num_entries: trained.store.len(),
        num_queries: queries.len(),
        retrieval_accuracy: hits as f64 / n,
        surrogate_accuracy,
        surrogate_accuracy_clean,
        surrogate_drop: surrogate_accuracy_clean - surrogate_accuracy,
        mean_margin: if margins > 0 { margin_sum / margins as f64 } else { 0.0 },
        deviation_rms: trained.store.programmed_deviation_rms(),
        write_pulses: trained.store.write_pulses(),
        counters,
        wall_time_ms: trained.train_time_ms + start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Both modes end to end, one report per method. `ae` skips pre-training
/// when an autoencoder for this workload is already available.
pub fn run_pipeline(
    workload: &Workload,
    profile: &DeviceProfile,
    settings: &PipelineSettings,
    point: &RunPoint,
    methods: &[Method],
    ae: Option<&LinearAutoencoder>,
) -> Result<Vec<RunReport>> {
    settings.validate()?;
    let ae = match ae {
        Some(ae) => ae.clone(),
        None => pretrain_autoencoder(workload, settings, point.seed)?,
    };
    let trained = train_store(workload, profile, settings, point, ae)?;
    methods.iter().map(|&m| evaluate(&trained, workload, settings, point, m)).collect()
}
