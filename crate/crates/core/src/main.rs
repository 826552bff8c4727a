use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use nvcim::device::resolve_profile;
use nvcim::harness::{
    encode_query, format_table, gen_workload, pretrain_autoencoder, read_csv, spearman, summarize, sweep, tune_stream,
    write_csv, Method, RunConfig, RunPoint, Tuning, Workload,
};
use nvcim::codec::{EncodedPrompt, LinearAutoencoder};
use nvcim::rng::{stream, streams};
use nvcim::store::PromptStore;
use nvcim::tuning::SurrogateTask;
use nvcim::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "nvcim", version, about = "Soft-prompt storage and retrieval on simulated NVM crossbars")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Global {
    /// Working directory shared by every step.
    #[arg(long, global = true, default_value = "nvcim-out")]
    out: PathBuf,
    /// JSON run configuration; defaults to `<out>/config.json` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed.
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Built-in profile (nvm-1 .. nvm-5) or a profile JSON file.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Relative device variation; a list for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    buffer_sizes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    write_verify: Option<Toggle>,
    #[arg(long, global = true)]
    method: Option<MethodArg>,
    #[arg(long, global = true)]
    noise_aware: Option<Toggle>,
    /// Keep only the largest cluster's representative on each buffer fill.
    #[arg(long, global = true)]
    largest_cluster_only: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
    Both,
}

impl Toggle {
    fn values(self) -> Vec<bool> {
        match self {
            Toggle::On => vec![true],
            Toggle::Off => vec![false],
            Toggle::Both => vec![true, false],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Ssa,
    Mips,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic workload.
    Gen,
    /// Stream the workload through the buffer and tune prompts.
    Tune,
    /// Program the tuned prompts into a crossbar store.
    Store,
    /// Retrieve a prompt for one held-out query.
    Query {
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run the full experiment grid.
    Sweep,
    /// Summarize a sweep CSV.
    Report {
        /// Defaults to `<out>/sweep.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let path = match &g.config {
        Some(p) => Some(p.clone()),
        None => Some(g.out.join("config.json")).filter(|p| p.exists()),
    };
    let mut cfg: RunConfig = match path {
        Some(p) => serde_json::from_slice(&fs::read(&p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &g.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(p) = &g.profile {
        cfg.profile = p.clone();
    }
    if let Some(s) = &g.sigma {
        cfg.sigmas = s.clone();
    }
    if let Some(s) = &g.scales {
        cfg.settings.scales = s.clone();
    }
    if let Some(w) = &g.weights {
        cfg.settings.weights = w.clone();
    }
    if let Some(b) = &g.buffer_sizes {
        cfg.buffer_sizes = b.clone();
    }
    if let Some(t) = g.write_verify {
        cfg.write_verify = t.values();
    }
    if let Some(t) = g.noise_aware {
        cfg.tunings = t
            .values()
            .into_iter()
            .map(|on| if on { Tuning::NoiseAware } else { Tuning::Plain })
            .collect();
    }
    if let Some(m) = g.method {
        cfg.methods = match m {
            MethodArg::Ssa => vec![Method::Ssa],
            MethodArg::Mips => vec![Method::Mips],
            MethodArg::Both => vec![Method::Ssa, Method::Mips],
        };
    }
    if g.largest_cluster_only {
        cfg.settings.selection.largest_cluster_only = true;
    }
    cfg.validate()?;
    resolve_profile(&cfg.profile)?;
    Ok(cfg)
}

/// Single-run commands use the first value of every axis.
fn first_point(cfg: &RunConfig) -> RunPoint {
    RunPoint {
        buffer_size: cfg.buffer_sizes[0],
        sigma: cfg.sigmas[0],
        tuning: cfg.tunings[0],
        write_verify: cfg.write_verify[0],
        seed: cfg.seeds[0],
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn require(path: &Path, step: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::State(format!("{} is missing; run `{step}` first", path.display())))
    }
}

fn load_workload(out: &Path) -> Result<Workload> {
    require(&out.join("workload.json"), "gen")?;
    Workload::load(out)
}

fn cmd_gen(out: &Path, cfg: &RunConfig) -> Result<()> {
    let point = first_point(cfg);
    let workload = gen_workload(&cfg.workload_for(point.seed))?;
    workload.save(out)?;
    let task = cfg.settings.task.build(&workload, point.seed)?;
    fs::write(out.join("task.json"), task.to_json()?)?;
    write_json(&out.join("config.json"), cfg)?;
    println!(
        "wrote {} stream samples, {} queries, {} pre-training samples to {}",
        workload.stream.len(),
        workload.queries.len(),
        workload.pretrain.len(),
        out.display()
    );
    Ok(())
}

fn cmd_tune(out: &Path, cfg: &RunConfig) -> Result<()> {
    let workload = load_workload(out)?;
    require(&out.join("task.json"), "gen")?;
    let task = SurrogateTask::from_json(&fs::read_to_string(out.join("task.json"))?)?;
    let profile = resolve_profile(&cfg.profile)?;
    let point = first_point(cfg);
    let ae = pretrain_autoencoder(&workload, &cfg.settings, point.seed)?;

    let prompt_dir = out.join("prompts");
    let log_dir = out.join("tune_logs");
    for dir in [&prompt_dir, &log_dir] {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::create_dir_all(dir)?;
    }
    let mut n = 0usize;
    let tuned = tune_stream(&workload, &task, &profile, &cfg.settings, &point, ae, |ep| {
        ep.save(&prompt_dir, &format!("{n:03}"))?;
        n += 1;
        Ok(())
    })?;
    for (i, log) in tuned.logs.iter().enumerate() {
        log.write_csv(fs::File::create(log_dir.join(format!("{i:03}.csv")))?)?;
    }
    tuned.autoencoder.save(&out.join("autoencoder.nvpt"))?;
    write_json(&out.join("selections.json"), &tuned.selections)?;
    write_json(&out.join("point.json"), &point)?;
    write_json(&out.join("config.json"), cfg)?;
    let mean_final = tuned.logs.iter().map(|l| l.last()).sum::<f64>() / tuned.logs.len() as f64;
    println!(
        "tuned {} prompts over {} buffer fills, mean final loss {:.4}",
        tuned.prompts.len(),
        tuned.selections.len(),
        mean_final
    );
    Ok(())
}

fn load_prompts(out: &Path) -> Result<Vec<EncodedPrompt>> {
    let dir = out.join("prompts");
    require(&dir, "tune")?;
    let mut stems: Vec<String> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".json").map(str::to_string)
        })
        .collect();
    stems.sort();
    stems.iter().map(|s| EncodedPrompt::load(&dir, s)).collect()
}

fn cmd_store(out: &Path, cfg: &RunConfig) -> Result<()> {
    require(&out.join("point.json"), "tune")?;
    let mut point: RunPoint = serde_json::from_slice(&fs::read(out.join("point.json"))?)?;
    point.write_verify = cfg.write_verify[0];
    let prompts = load_prompts(out)?;
    let profile = resolve_profile(&cfg.profile)?;
    let mut store = PromptStore::new(cfg.settings.store_config(), profile)?;
    let policy = cfg.settings.verify_policy(point.write_verify)?;
    let mut rng = stream(point.seed, streams::PROGRAM);
    for ep in &prompts {
        store.program(ep, &policy, &mut rng)?;
    }
    let search = cfg.settings.search_config(cfg.methods[0], cfg.sigmas[0]);
    store.save(&out.join("store"), &search)?;
    write_json(&out.join("point.json"), &point)?;
    write_json(&out.join("config.json"), cfg)?;
    println!(
        "programmed {} prompts into {} subarrays, {} write pulses, deviation rms {:.6}",
        store.len(),
        store.subarrays().len(),
        store.write_pulses(),
        store.programmed_deviation_rms()
    );
    Ok(())
}

fn cmd_query(out: &Path, cfg: &RunConfig, index: usize) -> Result<()> {
    let workload = load_workload(out)?;
    require(&out.join("store").join("manifest.json"), "store")?;
    let (store, _) = PromptStore::load(&out.join("store"))?;
    let ae = LinearAutoencoder::load(&out.join("autoencoder.nvpt"))?;
    let task = SurrogateTask::from_json(&fs::read_to_string(out.join("task.json"))?)?;
    let query = workload.queries.get(index).ok_or_else(|| {
        Error::Argument(format!("query index {index} out of range (workload has {})", workload.queries.len()))
    })?;
    let method = cfg.methods[0];
    let search = cfg.settings.search_config(method, cfg.sigmas[0]);
    let mut rng = stream(cfg.seeds[0], streams::PER_ITEM_BASE + index as u64);
    let snapshot = store.read_snapshot(&search, &mut rng)?;
    let (r, c) = snapshot.retrieve(&encode_query(query, &ae)?.view())?;
    let mut counters = snapshot.counters();
    counters.add(c);
    let entry = &store.entries()[r.entry];
    let prompt = ae.decode_rows(&(snapshot.entry_values(r.entry) * entry.quant_scale).view())?;
    let predicted = task.predict(&prompt.view(), &query.embedding.view())?;
    let target = task.target_for(query)?;
    let report = json!({
        "query": query.id,
        "query_domain": query.domain_tag,
        "method": method,
        "sigma": search.variation.global_sigma,
        "entry": r.entry,
        "source_id": r.source_id,
        "domain_tag": r.domain_tag,
        "score": r.score,
        "margin": r.margin,
        "domain_match": r.domain_tag == query.domain_tag,
        "predicted_class": predicted,
        "target_class": target,
        "counters": counters,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_sweep(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    let rows = sweep(cfg)?;
    write_csv(fs::File::create(out.join("sweep.csv"))?, &rows)?;
    write_json(&out.join("sweep.json"), &rows)?;
    write_json(&out.join("config.json"), cfg)?;
    let csv_rows = read_csv(fs::File::open(out.join("sweep.csv"))?)?;
    print!("{}", format_table(&summarize(&csv_rows)));
    println!("wrote {} rows to {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn cmd_report(out: &Path, input: Option<PathBuf>) -> Result<()> {
    let path = input.unwrap_or_else(|| out.join("sweep.csv"));
    let rows = read_csv(fs::File::open(&path)?)?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{} has no rows", path.display())));
    }
    let summary = summarize(&rows);
    print!("{}", format_table(&summary));
    println!();
    println!("{:>6} {:>6} {:>12} {:>3} {:>9}", "buffer", "method", "tuning", "wv", "rho_sigma");
    let mut series: Vec<(usize, Method, Tuning, bool)> = summary
        .iter()
        .map(|r| (r.buffer_size, r.method, r.tuning, r.write_verify))
        .collect();
    series.dedup();
    for (b, m, t, wv) in series {
        let pts: Vec<_> = summary
            .iter()
            .filter(|r| (r.buffer_size, r.method, r.tuning, r.write_verify) == (b, m, t, wv))
            .collect();
        let sigmas: Vec<f64> = pts.iter().map(|r| r.sigma).collect();
        let acc: Vec<f64> = pts.iter().map(|r| r.retrieval_accuracy).collect();
        println!(
            "{:>6} {:>6} {:>12} {:>3} {:>9.3}",
            b,
            m.as_str(),
            t.as_str(),
            if wv { "on" } else { "off" },
            spearman(&sigmas, &acc)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.global.out.clone();
    if let Command::Report { input } = cli.command {
        return cmd_report(&out, input);
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Gen => {
            fs::create_dir_all(&out)?;
            cmd_gen(&out, &cfg)
        }
        Command::Tune => cmd_tune(&out, &cfg),
        Command::Store => cmd_store(&out, &cfg),
        Command::Query { index } => cmd_query(&out, &cfg, index),
        Command::Sweep => cmd_sweep(&out, &cfg),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
