use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedvox::dataset::{build_dataset, ingest_manifest, Dataset, IngestConfig};
use fedvox::features::FeatureConfig;
use fedvox::federation::write_history_jsonl;
use fedvox::harness::{rank_methods, run_grid, train_single, write_outputs, write_rank_csv, Better, GridConfig, Scheme, TaskCategory};
use fedvox::models::{build_model, ArchName, ArchSpec};
use fedvox::nn::save_checkpoint;
use fedvox::par::{self, Exec};
use fedvox::profiler::bench_inference;
use fedvox::synth::{spectral_oracle, synth_corpus, SynthSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version stamped into every provenance record.
const ARTIFACT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "fedvox", version, about = "Federated speech-based depression screening experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "FEDVOX_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true, env = "FEDVOX_SEED")]
    seed: Option<u64>,
    /// Root directory for all artifacts.
    #[arg(long, global = true, env = "FEDVOX_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true, env = "FEDVOX_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic interview corpus.
    Synth,
    /// Read the corpus and cut participant windows.
    Ingest,
    /// Turn windows into normalized log-spectrogram frames.
    Featurize,
    /// Train one centralized model on one CV fold.
    TrainCentral(TrainArgs),
    /// Train one federated model on one CV fold.
    TrainFed(FedArgs),
    /// Run the full task × arch × scheme cross-validation grid.
    Grid,
    /// Rank methods from the grid report or from a CSV of values.
    Rank(RankArgs),
    /// Measure per-frame inference latency and memory.
    Bench,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "combined")]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "rn18-lite")]
    arch: ArchArg,
    /// Validation fold.
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

#[derive(Args, Debug)]
struct FedArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_enum, default_value = "fedavg")]
    aggregator: AggArg,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// CSV with an `entry` column followed by one column per task.
    #[arg(long)]
    values: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "higher")]
    better: BetterArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Male,
    Female,
    Combined,
    Severity,
}

impl From<TaskArg> for TaskCategory {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Male => TaskCategory::Male,
            TaskArg::Female => TaskCategory::Female,
            TaskArg::Combined => TaskCategory::Combined,
            TaskArg::Severity => TaskCategory::Severity,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    #[value(name = "rn18-lite")]
    Rn18Lite,
    #[value(name = "gn-lite")]
    GnLite,
    #[value(name = "mnv2-lite")]
    Mnv2Lite,
}

impl From<ArchArg> for ArchName {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Rn18Lite => ArchName::Rn18Lite,
            ArchArg::GnLite => ArchName::GnLite,
            ArchArg::Mnv2Lite => ArchName::Mnv2Lite,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AggArg {
    Central,
    Fedavg,
    Fedma,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BetterArg {
    Higher,
    Lower,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchConfig {
    frames: usize,
    warmup: usize,
    reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { frames: 20, warmup: 3, reps: 3 }
    }
}

/// The whole configuration file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
    synth: SynthSpec,
    ingest: IngestConfig,
    features: FeatureConfig,
    grid: GridConfig,
    bench: BenchConfig,
}

/// Resolved run settings: flag > environment > file > default.
struct Run {
    cfg: Config,
    seed: u64,
    out: PathBuf,
    workers: usize,
}

impl Run {
    fn exec(&self) -> Exec {
        if self.workers == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    fn corpus(&self) -> PathBuf {
        self.out.join("corpus")
    }

    fn features(&self) -> PathBuf {
        self.out.join("features")
    }

    fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&self.cfg).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Effective grid settings (the master seed replaces the file's grid seed).
    fn grid(&self) -> GridConfig {
        GridConfig { seed: self.seed, ..self.cfg.grid.clone() }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Dependency(String),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Dependency(_) => 3,
        }
    }

    fn json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Usage(m) => ("usage".to_string(), m.clone()),
            Failure::Dependency(m) => ("dependency".to_string(), m.clone()),
            Failure::Run(e) => {
                let kind = e.downcast_ref::<fedvox::Error>().map_or("runtime", |c| c.kind()).to_string();
                (kind, format!("{e:#}"))
            }
        };
        serde_json::json!({ "error": kind, "message": message })
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<fedvox::Error>() {
            Some(fedvox::Error::MissingArtifact(m)) => Failure::Dependency(m.clone()),
            _ => Failure::Run(e),
        }
    }
}

impl From<fedvox::Error> for Failure {
    fn from(e: fedvox::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

fn require(path: &Path, produced_by: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Dependency(format!("missing artifact {} (run `fedvox {produced_by}` first)", path.display())))
    }
}

/// Provenance record written next to a command's outputs.
#[derive(Serialize)]
struct Provenance<'a> {
    version: u32,
    command: &'a str,
    config_hash: String,
    seed: u64,
    /// SHA-256 per output file, relative to the command's directory.
    artifacts: std::collections::BTreeMap<String, String>,
}

fn hash_tree(dir: &Path, root: &Path, out: &mut std::collections::BTreeMap<String, String>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            hash_tree(&p, root, out)?;
        } else if p.file_name().is_some_and(|n| n != "provenance.json") {
            let rel = p.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
            out.insert(rel, hex::encode(Sha256::digest(fs::read(&p)?)));
        }
    }
    Ok(())
}

fn write_provenance(run: &Run, command: &str, dir: &Path) -> anyhow::Result<()> {
    let mut artifacts = std::collections::BTreeMap::new();
    hash_tree(dir, dir, &mut artifacts)?;
    let record = Provenance { version: ARTIFACT_VERSION, command, config_hash: run.config_hash(), seed: run.seed, artifacts };
    fs::write(dir.join("provenance.json"), serde_json::to_vec_pretty(&record)?)?;
    Ok(())
}

fn check_version(dir: &Path) -> Result<(), Failure> {
    let path = dir.join("provenance.json");
    let Ok(bytes) = fs::read(&path) else {
        return Ok(());
    };
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Failure::Run(e.into()))?;
    match v.get("version").and_then(|x| x.as_u64()) {
        Some(x) if x == ARTIFACT_VERSION as u64 => Ok(()),
        other => Err(Failure::Dependency(format!("{} has artifact version {other:?}, expected {ARTIFACT_VERSION}", path.display()))),
    }
}

fn load_features(run: &Run) -> Result<Dataset, Failure> {
    let dir = run.features();
    require(&dir.join(Dataset::FRAMES_FILE), "featurize")?;
    check_version(&dir)?;
    Ok(Dataset::load(&dir)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(run: &Run) -> Result<(), Failure> {
    let dir = run.corpus();
    let entries = synth_corpus(&run.cfg.synth, run.seed, &dir, run.exec())?;
    let oracle = spectral_oracle(&dir.join("manifest.csv"), run.exec())?;
    write_json(&dir.join("oracle.json"), &oracle)?;
    write_provenance(run, "synth", &dir)?;
    println!("{} subjects written to {}; spectral oracle accuracy {:.3}", entries.len(), dir.display(), oracle.accuracy);
    Ok(())
}

fn cmd_ingest(run: &Run) -> Result<(), Failure> {
    let manifest = run.corpus().join("manifest.csv");
    require(&manifest, "synth")?;
    check_version(&run.corpus())?;
    let (subjects, stats) = ingest_manifest(&manifest, &run.cfg.ingest, run.exec())?;
    let dir = run.out.join("ingest");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    let summary: Vec<serde_json::Value> = subjects
        .iter()
        .map(|s| serde_json::json!({ "subject_id": s.subject.subject_id, "phq8": s.subject.phq8, "gender": s.subject.gender, "windows": s.windows.len() }))
        .collect();
    write_json(&dir.join("ingest.json"), &serde_json::json!({ "stats": stats, "subjects": summary }))?;
    write_provenance(run, "ingest", &dir)?;
    println!("{} clips, {} segments, {} windows", stats.clips, stats.segments, stats.windows);
    Ok(())
}

fn cmd_featurize(run: &Run) -> Result<(), Failure> {
    let ingest = run.out.join("ingest");
    require(&ingest.join("ingest.json"), "ingest")?;
    check_version(&ingest)?;
    let (ds, _) = build_dataset(&run.corpus().join("manifest.csv"), &run.cfg.ingest, &run.cfg.features, run.exec())?;
    let dir = run.features();
    ds.save(&dir)?;
    write_provenance(run, "featurize", &dir)?;
    println!("{} frames for {} subjects", ds.frames.len(), ds.subjects.len());
    Ok(())
}

fn cmd_train(run: &Run, args: &TrainArgs, scheme: Scheme, grid: GridConfig) -> Result<(), Failure> {
    let ds = load_features(run)?;
    let (task, arch) = (TaskCategory::from(args.task), ArchName::from(args.arch));
    let (model, fold) = train_single(&ds, &grid, task, arch, scheme, args.fold, run.exec())?;
    let dir = run.out.join("train").join(format!("{task}-{}-{scheme}", arch.as_str()));
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    fs::write(dir.join("model.ckpt"), save_checkpoint(&model.params, None)?).map_err(anyhow::Error::from)?;
    write_json(&dir.join("report.json"), &fold.report)?;
    write_json(&dir.join("timing.json"), &serde_json::json!({ "train_time_s": fold.train_time_s }))?;
    if let Some(h) = &fold.history {
        write_json(&dir.join("history.json"), h)?;
        write_history_jsonl(h, fs::File::create(dir.join("history.jsonl")).map_err(anyhow::Error::from)?)?;
    }
    write_provenance(run, scheme.as_str(), &dir)?;
    println!("{task}/{}/{scheme} fold {}: clip accuracy {:.3}, f1 {:.3}", arch.as_str(), args.fold, fold.report.clip.accuracy, fold.report.clip.f1);
    Ok(())
}

fn cmd_grid(run: &Run) -> Result<(), Failure> {
    let ds = load_features(run)?;
    let dir = run.out.join("grid");
    let outcome = run_grid(&ds, &run.grid(), Some(&dir), run.exec())?;
    write_outputs(&outcome, &dir)?;
    write_provenance(run, "grid", &dir)?;
    for c in &outcome.report.cells {
        println!("{:<9} {:<10} {:<7} accuracy {:.3} ± {:.3}", c.task.as_str(), c.arch.as_str(), c.scheme.as_str(), c.summary.accuracy.mean, c.summary.accuracy.sd);
    }
    Ok(())
}

fn print_table(t: &fedvox::harness::RankTable) {
    for (i, n) in t.names.iter().enumerate() {
        println!("{n:<10} sum {:>5} avg {:.2}", t.sums[i], t.averages[i]);
    }
}

fn cmd_rank(run: &Run, args: &RankArgs) -> Result<(), Failure> {
    let dir = run.out.join("rank");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    if let Some(path) = &args.values {
        require(path, "grid")?;
        let mut reader = csv::Reader::from_path(path).map_err(anyhow::Error::from)?;
        let headers = reader.headers().map_err(anyhow::Error::from)?.clone();
        let tasks: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let (mut names, mut values) = (Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(anyhow::Error::from)?;
            names.push(rec.get(0).unwrap_or_default().to_string());
            values.push(rec.iter().skip(1).map(|v| v.trim().parse::<f64>().unwrap_or(f64::NAN)).collect::<Vec<_>>());
        }
        let better = match args.better {
            BetterArg::Higher => Better::Higher,
            BetterArg::Lower => Better::Lower,
        };
        let table = rank_methods(&names, &tasks, &values, better)?;
        write_rank_csv(&table, &dir.join("ranks.csv"))?;
        write_json(&dir.join("ranks.json"), &table)?;
        print_table(&table);
    } else {
        let grid = run.out.join("grid");
        require(&grid.join("report.json"), "grid")?;
        require(&grid.join("timings.json"), "grid")?;
        check_version(&grid)?;
        let report: fedvox::harness::ExperimentReport = serde_json::from_slice(&fs::read(grid.join("report.json")).map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?;
        let timings: fedvox::harness::TimingReport = serde_json::from_slice(&fs::read(grid.join("timings.json")).map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?;
        let tables = [
            ("scheme_accuracy", report.scheme_accuracy_ranks),
            ("scheme_time", timings.scheme_time_ranks),
            ("network_accuracy", report.network_accuracy_ranks),
            ("network_time", timings.network_time_ranks),
        ];
        for (name, table) in tables {
            if let Some(t) = table {
                println!("[{name}]");
                print_table(&t);
                write_rank_csv(&t, &dir.join(format!("{name}.csv")))?;
                write_json(&dir.join(format!("{name}.json")), &t)?;
            }
        }
    }
    write_provenance(run, "rank", &dir)?;
    Ok(())
}

fn cmd_bench(run: &Run) -> Result<(), Failure> {
    let ds = load_features(run)?;
    let b = &run.cfg.bench;
    let frames: Vec<_> = ds.frames.iter().step_by((ds.frames.len() / b.frames.max(1)).max(1)).take(b.frames).cloned().collect();
    let mut results = Vec::new();
    for arch in ArchName::ALL {
        let model = build_model(&ArchSpec::default_for(arch), run.seed)?;
        // Timing runs on one thread regardless of --workers.
        let r = par::with_workers(1, || bench_inference(&model, &frames, b.warmup, b.reps))?;
        println!("{:<10} mean {:.2} ms  p95 {:.2} ms  params {} B  activations {} B", r.model, r.mean_ms, r.p95_ms, r.param_bytes, r.peak_activation_bytes);
        results.push(r);
    }
    let dir = run.out.join("bench");
    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
    write_json(&dir.join("bench.json"), &results)?;
    write_provenance(run, "bench", &dir)?;
    Ok(())
}

fn resolve(cli: &Cli) -> Result<Run, Failure> {
    let cfg: Config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Dependency(format!("config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(42);
    let out = cli.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let workers = cli.workers.or(cfg.workers).unwrap_or(0);
    Ok(Run { cfg, seed, out, workers })
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let run = resolve(cli)?;
    fs::create_dir_all(&run.out).map_err(anyhow::Error::from)?;
    par::with_workers(run.workers, || match &cli.command {
        Command::Synth => cmd_synth(&run),
        Command::Ingest => cmd_ingest(&run),
        Command::Featurize => cmd_featurize(&run),
        Command::TrainCentral(a) => cmd_train(&run, a, Scheme::Central, run.grid()),
        Command::TrainFed(a) => {
            let mut grid = run.grid();
            if let Some(c) = a.clients {
                grid.federation.n_clients = c;
            }
            if let Some(e) = a.local_epochs {
                grid.federation.local_epochs = e;
            }
            let scheme = match a.aggregator {
                AggArg::Central => Scheme::Central,
                AggArg::Fedavg => Scheme::FedAvg,
                AggArg::Fedma => Scheme::FedMa,
            };
            cmd_train(&run, &a.train, scheme, grid)
        }
        Command::Grid => cmd_grid(&run),
        Command::Rank(a) => cmd_rank(&run, a),
        Command::Bench => cmd_bench(&run),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::Usage(e.to_string().trim().to_string());
            eprintln!("{}", f.json());
            return ExitCode::from(f.code());
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.json());
            ExitCode::from(f.code())
        }
    }
}
