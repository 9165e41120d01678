use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cv::{check_leakage, stratified_kfold, Fold};
use super::metrics::{compute_metrics, Metrics};
use super::rank::{rank_methods, Better, RankTable};
use crate::audio::Gender;
use crate::dataset::{Dataset, Subject, SEVERITY_CUTOFF};
use crate::error::{Error, Result};
use crate::federation::{partition_dataset, run_federated_training, write_history_jsonl, Aggregator, RoundConfig, RoundRecord};
use crate::models::{majority_vote, ArchName, ArchSpec, Model, TransferMode};
use crate::nn::ParamSet;
use crate::par::Exec;
use crate::seed;
use crate::train::{evaluate, fit, fold_init, prepare_model, FrameInputs, PretextConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Male,
    Female,
    Combined,
    Severity,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [TaskCategory::Male, TaskCategory::Female, TaskCategory::Combined, TaskCategory::Severity];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::Male => "male",
            TaskCategory::Female => "female",
            TaskCategory::Combined => "combined",
            TaskCategory::Severity => "severity",
        }
    }

    pub fn includes(self, s: &Subject) -> bool {
        match self {
            TaskCategory::Male => s.gender == Gender::Male,
            TaskCategory::Female => s.gender == Gender::Female,
            TaskCategory::Combined | TaskCategory::Severity => true,
        }
    }

    /// Class 1 is the positive class: depression, or high severity.
    pub fn label(self, s: &Subject) -> usize {
        match self {
            TaskCategory::Severity => (s.phq8 >= SEVERITY_CUTOFF) as usize,
            _ => s.depressed() as usize,
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Central,
    FedAvg,
    FedMa,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Central, Scheme::FedAvg, Scheme::FedMa];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Central => "central",
            Scheme::FedAvg => "fedavg",
            Scheme::FedMa => "fedma",
        }
    }

    fn aggregator(self) -> Option<Aggregator> {
        match self {
            Scheme::Central => None,
            Scheme::FedAvg => Some(Aggregator::FedAvg),
            Scheme::FedMa => Some(Aggregator::FedMa),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub tasks: Vec<TaskCategory>,
    pub archs: Vec<ArchName>,
    pub schemes: Vec<Scheme>,
    pub folds: usize,
    pub seed: u64,
    pub transfer: TransferMode,
    pub train: TrainConfig,
    pub federation: RoundConfig,
    pub pretext: PretextConfig,
    /// Reuse per-cell results already on disk from a run with the same config.
    pub resume: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tasks: TaskCategory::ALL.to_vec(),
            archs: ArchName::ALL.to_vec(),
            schemes: Scheme::ALL.to_vec(),
            folds: 5,
            seed: 2024,
            transfer: TransferMode::FreezeBackbone,
            train: TrainConfig::default(),
            federation: RoundConfig::default(),
            pretext: PretextConfig::default(),
            resume: false,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.archs.is_empty() || self.schemes.is_empty() {
            return Err(Error::Config("grid needs at least one task, arch and scheme".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        self.train.validate()?;
        self.federation.validate()
    }

    /// Hex SHA-256 of the canonical JSON form; identifies compatible cell files.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.resume = false;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Metrics of one validation fold. Clip metrics come from majority votes
/// over each validation subject's frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub clip: Metrics,
    pub frame: Metrics,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        MeanSd { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub accuracy: MeanSd,
    pub f1: MeanSd,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub frame_accuracy: MeanSd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task: TaskCategory,
    pub arch: ArchName,
    pub scheme: Scheme,
    pub folds: Vec<FoldReport>,
    pub summary: CellSummary,
}

impl CellReport {
    pub fn key(&self) -> String {
        cell_key(self.task, self.arch, self.scheme)
    }
}

fn cell_key(task: TaskCategory, arch: ArchName, scheme: Scheme) -> String {
    format!("{task}-{arch}-{scheme}", arch = arch.as_str())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub task: TaskCategory,
    pub arch: ArchName,
    pub scheme: Scheme,
    pub fold_train_time_s: Vec<f64>,
    pub mean_train_time_s: f64,
}

/// Reproducible part of a grid run: bit-identical for a fixed config and data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_fingerprint: String,
    pub cells: Vec<CellReport>,
    /// Schemes ranked per task × arch on mean clip accuracy.
    pub scheme_accuracy_ranks: Option<RankTable>,
    /// Networks ranked per task on centralized mean clip accuracy.
    pub network_accuracy_ranks: Option<RankTable>,
}

/// Wall-clock part of a grid run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub cells: Vec<CellTiming>,
    pub scheme_time_ranks: Option<RankTable>,
    pub network_time_ranks: Option<RankTable>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub report: ExperimentReport,
    pub timings: TimingReport,
}

/// What a cell file holds.
#[derive(Serialize, Deserialize)]
struct CellFile {
    config_fingerprint: String,
    report: CellReport,
    timing: CellTiming,
}

/// Subject subset, labels and folds of one task.
struct TaskSplit {
    /// Dataset subject indices in the task.
    members: Vec<usize>,
    /// Folds over global subject indices.
    folds: Vec<Fold>,
    /// Label per dataset subject (0 for subjects outside the task).
    subject_labels: Vec<usize>,
    frame_labels: Vec<usize>,
}

fn split_task(ds: &Dataset, task: TaskCategory, k: usize, master: u64, frame_subject: &[usize], frames_of: &[Vec<usize>]) -> Result<TaskSplit> {
    let members: Vec<usize> = (0..ds.subjects.len()).filter(|&s| task.includes(&ds.subjects[s])).collect();
    let local_labels: Vec<usize> = members.iter().map(|&s| task.label(&ds.subjects[s])).collect();
    let local = stratified_kfold(&local_labels, k, seed::derive(master, task.as_str(), 0))?;
    // Leakage law over the task's own subject numbering.
    let mut local_of = vec![usize::MAX; ds.subjects.len()];
    for (i, &s) in members.iter().enumerate() {
        local_of[s] = i;
    }
    let local_frame_subject: Vec<usize> = frame_subject.iter().map(|&s| local_of[s]).collect();
    let train_frames: Vec<Vec<usize>> = local.iter().map(|f| f.train.iter().flat_map(|&i| frames_of[members[i]].iter().copied()).collect()).collect();
    check_leakage(&local, members.len(), &local_frame_subject, &train_frames)?;

    let folds = local
        .iter()
        .map(|f| Fold { train: f.train.iter().map(|&i| members[i]).collect(), val: f.val.iter().map(|&i| members[i]).collect() })
        .collect();
    let subject_labels: Vec<usize> = ds.subjects.iter().map(|s| if task.includes(s) { task.label(s) } else { 0 }).collect();
    let frame_labels = frame_subject.iter().map(|&s| subject_labels[s]).collect();
    Ok(TaskSplit { members, folds, subject_labels, frame_labels })
}

struct ArchContext {
    model: Model,
    inputs: FrameInputs<'static>,
}

/// Everything a single fold run needs.
struct FoldJob<'a> {
    ctx: &'a ArchContext,
    split: &'a TaskSplit,
    fold: usize,
    frame_subject: &'a [usize],
    frames_of: &'a [Vec<usize>],
}

/// A trained fold: the validation report, the chosen parameters and, for
/// federated schemes, the round history.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub report: FoldReport,
    pub train_time_s: f64,
    pub params: ParamSet<f32>,
    pub history: Option<Vec<RoundRecord>>,
}

fn run_fold(job: &FoldJob, scheme: Scheme, cfg: &GridConfig, cell: &str, exec: Exec) -> Result<FoldRun> {
    let f = &job.split.folds[job.fold];
    let train_idx: Vec<usize> = f.train.iter().flat_map(|&s| job.frames_of[s].iter().copied()).collect();
    let val_idx: Vec<usize> = f.val.iter().flat_map(|&s| job.frames_of[s].iter().copied()).collect();
    let model = &job.ctx.model;
    let labels = &job.split.frame_labels;
    // Same seed for every scheme of a task × arch × fold.
    let run_seed = seed::derive(cfg.seed, cell.rsplit_once('-').map_or(cell, |p| p.0), job.fold as u64);
    let init = fold_init(model, &job.ctx.inputs, &train_idx)?;
    let (params, time, epochs_run, early_stopped, history) = match scheme.aggregator() {
        None => {
            let o = fit(&model.net, &init, &job.ctx.inputs, &train_idx, &val_idx, labels, &cfg.train, run_seed, exec)?;
            (o.params, o.train_time_s, o.epochs_run, o.early_stopped, None)
        }
        Some(aggregator) => {
            let rc = RoundConfig { aggregator, ..cfg.federation.clone() };
            let shards = partition_dataset(&f.train, &job.split.subject_labels, job.frame_subject, rc.n_clients, rc.partition, run_seed)?;
            let o = run_federated_training(&model.net, &init, &model.plan, &job.ctx.inputs, labels, &shards, &val_idx, &rc, &cfg.train, run_seed, exec)?;
            (o.params, o.train_time_s, o.rounds_run, o.early_stopped, Some(o.history))
        }
    };
    let (_, frame_pred) = evaluate(&model.net, &params, &job.ctx.inputs, &val_idx, labels, exec)?;
    let frame_truth: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();
    let mut clip_pred = Vec::with_capacity(f.val.len());
    let mut at = 0;
    for &s in &f.val {
        let n = job.frames_of[s].len();
        clip_pred.push(majority_vote(frame_pred[at..at + n].to_vec(), model.net.num_classes)?.label);
        at += n;
    }
    let clip_truth: Vec<usize> = f.val.iter().map(|&s| job.split.subject_labels[s]).collect();
    let report = FoldReport {
        fold: job.fold,
        clip: compute_metrics(&clip_pred, &clip_truth)?,
        frame: compute_metrics(&frame_pred, &frame_truth)?,
        epochs_run,
        early_stopped,
    };
    Ok(FoldRun { report, train_time_s: time, params, history })
}

fn frame_index(ds: &Dataset) -> (Vec<usize>, Vec<Vec<usize>>) {
    let frame_subject = ds.frame_subjects();
    let mut frames_of = vec![Vec::new(); ds.subjects.len()];
    for (f, &s) in frame_subject.iter().enumerate() {
        frames_of[s].push(f);
    }
    (frame_subject, frames_of)
}

/// The subject-level folds the grid uses for `task`, in dataset subject
/// numbering. Fails if the split leaks.
pub fn task_folds(ds: &Dataset, cfg: &GridConfig, task: TaskCategory) -> Result<Vec<Fold>> {
    let (frame_subject, frames_of) = frame_index(ds);
    Ok(split_task(ds, task, cfg.folds, cfg.seed, &frame_subject, &frames_of)?.folds)
}

/// Trains one fold of one task × arch × scheme cell, exactly as the grid
/// does, and returns the task model carrying the trained parameters.
pub fn train_single(ds: &Dataset, cfg: &GridConfig, task: TaskCategory, arch: ArchName, scheme: Scheme, fold: usize, exec: Exec) -> Result<(Model, FoldRun)> {
    cfg.validate()?;
    ds.validate()?;
    if fold >= cfg.folds {
        return Err(Error::Config(format!("fold {fold} out of {}", cfg.folds)));
    }
    let (frame_subject, frames_of) = frame_index(ds);
    let split = split_task(ds, task, cfg.folds, cfg.seed, &frame_subject, &frames_of)?;
    let ctx = arch_context(ds, arch, cfg, exec)?;
    let job = FoldJob { ctx: &ctx, split: &split, fold, frame_subject: &frame_subject, frames_of: &frames_of };
    let run = run_fold(&job, scheme, cfg, &cell_key(task, arch, scheme), exec)?;
    let mut model = ctx.model;
    model.params = run.params.clone();
    Ok((model, run))
}

fn summarize(folds: &[FoldReport]) -> CellSummary {
    let get = |f: fn(&FoldReport) -> f64| MeanSd::of(&folds.iter().map(f).collect::<Vec<_>>());
    CellSummary {
        accuracy: get(|f| f.clip.accuracy),
        f1: get(|f| f.clip.f1),
        precision: get(|f| f.clip.precision),
        recall: get(|f| f.clip.recall),
        frame_accuracy: get(|f| f.frame.accuracy),
    }
}

/// Runs every task × arch × scheme cell with k-fold CV. With `out_dir`,
/// each finished cell is written to `cells/` and federated round histories
/// to `history/`.
pub fn run_grid(ds: &Dataset, cfg: &GridConfig, out_dir: Option<&Path>, exec: Exec) -> Result<GridOutcome> {
    cfg.validate()?;
    ds.validate()?;
    let fingerprint = cfg.fingerprint();
    let dirs = match out_dir {
        Some(d) => {
            let cells = d.join("cells");
            let history = d.join("history");
            fs::create_dir_all(&cells)?;
            fs::create_dir_all(&history)?;
            Some((cells, history))
        }
        None => None,
    };
    let (frame_subject, frames_of) = frame_index(ds);
    let splits = cfg
        .tasks
        .iter()
        .map(|&t| split_task(ds, t, cfg.folds, cfg.seed, &frame_subject, &frames_of))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut timings = Vec::new();
    for &arch in &cfg.archs {
        let mut ctx: Option<ArchContext> = None;
        for (&task, split) in cfg.tasks.iter().zip(&splits) {
            for &scheme in &cfg.schemes {
                let key = cell_key(task, arch, scheme);
                let path: Option<PathBuf> = dirs.as_ref().map(|(c, _)| c.join(format!("{key}.json")));
                if let Some(p) = path.as_ref().filter(|p| cfg.resume && p.exists()) {
                    let file: CellFile = serde_json::from_slice(&fs::read(p)?)?;
                    if file.config_fingerprint == fingerprint {
                        log::info!("{key}: reusing stored result");
                        cells.push(file.report);
                        timings.push(file.timing);
                        continue;
                    }
                }
                if ctx.is_none() {
                    ctx = Some(arch_context(ds, arch, cfg, exec)?);
                }
                let ctx = ctx.as_ref().expect("initialized above");
                let mut folds = Vec::new();
                let mut times = Vec::new();
                for fold in 0..cfg.folds {
                    let job = FoldJob { ctx, split, fold, frame_subject: &frame_subject, frames_of: &frames_of };
                    let run = run_fold(&job, scheme, cfg, &key, exec)?;
                    if let (Some((_, dir)), Some(h)) = (&dirs, &run.history) {
                        let file = fs::File::create(dir.join(format!("{key}-fold{fold}.jsonl")))?;
                        write_history_jsonl(h, std::io::BufWriter::new(file))?;
                    }
                    folds.push(run.report);
                    times.push(run.train_time_s);
                }
                let report = CellReport { task, arch, scheme, summary: summarize(&folds), folds };
                let timing = CellTiming {
                    task,
                    arch,
                    scheme,
                    mean_train_time_s: times.iter().sum::<f64>() / times.len() as f64,
                    fold_train_time_s: times,
                };
                log::info!("{key}: clip accuracy {:.3} ({} subjects)", report.summary.accuracy.mean, split.members.len());
                if let Some(p) = &path {
                    let file = CellFile { config_fingerprint: fingerprint.clone(), report: report.clone(), timing: timing.clone() };
                    fs::write(p, serde_json::to_vec_pretty(&file)?)?;
                }
                cells.push(report);
                timings.push(timing);
            }
        }
    }

    let acc = |c: &CellReport| c.summary.accuracy.mean;
    let report = ExperimentReport {
        config_fingerprint: fingerprint,
        scheme_accuracy_ranks: scheme_ranks(cfg, &cells, |c| (c.task, c.arch, c.scheme), acc, Better::Higher)?,
        network_accuracy_ranks: network_ranks(cfg, &cells, |c| (c.task, c.arch, c.scheme), acc, Better::Higher)?,
        cells,
    };
    let time = |c: &CellTiming| c.mean_train_time_s;
    let timings = TimingReport {
        scheme_time_ranks: scheme_ranks(cfg, &timings, |c| (c.task, c.arch, c.scheme), time, Better::Lower)?,
        network_time_ranks: network_ranks(cfg, &timings, |c| (c.task, c.arch, c.scheme), time, Better::Lower)?,
        cells: timings,
    };
    Ok(GridOutcome { report, timings })
}

fn arch_context(ds: &Dataset, arch: ArchName, cfg: &GridConfig, exec: Exec) -> Result<ArchContext> {
    let spec = ArchSpec::default_for(arch);
    let mut model = prepare_model(&spec, &cfg.pretext, seed::derive(cfg.seed, arch.as_str(), 0), exec)?;
    let inputs = match cfg.transfer {
        TransferMode::FreezeBackbone => FrameInputs::embed(&model, &ds.frames, &cfg.train, seed::derive(cfg.seed, "views", 0), exec)?,
        TransferMode::FullFinetune => {
            model.set_transfer_mode(TransferMode::FullFinetune);
            FrameInputs::owned_pixels(ds.frames.clone(), cfg.train.augment.clone())
        }
    };
    Ok(ArchContext { model, inputs })
}

type CellId = (TaskCategory, ArchName, Scheme);

fn lookup<T>(items: &[T], id: impl Fn(&T) -> CellId, want: CellId) -> Option<&T> {
    items.iter().find(|c| id(c) == want)
}

/// Schemes ranked within each task × arch combination.
fn scheme_ranks<T>(cfg: &GridConfig, items: &[T], id: impl Fn(&T) -> CellId + Copy, value: impl Fn(&T) -> f64, better: Better) -> Result<Option<RankTable>> {
    if cfg.schemes.len() < 2 {
        return Ok(None);
    }
    let mut tasks = Vec::new();
    let mut values = vec![Vec::new(); cfg.schemes.len()];
    for &task in &cfg.tasks {
        for &arch in &cfg.archs {
            tasks.push(format!("{task}/{}", arch.as_str()));
            for (row, &scheme) in values.iter_mut().zip(&cfg.schemes) {
                row.push(lookup(items, id, (task, arch, scheme)).map_or(f64::NAN, &value));
            }
        }
    }
    let names: Vec<String> = cfg.schemes.iter().map(|s| s.to_string()).collect();
    rank_methods(&names, &tasks, &values, better).map(Some)
}

/// Networks ranked within each task, using the centralized cells.
fn network_ranks<T>(cfg: &GridConfig, items: &[T], id: impl Fn(&T) -> CellId + Copy, value: impl Fn(&T) -> f64, better: Better) -> Result<Option<RankTable>> {
    if cfg.archs.len() < 2 || !cfg.schemes.contains(&Scheme::Central) {
        return Ok(None);
    }
    let tasks: Vec<String> = cfg.tasks.iter().map(|t| t.to_string()).collect();
    let values: Vec<Vec<f64>> = cfg
        .archs
        .iter()
        .map(|&arch| cfg.tasks.iter().map(|&task| lookup(items, id, (task, arch, Scheme::Central)).map_or(f64::NAN, &value)).collect())
        .collect();
    let names: Vec<String> = cfg.archs.iter().map(|a| a.as_str().to_string()).collect();
    rank_methods(&names, &tasks, &values, better).map(Some)
}

/// Writes `report.json`, `timings.json` and the CSV tables into `dir`.
pub fn write_outputs(outcome: &GridOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&outcome.report)?)?;
    fs::write(dir.join("timings.json"), serde_json::to_vec_pretty(&outcome.timings)?)?;

    let mut w = csv::Writer::from_path(dir.join("accuracy.csv"))?;
    w.write_record(["task", "arch", "scheme", "accuracy_mean", "accuracy_sd", "f1_mean", "precision_mean", "recall_mean", "frame_accuracy_mean"])?;
    for c in &outcome.report.cells {
        let s = &c.summary;
        w.write_record([
            c.task.to_string(),
            c.arch.as_str().into(),
            c.scheme.to_string(),
            format!("{:.6}", s.accuracy.mean),
            format!("{:.6}", s.accuracy.sd),
            format!("{:.6}", s.f1.mean),
            format!("{:.6}", s.precision.mean),
            format!("{:.6}", s.recall.mean),
            format!("{:.6}", s.frame_accuracy.mean),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("train_time.csv"))?;
    w.write_record(["task", "arch", "scheme", "mean_train_time_s"])?;
    for c in &outcome.timings.cells {
        w.write_record([c.task.to_string(), c.arch.as_str().into(), c.scheme.to_string(), format!("{:.6}", c.mean_train_time_s)])?;
    }
    w.flush()?;

    let tables = [
        ("rank_scheme_accuracy.csv", &outcome.report.scheme_accuracy_ranks),
        ("rank_network_accuracy.csv", &outcome.report.network_accuracy_ranks),
        ("rank_scheme_time.csv", &outcome.timings.scheme_time_ranks),
        ("rank_network_time.csv", &outcome.timings.network_time_ranks),
    ];
    for (name, table) in tables {
        if let Some(t) = table {
            write_rank_csv(t, &dir.join(name))?;
        }
    }
    Ok(())
}

/// One row per entry: per-task ranks, then sum and average.
pub fn write_rank_csv(t: &RankTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["entry".to_string()];
    header.extend(t.tasks.iter().cloned());
    header.extend(["sum".into(), "average".into()]);
    w.write_record(&header)?;
    for (i, name) in t.names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(t.ranks[i].iter().map(|r| r.to_string()));
        row.push(t.sums[i].to_string());
        row.push(format!("{:.2}", t.averages[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(phq8: u8, gender: Gender) -> Subject {
        Subject { subject_id: "x".into(), phq8, gender }
    }

    #[test]
    fn task_labels() {
        let s = subject(7, Gender::Female);
        assert_eq!(TaskCategory::Combined.label(&s), 1);
        assert_eq!(TaskCategory::Severity.label(&s), 0);
        assert_eq!(TaskCategory::Severity.label(&subject(10, Gender::Male)), 1);
        assert_eq!(TaskCategory::Combined.label(&subject(4, Gender::Male)), 0);
        assert!(!TaskCategory::Male.includes(&s));
        assert!(TaskCategory::Female.includes(&s));
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.sd - 1.0).abs() < 1e-12);
        assert_eq!(MeanSd::of(&[0.5]).sd, 0.0);
    }

    #[test]
    fn fingerprint_ignores_resume() {
        let a = GridConfig::default();
        let b = GridConfig { resume: true, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = GridConfig { seed: 1, ..a.clone() };
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = GridConfig { tasks: vec![TaskCategory::Combined], folds: 3, ..Default::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: GridConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: GridConfig = toml::from_str("archs = [\"mnv2-lite\"]\n[train]\nbatch_size = 16\n").unwrap();
        assert_eq!(partial.archs, vec![ArchName::Mnv2Lite]);
        assert_eq!(partial.train.batch_size, 16);
        assert_eq!(partial.folds, 5);
        assert!(toml::from_str::<GridConfig>("bogus = 1\n").is_err());
    }
}
