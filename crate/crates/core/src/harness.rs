//! Experiment orchestration: combination sweeps, inter-domain matrices and
//! figure data, with a resumable per-seed run log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchConfig};
use crate::corpus::{load_domain_file, merge_domains, save_domain, Domain};
use crate::error::{Error, Result};
use crate::selection::{
    combination_key, combined_score, fit_weights, fit_weights_held_out, parse_combination, rank_candidates,
    read_sweep_csv, subsets, write_sweep_csv, Candidate, CombinationWeights, FitConfig, SweepRecord,
};
use crate::similarity::{LabelPolicy, Scorer};
use crate::trainer::{mean_std, run_seed, TrainConfig};

pub const RECORDS_FILE: &str = "records.csv";
pub const RUNS_FILE: &str = "runs.csv";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const LOG_FILE: &str = "run.log";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Domain files; each domain is named after its file stem.
    pub universe: Vec<PathBuf>,
    /// Targets to rotate through; empty means every domain in turn.
    pub targets: Vec<String>,
    pub k_shot: usize,
    pub min_sources: usize,
    /// Largest combination size; `None` means all remaining domains.
    pub max_sources: Option<usize>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
    pub label_policy: LabelPolicy,
    pub train: TrainConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            universe: Vec::new(),
            targets: Vec::new(),
            k_shot: 1,
            min_sources: 1,
            max_sources: None,
            out_dir: PathBuf::from("out"),
            jobs: 0,
            label_policy: LabelPolicy::Slots,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentPlan {
    /// Parses a TOML plan; relative paths are kept as written.
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Reads a plan file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = ExperimentPlan::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in plan.universe.iter_mut().chain(std::iter::once(&mut plan.out_dir)) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.universe.len() < 2 {
            return Err(Error::Invalid(format!("a plan needs at least 2 domains, got {}", self.universe.len())));
        }
        if self.k_shot == 0 {
            return Err(Error::Invalid("k_shot must be at least 1".into()));
        }
        if self.min_sources == 0 {
            return Err(Error::Invalid("min_sources must be at least 1".into()));
        }
        if let Some(max) = self.max_sources {
            if max < self.min_sources {
                return Err(Error::Invalid(format!("max_sources {max} is below min_sources {}", self.min_sources)));
            }
        }
        self.train.validate()
    }

    /// Training settings with the plan's shot count applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k_shot: self.k_shot,
            ..self.train.clone()
        }
    }
}

/// Loaded domains plus the output tree of one plan.
pub struct Workspace {
    pub plan: ExperimentPlan,
    pub domains: Vec<Domain>,
    config: TrainConfig,
    log: Mutex<File>,
    runs: Mutex<RunLog>,
    pool: rayon::ThreadPool,
}

/// Identity of one training run.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub target: String,
    pub combination: String,
    pub seed: u64,
}

struct RunLog {
    results: BTreeMap<RunKey, f64>,
    writer: csv::Writer<File>,
}

#[derive(Serialize, Deserialize)]
struct RunRow {
    target: String,
    combination: String,
    seed: u64,
    f1: f64,
}

/// Reads `target,combination,seed,f1` rows.
pub fn read_runs_csv<R: std::io::Read>(reader: R) -> Result<BTreeMap<RunKey, f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<RunRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedLine {
            line: i + 2,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&row.f1) {
            return Err(Error::MalformedLine {
                line: i + 2,
                message: format!("f1 {} outside [0, 1]", row.f1),
            });
        }
        parse_combination(&row.combination)?;
        out.insert(
            RunKey {
                target: row.target,
                combination: row.combination,
                seed: row.seed,
            },
            row.f1,
        );
    }
    Ok(out)
}

/// A training job: target index and source indices into the universe.
type Task = (usize, Vec<usize>);

impl Workspace {
    pub fn open(plan: ExperimentPlan) -> Result<Self> {
        plan.validate()?;
        let domains = plan
            .universe
            .iter()
            .map(load_domain_file)
            .collect::<Result<Vec<_>>>()?;
        let names: BTreeSet<&str> = domains.iter().map(|d| d.name.as_str()).collect();
        if names.len() != domains.len() {
            return Err(Error::Invalid("domain names (file stems) must be unique".into()));
        }
        if let Some(bad) = domains.iter().find(|d| d.name.contains(crate::selection::COMBINATION_SEPARATOR)) {
            return Err(Error::Invalid(format!("domain name {:?} contains the combination separator", bad.name)));
        }
        for t in &plan.targets {
            if !names.contains(t.as_str()) {
                return Err(Error::Invalid(format!("target {t:?} is not in the universe")));
            }
        }
        let out = &plan.out_dir;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let log_path = out.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;

        let runs_path = out.join(RUNS_FILE);
        let existing = if runs_path.exists() {
            let f = File::open(&runs_path).map_err(|e| Error::io(&runs_path, e))?;
            read_runs_csv(f)?
        } else {
            BTreeMap::new()
        };
        let fresh = fs::metadata(&runs_path).map_or(true, |m| m.len() == 0);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&runs_path)
            .map_err(|e| Error::io(&runs_path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer
                .write_record(["target", "combination", "seed", "f1"])
                .and_then(|_| writer.flush().map_err(Into::into))
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        let jobs = if plan.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            plan.jobs
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
        let config = plan.train_config();
        Ok(Workspace {
            plan,
            domains,
            config,
            log: Mutex::new(log),
            runs: Mutex::new(RunLog {
                results: existing,
                writer,
            }),
            pool,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.plan.out_dir
    }

    pub fn log(&self, message: &str) {
        let mut f = self.log.lock().expect("log lock");
        let _ = writeln!(f, "{message}");
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    /// Target indices in universe order.
    pub fn targets(&self) -> Vec<usize> {
        if self.plan.targets.is_empty() {
            (0..self.domains.len()).collect()
        } else {
            (0..self.domains.len())
                .filter(|&i| self.plan.targets.contains(&self.domains[i].name))
                .collect()
        }
    }

    fn key_of(&self, task: &Task) -> String {
        let names: Vec<String> = task.1.iter().map(|&i| self.domains[i].name.clone()).collect();
        combination_key(&names)
    }

    /// Number of `(task, seed)` runs not yet in the run log.
    pub fn pending(&self, tasks: &[Task]) -> usize {
        let runs = self.runs.lock().expect("runs lock");
        self.missing(tasks, &runs.results).len()
    }

    fn missing(&self, tasks: &[Task], done: &BTreeMap<RunKey, f64>) -> Vec<(Task, u64)> {
        let mut out = Vec::new();
        for task in tasks {
            let combination = self.key_of(task);
            for &seed in &self.config.seeds {
                let key = RunKey {
                    target: self.domains[task.0].name.clone(),
                    combination: combination.clone(),
                    seed,
                };
                if !done.contains_key(&key) {
                    out.push((task.clone(), seed));
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Trains every missing `(task, seed)` pair. Failures are logged and
    /// skipped. Returns the number of runs executed.
    pub fn execute(&self, tasks: &[Task]) -> usize {
        let todo = {
            let runs = self.runs.lock().expect("runs lock");
            self.missing(tasks, &runs.results)
        };
        self.pool.install(|| {
            todo.par_iter().for_each(|((target, sources), seed)| {
                let target_domain = &self.domains[*target];
                let parts: Vec<&Domain> = sources.iter().map(|&i| &self.domains[i]).collect();
                let combination = self.key_of(&(*target, sources.clone()));
                match run_seed(&parts, target_domain, &self.config, *seed) {
                    Ok(result) => {
                        let mut runs = self.runs.lock().expect("runs lock");
                        let row = RunRow {
                            target: target_domain.name.clone(),
                            combination: combination.clone(),
                            seed: *seed,
                            f1: result.f1,
                        };
                        let written = runs.writer.serialize(&row).is_ok() && runs.writer.flush().is_ok();
                        if !written {
                            self.log(&format!("could not append run {}/{combination}/{seed}", row.target));
                        }
                        runs.results.insert(
                            RunKey {
                                target: row.target,
                                combination,
                                seed: *seed,
                            },
                            result.f1,
                        );
                    }
                    Err(e) => self.log(&format!(
                        "run failed: target={} combination={combination} seed={seed}: {e}",
                        target_domain.name
                    )),
                }
            })
        });
        todo.len()
    }

    /// Per-seed F1 of a task, in seed order; `None` if any seed is missing.
    pub fn scores(&self, task: &Task) -> Option<Vec<f64>> {
        let runs = self.runs.lock().expect("runs lock");
        let target = &self.domains[task.0].name;
        let combination = self.key_of(task);
        self.config
            .seeds
            .iter()
            .map(|&seed| {
                runs.results
                    .get(&RunKey {
                        target: target.clone(),
                        combination: combination.clone(),
                        seed,
                    })
                    .copied()
            })
            .collect()
    }

    /// Combination tasks of the sweep, per target in universe order.
    pub fn sweep_tasks(&self) -> Result<Vec<Task>> {
        let mut tasks = Vec::new();
        for t in self.targets() {
            let sources: Vec<usize> = (0..self.domains.len()).filter(|&i| i != t).collect();
            let max = self.plan.max_sources.unwrap_or(sources.len()).min(sources.len());
            for subset in subsets(sources.len())? {
                if (self.plan.min_sources..=max).contains(&subset.len()) {
                    tasks.push((t, subset.iter().map(|&i| sources[i]).collect()));
                }
            }
        }
        Ok(tasks)
    }

    fn scorer(&self) -> Result<Scorer> {
        let universe: Vec<&Domain> = self.domains.iter().collect();
        Scorer::new(&universe, self.plan.label_policy)
    }

    /// Runs the sweep (skipping runs already logged), writes `records.csv`
    /// and returns the records in canonical order.
    pub fn sweep(&self) -> Result<Vec<SweepRecord>> {
        let tasks = self.sweep_tasks()?;
        let ran = self.execute(&tasks);
        self.log(&format!("sweep: {} tasks, {ran} new runs", tasks.len()));
        let scorer = self.scorer()?;
        let mut records = Vec::new();
        for task in &tasks {
            let target = &self.domains[task.0];
            let parts: Vec<&Domain> = task.1.iter().map(|&i| &self.domains[i]).collect();
            let names: Vec<String> = parts.iter().map(|d| d.name.clone()).collect();
            let Some(scores) = self.scores(task) else {
                self.log(&format!("sweep: skipping {}/{} with failed runs", target.name, combination_key(&names)));
                continue;
            };
            let merged = merge_domains(&parts, &combination_key(&names))?;
            records.push(SweepRecord {
                target: target.name.clone(),
                combination: names,
                triple: scorer.triple(&merged, target)?,
                performance: mean_std(&scores).0,
            });
        }
        sort_records(&mut records);
        let path = self.out_dir().join(RECORDS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_sweep_csv(file, &records)?;
        Ok(records)
    }

    /// Entry `(t, s)` is F1 with all sources minus F1 without `s`, paired by seed.
    pub fn leave_one_out_matrix(&self) -> Result<InterDomainMatrix> {
        if self.domains.len() < 3 {
            return Err(Error::Invalid("the leave-one-out matrix needs at least 3 domains".into()));
        }
        let mut tasks = Vec::new();
        for t in self.targets() {
            let all: Vec<usize> = (0..self.domains.len()).filter(|&i| i != t).collect();
            tasks.push((t, all.clone()));
            for &s in &all {
                tasks.push((t, all.iter().copied().filter(|&i| i != s).collect()));
            }
        }
        self.execute(&tasks);
        let mut matrix = InterDomainMatrix::new(MatrixKind::LeaveOneOut, &self.domains);
        for t in self.targets() {
            let all: Vec<usize> = (0..self.domains.len()).filter(|&i| i != t).collect();
            let Some(full) = self.scores(&(t, all.clone())) else { continue };
            for &s in &all {
                let rest = all.iter().copied().filter(|&i| i != s).collect();
                if let Some(without) = self.scores(&(t, rest)) {
                    let diffs: Vec<f64> = full.iter().zip(&without).map(|(a, b)| a - b).collect();
                    matrix.insert(&self.domains[t].name, &self.domains[s].name, diffs);
                }
            }
        }
        matrix.write(self.out_dir())?;
        Ok(matrix)
    }

    /// Entry `(t, s)` is F1 on `t` when training on `s` alone.
    pub fn single_source_matrix(&self) -> Result<InterDomainMatrix> {
        let mut tasks = Vec::new();
        for t in self.targets() {
            for s in (0..self.domains.len()).filter(|&i| i != t) {
                tasks.push((t, vec![s]));
            }
        }
        self.execute(&tasks);
        let mut matrix = InterDomainMatrix::new(MatrixKind::SingleSource, &self.domains);
        for (t, sources) in &tasks {
            if let Some(scores) = self.scores(&(*t, sources.clone())) {
                matrix.insert(&self.domains[*t].name, &self.domains[sources[0]].name, scores);
            }
        }
        matrix.write(self.out_dir())?;
        Ok(matrix)
    }

    /// Looks a domain up by name.
    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.index_of(name).map(|i| &self.domains[i])
    }
}

/// Canonical record order: target, then combination size, then names.
pub fn sort_records(records: &mut [SweepRecord]) {
    records.sort_by(|a, b| {
        a.target
            .cmp(&b.target)
            .then(a.combination.len().cmp(&b.combination.len()))
            .then_with(|| a.combination.cmp(&b.combination))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    LeaveOneOut,
    SingleSource,
}

impl MatrixKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            MatrixKind::LeaveOneOut => "loo",
            MatrixKind::SingleSource => "single",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixEntry {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Target-by-source matrix; the diagonal is never filled.
#[derive(Clone, Debug, PartialEq)]
pub struct InterDomainMatrix {
    pub kind: MatrixKind,
    pub domains: Vec<String>,
    pub entries: BTreeMap<(String, String), MatrixEntry>,
}

impl InterDomainMatrix {
    pub fn new(kind: MatrixKind, domains: &[Domain]) -> Self {
        InterDomainMatrix {
            kind,
            domains: domains.iter().map(|d| d.name.clone()).collect(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, target: &str, source: &str, per_seed: Vec<f64>) {
        let (mean, std) = mean_std(&per_seed);
        self.entries
            .insert((target.to_string(), source.to_string()), MatrixEntry { per_seed, mean, std });
    }

    pub fn get(&self, target: &str, source: &str) -> Option<&MatrixEntry> {
        self.entries.get(&(target.to_string(), source.to_string()))
    }

    fn grid(&self, value: impl Fn(&MatrixEntry) -> f64) -> String {
        let mut out = String::from("target");
        for d in &self.domains {
            write!(out, ",{d}").unwrap();
        }
        out.push('\n');
        for t in &self.domains {
            out.push_str(t);
            for s in &self.domains {
                out.push(',');
                if let Some(e) = self.get(t, s) {
                    write!(out, "{}", value(e)).unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap CSV of entry means; rows are targets, columns sources.
    pub fn to_csv(&self) -> String {
        self.grid(|e| e.mean)
    }

    pub fn std_csv(&self) -> String {
        self.grid(|e| e.std)
    }

    /// Writes `matrices/<kind>.csv` and `matrices/<kind>_std.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let dir = out_dir.join("matrices");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = self.kind.file_stem();
        for (name, body) in [(format!("{stem}.csv"), self.to_csv()), (format!("{stem}_std.csv"), self.std_csv())] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Reads records written by a sweep.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sweep_csv(file)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Selector {
    Tvc,
    Tis,
    Lo,
    Combined,
}

impl Selector {
    pub const ALL: [Selector; 4] = [Selector::Tvc, Selector::Tis, Selector::Lo, Selector::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Tvc => "tvc",
            Selector::Tis => "tis",
            Selector::Lo => "lo",
            Selector::Combined => "combined",
        }
    }
}

/// One selector's choice for one target.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub target: String,
    pub selector: Selector,
    pub combination: Vec<String>,
    pub f1: f64,
}

fn by_target(records: &[SweepRecord]) -> BTreeMap<&str, Vec<&SweepRecord>> {
    let mut map: BTreeMap<&str, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.target.as_str()).or_default().push(r);
    }
    map
}

fn choose(records: &[&SweepRecord], score: impl Fn(&crate::similarity::SimilarityTriple) -> f64) -> Result<(Vec<String>, f64)> {
    let candidates: Vec<Candidate> = records.iter().map(|r| (r.combination.clone(), r.triple.clone())).collect();
    let pick = rank_candidates(&candidates, score)?;
    let record = records
        .iter()
        .find(|r| r.combination == pick.0)
        .expect("candidate comes from the records");
    Ok((pick.0.clone(), record.performance))
}

/// Each selector's argmax combination per target. The combined selector
/// uses weights fitted on the other targets' records only.
pub fn compare_selectors(records: &[SweepRecord], config: &FitConfig) -> Result<Vec<Selection>> {
    if records.is_empty() {
        return Err(Error::Invalid("no sweep records".into()));
    }
    let held_out = fit_weights_held_out(records, config)?;
    let mut out = Vec::new();
    for (target, rows) in by_target(records) {
        let weights = &held_out[target];
        for selector in Selector::ALL {
            let (combination, f1) = match selector {
                Selector::Tvc => choose(&rows, |t| t.tvc)?,
                Selector::Tis => choose(&rows, |t| t.tis)?,
                Selector::Lo => choose(&rows, |t| t.lo)?,
                Selector::Combined => choose(&rows, |t| combined_score(weights, t))?,
            };
            out.push(Selection {
                target: target.to_string(),
                selector,
                combination,
                f1,
            });
        }
    }
    Ok(out)
}

/// F1 of the largest combination of each target.
pub fn all_sources_f1(records: &[SweepRecord]) -> BTreeMap<String, f64> {
    by_target(records)
        .into_iter()
        .filter_map(|(t, rows)| {
            rows.iter()
                .max_by_key(|r| r.combination.len())
                .map(|r| (t.to_string(), r.performance))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureKind {
    Scatter,
    Boxplot,
    Heatmap,
    SelectorCompare,
}

impl std::str::FromStr for FigureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scatter" => Ok(FigureKind::Scatter),
            "boxplot" => Ok(FigureKind::Boxplot),
            "heatmap" => Ok(FigureKind::Heatmap),
            "selector_compare" | "selector-compare" => Ok(FigureKind::SelectorCompare),
            other => Err(Error::Invalid(format!("unknown figure kind {other:?}"))),
        }
    }
}

type Column = Box<dyn Fn(&SweepRecord) -> f64>;

/// Scatter data: one file per indicator, `target,similarity,f1` rows.
/// The combined indicator uses weights fitted on all records.
pub fn emit_scatter(records: &[SweepRecord], config: &FitConfig) -> Result<Vec<(String, String)>> {
    if records.is_empty() {
        return Err(Error::Invalid("no sweep records".into()));
    }
    let weights: CombinationWeights = fit_weights(records, config)?;
    let mut files = Vec::new();
    let columns: [(&str, Column); 4] = [
        ("tvc", Box::new(|r| r.triple.tvc)),
        ("tis", Box::new(|r| r.triple.tis)),
        ("lo", Box::new(|r| r.triple.lo)),
        ("combined", Box::new(move |r| combined_score(&weights, &r.triple))),
    ];
    for (name, f) in columns {
        let mut body = String::from("target,similarity,f1\n");
        for r in records {
            writeln!(body, "{},{},{}", r.target, f(r), r.performance).unwrap();
        }
        files.push((format!("scatter_{name}.csv"), body));
    }
    Ok(files)
}

/// `n_sources,f1` rows grouped by combination size.
pub fn emit_boxplot(records: &[SweepRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Invalid("no sweep records".into()));
    }
    let mut rows: Vec<(usize, usize)> = records.iter().enumerate().map(|(i, r)| (r.combination.len(), i)).collect();
    rows.sort();
    let mut body = String::from("n_sources,f1\n");
    for (n, i) in rows {
        writeln!(body, "{n},{}", records[i].performance).unwrap();
    }
    Ok(body)
}

/// `target,selector,f1` rows for the four selectors.
pub fn emit_selector_compare(records: &[SweepRecord], config: &FitConfig) -> Result<String> {
    let mut body = String::from("target,selector,f1\n");
    for s in compare_selectors(records, config)? {
        writeln!(body, "{},{},{}", s.target, s.selector.name(), s.f1).unwrap();
    }
    Ok(body)
}

/// Writes figure files under `out_dir/figures` and returns their paths.
pub fn write_figures(out_dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>> {
    let dir = out_dir.join("figures");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Fits the shared weights on all records and writes `weights.json`.
pub fn fit_and_save(records: &[SweepRecord], config: &FitConfig, out_dir: &Path) -> Result<CombinationWeights> {
    let weights = fit_weights(records, config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(WEIGHTS_FILE);
    fs::write(&path, weights.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(weights)
}

/// Training settings used for the synthetic benchmark: a larger step size
/// than the default and a fixed budget of 100 episodes per run.
pub fn benchmark_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        train_episodes: 100,
        eval_episodes: 5,
        ..TrainConfig::default()
    }
}

/// Generates the benchmark into `dir/domains/*.jsonl` and writes
/// `dir/plan.toml` pointing at them. Returns the plan with resolved paths.
pub fn write_benchmark(config: &BenchConfig, dir: &Path) -> Result<ExperimentPlan> {
    let domains = bench::generate(config)?;
    let domain_dir = dir.join("domains");
    fs::create_dir_all(&domain_dir).map_err(|e| Error::io(&domain_dir, e))?;
    let mut universe = Vec::new();
    for d in &domains {
        let rel = PathBuf::from("domains").join(format!("{}.jsonl", d.name));
        save_domain(d, dir.join(&rel))?;
        universe.push(rel);
    }
    let plan = ExperimentPlan {
        universe,
        out_dir: PathBuf::from("out"),
        train: benchmark_train_config(),
        ..ExperimentPlan::default()
    };
    let path = dir.join("plan.toml");
    fs::write(&path, plan.to_toml()).map_err(|e| Error::io(&path, e))?;
    ExperimentPlan::load(&path)
}
