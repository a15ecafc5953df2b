use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use domsel::bench::BenchConfig;
use domsel::corpus::{load_domain_file, merge_domains, Domain};
use domsel::harness::{
    self, emit_boxplot, emit_scatter, emit_selector_compare, fit_and_save, load_records, write_figures,
    ExperimentPlan, FigureKind, Workspace,
};
use domsel::selection::{combination_key, enumerate_candidates_with, rank_candidates, CombinationWeights, FitConfig};
use domsel::similarity::{LabelPolicy, Scorer};
use domsel::spnet::SpNetParams;
use domsel::trainer::{evaluate, target_episodes, token_vocabulary, train, write_loss_log, TrainConfig};
use domsel::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "domsel", version, about = "Source-domain selection for few-shot slot tagging")]
struct Cli {
    /// Seed for gen-bench, train and eval (plans carry their own seed lists).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// TOML config: an experiment plan, or training settings for train/eval.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for training runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark and a plan for it.
    GenBench {
        /// TOML file with generator settings.
        #[arg(long)]
        bench_config: Option<PathBuf>,
    },
    /// Similarity of merged sources to a target.
    Sim {
        #[arg(long, required = true, num_args = 1..)]
        source: Vec<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        /// Domains defining the idf statistics; defaults to sources plus target.
        #[arg(long, num_args = 1..)]
        universe: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "slots")]
        label_policy: PolicyArg,
    },
    /// Train and evaluate every source combination of the plan.
    Sweep,
    /// Fit combination weights to sweep records.
    Fit {
        #[arg(long)]
        records: PathBuf,
    },
    /// Rank every combination of the given sources by combined score.
    Select {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        source: Vec<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, num_args = 1..)]
        universe: Vec<PathBuf>,
    },
    /// Train on merged sources and save a checkpoint.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        source: Vec<PathBuf>,
        /// Target domain; its tokens join the vocabulary and it is evaluated after training.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on target episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Leave-one-out matrix of F1 decreases.
    LooMatrix,
    /// Single-source F1 matrix.
    SingleMatrix,
    /// Write figure data from sweep records or the plan's matrices.
    Emit {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    Slots,
    RawBio,
}

impl From<PolicyArg> for LabelPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Slots => LabelPolicy::Slots,
            PolicyArg::RawBio => LabelPolicy::RawBio,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Domain>> {
    paths.iter().map(load_domain_file).collect()
}

fn plan(cli: &Cli) -> Result<ExperimentPlan> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Invalid("this command needs --config <plan.toml>".into()))?;
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(dir) = &cli.out_dir {
        plan.out_dir = dir.clone();
    }
    if let Some(jobs) = cli.jobs {
        plan.jobs = jobs;
    }
    Ok(plan)
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let Some(path) = &cli.config else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match ExperimentPlan::from_toml(&text) {
        Ok(plan) => Ok(plan.train_config()),
        Err(_) => TrainConfig::from_toml(&text),
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenBench { bench_config } => {
            let mut config = match bench_config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?
                }
                None => BenchConfig::default(),
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let dir = out_dir(&cli, "bench");
            let plan = harness::write_benchmark(&config, &dir)?;
            println!("wrote {} domains and {}", plan.universe.len(), dir.join("plan.toml").display());
        }
        Command::Sim {
            source,
            target,
            universe,
            label_policy,
        } => {
            let sources = load_all(source)?;
            let target = load_domain_file(target)?;
            let mut universe = load_all(universe)?;
            if universe.is_empty() {
                universe = sources.clone();
                universe.push(target.clone());
            }
            let refs: Vec<&Domain> = universe.iter().collect();
            let scorer = Scorer::new(&refs, (*label_policy).into())?;
            let parts: Vec<&Domain> = sources.iter().collect();
            let names: Vec<String> = sources.iter().map(|d| d.name.clone()).collect();
            let merged = merge_domains(&parts, &combination_key(&names))?;
            let t = scorer.triple(&merged, &target)?;
            let mut out = csv::Writer::from_writer(std::io::stdout());
            let row = [t.source_name, t.target_name, t.tvc.to_string(), t.tis.to_string(), t.lo.to_string()];
            out.write_record(["source", "target", "tvc", "tis", "lo"])
                .and_then(|()| out.write_record(&row))
                .map_err(|e| Error::Parse(e.to_string()))?;
            out.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Sweep => {
            let ws = Workspace::open(plan(&cli)?)?;
            let records = ws.sweep()?;
            println!("{} records in {}", records.len(), ws.out_dir().join(harness::RECORDS_FILE).display());
        }
        Command::Fit { records } => {
            let records = load_records(records)?;
            let dir = out_dir(&cli, ".");
            let weights = fit_and_save(&records, &FitConfig::default(), &dir)?;
            println!("{}", weights.to_json());
        }
        Command::Select {
            weights,
            source,
            target,
            universe,
        } => {
            let text = fs::read_to_string(weights).map_err(|e| Error::io(weights, e))?;
            let weights = CombinationWeights::from_json(&text)?;
            let sources = load_all(source)?;
            let target = load_domain_file(target)?;
            let mut universe = load_all(universe)?;
            if universe.is_empty() {
                universe = sources.clone();
                universe.push(target.clone());
            }
            let refs: Vec<&Domain> = universe.iter().collect();
            let scorer = Scorer::new(&refs, LabelPolicy::Slots)?;
            let parts: Vec<&Domain> = sources.iter().collect();
            let candidates = enumerate_candidates_with(&parts, &target, &scorer)?;
            let best = rank_candidates(&candidates, |t| domsel::selection::combined_score(&weights, t))?;
            println!("{}", combination_key(&best.0));
        }
        Command::Train { source, target } => {
            let config = train_config(&cli)?;
            let seed = cli.seed.unwrap_or(config.seeds[0]);
            let sources = load_all(source)?;
            let target = target.as_ref().map(load_domain_file).transpose()?;
            let mut vocab_domains: Vec<&Domain> = sources.iter().collect();
            vocab_domains.extend(target.as_ref());
            let vocab = token_vocabulary(&vocab_domains);
            let params = SpNetParams::init(vocab.iter().map(String::as_str), &config.spnet(), seed)?;
            let parts: Vec<&Domain> = sources.iter().collect();
            let merged = merge_domains(&parts, "sources")?;
            let spec = domsel::corpus::EpisodeSpec::new(config.k_shot, config.train_episodes, seed).query_size(config.query_size);
            let episodes = domsel::corpus::build_episodes_with(&merged, spec)?;
            let outcome = train(params, &episodes, &config)?;
            let dir = out_dir(&cli, "train");
            checkpoint::save(&outcome.params, dir.join("checkpoint"))?;
            let mut log = Vec::new();
            write_loss_log(&mut log, &outcome.loss_log).map_err(|e| Error::io("loss.csv", e))?;
            write(&dir.join("loss.csv"), &String::from_utf8(log).expect("ascii"))?;
            eprintln!("{} steps, final loss {:?}", outcome.loss_log.len(), outcome.loss_log.last());
            if let Some(target) = &target {
                let result = evaluate(&outcome.params, &target_episodes(target, &config, seed)?)?;
                println!("{}", json(&result));
            }
        }
        Command::Eval { checkpoint: dir, target } => {
            let config = train_config(&cli)?;
            let seed = cli.seed.unwrap_or(config.seeds[0]);
            let params = checkpoint::load(dir)?;
            let target = load_domain_file(target)?;
            let result = evaluate(&params, &target_episodes(&target, &config, seed)?)?;
            println!("{}", json(&result));
        }
        Command::LooMatrix => {
            let ws = Workspace::open(plan(&cli)?)?;
            print!("{}", ws.leave_one_out_matrix()?.to_csv());
        }
        Command::SingleMatrix => {
            let ws = Workspace::open(plan(&cli)?)?;
            print!("{}", ws.single_source_matrix()?.to_csv());
        }
        Command::Emit { kind, records } => {
            let kind: FigureKind = kind.parse()?;
            let fit = FitConfig::default();
            let (dir, files) = match kind {
                FigureKind::Heatmap => {
                    let ws = Workspace::open(plan(&cli)?)?;
                    let loo = ws.leave_one_out_matrix()?;
                    let single = ws.single_source_matrix()?;
                    let files = vec![
                        ("heatmap_loo.csv".to_string(), loo.to_csv()),
                        ("heatmap_single.csv".to_string(), single.to_csv()),
                    ];
                    (ws.out_dir().to_path_buf(), files)
                }
                _ => {
                    let path = match (records, &cli.config) {
                        (Some(r), _) => r.clone(),
                        (None, Some(_)) => plan(&cli)?.out_dir.join(harness::RECORDS_FILE),
                        (None, None) => return Err(Error::Invalid("emit needs --records or --config".into())),
                    };
                    let records = load_records(&path)?;
                    let dir = match &cli.out_dir {
                        Some(d) => d.clone(),
                        None => path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
                    };
                    let files = match kind {
                        FigureKind::Scatter => emit_scatter(&records, &fit)?,
                        FigureKind::Boxplot => vec![("boxplot.csv".into(), emit_boxplot(&records)?)],
                        _ => vec![("selector_compare.csv".into(), emit_selector_compare(&records, &fit)?)],
                    };
                    (dir, files)
                }
            };
            for p in write_figures(&dir, &files)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
