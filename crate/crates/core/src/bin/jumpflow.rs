use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpflow::classical::{simulate_classical, ClassicalProcessSpec, EventSequence};
use jumpflow::config::AppConfig;
use jumpflow::corpus::{
    read_checkpoint, read_corpus, write_checkpoint, write_corpus, Corpus, CorpusHeader,
    CORPUS_FORMAT_VERSION,
};
use jumpflow::dynamics::{MarkSpace, Model};
use jumpflow::error::Error;
use jumpflow::manifest::RunManifest;
use jumpflow::metrics;
use jumpflow::trainer::{self, split_dataset};

#[derive(Parser)]
#[command(name = "jumpflow", version, about = "Latent jump ODE models for marked temporal point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus from a classical point process
    Generate(GenerateArgs),
    /// Fit the latent jump model to a corpus by maximum likelihood
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus
    Eval(EvalArgs),
    /// Sample sequences from a trained checkpoint
    Simulate(SimulateArgs),
    /// Inspect configuration defaults
    Config(ConfigArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[command(subcommand)]
    family: FamilyArgs,
    #[arg(long, global = true, default_value_t = 100)]
    count: usize,
    /// observation window start and end
    #[arg(long, global = true, num_args = 2, value_names = ["T0", "T1"], default_values_t = [0.0, 100.0])]
    window: Vec<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FamilyArgs {
    /// Constant-rate process
    Poisson {
        #[arg(long)]
        lambda0: f64,
    },
    /// Exponential-kernel self-exciting process
    HawkesExp {
        #[arg(long)]
        lambda0: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
    },
    /// Delayed power-law-kernel self-exciting process
    HawkesPl {
        #[arg(long)]
        lambda0: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        sigma: f64,
    },
    /// Exponentially growing intensity suppressed by events
    SelfCorrecting {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        beta: f64,
    },
}

impl FamilyArgs {
    fn spec(&self) -> ClassicalProcessSpec<f64> {
        match *self {
            FamilyArgs::Poisson { lambda0 } => ClassicalProcessSpec::Poisson { rate: lambda0 },
            FamilyArgs::HawkesExp {
                lambda0,
                alpha,
                beta,
            } => ClassicalProcessSpec::HawkesExp {
                base: lambda0,
                excitation: alpha,
                decay: beta,
            },
            FamilyArgs::HawkesPl {
                lambda0,
                alpha,
                beta,
                sigma,
            } => ClassicalProcessSpec::HawkesPl {
                base: lambda0,
                excitation: alpha,
                exponent: beta,
                delay: sigma,
            },
            FamilyArgs::SelfCorrecting { mu, beta } => ClassicalProcessSpec::SelfCorrecting {
                growth: mu,
                inhibition: beta,
            },
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// intensity recovery against the corpus's embedded generator
    #[arg(long)]
    mape: bool,
    #[arg(long)]
    type_error: bool,
    #[arg(long)]
    mark_mae: bool,
    #[arg(long)]
    nll: bool,
    /// uniform evaluation points per sequence window
    #[arg(long, default_value_t = 2000)]
    grid_points: usize,
    /// quadrature nodes for the likelihood
    #[arg(long, default_value_t = 100)]
    quad_points: usize,
    /// write per-sequence t,lambda_model,lambda_gt CSV traces here
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// evaluate only the test split of this seeded 60/20/20 partition
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, num_args = 2, value_names = ["T0", "T1"], default_values_t = [0.0, 100.0])]
    window: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// print the full default configuration as TOML
    #[arg(long)]
    dump_defaults: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Schema(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("JUMPFLOW_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> jumpflow::Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Config(args) => cmd_config(args),
    }
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_generate(args: GenerateArgs) -> jumpflow::Result<()> {
    let start = Instant::now();
    let out = args
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    let spec = args.family.spec();
    spec.validate()?;
    if spec.is_supercritical() {
        eprintln!("warning: supercritical excitation; sequences may grow very long");
    }
    let (t0, t1) = (args.window[0], args.window[1]);
    let sequences: Vec<EventSequence<f64>> = (0..args.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(i as u64));
            simulate_classical(&spec, t0, t1, &mut rng)
        })
        .collect::<jumpflow::Result<_>>()?;
    let total_events: usize = sequences.iter().map(|s| s.len()).sum();
    let mean_count = total_events as f64 / args.count.max(1) as f64;
    let corpus = Corpus::new(
        CorpusHeader {
            format_version: CORPUS_FORMAT_VERSION,
            mark_space: MarkSpace::Discrete { num_types: 1 },
            window: (t0, t1),
            generator: Some(spec),
        },
        sequences,
    );
    write_corpus(&out, &corpus)?;
    println!(
        "wrote {} sequences ({} events, mean count {:.2}) to {}",
        args.count,
        total_events,
        mean_count,
        out.display()
    );
    let mut manifest = RunManifest::new(
        "generate",
        serde_json::json!({
            "generator": corpus.header.generator,
            "count": args.count,
            "window": [t0, t1],
        }),
    );
    manifest.seed = Some(args.seed);
    manifest
        .results
        .insert("mean_count".into(), serde_json::json!(mean_count));
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write_atomic(&manifest_path_for(&out))
}

fn cmd_train(args: TrainArgs) -> jumpflow::Result<()> {
    let start = Instant::now();
    let config = AppConfig::from_path(&args.config)?;
    let (corpus, perturbed) = read_corpus(&args.corpus)?;
    if perturbed > 0 {
        eprintln!("warning: perturbed {perturbed} duplicate timestamps into strict order");
    }
    if corpus.header.mark_space != config.model.mark_space {
        return Err(Error::Schema(format!(
            "corpus mark space {:?} does not match model {:?}",
            corpus.header.mark_space, config.model.mark_space
        )));
    }
    let model = Model::new(config.model.clone())?;
    let n = corpus.sequences.len();
    let (train_idx, val_idx, _test_idx) =
        split_dataset(n, config.train.split, config.train.seed);
    let outcome = trainer::train(
        &model,
        &config.train,
        config.solver,
        &corpus.sequences,
        &train_idx,
        &val_idx,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_checkpoint(&args.out_dir.join("checkpoint.json"), &model, &outcome.params)?;
    let mut log = String::new();
    for entry in &outcome.log {
        log.push_str(&serde_json::to_string(entry)?);
        log.push('\n');
    }
    std::fs::write(args.out_dir.join("train_log.jsonl"), log)?;
    println!(
        "trained {} epochs; best validation NLL {:.4}",
        outcome.log.len(),
        outcome.best_val_nll
    );
    let mut manifest = RunManifest::new("train", serde_json::to_value(&config)?);
    manifest.seed = Some(config.train.seed);
    manifest.solver_stats = outcome.stats;
    manifest
        .results
        .insert("best_val_nll".into(), serde_json::json!(outcome.best_val_nll));
    manifest
        .results
        .insert("epochs".into(), serde_json::json!(outcome.log.len()));
    manifest
        .results
        .insert("lr_recoveries".into(), serde_json::json!(outcome.lr_recoveries));
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write_atomic(&args.out_dir.join("manifest.json"))
}

fn cmd_eval(args: EvalArgs) -> jumpflow::Result<()> {
    let start = Instant::now();
    let (model, params) = read_checkpoint(&args.checkpoint)?;
    let (corpus, _) = read_corpus(&args.corpus)?;
    if corpus.header.mark_space != model.config().mark_space {
        return Err(Error::Schema(
            "corpus mark space does not match the checkpoint".into(),
        ));
    }
    let solver = jumpflow::SolverConfig::default();
    let subset: Vec<&EventSequence<f64>> = match args.split_seed {
        None => corpus.sequences.iter().collect(),
        Some(seed) => {
            let (_, _, test) = split_dataset(corpus.sequences.len(), [0.6, 0.2, 0.2], seed);
            test.into_iter().map(|i| &corpus.sequences[i]).collect()
        }
    };
    if subset.is_empty() {
        return Err(Error::Config("no sequences selected for evaluation".into()));
    }
    let mut report = metrics::MetricReport::<f64>::default();
    if args.mape || args.trace_dir.is_some() {
        let spec = corpus.header.generator.as_ref().ok_or_else(|| {
            Error::Config("corpus has no embedded generator for intensity recovery".into())
        })?;
        let traces =
            metrics::intensity_traces(&model, params.as_slice(), spec, &subset, args.grid_points, solver)?;
        if args.mape {
            report.intensity_mape = Some(metrics::mape_from_traces(&traces)?);
        }
        if let Some(dir) = &args.trace_dir {
            std::fs::create_dir_all(dir)?;
            for (i, trace) in traces.iter().enumerate() {
                let mut csv = String::from("t,lambda_model,lambda_gt\n");
                for j in 0..trace.times.len() {
                    csv.push_str(&format!(
                        "{},{},{}\n",
                        trace.times[j], trace.model[j], trace.truth[j]
                    ));
                }
                std::fs::write(dir.join(format!("trace_{i:04}.csv")), csv)?;
            }
        }
    }
    if args.type_error {
        report.type_error_rate =
            Some(metrics::eval_type_error(&model, params.as_slice(), &subset, solver)?);
    }
    if args.mark_mae {
        let (mae, baseline) =
            metrics::eval_mark_mae(&model, params.as_slice(), &subset, solver)?;
        report.mark_mae = Some(mae);
        report.baseline_mark_mae = Some(baseline);
    }
    if args.nll {
        report.nll = Some(trainer::mean_nll(
            &model,
            params.as_slice(),
            &subset,
            args.quad_points,
            solver,
        )?);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut manifest = RunManifest::new(
        "eval",
        serde_json::json!({
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "grid_points": args.grid_points,
            "quad_points": args.quad_points,
            "split_seed": args.split_seed,
        }),
    );
    manifest.results = match serde_json::to_value(&report)? {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("report serializes to an object"),
    };
    manifest.wall_secs = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&args.out_dir)?;
    manifest.write_atomic(&args.out_dir.join("eval_manifest.json"))
}

fn cmd_simulate(args: SimulateArgs) -> jumpflow::Result<()> {
    let start = Instant::now();
    let (model, params) = read_checkpoint(&args.checkpoint)?;
    let (t0, t1) = (args.window[0], args.window[1]);
    let solver = jumpflow::SolverConfig::default();
    let mut sequences = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(i as u64));
        sequences.push(model.simulate(params.as_slice(), t0, t1, solver, &mut rng)?);
    }
    let total_events: usize = sequences.iter().map(|s| s.len()).sum();
    let corpus = Corpus::new(
        CorpusHeader {
            format_version: CORPUS_FORMAT_VERSION,
            mark_space: model.config().mark_space,
            window: (t0, t1),
            generator: None,
        },
        sequences,
    );
    write_corpus(&args.out, &corpus)?;
    println!(
        "simulated {} sequences ({} events) to {}",
        args.count,
        total_events,
        args.out.display()
    );
    let mut manifest = RunManifest::new(
        "simulate",
        serde_json::json!({
            "checkpoint": args.checkpoint,
            "count": args.count,
            "window": [t0, t1],
        }),
    );
    manifest.seed = Some(args.seed);
    manifest.results.insert(
        "mean_count".into(),
        serde_json::json!(total_events as f64 / args.count.max(1) as f64),
    );
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write_atomic(&manifest_path_for(&args.out))
}

fn cmd_config(args: ConfigArgs) -> jumpflow::Result<()> {
    if args.dump_defaults {
        print!("{}", AppConfig::default().to_toml()?);
        Ok(())
    } else {
        Err(Error::Config(
            "nothing to do; try --dump-defaults".into(),
        ))
    }
}
