use std::path::PathBuf;
use std::process::ExitCode;

use blockcast::config::RunConfig;
use blockcast::workflow::{self, ReportFormat};
use blockcast::Error;
use clap::{Parser, Subcommand, ValueEnum};

/// Multi-modal mmWave blockage prediction: simulate, preprocess, train, fuse, evaluate,
/// benchmark and report.
#[derive(Parser, Debug)]
#[command(name = "blockcast", version)]
struct Cli {
    /// key = value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Dataset root (default: $BLOCKCAST_DATA).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of simulated scenarios.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    #[arg(long, global = true)]
    blockers: Option<usize>,
    /// Comma list, `all` or `auto`.
    #[arg(long, global = true)]
    modalities: Option<String>,
    /// paper or desk.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// BEV grid as HxW, or `auto`.
    #[arg(long, global = true)]
    bev_dims: Option<String>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    train_repeats: Option<usize>,
    /// Any config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenarios and the frame index.
    Simulate,
    /// Per-frame feature extraction, windowing and splits.
    Preprocess,
    /// Train one model per modality and repeat.
    Train,
    /// Write fusion manifests for every modality combination.
    Fuse,
    /// Score every combination on the test split.
    Evaluate,
    /// Per-window latency of every combination.
    Bench,
    /// Render results as tables.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Md,
    Csv,
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(p) = &cli.data {
        flags.push(("data_root", p.display().to_string()));
    }
    let opt = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("seeds", cli.seeds.map(|v| v.to_string())),
        ("blockers", cli.blockers.map(|v| v.to_string())),
        ("modalities", cli.modalities.clone()),
        ("preset", cli.preset.clone()),
        ("bev_dims", cli.bev_dims.clone()),
        ("jobs", cli.jobs.map(|v| v.to_string())),
        ("epochs", cli.epochs.map(|v| v.to_string())),
        ("train_repeats", cli.train_repeats.map(|v| v.to_string())),
    ];
    flags.extend(opt.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flags.push((k.trim(), v.to_string()));
    }
    for (k, v) in flags {
        cfg.set(k, &v)?;
    }
    if cfg.data_root.is_none() {
        cfg.data_root = Some(cfg.root()?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stage(cfg: &RunConfig, command: &Command) -> Result<String, Error> {
    Ok(match command {
        Command::Simulate => {
            let s = workflow::simulate(cfg)?;
            format!(
                "simulated {} sequences, {} frames, {:.1}% blocked\n",
                s.sequences,
                s.frames,
                100.0 * s.positive_fraction
            )
        }
        Command::Preprocess => {
            let s = workflow::preprocess(cfg)?;
            let ms: Vec<&str> = s.modalities.iter().map(|m| m.as_str()).collect();
            format!("preprocessed {} windows for {}\n", s.windows, ms.join(","))
        }
        Command::Train => {
            let mut out = String::new();
            for o in workflow::train(cfg)? {
                let f1: Vec<String> = o.report.validation_f1.iter().map(|f| format!("{f:.3}")).collect();
                out += &format!(
                    "{} repeat {}: best epoch {} of {}, validation F1 [{}]\n",
                    o.modality,
                    o.repeat,
                    o.report.best_epoch + 1,
                    o.report.train_loss.len(),
                    f1.join(", ")
                );
            }
            out
        }
        Command::Fuse => {
            let mut out = String::new();
            for e in workflow::fuse(cfg)? {
                let w: Vec<String> = e.weights().iter().map(|w| format!("{w:.4}")).collect();
                out += &format!("{}: weights [{}]\n", e.name(), w.join(", "));
            }
            out
        }
        Command::Evaluate => {
            let s = workflow::evaluate(cfg)?;
            let mut out = format!("evaluated {} combinations on {} test windows\n", s.combinations.len(), s.test_windows);
            for c in &s.combinations {
                let f1: Vec<String> = c.horizons.iter().map(|h| format!("{:.3}", h.f1)).collect();
                out += &format!("{}: F1 [{}]\n", c.combination, f1.join(", "));
            }
            out
        }
        Command::Bench => {
            let s = workflow::bench(cfg)?;
            let mut out = String::new();
            for r in &s.rows {
                out += &format!(
                    "{}: preprocess {:.2} ms, inference {:.2} ms, total {:.2} ms (p95 {:.2})\n",
                    r.combination, r.preprocess_ms_mean, r.inference_ms_mean, r.total_ms_mean, r.total_ms_p95
                );
            }
            out
        }
        Command::Report { format } => {
            let f = match format {
                Format::Md => ReportFormat::Markdown,
                Format::Csv => ReportFormat::Csv,
            };
            workflow::report(cfg, f)?
        }
    })
}

/// 1 for bad configuration or input, 2 for failures while running a stage.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Range(_) | Error::Arity(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.dump_config {
        print!("{}", cfg.dump());
        return ExitCode::SUCCESS;
    }
    match run_stage(&cfg, &cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
