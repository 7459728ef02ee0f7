use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apprentice::harness::{
    compare, emit_plot_data, generate, output_root, run_cached, seed_data, train_seed, Domain, ExperimentConfig,
    MetricsReport, ModelCache, ModelKind, TrainedModel,
};
use apprentice::pairwise::Framing;
use apprentice::pnn::{load_checkpoint, save_checkpoint};
use apprentice::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Personalized apprenticeship learning experiments.
#[derive(Parser)]
#[command(name = "apprentice", version)]
struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demonstration set of one seed and save it as JSON.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every seed of a config, writing a report.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one seed and save the model checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Defaults to `<output>/checkpoints/<label>-seed<seed>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of its seed.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Convert a differentiable tree checkpoint into a crisp tree.
    Crispify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the crisp tree as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the tree of a tree checkpoint.
    ExportTree {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = TreeFormat::Text)]
        format: TreeFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank finished runs from their report files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Also write the per-seed plot table here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run every model on the chosen domains and write reports, rankings
    /// and plot tables.
    Reproduce {
        #[arg(long, value_enum, num_args = 1.., default_values_t = [DomainArg::Lowdim, DomainArg::Scheduling])]
        domain: Vec<DomainArg>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Defaults to the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TreeFormat {
    Text,
    Dot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Lowdim,
    Scheduling,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Lowdim => Domain::Lowdim,
            DomainArg::Scheduling => Domain::Scheduling,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Domain when no config file is given.
    #[arg(long, value_enum)]
    domain: Option<DomainArg>,
    /// Model when no config file is given.
    #[arg(long)]
    model: Option<String>,
    /// Dotted override such as `hyper.sgd.epochs=10` or `seeds=[1,2]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match (&self.config, self.domain, &self.model) {
            (Some(path), None, None) => ExperimentConfig::load(path)?,
            (None, Some(domain), Some(model)) => ExperimentConfig::new(domain.into(), model.parse()?),
            _ => {
                return Err(Error::Config(
                    "give either --config or both --domain and --model".into(),
                ))
            }
        };
        for s in &self.set {
            config.apply_override(s)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn domain_dir(domain: Domain) -> &'static str {
    match domain {
        Domain::Lowdim => "lowdim",
        Domain::Scheduling => "scheduling",
    }
}

/// The config's output directory, else `<output root>/<domain>`.
fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| output_root().join(domain_dir(config.domain)))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn print_report(r: &MetricsReport) {
    print!("{}: mean accuracy {:.4} ± {:.4}", r.label, r.mean_accuracy, r.std_accuracy);
    if let Some(c) = r.crisp_mean_accuracy {
        print!(", crisp {c:.4}");
    }
    println!(" over {} seeds ({:.1}s)", r.seeds.len(), r.wall_clock_secs);
    if let Some(f) = &r.failed {
        println!("  failed: {f}");
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Done,
    RunFailed,
}

fn generate_cmd(args: &ConfigArgs, seed: u64, out: &Path) -> Result<Outcome, Error> {
    let config = args.build()?;
    let set = generate(&config, &config.resolved()?, seed)?;
    set.save(out)?;
    println!(
        "{} schedules, {} observations -> {}",
        set.schedules.len(),
        set.observation_count(),
        out.display()
    );
    Ok(Outcome::Done)
}

fn run_cmd(args: &ConfigArgs) -> Result<Outcome, Error> {
    let mut config = args.build()?;
    config.output_dir = Some(output_dir(&config));
    let report = run_cached(&config, &mut ModelCache::default())?;
    print_report(&report);
    Ok(if report.failed.is_some() {
        Outcome::RunFailed
    } else {
        Outcome::Done
    })
}

fn train_cmd(args: &ConfigArgs, seed: u64, out: Option<&Path>) -> Result<Outcome, Error> {
    let config = args.build()?;
    let hyper = config.resolved()?;
    let data = seed_data(&config, &hyper, seed)?;
    let (model, loss) = train_seed(&config, &hyper, &data, seed, &mut ModelCache::default())?;
    let path = out.map_or_else(
        || {
            output_dir(&config)
                .join("checkpoints")
                .join(format!("{}-seed{seed}.json", config.label()))
        },
        Path::to_path_buf,
    );
    save_checkpoint(&model, &path)?;
    match loss {
        Some(l) => println!("trained {} seed {seed}, training loss {l:.4} -> {}", config.label(), path.display()),
        None => println!("trained {} seed {seed} -> {}", config.label(), path.display()),
    }
    Ok(Outcome::Done)
}

fn eval_cmd(args: &ConfigArgs, seed: u64, checkpoint: &Path) -> Result<Outcome, Error> {
    let config = args.build()?;
    let hyper = config.resolved()?;
    let model: TrainedModel = load_checkpoint(checkpoint)?;
    let data = seed_data(&config, &hyper, seed)?;
    let ev = model.evaluate(&data.test, &hyper, seed)?;
    let rate = |evals: &[apprentice::pnn::ScheduleEval]| {
        let c: usize = evals.iter().map(|e| e.correct).sum();
        let n: usize = evals.iter().map(|e| e.total).sum();
        (c, n)
    };
    let (c, n) = rate(&ev.evals);
    println!("accuracy {:.4} ({c}/{n})", c as f64 / n.max(1) as f64);
    if let Some(crisp) = &ev.crisp {
        let (c, n) = rate(crisp);
        println!("crisp accuracy {:.4} ({c}/{n})", c as f64 / n.max(1) as f64);
    }
    Ok(Outcome::Done)
}

fn crispify_cmd(checkpoint: &Path, out: Option<&Path>) -> Result<Outcome, Error> {
    let tree = match load_checkpoint::<TrainedModel>(checkpoint)? {
        TrainedModel::Pddt(m) | TrainedModel::Ddt(m) => m.crispify(),
        _ => return Err(Error::InvalidArgument("only pddt and ddt checkpoints can be crispified".into())),
    };
    write_or_print(out, &(serde_json::to_string_pretty(&tree)? + "\n"))?;
    Ok(Outcome::Done)
}

fn export_tree_cmd(checkpoint: &Path, format: TreeFormat, out: Option<&Path>) -> Result<Outcome, Error> {
    let dot = matches!(format, TreeFormat::Dot);
    let text = match load_checkpoint::<TrainedModel>(checkpoint)? {
        TrainedModel::Pddt(m) | TrainedModel::Ddt(m) => {
            let tree = m.crispify();
            let names = m.feature_names();
            if dot {
                tree.render_dot(&names)
            } else {
                tree.render_text(&names)
            }
        }
        TrainedModel::Dt(m) => cart_render(&m.tree, &m.feature_names(), dot),
        TrainedModel::EmDt(m) => cart_render(&m.tree, &m.feature_names(), dot),
        TrainedModel::DtPnnEmb(m) => cart_render(&m.tree, &m.feature_names(), dot),
        _ => return Err(Error::InvalidArgument("checkpoint does not hold a tree".into())),
    };
    write_or_print(out, &text)?;
    Ok(Outcome::Done)
}

fn cart_render(tree: &apprentice::baselines::CartTree, names: &[String], dot: bool) -> String {
    if dot {
        tree.render_dot(names)
    } else {
        tree.render_text(names)
    }
}

fn compare_cmd(paths: &[PathBuf], plot: Option<&Path>) -> Result<Outcome, Error> {
    let reports = paths.iter().map(MetricsReport::load).collect::<Result<Vec<_>, _>>()?;
    print!("{}", compare(&reports)?.render());
    if let Some(p) = plot {
        emit_plot_data(&reports, std::fs::File::create(p)?)?;
    }
    Ok(Outcome::Done)
}

fn reproduce_cmd(domains: &[DomainArg], seeds: Option<&[u64]>, out: Option<&Path>) -> Result<Outcome, Error> {
    let root = out.map_or_else(output_root, Path::to_path_buf);
    let mut failed = false;
    for &d in domains {
        let domain = Domain::from(d);
        let dir = root.join(domain_dir(domain));
        let mut configs: Vec<ExperimentConfig> = ModelKind::ALL
            .iter()
            .map(|&m| ExperimentConfig::new(domain, m))
            .collect();
        let mut standard = ExperimentConfig::new(domain, ModelKind::Pnn);
        standard.framing = Some(Framing::Standard);
        configs.push(standard);
        let mut cache = ModelCache::default();
        let mut reports = Vec::new();
        for mut c in configs {
            if let Some(s) = seeds {
                c.seeds = s.to_vec();
            }
            c.output_dir = Some(dir.clone());
            let r = run_cached(&c, &mut cache)?;
            print_report(&r);
            failed |= r.failed.is_some();
            reports.push(r);
        }
        let finished: Vec<MetricsReport> = reports.into_iter().filter(|r| r.failed.is_none()).collect();
        emit_plot_data(&finished, std::fs::File::create(dir.join("plot.csv"))?)?;
        if finished.len() >= 2 {
            let table = compare(&finished)?.render();
            std::fs::write(dir.join("ranking.txt"), &table)?;
            print!("{table}");
        }
        std::io::stdout().flush()?;
    }
    Ok(if failed { Outcome::RunFailed } else { Outcome::Done })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Generate { config, seed, out } => generate_cmd(config, *seed, out),
        Command::Run { config } => run_cmd(config),
        Command::Train { config, seed, out } => train_cmd(config, *seed, out.as_deref()),
        Command::Eval {
            config,
            seed,
            checkpoint,
        } => eval_cmd(config, *seed, checkpoint),
        Command::Crispify { checkpoint, out } => crispify_cmd(checkpoint, out.as_deref()),
        Command::ExportTree {
            checkpoint,
            format,
            out,
        } => export_tree_cmd(checkpoint, *format, out.as_deref()),
        Command::Compare { reports, plot } => compare_cmd(reports, plot.as_deref()),
        Command::Reproduce { domain, seeds, out } => reproduce_cmd(domain, seeds.as_deref(), out.as_deref()),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::RunFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
