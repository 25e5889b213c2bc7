use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marginlab::data::{self, check_combes, Dataset};
use marginlab::margin::{self, local_margin, max_margin};
use marginlab_cli::config::{two_cone, ExperimentConfig};
use marginlab_cli::repro::{self, ReproOptions};
use marginlab_cli::{run, CliError, Log, Manifest, Result};

#[derive(Parser)]
#[command(name = "marginlab", version, about = "Implicit-bias experiments on separable data")]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV.
    Gen(GenArgs),
    /// Check the acute/obtuse condition and separability of a dataset.
    Check {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "marginlab-out")]
        out: PathBuf,
    },
    /// Max-margin direction of a dataset's positives, signed points or a subset.
    Margin(MarginArgs),
    /// Run the experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reseeds the dataset generator, the initialization and the SGD seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute report.json for a finished run directory.
    Analyze {
        /// Directory holding run.json and dataset.csv.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a canned scenario: example1, example2, combes-sgd, leaky, multi-neuron.
    Repro {
        name: String,
        /// Defaults to marginlab-out/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's horizon T.
        #[arg(long)]
        horizon: Option<usize>,
    },
}

#[derive(Args)]
struct GenArgs {
    /// separable, combes, example1, example2 or two-cone.
    #[arg(long)]
    generator: String,
    #[arg(long, default_value_t = 10)]
    n_pos: usize,
    #[arg(long, default_value_t = 10)]
    n_neg: usize,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    min_margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "marginlab-out")]
    out: PathBuf,
}

#[derive(Args)]
struct MarginArgs {
    #[arg(long)]
    data: PathBuf,
    /// Use the signed points y_i x_i instead of the positives.
    #[arg(long, conflicts_with = "subset")]
    signed: bool,
    /// Comma-separated 0-based indices of positives for a local direction.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    #[arg(long, default_value_t = margin::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = margin::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value = "marginlab-out")]
    out: PathBuf,
}

fn gen(a: &GenArgs) -> Result<Manifest> {
    let ds = match a.generator.as_str() {
        "separable" => data::gen_separable(a.n_pos, a.n_neg, a.dim, a.min_margin, a.seed)?,
        "combes" => data::gen_combes(a.n_pos, a.n_neg, a.dim, a.seed)?,
        "example1" => data::gen_example1(),
        "example2" => data::gen_example2(),
        "two-cone" => two_cone(),
        other => return Err(CliError::Config(format!("unknown generator {other:?}"))),
    };
    std::fs::create_dir_all(&a.out)?;
    let mut m = Manifest::default();
    m.write("dataset", &a.out, "dataset.csv", ds.to_csv().as_bytes())?;
    Ok(m)
}

fn check(data: &Path, out: &Path) -> Result<Manifest> {
    let ds = Dataset::load(data)?;
    let rep = check_combes(&ds);
    std::fs::create_dir_all(out)?;
    let mut m = Manifest::default();
    m.write("condition", out, "condition.json", serde_json::to_string_pretty(&rep)?.as_bytes())?;
    Ok(m)
}

fn margin_cmd(a: &MarginArgs) -> Result<Manifest> {
    let ds = Dataset::load(&a.data)?;
    let json = match &a.subset {
        Some(j) => {
            let (r, member) = local_margin(&ds, j, a.tol, a.max_iter)?;
            serde_json::json!({ "subset": j, "in_own_region": member, "margin": r })
        }
        None => {
            let pts = if a.signed { ds.signed_points() } else { ds.positive_points() };
            let r = max_margin(&pts, a.tol, a.max_iter)?;
            serde_json::json!({ "points": if a.signed { "signed" } else { "positive" }, "margin": r })
        }
    };
    std::fs::create_dir_all(&a.out)?;
    let mut m = Manifest::default();
    m.write("margin", &a.out, "margin.json", serde_json::to_string_pretty(&json)?.as_bytes())?;
    Ok(m)
}

fn train(config: &Path, out: Option<&Path>, seed: Option<u64>, log: Log) -> Result<Manifest> {
    let mut cfg = ExperimentConfig::load(config)?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    if let Some(s) = seed {
        cfg.dataset.set_seed(s);
        cfg.init.seed = s;
        let m = cfg.seeds.len() as u64;
        cfg.seeds = (0..m).map(|k| s.wrapping_add(k)).collect();
    }
    let out = match (out, &cfg.out) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("marginlab-out"),
    };
    Ok(run::train(&cfg, &base, &out, log)?.0)
}

fn threads_from_env() -> Result<()> {
    let Ok(v) = std::env::var("MARGINLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MARGINLAB_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<Manifest> {
    threads_from_env()?;
    let log = Log { quiet: cli.quiet };
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Check { data, out } => check(&data, &out),
        Command::Margin(a) => margin_cmd(&a),
        Command::Train { config, out, seed } => train(&config, out.as_deref(), seed, log),
        Command::Analyze { run, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            Ok(run::analyze_dir(&run, &out)?.0)
        }
        Command::Repro {
            name,
            out,
            seed,
            horizon,
        } => {
            let out = out.unwrap_or_else(|| Path::new("marginlab-out").join(&name));
            repro::repro(&name, ReproOptions { seed, horizon }, &out, log)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(m) => {
            println!("{}", m.to_json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
