use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use riskvol::config::{parse_grid, EnvKind, EnvSpec, PriceSpec, RunConfig};
use riskvol::env::gen_gbm_prices;
use riskvol::frontier::{frontier_csv, sweep, SweepSpec};
use riskvol::optim::train;
use riskvol::parallel::{configure_threads, Execution};
use riskvol::report::{with_metadata, OutputGuard};
use riskvol::verify::{verify_corpus, VerifyConfig};
use riskvol::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "riskvol", version, about = "Mean-volatility policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Run file with [env], [policy], [train] and [sweep] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// vola-pg, trvo, trpo-exp, mean-variance or safe-vola-pg.
    #[arg(long, global = true)]
    algo: Option<String>,
    /// two-cycle, portfolio, trading or random-tabular.
    #[arg(long, global = true)]
    env: Option<String>,
    /// Comma-separated risk-aversion values.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda_grid: Option<String>,
    /// Comma-separated exponential-utility coefficients (trpo-exp sweeps).
    #[arg(long, global = true, allow_hyphen_values = true)]
    c_grid: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one policy; writes train_log.csv and policy.ckpt.
    Train,
    /// One run per grid value; writes frontier.csv.
    Sweep,
    /// Check the theorem suites on random tabular MDPs; writes verify_report.csv.
    Verify {
        /// Corpus MDPs, seeds 0..N.
        #[arg(long, default_value_t = 50)]
        corpus: u64,
    },
    /// Geometric Brownian motion prices; writes prices.csv.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        drift: Option<f64>,
        #[arg(long)]
        vol: Option<f64>,
        #[arg(long)]
        p0: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_VALIDATION,
            })
        }
    }
}

fn resolve(common: &Common) -> riskvol::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Validation(format!("config file {} does not exist", path.display())));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(env) = &common.env {
        let kind: EnvKind = env.parse()?;
        if kind != cfg.env.kind() {
            cfg.env = EnvSpec::default_for(kind);
        }
    }
    if let Some(algo) = &common.algo {
        cfg.algorithm = algo.parse()?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(grid) = &common.lambda_grid {
        cfg.sweep.lambda_grid = parse_grid(grid).map_err(|m| Error::Validation(format!("--lambda-grid: {m}")))?;
    }
    if let Some(grid) = &common.c_grid {
        cfg.sweep.c_grid = parse_grid(grid).map_err(|m| Error::Validation(format!("--c-grid: {m}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// First 16 hex digits of the SHA-256 of the resolved configuration.
fn config_hash(cfg: &RunConfig, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{cfg:?}").as_bytes());
    h.update(extra.as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn prepare_out(dir: &Path) -> riskvol::Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".riskvol-write-test");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

fn run(cli: Cli) -> riskvol::Result<ExitCode> {
    if let Some(jobs) = cli.common.jobs {
        configure_threads(jobs)?;
    }
    let cfg = resolve(&cli.common)?;
    prepare_out(&cli.common.out)?;
    let out = &cli.common.out;
    let seed = cfg.train.seed;
    let mut guard = OutputGuard::new();
    let code = match cli.command {
        Command::Train => {
            let env = cfg.build_env()?;
            let policy0 = cfg.policy.build(&env)?;
            let (policy, log) = train(cfg.algorithm, &env, &policy0, &cfg.train_config())?;
            for note in &log.notes {
                eprintln!("note: {note}");
            }
            let hash = config_hash(&cfg, "train");
            guard.write(out.join("train_log.csv"), &with_metadata(&log.to_csv(), seed, &hash))?;
            guard.write(out.join("policy.ckpt"), &policy.to_checkpoint())?;
            ExitCode::SUCCESS
        }
        Command::Sweep => {
            let env = cfg.build_env()?;
            let policy0 = cfg.policy.build(&env)?;
            let grid = if cfg.algorithm.sweeps_c() { cfg.sweep.c_grid.clone() } else { cfg.sweep.lambda_grid.clone() };
            let spec = SweepSpec { grid, eval_batch: cfg.sweep.eval_batch, eval_seed: cfg.sweep.eval_seed, exec: Execution::Parallel };
            let rows = sweep(&env, &policy0, cfg.algorithm, &cfg.train_config(), &spec)?;
            let hash = config_hash(&cfg, "sweep");
            guard.write(out.join("frontier.csv"), &with_metadata(&frontier_csv(&rows), seed, &hash))?;
            ExitCode::SUCCESS
        }
        Command::Verify { corpus } => {
            let vc = VerifyConfig { seeds: (0..corpus).collect(), ..Default::default() };
            let report = verify_corpus(&vc)?;
            let hash = config_hash(&cfg, &format!("verify {vc:?}"));
            guard.write(out.join("verify_report.csv"), &with_metadata(&report.to_csv(), seed, &hash))?;
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                let mut text = report.offending.join("\n");
                text.push('\n');
                guard.write(out.join("verify_offending.txt"), &text)?;
                for r in report.rows.iter().filter(|r| !r.pass) {
                    eprintln!("violated: {} (max violation {:e}, tolerance {:e})", r.theorem_id, r.max_violation, r.tolerance);
                }
                ExitCode::from(EXIT_VIOLATION)
            }
        }
        Command::GenData { n, drift, vol, p0 } => {
            let (mut gn, mut gdrift, mut gvol, mut gp0) = match &cfg.env {
                EnvSpec::Trading { prices: PriceSpec::Gbm { n, drift, vol, p0, .. }, .. } => (*n, *drift, *vol, *p0),
                _ => match PriceSpec::default() {
                    PriceSpec::Gbm { n, drift, vol, p0, .. } => (n, drift, vol, p0),
                    PriceSpec::Csv(_) => unreachable!(),
                },
            };
            gn = n.unwrap_or(gn);
            gdrift = drift.unwrap_or(gdrift);
            gvol = vol.unwrap_or(gvol);
            gp0 = p0.unwrap_or(gp0);
            let series = gen_gbm_prices(seed, gn, gdrift, gvol, gp0)?;
            let hash = config_hash(&cfg, &format!("gen-data {gn} {gdrift} {gvol} {gp0}"));
            guard.write(out.join("prices.csv"), &with_metadata(&series.to_csv(), seed, &hash))?;
            ExitCode::SUCCESS
        }
    };
    for p in guard.commit() {
        log::info!("wrote {}", p.display());
    }
    Ok(code)
}
