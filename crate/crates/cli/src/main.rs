//! `rks`: two-sample testing with ridge-spline discrepancies.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rks_core::baselines::Estimator;
use rks_core::calibrate::{fixed_threshold, permutation_test, PValueMode};
use rks_core::gen::{sample, Role, Setting, SettingKind};
use rks_core::harness::{method_statistic, run_experiment, write_roc_csv, ExperimentConfig, ExperimentRecord, Method, MethodContext};
use rks_core::nulldist::{default_grid, estimate_covariance, simulate_sup};
use rks_core::seed::derive_seed;
use rks_core::statistic::{rks_exact_1d, rks_exact_halfspace_2d};
use rks_core::{compute_rks, K0Method, Label, Objective, OptConfig, Result, RksError, SampleSet};

#[derive(Parser)]
#[command(name = "rks", version, about = "Two-sample tests based on ridge-spline MMD")]
struct Cli {
    /// Master seed; every random choice is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "RKS_THREADS", default_value_t = 0)]
    threads: usize,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether two CSV samples come from the same distribution.
    Test(TestArgs),
    /// Run a replicated null/alternative experiment from a config file.
    Experiment(ExperimentArgs),
    /// Turn experiment output into ROC curves.
    Roc(RocArgs),
    /// Simulate the limiting null law of the scaled statistic.
    Nulldist(NulldistArgs),
    /// Draw a sample from one of the synthetic settings.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct OptArgs {
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.99)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon_adam: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    neurons: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    /// log | no-log
    #[arg(long, default_value = "log")]
    objective: String,
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
}

impl OptArgs {
    fn config(&self) -> Result<OptConfig> {
        let cfg = OptConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon_adam: self.epsilon_adam,
            lambda: self.lambda,
            neurons: self.neurons,
            restarts: self.restarts,
            objective: self.objective.parse::<Objective>()?,
            init_scale: self.init_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plusone,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Biased,
    Unbiased,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    P,
    Q,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Input files start with a header row.
    #[arg(long)]
    header: bool,
    /// rks | kmmd-poly1 | kmmd-poly2 | kmmd-poly3 | kmmd-gauss | energy | lrt
    #[arg(long, default_value = "rks")]
    method: String,
    /// Ridge-spline degree for `rks`.
    #[arg(long, default_value_t = 1)]
    k: u32,
    /// Number of permutations (0 skips calibration).
    #[arg(long = "B", default_value_t = 99)]
    permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "plusone")]
    pvalue_mode: ModeArg,
    /// k = 0 direction search: logistic | grid
    #[arg(long, default_value = "logistic")]
    k0_method: String,
    /// Exact k = 0 statistic (d = 1 or d = 2 only).
    #[arg(long)]
    exact: bool,
    /// Write the witness network of the observed statistic here.
    #[arg(long)]
    witness: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "biased")]
    estimator: EstimatorArg,
    /// Setting name for `lrt`.
    #[arg(long)]
    setting: Option<String>,
    /// Setting parameter for `lrt` (defaults to the preset).
    #[arg(long)]
    v: Option<f64>,
    /// Also report the fixed-threshold test `T > c (m+n)^(-1/4)`.
    #[arg(long)]
    threshold_c: Option<f64>,
    #[command(flatten)]
    opt: OptArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output` from the config; `-` for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NulldistArgs {
    #[arg(long)]
    setting: String,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long, default_value_t = 0)]
    k: u32,
    #[arg(long, default_value_t = 64)]
    grid_dirs: usize,
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    /// Monte Carlo sample size for the covariance.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Use raw second moments instead of the centered covariance.
    #[arg(long)]
    uncentered: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    setting: String,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long, value_enum, default_value = "p")]
    role: RoleArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
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
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Test(args) => cmd_test(args, seed),
        Command::Experiment(args) => cmd_experiment(args, cli.seed),
        Command::Roc(args) => cmd_roc(args),
        Command::Nulldist(args) => cmd_nulldist(args, seed),
        Command::Gen(args) => cmd_gen(args, seed),
    }
}

fn setting(name: &str, d: usize, v: Option<f64>) -> Result<Setting> {
    let kind: SettingKind = name.parse()?;
    match v {
        Some(v) => Setting::new(kind, d, v),
        None => Setting::preset(kind, d),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_test(args: &TestArgs, seed: u64) -> Result<()> {
    let x = SampleSet::load_csv(&args.x, args.header, Label::X)?;
    let y = SampleSet::load_csv(&args.y, args.header, Label::Y)?;
    let method = match args.method.as_str() {
        "rks" => Method::Rks(args.k),
        other => other.parse()?,
    };
    if let Method::Rks(k) = method {
        if k > 3 {
            return Err(RksError::UnsupportedDegree(k));
        }
    }
    if args.exact && !(matches!(method, Method::Rks(0)) && x.dim() <= 2) {
        return Err(RksError::InvalidConfig("--exact needs the rks method with k = 0 and d <= 2".into()));
    }
    let ctx = MethodContext {
        opt: args.opt.config()?,
        k0_method: args.k0_method.parse::<K0Method>()?,
        estimator: match args.estimator {
            EstimatorArg::Biased => Estimator::Biased,
            EstimatorArg::Unbiased => Estimator::Unbiased,
        },
        setting: args
            .setting
            .as_deref()
            .map(|s| setting(s, x.dim(), args.v))
            .transpose()?,
    };
    let stat_seed = derive_seed(seed, "stat", 0);
    let exact = args.exact;
    let statistic = |a: &SampleSet, b: &SampleSet| -> Result<f64> {
        if exact {
            if a.dim() == 1 {
                rks_exact_1d(a, b)
            } else {
                rks_exact_halfspace_2d(a, b)
            }
        } else {
            method_statistic(method, a, b, &ctx, stat_seed)
        }
    };

    let mut out = io::stdout().lock();
    writeln!(out, "seed={seed}")?;
    writeln!(out, "method={method}")?;
    writeln!(out, "m={}", x.len())?;
    writeln!(out, "n={}", y.len())?;
    writeln!(out, "d={}", x.dim())?;

    if let (Some(path), Method::Rks(k)) = (&args.witness, method) {
        let res = compute_rks(&x, &y, &ctx.rks_config(k), stat_seed)?;
        match res.witness {
            Some(w) => w.write_csv(BufWriter::new(File::create(path)?))?,
            None => log::warn!("degenerate input has no witness; nothing written"),
        }
    }

    if args.permutations == 0 {
        let t = statistic(&x, &y)?;
        writeln!(out, "statistic={t:?}")?;
        report_fixed(&mut out, args, t, &x, &y)?;
        return Ok(());
    }
    let mode = match args.pvalue_mode {
        ModeArg::Plusone => PValueMode::PlusOne,
        ModeArg::Paper => PValueMode::PaperExact,
    };
    let perm_seed = derive_seed(seed, "perm", 0);
    let res = permutation_test(&x, &y, &statistic, args.permutations, args.alpha, perm_seed, mode)?;
    writeln!(out, "statistic={:?}", res.observed)?;
    writeln!(out, "permutations={}", args.permutations)?;
    writeln!(out, "pvalue_mode={mode}")?;
    writeln!(out, "p_value={:?}", res.p_value)?;
    writeln!(out, "alpha={:?}", res.alpha)?;
    writeln!(out, "reject={}", res.reject)?;
    report_fixed(&mut out, args, res.observed, &x, &y)?;
    Ok(())
}

fn report_fixed(out: &mut impl Write, args: &TestArgs, t: f64, x: &SampleSet, y: &SampleSet) -> Result<()> {
    if let Some(c) = args.threshold_c {
        let tp = fixed_threshold(x.len(), y.len(), c);
        writeln!(out, "fixed_threshold={tp:?}")?;
        writeln!(out, "fixed_reject={}", t > tp)?;
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let record = run_experiment(&cfg)?;
    let target = args.out.clone().or_else(|| cfg.output.clone());
    let to_stdout = target.as_deref().is_none_or(|p| p == Path::new("-"));
    record.write_csv(output(target.as_deref())?)?;
    if !to_stdout {
        println!("seed={}", cfg.seed);
        println!("rows={}", record.rows.len());
    } else {
        log::info!("seed={}", cfg.seed);
    }
    Ok(())
}

fn cmd_roc(args: &RocArgs) -> Result<()> {
    let record = ExperimentRecord::read_csv(BufReader::new(File::open(&args.input)?))?;
    let curves = record.roc_curves()?;
    if let Some(path) = &args.out {
        write_roc_csv(&curves, output(Some(path))?)?;
    }
    for (m, c) in &curves {
        println!("auc.{m}={:?}", c.auc);
    }
    Ok(())
}

fn cmd_nulldist(args: &NulldistArgs, seed: u64) -> Result<()> {
    if args.draws == 0 {
        return Err(RksError::InvalidConfig("--draws must be at least 1".into()));
    }
    let s = setting(&args.setting, args.d, args.v)?;
    let data = sample(&s.p(), args.samples, derive_seed(seed, "nulldist-sample", 0))?;
    let gp = estimate_covariance(&data, args.k, default_grid(&data, args.grid_dirs), !args.uncentered)?;
    let sups = simulate_sup(&gp, args.draws, derive_seed(seed, "nulldist-draws", 0))?;
    let mut w = output(args.out.as_deref())?;
    writeln!(w, "draw,sup")?;
    for (i, v) in sups.iter().enumerate() {
        writeln!(w, "{i},{v:?}")?;
    }
    w.flush()?;
    if args.out.is_some() {
        let mut sorted = sups.clone();
        sorted.sort_by(f64::total_cmp);
        println!("seed={seed}");
        println!("grid_points={}", gp.len());
        println!("draws={}", sups.len());
        println!("median={:?}", sorted[sorted.len() / 2]);
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs, seed: u64) -> Result<()> {
    let s = setting(&args.setting, args.d, args.v)?;
    let (role, tag) = match args.role {
        RoleArg::P => (Role::P, "gen-p"),
        RoleArg::Q => (Role::Q, "gen-q"),
    };
    let data = sample(&s.spec(role), args.n, derive_seed(seed, tag, 0))?;
    let mut w = output(args.out.as_deref())?;
    data.write_csv(&mut w)?;
    w.flush()?;
    if args.out.is_some() {
        println!("seed={seed}");
        println!("n={}", data.len());
    }
    Ok(())
}
