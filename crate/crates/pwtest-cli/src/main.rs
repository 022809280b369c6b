//! `pwtest`: two-sample testing with the projected Wasserstein distance.
//!
//! Subcommands: `generate` (benchmark data), `pw` (train the estimator and
//! dump value/trace/projections), `test` (threshold or permutation
//! decision), `roc` (power evaluation), `sweep-lambda` (penalty probe).
//!
//! Exit codes: 0 accept/success, 1 reject, 2 usage or validation error,
//! 3 dimension mismatch, 4 optimizer divergence, 5 other failure. Every
//! command is deterministic given its flags: data files are byte-identical
//! across reruns, and only the manifest's duration field varies.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pwtest::core::RngSeed;
use pwtest::datasets::{generate, kde_export, DatasetSpec, Family, KdeBandwidth, Role};
use pwtest::mmd::MmdConfig;
use pwtest::potential::PotentialNetwork;
use pwtest::pw::{estimate_pw, penalty_gap_probe, PwConfig, PwEstimate};
use pwtest::tester::{evaluate_roc, run_test, Decision, Method, Mode, RocConfig, TestConfig};
use pwtest::{project, Error, ProjectionMatrix, SampleSet};

#[derive(Parser)]
#[command(name = "pwtest", version, about = "Projected Wasserstein two-sample testing")]
struct Cli {
    /// Worker threads for parallel trials/permutations (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark sample and write it as CSV.
    Generate(GenerateArgs),
    /// Train the projected Wasserstein estimator on two samples.
    Pw(PwArgs),
    /// Run a two-sample test and encode the decision in the exit code.
    Test(TestArgs),
    /// Trace an empirical ROC curve over Monte-Carlo trials.
    Roc(RocArgs),
    /// Run the estimator across a list of penalty weights.
    SweepLambda(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset family: blob, hdgm, laplace-shift, gauss-var.
    #[arg(long)]
    family: String,
    /// Which marginal to draw: mu or nu.
    #[arg(long)]
    role: String,
    #[arg(long)]
    n: usize,
    /// Ambient dimension (blob requires 2).
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Off-diagonal correlation of the 2x2 blocks.
    #[arg(long, default_value_t = 0.81)]
    delta: f64,
    /// First-coordinate location shift (laplace-shift nu).
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    /// Last-coordinate variance (gauss-var mu).
    #[arg(long, default_value_t = 4.0)]
    variance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct OptimizerArgs {
    /// Projection dimension.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Orthogonality penalty weight.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// SGD batch size.
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// SGD iteration count.
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Base learning rate (decayed as 1/sqrt(t)).
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
}

impl OptimizerArgs {
    fn to_config(&self, seed: RngSeed) -> PwConfig {
        PwConfig {
            k: self.k,
            lambda: self.lambda,
            batch_size: self.batch,
            iterations: self.iters,
            learning_rate: self.lr,
            ..PwConfig::new(self.k, seed)
        }
    }
}

#[derive(Args)]
struct PwArgs {
    /// CSV file with the first sample.
    #[arg(long)]
    mu: PathBuf,
    /// CSV file with the second sample.
    #[arg(long)]
    nu: PathBuf,
    #[command(flatten)]
    opt: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also export Gaussian KDE curves of the projected samples (k = 1).
    #[arg(long)]
    kde: bool,
    /// KDE grid resolution.
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MethodFlag {
    Pw,
    Mmd,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeFlag {
    Threshold,
    Permutation,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SigmoidFlag {
    /// On for unbounded families (laplace-shift, gauss-var) in threshold
    /// mode, off otherwise.
    Auto,
    On,
    Off,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    #[arg(long, value_enum)]
    method: MethodFlag,
    #[arg(long, value_enum, default_value_t = ModeFlag::Threshold)]
    mode: ModeFlag,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 199)]
    permutations: usize,
    /// Bound the support with an element-wise sigmoid before testing.
    #[arg(long, value_enum, default_value_t = SigmoidFlag::Auto)]
    sigmoid: SigmoidFlag,
    /// Family that produced the inputs; informs --sigmoid auto.
    #[arg(long)]
    family: Option<String>,
    #[command(flatten)]
    opt: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Per-sample size n = m drawn each trial.
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum)]
    method: MethodFlag,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[command(flatten)]
    opt: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.81)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    #[arg(long, default_value_t = 4.0)]
    variance: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    /// Comma-separated, strictly increasing penalty weights.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[command(flatten)]
    opt: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // Ignore the error if a pool already exists; determinism does not
        // depend on worker count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Pw(args) => cmd_pw(args),
        Command::Test(args) => cmd_test(args),
        Command::Roc(args) => cmd_roc(args),
        Command::SweepLambda(args) => cmd_sweep_lambda(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}

fn exit_for(err: &CliError) -> u8 {
    match err {
        CliError::Lib(Error::Dimension(_)) => 3,
        CliError::Lib(Error::Divergence { .. }) => 4,
        CliError::Lib(
            Error::Config(_) | Error::Parse(_) | Error::EmptyInput(_) | Error::SizeLimit(_),
        ) => 2,
        CliError::Lib(_) => 5,
        CliError::Io(_, _) => 5,
    }
}

enum CliError {
    Lib(Error),
    Io(PathBuf, std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Lib(e)
    }
}

type CmdResult = Result<ExitCode, CliError>;

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GenerateEcho {
    family: String,
    role: String,
    n: usize,
    d: usize,
    seed: u64,
    delta: f64,
    shift: f64,
    variance: f64,
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    let start = Instant::now();
    let spec = DatasetSpec {
        delta: args.delta,
        shift: args.shift,
        variance: args.variance,
        ..DatasetSpec::new(
            Family::parse(&args.family)?,
            Role::parse(&args.role)?,
            args.d,
        )
    };
    let sample = generate(&spec, args.n, RngSeed::new(args.seed))?;
    write_atomic(&args.out, sample.to_csv_string().as_bytes())?;

    let echo = GenerateEcho {
        family: args.family,
        role: args.role,
        n: args.n,
        d: args.d,
        seed: args.seed,
        delta: args.delta,
        shift: args.shift,
        variance: args.variance,
    };
    write_manifest(
        &manifest_beside(&args.out),
        "generate",
        args.seed,
        &echo,
        &[&args.out],
        start,
    )?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    value: f64,
    defect: f64,
    projector: &'a ProjectionMatrix,
    network: &'a PotentialNetwork,
    config: &'a PwConfig,
}

fn cmd_pw(args: PwArgs) -> CmdResult {
    let start = Instant::now();
    let x = read_sample(&args.mu)?;
    let y = read_sample(&args.nu)?;
    let cfg = args.opt.to_config(RngSeed::new(args.seed));
    let est = estimate_pw(&x, &y, &cfg)?;

    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.clone(), e))?;

    let estimate_path = dir.join("estimate.json");
    let report = EstimateReport {
        value: est.value,
        defect: est.defect,
        projector: &est.projector,
        network: &est.network,
        config: &cfg,
    };
    write_json(&estimate_path, &report)?;

    let trace_path = dir.join("trace.csv");
    write_atomic(&trace_path, trace_csv(&est).as_bytes())?;

    let proj_mu_path = dir.join("projected_mu.csv");
    let proj_nu_path = dir.join("projected_nu.csv");
    let px = project(&est.projector, &x)?;
    let py = project(&est.projector, &y)?;
    write_atomic(&proj_mu_path, px.to_csv_string().as_bytes())?;
    write_atomic(&proj_nu_path, py.to_csv_string().as_bytes())?;

    let mut outputs = vec![
        estimate_path.clone(),
        trace_path,
        proj_mu_path,
        proj_nu_path,
    ];
    if args.kde {
        if cfg.k != 1 {
            return Err(Error::Config(
                "KDE export needs a 1-dimensional projection (--k 1)".into(),
            )
            .into());
        }
        for (name, s) in [("kde_mu.csv", &px), ("kde_nu.csv", &py)] {
            let curve = kde_export(s, args.grid, KdeBandwidth::Silverman)?;
            let mut csv = String::from("t,density\n");
            for (t, density) in curve {
                csv.push_str(&format!("{t},{density}\n"));
            }
            let path = dir.join(name);
            write_atomic(&path, csv.as_bytes())?;
            outputs.push(path);
        }
    }

    let refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(&dir.join("manifest.json"), "pw", args.seed, &cfg, &refs, start)?;
    println!("value {}", est.value);
    println!("defect {}", est.defect);
    Ok(ExitCode::SUCCESS)
}

fn trace_csv(est: &PwEstimate) -> String {
    let mut out = String::from("iteration,objective,defect\n");
    for t in &est.trace {
        out.push_str(&format!("{},{},{}\n", t.iteration, t.objective, t.defect));
    }
    out
}

#[derive(Serialize)]
struct TestEcho {
    method: Method,
    mode: Mode,
    alpha: f64,
    permutations: usize,
    sigmoid: bool,
    seed: u64,
    pw: PwConfig,
    mmd: MmdConfig,
}

fn cmd_test(args: TestArgs) -> CmdResult {
    let start = Instant::now();
    let x = read_sample(&args.mu)?;
    let y = read_sample(&args.nu)?;

    let method = match args.method {
        MethodFlag::Pw => Method::Pw,
        MethodFlag::Mmd => Method::Mmd,
    };
    let mode = match args.mode {
        ModeFlag::Threshold => Mode::Threshold,
        ModeFlag::Permutation => Mode::Permutation,
    };
    let family = args.family.as_deref().map(Family::parse).transpose()?;
    let sigmoid = match args.sigmoid {
        SigmoidFlag::On => true,
        SigmoidFlag::Off => false,
        SigmoidFlag::Auto => {
            mode == Mode::Threshold
                && matches!(family, Some(Family::LaplaceShift) | Some(Family::GaussVar))
        }
    };

    let seed = RngSeed::new(args.seed);
    let cfg = TestConfig {
        mode,
        alpha: args.alpha,
        permutations: args.permutations,
        sigmoid,
        seed,
        pw: args.opt.to_config(seed),
        mmd: MmdConfig::default(),
    };
    let verdict = run_test(&x, &y, method, &cfg)?;
    write_json(&args.out, &verdict)?;

    let echo = TestEcho {
        method,
        mode,
        alpha: cfg.alpha,
        permutations: cfg.permutations,
        sigmoid,
        seed: args.seed,
        pw: cfg.pw.clone(),
        mmd: cfg.mmd,
    };
    write_manifest(
        &manifest_beside(&args.out),
        "test",
        args.seed,
        &echo,
        &[&args.out],
        start,
    )?;

    match (verdict.threshold, verdict.p_value) {
        (Some(t), _) => println!(
            "statistic {} threshold {t} -> {}",
            verdict.statistic,
            decision_name(verdict.decision)
        ),
        (None, Some(p)) => println!(
            "statistic {} p-value {p} -> {}",
            verdict.statistic,
            decision_name(verdict.decision)
        ),
        _ => {}
    }
    Ok(match verdict.decision {
        Some(Decision::RejectH0) => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    })
}

fn decision_name(d: Option<Decision>) -> &'static str {
    match d {
        Some(Decision::RejectH0) => "REJECT_H0",
        _ => "ACCEPT_H0",
    }
}

#[derive(Serialize)]
struct RocReport {
    auc: f64,
    trials_h0: usize,
    trials_h1: usize,
    method: Method,
    family: String,
    d: usize,
    n: usize,
    seed: u64,
    pw: PwConfig,
    mmd: MmdConfig,
}

fn cmd_roc(args: RocArgs) -> CmdResult {
    let start = Instant::now();
    let family = Family::parse(&args.family)?;
    let adjust = |spec: DatasetSpec| DatasetSpec {
        delta: args.delta,
        shift: args.shift,
        variance: args.variance,
        ..spec
    };
    let mu = adjust(DatasetSpec::new(family, Role::Mu, args.d));
    let nu = adjust(DatasetSpec::new(family, Role::Nu, args.d));

    let method = match args.method {
        MethodFlag::Pw => Method::Pw,
        MethodFlag::Mmd => Method::Mmd,
    };
    let seed = RngSeed::new(args.seed);
    let cfg = RocConfig {
        n: args.n,
        trials: args.trials,
        seed,
        pw: args.opt.to_config(seed),
        mmd: MmdConfig::default(),
    };
    let roc = evaluate_roc((&mu, &mu), (&mu, &nu), method, &cfg)?;

    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    let csv_path = dir.join("roc.csv");
    let mut csv = String::from("fpr,tpr\n");
    for (fpr, tpr) in &roc.points {
        csv.push_str(&format!("{fpr},{tpr}\n"));
    }
    write_atomic(&csv_path, csv.as_bytes())?;

    let json_path = dir.join("roc.json");
    let report = RocReport {
        auc: roc.auc,
        trials_h0: roc.trials_h0,
        trials_h1: roc.trials_h1,
        method,
        family: args.family,
        d: args.d,
        n: args.n,
        seed: args.seed,
        pw: cfg.pw.clone(),
        mmd: cfg.mmd,
    };
    write_json(&json_path, &report)?;

    write_manifest(
        &dir.join("manifest.json"),
        "roc",
        args.seed,
        &report,
        &[&csv_path, &json_path],
        start,
    )?;
    println!("auc {}", roc.auc);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SweepEcho {
    lambdas: Vec<f64>,
    seed: u64,
    pw: PwConfig,
}

fn cmd_sweep_lambda(args: SweepArgs) -> CmdResult {
    let start = Instant::now();
    let x = read_sample(&args.mu)?;
    let y = read_sample(&args.nu)?;
    let cfg = args.opt.to_config(RngSeed::new(args.seed));
    let rows = penalty_gap_probe(&x, &y, &cfg, &args.lambdas)?;

    let mut csv = String::from("lambda,value,defect\n");
    for (lambda, value, defect) in &rows {
        csv.push_str(&format!("{lambda},{value},{defect}\n"));
    }
    write_atomic(&args.out, csv.as_bytes())?;

    let echo = SweepEcho {
        lambdas: args.lambdas,
        seed: args.seed,
        pw: cfg,
    };
    write_manifest(
        &manifest_beside(&args.out),
        "sweep-lambda",
        args.seed,
        &echo,
        &[&args.out],
        start,
    )?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// file plumbing
// ---------------------------------------------------------------------------

fn read_sample(path: &Path) -> Result<SampleSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    Ok(SampleSet::from_csv_str(&text)?)
}

/// Write-to-temp then rename, so no partial file survives a failure.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Io(tmp.clone(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a C,
    duration_ms: u128,
    outputs: Vec<String>,
}

/// One manifest per command run. Data files are reproducible from `config`
/// and `seed`; only `duration_ms` varies between reruns.
fn write_manifest<C: Serialize>(
    path: &Path,
    command: &str,
    seed: u64,
    config: &C,
    outputs: &[&Path],
    start: Instant,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        duration_ms: start.elapsed().as_millis(),
        outputs: outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    };
    write_json(path, &manifest)
}

/// Manifest location for a command whose outputs live next to `out`.
fn manifest_beside(out: &Path) -> PathBuf {
    let name = match out.file_name() {
        Some(name) => format!("{}.manifest.json", name.to_string_lossy()),
        None => "manifest.json".into(),
    };
    match out.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}
