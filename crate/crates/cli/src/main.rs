mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use capital_core::baselines::{adjusted_value_from, vt_from_contrast, VtParams, VtVariant};
use capital_core::capital::{fit_ssr, fit_ssr_survival, CapitalConfig};
use capital_core::contrast::{estimate_contrast_rf, Estimator};
use capital_core::dataset::{
    is_survival_csv, load_survival_csv, load_trial_csv, save_survival_csv, save_trial_csv, CovariateMatrix,
};
use capital_core::error::Error;
use capital_core::eval::{
    benchmark, eta_monte_carlo, evaluate_rule, solve_eta, solve_eta_uniform, BenchmarkConfig, EtaOracle, Method,
};
use capital_core::forest::ForestParams;
use capital_core::policytree::PolicyTree;
use capital_core::reward::RewardKind;
use capital_core::simulate::{gen_survival, gen_trial, Noise, ScenarioSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use manifest::{manifest_path, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "capital", version, about = "Subgroup selection with a minimum average treatment effect")]
struct Cli {
    /// Maximum worker threads. Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit the selection tree.
    Fit(FitArgs),
    /// Fit a comparison rule.
    Baseline(BaselineArgs),
    /// Score a tree on a test set with known contrasts.
    Evaluate(EvaluateArgs),
    /// Run replicated simulations and aggregate the metrics.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    Normal,
    Logistic,
    Extreme,
}

impl From<NoiseArg> for Noise {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Normal => Noise::Normal,
            NoiseArg::Logistic => Noise::Logistic,
            NoiseArg::Extreme => Noise::Extreme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Rf,
    Dr,
    DrReg,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Rf => Estimator::Rf,
            EstimatorArg::Dr => Estimator::Dr,
            EstimatorArg::DrReg => Estimator::DrReg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Capital,
    VtA,
    VtC,
    AdjY,
    AdjC,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Capital => Method::Capital,
            MethodArg::VtA => Method::VtA,
            MethodArg::VtC => Method::VtC,
            MethodArg::AdjY => Method::AdjY,
            MethodArg::AdjC => Method::AdjC,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineMethod {
    VtA,
    VtC,
    AdjY,
    AdjC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EtaSourceArg {
    Analytic,
    Mc,
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    scenario: u8,
    /// Noise law for scenario 4.
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Target censoring rate for scenario 4.
    #[arg(long)]
    censor: Option<f64>,
    /// Number of covariates.
    #[arg(long, default_value_t = 10)]
    covariates: usize,
}

impl ScenarioArgs {
    fn spec(&self) -> Result<ScenarioSpec, Error> {
        let spec = if self.scenario == 4 {
            ScenarioSpec::survival(
                self.noise.map(Noise::from).unwrap_or(Noise::Normal),
                self.censor.unwrap_or(0.15),
            )
        } else {
            ScenarioSpec {
                noise: self.noise.map(Noise::from),
                censor_level: self.censor,
                ..ScenarioSpec::trial(self.scenario)
            }
        };
        let spec = spec.with_r(self.covariates);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Clone)]
struct ForestArgs {
    #[arg(long, default_value_t = 1000)]
    trees: usize,
    #[arg(long)]
    mtry: Option<usize>,
    /// Minimum node size; defaults to 5 for regression and 15 for survival forests.
    #[arg(long)]
    min_node: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

impl ForestArgs {
    fn params(&self, survival: bool, seed: u64) -> ForestParams {
        let mut p = if survival {
            ForestParams::survival(seed)
        } else {
            ForestParams::regression(seed)
        };
        p.num_trees = self.trees;
        p.mtry = self.mtry;
        if let Some(m) = self.min_node {
            p.min_node_size = m;
        }
        p.max_depth = self.max_depth;
        p
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    reward: u8,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Rf)]
    estimator: EstimatorArg,
    /// Treat the data as right-censored survival times and use the RMST contrast.
    #[arg(long)]
    rmst: bool,
    /// RMST horizon; defaults to the smaller of the arms' largest observed times.
    #[arg(long, requires = "rmst")]
    tau: Option<f64>,
    /// Known treatment probability.
    #[arg(long, default_value_t = 0.5)]
    propensity: f64,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write every intermediate artifact as JSON.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    delta: f64,
    /// Policy-tree depth for the adjusted-value methods.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 0.5)]
    propensity: f64,
    #[arg(long, default_value_t = 4)]
    vt_max_depth: usize,
    #[arg(long, default_value_t = 20)]
    vt_min_leaf: usize,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    tree: PathBuf,
    /// CSV with a `c_true` column.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum)]
    eta_source: EtaSourceArg,
    #[arg(long)]
    delta: f64,
    /// Scenario whose contrast law defines the threshold. Required for the
    /// analytic source. Without it the Monte Carlo source uses the test contrasts.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    scenario: Option<u8>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    censor: Option<f64>,
    #[arg(long, default_value_t = 10)]
    covariates: usize,
    /// Write the metrics as JSON here as well as to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    n: Vec<usize>,
    /// Thresholds; scenario 4 defaults to its true delta.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = clap::value_parser!(u8).range(1..=3))]
    reward: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_enum, default_value = "capital")]
    methods: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',', value_enum, default_value = "rf")]
    estimators: Vec<EstimatorArg>,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value_t = 10_000)]
    test_size: usize,
    #[arg(long, default_value_t = 4)]
    vt_max_depth: usize,
    #[arg(long, default_value_t = 20)]
    vt_min_leaf: usize,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the table as markdown.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Schema(_) | Error::Parse { .. } | Error::Json(_) => 2,
        Error::Io { .. } => 3,
        Error::InfeasibleThreshold { .. } => 4,
        Error::Internal(_) => 1,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_manifest(mut m: RunManifest, inputs: &[&Path], outputs: &[&Path], started: Instant) -> Result<(), Error> {
    m.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
    m.outputs = outputs.iter().map(|p| p.to_path_buf()).collect();
    let m = m.finish(started.elapsed());
    let text = serde_json::to_string_pretty(&m)? + "\n";
    for out in outputs {
        write_file(&manifest_path(out), text.as_bytes())?;
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, Error> {
    Ok(serde_json::to_value(v)?)
}

fn simulate(args: SimulateArgs, threads: Option<usize>) -> Result<(), Error> {
    let started = Instant::now();
    let spec = args.scenario.spec()?;
    if spec.is_survival() {
        save_survival_csv(&gen_survival(&spec, args.n, args.seed)?, &args.out)?;
    } else {
        save_trial_csv(&gen_trial(&spec, args.n, args.seed)?, &args.out)?;
    }
    let config = json!({ "scenario": to_value(&spec)?, "n": args.n });
    write_manifest(
        RunManifest::new("simulate", Some(args.seed), threads, config),
        &[],
        &[&args.out],
        started,
    )
}

fn fit(args: FitArgs, threads: Option<usize>) -> Result<(), Error> {
    let started = Instant::now();
    let mut cfg = CapitalConfig::new(args.delta, RewardKind::from_label(args.reward)?, args.seed);
    cfg.lambda = args.lambda;
    cfg.depth = args.depth;
    cfg.estimator = args.estimator.into();
    cfg.forest = args.forest.params(args.rmst, args.seed);
    let fit = if args.rmst {
        if args.estimator != EstimatorArg::Rf {
            return Err(Error::Validation("--rmst uses the survival forest; drop --estimator".into()));
        }
        fit_ssr_survival(&load_survival_csv(&args.data)?, &cfg, args.tau)?
    } else {
        fit_ssr(&load_trial_csv(&args.data, args.propensity)?, &cfg)?
    };
    write_file(&args.out, (fit.tree.to_json_pretty() + "\n").as_bytes())?;
    let mut outputs = vec![args.out.as_path()];
    if let Some(audit) = &args.audit {
        write_file(audit, (serde_json::to_string_pretty(&fit)? + "\n").as_bytes())?;
        outputs.push(audit);
    }
    let config = json!({
        "capital": to_value(&cfg)?,
        "rmst": args.rmst,
        "tau": args.tau,
        "propensity": args.propensity,
        "objective": fit.objective,
    });
    write_manifest(
        RunManifest::new("fit", Some(args.seed), threads, config),
        &[&args.data],
        &outputs,
        started,
    )
}

fn baseline(args: BaselineArgs, threads: Option<usize>) -> Result<(), Error> {
    let started = Instant::now();
    let ds = load_trial_csv(&args.data, args.propensity)?;
    let forest = args.forest.params(false, args.seed);
    let vt = VtParams {
        max_depth: args.vt_max_depth,
        min_leaf: args.vt_min_leaf,
    };
    let tree: PolicyTree = match args.method {
        BaselineMethod::VtA | BaselineMethod::VtC => {
            let variant = if args.method == BaselineMethod::VtA {
                VtVariant::A
            } else {
                VtVariant::C
            };
            let c = estimate_contrast_rf(&ds, &forest)?.c_hat;
            vt_from_contrast(&ds.covariates, &c, args.delta, variant, vt)?.to_policy_tree()
        }
        BaselineMethod::AdjY => adjusted_value_from(&ds.covariates, &ds.outcome, args.delta, args.depth)?.tree,
        BaselineMethod::AdjC => {
            let c = estimate_contrast_rf(&ds, &forest)?.c_hat;
            adjusted_value_from(&ds.covariates, &c, args.delta, args.depth)?.tree
        }
    };
    write_file(&args.out, (tree.to_json_pretty() + "\n").as_bytes())?;
    let config = json!({
        "method": format!("{:?}", args.method),
        "delta": args.delta,
        "depth": args.depth,
        "propensity": args.propensity,
        "vt": to_value(&vt)?,
        "forest": to_value(&forest)?,
    });
    write_manifest(
        RunManifest::new("baseline", Some(args.seed), threads, config),
        &[&args.data],
        &[&args.out],
        started,
    )
}

fn load_test(path: &Path) -> Result<(CovariateMatrix, Vec<f64>), Error> {
    let (x, truth) = if is_survival_csv(path)? {
        let ds = load_survival_csv(path)?;
        (ds.covariates, ds.true_contrast)
    } else {
        let ds = load_trial_csv(path, 0.5)?;
        (ds.covariates, ds.true_contrast)
    };
    let truth = truth.ok_or_else(|| Error::Validation("test data need a c_true column".into()))?;
    Ok((x, truth))
}

fn evaluate(args: EvaluateArgs, threads: Option<usize>) -> Result<(), Error> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.tree).map_err(|e| io_err(&args.tree, e))?;
    let tree = PolicyTree::from_json(&text)?;
    let (x, truth) = load_test(&args.test)?;
    let spec = args
        .scenario
        .map(|scenario| {
            ScenarioArgs {
                scenario,
                noise: args.noise,
                censor: args.censor,
                covariates: args.covariates,
            }
            .spec()
        })
        .transpose()?;
    let eta: EtaOracle = match (args.eta_source, spec) {
        (EtaSourceArg::Analytic, Some(s)) if s.id == 1 => solve_eta_uniform(args.delta)?,
        (EtaSourceArg::Analytic, _) => {
            return Err(Error::Validation("the analytic threshold needs --scenario 1".into()))
        }
        (EtaSourceArg::Mc, Some(s)) => eta_monte_carlo(&s, args.delta)?,
        (EtaSourceArg::Mc, None) => solve_eta(&truth, args.delta)?,
    };
    let metrics = evaluate_rule(&tree, &x, Some(&truth), &eta)?;
    let report = json!({ "eta": to_value(&eta)?, "metrics": to_value(&metrics)? });
    let line = serde_json::to_string(&report)?;
    println!("{line}");
    if let Some(out) = &args.out {
        write_file(out, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
        let config = json!({ "delta": args.delta, "scenario": to_value(&spec)?, "eta_source": format!("{:?}", args.eta_source) });
        write_manifest(
            RunManifest::new("evaluate", None, threads, config),
            &[&args.tree, &args.test],
            &[out],
            started,
        )?;
    }
    Ok(())
}

fn run_benchmark(args: BenchmarkArgs, threads: Option<usize>) -> Result<(), Error> {
    let started = Instant::now();
    let spec = args.scenario.spec()?;
    let mut cfg = BenchmarkConfig::new(spec, args.n[0], args.reps, args.seed);
    cfg.n_grid = args.n.clone();
    cfg.delta_grid = args.delta.clone();
    cfg.reward_kinds = args
        .reward
        .iter()
        .map(|&r| RewardKind::from_label(r))
        .collect::<Result<_, _>>()?;
    cfg.lambda_grid = args.lambda.clone();
    cfg.methods = args.methods.iter().map(|&m| m.into()).collect();
    cfg.estimators = args.estimators.iter().map(|&e| e.into()).collect();
    cfg.depth = args.depth;
    cfg.test_size = args.test_size;
    cfg.vt = VtParams {
        max_depth: args.vt_max_depth,
        min_leaf: args.vt_min_leaf,
    };
    cfg.forest = args.forest.params(spec.is_survival(), args.seed);
    let table = benchmark(&cfg)?;
    write_file(&args.out, table.to_csv().as_bytes())?;
    let mut outputs = vec![args.out.as_path()];
    if let Some(md) = &args.markdown {
        write_file(md, table.to_markdown().as_bytes())?;
        outputs.push(md);
    }
    write_manifest(
        RunManifest::new("benchmark", Some(args.seed), threads, to_value(&cfg)?),
        &[],
        &outputs,
        started,
    )
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, cli.threads),
        Command::Fit(a) => fit(a, cli.threads),
        Command::Baseline(a) => baseline(a, cli.threads),
        Command::Evaluate(a) => evaluate(a, cli.threads),
        Command::Benchmark(a) => run_benchmark(a, cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capital: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
