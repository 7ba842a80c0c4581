//! Command-line front end.
//!
//! Settings come from three layers, later ones winning: the top of the
//! `--config` file, the file's `[command]` section, then command-line flags.
//! Config files are `key = value` lines; `#` starts a comment line. Any key
//! without a dedicated flag can be given as `--set key=value`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baseline::{fit_group_model, fit_logreg, GroupClassifier, LinearModel, LogRegConfig};
use crate::constraints::{self, estimate_group_model, FairnessMetric, GroupModel};
use crate::data::{self, ScoreData, ScoreSchema, SynthSpec, TabularSchema};
use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;
use crate::metrics::{self, EvaluationReport};
use crate::projection::{project_scores, ProjectedModel};
use crate::solver::{self, DualSolution, SolverConfig};
use crate::util::fmt9;

pub const CURVE_HEADER: &str = "alpha,accuracy,meo,statistical_parity,runtime_s";

#[derive(Debug, Parser)]
#[command(name = "fairproj", version, about = "Fairness post-processing by information projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train base label and group classifiers and write per-split scores.
    FitBase(CommonArgs),
    /// Fit a projection and write projected scores and a report.
    Project(CommonArgs),
    /// Fit one projection per alpha and write a trade-off curve.
    Sweep(CommonArgs),
    /// Evaluate argmax decisions of a score file.
    Evaluate(CommonArgs),
    /// Write a synthetic group-biased dataset.
    SynthGen(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FitBase(_) => "fit-base",
            Command::Project(_) => "project",
            Command::Sweep(_) => "sweep",
            Command::Evaluate(_) => "evaluate",
            Command::SynthGen(_) => "synth-gen",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::FitBase(a)
            | Command::Project(a)
            | Command::Sweep(a)
            | Command::Evaluate(a)
            | Command::SynthGen(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Config file with `key = value` lines and `[command]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// kl or ce.
    #[arg(long)]
    pub divergence: Option<String>,
    /// sp, eo or oae.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated, strictly increasing.
    #[arg(long = "alpha-grid")]
    pub alpha_grid: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// A number or `auto` for 1/sqrt(N).
    #[arg(long)]
    pub zeta: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    /// Write `runtime_s = 0` in curve files.
    #[arg(long = "no-timing")]
    pub no_timing: bool,
    /// Any other setting, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Resolved key/value settings for one command.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn norm_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Parses a config file into its top-level and per-section entries.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = String::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got '{line}'", no + 1))
        })?;
        out.entry(section.clone())
            .or_default()
            .insert(norm_key(k), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(command: &str, args: &CommonArgs) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut parsed = parse_config(&text)?;
            if let Some(top) = parsed.remove("") {
                values.extend(top);
            }
            if let Some(sec) = parsed.remove(command) {
                values.extend(sec);
            }
        }
        for kv in &args.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
            values.insert(norm_key(k), v.trim().to_string());
        }
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        };
        flag("divergence", args.divergence.clone());
        flag("metric", args.metric.clone());
        flag("alpha", args.alpha.map(|a| a.to_string()));
        flag("alpha_grid", args.alpha_grid.clone());
        flag("rho", args.rho.map(|a| a.to_string()));
        flag("zeta", args.zeta.clone());
        flag("seed", args.seed.map(|a| a.to_string()));
        flag("workers", args.workers.map(|a| a.to_string()));
        flag("out_dir", args.out_dir.as_ref().map(|p| p.display().to_string()));
        if args.no_timing {
            flag("timing", Some("false".into()));
        }
        Ok(Self { values })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            values: pairs
                .into_iter()
                .map(|(k, v)| (norm_key(k), v.to_string()))
                .collect(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required setting '{key}'")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("setting '{key}': cannot parse '{v}'"))),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("setting '{key}': expected a boolean, got '{v}'"))),
        }
    }

    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|_| {
                            Error::Config(format!("setting '{key}': cannot parse '{x}'"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn list_str(&self, key: &str) -> Option<Vec<String>> {
        self.get(key)
            .map(|v| v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir").unwrap_or("."))
    }

    fn path_or(&self, key: &str, default_name: &str) -> PathBuf {
        match self.get(key) {
            Some(p) => PathBuf::from(p),
            None => self.out_dir().join(default_name),
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    /// False when a solver run did not converge or a sweep point failed.
    pub ok: bool,
    pub messages: Vec<String>,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let settings = Settings::resolve(cli.command.name(), cli.command.args())?;
    run_command(cli.command.name(), &settings)
}

pub fn run_command(command: &str, s: &Settings) -> Result<Outcome> {
    match command {
        "fit-base" => cmd_fit_base(s),
        "project" => cmd_project(s),
        "sweep" => cmd_sweep(s),
        "evaluate" => cmd_evaluate(s),
        "synth-gen" => cmd_synth_gen(s),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

pub fn cmd_synth_gen(s: &Settings) -> Result<Outcome> {
    let n = s.parse_or("n", 5000usize)?;
    let classes = s.parse_or("classes", 2usize)?;
    let groups = s.parse_or("groups", 2usize)?;
    let seed = s.parse_or("seed", 0u64)?;
    let mut spec = match s.parse::<f64>("favour")? {
        Some(f) => SynthSpec::biased(n, classes, groups, f, seed),
        None => SynthSpec::unbiased(n, classes, groups, seed),
    };
    if let Some(d) = s.parse("d")? {
        spec.d = d;
    }
    if let Some(w) = s.list_f64("group_weights")? {
        spec.group_weights = w;
    }
    if let Some(rows) = s.get("class_bias") {
        spec.class_bias = rows
            .split(';')
            .map(|r| {
                r.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("class_bias: cannot parse '{x}'")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
    }
    spec.cluster_separation = s.parse_or("separation", spec.cluster_separation)?;
    spec.group_shift = s.parse_or("group_shift", spec.group_shift)?;
    let ds = data::generate_synth(&spec)?;
    let out = s.path_or("out", "synth.csv");
    ensure_parent(&out)?;
    data::write_tabular(&out, &ds)?;
    Ok(Outcome {
        written: vec![out],
        ok: true,
        messages: vec![format!("wrote {} rows", ds.len())],
    })
}

fn logreg_config(s: &Settings) -> Result<LogRegConfig> {
    let d = LogRegConfig::default();
    Ok(LogRegConfig {
        l2: s.parse_or("l2", d.l2)?,
        epochs: s.parse_or("epochs", d.epochs)?,
        lr: s.parse_or("lr", d.lr)?,
        seed: s.parse_or("seed", d.seed)?,
    })
}

pub fn cmd_fit_base(s: &Settings) -> Result<Outcome> {
    let schema = TabularSchema {
        label_col: s.get("label_col").unwrap_or("label").to_string(),
        group_col: s.get("group_col").unwrap_or("group").to_string(),
        feature_cols: s.list_str("feature_cols"),
    };
    let ds = data::load_tabular(s.require("data")?, &schema)?;
    if ds.features.is_none() {
        return Err(Error::Schema("fit-base needs feature columns".into()));
    }
    let seed = s.parse_or("seed", 0u64)?;
    let (train, test) = data::split(&ds, s.parse_or("test_fraction", 0.3)?, seed)?;
    let with_groups = s.flag("group_in_features", true)?;
    let label_x = |d: &data::TabularDataset| -> Result<_> {
        if with_groups {
            d.features_with_groups()
        } else {
            Ok(d.features.clone().expect("checked above"))
        }
    };
    let cfg = logreg_config(s)?;
    let label_model = fit_logreg(&label_x(&train)?, &train.labels, ds.num_classes, &cfg)?;
    let raw_train = train.features.as_ref().expect("checked above");
    let group_model = fit_group_model(
        raw_train,
        &train.labels,
        &train.groups,
        ds.num_classes,
        ds.num_groups,
        &cfg,
    )?;

    let dir = s.out_dir();
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    let mut messages = Vec::new();
    if !label_model.dropped.is_empty() {
        messages.push(format!(
            "dropped zero-variance features {:?} from the label model",
            label_model.dropped
        ));
    }
    let p = dir.join("label_model.txt");
    fs::write(&p, label_model.to_text())?;
    written.push(p);
    let p = dir.join("group_model.txt");
    fs::write(&p, group_model.to_text())?;
    written.push(p);
    for (name, split) in [("train_scores.csv", &train), ("test_scores.csv", &test)] {
        let scores = label_model.predict_proba(&label_x(split)?)?;
        let gp = group_model.predict(split.features.as_ref().expect("checked above"))?;
        let p = dir.join(name);
        data::write_scores(
            &p,
            &scores,
            &split.labels,
            &split.groups,
            Some((&gp, ds.num_groups)),
        )?;
        written.push(p);
    }
    Ok(Outcome {
        written,
        ok: true,
        messages,
    })
}

/// Loads a saved label model.
pub fn load_label_model(path: impl AsRef<Path>) -> Result<LinearModel> {
    LinearModel::from_text(&fs::read_to_string(path)?)
}

/// Loads a saved group model.
pub fn load_group_model(path: impl AsRef<Path>) -> Result<GroupClassifier> {
    GroupClassifier::from_text(&fs::read_to_string(path)?)
}

/// Everything shared by `project` and `sweep`.
struct Problem {
    train: ScoreData,
    test: ScoreData,
    num_groups: usize,
    metric: FairnessMetric,
    gm_train: GroupModel,
    base_train: EvaluationReport,
    base_test: EvaluationReport,
}

fn group_probs_for(s: &Settings, d: &ScoreData, groups: usize) -> Result<Option<Vec<f64>>> {
    match s.get("group_probs").unwrap_or("observed") {
        "observed" => Ok(Some(GroupModel::indicator_probs(&d.groups, groups, d.scores.classes()))),
        "model" => match &d.group_probs {
            Some(p) => Ok(Some(p.clone())),
            None => Err(Error::Schema("score file has no group probability columns".into())),
        },
        other => Err(Error::Config(format!(
            "group_probs must be observed or model, got '{other}'"
        ))),
    }
}

fn load_problem(s: &Settings) -> Result<Problem> {
    let schema = ScoreSchema::default();
    let train = data::load_scores(s.path_or("train_scores", "train_scores.csv"), &schema)?;
    let test = data::load_scores(s.path_or("test_scores", "test_scores.csv"), &schema)?;
    if train.scores.classes() != test.scores.classes() {
        return Err(Error::Schema("train and test score files disagree on classes".into()));
    }
    let num_groups = train.num_groups.max(test.num_groups);
    let metric = FairnessMetric::parse(s.get("metric").unwrap_or("eo"))?;
    let c_n = train.scores.classes();
    let probs = group_probs_for(s, &train, num_groups)?;
    let gm_train =
        estimate_group_model(&train.groups, &train.labels, num_groups, c_n, metric, probs)?;
    let base_train =
        metrics::evaluate_scores(&train.scores, &train.labels, &train.groups, num_groups)?;
    let base_test = metrics::evaluate_scores(&test.scores, &test.labels, &test.groups, num_groups)?;
    Ok(Problem {
        train,
        test,
        num_groups,
        metric,
        gm_train,
        base_train,
        base_test,
    })
}

fn solver_config(s: &Settings, n: usize) -> Result<SolverConfig> {
    let divergence = DivergenceKind::parse(s.get("divergence").unwrap_or("kl"))?;
    let mut cfg = SolverConfig::defaults_for(n, divergence);
    cfg.rho = s.parse_or("rho", cfg.rho)?;
    match s.get("zeta") {
        None | Some("auto") => {}
        Some(_) => cfg.zeta = s.parse_or("zeta", cfg.zeta)?,
    }
    cfg.max_outer_iters = s.parse_or("max_iters", cfg.max_outer_iters)?;
    cfg.residual_tol = s.parse_or("tol", cfg.residual_tol)?;
    cfg.worker_count = s.parse_or("workers", cfg.worker_count)?;
    cfg.seed = s.parse_or("seed", cfg.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    #[serde(flatten)]
    pub evaluation: EvaluationReport,
    /// Criterion value of the soft scores with observed labels.
    pub criterion_observed: f64,
    /// Criterion value of the soft scores with base scores standing in for
    /// labels, which is what the constraints bound.
    pub criterion_surrogate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaseReports {
    pub train: SplitReport,
    pub test: SplitReport,
}

/// Contents of `report.json`. The top-level metrics are for the test split.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectReport {
    pub accuracy: f64,
    pub meo: f64,
    pub statistical_parity: f64,
    pub alpha: f64,
    pub divergence: String,
    pub metric: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub rho: f64,
    pub zeta: f64,
    pub lambda: Vec<f64>,
    pub train: SplitReport,
    pub test: SplitReport,
    pub base: BaseReports,
    pub primal_residuals: Vec<f64>,
    pub lambda_steps: Vec<f64>,
}

fn split_report(
    metric: FairnessMetric,
    h: &ScoreMatrix,
    base: &ScoreMatrix,
    d: &ScoreData,
    groups: usize,
) -> Result<SplitReport> {
    let observed = metrics::one_hot(&d.labels, h.classes())?;
    Ok(SplitReport {
        evaluation: metrics::evaluate_scores(h, &d.labels, &d.groups, groups)?,
        criterion_observed: metrics::criterion_value(metric, h, &observed, &d.groups, groups)?,
        criterion_surrogate: metrics::criterion_value(metric, h, base, &d.groups, groups)?,
    })
}

struct Fitted {
    model: ProjectedModel,
    sol: DualSolution,
    cfg: SolverConfig,
    train_proj: ScoreMatrix,
    test_proj: ScoreMatrix,
    report: ProjectReport,
}

fn fit_one(s: &Settings, p: &Problem, alpha: f64) -> Result<Fitted> {
    let cfg = solver_config(s, p.train.scores.n())?;
    let (model, sol) = ProjectedModel::fit(&p.train.scores, &p.gm_train, p.metric, alpha, &cfg)?;
    let train_proj = project_scores(&model, &p.train.scores, &p.gm_train)?;
    let test_probs = group_probs_for(s, &p.test, p.num_groups)?.expect("always set");
    let gm_test = model.group_model_for(p.test.scores.n(), test_probs)?;
    let test_proj = project_scores(&model, &p.test.scores, &gm_test)?;
    let g = p.num_groups;
    let train = split_report(p.metric, &train_proj, &p.train.scores, &p.train, g)?;
    let test = split_report(p.metric, &test_proj, &p.test.scores, &p.test, g)?;
    let base = BaseReports {
        train: split_report(p.metric, &p.train.scores, &p.train.scores, &p.train, g)?,
        test: split_report(p.metric, &p.test.scores, &p.test.scores, &p.test, g)?,
    };
    debug_assert_eq!(base.train.evaluation, p.base_train);
    debug_assert_eq!(base.test.evaluation, p.base_test);
    let report = ProjectReport {
        accuracy: test.evaluation.accuracy,
        meo: test.evaluation.meo,
        statistical_parity: test.evaluation.statistical_parity,
        alpha,
        divergence: cfg.divergence.name().to_string(),
        metric: p.metric.short_name().to_string(),
        iterations: sol.iterations,
        converged: sol.converged,
        final_residual: sol.primal_residuals.last().copied().unwrap_or(f64::NAN),
        rho: cfg.rho,
        zeta: cfg.zeta,
        lambda: sol.lambda.clone(),
        train,
        test,
        base,
        primal_residuals: sol.primal_residuals.clone(),
        lambda_steps: sol.lambda_steps.clone(),
    };
    Ok(Fitted {
        model,
        sol,
        cfg,
        train_proj,
        test_proj,
        report,
    })
}

pub fn cmd_project(s: &Settings) -> Result<Outcome> {
    let p = load_problem(s)?;
    let alpha: f64 = s
        .parse("alpha")?
        .ok_or_else(|| Error::Config("missing required setting 'alpha'".into()))?;
    let f = fit_one(s, &p, alpha)?;
    let dir = s.out_dir();
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    let path = dir.join("projected_model.json");
    fs::write(&path, f.model.to_json()? + "\n")?;
    written.push(path);
    for (name, proj, d) in [
        ("train_projected.csv", &f.train_proj, &p.train),
        ("test_projected.csv", &f.test_proj, &p.test),
    ] {
        let path = dir.join(name);
        data::write_scores(&path, proj, &d.labels, &d.groups, None)?;
        written.push(path);
    }
    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&f.report)? + "\n")?;
    written.push(path);
    let mut messages = vec![format!(
        "{} iterations, residual {:e}, test accuracy {:.4}, MEO {:.4} (base {:.4})",
        f.sol.iterations,
        f.report.final_residual,
        f.report.accuracy,
        f.report.meo,
        p.base_test.meo
    )];
    if let Ok(bound) = solver::lambda_max_bound(
        &p.train.scores,
        &constraints::build(p.metric, &p.train.scores, &p.gm_train, alpha)?,
        &f.cfg.divergence,
    ) {
        messages.push(format!("lambda l1 norm {:.6} (bound {:.6})", l1(&f.sol.lambda), bound));
    }
    if !f.sol.converged {
        messages.push(format!(
            "solver did not converge in {} iterations",
            f.sol.iterations
        ));
    }
    Ok(Outcome {
        written,
        ok: f.sol.converged,
        messages,
    })
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// One row of a trade-off curve; `None` marks a failed point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub alpha: f64,
    pub metrics: Option<(f64, f64, f64)>,
    pub runtime_s: f64,
}

impl CurvePoint {
    pub fn to_csv_row(&self) -> String {
        match self.metrics {
            Some((acc, meo, sp)) => format!(
                "{},{},{},{},{}",
                fmt9(self.alpha),
                fmt9(acc),
                fmt9(meo),
                fmt9(sp),
                fmt9(self.runtime_s)
            ),
            None => format!("{},,,,{}", fmt9(self.alpha), fmt9(self.runtime_s)),
        }
    }
}

pub fn cmd_sweep(s: &Settings) -> Result<Outcome> {
    let grid = s
        .list_f64("alpha_grid")?
        .ok_or_else(|| Error::Config("missing required setting 'alpha_grid'".into()))?;
    if grid.is_empty() || grid.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::Config("alpha_grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("alpha_grid must be strictly increasing".into()));
    }
    let timing = s.flag("timing", true)?;
    let p = load_problem(s)?;
    let mut rows = Vec::with_capacity(grid.len());
    let mut messages = Vec::new();
    let mut ok = true;
    for &alpha in &grid {
        let start = Instant::now();
        let result = fit_one(s, &p, alpha);
        let runtime = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
        match result {
            Ok(f) => {
                if !f.sol.converged {
                    ok = false;
                    messages.push(format!("alpha {alpha}: solver did not converge"));
                }
                rows.push(CurvePoint {
                    alpha,
                    metrics: Some((f.report.accuracy, f.report.meo, f.report.statistical_parity)),
                    runtime_s: runtime,
                });
            }
            Err(e) => {
                ok = false;
                messages.push(format!("alpha {alpha}: {e}"));
                rows.push(CurvePoint {
                    alpha,
                    metrics: None,
                    runtime_s: runtime,
                });
            }
        }
    }
    let dir = s.out_dir();
    ensure_dir(&dir)?;
    let path = s.path_or("curve", "curve.csv");
    ensure_parent(&path)?;
    let mut text = String::from(CURVE_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    fs::write(&path, text)?;
    Ok(Outcome {
        written: vec![path],
        ok,
        messages,
    })
}

#[derive(Debug, Clone, Serialize)]
struct EvaluateOutput {
    #[serde(flatten)]
    report: EvaluationReport,
    notes: Vec<String>,
}

pub fn cmd_evaluate(s: &Settings) -> Result<Outcome> {
    let scores_path = PathBuf::from(s.require("scores")?);
    let (scores, labels, groups, num_groups, notes) = match s.get("labels") {
        Some(lp) => {
            let (scores, notes) = data::load_score_matrix(&scores_path, None)?;
            let schema = TabularSchema {
                label_col: s.get("label_col").unwrap_or("label").to_string(),
                group_col: s.get("group_col").unwrap_or("group").to_string(),
                feature_cols: Some(Vec::new()),
            };
            let ds = data::load_tabular(lp, &schema)?;
            if ds.len() != scores.n() {
                return Err(Error::Schema(format!(
                    "{} score rows but {} label rows",
                    scores.n(),
                    ds.len()
                )));
            }
            (scores, ds.labels, ds.groups, ds.num_groups, notes)
        }
        None => {
            let d = data::load_scores(&scores_path, &ScoreSchema::default())?;
            let g = d.groups.iter().max().map_or(0, |m| m + 1);
            (d.scores, d.labels, d.groups, g, d.notes)
        }
    };
    let report = metrics::evaluate_scores(&scores, &labels, &groups, num_groups)?;
    let path = s.path_or("out", "evaluation.json");
    ensure_parent(&path)?;
    let summary = format!(
        "accuracy {:.6}, MEO {:.6}, SP {:.6}",
        report.accuracy, report.meo, report.statistical_parity
    );
    let out = EvaluateOutput { report, notes };
    fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(Outcome {
        written: vec![path],
        ok: true,
        messages: vec![summary],
    })
}
