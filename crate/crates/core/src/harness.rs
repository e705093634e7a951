//! Experiment configuration, multi-seed runs and report emission.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::engine::{OnlineRun, RunSummary, Task, TrialRecord};
use crate::error::{Error, Result};
use crate::hypotheses::{Hypothesis, RfHypothesis, RkhsHypothesis};
use crate::kernels::{FeatureMap, KernelSpec, DEFAULT_FEATURES, DEFAULT_WIDTHS};
use crate::losses::{LossFunction, LossKind};
use crate::selectors::{
    ioks_parameters, oks_parameters, okspp_schedules, IoksParameters, IoksVariant, OksParameters,
    OksPlusPlusSchedule, SelectorConfig, SelectorState, UpdateRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "oks")]
    Oks,
    #[serde(rename = "okspp")]
    OksPlusPlus,
    #[serde(rename = "ioks")]
    Ioks,
    #[serde(rename = "rf-oks")]
    RfOks,
    #[serde(rename = "rf-okspp")]
    RfOksPlusPlus,
    #[serde(rename = "rf-ioks")]
    RfIoks,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Oks,
        Algorithm::OksPlusPlus,
        Algorithm::Ioks,
        Algorithm::RfOks,
        Algorithm::RfOksPlusPlus,
        Algorithm::RfIoks,
    ];

    pub fn uses_features(self) -> bool {
        matches!(
            self,
            Algorithm::RfOks | Algorithm::RfOksPlusPlus | Algorithm::RfIoks
        )
    }

    /// Whether the fixed-parameter exponential-weights rule drives selection.
    pub fn is_fixed_rate(self) -> bool {
        matches!(self, Algorithm::Oks | Algorithm::RfOks)
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Oks => "OKS",
            Algorithm::OksPlusPlus => "OKS++",
            Algorithm::Ioks => "IOKS",
            Algorithm::RfOks => "RF-OKS",
            Algorithm::RfOksPlusPlus => "RF-OKS++",
            Algorithm::RfIoks => "RF-IOKS",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oks" => Ok(Algorithm::Oks),
            "okspp" | "oks++" => Ok(Algorithm::OksPlusPlus),
            "ioks" => Ok(Algorithm::Ioks),
            "rf-oks" => Ok(Algorithm::RfOks),
            "rf-okspp" | "rf-oks++" => Ok(Algorithm::RfOksPlusPlus),
            "rf-ioks" => Ok(Algorithm::RfIoks),
            other => Err(Error::InvalidConfig(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// A numeric setting that is either fixed or derived from the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParam", into = "RawParam")]
pub enum Param {
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawParam {
    Number(f64),
    Text(String),
}

impl TryFrom<RawParam> for Param {
    type Error = Error;

    fn try_from(raw: RawParam) -> Result<Self> {
        match raw {
            RawParam::Number(v) => Ok(Param::Value(v)),
            RawParam::Text(s) => s.parse(),
        }
    }
}

impl From<Param> for RawParam {
    fn from(p: Param) -> Self {
        match p {
            Param::Auto => RawParam::Text("auto".into()),
            Param::Value(v) => RawParam::Number(v),
        }
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Param::Auto);
        }
        s.parse::<f64>()
            .map(Param::Value)
            .map_err(|_| Error::InvalidConfig(format!("expected a number or 'auto', got '{s}'")))
    }
}

impl Param {
    fn resolve(self, derived: f64) -> f64 {
        match self {
            Param::Auto => derived,
            Param::Value(v) => v,
        }
    }

    fn positive(self, what: &str) -> Result<()> {
        match self {
            Param::Value(v) if !(v > 0.0) || !v.is_finite() => Err(Error::InvalidConfig(format!(
                "{what} must be positive, got {v}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Chosen from the file extension.
    #[default]
    Auto,
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: DataFormat,
    pub task: Task,
    /// Zero-based label column for CSV input; the last column by default.
    pub label_column: Option<usize>,
    /// Keep only the first `limit` examples of each permuted stream.
    pub limit: Option<usize>,
    pub algorithms: Vec<Algorithm>,
    /// Logistic for classification and square for regression by default.
    pub loss: Option<LossKind>,
    pub widths: Vec<f64>,
    /// Norm-ball radius; 15 for the logistic loss and 1 otherwise when auto.
    pub radius: Param,
    pub horizon: Option<usize>,
    pub delta: Param,
    pub eta: Param,
    pub lambda: Param,
    /// Multipliers applied to the fixed step size of the OKS family.
    pub lambda_grid: Vec<f64>,
    pub features: usize,
    pub seed: u64,
    pub perms: usize,
    pub ell_max: Param,
    pub oks_gradient_bound: f64,
    pub ioks_gradient_bound: Param,
    pub ioks_variant: IoksVariant,
    /// Failure probability used by the feature-count precondition.
    pub confidence: f64,
    pub snapshot_every: Option<usize>,
    /// Directory receiving one per-round CSV per run.
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            format: DataFormat::Auto,
            task: Task::Classification,
            label_column: None,
            limit: None,
            algorithms: vec![Algorithm::Oks, Algorithm::OksPlusPlus, Algorithm::Ioks],
            loss: None,
            widths: DEFAULT_WIDTHS.to_vec(),
            radius: Param::Auto,
            horizon: None,
            delta: Param::Auto,
            eta: Param::Auto,
            lambda: Param::Auto,
            lambda_grid: vec![1.0, 5.0, 10.0, 25.0],
            features: DEFAULT_FEATURES,
            seed: 0,
            perms: 10,
            ell_max: Param::Value(1.0),
            oks_gradient_bound: 1.0,
            ioks_gradient_bound: Param::Auto,
            ioks_variant: IoksVariant::Experiment,
            confidence: 0.1,
            snapshot_every: None,
            trace: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(match self.task {
            Task::Classification => LossKind::Logistic,
            Task::Regression => LossKind::Square,
        })
    }

    pub fn resolved_radius(&self) -> f64 {
        self.radius.resolve(match self.loss_kind() {
            LossKind::Logistic => 15.0,
            _ => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.widths.is_empty() || self.widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return bad(format!(
                "kernel widths must be positive, got {:?}",
                self.widths
            ));
        }
        if self.loss_kind().is_classification() != (self.task == Task::Classification) {
            return bad(format!(
                "{} loss does not fit a {:?} task",
                self.loss_kind(),
                self.task
            ));
        }
        if self.perms == 0 {
            return bad("perms must be at least 1".into());
        }
        if self.features == 0 {
            return bad("feature count must be at least 1".into());
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|m| !(*m > 0.0)) {
            return bad("lambda grid must hold positive multipliers".into());
        }
        if !(self.oks_gradient_bound > 0.0) {
            return bad("oks_gradient_bound must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)".into());
        }
        if let Param::Value(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("delta must lie in (0, 1], got {d}"));
            }
        }
        self.radius.positive("radius")?;
        self.eta.positive("eta")?;
        self.lambda.positive("lambda")?;
        self.ell_max.positive("ell_max")?;
        self.ioks_gradient_bound.positive("ioks_gradient_bound")?;
        if self.horizon == Some(0) || self.limit == Some(0) {
            return bad("horizon and limit must be positive".into());
        }
        Ok(())
    }

    /// Reads and preprocesses the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no data path configured".into()))?;
        let bytes = fs::read(path)?;
        let format = match self.format {
            DataFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
                _ => DataFormat::Libsvm,
            },
            f => f,
        };
        let mut raw = match format {
            DataFormat::Csv => data::parse_csv(&bytes, self.label_column)?,
            _ => data::parse_libsvm(&bytes)?,
        };
        raw.name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("data")
            .to_string();
        data::preprocess(&raw, self.task)
    }
}

/// Per-arm feature counts for the budgeted variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub per_arm: Vec<usize>,
    /// Feature count the approximation guarantee asks for, when defined.
    pub required: Option<f64>,
    pub precondition_met: bool,
}

/// Gives every arm `features` random features and checks them against
/// `(32/9) C0^2 U^2 B^2 ln(1/confidence)`, warning when short.
pub fn budget_emulation(
    features: usize,
    arms: usize,
    loss: &LossFunction,
    radius: f64,
    feature_bound: f64,
    confidence: f64,
) -> Result<BudgetPlan> {
    if features < 1 {
        return Err(Error::InvalidConfig(
            "feature count must be at least 1".into(),
        ));
    }
    let required = loss
        .c0
        .map(|c0| 32.0 / 9.0 * (c0 * radius * feature_bound).powi(2) * (1.0 / confidence).ln());
    let precondition_met = required.is_none_or(|r| features as f64 > r);
    if !precondition_met {
        log::warn!(
            "{features} features per arm is below the {:.0} the approximation bound asks for",
            required.unwrap_or_default()
        );
    }
    Ok(BudgetPlan {
        per_arm: vec![features; arms],
        required,
        precondition_met,
    })
}

/// Every value a run used, with `auto` settings filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParameters {
    pub horizon: usize,
    pub arms: usize,
    pub widths: Vec<f64>,
    pub radius: f64,
    pub loss: LossFunction,
    pub features: Option<usize>,
    pub lambda_multiplier: Option<f64>,
    pub oks: Option<OksParameters>,
    pub ioks: Option<IoksParameters>,
    pub ioks_ell_max: Option<f64>,
    pub okspp_initial: Option<OksPlusPlusSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub setting: String,
    pub seed: u64,
    pub parameters: ResolvedParameters,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub setting: String,
    pub dataset: String,
    pub metric_name: String,
    pub mean: f64,
    pub std: f64,
    pub mean_seconds: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub dataset: String,
    pub task: Task,
    pub loss: LossKind,
    pub rows: Vec<ResultRow>,
    pub runs: Vec<RunRecord>,
}

impl ResultTable {
    pub fn row(&self, algorithm: &str, setting: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.setting == setting)
    }
}

/// `splitmix64` finalizer, used to derive independent seeds from one.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Loads the configured dataset and runs the experiment on it.
pub fn run_experiment(config: &RunConfig) -> Result<ResultTable> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    run_on_dataset(config, &dataset)
}

/// Runs every configured algorithm (and grid point) on `perms` seeded
/// permutations of `dataset` and aggregates mean and standard deviation.
pub fn run_on_dataset(config: &RunConfig, dataset: &Dataset) -> Result<ResultTable> {
    config.validate()?;
    if dataset.task != Some(config.task) {
        return Err(Error::InvalidTask(format!(
            "dataset prepared for {:?}, config asks for {:?}",
            dataset.task, config.task
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &algorithm in &config.algorithms {
        let settings: Vec<Option<f64>> = if algorithm.is_fixed_rate() {
            config.lambda_grid.iter().map(|&m| Some(m)).collect()
        } else {
            vec![None]
        };
        let mut algo_rows = Vec::new();
        for multiplier in settings {
            let setting =
                multiplier.map_or_else(|| "default".to_string(), |m| format!("lambda x{m}"));
            let mut metrics = Vec::new();
            let mut seconds = Vec::new();
            for i in 0..config.perms {
                let seed = config.seed.wrapping_add(i as u64);
                let (record, trace) = run_once(config, dataset, algorithm, multiplier, seed)
                    .map_err(|e| Error::Run {
                        seed,
                        algorithm: format!("{algorithm} ({setting})"),
                        source: Box::new(e),
                    })?;
                if let Some(dir) = &config.trace {
                    write_trace(dir, algorithm, &setting, seed, &trace)?;
                }
                metrics.push(record.summary.metric);
                seconds.push(record.summary.seconds);
                runs.push(RunRecord {
                    setting: setting.clone(),
                    ..record
                });
            }
            let (mean, std) = mean_std(&metrics);
            algo_rows.push(ResultRow {
                algorithm: algorithm.label().to_string(),
                setting,
                dataset: dataset.name.clone(),
                metric_name: config.task.metric_name().to_string(),
                mean,
                std,
                mean_seconds: mean_std(&seconds).0,
                runs: config.perms,
            });
        }
        if algo_rows.len() > 1 {
            let best = algo_rows
                .iter()
                .min_by(|a, b| a.mean.total_cmp(&b.mean))
                .expect("non-empty grid")
                .clone();
            algo_rows.push(ResultRow {
                setting: format!("oracle-tuned ({})", best.setting),
                ..best
            });
        }
        rows.extend(algo_rows);
    }
    Ok(ResultTable {
        dataset: dataset.name.clone(),
        task: config.task,
        loss: config.loss_kind(),
        rows,
        runs,
    })
}

/// One seeded run: permute, build arms and selector, play the stream.
pub fn run_once(
    config: &RunConfig,
    dataset: &Dataset,
    algorithm: Algorithm,
    lambda_multiplier: Option<f64>,
    seed: u64,
) -> Result<(RunRecord, Vec<TrialRecord>)> {
    let order = data::permute(dataset.len(), seed);
    let mut len = dataset.len();
    if let Some(limit) = config.limit {
        len = len.min(limit);
    }
    let horizon = match config.horizon {
        Some(h) if h > len => {
            return Err(Error::InvalidConfig(format!(
                "horizon {h} exceeds the {len} available examples"
            )))
        }
        Some(h) => h,
        None => len,
    };
    let order = &order.permutation[..horizon];

    let kernels = KernelSpec::gaussian_arms(&config.widths)?;
    let arms = kernels.len();
    let radius = config.resolved_radius();
    let feature_bound = if algorithm.uses_features() {
        std::f64::consts::SQRT_2
    } else {
        1.0
    };
    let loss = LossFunction::new(config.loss_kind(), radius, feature_bound)?;

    let mut params = ResolvedParameters {
        horizon,
        arms,
        widths: config.widths.clone(),
        radius,
        loss,
        features: None,
        lambda_multiplier,
        oks: None,
        ioks: None,
        ioks_ell_max: None,
        okspp_initial: None,
    };

    let selector_config = match algorithm {
        Algorithm::Oks | Algorithm::RfOks => {
            let ell_max = config.ell_max.resolve(loss.ell_max);
            let mut p = oks_parameters(arms, horizon, config.oks_gradient_bound, ell_max)?;
            p.delta = config.delta.resolve(p.delta);
            p.eta = config.eta.resolve(p.eta);
            p.lambda = config.lambda.resolve(p.lambda) * lambda_multiplier.unwrap_or(1.0);
            params.oks = Some(p);
            SelectorConfig::Oks(p)
        }
        Algorithm::OksPlusPlus | Algorithm::RfOksPlusPlus => {
            if config.delta != Param::Auto
                || config.eta != Param::Auto
                || config.lambda != Param::Auto
            {
                log::warn!(
                    "{algorithm} adapts its own rates; fixed delta, eta and lambda are ignored"
                );
            }
            SelectorConfig::OksPlusPlus { radius, loss }
        }
        Algorithm::Ioks | Algorithm::RfIoks => {
            let ell_max = config.ell_max.resolve(loss.ell_max);
            let g1 = config.ioks_gradient_bound.resolve(loss.g_rkhs);
            let mut p = ioks_parameters(arms, horizon, radius, g1, ell_max, config.ioks_variant)?;
            p.delta = config.delta.resolve(p.delta);
            p.eta_init = config.eta.resolve(p.eta_init);
            params.ioks = Some(p);
            params.ioks_ell_max = Some(ell_max);
            SelectorConfig::Ioks {
                params: p,
                radius,
                ell_max,
            }
        }
    };
    let selector = SelectorState::new(arms, horizon, selector_config)?;
    if let UpdateRule::OksPlusPlus(state) = selector.rule() {
        params.okspp_initial = Some(okspp_schedules(state, arms));
    }

    // Unprojected for the fixed-rate family, whose analysis needs no ball.
    let arm_radius = if algorithm.is_fixed_rate() {
        f64::INFINITY
    } else {
        radius
    };
    let run_seed = derive_seed(seed, 1);
    let (summary, trace) = if algorithm.uses_features() {
        budget_emulation(
            config.features,
            arms,
            &loss,
            radius,
            feature_bound,
            config.confidence,
        )?;
        params.features = Some(config.features);
        let hyps = kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let map = FeatureMap::sample(
                    k,
                    dataset.dim,
                    config.features,
                    derive_seed(seed, 2 + i as u64),
                )?;
                RfHypothesis::new(map, arm_radius)
            })
            .collect::<Result<Vec<_>>>()?;
        play(config, dataset, order, hyps, selector, loss, run_seed)?
    } else {
        let hyps = kernels
            .iter()
            .map(|&k| RkhsHypothesis::new(k, dataset.dim, arm_radius))
            .collect::<Result<Vec<_>>>()?;
        play(config, dataset, order, hyps, selector, loss, run_seed)?
    };
    Ok((
        RunRecord {
            algorithm,
            setting: String::new(),
            seed,
            parameters: params,
            summary,
        },
        trace,
    ))
}

fn play<H: Hypothesis>(
    config: &RunConfig,
    dataset: &Dataset,
    order: &[usize],
    arms: Vec<H>,
    selector: SelectorState,
    loss: LossFunction,
    seed: u64,
) -> Result<(RunSummary, Vec<TrialRecord>)> {
    let mut run = OnlineRun::new(arms, selector, loss, config.task, seed)?;
    if let Some(every) = config.snapshot_every {
        run = run.with_snapshots(every);
    }
    let summary = run.run_stream(dataset.stream(order))?;
    let trace = if config.trace.is_some() {
        run.into_records()
    } else {
        Vec::new()
    };
    Ok((summary, trace))
}

fn write_trace(
    dir: &Path,
    algorithm: Algorithm,
    setting: &str,
    seed: u64,
    records: &[TrialRecord],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let slug: String = format!("{}_{setting}_{seed}", algorithm.label())
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    let path = dir.join(format!("{slug}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(e.into()))?;
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record([
        "round",
        "arm",
        "prediction",
        "label",
        "loss",
        "mistake",
        "nanos",
        "p",
    ])
    .map_err(csv_err)?;
    for r in records {
        let p =
            r.p.as_ref()
                .map(|p| {
                    p.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default();
        w.write_record([
            r.round.to_string(),
            r.arm.to_string(),
            r.prediction.to_string(),
            r.label.to_string(),
            r.loss.to_string(),
            u8::from(r.mistake).to_string(),
            r.nanos.to_string(),
            p,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// AMR as a percentage with two decimals; AL with four.
pub fn format_metric(metric_name: &str, value: f64) -> String {
    if metric_name == "AMR" {
        format!("{:.2}", value * 100.0)
    } else {
        format!("{value:.4}")
    }
}

/// Plain-text table with one row per algorithm and setting. The time column
/// is optional so that stored reports stay reproducible.
pub fn render_table(table: &ResultTable, with_time: bool) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::InvalidInput("result table has no rows".into()));
    }
    let unit = if table.task == Task::Classification {
        " (%)"
    } else {
        ""
    };
    let mut header = vec![
        "algorithm".to_string(),
        "setting".to_string(),
        format!("{}{unit}", table.task.metric_name()),
        "std".to_string(),
    ];
    if with_time {
        header.push("time (s)".to_string());
    }
    let body: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.algorithm.clone(),
                r.setting.clone(),
                format_metric(&r.metric_name, r.mean),
                format_metric(&r.metric_name, r.std),
            ];
            if with_time {
                cells.push(format!("{:.3}", r.mean_seconds));
            }
            cells
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = format!(
        "dataset: {}  loss: {}  runs: {}\n",
        table.dataset, table.loss, table.rows[0].runs
    );
    out.push_str(&line(&header));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    Ok(out)
}

/// Wall-clock times, kept apart from the reproducible results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub algorithm: Algorithm,
    pub setting: String,
    pub seed: u64,
    pub seconds: f64,
}

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("seconds");
            map.remove("mean_seconds");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Writes `results.json` and `results.txt` (both free of timing, hence
/// byte-reproducible) plus `timings.json` into `dir`. Returns the table with
/// its time column for display.
pub fn emit_report(table: &ResultTable, dir: &Path) -> Result<String> {
    let display = render_table(table, true)?;
    let mut json = serde_json::to_value(table)?;
    strip_timing(&mut json);
    let timings: Vec<TimingEntry> = table
        .runs
        .iter()
        .map(|r| TimingEntry {
            algorithm: r.algorithm,
            setting: r.setting.clone(),
            seed: r.seed,
            seconds: r.summary.seconds,
        })
        .collect();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(&json)? + "\n",
    )?;
    fs::write(dir.join("results.txt"), render_table(table, false)?)?;
    fs::write(
        dir.join("timings.json"),
        serde_json::to_string_pretty(&timings)? + "\n",
    )?;
    Ok(display)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(task: Task) -> Dataset {
        let raw = Dataset::new(
            "toy",
            (0..40)
                .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
                .collect(),
            (0..40)
                .map(|i| {
                    if task == Task::Classification {
                        (i % 2) as f64
                    } else {
                        (i as f64 * 0.2).sin()
                    }
                })
                .collect(),
        )
        .unwrap();
        data::preprocess(&raw, task).unwrap()
    }

    #[test]
    fn metric_formatting() {
        assert_eq!(format_metric("AMR", 0.17884), "17.88");
        assert_eq!(format_metric("AL", 0.00456), "0.0046");
    }

    #[test]
    fn params_parse_from_toml() {
        let cfg = RunConfig::from_toml(
            "algorithms = [\"okspp\", \"rf-ioks\"]\nradius = \"auto\"\neta = 0.5\nperms = 2\n",
        )
        .unwrap();
        assert_eq!(
            cfg.algorithms,
            vec![Algorithm::OksPlusPlus, Algorithm::RfIoks]
        );
        assert_eq!(cfg.eta, Param::Value(0.5));
        assert_eq!(cfg.resolved_radius(), 15.0);
        assert!(RunConfig::from_toml("radius = \"big\"").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("task = \"regression\"\nloss = \"logistic\"").is_err());
    }

    #[test]
    fn budget_rejects_zero_and_warns_when_short() {
        let loss = LossFunction::new(LossKind::Logistic, 15.0, 2f64.sqrt()).unwrap();
        assert!(matches!(
            budget_emulation(0, 3, &loss, 15.0, 2f64.sqrt(), 0.1),
            Err(Error::InvalidConfig(_))
        ));
        let plan = budget_emulation(400, 3, &loss, 15.0, 2f64.sqrt(), 0.1).unwrap();
        assert_eq!(plan.per_arm, vec![400; 3]);
        assert!(!plan.precondition_met);
        let abs = LossFunction::new(LossKind::Absolute, 1.0, 1.0).unwrap();
        assert!(
            budget_emulation(1, 1, &abs, 1.0, 1.0, 0.1)
                .unwrap()
                .precondition_met
        );
    }

    #[test]
    fn grid_rows_and_oracle_tuned() {
        let cfg = RunConfig {
            algorithms: vec![Algorithm::Oks, Algorithm::Ioks],
            widths: vec![0.5, 2.0],
            perms: 2,
            ..RunConfig::default()
        };
        let table = run_on_dataset(&cfg, &toy(Task::Classification)).unwrap();
        assert_eq!(table.rows.len(), 4 + 1 + 1);
        assert_eq!(table.runs.len(), 4 * 2 + 2);
        let tuned = table
            .rows
            .iter()
            .find(|r| r.setting.starts_with("oracle-tuned"))
            .unwrap();
        let best = table.rows[..4]
            .iter()
            .map(|r| r.mean)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(tuned.mean, best);
        assert!(table.runs.iter().all(|r| r.parameters.horizon == 40));
    }

    #[test]
    fn regression_runs_every_algorithm() {
        let cfg = RunConfig {
            task: Task::Regression,
            algorithms: Algorithm::ALL.to_vec(),
            widths: vec![1.0],
            features: 16,
            perms: 1,
            lambda_grid: vec![1.0],
            ..RunConfig::default()
        };
        let table = run_on_dataset(&cfg, &toy(Task::Regression)).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert!(table
            .rows
            .iter()
            .all(|r| r.mean.is_finite() && r.metric_name == "AL"));
    }

    #[test]
    fn mismatched_task_and_bad_horizon() {
        let cfg = RunConfig::default();
        assert!(run_on_dataset(&cfg, &toy(Task::Regression)).is_err());
        let cfg = RunConfig {
            horizon: Some(1000),
            perms: 1,
            ..RunConfig::default()
        };
        let err = run_on_dataset(&cfg, &toy(Task::Classification)).unwrap_err();
        assert!(matches!(err, Error::Run { seed: 0, .. }), "{err}");
    }

    #[test]
    fn empty_table_is_an_error() {
        let table = ResultTable {
            dataset: "x".into(),
            task: Task::Regression,
            loss: LossKind::Square,
            rows: vec![],
            runs: vec![],
        };
        assert!(render_table(&table, false).is_err());
    }
}
