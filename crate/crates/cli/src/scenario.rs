//! Scenario files: a family, a task list and the parameters of each task.

use orbitlab_core::builtins;
use orbitlab_core::expr::Expr;
use orbitlab_core::field::FieldFamily;
use orbitlab_core::multivector::RANK_TOL;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const SCENARIO_SCHEMA: &str = "orbitlab.scenario/1";

/// A schema violation, located by a JSON pointer into the scenario.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{pointer}: {message}")]
pub struct SchemaError {
    pub pointer: String,
    pub message: String,
}

impl SchemaError {
    pub fn at(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        let pointer = pointer.into();
        SchemaError {
            pointer: if pointer.is_empty() { "/".into() } else { pointer },
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub family: FamilySpec,
    /// Default seed for stochastic tasks without their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub tasks: Vec<TaskSpec>,
}

/// Either `{"builtin": name}` or `{"dim": n, "fields": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskSpec {
    Rank(RankTask),
    Involutivity(InvolutivityTask),
    Flow(FlowTask),
    Orbit(OrbitTask),
    Chart(ChartTask),
    Ccdist(CcdistTask),
    Stability(StabilityTask),
    Report(ReportTask),
}

fn rank_tol() -> f64 {
    RANK_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub points: Vec<Vec<f64>>,
    #[serde(default = "rank_tol")]
    pub tol_rel: f64,
    /// Expected ranks; without it the task only reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvolutivityTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "box")]
    pub bounds: BoxSpec,
    #[serde(default = "InvolutivityTask::default_samples")]
    pub samples: usize,
    #[serde(default = "InvolutivityTask::default_threshold")]
    pub coeff_threshold: f64,
    #[serde(default = "InvolutivityTask::default_residual")]
    pub residual_tol: f64,
    /// Sup of `|c|` on shrinking boxes around a suspected blow-up point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend: Option<TrendSpec>,
    /// Friedrichs ladder for one pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderSpec>,
}

impl InvolutivityTask {
    fn default_samples() -> usize {
        2000
    }
    fn default_threshold() -> f64 {
        1e6
    }
    fn default_residual() -> f64 {
        1e-8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendSpec {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    #[serde(default = "TrendSpec::default_samples")]
    pub samples: usize,
}

impl TrendSpec {
    fn default_samples() -> usize {
        256
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    #[serde(rename = "box")]
    pub bounds: BoxSpec,
    /// Largest first; defaults to the standard ladder scaled to the box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default = "LadderSpec::default_points")]
    pub points: usize,
    /// One-based field indices.
    #[serde(default = "LadderSpec::default_pair")]
    pub pair: [usize; 2],
}

impl LadderSpec {
    fn default_points() -> usize {
        64
    }
    fn default_pair() -> [usize; 2] {
        [1, 2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomLaws {
    pub horizon: f64,
    #[serde(default = "RandomLaws::default_segments")]
    pub segments: usize,
    #[serde(default = "RandomLaws::default_count")]
    pub count: usize,
}

impl RandomLaws {
    fn default_segments() -> usize {
        4
    }
    fn default_count() -> usize {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomLaws>,
    /// Integrator step; defaults to the horizon-based choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub x0: Vec<f64>,
    #[serde(default = "OrbitTask::default_h_mov")]
    pub h_mov: f64,
    #[serde(default = "OrbitTask::default_depth")]
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branching: Option<usize>,
    #[serde(default = "OrbitTask::default_h")]
    pub h: f64,
    #[serde(default = "OrbitTask::default_max_points")]
    pub max_points: usize,
    #[serde(default = "rank_tol")]
    pub tol_rel: f64,
    /// Also compare primitive and general move clouds.
    #[serde(default)]
    pub sussmann: bool,
}

impl OrbitTask {
    fn default_h_mov() -> f64 {
        0.1
    }
    fn default_depth() -> usize {
        6
    }
    fn default_h() -> f64 {
        1e-4
    }
    fn default_max_points() -> usize {
        400
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub sigma: f64,
    #[serde(default = "SliceSpec::default_probes")]
    pub probes: usize,
    #[serde(default = "SliceSpec::default_h")]
    pub h: f64,
    #[serde(default = "SliceSpec::default_tol")]
    pub tol: f64,
}

impl SliceSpec {
    fn default_probes() -> usize {
        30
    }
    fn default_h() -> f64 {
        1e-4
    }
    fn default_tol() -> f64 {
        1e-5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub x0: Vec<f64>,
    /// Forces the chart dimension instead of the pointwise rank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Fixed radius δ; otherwise chosen from the block condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default = "ChartTask::default_samples")]
    pub samples: usize,
    #[serde(default = "ChartTask::default_grid")]
    pub image_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<SliceSpec>,
}

impl ChartTask {
    fn default_samples() -> usize {
        16
    }
    fn default_grid() -> usize {
        11
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcdistTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `[x, y]` endpoint pairs.
    pub pairs: Vec<[Vec<f64>; 2]>,
    #[serde(default = "CcdistTask::default_segments")]
    pub segments: usize,
    #[serde(default = "CcdistTask::default_restarts")]
    pub restarts: usize,
    #[serde(default = "CcdistTask::default_h")]
    pub h: f64,
    #[serde(default = "CcdistTask::default_tol")]
    pub tol: f64,
    #[serde(default = "CcdistTask::default_max_horizon")]
    pub max_horizon: f64,
}

impl CcdistTask {
    fn default_segments() -> usize {
        4
    }
    fn default_restarts() -> usize {
        4
    }
    fn default_h() -> f64 {
        1e-2
    }
    fn default_tol() -> f64 {
        1e-4
    }
    fn default_max_horizon() -> f64 {
        20.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub x0: Vec<f64>,
    /// Defaults to the pointwise rank at `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default = "StabilityTask::default_paths")]
    pub paths: usize,
    #[serde(default = "StabilityTask::default_horizon")]
    pub horizon: f64,
    #[serde(default = "StabilityTask::default_segments")]
    pub segments: usize,
    #[serde(default = "StabilityTask::default_h")]
    pub h: f64,
    /// Runs the single-wedge drift check with this η on the first path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl StabilityTask {
    fn default_paths() -> usize {
        50
    }
    fn default_horizon() -> f64 {
        0.25
    }
    fn default_segments() -> usize {
        4
    }
    fn default_h() -> f64 {
        1e-3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl TaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Rank(_) => "rank",
            TaskSpec::Involutivity(_) => "involutivity",
            TaskSpec::Flow(_) => "flow",
            TaskSpec::Orbit(_) => "orbit",
            TaskSpec::Chart(_) => "chart",
            TaskSpec::Ccdist(_) => "ccdist",
            TaskSpec::Stability(_) => "stability",
            TaskSpec::Report(_) => "report",
        }
    }

    fn explicit_name(&self) -> Option<&str> {
        match self {
            TaskSpec::Rank(t) => t.name.as_deref(),
            TaskSpec::Involutivity(t) => t.name.as_deref(),
            TaskSpec::Flow(t) => t.name.as_deref(),
            TaskSpec::Orbit(t) => t.name.as_deref(),
            TaskSpec::Chart(t) => t.name.as_deref(),
            TaskSpec::Ccdist(t) => t.name.as_deref(),
            TaskSpec::Stability(t) => t.name.as_deref(),
            TaskSpec::Report(t) => t.name.as_deref(),
        }
    }

    /// The task's name, or `<kind>-<index>` when unnamed.
    pub fn name(&self, index: usize) -> String {
        self.explicit_name().map_or_else(|| format!("{}-{index}", self.kind()), str::to_string)
    }

    fn seed_slot(&mut self) -> Option<&mut Option<u64>> {
        match self {
            TaskSpec::Involutivity(t) => Some(&mut t.seed),
            TaskSpec::Flow(t) => Some(&mut t.seed),
            TaskSpec::Orbit(t) => Some(&mut t.seed),
            TaskSpec::Chart(t) => Some(&mut t.seed),
            TaskSpec::Ccdist(t) => Some(&mut t.seed),
            TaskSpec::Stability(t) => Some(&mut t.seed),
            TaskSpec::Rank(_) | TaskSpec::Report(_) => None,
        }
    }

    /// Whether the task draws random numbers and so needs a seed.
    pub fn is_stochastic(&self) -> bool {
        match self {
            TaskSpec::Flow(t) => t.random.is_some(),
            TaskSpec::Rank(_) | TaskSpec::Report(_) => false,
            _ => true,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            TaskSpec::Involutivity(t) => t.seed,
            TaskSpec::Flow(t) => t.seed,
            TaskSpec::Orbit(t) => t.seed,
            TaskSpec::Chart(t) => t.seed,
            TaskSpec::Ccdist(t) => t.seed,
            TaskSpec::Stability(t) => t.seed,
            TaskSpec::Rank(_) | TaskSpec::Report(_) => None,
        }
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: String,
    name: String,
    #[serde(default)]
    description: Option<String>,
    family: FamilySpec,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out: Option<String>,
    tasks: Vec<serde_json::Value>,
}

fn located<T: serde::de::DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, SchemaError> {
    serde_path_to_error::deserialize(value).map_err(|e| SchemaError::at(format!("{prefix}{}", pointer_of(e.path())), e.inner()))
}

const TASK_KINDS: [&str; 8] = ["rank", "involutivity", "flow", "orbit", "chart", "ccdist", "stability", "report"];

// Tagged enums buffer their content and lose the path, so dispatch by hand.
fn parse_task(value: serde_json::Value, at: &str) -> Result<TaskSpec, SchemaError> {
    let serde_json::Value::Object(mut map) = value else {
        return Err(SchemaError::at(at, "task must be an object"));
    };
    let kind = match map.remove("task") {
        Some(serde_json::Value::String(s)) => s,
        Some(_) => return Err(SchemaError::at(format!("{at}/task"), "must be a string")),
        None => return Err(SchemaError::at(format!("{at}/task"), format!("missing; one of {}", TASK_KINDS.join(", ")))),
    };
    let body = serde_json::Value::Object(map);
    Ok(match kind.as_str() {
        "rank" => TaskSpec::Rank(located(body, at)?),
        "involutivity" => TaskSpec::Involutivity(located(body, at)?),
        "flow" => TaskSpec::Flow(located(body, at)?),
        "orbit" => TaskSpec::Orbit(located(body, at)?),
        "chart" => TaskSpec::Chart(located(body, at)?),
        "ccdist" => TaskSpec::Ccdist(located(body, at)?),
        "stability" => TaskSpec::Stability(located(body, at)?),
        "report" => TaskSpec::Report(located(body, at)?),
        other => {
            return Err(SchemaError::at(
                format!("{at}/task"),
                format!("unknown task `{other}`; one of {}", TASK_KINDS.join(", ")),
            ))
        }
    })
}

/// A parsed and validated scenario with its family built.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub family: FieldFamily,
}

impl Loaded {
    /// Canonical JSON of the effective scenario, with defaults filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.scenario).expect("scenario serializes")
    }
}

/// Parses scenario text. `seed_override` replaces every seed, including
/// the defaults of unseeded stochastic tasks.
pub fn load_str(text: &str, seed_override: Option<u64>) -> Result<Loaded, SchemaError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SchemaError::at("", format!("invalid JSON: {e}")))?;
    match value.get("schema") {
        Some(serde_json::Value::String(s)) if s == SCENARIO_SCHEMA => {}
        Some(serde_json::Value::String(s)) => {
            return Err(SchemaError::at("/schema", format!("unsupported schema `{s}`, expected `{SCENARIO_SCHEMA}`")))
        }
        Some(_) => return Err(SchemaError::at("/schema", "must be a string")),
        None => return Err(SchemaError::at("/schema", "missing field")),
    }
    let raw: RawScenario = located(value, "")?;
    let tasks = raw
        .tasks
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_task(v, &format!("/tasks/{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut scenario = Scenario {
        schema: raw.schema,
        name: raw.name,
        description: raw.description,
        family: raw.family,
        seed: raw.seed,
        out: raw.out,
        tasks,
    };
    if let Some(seed) = seed_override {
        scenario.seed = Some(seed);
        for task in &mut scenario.tasks {
            if let Some(slot) = task.seed_slot() {
                *slot = Some(seed);
            }
        }
    }
    let family = build_family(&scenario.family)?;
    validate(&mut scenario, &family)?;
    Ok(Loaded { scenario, family })
}

fn build_family(spec: &FamilySpec) -> Result<FieldFamily, SchemaError> {
    match (&spec.builtin, spec.dim, &spec.fields) {
        (Some(name), None, None) => builtins::builtin(name).ok_or_else(|| {
            let known: Vec<&str> = builtins::list_builtins().into_iter().map(|(n, _)| n).collect();
            SchemaError::at("/family/builtin", format!("unknown builtin `{name}`; known: {}", known.join(", ")))
        }),
        (None, Some(dim), Some(fields)) => {
            if dim == 0 {
                return Err(SchemaError::at("/family/dim", "dimension must be positive"));
            }
            if fields.is_empty() {
                return Err(SchemaError::at("/family/fields", "need at least one field"));
            }
            let mut components = Vec::with_capacity(fields.len());
            for (j, field) in fields.iter().enumerate() {
                if field.len() != dim {
                    return Err(SchemaError::at(
                        format!("/family/fields/{j}"),
                        format!("{} components for dimension {dim}", field.len()),
                    ));
                }
                let mut parsed = Vec::with_capacity(dim);
                for (alpha, text) in field.iter().enumerate() {
                    let at = format!("/family/fields/{j}/{alpha}");
                    let expr = Expr::parse(text).map_err(|e| SchemaError::at(&at, e))?;
                    if expr.max_variable() > dim {
                        return Err(SchemaError::at(
                            &at,
                            format!("uses x{} but the dimension is {dim}", expr.max_variable()),
                        ));
                    }
                    parsed.push(expr);
                }
                components.push(parsed);
            }
            let name = spec.name.clone().unwrap_or_else(|| "custom".into());
            FieldFamily::new(name, dim, components).map_err(|e| SchemaError::at("/family", e))
        }
        _ => Err(SchemaError::at("/family", "give either `builtin` or both `dim` and `fields`")),
    }
}

struct Checker<'a> {
    dim: usize,
    q: usize,
    base: &'a str,
}

impl Checker<'_> {
    fn point(&self, field: &str, x: &[f64]) -> Result<(), SchemaError> {
        if x.len() != self.dim {
            return Err(SchemaError::at(
                format!("{}/{field}", self.base),
                format!("point has {} coordinates, family dimension is {}", x.len(), self.dim),
            ));
        }
        Ok(())
    }

    fn positive(&self, field: &str, v: f64) -> Result<(), SchemaError> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SchemaError::at(format!("{}/{field}", self.base), "must be positive and finite"));
        }
        Ok(())
    }

    fn nonzero(&self, field: &str, v: usize) -> Result<(), SchemaError> {
        if v == 0 {
            return Err(SchemaError::at(format!("{}/{field}", self.base), "must be at least 1"));
        }
        Ok(())
    }

    fn bounds(&self, field: &str, b: &BoxSpec) -> Result<(), SchemaError> {
        let at = format!("{}/{field}", self.base);
        if b.lo.len() != self.dim || b.hi.len() != self.dim {
            return Err(SchemaError::at(at, format!("box corners must have {} coordinates", self.dim)));
        }
        if b.lo.iter().zip(&b.hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(SchemaError::at(at, "need lo < hi in every coordinate"));
        }
        Ok(())
    }

    fn rank(&self, field: &str, p: usize) -> Result<(), SchemaError> {
        if p == 0 || p > self.dim.min(self.q) {
            return Err(SchemaError::at(
                format!("{}/{field}", self.base),
                format!("p must lie in 1..={}", self.dim.min(self.q)),
            ));
        }
        Ok(())
    }
}

fn validate(scenario: &mut Scenario, family: &FieldFamily) -> Result<(), SchemaError> {
    if scenario.tasks.is_empty() {
        return Err(SchemaError::at("/tasks", "need at least one task"));
    }
    let default_seed = scenario.seed;
    let mut names = std::collections::BTreeSet::new();
    for (i, task) in scenario.tasks.iter_mut().enumerate() {
        let base = format!("/tasks/{i}");
        if !names.insert(task.name(i)) {
            return Err(SchemaError::at(format!("{base}/name"), format!("duplicate task name `{}`", task.name(i))));
        }
        let name = task.name(i);
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(SchemaError::at(format!("{base}/name"), "names use ASCII letters, digits, `-` and `_`"));
        }
        if task.is_stochastic() {
            let slot = task.seed_slot().expect("stochastic tasks carry a seed");
            if slot.is_none() {
                *slot = default_seed;
            }
            if slot.is_none() {
                return Err(SchemaError::at(format!("{base}/seed"), "stochastic task needs a seed (here, at the top level, or via --seed)"));
            }
        }
        let c = Checker {
            dim: family.dim(),
            q: family.count(),
            base: &base,
        };
        match task {
            TaskSpec::Rank(t) => {
                if t.points.is_empty() {
                    return Err(SchemaError::at(format!("{base}/points"), "need at least one point"));
                }
                for (k, x) in t.points.iter().enumerate() {
                    c.point(&format!("points/{k}"), x)?;
                }
                c.positive("tol_rel", t.tol_rel)?;
                if let Some(expect) = &t.expect {
                    if expect.len() != t.points.len() {
                        return Err(SchemaError::at(format!("{base}/expect"), "one expected rank per point"));
                    }
                }
            }
            TaskSpec::Involutivity(t) => {
                c.bounds("box", &t.bounds)?;
                c.nonzero("samples", t.samples)?;
                c.positive("coeff_threshold", t.coeff_threshold)?;
                c.positive("residual_tol", t.residual_tol)?;
                if family.count() < 2 {
                    return Err(SchemaError::at(base, "involutivity needs at least two fields"));
                }
                if let Some(trend) = &t.trend {
                    c.point("trend/center", &trend.center)?;
                    c.nonzero("trend/samples", trend.samples)?;
                    if trend.radii.is_empty() {
                        return Err(SchemaError::at(format!("{base}/trend/radii"), "need at least one radius"));
                    }
                    for (k, r) in trend.radii.iter().enumerate() {
                        c.positive(&format!("trend/radii/{k}"), *r)?;
                    }
                }
                if let Some(ladder) = &t.ladder {
                    c.bounds("ladder/box", &ladder.bounds)?;
                    c.nonzero("ladder/points", ladder.points)?;
                    if let Some(sigmas) = &ladder.sigmas {
                        if sigmas.is_empty() {
                            return Err(SchemaError::at(format!("{base}/ladder/sigmas"), "need at least one radius"));
                        }
                        for (k, s) in sigmas.iter().enumerate() {
                            c.positive(&format!("ladder/sigmas/{k}"), *s)?;
                        }
                    }
                    let [j, k] = ladder.pair;
                    if j == 0 || k == 0 || j > family.count() || k > family.count() || j == k {
                        return Err(SchemaError::at(
                            format!("{base}/ladder/pair"),
                            format!("need two distinct field indices in 1..={}", family.count()),
                        ));
                    }
                }
            }
            TaskSpec::Flow(t) => {
                c.point("x0", &t.x0)?;
                if let Some(h) = t.h {
                    c.positive("h", h)?;
                }
                match (&t.law, &t.random) {
                    (Some(law), None) => {
                        if law.values.iter().any(|u| u.len() != family.count()) {
                            return Err(SchemaError::at(
                                format!("{base}/law/values"),
                                format!("each control value needs {} entries", family.count()),
                            ));
                        }
                        orbitlab_core::flows::ControlLaw::new(law.breakpoints.clone(), law.values.clone())
                            .map_err(|e| SchemaError::at(format!("{base}/law"), e))?;
                    }
                    (None, Some(r)) => {
                        c.positive("random/horizon", r.horizon)?;
                        c.nonzero("random/segments", r.segments)?;
                        c.nonzero("random/count", r.count)?;
                    }
                    _ => return Err(SchemaError::at(base, "give exactly one of `law` and `random`")),
                }
            }
            TaskSpec::Orbit(t) => {
                c.point("x0", &t.x0)?;
                c.positive("h_mov", t.h_mov)?;
                c.positive("h", t.h)?;
                c.positive("tol_rel", t.tol_rel)?;
                c.nonzero("max_points", t.max_points)?;
                if let Some(b) = t.branching {
                    if b < 2 * family.count() {
                        return Err(SchemaError::at(format!("{base}/branching"), "branching must cover the 2q primitive moves"));
                    }
                }
            }
            TaskSpec::Chart(t) => {
                c.point("x0", &t.x0)?;
                if let Some(p) = t.p {
                    c.rank("p", p)?;
                }
                if let Some(r) = t.radius {
                    c.positive("radius", r)?;
                }
                c.nonzero("samples", t.samples)?;
                if t.image_grid < 2 {
                    return Err(SchemaError::at(format!("{base}/image_grid"), "must be at least 2"));
                }
                if let Some(s) = &t.slice {
                    c.positive("slice/sigma", s.sigma)?;
                    c.nonzero("slice/probes", s.probes)?;
                    c.positive("slice/h", s.h)?;
                    c.positive("slice/tol", s.tol)?;
                }
            }
            TaskSpec::Ccdist(t) => {
                if t.pairs.is_empty() {
                    return Err(SchemaError::at(format!("{base}/pairs"), "need at least one pair"));
                }
                for (k, [x, y]) in t.pairs.iter().enumerate() {
                    c.point(&format!("pairs/{k}/0"), x)?;
                    c.point(&format!("pairs/{k}/1"), y)?;
                }
                c.nonzero("segments", t.segments)?;
                c.positive("h", t.h)?;
                c.positive("tol", t.tol)?;
                c.positive("max_horizon", t.max_horizon)?;
            }
            TaskSpec::Stability(t) => {
                c.point("x0", &t.x0)?;
                if let Some(p) = t.p {
                    c.rank("p", p)?;
                }
                c.nonzero("paths", t.paths)?;
                c.positive("horizon", t.horizon)?;
                c.nonzero("segments", t.segments)?;
                c.positive("h", t.h)?;
                if let Some(eta) = t.eta {
                    if !(eta > 0.0 && eta < 1.0) {
                        return Err(SchemaError::at(format!("{base}/eta"), "η must lie in (0, 1)"));
                    }
                }
            }
            TaskSpec::Report(_) => {}
        }
    }
    Ok(())
}
