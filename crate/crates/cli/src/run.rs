//! Executes scenario tasks in order and collects their reports.

use crate::scenario::*;
use nalgebra::DVector;
use orbitlab_core::charts::{self, Chart, BETA_TOL, CHART_STEP, TANGENCY_TOL};
use orbitlab_core::error::{Error, Result};
use orbitlab_core::field::{Bounds, FieldFamily};
use orbitlab_core::flows::{self, ControlLaw};
use orbitlab_core::involutivity::{domain_audit, nested_box_trend};
use orbitlab_core::mollify::{friedrichs_residual, ladder_audit, scaled_ladder};
use orbitlab_core::multivector::{lambda_p, pointwise_rank, RANK_TOL};
use orbitlab_core::orbits::{self, CcParams, OrbitParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const REPORT_SCHEMA: &str = "orbitlab.report/1";

/// Largest reintegration error accepted for orbit witnesses.
pub const WITNESS_TOL: f64 = 1e-6;

/// Growth of the nested-box sup that counts as a blow-up.
pub const BLOWUP_GROWTH: f64 = 2.0;

/// Flags copied into the JSON metrics; the CSV artifact has all stored ones.
const FLAGS_IN_METRICS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

impl Verdict {
    fn from_pass(pass: bool) -> Self {
        if pass { Verdict::Pass } else { Verdict::Fail }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub name: String,
    pub task: String,
    pub verdict: Verdict,
    pub metrics: Value,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub verdict: Verdict,
    pub tasks: Vec<TaskReport>,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct AuditBundle {
    pub report: Report,
    /// `(relative path, contents)` of each CSV data series.
    pub artifacts: Vec<(String, String)>,
    /// True if some task stopped on a diverging flow.
    pub diverged: bool,
}

impl AuditBundle {
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn all_pass(&self) -> bool {
        self.report.verdict == Verdict::Pass
    }

    /// Writes `report.json` and every artifact under `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report_json())?;
        for (path, contents) in &self.artifacts {
            std::fs::write(dir.join(path), contents)?;
        }
        Ok(())
    }
}

struct Outcome {
    pass: bool,
    metrics: Value,
    artifacts: Vec<(String, String)>,
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Runs every task of a loaded scenario in order.
pub fn run_scenario(loaded: &Loaded) -> AuditBundle {
    let family = &loaded.family;
    let mut tasks: Vec<TaskReport> = Vec::new();
    let mut artifacts = Vec::new();
    let mut diverged = false;
    for (i, spec) in loaded.scenario.tasks.iter().enumerate() {
        let name = spec.name(i);
        let result = match spec {
            TaskSpec::Rank(t) => rank_task(family, t),
            TaskSpec::Involutivity(t) => involutivity_task(family, t, &name),
            TaskSpec::Flow(t) => flow_task(family, t, &name),
            TaskSpec::Orbit(t) => orbit_task(family, t, &name),
            TaskSpec::Chart(t) => chart_task(family, t, &name),
            TaskSpec::Ccdist(t) => ccdist_task(family, t, &name),
            TaskSpec::Stability(t) => stability_task(family, t, &name),
            TaskSpec::Report(_) => Ok(summary_task(&tasks)),
        };
        let report = match result {
            Ok(outcome) => {
                let paths = outcome.artifacts.iter().map(|(p, _)| p.clone()).collect();
                artifacts.extend(outcome.artifacts);
                TaskReport {
                    name,
                    task: spec.kind().into(),
                    verdict: Verdict::from_pass(outcome.pass),
                    metrics: outcome.metrics,
                    artifacts: paths,
                }
            }
            Err(e) => {
                diverged |= matches!(e, Error::Divergence { .. });
                TaskReport {
                    name,
                    task: spec.kind().into(),
                    verdict: Verdict::Error,
                    metrics: json!({ "error": e.to_string(), "divergence": matches!(e, Error::Divergence { .. }) }),
                    artifacts: Vec::new(),
                }
            }
        };
        tasks.push(report);
    }
    let verdict = Verdict::from_pass(tasks.iter().all(|t| t.verdict == Verdict::Pass));
    AuditBundle {
        report: Report {
            schema: REPORT_SCHEMA.into(),
            scenario: loaded.scenario.name.clone(),
            scenario_digest: hex::encode(Sha256::digest(loaded.canonical_json().as_bytes())),
            verdict,
            tasks,
        },
        artifacts,
        diverged,
    }
}

fn rank_task(family: &FieldFamily, t: &RankTask) -> Result<Outcome> {
    let top = family.dim().min(family.count());
    let mut ranks = Vec::new();
    let mut wedges = Vec::new();
    for x in &t.points {
        let frame = family.evaluate(&v(x))?;
        ranks.push(pointwise_rank(&frame, t.tol_rel));
        wedges.push((1..=top).map(|p| lambda_p(&frame, p).norm).collect::<Vec<f64>>());
    }
    let pass = t.expect.as_ref().is_none_or(|e| *e == ranks);
    Ok(Outcome {
        pass,
        metrics: json!({ "points": t.points, "ranks": ranks, "expected": t.expect, "lambda_norms": wedges }),
        artifacts: Vec::new(),
    })
}

fn bounds_of(b: &BoxSpec) -> Result<Bounds> {
    Bounds::new(b.lo.clone(), b.hi.clone())
}

fn involutivity_task(family: &FieldFamily, t: &InvolutivityTask, name: &str) -> Result<Outcome> {
    let seed = t.seed.expect("validated");
    let report = domain_audit(family, &bounds_of(&t.bounds)?, t.samples, seed, t.coeff_threshold, t.residual_tol)?;
    let mut pass = report.pass;
    let mut artifacts = Vec::new();
    let mut metrics = json!({
        "samples": report.samples,
        "coeff_threshold": report.coeff_threshold,
        "residual_tol": report.residual_tol,
        "pairs": report.pairs,
        "sup_coeff": report.sup_coeff(),
        "argmax": report.argmax(),
        "sup_residual": report.sup_residual,
        "flag_count": report.flag_count,
        "flags": report.flags.iter().take(FLAGS_IN_METRICS).collect::<Vec<_>>(),
    });
    if !report.flags.is_empty() {
        let mut csv = String::new();
        for i in 1..=family.dim() {
            let _ = write!(csv, "x{i},");
        }
        csv.push_str("j,k,coeff_norm,residual,reason\n");
        for f in &report.flags {
            for x in &f.point {
                let _ = write!(csv, "{x},");
            }
            let _ = writeln!(csv, "{},{},{},{},{}", f.pair.0, f.pair.1, f.coeff_norm, f.residual, f.reason);
        }
        artifacts.push((format!("{name}-flags.csv"), csv));
    }
    if let Some(trend) = &t.trend {
        let rows = nested_box_trend(family, &trend.center, &trend.radii, trend.samples, seed)?;
        let mut csv = String::from("radius,sup_coeff\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{}", r.radius, r.sup_coeff);
        }
        artifacts.push((format!("{name}-trend.csv"), csv));
        // with equal sample counts the sampled sup of a bounded function does
        // not grow as the boxes shrink, so growth marks a blow-up at the center
        let widest = rows.iter().max_by(|a, b| a.radius.total_cmp(&b.radius)).map_or(0.0, |r| r.sup_coeff);
        let peak = rows.iter().map(|r| r.sup_coeff).fold(0.0, f64::max);
        let localized = rows.len() > 1 && widest > 0.0 && peak >= BLOWUP_GROWTH * widest;
        pass &= !localized;
        metrics["trend"] = json!({ "center": trend.center, "rows": rows, "growth": peak / widest.max(f64::MIN_POSITIVE), "blowup_at_center": localized });
    }
    if let Some(ladder) = &t.ladder {
        let bounds = bounds_of(&ladder.bounds)?;
        let sigmas = ladder.sigmas.clone().unwrap_or_else(|| scaled_ladder(&bounds));
        let (j, k) = (ladder.pair[0] - 1, ladder.pair[1] - 1);
        let audit = ladder_audit(&bounds, &sigmas, None, ladder.points, seed, |s, x| friedrichs_residual(family, j, k, s, x))?;
        pass &= audit.bounded;
        metrics["ladder"] = serde_json::to_value(&audit).expect("ladder serializes");
    }
    Ok(Outcome { pass, metrics, artifacts })
}

fn flow_task(family: &FieldFamily, t: &FlowTask, name: &str) -> Result<Outcome> {
    let laws: Vec<ControlLaw> = match (&t.law, &t.random) {
        (Some(law), _) => vec![ControlLaw::new(law.breakpoints.clone(), law.values.clone())?],
        (None, Some(r)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(t.seed.expect("validated"));
            (0..r.count)
                .map(|_| ControlLaw::random_subunit(family.count(), r.horizon, r.segments, &mut rng))
                .collect::<Result<_>>()?
        }
        (None, None) => unreachable!("validated"),
    };
    let x0 = v(&t.x0);
    let mut endpoints = Vec::new();
    let mut budgets = Vec::new();
    let mut artifacts = Vec::new();
    for (k, law) in laws.iter().enumerate() {
        let h = t.h.unwrap_or_else(|| flows::default_step(law.horizon()));
        let traj = flows::integrate_control(family, law, &x0, h)?;
        endpoints.push(traj.endpoint().iter().copied().collect::<Vec<f64>>());
        budgets.push(traj.budget());
        let path = if laws.len() == 1 { format!("{name}.csv") } else { format!("{name}-{k}.csv") };
        artifacts.push((path, traj.to_csv()));
    }
    Ok(Outcome {
        pass: true,
        metrics: json!({ "x0": t.x0, "paths": laws.len(), "endpoints": endpoints, "budgets": budgets }),
        artifacts,
    })
}

fn orbit_task(family: &FieldFamily, t: &OrbitTask, name: &str) -> Result<Outcome> {
    let params = OrbitParams {
        h_mov: t.h_mov,
        depth: t.depth,
        branching: t.branching.unwrap_or(2 * family.count() + 4),
        seed: t.seed.expect("validated"),
        h: t.h,
        max_points: t.max_points,
        random_segments: true,
    };
    let x0 = v(&t.x0);
    let sample = orbits::orbit_sample(family, &x0, &params)?;
    let witness = orbits::witness_error(family, &sample)?;
    let constancy = orbits::rank_constancy_audit(family, &sample, t.tol_rel)?;
    let histogram: serde_json::Map<String, Value> = constancy.histogram.iter().map(|(r, n)| (r.to_string(), json!(n))).collect();
    let mut metrics = json!({
        "points": sample.points.len(),
        "truncated": sample.truncated,
        "seed_rank": constancy.seed_rank,
        "rank_histogram": histogram,
        "flagged": constancy.flagged.len(),
        "rank_constant": constancy.pass,
        "witness_error": witness,
        "max_d_upper": sample.points.iter().map(|p| p.d_upper).fold(0.0, f64::max),
    });
    if t.sussmann {
        metrics["sussmann"] = serde_json::to_value(orbits::sussmann_comparison(family, &x0, &params)?).expect("serializes");
    }
    Ok(Outcome {
        pass: constancy.pass && witness <= WITNESS_TOL,
        metrics,
        artifacts: vec![(format!("{name}.csv"), sample.to_csv())],
    })
}

fn chart_task(family: &FieldFamily, t: &ChartTask, name: &str) -> Result<Outcome> {
    let seed = t.seed.expect("validated");
    let x0 = v(&t.x0);
    let basis = match t.p {
        Some(p) => charts::select_basis_with_rank(family, &x0, p)?,
        None => charts::select_basis(family, &x0, RANK_TOL)?,
    };
    let chart = match t.radius {
        Some(r) => Chart::with_radius(basis, r, CHART_STEP)?,
        None => Chart::build(family, basis, CHART_STEP)?,
    };
    let diag = charts::diagnose(family, chart, t.samples, seed)?;
    let mut pass = diag.tangency.max_defect <= TANGENCY_TOL
        && diag.beta_defect <= BETA_TOL
        && diag.span.pass
        && diag.injectivity.pass
        && diag.lipschitz.finite;
    let mut metrics = json!({
        "summary": diag.summary(),
        "diagnostics": diag,
    });
    if let Some(s) = &t.slice {
        let slice = charts::slice_audit(family, &diag.chart, s.sigma, s.probes, seed, s.h)?;
        pass &= slice.max_residual <= s.tol && !slice.inconclusive && slice.failed_inversions == 0;
        metrics["slice"] = serde_json::to_value(&slice).expect("serializes");
        metrics["slice_tol"] = json!(s.tol);
    }
    let image = diag.chart.image_csv(family, t.image_grid)?;
    Ok(Outcome {
        pass,
        metrics,
        artifacts: vec![(format!("{name}-image.csv"), image)],
    })
}

fn ccdist_task(family: &FieldFamily, t: &CcdistTask, name: &str) -> Result<Outcome> {
    let params = CcParams {
        segments: t.segments,
        restarts: t.restarts,
        seed: t.seed.expect("validated"),
        h: t.h,
        tol: t.tol,
        max_horizon: t.max_horizon,
    };
    let n = family.dim();
    let mut csv = String::new();
    for i in 1..=n {
        let _ = write!(csv, "x{i},");
    }
    for i in 1..=n {
        let _ = write!(csv, "y{i},");
    }
    csv.push_str("d_upper,penalty\n");
    let mut distances = Vec::new();
    let mut penalties = Vec::new();
    for [x, y] in &t.pairs {
        let est = orbits::cc_distance_upper(family, &v(x), &v(y), &params, &[])?;
        for c in x.iter().chain(y) {
            let _ = write!(csv, "{c},");
        }
        let _ = writeln!(csv, "{},{}", est.value(), est.penalty);
        distances.push(est.distance);
        penalties.push(est.penalty);
    }
    Ok(Outcome {
        pass: distances.iter().all(Option::is_some),
        metrics: json!({ "pairs": t.pairs, "distances": distances, "penalties": penalties }),
        artifacts: vec![(format!("{name}.csv"), csv)],
    })
}

fn stability_task(family: &FieldFamily, t: &StabilityTask, name: &str) -> Result<Outcome> {
    let x0 = v(&t.x0);
    let p = match t.p {
        Some(p) => p,
        None => pointwise_rank(&family.evaluate(&x0)?, RANK_TOL),
    };
    if p == 0 {
        return Err(Error::DegeneratePoint);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed.expect("validated"));
    let laws = (0..t.paths)
        .map(|_| ControlLaw::random_subunit(family.count(), t.horizon, t.segments, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let record = orbits::rank_stability_audit(family, &x0, &laws, p, t.h)?;
    let mut pass = record.pass;
    let mut metrics = json!({
        "p": p,
        "lambda_norm": record.lambda_norm,
        "max_drift": record.max_drift,
        "c_hat": record.c_hat,
        "zero_case": record.c_hat.is_none() && record.pass,
    });
    if let (Some(eta), Some(c_hat)) = (t.eta, record.c_hat) {
        let fields = charts::select_basis_with_rank(family, &x0, p)?.fields;
        let wedge = orbits::single_wedge_drift(family, &x0, &fields, &laws[0], eta, c_hat, t.horizon, t.h)?;
        pass &= wedge.pass;
        metrics["wedge"] = json!({
            "fields": wedge.fields,
            "eta": wedge.eta,
            "c_linear": wedge.c_linear,
            "c_allowed": wedge.c_allowed,
            "window": wedge.window,
            "pass": wedge.pass,
        });
    }
    let mut csv = String::from("path,t,drift\n");
    for (k, curve) in record.curves.iter().enumerate() {
        for s in curve {
            let _ = writeln!(csv, "{k},{},{}", s.t, s.drift);
        }
    }
    Ok(Outcome {
        pass,
        metrics,
        artifacts: vec![(format!("{name}-drift.csv"), csv)],
    })
}

fn summary_task(done: &[TaskReport]) -> Outcome {
    let count = |v: Verdict| done.iter().filter(|t| t.verdict == v).count();
    let verdicts: serde_json::Map<String, Value> = done.iter().map(|t| (t.name.clone(), json!(t.verdict.as_str()))).collect();
    Outcome {
        pass: count(Verdict::Pass) == done.len(),
        metrics: json!({
            "passed": count(Verdict::Pass),
            "failed": count(Verdict::Fail),
            "errors": count(Verdict::Error),
            "verdicts": verdicts,
        }),
        artifacts: Vec::new(),
    }
}
