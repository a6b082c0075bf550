//! Empirical rank stability along subunit paths, orbit sampling and
//! control-distance upper bounds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldFamily;
use crate::flows::{control_endpoint, flow, integrate_subunit, random_unit_ball, random_unit_vector, ControlLaw, Trajectory};
use crate::field::Combination;
use crate::involutivity::least_norm_coefficients;
use crate::involutivity::DEFAULT_DELTA_LADDER;
use crate::multivector::{index_sets, lambda_p, pointwise_rank, IndexTuple, PVector};

/// Search interval for the Gronwall constant.
pub const C_MIN: f64 = 1e-3;
pub const C_MAX: f64 = 1e3;

/// Drift allowed when `|Λ_p(x)| = 0`.
pub const ZERO_DRIFT_TOL: f64 = 1e-8;

// Absolute slack for roundoff in the drift comparison.
const DRIFT_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftSample {
    pub t: f64,
    pub drift: f64,
}

#[derive(Debug, Clone)]
pub struct RankStabilityRecord {
    pub point: Vec<f64>,
    pub p: usize,
    pub lambda_norm: f64,
    pub trajectories: Vec<Trajectory>,
    /// `t ↦ |Λ_p(γ(t)) − Λ_p(x)|`, one curve per law.
    pub curves: Vec<Vec<DriftSample>>,
    pub max_drift: f64,
    /// Smallest `C` validating the bound on `[0, 1/C]`; `None` in the zero
    /// case or when `C_MAX` is not enough.
    pub c_hat: Option<f64>,
    pub pass: bool,
}

fn bound_holds(curves: &[Vec<DriftSample>], a: f64, c: f64) -> bool {
    let window = 1.0 / c;
    curves.iter().flatten().filter(|s| s.t <= window).all(|s| s.drift <= a * (c * s.t).exp_m1() + DRIFT_SLACK)
}

/// Smallest `C ∈ [C_MIN, C_MAX]` with `drift(t) ≤ a (e^{Ct} − 1)` for every
/// recorded `t ≤ 1/C`, by bisection in `log C`.
pub fn fit_gronwall_constant(curves: &[Vec<DriftSample>], a: f64) -> Option<f64> {
    if !bound_holds(curves, a, C_MAX) {
        return None;
    }
    if bound_holds(curves, a, C_MIN) {
        return Some(C_MIN);
    }
    let (mut lo, mut hi) = (C_MIN.ln(), C_MAX.ln());
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bound_holds(curves, a, mid.exp()) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi.exp())
}

/// Integrates every law from `x` and fits one Gronwall constant for all.
pub fn rank_stability_audit(family: &FieldFamily, x: &DVector<f64>, laws: &[ControlLaw], p: usize, h: f64) -> Result<RankStabilityRecord> {
    let (n, q) = (family.dim(), family.count());
    if p == 0 || p > n.min(q) {
        return Err(Error::InvalidArgument(format!("grade {p} out of range")));
    }
    let base = lambda_p(&family.evaluate(x)?, p);
    let trajectories = laws
        .par_iter()
        .map(|law| integrate_subunit(family, law, x, h))
        .collect::<Result<Vec<_>>>()?;
    let curves = trajectories
        .par_iter()
        .map(|traj| {
            traj.times
                .iter()
                .zip(&traj.states)
                .map(|(t, y)| {
                    let drift = lambda_p(&family.evaluate(y)?, p).distance(&base);
                    Ok(DriftSample { t: *t, drift })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let max_drift = curves.iter().flatten().map(|s| s.drift).fold(0.0, f64::max);
    let a = base.norm;
    let (c_hat, pass) = if a == 0.0 {
        (None, max_drift <= ZERO_DRIFT_TOL)
    } else {
        let c = fit_gronwall_constant(&curves, a);
        (c, c.is_some())
    };
    Ok(RankStabilityRecord {
        point: x.iter().copied().collect(),
        p,
        lambda_norm: a,
        trajectories,
        curves,
        max_drift,
        c_hat,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WedgeDrift {
    /// One-based field indices of `I`.
    pub fields: Vec<usize>,
    pub eta: f64,
    pub wedge_norm: f64,
    pub curve: Vec<DriftSample>,
    /// Smallest `C` with `|Y_I(γ(t)) − Y_I(x)| ≤ C (t/η) |Y_I(x)|` on the window.
    pub c_linear: f64,
    /// `2Ĉ/η`, the largest `C` accepted.
    pub c_allowed: f64,
    /// Gronwall constant of the audit.
    pub c_hat: f64,
    pub window: f64,
    pub pass: bool,
}

impl WedgeDrift {
    /// `Ĉ (t/η) |Y_I(x)|`.
    pub fn bound_at(&self, t: f64) -> f64 {
        self.c_hat * t / self.eta * self.wedge_norm
    }
}

/// Checks the linear drift bound for a single `Y_I` that is η-maximal at `x`.
/// `c_hat` is the Gronwall constant from [`rank_stability_audit`]; the
/// window is `t ≤ min(t_max, 1/Ĉ)`.
pub fn single_wedge_drift(
    family: &FieldFamily,
    x: &DVector<f64>,
    fields: &IndexTuple,
    law: &ControlLaw,
    eta: f64,
    c_hat: f64,
    t_max: f64,
    h: f64,
) -> Result<WedgeDrift> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1), got {eta}")));
    }
    let frame = family.evaluate(x)?;
    let p = fields.len();
    let wedge = |m: &nalgebra::DMatrix<f64>| PVector::wedge(&m.select_columns(fields.as_slice()));
    let base = wedge(&frame.matrix);
    let norm = base.norm();
    let best = index_sets(p, family.count())
        .iter()
        .map(|k| PVector::wedge(&frame.matrix.select_columns(k.as_slice())).norm())
        .fold(0.0, f64::max);
    if !(norm > eta * best) {
        return Err(Error::Precondition(format!(
            "|Y_I(x)| = {norm:e} is not above eta * max |Y_K(x)| = {:e}",
            eta * best
        )));
    }
    let window = if c_hat > 0.0 { t_max.min(1.0 / c_hat) } else { t_max };
    let traj = integrate_subunit(family, law, x, h)?;
    let mut curve = Vec::new();
    let mut c_linear = 0.0f64;
    for (t, y) in traj.times.iter().zip(&traj.states) {
        if *t > window {
            break;
        }
        let w = wedge(&family.evaluate(y)?.matrix);
        let drift = w.coords.iter().zip(&base.coords).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if *t > 0.0 {
            c_linear = c_linear.max(drift * eta / (t * norm));
        }
        curve.push(DriftSample { t: *t, drift });
    }
    let c_allowed = 2.0 * c_hat / eta;
    Ok(WedgeDrift {
        fields: fields.one_based_vec(),
        eta,
        wedge_norm: norm,
        curve,
        c_linear,
        c_allowed,
        c_hat,
        window,
        pass: c_linear <= c_allowed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitParams {
    /// Duration of each primitive move.
    pub h_mov: f64,
    pub depth: usize,
    /// Moves per expanded point: `2q` primitive flows plus random segments.
    pub branching: usize,
    pub seed: u64,
    /// Integrator step.
    pub h: f64,
    pub max_points: usize,
    /// If false, only the primitive moves `±e^{h_mov Y_j}` are used.
    pub random_segments: bool,
}

impl OrbitParams {
    pub fn for_family(family: &FieldFamily) -> Self {
        OrbitParams {
            h_mov: 0.1,
            depth: 6,
            branching: 2 * family.count() + 4,
            seed: 0,
            h: 1e-4,
            max_points: 400,
            random_segments: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitPoint {
    pub x: Vec<f64>,
    pub witness: ControlLaw,
    pub d_upper: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSample {
    pub seed_point: Vec<f64>,
    pub params: OrbitParams,
    pub points: Vec<OrbitPoint>,
    /// True when `max_points` stopped the search early.
    pub truncated: bool,
}

impl OrbitSample {
    /// Columns `x1..xn, rank, d_upper`.
    pub fn to_csv(&self) -> String {
        let n = self.seed_point.len();
        let mut out = String::new();
        for i in 1..=n {
            let _ = write!(out, "x{i},");
        }
        out.push_str("rank,d_upper\n");
        for p in &self.points {
            for v in &p.x {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{}", p.rank, p.d_upper);
        }
        out
    }
}

fn cell(x: &DVector<f64>, resolution: f64) -> Vec<i64> {
    x.iter().map(|v| (v / resolution).round() as i64).collect()
}

fn moves(q: usize, params: &OrbitParams, depth: usize, index: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(params.branching.max(2 * q));
    for j in 0..q {
        for sign in [1.0, -1.0] {
            let mut u = vec![0.0; q];
            u[j] = sign;
            out.push(u);
        }
    }
    if params.random_segments {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(((depth as u64) << 40) | index as u64);
        while out.len() < params.branching {
            out.push(random_unit_vector(q, &mut rng));
        }
    }
    out
}

/// Breadth-first cloud of points reachable from `x0` by compositions of
/// short subunit moves, deduplicated on a grid of size `h_mov/4`.
pub fn orbit_sample(family: &FieldFamily, x0: &DVector<f64>, params: &OrbitParams) -> Result<OrbitSample> {
    if !(params.h_mov > 0.0 && params.h > 0.0) || params.max_points == 0 {
        return Err(Error::InvalidArgument("orbit sampling parameters must be positive".into()));
    }
    let q = family.count();
    let resolution = params.h_mov / 4.0;
    let rank_of = |x: &DVector<f64>| -> Result<usize> { Ok(pointwise_rank(&family.evaluate(x)?, crate::multivector::RANK_TOL)) };
    let mut seen = HashSet::new();
    seen.insert(cell(x0, resolution));
    let mut points = vec![OrbitPoint {
        x: x0.iter().copied().collect(),
        witness: ControlLaw::empty(),
        d_upper: 0.0,
        rank: rank_of(x0)?,
    }];
    let mut frontier = vec![0usize];
    let mut truncated = false;
    'levels: for depth in 0..params.depth {
        let jobs: Vec<(usize, Vec<f64>)> = frontier
            .iter()
            .flat_map(|&idx| moves(q, params, depth, idx).into_iter().map(move |u| (idx, u)))
            .collect();
        let results = jobs
            .par_iter()
            .map(|(idx, u)| {
                let start = DVector::from_column_slice(&points[*idx].x);
                let end = flow(&Combination::new(family, u.clone()), &start, params.h_mov, params.h)?;
                Ok((*idx, u.clone(), end))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut next = Vec::new();
        for (idx, u, end) in results {
            if !seen.insert(cell(&end, resolution)) {
                continue;
            }
            if points.len() >= params.max_points {
                truncated = true;
                break 'levels;
            }
            let step = ControlLaw::constant(u, params.h_mov)?;
            let witness = points[idx].witness.then(&step)?;
            points.push(OrbitPoint {
                x: end.iter().copied().collect(),
                d_upper: witness.budget(),
                witness,
                rank: rank_of(&end)?,
            });
            next.push(points.len() - 1);
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(OrbitSample {
        seed_point: x0.iter().copied().collect(),
        params: params.clone(),
        points,
        truncated,
    })
}

/// Largest distance between a point and the endpoint of its re-integrated witness.
pub fn witness_error(family: &FieldFamily, sample: &OrbitSample) -> Result<f64> {
    let x0 = DVector::from_column_slice(&sample.seed_point);
    sample
        .points
        .par_iter()
        .map(|p| {
            let end = control_endpoint(family, &p.witness, &x0, sample.params.h)?;
            Ok((end - DVector::from_column_slice(&p.x)).norm())
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankConstancy {
    pub seed_rank: usize,
    pub histogram: BTreeMap<usize, usize>,
    /// Indices of points whose rank differs from the seed's.
    pub flagged: Vec<usize>,
    pub pass: bool,
}

/// Recomputes ranks at `tol_rel` and passes iff the cloud has one rank.
pub fn rank_constancy_audit(family: &FieldFamily, sample: &OrbitSample, tol_rel: f64) -> Result<RankConstancy> {
    if sample.points.is_empty() {
        return Err(Error::InvalidArgument("empty orbit sample".into()));
    }
    let ranks = sample
        .points
        .iter()
        .map(|p| Ok(pointwise_rank(&family.evaluate(&DVector::from_column_slice(&p.x))?, tol_rel)))
        .collect::<Result<Vec<usize>>>()?;
    let mut histogram = BTreeMap::new();
    for r in &ranks {
        *histogram.entry(*r).or_insert(0) += 1;
    }
    let seed_rank = ranks[0];
    let flagged: Vec<usize> = ranks.iter().enumerate().filter(|(_, r)| **r != seed_rank).map(|(i, _)| i).collect();
    Ok(RankConstancy {
        seed_rank,
        pass: histogram.len() == 1,
        histogram,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SussmannComparison {
    pub primitive_points: usize,
    pub full_points: usize,
    /// Sup over the full cloud of the distance to the primitive cloud.
    pub full_to_primitive: f64,
    /// Sup over the primitive cloud of the distance to the full cloud.
    pub primitive_to_full: f64,
    /// True when either one-sided distance exceeds `h_mov`.
    pub visibly_differ: bool,
}

fn one_sided(a: &[OrbitPoint], b: &[OrbitPoint]) -> f64 {
    a.par_iter()
        .map(|p| {
            b.iter()
                .map(|r| p.x.iter().zip(&r.x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
}

/// Compares the cloud of primitive flows `±e^{tY_j}` with the cloud that
/// also uses general subunit segments.
pub fn sussmann_comparison(family: &FieldFamily, x0: &DVector<f64>, params: &OrbitParams) -> Result<SussmannComparison> {
    let primitive = orbit_sample(
        family,
        x0,
        &OrbitParams {
            random_segments: false,
            ..params.clone()
        },
    )?;
    let full = orbit_sample(
        family,
        x0,
        &OrbitParams {
            random_segments: true,
            ..params.clone()
        },
    )?;
    let f2p = one_sided(&full.points, &primitive.points);
    let p2f = one_sided(&primitive.points, &full.points);
    Ok(SussmannComparison {
        primitive_points: primitive.points.len(),
        full_points: full.points.len(),
        full_to_primitive: f2p,
        primitive_to_full: p2f,
        visibly_differ: f2p.max(p2f) > params.h_mov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcParams {
    /// Segments of the searched controls.
    pub segments: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Integrator step.
    pub h: f64,
    /// Endpoint error accepted as reaching the target.
    pub tol: f64,
    /// Horizons beyond this are not searched.
    pub max_horizon: f64,
}

impl Default for CcParams {
    fn default() -> Self {
        CcParams {
            segments: 4,
            restarts: 4,
            seed: 0,
            h: 1e-2,
            tol: 1e-4,
            max_horizon: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcEstimate {
    /// `d̂`, or `None` if no admissible control was found.
    pub distance: Option<f64>,
    pub witness: Option<ControlLaw>,
    /// Endpoint error of the witness, or the best error seen if unreached.
    pub penalty: f64,
}

impl CcEstimate {
    pub fn reached(&self) -> bool {
        self.distance.is_some()
    }

    /// `d̂`, with `+∞` when unreached.
    pub fn value(&self) -> f64 {
        self.distance.unwrap_or(f64::INFINITY)
    }
}

// Controls are `m` vectors in the unit ball acting for fractions `shape`
// of the horizon.
struct Search<'a> {
    family: &'a FieldFamily,
    x: DVector<f64>,
    y: DVector<f64>,
    h: f64,
    tol: f64,
    shape: Vec<f64>,
}

const CD_MAX_EVALS: usize = 1500;
// Shrink probes start from a feasible control and either land quickly or
// are treated as infeasible.
const SHRINK_MAX_EVALS: usize = 300;
const CD_MIN_STEP: f64 = 1e-5;
const GROW: f64 = 1.5;
const SHRINK_STEPS: usize = 12;
const SHRINK_REL: f64 = 2e-3;
// The search itself lands within `INNER · tol`, so that concatenated
// witnesses still meet `tol`.
const INNER: f64 = 0.1;
// Relative outward rounding of the reported bound; durations are summed
// in floating point and the last few ulps are not trustworthy.
const ROUND_OUT: f64 = 4.0 * f64::EPSILON;

fn project(u: &mut [f64]) {
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1.0 {
        u.iter_mut().for_each(|v| *v /= n);
    }
}

impl Search<'_> {
    fn law(&self, horizon: f64, controls: &[Vec<f64>]) -> Result<ControlLaw> {
        let durations: Vec<f64> = self.shape.iter().map(|s| s * horizon).collect();
        ControlLaw::from_durations(&durations, controls.to_vec())
    }

    // States at the start of every segment, then the endpoint.
    fn states(&self, horizon: f64, controls: &[Vec<f64>], from: usize, prefix: &mut Vec<DVector<f64>>) -> Result<()> {
        prefix.truncate(from + 1);
        let mut x = prefix[from].clone();
        for i in from..controls.len() {
            x = flow(&Combination::new(self.family, controls[i].clone()), &x, self.shape[i] * horizon, self.h)?;
            prefix.push(x.clone());
        }
        Ok(())
    }

    fn error(&self, prefix: &[DVector<f64>]) -> f64 {
        (prefix.last().unwrap() - &self.y).norm()
    }

    /// Cyclic coordinate descent on the endpoint error at a fixed horizon.
    fn minimize(&self, horizon: f64, mut controls: Vec<Vec<f64>>, max_evals: usize) -> (Vec<Vec<f64>>, f64) {
        let target = 0.5 * self.tol;
        let mut prefix = vec![self.x.clone()];
        if self.states(horizon, &controls, 0, &mut prefix).is_err() {
            return (controls, f64::INFINITY);
        }
        let mut best = self.error(&prefix);
        let mut step = 0.25;
        let mut evals = 0;
        let mut trial_prefix = prefix.clone();
        while best > target && step >= CD_MIN_STEP && evals < max_evals {
            let mut improved = false;
            for i in 0..controls.len() {
                for c in 0..controls[i].len() {
                    for dir in [1.0, -1.0] {
                        let mut trial = controls[i].clone();
                        trial[c] += dir * step;
                        project(&mut trial);
                        let saved = std::mem::replace(&mut controls[i], trial);
                        trial_prefix.clone_from(&prefix);
                        evals += 1;
                        let ok = self.states(horizon, &controls, i, &mut trial_prefix).is_ok();
                        let err = if ok { self.error(&trial_prefix) } else { f64::INFINITY };
                        if err < best {
                            best = err;
                            std::mem::swap(&mut prefix, &mut trial_prefix);
                            improved = true;
                            break;
                        }
                        controls[i] = saved;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (controls, best)
    }

    /// Grows the horizon until the target is reached or `cap` is passed,
    /// then bisects down.
    fn run(&self, horizon: f64, controls: Vec<Vec<f64>>, cap: f64) -> Result<(Option<(f64, Vec<Vec<f64>>)>, f64)> {
        let mut lo = 0.0;
        let mut t = horizon.max(1e-6).min(cap);
        let (mut u, mut err) = self.minimize(t, controls, CD_MAX_EVALS);
        let mut best_err = err;
        while err > self.tol {
            lo = t;
            t *= GROW;
            if t > cap {
                return Ok((None, best_err));
            }
            (u, err) = self.minimize(t, u, CD_MAX_EVALS);
            best_err = best_err.min(err);
        }
        let (mut hi, mut hi_u) = (t, u);
        for _ in 0..SHRINK_STEPS {
            if hi - lo <= SHRINK_REL * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (u, err) = self.minimize(mid, hi_u.clone(), SHRINK_MAX_EVALS);
            if err <= self.tol {
                hi = mid;
                hi_u = u;
            } else {
                lo = mid;
            }
        }
        Ok((Some((hi, hi_u)), best_err))
    }
}

fn lexicographic(a: &[Vec<f64>], b: &[Vec<f64>]) -> Ordering {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(a.len().cmp(&b.len()))
}

/// Upper bound for `d(x, y)` by searching piecewise-constant subunit
/// controls; `hints` are extra starting controls (for instance, the
/// concatenation of witnesses through an intermediate point).
pub fn cc_distance_upper(family: &FieldFamily, x: &DVector<f64>, y: &DVector<f64>, params: &CcParams, hints: &[ControlLaw]) -> Result<CcEstimate> {
    if params.segments == 0 || params.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one segment and one restart".into()));
    }
    let gap = (x - y).norm();
    if gap <= INNER * params.tol {
        return Ok(CcEstimate {
            distance: Some(0.0),
            witness: Some(ControlLaw::empty()),
            penalty: gap,
        });
    }
    let q = family.count();
    let m = params.segments;

    // (horizon, controls, shape) starting points
    let mut starts: Vec<(f64, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    let frame = family.evaluate(x)?;
    let c = least_norm_coefficients(&frame.matrix, &(y - x), &DEFAULT_DELTA_LADDER)?.coeffs;
    let cn = c.norm();
    let shape = vec![1.0 / m as f64; m];
    if cn > 0.0 && cn.is_finite() {
        let u: Vec<f64> = c.iter().map(|v| v / cn).collect();
        starts.push((cn, vec![u; m], shape.clone()));
    }
    for hint in hints {
        if hint.segments() == 0 || hint.horizon() <= 0.0 {
            continue;
        }
        let horizon = hint.horizon();
        let hint_shape = hint.pieces().map(|(dt, _)| dt / horizon).collect();
        starts.push((horizon, hint.values().to_vec(), hint_shape));
    }

    for r in 0..params.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(r as u64 + 1);
        let controls = (0..m).map(|_| random_unit_ball(q, &mut rng)).collect();
        starts.push((gap.max(0.1), controls, shape.clone()));
    }
    // Sequential so each start is capped by the best horizon found so far.
    let mut best: Option<(f64, ControlLaw, f64)> = None;
    let mut best_err = f64::INFINITY;
    for hint in hints.iter().filter(|h| h.is_subunit()) {
        let hint = hint.unit_speed();
        let err = (control_endpoint(family, &hint, x, params.h)? - y).norm();
        best_err = best_err.min(err);
        if err <= params.tol && best.as_ref().is_none_or(|b| hint.budget() < b.0) {
            best = Some((hint.budget(), hint, err));
        }
    }
    for (horizon, controls, shape) in starts {
        let search = Search {
            family,
            x: x.clone(),
            y: y.clone(),
            h: params.h,
            tol: INNER * params.tol,
            shape,
        };
        let cap = best.as_ref().map_or(params.max_horizon, |b| b.0.min(params.max_horizon));
        let (found, err) = search.run(horizon, controls, cap)?;
        best_err = best_err.min(err);
        if let Some((t, u)) = found {
            let law = search.law(t, &u)?.unit_speed();
            let end = control_endpoint(family, &law, x, params.h)?;
            let d = law.budget();
            // ties go to the lexicographically smaller control
            let better = best.as_ref().is_none_or(|b| match d.total_cmp(&b.0) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => lexicographic(law.values(), b.1.values()) == Ordering::Less,
            });
            if better {
                best = Some((d, law, (end - y).norm()));
            }
        }
    }
    Ok(match best {
        Some((d, law, err)) => CcEstimate {
            distance: Some(d * (1.0 + ROUND_OUT)),
            witness: Some(law),
            penalty: err,
        },
        None => CcEstimate {
            distance: None,
            witness: None,
            penalty: best_err,
        },
    })
}
