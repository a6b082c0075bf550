//! Exponential-map charts `Φ(u) = exp(Σ u_j V_j) x₀` and their diagnostics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{FieldFamily, VectorField};
use crate::flows::{control_endpoint, flow, quadruple_defect, random_unit_ball, random_unit_vector, ControlLaw};
use crate::multivector::{index_sets, minor, pointwise_rank, IndexTuple, PVector, RANK_TOL};

/// Largest block condition number accepted for `β`.
pub const MAX_CONDITION: f64 = 1e6;
/// Smallest chart radius before giving up.
pub const MIN_RADIUS: f64 = 1e-3;
/// Default integrator step for chart maps.
pub const CHART_STEP: f64 = 1e-3;

// Coordinate rays are scanned this far when sizing the radius.
const RAY_LIMIT: f64 = 1.0;
const RAY_STEP: f64 = 1e-2;
const TIE_REL: f64 = 1e-12;
const INVERSION_STEPS: usize = 20;
const INVERSION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartBasis {
    pub base: Vec<f64>,
    pub p: usize,
    /// Chosen fields `I` (zero-based).
    pub fields: IndexTuple,
    /// Chosen coordinate rows `K` (zero-based).
    pub rows: IndexTuple,
    /// `|Y_I^K|` over the largest `p×p` minor of the frame.
    pub quality: f64,
    /// Condition number of the block at the base point.
    pub condition: f64,
}

fn block(frame: &DMatrix<f64>, rows: &IndexTuple, fields: &IndexTuple) -> DMatrix<f64> {
    // entry (k, ℓ) = g_{i_k}^{K_ℓ}
    let p = fields.len();
    DMatrix::from_fn(p, p, |k, l| frame[(rows.as_slice()[l], fields.as_slice()[k])])
}

// 1-norm condition number.
fn condition(m: &DMatrix<f64>) -> f64 {
    match m.clone().try_inverse() {
        Some(inv) => one_norm(m) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max)
}

fn argmax_first<T>(items: impl Iterator<Item = (T, f64)>) -> Option<(T, f64)> {
    let mut best: Option<(T, f64)> = None;
    for (item, v) in items {
        if best.as_ref().is_none_or(|(_, b)| v > b * (1.0 + TIE_REL)) {
            best = Some((item, v));
        }
    }
    best
}

/// Picks `p = p_{x₀}`, then `I` maximizing `|Y_I|` and `K` maximizing `|Y_I^K|`.
pub fn select_basis(family: &FieldFamily, x0: &DVector<f64>, tol_rel: f64) -> Result<ChartBasis> {
    let p = pointwise_rank(&family.evaluate(x0)?, tol_rel);
    select_basis_with_rank(family, x0, p)
}

/// As [`select_basis`] with the rank imposed, for building a would-be leaf
/// chart where the rank jumps.
pub fn select_basis_with_rank(family: &FieldFamily, x0: &DVector<f64>, p: usize) -> Result<ChartBasis> {
    let (n, q) = (family.dim(), family.count());
    if p == 0 {
        return Err(Error::DegeneratePoint);
    }
    if p > n.min(q) {
        return Err(Error::InvalidArgument(format!("rank {p} exceeds min(n, q) = {}", n.min(q))));
    }
    let frame = family.evaluate(x0)?.matrix;
    let (fields, _) = argmax_first(index_sets(p, q).into_iter().map(|i| {
        let w = PVector::wedge(&frame.select_columns(i.as_slice())).norm();
        (i, w)
    }))
    .expect("at least one index set");
    let (rows, m) = argmax_first(index_sets(p, n).into_iter().map(|k| {
        let m = minor(&frame, k.as_slice(), fields.as_slice()).abs();
        (k, m)
    }))
    .expect("at least one index set");
    if m == 0.0 {
        return Err(Error::DegeneratePoint);
    }
    let best = index_sets(p, q)
        .iter()
        .flat_map(|i| index_sets(p, n).into_iter().map(move |k| (k, i.clone())))
        .map(|(k, i)| minor(&frame, k.as_slice(), i.as_slice()).abs())
        .fold(0.0, f64::max);
    let cond = condition(&block(&frame, &rows, &fields));
    if cond > MAX_CONDITION {
        return Err(Error::ShrinkRadius { condition: cond });
    }
    Ok(ChartBasis {
        base: x0.iter().copied().collect(),
        p,
        fields,
        rows,
        quality: m / best,
        condition: cond,
    })
}

/// `β(x)`: the inverse of the block `(g_{i_k}^{K_ℓ})`, so that
/// `Σ_k β_i^k g_{i_k}^{K_ℓ} = δ_i^ℓ`.
pub fn beta(family: &FieldFamily, basis: &ChartBasis, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let b = block(&family.evaluate(x)?.matrix, &basis.rows, &basis.fields);
    let inv = b.clone().try_inverse().ok_or(Error::ShrinkRadius { condition: f64::INFINITY })?;
    let cond = one_norm(&b) * one_norm(&inv);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::ShrinkRadius { condition: cond });
    }
    Ok(inv)
}

/// `max |β M − I|` at `x`.
pub fn beta_defect(family: &FieldFamily, basis: &ChartBasis, x: &DVector<f64>) -> Result<f64> {
    let b = block(&family.evaluate(x)?.matrix, &basis.rows, &basis.fields);
    let beta = beta(family, basis, x)?;
    let p = basis.p;
    Ok((beta * b - DMatrix::identity(p, p)).amax())
}

/// Columns `V_1..V_p` at `x`, where `V_j = Σ_k β_j^k Y_{i_k}`.
pub fn v_frame(family: &FieldFamily, basis: &ChartBasis, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let frame = family.evaluate(x)?.matrix.select_columns(basis.fields.as_slice());
    let beta = beta(family, basis, x)?;
    Ok(frame * beta.transpose())
}

/// `V_j` as a field.
pub struct VField<'a> {
    family: &'a FieldFamily,
    basis: &'a ChartBasis,
    j: usize,
}

impl VectorField for VField<'_> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v_frame(self.family, self.basis, x)?.column(self.j).into_owned())
    }
}

/// The `p` derived fields.
pub fn v_fields<'a>(family: &'a FieldFamily, basis: &'a ChartBasis) -> Vec<VField<'a>> {
    (0..basis.p).map(|j| VField { family, basis, j }).collect()
}

/// Frozen combination `Σ u_j V_j`.
struct Frozen<'a> {
    family: &'a FieldFamily,
    basis: &'a ChartBasis,
    u: &'a [f64],
}

impl VectorField for Frozen<'_> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v_frame(self.family, self.basis, x)? * DVector::from_column_slice(self.u))
    }
}

/// Time-1 flow of `Σ u_j V_j` from the base point.
pub fn chart_map(family: &FieldFamily, basis: &ChartBasis, u: &[f64], h: f64) -> Result<DVector<f64>> {
    if u.len() != basis.p {
        return Err(Error::InvalidArgument(format!("chart parameter has length {}, expected {}", u.len(), basis.p)));
    }
    let x0 = DVector::from_column_slice(&basis.base);
    if u.iter().all(|v| *v == 0.0) {
        return Ok(x0);
    }
    flow(&Frozen { family, basis, u }, &x0, 1.0, h)
}

// `1/cond` of the block, 0 where it is singular or undefined.
fn inverse_condition(family: &FieldFamily, basis: &ChartBasis, x: &DVector<f64>) -> f64 {
    family
        .evaluate(x)
        .map_or(0.0, |f| 1.0 / condition(&block(&f.matrix, &basis.rows, &basis.fields)))
}

// Golden-section search for the worst conditioning on `[0, span]` along `v`.
fn worst_condition_on<F: VectorField>(family: &FieldFamily, basis: &ChartBasis, v: &F, x: &DVector<f64>, span: f64, h: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let at = |tau: f64| flow(v, x, tau, h).map_or(0.0, |y| inverse_condition(family, basis, &y));
    let (mut a, mut b) = if span > 0.0 { (0.0, span) } else { (span, 0.0) };
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if at(c) < at(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let tau = 0.5 * (a + b);
    (tau, at(tau))
}

/// Distance along the flows of `±V_j` over which the block stays well
/// conditioned, capped at `RAY_LIMIT`. Dips of the conditioning between
/// scan points are refined, since a block like `|x2 − F(x1)|` degenerates
/// only on a curve.
fn ray_reach(family: &FieldFamily, basis: &ChartBasis, h: f64) -> f64 {
    let x0 = DVector::from_column_slice(&basis.base);
    let fields = v_fields(family, basis);
    let limit = 1.0 / MAX_CONDITION;
    let mut reach = RAY_LIMIT;
    for v in &fields {
        for dir in [1.0, -1.0] {
            // (arc length, state, inverse condition) of the last two scan points
            let mut prev: Option<(f64, DVector<f64>, f64)> = None;
            let mut cur = (0.0, x0.clone(), inverse_condition(family, basis, &x0));
            while cur.0 < reach {
                let next_x = match flow(v, &cur.1, dir * RAY_STEP, h) {
                    Ok(y) => y,
                    Err(_) => break,
                };
                let next = (cur.0 + RAY_STEP, next_x.clone(), inverse_condition(family, basis, &next_x));
                if next.2 < limit {
                    reach = reach.min(cur.0);
                    break;
                }
                if let Some(p) = &prev {
                    if cur.2 < p.2 && cur.2 <= next.2 {
                        let (tau, worst) = worst_condition_on(family, basis, v, &p.1, dir * 2.0 * RAY_STEP, h);
                        if worst < limit {
                            reach = reach.min(p.0 + tau.abs());
                            break;
                        }
                    }
                }
                prev = Some(cur);
                cur = next;
            }
            reach = reach.min(cur.0.max(prev.as_ref().map_or(0.0, |p| p.0)));
        }
    }
    reach
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chart {
    pub basis: ChartBasis,
    pub radius: f64,
    /// Integrator step used by `Φ`.
    pub step: f64,
}

impl Chart {
    /// Radius `0.5 ·` the distance over which the block stays well
    /// conditioned along the coordinate rays.
    pub fn build(family: &FieldFamily, basis: ChartBasis, step: f64) -> Result<Self> {
        let radius = 0.5 * ray_reach(family, &basis, step);
        if radius < MIN_RADIUS {
            return Err(Error::ShrinkRadius { condition: basis.condition });
        }
        Ok(Chart { basis, radius, step })
    }

    pub fn with_radius(basis: ChartBasis, radius: f64, step: f64) -> Result<Self> {
        if !(radius >= MIN_RADIUS && step > 0.0) {
            return Err(Error::InvalidArgument(format!("chart radius {radius} below {MIN_RADIUS}")));
        }
        Ok(Chart { basis, radius, step })
    }

    /// Halves the radius; errors below `MIN_RADIUS`.
    pub fn shrink(&self) -> Result<Self> {
        if self.radius / 2.0 < MIN_RADIUS {
            return Err(Error::ShrinkRadius { condition: self.basis.condition });
        }
        Ok(Chart {
            radius: self.radius / 2.0,
            ..self.clone()
        })
    }

    pub fn p(&self) -> usize {
        self.basis.p
    }

    pub fn base(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.basis.base)
    }

    pub fn map(&self, family: &FieldFamily, u: &[f64]) -> Result<DVector<f64>> {
        chart_map(family, &self.basis, u, self.step)
    }

    /// Central-difference `∂Φ/∂u`, `n×p`.
    pub fn jacobian(&self, family: &FieldFamily, u: &[f64], h_fd: f64) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(family.dim(), self.p());
        for k in 0..self.p() {
            let mut plus = u.to_vec();
            let mut minus = u.to_vec();
            plus[k] += h_fd;
            minus[k] -= h_fd;
            let d = (self.map(family, &plus)? - self.map(family, &minus)?) / (2.0 * h_fd);
            jac.set_column(k, &d);
        }
        Ok(jac)
    }

    /// Seeded parameters in `B(0, ρ)`.
    pub fn sample_parameters(&self, rho: f64, samples: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| random_unit_ball(self.p(), &mut rng).into_iter().map(|v| v * rho).collect())
            .collect()
    }

    /// Points of `[−δ, δ]^p` on a `per_axis^p` grid that lie in the ball.
    pub fn parameter_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let p = self.p();
        let axis: Vec<f64> = (0..per_axis)
            .map(|i| if per_axis == 1 { 0.0 } else { -self.radius + 2.0 * self.radius * i as f64 / (per_axis - 1) as f64 })
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; p];
        loop {
            let u: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            if u.iter().map(|v| v * v).sum::<f64>().sqrt() <= self.radius * (1.0 + 1e-12) {
                out.push(u);
            }
            let mut d = 0;
            while d < p {
                idx[d] += 1;
                if idx[d] < per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == p {
                break;
            }
        }
        out
    }

    /// `u1..up, x1..xn` for every grid parameter.
    pub fn image_csv(&self, family: &FieldFamily, per_axis: usize) -> Result<String> {
        let grid = self.parameter_grid(per_axis);
        let images = grid.par_iter().map(|u| self.map(family, u)).collect::<Result<Vec<_>>>()?;
        let mut out = String::new();
        let header: Vec<String> = (1..=self.p()).map(|i| format!("u{i}")).chain((1..=family.dim()).map(|i| format!("x{i}"))).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (u, x) in grid.iter().zip(&images) {
            let row: Vec<String> = u.iter().chain(x.iter()).map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        Ok(out)
    }

    /// Solves `Φ(u)_K = y_K` by damped fixed-point steps from the
    /// K-coordinate projection. Returns `None` if it does not settle.
    pub fn invert(&self, family: &FieldFamily, y: &DVector<f64>) -> Result<Option<Vec<f64>>> {
        let rows = self.basis.rows.as_slice();
        let x0 = self.base();
        let target: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        let mut u: Vec<f64> = rows.iter().map(|&r| y[r] - x0[r]).collect();
        let gap = |u: &[f64]| -> Result<Vec<f64>> {
            let x = self.map(family, u)?;
            Ok(rows.iter().zip(&target).map(|(&r, t)| t - x[r]).collect())
        };
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut g = gap(&u)?;
        for _ in 0..INVERSION_STEPS {
            if norm(&g) <= INVERSION_TOL {
                return Ok(Some(u));
            }
            let mut damping = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + damping * b).collect();
                let tg = gap(&trial)?;
                if norm(&tg) < norm(&g) {
                    u = trial;
                    g = tg;
                    break;
                }
                damping *= 0.5;
                if damping < 1e-3 {
                    return Ok(None);
                }
            }
        }
        Ok((norm(&g) <= INVERSION_TOL).then_some(u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangencyReport {
    pub samples: usize,
    /// `max ‖∂Φ/∂u_k − V_k(Φ(u))‖`.
    pub max_defect: f64,
    pub worst_parameter: Vec<f64>,
}

/// Compares central differences of `Φ` with the `V` frame at `Φ(u)`.
pub fn tangency_audit(family: &FieldFamily, chart: &Chart, samples: usize, seed: u64, h_fd: f64) -> Result<TangencyReport> {
    let params = chart.sample_parameters(chart.radius - h_fd, samples, seed);
    let defects = params
        .par_iter()
        .map(|u| {
            let jac = chart.jacobian(family, u, h_fd)?;
            let v = v_frame(family, &chart.basis, &chart.map(family, u)?)?;
            let worst = (0..chart.p()).map(|k| (jac.column(k) - v.column(k)).norm()).fold(0.0, f64::max);
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (i, max_defect) = defects.iter().copied().enumerate().fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    Ok(TangencyReport {
        samples,
        max_defect,
        worst_parameter: params.get(i).cloned().unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanReport {
    pub samples: usize,
    pub min_rank: usize,
    pub max_rank: usize,
    pub pass: bool,
}

/// Rank of `[V | Y]` at chart images; passes iff it is `p` everywhere.
/// Samples are chart images only: the identity is claimed on a
/// control-distance ball, not on a Euclidean one.
pub fn span_agreement_audit(family: &FieldFamily, chart: &Chart, samples: usize, seed: u64) -> Result<SpanReport> {
    let params = chart.sample_parameters(chart.radius, samples, seed);
    let ranks = params
        .par_iter()
        .map(|u| {
            let x = chart.map(family, u)?;
            let y = family.evaluate(&x)?;
            let v = v_frame(family, &chart.basis, &x)?;
            let mut aug = DMatrix::zeros(family.dim(), chart.p() + family.count());
            aug.columns_mut(0, chart.p()).copy_from(&v);
            aug.columns_mut(chart.p(), family.count()).copy_from(&y.matrix);
            Ok(pointwise_rank(&crate::field::PointFrame::new(x, aug), RANK_TOL))
        })
        .collect::<Result<Vec<usize>>>()?;
    let min_rank = ranks.iter().copied().min().unwrap_or(chart.p());
    let max_rank = ranks.iter().copied().max().unwrap_or(chart.p());
    Ok(SpanReport {
        samples,
        min_rank,
        max_rank,
        pass: min_rank == chart.p() && max_rank == chart.p(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub sigma: f64,
    pub probes: usize,
    pub max_residual: f64,
    /// Some projection left `B(0, δ)`: σ is too large for this chart.
    pub inconclusive: bool,
    /// Probes whose chart inversion did not converge.
    pub failed_inversions: usize,
}

/// Integrates subunit probes of budget `σ` from chart points and measures
/// how far their endpoints land from the chart image.
pub fn slice_audit(family: &FieldFamily, chart: &Chart, sigma: f64, probes: usize, seed: u64, h: f64) -> Result<SliceReport> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let q = family.count();
    // keep projections inside the chart: K-coordinates move at most this fast
    let frame = family.evaluate(&chart.base())?.matrix;
    let speed = frame.select_rows(chart.basis.rows.as_slice()).norm();
    let rho = (chart.radius - sigma * speed).max(0.0);
    let starts = chart.sample_parameters(rho, probes, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    // the first 2q probes are full-budget primitive flows
    let laws: Vec<ControlLaw> = (0..probes)
        .map(|i| {
            let u = if i < 2 * q {
                let mut u = vec![0.0; q];
                u[i / 2] = if i % 2 == 0 { 1.0 } else { -1.0 };
                u
            } else {
                random_unit_vector(q, &mut rng)
            };
            ControlLaw::constant(u, sigma)
        })
        .collect::<Result<_>>()?;
    let outcomes = starts
        .par_iter()
        .zip(&laws)
        .map(|(u0, law)| {
            let x = chart.map(family, u0)?;
            let end = control_endpoint(family, law, &x, h)?;
            match chart.invert(family, &end)? {
                Some(u) => {
                    let outside = u.iter().map(|v| v * v).sum::<f64>().sqrt() > chart.radius;
                    let residual = (end - chart.map(family, &u)?).norm();
                    Ok((residual, outside, false))
                }
                None => Ok((0.0, false, true)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceReport {
        sigma,
        probes,
        max_residual: outcomes.iter().map(|o| o.0).fold(0.0, f64::max),
        inconclusive: outcomes.iter().any(|o| o.1),
        failed_inversions: outcomes.iter().filter(|o| o.2).count(),
    })
}

/// Largest `β`-identity defect at sampled chart images.
pub fn beta_defect_audit(family: &FieldFamily, chart: &Chart, samples: usize, seed: u64) -> Result<f64> {
    chart
        .sample_parameters(chart.radius, samples, seed)
        .par_iter()
        .map(|u| beta_defect(family, &chart.basis, &chart.map(family, u)?))
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadrupleReport {
    /// `max |defect| / |ts|` over pairs, times and sampled chart points.
    pub max_ratio: f64,
    pub points: usize,
}

/// Quadruple-commutator defects of `V_j, V_k` at chart images for
/// `t, s ∈ {±0.1, ±0.05}`.
pub fn quadruple_audit(family: &FieldFamily, chart: &Chart, samples: usize, seed: u64, h: f64) -> Result<QuadrupleReport> {
    let fields = v_fields(family, &chart.basis);
    let times = [0.1, -0.1, 0.05, -0.05];
    let points = chart.sample_parameters(chart.radius / 2.0, samples, seed);
    let ratios = points
        .par_iter()
        .map(|u| {
            let x = chart.map(family, u)?;
            let mut worst = 0.0f64;
            for j in 0..fields.len() {
                for k in j + 1..fields.len() {
                    for &t in &times {
                        for &s in &times {
                            let d = quadruple_defect(&fields[j], &fields[k], t, s, &x, h)?;
                            worst = worst.max(d.norm() / (t * s).abs());
                        }
                    }
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(QuadrupleReport {
        max_ratio: ratios.into_iter().fold(0.0, f64::max),
        points: samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivityReport {
    pub grid_points: usize,
    /// `min ‖Φ(a) − Φ(b)‖ / ‖a − b‖` over grid pairs.
    pub min_ratio: f64,
    pub pass: bool,
}

pub const INJECTIVITY_RATIO: f64 = 0.5;

/// Pairwise image distances against parameter distances on a grid of
/// `per_axis^p` points.
pub fn injectivity_audit(family: &FieldFamily, chart: &Chart, per_axis: usize) -> Result<InjectivityReport> {
    let grid = chart.parameter_grid(per_axis);
    let images = grid.par_iter().map(|u| chart.map(family, u)).collect::<Result<Vec<_>>>()?;
    let mut min_ratio = f64::INFINITY;
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            let du = grid[a].iter().zip(&grid[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            min_ratio = min_ratio.min((&images[a] - &images[b]).norm() / du);
        }
    }
    Ok(InjectivityReport {
        grid_points: grid.len(),
        min_ratio,
        pass: min_ratio >= INJECTIVITY_RATIO,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub grid_points: usize,
    /// `max ‖DΦ(a) − DΦ(b)‖ / ‖a − b‖` over grid pairs.
    pub constant: f64,
    pub finite: bool,
}

/// Difference quotients of the sampled Jacobian of `Φ`.
pub fn jacobian_lipschitz_audit(family: &FieldFamily, chart: &Chart, per_axis: usize, h_fd: f64) -> Result<LipschitzReport> {
    let shrunk = Chart {
        radius: chart.radius - h_fd,
        ..chart.clone()
    };
    let grid = shrunk.parameter_grid(per_axis);
    let jacs = grid.par_iter().map(|u| chart.jacobian(family, u, h_fd)).collect::<Result<Vec<_>>>()?;
    let mut constant = 0.0f64;
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            let du = grid[a].iter().zip(&grid[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            constant = constant.max((&jacs[a] - &jacs[b]).norm() / du);
        }
    }
    Ok(LipschitzReport {
        grid_points: grid.len(),
        constant,
        finite: constant.is_finite(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartDiagnostics {
    pub chart: Chart,
    pub tangency: TangencyReport,
    pub span: SpanReport,
    pub beta_defect: f64,
    pub quadruple: QuadrupleReport,
    pub injectivity: InjectivityReport,
    pub lipschitz: LipschitzReport,
    /// Radius halvings needed before tangency and injectivity passed.
    pub halvings: usize,
}

pub const TANGENCY_TOL: f64 = 1e-4;
pub const BETA_TOL: f64 = 1e-9;

/// Runs the audits, halving the radius while tangency or injectivity fail.
pub fn diagnose(family: &FieldFamily, chart: Chart, samples: usize, seed: u64) -> Result<ChartDiagnostics> {
    let h_fd = 1e-5;
    let mut chart = chart;
    let mut halvings = 0;
    loop {
        let tangency = tangency_audit(family, &chart, samples, seed, h_fd)?;
        let injectivity = injectivity_audit(family, &chart, 10)?;
        if (tangency.max_defect > TANGENCY_TOL || !injectivity.pass) && chart.radius / 2.0 >= MIN_RADIUS {
            chart = chart.shrink()?;
            halvings += 1;
            continue;
        }
        return Ok(ChartDiagnostics {
            span: span_agreement_audit(family, &chart, samples, seed)?,
            beta_defect: beta_defect_audit(family, &chart, samples, seed)?,
            quadruple: quadruple_audit(family, &chart, samples.min(8), seed, 1e-3)?,
            lipschitz: jacobian_lipschitz_audit(family, &chart, 6, 1e-4)?,
            tangency,
            injectivity,
            chart,
            halvings,
        });
    }
}

impl ChartDiagnostics {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "p={} I={} K={} radius={} tangency={:e} beta={:e} quadruple={:e} injectivity={:.3}",
            self.chart.p(),
            self.chart.basis.fields,
            self.chart.basis.rows,
            self.chart.radius,
            self.tangency.max_defect,
            self.beta_defect,
            self.quadruple.max_ratio,
            self.injectivity.min_ratio
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn basis_examples() {
        let fam = builtins::example_graph();
        let b = select_basis(&fam, &v(&[0.0, 0.0]), RANK_TOL).unwrap();
        assert_eq!((b.p, b.fields.one_based_vec(), b.rows.one_based_vec()), (1, vec![1], vec![1]));
        let b = select_basis(&fam, &v(&[0.5, 0.8]), RANK_TOL).unwrap();
        assert_eq!((b.p, b.fields.one_based_vec(), b.rows.one_based_vec()), (2, vec![1, 2], vec![1, 2]));
        let three = FieldFamily::parse("three", 2, &[vec!["1", "0"], vec!["0", "1"], vec!["1", "1"]]).unwrap();
        let b = select_basis(&three, &v(&[0.3, -0.2]), RANK_TOL).unwrap();
        assert_eq!(b.fields.one_based_vec(), vec![1, 2]);
        assert!(matches!(select_basis(&builtins::balan(), &v(&[0.0, 0.0]), RANK_TOL), Err(Error::DegeneratePoint)));
    }

    #[test]
    fn v_fields_of_triangular_frame() {
        let fam = builtins::example_graph();
        let x = v(&[0.5, 0.8]);
        let b = select_basis(&fam, &x, RANK_TOL).unwrap();
        let vf = v_frame(&fam, &b, &x).unwrap();
        assert!((vf - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
        let affine = FieldFamily::parse("affine", 1, &[vec!["1"], vec!["x1"]]).unwrap();
        let b = select_basis(&affine, &v(&[1.0]), RANK_TOL).unwrap();
        assert_eq!(b.fields.one_based_vec(), vec![1]);
        assert_eq!(v_frame(&affine, &b, &v(&[1.1])).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn constant_frame_chart_is_affine() {
        let fam = builtins::planar();
        let b = select_basis(&fam, &v(&[1.0, 2.0]), RANK_TOL).unwrap();
        let chart = Chart::with_radius(b, 0.5, 1e-2).unwrap();
        assert_eq!(chart.map(&fam, &[0.0, 0.0]).unwrap(), v(&[1.0, 2.0]));
        assert!((chart.map(&fam, &[0.2, -0.1]).unwrap() - v(&[1.2, 1.9])).norm() < 1e-12);
        let t = tangency_audit(&fam, &chart, 10, 0, 1e-3).unwrap();
        assert!(t.max_defect <= 1e-10, "{}", t.max_defect);
        let s = slice_audit(&fam, &chart, 0.2, 10, 0, 1e-2).unwrap();
        assert!(s.max_residual <= 1e-8 && !s.inconclusive);
        assert!(span_agreement_audit(&fam, &chart, 10, 0).unwrap().pass);
    }

    #[test]
    fn graph_chart_follows_the_orbit() {
        let fam = builtins::example_graph();
        let b = select_basis(&fam, &v(&[0.0, 0.0]), RANK_TOL).unwrap();
        let chart = Chart::with_radius(b, 0.2, CHART_STEP).unwrap();
        for t in [-0.15, 0.05, 0.2] {
            let x = chart.map(&fam, &[t]).unwrap();
            assert!((x - v(&[t, t * t.abs()])).norm() < 1e-6);
        }
    }

    #[test]
    fn radius_is_half_the_ray_reach() {
        let fam = builtins::example_graph();
        let b = select_basis(&fam, &v(&[0.5, 0.8]), RANK_TOL).unwrap();
        let chart = Chart::build(&fam, b, 1e-3).unwrap();
        // the block degenerates on the graph, reached at x1 = sqrt(0.8)
        assert!((chart.radius - 0.5 * (0.8f64.sqrt() - 0.5)).abs() < 0.01, "{}", chart.radius);
        assert!(chart.shrink().unwrap().radius < chart.radius);
    }

    #[test]
    fn image_grid_csv() {
        let fam = builtins::planar();
        let b = select_basis(&fam, &v(&[0.0, 0.0]), RANK_TOL).unwrap();
        let chart = Chart::with_radius(b, 0.1, 1e-2).unwrap();
        let csv = chart.image_csv(&fam, 3).unwrap();
        assert!(csv.starts_with("u1,u2,x1,x2\n"));
        // corners of the square fall outside the ball
        assert_eq!(csv.lines().count(), 1 + 5);
    }
}
