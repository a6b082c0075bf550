//! Euclidean mollification `f^{(σ)}(x) = ∫ f(x − σy) χ(y) dy` on a
//! midpoint grid, and the diagnostics built on it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{Bounds, FieldFamily, SmoothField, VectorField, FD_STEP};
use crate::involutivity::{commutator, structure_coefficients};
use crate::multivector::{minor, IndexTuple};
use crate::sampling::ScrambledHalton;

/// Nodes per axis of the quadrature grid.
pub const GRID_NODES: usize = 17;

/// Radii of the boundedness ladder before scaling by box size.
pub const SIGMA_LADDER: [f64; 3] = [0.1, 0.05, 0.025];

/// Growth factor across the ladder still counted as bounded.
pub const LADDER_RATIO: f64 = 4.0;

/// Ladder values below this are indistinguishable from quadrature noise.
pub const LADDER_FLOOR: f64 = 1e-6;

/// `χ(y) = c · exp(−1/(1−|y|²))` on the unit ball.
///
/// Convolutions are sampled on the fixed lattice `ℓ Z^n`, `ℓ = 2σ/17`,
/// restricted to the ball `B(x, σ)`, with weights renormalized to unit mass
/// and zero first moment. The discrete mollification is then a smooth
/// function of `x`, and its Jacobian, obtained by differentiating the
/// kernel, is exact for the sum.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    dim: usize,
    normalization: f64,
}

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 { (-1.0 / (1.0 - r2)).exp() } else { 0.0 }
}

/// Lattice node with its weight and the gradient of the weight in `x`.
struct Node {
    z: DVector<f64>,
    weight: f64,
    grad: DVector<f64>,
}

impl MollifierKernel {
    pub fn new(dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("mollification supports n <= 3, got {dim}")));
        }
        let h = 2.0 / GRID_NODES as f64;
        let axis: Vec<f64> = (0..GRID_NODES).map(|i| -1.0 + h * (i as f64 + 0.5)).collect();
        let mut mass = 0.0;
        for flat in 0..GRID_NODES.pow(dim as u32) {
            let mut rest = flat;
            let mut r2 = 0.0;
            for _ in 0..dim {
                r2 += axis[rest % GRID_NODES].powi(2);
                rest /= GRID_NODES;
            }
            mass += bump(r2);
        }
        Ok(MollifierKernel {
            dim,
            normalization: 1.0 / (mass * h.powi(dim as i32)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The constant `c` in front of the unnormalized bump.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `χ(y)`.
    pub fn profile(&self, y: &DVector<f64>) -> f64 {
        self.normalization * bump(y.norm_squared())
    }

    fn spacing(sigma: f64) -> f64 {
        2.0 * sigma / GRID_NODES as f64
    }

    /// `Σ ℓ^n σ^{-n} χ((x − z)/σ)` over the lattice, before renormalization.
    pub fn mass(&self, x: &DVector<f64>, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        let l = Self::spacing(sigma);
        let scale = (l / sigma).powi(self.dim as i32);
        Ok(self.raw_nodes(x, sigma).iter().map(|(_, a, _)| a).sum::<f64>() * self.normalization * scale)
    }

    /// Sum of the quadrature weights actually used.
    pub fn weight_sum(&self, x: &DVector<f64>, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(self.nodes(x, sigma).iter().map(|n| n.weight).sum())
    }

    /// `Σ w_i (z_i − x)`, zero by construction.
    pub fn first_moment(&self, x: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
        check_sigma(sigma)?;
        Ok(self
            .nodes(x, sigma)
            .iter()
            .fold(DVector::zeros(self.dim), |acc, n| acc + (&n.z - x) * n.weight))
    }

    // (z, bump value, bump gradient in x)
    fn raw_nodes(&self, x: &DVector<f64>, sigma: f64) -> Vec<(DVector<f64>, f64, DVector<f64>)> {
        let l = Self::spacing(sigma);
        let lo: Vec<i64> = x.iter().map(|v| ((v - sigma) / l).floor() as i64).collect();
        let hi: Vec<i64> = x.iter().map(|v| ((v + sigma) / l).ceil() as i64).collect();
        let mut out = Vec::new();
        let mut k = lo.clone();
        loop {
            let z = DVector::from_iterator(self.dim, k.iter().map(|&i| i as f64 * l));
            let y = (x - &z) / sigma;
            let r2 = y.norm_squared();
            if r2 < 1.0 {
                let a = bump(r2);
                let grad = &y * (-2.0 * a / ((1.0 - r2).powi(2) * sigma));
                out.push((z, a, grad));
            }
            let Some(axis) = (0..self.dim).find(|&d| k[d] < hi[d]) else {
                return out;
            };
            k[axis] += 1;
            k[..axis].copy_from_slice(&lo[..axis]);
        }
    }

    /// Renormalized lattice weights, corrected so that the first moment about
    /// `x` vanishes exactly: `w'_i = w_i (1 − (d_i − μ)ᵀ S⁻¹ μ)` with
    /// `d_i = z_i − x`, `μ = Σ w_i d_i`, `S = Σ w_i (d_i − μ)(d_i − μ)ᵀ`.
    /// Gradients are differentiated through the correction.
    fn nodes(&self, x: &DVector<f64>, sigma: f64) -> Vec<Node> {
        let n = self.dim;
        let raw = self.raw_nodes(x, sigma);
        let m: f64 = raw.iter().map(|(_, a, _)| a).sum();
        let dm = raw.iter().fold(DVector::zeros(n), |acc, (_, _, g)| acc + g);
        let base: Vec<(DVector<f64>, DVector<f64>, f64, DVector<f64>)> = raw
            .into_iter()
            .map(|(z, a, g)| {
                let d = &z - x;
                (z, d, a / m, (g * m - &dm * a) / (m * m))
            })
            .collect();

        let mut mu = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        // dmu[(α, β)] = ∂_β μ_α
        let mut dmu = -DMatrix::identity(n, n);
        for (_, d, w, gw) in &base {
            mu += d * *w;
            second += d * d.transpose() * *w;
            dmu += d * gw.transpose();
        }
        let s = &second - &mu * mu.transpose();
        let s_inv = s.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(n, n));
        let lambda = &s_inv * &mu;

        // dlambda column β = ∂_β λ = S⁻¹ (∂_β μ − ∂_β S λ)
        let mut dlambda = DMatrix::zeros(n, n);
        for beta in 0..n {
            let mut ds = DMatrix::zeros(n, n);
            for (_, d, _, gw) in &base {
                ds += d * d.transpose() * gw[beta];
            }
            let e = DVector::from_fn(n, |i, _| if i == beta { 1.0 } else { 0.0 });
            let dmu_b = dmu.column(beta).into_owned();
            ds -= &e * mu.transpose() + &mu * e.transpose() + &dmu_b * mu.transpose() + &mu * dmu_b.transpose();
            dlambda.set_column(beta, &(&s_inv * (&dmu_b - ds * &lambda)));
        }

        let common = -&lambda - dmu.transpose() * &lambda;
        base.into_iter()
            .map(|(z, d, w, gw)| {
                let centered = &d - &mu;
                let t = centered.dot(&lambda);
                let grad_t = &common + dlambda.transpose() * &centered;
                Node {
                    z,
                    weight: w * (1.0 - t),
                    grad: gw * (1.0 - t) - grad_t * w,
                }
            })
            .collect()
    }

    /// Discrete `f^{(σ)}(x)` for a vector-valued `f`.
    pub fn average<F>(&self, x: &DVector<f64>, sigma: f64, mut f: F) -> Result<DVector<f64>>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        check_sigma(sigma)?;
        let mut acc: Option<DVector<f64>> = None;
        for node in self.nodes(x, sigma) {
            let v = f(&node.z)? * node.weight;
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
        Ok(acc.unwrap_or_else(|| DVector::zeros(0)))
    }

    /// Jacobian of [`Self::average`] in `x`, from the kernel gradient.
    pub fn average_jacobian<F>(&self, x: &DVector<f64>, sigma: f64, mut f: F) -> Result<DMatrix<f64>>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        check_sigma(sigma)?;
        let mut acc: Option<DMatrix<f64>> = None;
        for node in self.nodes(x, sigma) {
            let v = f(&node.z)? * node.grad.transpose();
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
        Ok(acc.unwrap_or_else(|| DMatrix::zeros(0, 0)))
    }

    /// Value and Jacobian of the mollification in one pass over the lattice.
    pub fn average_with_jacobian<F>(&self, x: &DVector<f64>, sigma: f64, mut f: F) -> Result<(DVector<f64>, DMatrix<f64>)>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        check_sigma(sigma)?;
        let mut value: Option<DVector<f64>> = None;
        let mut jac: Option<DMatrix<f64>> = None;
        for node in self.nodes(x, sigma) {
            let fz = f(&node.z)?;
            let j = &fz * node.grad.transpose();
            let v = fz * node.weight;
            value = Some(match value {
                Some(a) => a + v,
                None => v,
            });
            jac = Some(match jac {
                Some(a) => a + j,
                None => j,
            });
        }
        Ok((
            value.unwrap_or_else(|| DVector::zeros(0)),
            jac.unwrap_or_else(|| DMatrix::zeros(0, 0)),
        ))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("mollification radius must be positive, got {sigma}")))
    }
}

/// `f^{(σ)}(x)` for a scalar expression.
pub fn mollify_scalar(f: &Expr, sigma: f64, x: &DVector<f64>, kernel: &MollifierKernel) -> Result<f64> {
    let v = kernel.average(x, sigma, |z| {
        f.eval(z.as_slice())
            .map(|v| DVector::from_element(1, v))
            .map_err(|source| Error::Eval {
                field: 0,
                component: 0,
                source,
            })
    })?;
    Ok(v[0])
}

/// The family `{Y_j^{(σ)}}` with mollified coefficients.
#[derive(Debug, Clone)]
pub struct MollifiedFamily {
    base: FieldFamily,
    sigma: f64,
    kernel: MollifierKernel,
}

impl MollifiedFamily {
    pub fn new(base: &FieldFamily, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(MollifiedFamily {
            base: base.clone(),
            sigma,
            kernel: MollifierKernel::new(base.dim())?,
        })
    }

    pub fn base(&self) -> &FieldFamily {
        &self.base
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kernel(&self) -> &MollifierKernel {
        &self.kernel
    }

    pub fn count(&self) -> usize {
        self.base.count()
    }

    pub fn field_value(&self, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.kernel.average(x, self.sigma, |z| self.base.field_value(j, z))
    }

    pub fn jacobian(&self, j: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.kernel.average_jacobian(x, self.sigma, |z| self.base.field_value(j, z))
    }

    pub fn value_and_jacobian(&self, j: usize, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.kernel.average_with_jacobian(x, self.sigma, |z| self.base.field_value(j, z))
    }

    /// `[Y_j^{(σ)}, Y_k^{(σ)}]_x`.
    pub fn commutator(&self, j: usize, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (gj, jac_j) = self.value_and_jacobian(j, x)?;
        let (gk, jac_k) = self.value_and_jacobian(k, x)?;
        Ok(jac_k * gj - jac_j * gk)
    }

    pub fn member(&self, j: usize) -> MollifiedMember<'_> {
        MollifiedMember { family: self, index: j }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MollifiedMember<'a> {
    family: &'a MollifiedFamily,
    index: usize,
}

impl VectorField for MollifiedMember<'_> {
    fn dim(&self) -> usize {
        self.family.base.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.family.field_value(self.index, x)
    }
}

impl SmoothField for MollifiedMember<'_> {
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.family.jacobian(self.index, x)
    }
}

/// `b_{jk}^σ(x) = ([Y_j^{(σ)}, Y_k^{(σ)}]_x − [Y_j, Y_k]^{(σ)}(x)) / σ`.
pub fn friedrichs_residual(family: &FieldFamily, j: usize, k: usize, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mollified = MollifiedFamily::new(family, sigma)?;
    friedrichs_residual_with(&mollified, j, k, x)
}

pub fn friedrichs_residual_with(mollified: &MollifiedFamily, j: usize, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    let sigma = mollified.sigma;
    let lhs = mollified.commutator(j, k, x)?;
    let rhs = mollified
        .kernel
        .average(x, sigma, |z| commutator(&mollified.base, j, k, z))?;
    Ok((lhs - rhs) / sigma)
}

/// `([Y_j^{(σ)}, Y_k^{(σ)}] − Σ_i (c_{jk}^i)^{(σ)} Y_i^σ) / σ`, with `c` a
/// pointwise coefficient field for the pair.
pub fn mollified_structure_residual<C>(
    family: &FieldFamily,
    coeffs: C,
    j: usize,
    k: usize,
    sigma: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>>
where
    C: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mollified = MollifiedFamily::new(family, sigma)?;
    let lhs = mollified.commutator(j, k, x)?;
    let c = mollified.kernel.average(x, sigma, &coeffs)?;
    let mut combo = DVector::zeros(family.dim());
    for i in 0..family.count() {
        if c[i] != 0.0 {
            combo += mollified.field_value(i, x)? * c[i];
        }
    }
    Ok((lhs - combo) / sigma)
}

/// Least-norm structure coefficients of a pair as a pointwise field.
pub fn least_norm_field(family: &FieldFamily, j: usize, k: usize) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>> + '_ {
    move |z| structure_coefficients(family, j, k, z).map(|sc| DVector::from_vec(sc.coeffs))
}

/// Defect of the identity
/// `X(dx^K(U)) = Σ_α dx^K(…, [X, U_α], …) + Σ_γ Σ_β ∂_γ f^{k_β} dx^{K[β→γ]}(U)`,
/// with the left side from a central difference along `X`.
pub fn wedge_derivative_identity_check(
    us: &[&dyn SmoothField],
    x_field: &dyn SmoothField,
    k: &IndexTuple,
    x: &DVector<f64>,
) -> Result<f64> {
    let p = us.len();
    if p == 0 || k.len() != p {
        return Err(Error::InvalidArgument("need p fields and a p-tuple K".into()));
    }
    let n = x.len();
    let all: Vec<usize> = (0..p).collect();
    let frame_at = |z: &DVector<f64>| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n, p);
        for (a, u) in us.iter().enumerate() {
            m.set_column(a, &u.value(z)?);
        }
        Ok(m)
    };
    let f = x_field.value(x)?;
    let lhs = if f.norm() == 0.0 {
        0.0
    } else {
        let plus = frame_at(&(x + &f * FD_STEP))?;
        let minus = frame_at(&(x - &f * FD_STEP))?;
        (minor(&plus, k.as_slice(), &all) - minor(&minus, k.as_slice(), &all)) / (2.0 * FD_STEP)
    };

    let frame = frame_at(x)?;
    let df = x_field.jacobian(x)?;
    let mut rhs = 0.0;
    for (a, u) in us.iter().enumerate() {
        let bracket = u.jacobian(x)? * &f - &df * frame.column(a);
        let mut m = frame.clone();
        m.set_column(a, &bracket);
        rhs += minor(&m, k.as_slice(), &all);
    }
    for gamma in 0..n {
        for beta in 0..p {
            let d = df[(k.as_slice()[beta], gamma)];
            if d != 0.0 {
                let mut rows = k.as_slice().to_vec();
                rows[beta] = gamma;
                rhs += d * minor(&frame, &rows, &all);
            }
        }
    }
    Ok((lhs - rhs).abs())
}

/// `dist(Ω₀, ∂Ω₁) / 2` for nested boxes, the default `σ̃`.
pub fn default_sigma_tilde(inner: &Bounds, outer: &Bounds) -> Result<f64> {
    let gap = inner
        .lo
        .iter()
        .zip(&outer.lo)
        .map(|(a, b)| a - b)
        .chain(outer.hi.iter().zip(&inner.hi).map(|(a, b)| a - b))
        .fold(f64::INFINITY, f64::min);
    if gap <= 0.0 {
        return Err(Error::InvalidArgument("inner box is not compactly inside the outer box".into()));
    }
    Ok(gap / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderAudit {
    pub sigmas: Vec<f64>,
    /// Sup over sample points of the residual norm, per radius.
    pub sup_norms: Vec<f64>,
    /// `max / min` over the ladder, with `min` floored at [`LADDER_FLOOR`].
    pub ratio: f64,
    /// `max / (value at the coarsest radius)`, floored likewise. A sequence
    /// that decays with σ has growth 1 even when its ratio is large.
    pub growth: f64,
    pub bounded: bool,
    /// True if some radius exceeded `σ̃`, so that evaluation left `Ω₁`.
    pub left_outer: bool,
}

/// [`SIGMA_LADDER`] scaled by the smallest box side (capped at 1).
pub fn scaled_ladder(bounds: &Bounds) -> Vec<f64> {
    let side = bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    SIGMA_LADDER.iter().map(|s| s * side.min(1.0)).collect()
}

/// Sup of `residual(σ, x)` over `points` low-discrepancy samples of `bounds`
/// for each radius in `sigmas` (largest first). Bounded means the ladder
/// grows by at most [`LADDER_RATIO`] from the coarsest radius.
pub fn ladder_audit<R>(
    bounds: &Bounds,
    sigmas: &[f64],
    sigma_tilde: Option<f64>,
    points: usize,
    seed: u64,
    residual: R,
) -> Result<LadderAudit>
where
    R: Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    use rayon::prelude::*;
    if sigmas.is_empty() || points == 0 {
        return Err(Error::InvalidArgument("ladder audit needs radii and sample points".into()));
    }
    for &s in sigmas {
        check_sigma(s)?;
    }
    let halton = ScrambledHalton::new(bounds.dim(), seed);
    let xs: Vec<DVector<f64>> = (0..points).map(|i| bounds.from_unit(&halton.point(i))).collect();
    let mut sup_norms = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let norms = xs
            .par_iter()
            .map(|x| residual(sigma, x).map(|r| r.norm()))
            .collect::<Result<Vec<f64>>>()?;
        sup_norms.push(norms.into_iter().fold(0.0, f64::max));
    }
    let max = sup_norms.iter().cloned().fold(0.0, f64::max);
    let min = sup_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let growth = max / sup_norms[0].max(LADDER_FLOOR);
    Ok(LadderAudit {
        left_outer: sigma_tilde.is_some_and(|t| sigmas.iter().any(|s| *s > t)),
        sigmas: sigmas.to_vec(),
        ratio: max.max(LADDER_FLOOR) / min.max(LADDER_FLOOR),
        sup_norms,
        growth,
        bounded: growth <= LADDER_RATIO,
    })
}
