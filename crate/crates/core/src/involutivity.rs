//! Commutators, least-norm structure coefficients and the finite-type audit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Bounds, FieldFamily};
use crate::sampling::ScrambledHalton;

pub const DEFAULT_DELTA_LADDER: [f64; 4] = [1e-4, 1e-6, 1e-8, 1e-10];

/// Relative change between successive iterates treated as convergence.
pub const PINV_TOL: f64 = 1e-9;

const REFINE_STEPS: usize = 40;

/// Singular values of the equilibrated frame below this fraction of the
/// largest are treated as null directions.
const NULL_TOL: f64 = 1e-6;

/// `[Y_j, Y_k]_x = Jac(g_k) g_j - Jac(g_j) g_k`, with `x` nudged off kinks.
pub fn commutator(family: &FieldFamily, j: usize, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    let x = family.dejitter(x)?;
    commutator_at(family, j, k, &x)
}

/// Commutator from the a.e. formulas at exactly `x`.
pub fn commutator_at(family: &FieldFamily, j: usize, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    let gj = family.field_value(j, x)?;
    let gk = family.field_value(k, x)?;
    let a = family.jacobian_ae(k, x)? * &gj;
    let b = family.jacobian_ae(j, x)? * &gk;
    Ok(a - b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinvSolution {
    pub coeffs: DVector<f64>,
    /// Regularization level at which the iterates settled.
    pub delta: f64,
    pub converged: bool,
    /// The two last iterates when the ladder ran out without converging.
    pub last_iterates: Option<(DVector<f64>, DVector<f64>)>,
}

impl PinvSolution {
    pub fn is_ill_conditioned(&self) -> bool {
        !self.converged
    }
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() || ladder.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument("delta ladder must hold positive reals".into()));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("delta ladder must be strictly decreasing".into()));
    }
    Ok(())
}

/// `lim_{δ→0} (δI + YᵀY)⁻¹ Yᵀ b` by iterated Tikhonov refinement down the
/// ladder: at each level, `c ← c + (δI + YᵀY)⁻¹ Yᵀ (b − Y c)`.
///
/// The iteration converges to the least-norm solution for any fixed δ;
/// smaller levels only speed it up along weak singular directions.
pub fn pinv_least_norm(y: &DMatrix<f64>, b: &DVector<f64>, ladder: &[f64]) -> Result<PinvSolution> {
    check_ladder(ladder)?;
    if y.nrows() != b.len() {
        return Err(Error::InvalidArgument("right-hand side has the wrong length".into()));
    }
    let q = y.ncols();
    let yt = y.transpose();
    let gram = &yt * y;
    let mut c = DVector::zeros(q);
    let mut prev = c.clone();
    for &delta in ladder {
        let reg = &gram + DMatrix::identity(q, q) * delta;
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("regularized Gram matrix is not positive definite".into()))?;
        for _ in 0..REFINE_STEPS {
            let step = chol.solve(&(&yt * (b - y * &c)));
            prev = c.clone();
            c += &step;
            let size = step.norm();
            if size == 0.0 || size <= PINV_TOL * c.norm() {
                return Ok(PinvSolution {
                    coeffs: c,
                    delta,
                    converged: true,
                    last_iterates: None,
                });
            }
        }
    }
    Ok(PinvSolution {
        coeffs: c.clone(),
        delta: *ladder.last().unwrap(),
        converged: false,
        last_iterates: Some((prev, c)),
    })
}

/// Least-norm coefficients `Y⁺ w`, robust to badly scaled columns.
///
/// Columns are equilibrated before the ladder so that a tiny but nonzero
/// field is not mistaken for a null direction; the result is projected back
/// onto the row space of `Y` so that the Euclidean least-norm property holds.
pub fn least_norm_coefficients(y: &DMatrix<f64>, w: &DVector<f64>, ladder: &[f64]) -> Result<PinvSolution> {
    let q = y.ncols();
    let scales: Vec<f64> = (0..q)
        .map(|j| {
            let s = y.column(j).norm();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    let mut yhat = y.clone();
    for (j, s) in scales.iter().enumerate() {
        yhat.column_mut(j).scale_mut(1.0 / s);
    }
    let mut sol = pinv_least_norm(&yhat, w, ladder)?;
    for (j, s) in scales.iter().enumerate() {
        sol.coeffs[j] /= s;
    }

    // range(Yᵀ) = D · rowspace(Ŷ)
    let svd = yhat.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| top > 0.0 && svd.singular_values[i] > NULL_TOL * top)
        .collect();
    if keep.is_empty() {
        sol.coeffs.fill(0.0);
        return Ok(sol);
    }
    let mut basis = DMatrix::zeros(q, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        for j in 0..q {
            basis[(j, col)] = scales[j] * v_t[(i, j)];
        }
    }
    if keep.len() < q {
        let qr = basis.qr().q();
        sol.coeffs = &qr * (qr.transpose() * &sol.coeffs);
    }
    Ok(sol)
}

/// `c_{jk}(x) = Y_x⁺ [Y_j, Y_k]_x` with its residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureCoefficients {
    pub point: Vec<f64>,
    /// Zero-based field indices.
    pub pair: (usize, usize),
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub delta: f64,
    pub ill_conditioned: bool,
}

impl StructureCoefficients {
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

pub fn structure_coefficients(family: &FieldFamily, j: usize, k: usize, x: &DVector<f64>) -> Result<StructureCoefficients> {
    structure_coefficients_with(family, j, k, x, &DEFAULT_DELTA_LADDER)
}

pub fn structure_coefficients_with(
    family: &FieldFamily,
    j: usize,
    k: usize,
    x: &DVector<f64>,
    ladder: &[f64],
) -> Result<StructureCoefficients> {
    if j >= family.count() || k >= family.count() {
        return Err(Error::InvalidArgument(format!("field pair ({}, {}) out of range", j + 1, k + 1)));
    }
    let x = family.dejitter(x)?;
    let frame = family.evaluate(&x)?;
    let w = commutator_at(family, j, k, &x)?;
    let sol = least_norm_coefficients(&frame.matrix, &w, ladder)?;
    let residual = (&frame.matrix * &sol.coeffs - &w).norm();
    Ok(StructureCoefficients {
        point: x.iter().copied().collect(),
        pair: (j, k),
        coeffs: sol.coeffs.iter().copied().collect(),
        residual,
        delta: sol.delta,
        ill_conditioned: !sol.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSup {
    /// One-based field indices, as printed.
    pub pair: (usize, usize),
    pub sup_coeff: f64,
    pub argmax: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flag {
    pub point: Vec<f64>,
    pub pair: (usize, usize),
    pub coeff_norm: f64,
    pub residual: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvolutivityReport {
    pub bounds: Bounds,
    pub samples: usize,
    pub seed: u64,
    pub coeff_threshold: f64,
    pub residual_tol: f64,
    pub pairs: Vec<PairSup>,
    pub sup_residual: f64,
    pub flag_count: usize,
    /// The first flags in sample order; `flag_count` counts all of them.
    pub flags: Vec<Flag>,
    pub pass: bool,
}

impl InvolutivityReport {
    /// Largest `|c_{jk}|` over all pairs, the empirical lower estimate of `C_Ω`.
    pub fn sup_coeff(&self) -> f64 {
        self.pairs.iter().map(|p| p.sup_coeff).fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> Option<&[f64]> {
        self.pairs
            .iter()
            .max_by(|a, b| a.sup_coeff.total_cmp(&b.sup_coeff))
            .map(|p| p.argmax.as_slice())
    }
}

const STORED_FLAGS: usize = 50;

struct SampleOutcome {
    point: Vec<f64>,
    per_pair: Vec<std::result::Result<StructureCoefficients, String>>,
}

/// Audits `[Y_j,Y_k]_x ∈ P_x^{C}` on a low-discrepancy sample of `bounds`.
pub fn domain_audit(
    family: &FieldFamily,
    bounds: &Bounds,
    samples: usize,
    seed: u64,
    coeff_threshold: f64,
    residual_tol: f64,
) -> Result<InvolutivityReport> {
    if bounds.dim() != family.dim() {
        return Err(Error::InvalidArgument("box dimension mismatch".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let q = family.count();
    let pairs: Vec<(usize, usize)> = (0..q).flat_map(|j| (j + 1..q).map(move |k| (j, k))).collect();
    let halton = ScrambledHalton::new(family.dim(), seed);

    let outcomes: Vec<SampleOutcome> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let x = bounds.from_unit(&halton.point(i));
            let per_pair = pairs
                .iter()
                .map(|&(j, k)| structure_coefficients(family, j, k, &x).map_err(|e| e.to_string()))
                .collect();
            SampleOutcome {
                point: x.iter().copied().collect(),
                per_pair,
            }
        })
        .collect();

    let mut sups: Vec<PairSup> = pairs
        .iter()
        .map(|&(j, k)| PairSup {
            pair: (j + 1, k + 1),
            sup_coeff: 0.0,
            argmax: Vec::new(),
        })
        .collect();
    let mut sup_residual = 0.0f64;
    let mut flags = Vec::new();
    let mut flag_count = 0;
    for outcome in outcomes {
        for (slot, result) in outcome.per_pair.into_iter().enumerate() {
            let (j, k) = pairs[slot];
            let (norm, residual, reason) = match result {
                Ok(sc) => {
                    let norm = sc.norm();
                    if norm > sups[slot].sup_coeff || sups[slot].argmax.is_empty() {
                        sups[slot].sup_coeff = norm;
                        sups[slot].argmax = sc.point.clone();
                    }
                    sup_residual = sup_residual.max(sc.residual);
                    let reason = if norm > coeff_threshold {
                        Some("coefficient above threshold".to_string())
                    } else if sc.residual > residual_tol {
                        Some("residual above tolerance".to_string())
                    } else {
                        None
                    };
                    (norm, sc.residual, reason)
                }
                Err(message) => (f64::NAN, f64::NAN, Some(message)),
            };
            if let Some(reason) = reason {
                flag_count += 1;
                if flags.len() < STORED_FLAGS {
                    flags.push(Flag {
                        point: outcome.point.clone(),
                        pair: (j + 1, k + 1),
                        coeff_norm: norm,
                        residual,
                        reason,
                    });
                }
            }
        }
    }
    Ok(InvolutivityReport {
        bounds: bounds.clone(),
        samples,
        seed,
        coeff_threshold,
        residual_tol,
        pairs: sups,
        sup_residual,
        flag_count,
        flags,
        pass: flag_count == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendRow {
    pub radius: f64,
    pub sup_coeff: f64,
    pub argmax: Vec<f64>,
}

/// Empirical sup of `|c|` on nested boxes around `center`; a growing column
/// as the radius shrinks suggests blow-up at `center`.
pub fn nested_box_trend(
    family: &FieldFamily,
    center: &[f64],
    radii: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<TrendRow>> {
    radii
        .iter()
        .map(|&r| {
            let report = domain_audit(family, &Bounds::around(center, r)?, samples, seed, f64::INFINITY, f64::INFINITY)?;
            Ok(TrendRow {
                radius: r,
                sup_coeff: report.sup_coeff(),
                argmax: report.argmax().map(<[f64]>::to_vec).unwrap_or_default(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn example_family_commutes() {
        let fam = builtins::example_graph();
        let c = commutator(&fam, 0, 1, &v(&[0.5, 0.7])).unwrap();
        assert!(c.norm() < 1e-14, "{c}");
        let sc = structure_coefficients(&fam, 0, 1, &v(&[0.5, 0.7])).unwrap();
        assert!(sc.norm() < 1e-14 && sc.residual < 1e-14);
    }

    #[test]
    fn counterexample_commutator_and_coefficients() {
        let fam = builtins::counterexample();
        let c = commutator(&fam, 0, 1, &v(&[0.5, 0.3])).unwrap();
        let expected = 16.0 * (-4.0f64).exp();
        assert!(c[0].abs() < 1e-15 && (c[1] - expected).abs() < 1e-14);
        let sc = structure_coefficients(&fam, 0, 1, &v(&[0.5, 0.3])).unwrap();
        assert!((sc.coeffs[0]).abs() < 1e-9 && (sc.coeffs[1] - 16.0).abs() < 1e-9, "{:?}", sc.coeffs);
        assert!(sc.residual <= 1e-10);
    }

    #[test]
    fn balan_coefficients_at_unit_height() {
        let fam = builtins::balan();
        // direct differentiation gives c_1 = -2 x_2 / |x|^2
        let sc = structure_coefficients(&fam, 0, 1, &v(&[0.0, 1.0])).unwrap();
        assert!((sc.coeffs[0] + 2.0).abs() < 1e-8 && sc.coeffs[1].abs() < 1e-8, "{:?}", sc.coeffs);
        assert!(sc.residual <= 1e-8);
    }

    #[test]
    fn antisymmetry_is_exact() {
        let fam = builtins::balan();
        let x = v(&[0.3, -0.8]);
        assert_eq!(commutator(&fam, 0, 1, &x).unwrap(), -commutator(&fam, 1, 0, &x).unwrap());
    }

    #[test]
    fn pinv_small_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        let b = v(&[1.0, -2.0, 0.5]);
        let sol = pinv_least_norm(&id, &b, &DEFAULT_DELTA_LADDER).unwrap();
        assert!((sol.coeffs - &b).norm() < 1e-12);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let sol = pinv_least_norm(&y, &v(&[1.0, 0.0]), &DEFAULT_DELTA_LADDER).unwrap();
        assert!((sol.coeffs - v(&[1.0, 0.0])).norm() < 1e-9 && sol.converged);
        let zero = DMatrix::<f64>::zeros(2, 2);
        let sol = pinv_least_norm(&zero, &v(&[1.0, 1.0]), &DEFAULT_DELTA_LADDER).unwrap();
        assert_eq!(sol.coeffs, v(&[0.0, 0.0]));
    }

    #[test]
    fn ladder_must_decrease() {
        let y = DMatrix::<f64>::identity(2, 2);
        let b = v(&[1.0, 1.0]);
        assert!(pinv_least_norm(&y, &b, &[1e-6, 1e-4]).is_err());
        assert!(pinv_least_norm(&y, &b, &[]).is_err());
        assert!(pinv_least_norm(&y, &b, &[1e-4, -1.0]).is_err());
    }

    #[test]
    fn example_audit_passes() {
        let fam = builtins::example_graph();
        let bounds = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let report = domain_audit(&fam, &bounds, 2000, 7, 1.0, 1e-8).unwrap();
        assert!(report.pass, "{:?}", report.flags.first());
        assert!(report.sup_coeff() <= 1e-6);
    }

    #[test]
    fn counterexample_audit_fails_near_axis() {
        let fam = builtins::counterexample();
        let bounds = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let report = domain_audit(&fam, &bounds, 2000, 7, 100.0, 1e-6).unwrap();
        assert!(!report.pass);
        assert!(report.sup_coeff() >= 1e3);
        assert!(report.argmax().unwrap()[0].abs() < 0.15);
    }

    #[test]
    fn audit_is_deterministic() {
        let fam = builtins::balan();
        let bounds = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let a = domain_audit(&fam, &bounds, 300, 3, 10.0, 1e-6).unwrap();
        let b = domain_audit(&fam, &bounds, 300, 3, 10.0, 1e-6).unwrap();
        assert_eq!(a, b);
    }
}
