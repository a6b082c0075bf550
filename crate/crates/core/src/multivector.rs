//! Minors of a point frame and the rank functional built from them.
//!
//! For a grade `p`, the p-vector `Y_J = Y_{j1} ∧ … ∧ Y_{jp}` has coordinates
//! `Y_J^K = det(rows K, columns J)` in the basis `e_K`, and `Λ_p(x)` collects
//! every `Y_J^K`. Its norm vanishes exactly when the frame has rank below `p`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PointFrame;

/// Default relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Below this `|Y_I|` a Cramer solve is refused.
pub const DEGENERATE_BASIS: f64 = 1e-12;

/// Strictly increasing indices, stored zero-based and printed one-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexTuple(Vec<usize>);

impl IndexTuple {
    /// From zero-based indices; panics unless strictly increasing.
    pub fn new(indices: Vec<usize>) -> Self {
        assert!(indices.windows(2).all(|w| w[0] < w[1]), "indices must increase");
        IndexTuple(indices)
    }

    /// From one-based indices as written in formulas.
    pub fn one_based(indices: &[usize]) -> Self {
        assert!(indices.iter().all(|&i| i >= 1));
        IndexTuple::new(indices.iter().map(|i| i - 1).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn one_based_vec(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }
}

impl fmt::Display for IndexTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `I(p, μ)` in lexicographic order; empty when `p > μ` or `p == 0`.
pub fn index_sets(p: usize, mu: usize) -> Vec<IndexTuple> {
    let mut out = Vec::new();
    if p == 0 || p > mu {
        return out;
    }
    let mut current: Vec<usize> = (0..p).collect();
    loop {
        out.push(IndexTuple(current.clone()));
        let Some(slot) = (0..p).rev().find(|&s| current[s] < mu - p + s) else {
            return out;
        };
        current[slot] += 1;
        for k in slot + 1..p {
            current[k] = current[k - 1] + 1;
        }
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(mut m: DMatrix<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[(a, col)].abs().total_cmp(&m[(b, col)].abs()))
            .unwrap();
        if m[(pivot, col)] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap_rows(pivot, col);
            det = -det;
        }
        let p = m[(col, col)];
        det *= p;
        for r in col + 1..n {
            let factor = m[(r, col)] / p;
            if factor != 0.0 {
                for c in col + 1..n {
                    m[(r, c)] -= factor * m[(col, c)];
                }
            }
        }
    }
    det
}

/// Determinant of the submatrix picked by `rows` and `cols` (in that order;
/// repeated indices give 0).
pub fn minor(matrix: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    assert_eq!(rows.len(), cols.len());
    let p = rows.len();
    let sub = DMatrix::from_fn(p, p, |r, c| matrix[(rows[r], cols[c])]);
    determinant(sub)
}

/// A p-vector in `Λ_p R^n`, with coordinates on `e_K`, `K ∈ I(p, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PVector {
    pub rows: Vec<IndexTuple>,
    pub coords: Vec<f64>,
}

impl PVector {
    /// `v_1 ∧ … ∧ v_p` for columns of `columns`.
    pub fn wedge(columns: &DMatrix<f64>) -> Self {
        let (n, p) = columns.shape();
        let all: Vec<usize> = (0..p).collect();
        let rows = index_sets(p, n);
        let coords = rows.iter().map(|k| minor(columns, k.as_slice(), &all)).collect();
        PVector { rows, coords }
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &PVector) -> f64 {
        assert_eq!(self.rows, other.rows);
        self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).sum()
    }
}

/// All minors `Y_J^K` of grade `p`, i.e. the vector `Λ_p(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeSpectrum {
    pub p: usize,
    /// `J ∈ I(p, q)`, selecting fields.
    pub cols: Vec<IndexTuple>,
    /// `K ∈ I(p, n)`, selecting coordinates.
    pub rows: Vec<IndexTuple>,
    /// Row-major over `(J, K)`.
    pub minors: Vec<f64>,
    pub norm: f64,
}

impl WedgeSpectrum {
    pub fn minor(&self, j: usize, k: usize) -> f64 {
        self.minors[j * self.rows.len() + k]
    }

    /// `|Y_J|` for the J at position `j`.
    pub fn wedge_norm(&self, j: usize) -> f64 {
        let m = self.rows.len();
        self.minors[j * m..(j + 1) * m].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance between two spectra of the same shape.
    pub fn distance(&self, other: &WedgeSpectrum) -> f64 {
        assert_eq!(self.minors.len(), other.minors.len());
        self.minors
            .iter()
            .zip(&other.minors)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `Λ_p` of a frame; `1 ≤ p ≤ min(n, q)`.
pub fn lambda_p(frame: &PointFrame, p: usize) -> WedgeSpectrum {
    let (n, q) = frame.matrix.shape();
    assert!(p >= 1 && p <= n.min(q), "grade {p} out of range for a {n}x{q} frame");
    let cols = index_sets(p, q);
    let rows = index_sets(p, n);
    let mut minors = Vec::with_capacity(cols.len() * rows.len());
    for j in &cols {
        for k in &rows {
            minors.push(minor(&frame.matrix, k.as_slice(), j.as_slice()));
        }
    }
    let norm = minors.iter().map(|v| v * v).sum::<f64>().sqrt();
    WedgeSpectrum {
        p,
        cols,
        rows,
        minors,
        norm,
    }
}

/// Numerical `p_x`: the largest `p` with
/// `|Λ_p| > tol_rel · max(1, |Y_x|_F^p)`, or 0.
pub fn pointwise_rank(frame: &PointFrame, tol_rel: f64) -> usize {
    let (n, q) = frame.matrix.shape();
    let scale = frame.matrix.norm();
    let mut rank = 0;
    for p in 1..=n.min(q) {
        let threshold = tol_rel * 1f64.max(scale.powi(p as i32));
        if lambda_p(frame, p).norm > threshold {
            rank = p;
        }
    }
    rank
}

/// `ι^k(W) Y_I`: the p-vector of columns `I` with slot `k` (zero-based)
/// replaced by `w`.
pub fn interior_substitute(cols: &IndexTuple, k: usize, w: &DVector<f64>, frame: &PointFrame) -> PVector {
    assert!(k < cols.len());
    let mut m = frame.matrix.select_columns(cols.as_slice());
    m.set_column(k, w);
    PVector::wedge(&m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CramerSolution {
    pub coeffs: DVector<f64>,
    /// `|Σ ξ^k Y_{i_k} - W|`
    pub residual: f64,
}

/// Solves `Σ_k ξ^k Y_{i_k} = W` by `ξ^k = <Y_I, ι^k(W) Y_I> / |Y_I|^2`.
pub fn cramer_solve(cols: &IndexTuple, w: &DVector<f64>, frame: &PointFrame) -> Result<CramerSolution> {
    let basis = frame.matrix.select_columns(cols.as_slice());
    let y_i = PVector::wedge(&basis);
    let norm2 = y_i.dot(&y_i);
    if norm2.sqrt() < DEGENERATE_BASIS {
        return Err(Error::DegenerateBasis { norm: norm2.sqrt() });
    }
    let coeffs = DVector::from_iterator(
        cols.len(),
        (0..cols.len()).map(|k| y_i.dot(&interior_substitute(cols, k, w, frame)) / norm2),
    );
    let residual = (&basis * &coeffs - w).norm();
    Ok(CramerSolution { coeffs, residual })
}
