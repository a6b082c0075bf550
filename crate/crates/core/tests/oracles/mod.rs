//! Independent reference computations for the test suites. Nothing here
//! calls into the library's linear algebra.

#![allow(dead_code)]

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        Mat::from_fn(self.rows, other.cols, |i, j| (0..self.cols).map(|k| self.at(i, k) * other.at(k, j)).sum())
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| (0..self.cols).map(|k| self.at(i, k) * v[k]).sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reduced row echelon form with partial pivoting. Returns the reduced
/// matrix and the pivot columns. Entries below `tol · max|A|` count as zero.
pub fn rref(a: &Mat, tol: f64) -> (Mat, Vec<usize>) {
    let mut m = a.clone();
    let eps = tol * a.max_abs().max(f64::MIN_POSITIVE);
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..m.cols {
        if row == m.rows {
            break;
        }
        let (best, val) = (row..m.rows).map(|r| (r, m.at(r, col).abs())).fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= eps {
            for r in row..m.rows {
                m.set(r, col, 0.0);
            }
            continue;
        }
        for j in 0..m.cols {
            let (u, v) = (m.at(row, j), m.at(best, j));
            m.set(row, j, v);
            m.set(best, j, u);
        }
        let p = m.at(row, col);
        for j in 0..m.cols {
            m.set(row, j, m.at(row, j) / p);
        }
        for r in 0..m.rows {
            if r != row {
                let f = m.at(r, col);
                if f != 0.0 {
                    for j in 0..m.cols {
                        m.set(r, j, m.at(r, j) - f * m.at(row, j));
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (m, pivots)
}

pub fn rank(a: &Mat, tol: f64) -> usize {
    rref(a, tol).1.len()
}

/// Inverse of a small nonsingular matrix by Gauss-Jordan on `[A | I]`.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.rows;
    let aug = Mat::from_fn(n, 2 * n, |i, j| if j < n { a.at(i, j) } else if j - n == i { 1.0 } else { 0.0 });
    let (r, pivots) = rref(&aug, 0.0);
    assert_eq!(&pivots[..n], &(0..n).collect::<Vec<_>>()[..], "singular matrix");
    Mat::from_fn(n, n, |i, j| r.at(i, n + j))
}

/// Moore-Penrose inverse through the full-rank factorization `A = C F`,
/// with `C` the pivot columns of `A` and `F` the nonzero rows of its RREF:
/// `A⁺ = Fᵀ (F Fᵀ)⁻¹ (Cᵀ C)⁻¹ Cᵀ`.
pub fn pseudo_inverse(a: &Mat, tol: f64) -> Mat {
    let (r, pivots) = rref(a, tol);
    let k = pivots.len();
    if k == 0 {
        return Mat::zeros(a.cols, a.rows);
    }
    let c = Mat::from_fn(a.rows, k, |i, j| a.at(i, pivots[j]));
    let f = Mat::from_fn(k, a.cols, |i, j| r.at(i, j));
    let ft = f.transpose();
    let ct = c.transpose();
    ft.mul(&inverse(&f.mul(&ft))).mul(&inverse(&ct.mul(&c))).mul(&ct)
}

/// Minimum-norm least-squares solution of `A c = b`.
pub fn min_norm_lstsq(a: &Mat, b: &[f64], tol: f64) -> Vec<f64> {
    pseudo_inverse(a, tol).mul_vec(b)
}

/// Determinant by the Leibniz permutation expansion.
pub fn leibniz_det(a: &Mat) -> f64 {
    let n = a.rows;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    permute(&mut perm, 0, &mut |p| {
        let sign = parity(p);
        total += sign * (0..n).map(|i| a.at(i, p[i])).product::<f64>();
    });
    total
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

fn parity(p: &[usize]) -> f64 {
    let mut inversions = 0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 { 1.0 } else { -1.0 }
}

/// `|Y_I|` for a p-subset of columns: the root sum of squared p×p minors,
/// each by Leibniz.
pub fn wedge_norm(a: &Mat, cols: &[usize]) -> f64 {
    let p = cols.len();
    let mut sum = 0.0;
    for rows in subsets(a.rows, p) {
        let m = Mat::from_fn(p, p, |i, j| a.at(rows[i], cols[j]));
        sum += leibniz_det(&m).powi(2);
    }
    sum.sqrt()
}

/// Increasing p-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, p, &mut Vec::new(), &mut out);
    out
}

/// `[∂₁, e^{−1/x₁²}∂₂] = (2/x₁³) e^{−1/x₁²} ∂₂`, so the coefficient on `Y₂`
/// is `2/x₁³`, differentiated by hand.
pub fn counterexample_coefficient(x1: f64) -> f64 {
    2.0 / x1.powi(3)
}

/// Balan pair `Y₁ = e^{−1/r²}∂₁`, `Y₂ = r²∂₂`, differentiated by hand:
/// `[Y₁,Y₂] = (−2x₂/r²) Y₁ + (2x₁ e^{−1/r²}/r²) Y₂`.
pub fn balan_coefficients(x1: f64, x2: f64) -> (f64, f64) {
    let r2 = x1 * x1 + x2 * x2;
    (-2.0 * x2 / r2, 2.0 * x1 * (-1.0 / r2).exp() / r2)
}

/// Deterministic xorshift stream for oracle inputs, kept apart from the
/// library's generators.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Random `n×q` matrix of rank at most `r`, as a product of integer
/// factors so the oracle's elimination is exact.
pub fn random_low_rank(rng: &mut XorShift, n: usize, q: usize, r: usize) -> Mat {
    let u = Mat::from_fn(n, r, |_, _| (rng.below(7) as f64) - 3.0);
    let v = Mat::from_fn(r, q, |_, _| (rng.below(7) as f64) - 3.0);
    if r == 0 { Mat::zeros(n, q) } else { u.mul(&v) }
}
