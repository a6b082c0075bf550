//! Families of locally Lipschitz vector fields `Y_j = g_j · ∇` on R^n.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Size of the deterministic perturbation applied to points that sit exactly
/// on a kink locus.
pub const KINK_JITTER: f64 = 1e-9;

/// Central finite-difference step for comparisons against a.e. derivatives.
pub const FD_STEP: f64 = 1e-5;

const JITTER_ATTEMPTS: u32 = 8;

/// Anything that assigns a vector to a point of R^n.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// A vector field with an (almost everywhere) Jacobian.
pub trait SmoothField: VectorField {
    /// Matrix `∂g^α/∂x^β`, rows indexed by component.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("box corners must have equal positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("degenerate box {lo:?}..{hi:?}")));
        }
        Ok(Bounds { lo, hi })
    }

    /// The cube `[-r, r]^n` shifted to `center`.
    pub fn around(center: &[f64], radius: f64) -> Result<Self> {
        Bounds::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            u.iter().zip(self.lo.iter().zip(&self.hi)).map(|(t, (a, b))| a + t * (b - a)),
        )
    }

    pub fn sample_uniform(&self, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lo.iter().zip(&self.hi).map(|(a, b)| rng.gen_range(*a..*b)),
        )
    }
}

/// The frame `Y_x = [Y_{1,x}, …, Y_{q,x}] ∈ R^{n×q}` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFrame {
    pub point: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl PointFrame {
    pub fn new(point: DVector<f64>, matrix: DMatrix<f64>) -> Self {
        assert_eq!(point.len(), matrix.nrows());
        PointFrame { point, matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn count(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.matrix.column(j).into_owned()
    }
}

/// An immutable family `{Y_1, …, Y_q}` whose components are expressions.
#[derive(Debug, Clone)]
pub struct FieldFamily {
    name: String,
    dim: usize,
    components: Vec<Vec<Expr>>,
    // jacobians[j][α][β] = ∂g_j^α / ∂x^β
    jacobians: Vec<Vec<Vec<Expr>>>,
}

impl FieldFamily {
    /// `components[j][α]` is the α-th coefficient of the j-th field.
    pub fn new(name: impl Into<String>, dim: usize, components: Vec<Vec<Expr>>) -> Result<Self> {
        if dim == 0 || components.is_empty() {
            return Err(Error::InvalidArgument("a family needs n >= 1 and q >= 1".into()));
        }
        for field in &components {
            if field.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "field has {} components, expected {dim}",
                    field.len()
                )));
            }
            for expr in field {
                let used = expr.max_variable();
                if used > dim {
                    return Err(Error::VariableOutOfRange { index: used, dim });
                }
            }
        }
        let jacobians = components
            .iter()
            .map(|field| {
                field
                    .iter()
                    .map(|g| (0..dim).map(|beta| g.derivative(beta)).collect())
                    .collect()
            })
            .collect();
        Ok(FieldFamily {
            name: name.into(),
            dim,
            components,
            jacobians,
        })
    }

    /// Parses every component; `fields[j][α]` is DSL text.
    pub fn parse<S: AsRef<str>>(name: impl Into<String>, dim: usize, fields: &[Vec<S>]) -> Result<Self> {
        let components = fields
            .iter()
            .map(|f| f.iter().map(|s| Expr::parse(s.as_ref())).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        FieldFamily::new(name, dim, components)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, j: usize, alpha: usize) -> &Expr {
        &self.components[j][alpha]
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, family has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        Ok(())
    }

    /// Coefficient vector `g_j(x)`.
    pub fn field_value(&self, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let xs = x.as_slice();
        let mut out = DVector::zeros(self.dim);
        for (alpha, g) in self.components[j].iter().enumerate() {
            out[alpha] = g.eval(xs).map_err(|source| Error::Eval {
                field: j + 1,
                component: alpha + 1,
                source,
            })?;
        }
        Ok(out)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<PointFrame> {
        self.check_point(x)?;
        let mut matrix = DMatrix::zeros(self.dim, self.count());
        for j in 0..self.count() {
            matrix.set_column(j, &self.field_value(j, x)?);
        }
        Ok(PointFrame::new(x.clone(), matrix))
    }

    /// `Σ_j u_j g_j(x)`.
    pub fn combination(&self, u: &[f64], x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        for (j, &c) in u.iter().enumerate() {
            if c != 0.0 {
                out.axpy(c, &self.field_value(j, x)?, 1.0);
            }
        }
        Ok(out)
    }

    /// A.e. Jacobian of field `j` from the formal derivative expressions.
    /// The caller is responsible for staying off kink loci; see [`Self::dejitter`].
    pub fn jacobian_ae(&self, j: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let xs = x.as_slice();
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (alpha, row) in self.jacobians[j].iter().enumerate() {
            for (beta, d) in row.iter().enumerate() {
                out[(alpha, beta)] = d.eval(xs).map_err(|source| Error::Eval {
                    field: j + 1,
                    component: alpha + 1,
                    source,
                })?;
            }
        }
        Ok(out)
    }

    /// True if any component or derivative of any field is evaluated on a
    /// kink locus (or a zero divisor) at `x`.
    pub fn on_kink_locus(&self, x: &DVector<f64>) -> bool {
        let xs = x.as_slice();
        self.components.iter().flatten().any(|g| g.on_kink_locus(xs))
            || self.jacobians.iter().flatten().flatten().any(|d| d.on_kink_locus(xs))
    }

    /// Returns `x` itself, or a deterministic perturbation of size ~1e-9 off
    /// the kink loci so that a.e. formulas apply.
    pub fn dejitter(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.on_kink_locus(x) {
            return Ok(x.clone());
        }
        for attempt in 1..=JITTER_ATTEMPTS {
            let scale = KINK_JITTER * attempt as f64;
            let sign = if attempt % 2 == 0 { -1.0 } else { 1.0 };
            let y = DVector::from_iterator(
                x.len(),
                x.iter()
                    .enumerate()
                    .map(|(i, v)| v + sign * scale * (1.0 + 0.618_033_988_75 * i as f64)),
            );
            if !self.on_kink_locus(&y) {
                return Ok(y);
            }
        }
        Err(Error::StuckOnKink(x.iter().copied().collect()))
    }

    /// Sampled Lipschitz constant of each field over `bounds`: the maximum of
    /// `|g_j(x) - g_j(y)| / |x - y|` over `samples` random pairs.
    pub fn lipschitz_estimate(&self, bounds: &Bounds, samples: usize, seed: u64) -> Result<Vec<f64>> {
        if bounds.dim() != self.dim {
            return Err(Error::InvalidArgument("box dimension mismatch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = vec![0.0f64; self.count()];
        for _ in 0..samples {
            let x = bounds.sample_uniform(&mut rng);
            let y = bounds.sample_uniform(&mut rng);
            let dist = (&x - &y).norm();
            if dist == 0.0 {
                continue;
            }
            for (j, b) in best.iter_mut().enumerate() {
                let ratio = (self.field_value(j, &x)? - self.field_value(j, &y)?).norm() / dist;
                *b = b.max(ratio);
            }
        }
        Ok(best)
    }

    /// Single member `Y_j` as a standalone field.
    pub fn member(&self, j: usize) -> Member<'_> {
        Member { family: self, index: j }
    }
}

/// One field of a family.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    family: &'a FieldFamily,
    index: usize,
}

impl VectorField for Member<'_> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.family.field_value(self.index, x)
    }
}

impl SmoothField for Member<'_> {
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.family.jacobian_ae(self.index, x)
    }
}

/// The frozen combination `Σ_j u_j Y_j`.
#[derive(Debug, Clone)]
pub struct Combination<'a> {
    family: &'a FieldFamily,
    control: Vec<f64>,
}

impl<'a> Combination<'a> {
    pub fn new(family: &'a FieldFamily, control: Vec<f64>) -> Self {
        assert_eq!(control.len(), family.count());
        Combination { family, control }
    }
}

impl VectorField for Combination<'_> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.family.combination(&self.control, x)
    }
}

/// Affine field `x ↦ A x + b`; smooth baseline for identity checks.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineField {
    pub fn constant(offset: DVector<f64>) -> Self {
        let n = offset.len();
        AffineField {
            matrix: DMatrix::zeros(n, n),
            offset,
        }
    }
}

impl VectorField for AffineField {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * x + &self.offset)
    }
}

impl SmoothField for AffineField {
    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }
}

/// Negation of a field; backward flows are forward flows of this.
pub struct Reversed<'a, F: ?Sized>(pub &'a F);

impl<F: VectorField + ?Sized> VectorField for Reversed<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.0.value(x)?)
    }
}
