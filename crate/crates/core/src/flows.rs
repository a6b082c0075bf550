//! Fixed-step RK4 flows of fields and of subunit control systems.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Combination, FieldFamily, Reversed, VectorField};

/// States beyond this norm abort integration.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Slack on `|u| ≤ 1` for laws assembled from floating-point arithmetic.
const SUBUNIT_SLACK: f64 = 1e-12;

/// Default step `10⁻³ · max(1, T)`.
pub fn default_step(horizon: f64) -> f64 {
    1e-3 * horizon.abs().max(1.0)
}

/// Piecewise-constant control `u(t) = u_i` on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ControlLaw {
    /// `breakpoints` start at 0 and increase strictly; one value per interval.
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} breakpoints for {} control values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidArgument("control law must start at t = 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("breakpoints must increase strictly".into()));
        }
        if let Some(first) = values.first() {
            if first.is_empty() || values.iter().any(|u| u.len() != first.len()) {
                return Err(Error::InvalidArgument("control values must share one nonzero length".into()));
            }
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite control value".into()));
        }
        Ok(ControlLaw { breakpoints, values })
    }

    pub fn constant(u: Vec<f64>, horizon: f64) -> Result<Self> {
        ControlLaw::new(vec![0.0, horizon], vec![u])
    }

    /// Law from interval lengths instead of breakpoints.
    pub fn from_durations(durations: &[f64], values: Vec<Vec<f64>>) -> Result<Self> {
        let mut breakpoints = vec![0.0];
        for d in durations {
            breakpoints.push(breakpoints.last().unwrap() + d);
        }
        ControlLaw::new(breakpoints, values)
    }

    /// The empty law of zero duration.
    pub fn empty() -> Self {
        ControlLaw {
            breakpoints: vec![0.0],
            values: Vec::new(),
        }
    }

    /// `m` segments of equal length with random controls in the unit ball.
    pub fn random_subunit(q: usize, horizon: f64, segments: usize, rng: &mut impl Rng) -> Result<Self> {
        if segments == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("need a positive horizon and at least one segment".into()));
        }
        let dt = horizon / segments as f64;
        let values = (0..segments).map(|_| random_unit_ball(q, rng)).collect();
        ControlLaw::from_durations(&vec![dt; segments], values)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn segments(&self) -> usize {
        self.values.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// `b = max_i |u_i|`.
    pub fn bound(&self) -> f64 {
        self.values
            .iter()
            .map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_subunit(&self) -> bool {
        self.bound() <= 1.0 + SUBUNIT_SLACK
    }

    /// `T · b`, an upper bound for `d(γ(0), γ(T))` when `b ≤ 1`.
    pub fn budget(&self) -> f64 {
        self.horizon() * self.bound()
    }

    /// Control value on the interval containing `t` (right-continuous).
    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        if self.values.is_empty() || t < 0.0 || t > self.horizon() {
            return None;
        }
        let i = self.breakpoints[1..].partition_point(|b| *b <= t).min(self.values.len() - 1);
        Some(&self.values[i])
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &ControlLaw) -> Result<ControlLaw> {
        if self.values.is_empty() {
            return Ok(other.clone());
        }
        if other.values.is_empty() {
            return Ok(self.clone());
        }
        let shift = self.horizon();
        let mut breakpoints = self.breakpoints.clone();
        breakpoints.extend(other.breakpoints[1..].iter().map(|t| t + shift));
        let mut values = self.values.clone();
        values.extend(other.values.iter().cloned());
        ControlLaw::new(breakpoints, values)
    }

    /// Segments `(duration, u)`.
    /// Same path run at unit speed: each piece `(dt, u)` becomes `(dt·|u|, u/|u|)`
    /// and zero pieces are dropped. The budget becomes `Σ dt_i |u_i| ≤ T·b`,
    /// which adds up under [`ControlLaw::then`].
    pub fn unit_speed(&self) -> ControlLaw {
        let mut durations = Vec::new();
        let mut values = Vec::new();
        for (dt, u) in self.pieces() {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm * dt > 0.0 {
                durations.push(dt * norm);
                values.push(u.iter().map(|v| v / norm).collect());
            }
        }
        if values.is_empty() {
            return ControlLaw::empty();
        }
        ControlLaw::from_durations(&durations, values).unwrap_or_else(|_| self.clone())
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, u)| (w[1] - w[0], u.as_slice()))
    }
}

/// Uniform sample of the closed unit ball in R^q.
pub fn random_unit_ball(q: usize, rng: &mut impl Rng) -> Vec<f64> {
    let dir = random_unit_vector(q, rng);
    let r = rng.gen::<f64>().powf(1.0 / q as f64);
    dir.into_iter().map(|v| v * r).collect()
}

/// Uniform sample of the unit sphere in R^q.
pub fn random_unit_vector(q: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n2: f64 = v.iter().map(|a| a * a).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub law: ControlLaw,
    pub step: f64,
    pub method: &'static str,
}

impl Trajectory {
    pub fn start(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    /// `T · b` of the driving law.
    pub fn budget(&self) -> f64 {
        self.law.budget()
    }

    /// Columns `t, x1..xn, u1..uq`; the control is the one active on the
    /// step leaving each state (the last row repeats the final value).
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let q = self.law.values().first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for j in 1..=q {
            let _ = write!(out, ",u{j}");
        }
        out.push('\n');
        let horizon = self.law.horizon();
        for (t, x) in self.times.iter().zip(&self.states) {
            let _ = write!(out, "{t}");
            for v in x.iter() {
                let _ = write!(out, ",{v}");
            }
            if q > 0 {
                let local = t.abs().min(horizon);
                let u = self.law.value_at(local).unwrap_or(&[]);
                for v in u {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One classical RK4 step.
pub fn rk4_step<F>(f: &F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: VectorField + ?Sized,
{
    let k1 = f.value(x)?;
    let k2 = f.value(&(x + &k1 * (h / 2.0)))?;
    let k3 = f.value(&(x + &k2 * (h / 2.0)))?;
    let k4 = f.value(&(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

fn guard(x: &DVector<f64>, time: f64) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { time, norm });
    }
    Ok(())
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step must be positive, got {h}")))
    }
}

// Integrates `field` forward for `duration` from `x`, appending to the
// trajectory buffers. `t0` is the time stamp of `x`, `dir` the sign of time.
fn march<F>(field: &F, x: &DVector<f64>, duration: f64, h: f64, t0: f64, dir: f64, times: &mut Vec<f64>, states: &mut Vec<DVector<f64>>) -> Result<DVector<f64>>
where
    F: VectorField + ?Sized,
{
    let steps = (duration / h).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let mut y = x.clone();
    for i in 1..=steps {
        y = rk4_step(field, &y, dt)?;
        let t = t0 + dir * dt * i as f64;
        guard(&y, t)?;
        times.push(t);
        states.push(y.clone());
    }
    Ok(y)
}

/// Trajectory of `e^{tV} x₀`; negative `t` integrates `−V` forward.
pub fn integrate_field<F>(field: &F, x0: &DVector<f64>, t: f64, h: f64) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
{
    check_step(h)?;
    guard(x0, 0.0)?;
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let sign = if t < 0.0 { -1.0 } else { 1.0 };
    if t != 0.0 {
        if t > 0.0 {
            march(field, x0, t, h, 0.0, 1.0, &mut times, &mut states)?;
        } else {
            march(&Reversed(field), x0, -t, h, 0.0, -1.0, &mut times, &mut states)?;
        }
    }
    let law = if t == 0.0 {
        ControlLaw::empty()
    } else {
        ControlLaw::constant(vec![sign], t.abs())?
    };
    Ok(Trajectory {
        times,
        states,
        law,
        step: h,
        method: "rk4",
    })
}

/// Endpoint of `e^{tV} x₀` without storing the path.
pub fn flow<F>(field: &F, x0: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>>
where
    F: VectorField + ?Sized,
{
    check_step(h)?;
    if t == 0.0 {
        return Ok(x0.clone());
    }
    let steps = (t.abs() / h).ceil().max(1.0) as usize;
    let dt = t.abs() / steps as f64;
    let mut y = x0.clone();
    for i in 1..=steps {
        y = if t > 0.0 {
            rk4_step(field, &y, dt)?
        } else {
            rk4_step(&Reversed(field), &y, dt)?
        };
        guard(&y, t.signum() * dt * i as f64)?;
    }
    Ok(y)
}

/// Solves `γ̇ = Σ u_j(t) Y_j(γ)` across every interval of a subunit law.
pub fn integrate_subunit(family: &FieldFamily, law: &ControlLaw, x0: &DVector<f64>, h: f64) -> Result<Trajectory> {
    if !law.is_subunit() {
        return Err(Error::Precondition(format!("control bound {} exceeds 1", law.bound())));
    }
    integrate_control(family, law, x0, h)
}

/// As [`integrate_subunit`] without the `|u| ≤ 1` check.
pub fn integrate_control(family: &FieldFamily, law: &ControlLaw, x0: &DVector<f64>, h: f64) -> Result<Trajectory> {
    check_step(h)?;
    if let Some(u) = law.values().first() {
        if u.len() != family.count() {
            return Err(Error::InvalidArgument(format!(
                "control has {} entries, family has {} fields",
                u.len(),
                family.count()
            )));
        }
    }
    guard(x0, 0.0)?;
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut x = x0.clone();
    for ((dt, u), t0) in law.pieces().zip(law.breakpoints()) {
        let field = Combination::new(family, u.to_vec());
        x = march(&field, &x, dt, h, *t0, 1.0, &mut times, &mut states)?;
    }
    Ok(Trajectory {
        times,
        states,
        law: law.clone(),
        step: h,
        method: "rk4",
    })
}

/// Endpoint of a control law without storing the path.
pub fn control_endpoint(family: &FieldFamily, law: &ControlLaw, x0: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    check_step(h)?;
    let mut x = x0.clone();
    for (dt, u) in law.pieces() {
        let field = Combination::new(family, u.to_vec());
        x = flow(&field, &x, dt, h)?;
    }
    Ok(x)
}

/// `e^{−tV_j} e^{−sV_k} e^{tV_j} e^{sV_k} x − x`.
pub fn quadruple_defect<A, B>(vj: &A, vk: &B, t: f64, s: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    A: VectorField + ?Sized,
    B: VectorField + ?Sized,
{
    let y = flow(vk, x, s, h)?;
    let y = flow(vj, &y, t, h)?;
    let y = flow(vk, &y, -s, h)?;
    let y = flow(vj, &y, -t, h)?;
    Ok(y - x)
}

/// `(a/b)(e^{bt} − 1)`.
pub fn gronwall_bound(a: f64, b: f64, t: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::InvalidArgument(format!("Gronwall rate must be positive, got {b}")));
    }
    if a < 0.0 || t < 0.0 {
        return Err(Error::InvalidArgument("Gronwall bound needs a >= 0 and t >= 0".into()));
    }
    Ok(a / b * (b * t).exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::field::{AffineField, Member};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unit_translation() {
        let fam = builtins::planar();
        let end = flow(&fam.member(0), &v(&[0.0, 0.0]), 1.0, 1e-3).unwrap();
        assert!((end - v(&[1.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn example_first_field_follows_graph() {
        let fam = builtins::example_graph();
        let traj = integrate_field(&fam.member(0), &v(&[0.0, 0.0]), 1.0, 1e-3).unwrap();
        assert!((traj.endpoint() - v(&[1.0, 1.0])).norm() < 1e-9);
        assert_eq!(traj.times.len(), 1001);
    }

    #[test]
    fn rotation_returns_after_full_turn() {
        let rot = AffineField {
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            offset: v(&[0.0, 0.0]),
        };
        let h = 1e-2;
        let x0 = v(&[1.0, 0.5]);
        let end = flow(&rot, &x0, 2.0 * std::f64::consts::PI, h).unwrap();
        assert!((end - x0).norm() <= 10.0 * h.powi(4));
    }

    #[test]
    fn backward_flow_is_reversed_field() {
        let fam = builtins::heisenberg();
        let x0 = v(&[0.3, -0.2]);
        let y = flow(&fam.member(1), &x0, -0.7, 1e-3).unwrap();
        assert!((y - v(&[0.3, -0.2 - 0.7 * 0.3])).norm() < 1e-13);
        let traj = integrate_field(&fam.member(1), &x0, -0.7, 1e-3).unwrap();
        assert!(traj.times.last().unwrap() + 0.7 < 1e-12);
        assert_eq!(traj.law.value_at(0.1), Some(&[-1.0][..]));
    }

    #[test]
    fn divergence_guard() {
        let blowup = FieldFamily::parse("blowup", 1, &[vec!["x1^2"]]).unwrap();
        match flow(&blowup.member(0), &v(&[1.0]), 2.0, 1e-3) {
            Err(Error::Divergence { time, .. }) => assert!(time < 1.01),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_control_translates() {
        let fam = builtins::planar();
        let law = ControlLaw::constant(vec![1.0, 0.0], 5.0).unwrap();
        let traj = integrate_subunit(&fam, &law, &v(&[1.0, 1.0]), default_step(5.0)).unwrap();
        assert!((traj.endpoint() - v(&[6.0, 1.0])).norm() < 1e-12);
        assert_eq!(traj.budget(), 5.0);
    }

    #[test]
    fn superunit_law_needs_relaxed_entry_point() {
        let fam = builtins::planar();
        let law = ControlLaw::constant(vec![3.0, 4.0], 1.0).unwrap();
        assert!(matches!(integrate_subunit(&fam, &law, &v(&[0.0, 0.0]), 1e-3), Err(Error::Precondition(_))));
        let end = integrate_control(&fam, &law, &v(&[0.0, 0.0]), 1e-3).unwrap();
        assert!((end.endpoint() - v(&[3.0, 4.0])).norm() < 1e-12);
    }

    #[test]
    fn example_paths_stay_on_graph() {
        let fam = builtins::example_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let law = ControlLaw::random_subunit(2, 1.0, 8, &mut rng).unwrap();
            let traj = integrate_subunit(&fam, &law, &v(&[0.0, 0.0]), 1e-3).unwrap();
            let x = traj.endpoint();
            assert!((x[1] - x[0] * x[0].abs()).abs() <= 1e-6, "{x}");
        }
    }

    #[test]
    fn heisenberg_quadruple_defect() {
        let fam = builtins::heisenberg();
        let (t, s) = (0.3, 0.3);
        let d = quadruple_defect(&fam.member(0), &fam.member(1), t, s, &v(&[0.2, 0.1]), 1e-3).unwrap();
        assert!((&d - v(&[0.0, -t * s])).norm() < 1e-12, "{d}");
        let same: Member = fam.member(0);
        let d = quadruple_defect(&same, &same, 0.4, 0.2, &v(&[0.2, 0.1]), 1e-3).unwrap();
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn gronwall_values() {
        assert_eq!(gronwall_bound(0.0, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(gronwall_bound(3.0, 2.0, 0.0).unwrap(), 0.0);
        assert!((gronwall_bound(1.0, 1.0, 1.0).unwrap() - 1.718_281_828_459_045).abs() < 1e-15);
        assert!(gronwall_bound(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn law_bookkeeping() {
        let law = ControlLaw::from_durations(&[0.5, 1.5], vec![vec![0.6, 0.8], vec![0.0, -0.5]]).unwrap();
        assert_eq!(law.horizon(), 2.0);
        assert!((law.bound() - 1.0).abs() < 1e-15);
        assert_eq!(law.value_at(0.5), Some(&[0.0, -0.5][..]));
        assert_eq!(law.value_at(2.0), Some(&[0.0, -0.5][..]));
        let both = law.then(&law).unwrap();
        assert_eq!(both.horizon(), 4.0);
        assert_eq!(both.segments(), 4);
        assert!(ControlLaw::new(vec![0.0, 1.0, 1.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ControlLaw::new(vec![0.1, 1.0], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn csv_columns() {
        let fam = builtins::planar();
        let law = ControlLaw::constant(vec![1.0, 0.0], 0.002).unwrap();
        let traj = integrate_subunit(&fam, &law, &v(&[0.0, 0.0]), 1e-3).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,u1,u2"));
        assert_eq!(lines.count(), 3);
    }
}
