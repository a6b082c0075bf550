use nalgebra::{DMatrix, DVector};
use orbitlab_core::expr::Expr;
use orbitlab_core::field::{FieldFamily, PointFrame};
use orbitlab_core::flows::{flow, ControlLaw};
use orbitlab_core::involutivity::{commutator, structure_coefficients};
use orbitlab_core::mollify::{mollify_scalar, MollifierKernel};
use orbitlab_core::multivector::lambda_p;
use orbitlab_core::{builtins, flows};
use proptest::prelude::*;

/// Expressions over `x1, x2` built from the whole grammar.
fn any_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-4i32..=4).prop_map(|k| Expr::Const(k as f64 / 2.0)),
        (0usize..2).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
            (inner.clone(), -3i32..=3).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
            inner.clone().prop_map(|a| Expr::Abs(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Exp(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Sign(Box::new(a))),
            inner.prop_map(|a| Expr::Sqrt(Box::new(a))),
        ]
    })
}

/// Smooth expressions whose values stay moderate on `[-1, 1]^2`.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-4i32..=4).prop_map(|k| Expr::Const(k as f64 / 2.0)),
        (0usize..2).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), 0i32..=3).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
            inner.prop_map(|a| Expr::Exp(Box::new(Expr::Mul(Box::new(Expr::Const(0.25)), Box::new(a))))),
        ]
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printing_then_parsing_preserves_values(e in any_expr(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let printed = e.to_string();
        let back = Expr::parse(&printed).unwrap();
        let x = [x1, x2];
        match (e.eval(&x), back.eval(&x)) {
            (Ok(a), Ok(b)) => prop_assert!(close(a, b, 1e-12), "{printed}: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{printed}: {a:?} vs {b:?}"),
        }
        // one round normalizes the text; after that printing is a fixed point
        let normal = back.to_string();
        prop_assert_eq!(Expr::parse(&normal).unwrap().to_string(), normal);
    }

    #[test]
    fn derivative_matches_central_differences(e in smooth_expr(), x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, var in 0usize..2) {
        let h = 1e-5;
        let x = [x1, x2];
        let mut plus = x;
        let mut minus = x;
        plus[var] += h;
        minus[var] -= h;
        let fd = (e.eval(&plus).unwrap() - e.eval(&minus).unwrap()) / (2.0 * h);
        let d = e.derivative(var).eval(&x).unwrap();
        prop_assert!(close(d, fd, 1e-5), "{e}: {d} vs {fd}");
    }

    #[test]
    fn abs_derivative_is_sign_off_the_kink(a in -1.0f64..1.0, x1 in -1.0f64..1.0) {
        prop_assume!((x1 - a).abs() > 1e-3);
        let e = Expr::parse(&format!("abs(x1 - ({a}))")).unwrap();
        let d = e.derivative(0).eval(&[x1]).unwrap();
        prop_assert_eq!(d, (x1 - a).signum());
    }

    #[test]
    fn commutator_is_antisymmetric(
        m in proptest::collection::vec(-1.0f64..1.0, 12),
        x1 in -1.0f64..1.0,
        x2 in -1.0f64..1.0,
    ) {
        // quadratic fields so the bracket is not identically zero
        let comp = |i: usize| format!("({}) + ({})*x1 + ({})*x2*x2", m[3 * i], m[3 * i + 1], m[3 * i + 2]);
        let fam = FieldFamily::parse("quad", 2, &[vec![comp(0), comp(1)], vec![comp(2), comp(3)]]).unwrap();
        let x = DVector::from_vec(vec![x1, x2]);
        let a = commutator(&fam, 0, 1, &x).unwrap();
        let b = commutator(&fam, 1, 0, &x).unwrap();
        prop_assert!((a + b).norm() <= 1e-12);
        prop_assert!(commutator(&fam, 0, 0, &x).unwrap().norm() == 0.0);
    }

    #[test]
    fn heisenberg_structure_coefficient_is_reciprocal(x1 in 0.1f64..2.0, x2 in -1.0f64..1.0) {
        let fam = builtins::heisenberg();
        let s = structure_coefficients(&fam, 0, 1, &DVector::from_vec(vec![x1, x2])).unwrap();
        prop_assert!(s.coeffs[0].abs() <= 1e-8);
        prop_assert!(close(s.coeffs[1], 1.0 / x1, 1e-8));
        prop_assert!(s.residual <= 1e-8);
    }

    #[test]
    fn flow_group_law(t in -0.5f64..0.5, s in -0.5f64..0.5, x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
        let fam = builtins::rotation();
        let field = fam.member(0);
        let x = DVector::from_vec(vec![x1, x2]);
        let h = 1e-3;
        let composed = flow(&field, &flow(&field, &x, s, h).unwrap(), t, h).unwrap();
        let direct = flow(&field, &x, t + s, h).unwrap();
        prop_assert!((composed - direct).norm() <= 1e-10);
    }

    #[test]
    fn forward_then_backward_returns(t in 0.0f64..1.0, x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
        let fam = builtins::heisenberg();
        let field = orbitlab_core::field::Combination::new(&fam, vec![0.6, -0.8]);
        let x = DVector::from_vec(vec![x1, x2]);
        let back = flow(&field, &flow(&field, &x, t, 1e-3).unwrap(), -t, 1e-3).unwrap();
        prop_assert!((back - x).norm() <= 1e-10);
    }

    #[test]
    fn step_refinement_is_fourth_order(theta in 0.0f64..6.28, t in 0.5f64..2.0) {
        // rotation by -t: the exact flow is known in closed form
        let fam = builtins::rotation();
        let field = fam.member(0);
        let x = DVector::from_vec(vec![theta.cos(), theta.sin()]);
        let exact = DVector::from_vec(vec![(theta - t).cos(), (theta - t).sin()]);
        let coarse = (flow(&field, &x, t, 0.1).unwrap() - &exact).norm();
        let fine = (flow(&field, &x, t, 0.05).unwrap() - &exact).norm();
        prop_assert!(fine <= coarse / 8.0 + 1e-14, "{coarse:e} -> {fine:e}");
    }

    #[test]
    fn mollified_lipschitz_function_is_sigma_close(a in -0.5f64..0.5, b in -0.5f64..0.5, x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, sigma in 0.02f64..0.2) {
        // |x1 - a| + |x2 - b| has Lipschitz constant sqrt(2)
        let f = Expr::parse(&format!("abs(x1 - ({a})) + abs(x2 - ({b}))")).unwrap();
        let kernel = MollifierKernel::new(2).unwrap();
        let x = DVector::from_vec(vec![x1, x2]);
        let smooth = mollify_scalar(&f, sigma, &x, &kernel).unwrap();
        let exact = f.eval(x.as_slice()).unwrap();
        prop_assert!((smooth - exact).abs() <= 2f64.sqrt() * sigma + 1e-12);
    }

    #[test]
    fn wedge_norm_is_rotation_invariant(m in proptest::collection::vec(-1.0f64..1.0, 6), angle in 0.0f64..6.28, p in 1usize..=2) {
        // Cauchy-Binet: |Λ_p(QY)| = |Λ_p(Y)| for orthogonal Q
        let y = DMatrix::from_row_slice(2, 3, &m);
        let q = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let a = lambda_p(&PointFrame::new(DVector::zeros(2), y.clone()), p).norm;
        let b = lambda_p(&PointFrame::new(DVector::zeros(2), q * y), p).norm;
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn concatenated_laws_keep_budgets(t1 in 0.1f64..1.0, t2 in 0.1f64..1.0, seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = ControlLaw::random_subunit(2, t1, 3, &mut rng).unwrap();
        let b = ControlLaw::random_subunit(2, t2, 2, &mut rng).unwrap();
        let ab = a.then(&b).unwrap();
        prop_assert!(ab.is_subunit());
        prop_assert!(close(ab.horizon(), t1 + t2, 1e-14));
        prop_assert!(ab.budget() <= a.horizon() + b.horizon() + 1e-12);
        // the concatenation ends where the second law ends from the first endpoint
        let fam = builtins::heisenberg();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let mid = flows::control_endpoint(&fam, &a, &x, 1e-3).unwrap();
        let end = flows::control_endpoint(&fam, &b, &mid, 1e-3).unwrap();
        let joint = flows::control_endpoint(&fam, &ab, &x, 1e-3).unwrap();
        prop_assert!((end - joint).norm() <= 1e-10);
    }
}
