//! Acceptance run: every criterion at its stated tolerance, one line each.
//! Oracle values come from `oracles`, which shares nothing with the library.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use nalgebra::{DMatrix, DVector};
use oracles::{balan_coefficients, counterexample_coefficient, min_norm_lstsq, random_low_rank, rank, XorShift};
use orbitlab_core::builtins;
use orbitlab_core::charts::{self, Chart, CHART_STEP};
use orbitlab_core::field::{Bounds, SmoothField};
use orbitlab_core::flows::{self, control_endpoint, quadruple_defect, ControlLaw};
use orbitlab_core::involutivity::{domain_audit, pinv_least_norm, structure_coefficients, DEFAULT_DELTA_LADDER};
use orbitlab_core::mollify::{friedrichs_residual, ladder_audit, wedge_derivative_identity_check, MollifiedFamily};
use orbitlab_core::multivector::{IndexTuple, RANK_TOL};
use orbitlab_core::orbits::{self, cc_distance_upper, rank_stability_audit, CcParams, OrbitParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn subunit_laws(q: usize, horizon: f64, count: usize, seed: u64) -> Vec<ControlLaw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| ControlLaw::random_subunit(q, horizon, 4, &mut rng).unwrap()).collect()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn orbit_confinement() -> Outcome {
    let fam = builtins::example_graph();
    let laws = subunit_laws(2, 1.0, 50, 1);
    let h = flows::default_step(1.0);
    let mut worst: f64 = 0.0;
    let mut states = 0;
    for law in &laws {
        let traj = flows::integrate_subunit(&fam, law, &v(&[0.0, 0.0]), h).unwrap();
        for x in &traj.states {
            worst = worst.max((x[1] - x[0] * x[0].abs()).abs());
            states += 1;
        }
    }
    outcome(worst <= 1e-5, format!("max |x2 - x1|x1|| = {worst:.2e} over {states} states (<= 1e-5)"))
}

fn rank_constancy() -> Outcome {
    let fam = builtins::example_graph();
    let params = OrbitParams::for_family(&fam);
    let mut pass = true;
    let mut detail = String::new();
    for (seed_point, expected) in [([0.0, 0.0], 1), ([0.0, 1.0], 2), ([0.0, -1.0], 2)] {
        let sample = orbits::orbit_sample(&fam, &v(&seed_point), &params).unwrap();
        let audit = orbits::rank_constancy_audit(&fam, &sample, 1e-8).unwrap();
        let ok = audit.pass && audit.seed_rank == expected && audit.flagged.is_empty();
        pass &= ok;
        let _ = write!(detail, "{seed_point:?}: rank {} over {} pts, {} flags; ", audit.seed_rank, sample.points.len(), audit.flagged.len());
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn gronwall() -> Outcome {
    let fam = builtins::example_graph();
    let laws = subunit_laws(2, 0.25, 50, 3);
    let rec = rank_stability_audit(&fam, &v(&[0.5, 0.8]), &laws, 2, 1e-3).unwrap();
    let c_ok = rec.pass && rec.c_hat.is_some_and(|c| c <= 10.0);
    let mut zero_drift: f64 = 0.0;
    for x in [[0.0, 0.0], [0.5, 0.25]] {
        let zero = rank_stability_audit(&fam, &v(&x), &laws, 2, 1e-4).unwrap();
        assert_eq!(zero.lambda_norm, 0.0);
        zero_drift = zero_drift.max(zero.max_drift);
    }
    outcome(
        c_ok && zero_drift <= 1e-8,
        format!("C_hat = {:.3} (<= 10) at (0.5,0.8); zero-case drift {zero_drift:.2e} (<= 1e-8)", rec.c_hat.unwrap_or(f64::NAN)),
    )
}

fn involutivity() -> Outcome {
    let graph = builtins::example_graph();
    let square = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let report = domain_audit(&graph, &square, 2000, 5, 1e6, 1e-8).unwrap();
    let graph_ok = report.pass && report.sup_coeff() <= 1e-6 && report.sup_residual <= 1e-8;

    let ce = builtins::counterexample();
    let mut ce_err: f64 = 0.0;
    for x1 in [0.5, 0.25, 0.125] {
        let thin = Bounds::new(vec![x1, -1.0], vec![x1 * (1.0 + 1e-9), 1.0]).unwrap();
        let sup = domain_audit(&ce, &thin, 64, 5, f64::INFINITY, f64::INFINITY).unwrap().sup_coeff();
        let oracle = counterexample_coefficient(x1);
        ce_err = ce_err.max((sup - oracle).abs() / oracle);
    }

    // the published decomposition has +2x2/|x|^2; hand differentiation gives the minus sign
    let balan = builtins::balan();
    let mut balan_err: f64 = 0.0;
    for x in [[0.0, 1.0], [0.0, 0.5]] {
        let c = structure_coefficients(&balan, 0, 1, &v(&x)).unwrap().coeffs;
        let (o1, o2) = balan_coefficients(x[0], x[1]);
        let printed = 2.0 * x[1] / (x[0] * x[0] + x[1] * x[1]);
        balan_err = balan_err.max((c[0].abs() - printed).abs() / printed);
        balan_err = balan_err.max((c[0] - o1).abs() / o1.abs());
        balan_err = balan_err.max((c[1] - o2).abs());
    }
    outcome(
        graph_ok && ce_err <= 0.05 && balan_err <= 0.05,
        format!(
            "example sup|c| {:.1e}, residual {:.1e}; counterexample rel err {ce_err:.1e}; balan rel err {balan_err:.1e} (<= 5%)",
            report.sup_coeff(),
            report.sup_residual
        ),
    )
}

fn pinv_oracle() -> Outcome {
    let mut rng = XorShift(0x5eed_1234_abcd_0001);
    let mut worst: f64 = 0.0;
    let mut ranks = std::collections::BTreeSet::new();
    for case in 0..200 {
        let n = 1 + rng.below(6);
        let q = 1 + rng.below(6);
        let r = case % (n.min(q) + 1);
        let a = random_low_rank(&mut rng, n, q, r);
        ranks.insert(rank(&a, 1e-12));
        let b: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let expected = min_norm_lstsq(&a, &b, 1e-12);
        let m = DMatrix::from_fn(n, q, |i, j| a.at(i, j));
        let got = pinv_least_norm(&m, &DVector::from_vec(b), &DEFAULT_DELTA_LADDER).unwrap().coeffs;
        let diff = got.iter().zip(&expected).map(|(g, e)| (g - e).powi(2)).sum::<f64>().sqrt();
        let scale = expected.iter().map(|e| e * e).sum::<f64>().sqrt();
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    outcome(worst <= 1e-8, format!("200 matrices, ranks {ranks:?}, worst relative error {worst:.1e} (<= 1e-8)"))
}

fn charts_correct() -> Outcome {
    let fam = builtins::example_graph();
    let mut pass = true;
    let mut detail = String::new();
    for (x0, p, delta) in [([0.0, 0.0], 1, 0.2), ([0.5, 0.8], 2, 0.1)] {
        let basis = charts::select_basis(&fam, &v(&x0), RANK_TOL).unwrap();
        assert_eq!(basis.p, p);
        let chart = Chart::with_radius(basis, delta, CHART_STEP).unwrap();
        let tangency = charts::tangency_audit(&fam, &chart, 16, 0, 1e-5).unwrap().max_defect;
        let beta = charts::beta_defect_audit(&fam, &chart, 16, 0).unwrap();
        // |t|, |s| <= 0.1 on a grid, at the base and sampled chart points;
        // with p = 1 the only pair is V1 with itself
        let fields = charts::v_fields(&fam, &chart.basis);
        let times = [0.1, -0.1, 0.05, -0.05, 0.02, -0.02];
        let mut quad: f64 = 0.0;
        let mut points = vec![vec![0.0; p]];
        points.extend(chart.sample_parameters(delta / 2.0, 4, 1));
        for u in &points {
            let x = chart.map(&fam, u).unwrap();
            for j in 0..p {
                for k in j..p {
                    for &t in &times {
                        for &s in &times {
                            let d = quadruple_defect(&fields[j], &fields[k], t, s, &x, 1e-3).unwrap();
                            quad = quad.max(d.norm() / (t * s).abs());
                        }
                    }
                }
            }
        }
        let slice = charts::slice_audit(&fam, &chart, 0.05, 30, 2, 1e-4).unwrap();
        let ok = tangency <= 1e-4
            && beta <= 1e-9
            && quad <= 1e-3
            && slice.max_residual <= 1e-5
            && !slice.inconclusive
            && slice.failed_inversions == 0;
        pass &= ok;
        let _ = write!(
            detail,
            "{x0:?} p={p}: tangency {tangency:.1e}, beta {beta:.1e}, quad/|ts| {quad:.1e}, slice {:.1e}; ",
            slice.max_residual
        );
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn negative_control() -> Outcome {
    let ce = builtins::counterexample();
    let x0 = v(&[-0.5, 0.0]);
    let basis = charts::select_basis_with_rank(&ce, &x0, 1).unwrap();
    let chart = Chart::build(&ce, basis, CHART_STEP).unwrap();
    let slice = charts::slice_audit(&ce, &chart, 0.4, 30, 2, 1e-3).unwrap();
    let sample = orbits::orbit_sample(&ce, &x0, &OrbitParams::for_family(&ce)).unwrap();
    let audit = orbits::rank_constancy_audit(&ce, &sample, RANK_TOL).unwrap();
    outcome(
        slice.max_residual >= 1e-2 && !audit.pass,
        format!("slice residual {:.2e} (>= 1e-2); rank histogram {:?} (must not be constant)", slice.max_residual, audit.histogram),
    )
}

fn triangle_slack(name: &str) -> (f64, usize) {
    let fam = builtins::builtin(name).unwrap();
    let params = CcParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::NEG_INFINITY;
    let mut unreached = 0;
    for _ in 0..20 {
        // endpoints of random paths, so every distance is finite
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let l1 = ControlLaw::random_subunit(fam.count(), 0.5, 2, &mut rng).unwrap();
        let l2 = ControlLaw::random_subunit(fam.count(), 0.5, 2, &mut rng).unwrap();
        let y = control_endpoint(&fam, &l1, &x, params.h).unwrap();
        let z = control_endpoint(&fam, &l2, &y, params.h).unwrap();
        let a = cc_distance_upper(&fam, &x, &y, &params, &[]).unwrap();
        let b = cc_distance_upper(&fam, &y, &z, &params, &[]).unwrap();
        let hints: Vec<ControlLaw> = match (&a.witness, &b.witness) {
            (Some(u), Some(w)) => vec![u.then(w).unwrap()],
            _ => Vec::new(),
        };
        let c = cc_distance_upper(&fam, &x, &z, &params, &hints).unwrap();
        if !(a.reached() && b.reached() && c.reached()) {
            unreached += 1;
        }
        worst = worst.max(c.value() - a.value() - b.value());
    }
    (worst, unreached)
}

fn cc_distance() -> Outcome {
    let planar = builtins::planar();
    let d = cc_distance_upper(&planar, &v(&[0.0, 0.0]), &v(&[3.0, 4.0]), &CcParams::default(), &[]).unwrap().value();
    let names: Vec<&str> = builtins::list_builtins().into_iter().map(|(n, _)| n).collect();
    let slacks: Vec<(f64, usize)> = std::thread::scope(|s| {
        let handles: Vec<_> = names.iter().map(|n| s.spawn(move || triangle_slack(n))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let worst = slacks.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let unreached: usize = slacks.iter().map(|s| s.1).sum();
    outcome(
        (5.0..=5.05).contains(&d) && worst <= 1e-3 && unreached == 0,
        format!("planar d = {d} in [5, 5.05]; worst triangle slack {worst:.1e} (<= 1e-3) over 20 triples x {} families", names.len()),
    )
}

fn friedrichs() -> Outcome {
    let fam = builtins::example_graph();
    let bounds = Bounds::new(vec![0.2, 0.2], vec![1.0, 1.0]).unwrap();
    let ladder = ladder_audit(&bounds, &[0.1, 0.05, 0.025], None, 64, 9, |s, x| friedrichs_residual(&fam, 0, 1, s, x)).unwrap();
    let max = ladder.sup_norms.iter().cloned().fold(0.0, f64::max);
    let min = ladder.sup_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = max / min;

    let mollified = MollifiedFamily::new(&fam, 0.05).unwrap();
    let (a, b) = (mollified.member(0), mollified.member(1));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut defect: f64 = 0.0;
    for _ in 0..20 {
        let x = bounds.sample_uniform(&mut rng);
        for xf in [&a as &dyn SmoothField, &b] {
            defect = defect.max(wedge_derivative_identity_check(&[&a, &b], xf, &IndexTuple::new(vec![0, 1]), &x).unwrap());
            for k in 0..2 {
                defect = defect.max(wedge_derivative_identity_check(&[&b], xf, &IndexTuple::new(vec![k]), &x).unwrap());
            }
        }
    }
    outcome(
        ratio <= 4.0 && defect <= 1e-5,
        format!("|b12| sup ladder {:.3?}, max/min {ratio:.2} (<= 4); wedge identity defect {defect:.1e} (<= 1e-5)", ladder.sup_norms),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut differing = Vec::new();
    for (name, _) in orbitlab_cli::BUILTIN_SCENARIOS {
        let mut reports = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(format!("{name}-{run}"));
            let code = orbitlab_cli::main_with(
                ["orbitlab", "run", name, "--out", out.to_str().unwrap()],
                &mut std::io::sink(),
                &mut std::io::sink(),
            );
            assert!(code == 0 || code == 1, "{name}: exit {code}");
            reports.push(std::fs::read(out.join("report.json")).unwrap());
        }
        if reports[0] != reports[1] {
            pass = false;
            differing.push(*name);
        }
    }
    outcome(
        pass,
        format!("{} built-in scenarios run twice, differing reports: {differing:?}", orbitlab_cli::BUILTIN_SCENARIOS.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    ("orbit confinement of the graph family", orbit_confinement),
    ("rank constancy on orbit clouds", rank_constancy),
    ("Gronwall stability of the rank functional", gronwall),
    ("involutivity audits against hand-derived coefficients", involutivity),
    ("least-norm pseudo-inverse against elimination oracle", pinv_oracle),
    ("chart correctness", charts_correct),
    ("negative control on the counterexample", negative_control),
    ("control-distance sanity", cc_distance),
    ("Friedrichs estimate and wedge identity", friedrichs),
    ("determinism of built-in scenarios", determinism),
];

fn run(f: fn() -> Outcome) -> (bool, String) {
    let start = std::time::Instant::now();
    match std::panic::catch_unwind(f) {
        Ok(o) => (o.pass, format!("{} [{:.1}s]", o.detail, start.elapsed().as_secs_f64())),
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    }
}

// Criteria run one after another so each timing is its own.
fn main() {
    let results: Vec<(bool, String)> = CRITERIA.iter().map(|(_, f)| run(*f)).collect();
    let mut failed = 0;
    for (i, ((title, _), (pass, detail))) in CRITERIA.iter().zip(&results).enumerate() {
        println!("criterion {:>2} {}: {title}: {detail}", i + 1, if *pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
