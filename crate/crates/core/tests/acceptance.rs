//! End-to-end acceptance criteria. They run sequentially inside one test so
//! wall-clock comparisons are not disturbed by concurrent tests; each
//! criterion prints a PASS/FAIL line.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use petrovkit::basis::{multi_indices, MonomialBasis};
use petrovkit::bench::{self, CaseParams, FrankeProblem};
use petrovkit::error::{Error, UnisolvencyReason};
use petrovkit::functionals::{
    lambda_on_basis, weak1_exact_axis_points, weak5_exact_edge_points, FunctionalSpec, ManufacturedData, SubdomainShape,
    SubdomainSpec, TestFunction,
};
use petrovkit::geometry::{generate_grid, NodeSet, Rectangle};
use petrovkit::gmls::{Stencil, WeightFunction};
use petrovkit::solver::{self, DiscreteProblem, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const HS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn fmt_errors(e: &[f64]) -> String {
    e.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")
}

fn within_factor(got: f64, want: f64, factor: f64) -> bool {
    got <= want * factor && got >= want / factor
}

fn convergence_m2() -> Outcome {
    let params = CaseParams::defaults_for(2);
    let r = bench::convergence_study(Method::Dmlpg5, 2, &HS, &params, &FrankeProblem, false).map_err(|e| e.to_string())?;
    let reference = [0.23e-1, 0.72e-2, 0.20e-2, 0.58e-3];
    let errors = r.errors();
    let order = r.final_ratio().unwrap();
    let close = errors.iter().zip(&reference).all(|(g, w)| within_factor(*g, *w, 5.0));
    check(
        close && (1.5..=2.5).contains(&order),
        format!("errors {} final order {order:.2}", fmt_errors(&errors)),
    )
}

fn degree_stagnation_m3() -> Outcome {
    let params = CaseParams {
        delta0: 6.0,
        ..CaseParams::defaults_for(3)
    };
    let r = bench::convergence_study(Method::Dmlpg5, 3, &HS, &params, &FrankeProblem, false).map_err(|e| e.to_string())?;
    let order = r.final_ratio().unwrap();
    check(
        (1.5..=2.5).contains(&order),
        format!("errors {} final order {order:.2}", fmt_errors(&r.errors())),
    )
}

fn high_order_m4() -> Outcome {
    let params = CaseParams {
        c0: 0.8,
        delta0: 8.0,
        shape: SubdomainShape::Square,
        ..CaseParams::defaults_for(4)
    };
    let r = bench::convergence_study(Method::Dmlpg5, 4, &HS, &params, &FrankeProblem, false).map_err(|e| e.to_string())?;
    let order = r.final_ratio().unwrap();
    let last = *r.errors().last().unwrap();
    check(
        order >= 3.3 && within_factor(last, 0.75e-4, 5.0),
        format!("errors {} final order {order:.2}", fmt_errors(&r.errors())),
    )
}

fn cost_and_accuracy() -> (Outcome, Outcome) {
    let params = CaseParams::defaults_for(2);
    let paired = match bench::compare_methods(2, &[0.05, 0.025], &params, &FrankeProblem) {
        Ok(p) => p,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let speedups: Vec<f64> = paired.speedups().into_iter().map(|s| s.unwrap()).collect();
    let cost = check(
        speedups.iter().all(|&s| s >= 3.0),
        format!("assembly speedups {:.1}x at h=0.05, {:.1}x at h=0.025", speedups[0], speedups[1]),
    );
    let reference = paired.reference.rows[1].max_error;
    let direct = paired.direct.rows[1].max_error;
    let accuracy = check(
        direct <= 1.5 * reference,
        format!("h=0.025: DMLPG5 {direct:.2e} vs MLPG5 {reference:.2e}"),
    );
    (cost, accuracy)
}

/// A random functional of the requested kind centred at a random admissible point.
fn random_functional(rng: &mut ChaCha8Rng, kind: usize, m: usize, h: f64, domain: &Rectangle) -> FunctionalSpec {
    let margin = 0.7 * h;
    let y = [rng.gen_range(margin..1.0 - margin), rng.gen_range(margin..1.0 - margin)];
    match kind {
        0 => FunctionalSpec::point_value(0, &y),
        1 => {
            let candidates: Vec<Vec<u32>> = multi_indices(m, 2).into_iter().filter(|a| a.iter().sum::<u32>() >= 1).collect();
            let alpha = candidates[rng.gen_range(0..candidates.len())].clone();
            FunctionalSpec::derivative(0, &y, alpha)
        }
        2 => {
            if rng.gen_bool(0.5) {
                let sub = SubdomainSpec::new(SubdomainShape::Square, h, &y).unwrap();
                FunctionalSpec::weak1(0, sub, TestFunction::quartic(h), weak1_exact_axis_points(m, 4), domain).unwrap()
            } else {
                let sub = SubdomainSpec::new(SubdomainShape::Ball, 0.7 * h, &y).unwrap();
                let test = TestFunction::weight_profile(0.6 * h, 0.7 * h).unwrap();
                FunctionalSpec::weak1(0, sub, test, 20, domain).unwrap()
            }
        }
        _ => {
            let sub = if rng.gen_bool(0.5) {
                SubdomainSpec::new(SubdomainShape::Square, h, &y).unwrap()
            } else {
                SubdomainSpec::new(SubdomainShape::Ball, 0.7 * h, &y).unwrap()
            };
            FunctionalSpec::weak5(0, sub, 20, domain).unwrap()
        }
    }
}

/// Dot product in twice the working precision (error-free products and sums),
/// so the check measures the coefficients rather than its own rounding.
fn compensated_dot(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (a, b) in terms {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let t = sum + p;
        let z = t - sum;
        let s_err = (sum - (t - z)) + (p - z);
        sum = t;
        comp += s_err + p_err;
    }
    sum + comp
}

fn gmls_exactness() -> Outcome {
    let domain = Rectangle::unit_square();
    let grids: Vec<(f64, NodeSet)> = [0.1, 0.05].iter().map(|&h| (h, generate_grid(&domain, h).unwrap())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20120606);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let (h, nodes) = &grids[trial % 2];
        let m = 2 + rng.gen_range(0..3);
        let kind = trial % 4;
        let spec = random_functional(&mut rng, kind, m, *h, &domain);
        let basis = MonomialBasis::new(m, spec.node.clone(), *h).unwrap();
        let weight = WeightFunction::scaled(0.6, 2.0 * m as f64, *h).unwrap();
        let lambda = lambda_on_basis(&spec, &basis).map_err(|e| format!("trial {trial}: {e}"))?;
        let stencil = Stencil::build(nodes, &spec.node, &basis, &weight).map_err(|e| format!("trial {trial}: {e}"))?;
        let row = stencil.solve(&lambda).map_err(|e| e.to_string())?;
        for (k, lk) in lambda.iter().enumerate() {
            let terms = row.indices.iter().zip(&row.values).map(|(&j, a)| (*a, basis.eval(nodes.point(j))[k]));
            let recovered = compensated_dot(terms);
            let d = (recovered - lk).abs() / (1.0 + lk.abs());
            worst = worst.max(d);
        }
    }
    check(worst <= 1e-10, format!("200 stencils, worst scaled defect {worst:.1e}"))
}

/// Minimizes Σ a_j²/w_j subject to P a = λ by solving the full KKT system.
fn kkt_minimizer(p: &DMatrix<f64>, w: &DVector<f64>, lambda: &[f64]) -> DVector<f64> {
    let (q, n) = p.shape();
    let mut k = DMatrix::zeros(n + q, n + q);
    for j in 0..n {
        k[(j, j)] = 1.0 / w[j];
    }
    k.view_mut((0, n), (n, q)).copy_from(&(-p.transpose()));
    k.view_mut((n, 0), (q, n)).copy_from(p);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(n, q).copy_from_slice(lambda);
    let sol = k.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, n).into_owned()
}

fn kkt_equivalence() -> Outcome {
    let domain = Rectangle::unit_square();
    let nodes = generate_grid(&domain, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 50 {
        let m = 1 + rng.gen_range(0..3);
        let delta0 = rng.gen_range(2.2..3.0);
        let y = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let basis = MonomialBasis::new(m, y.to_vec(), 0.1).unwrap();
        let weight = WeightFunction::scaled(rng.gen_range(0.4..1.0), delta0, 0.1).unwrap();
        let Ok(stencil) = Stencil::build(&nodes, &y, &basis, &weight) else { continue };
        if stencil.len() > 30 {
            continue;
        }
        let lambda = basis.eval_derivative(&[1, 0], &y);
        let row = stencil.solve(&lambda).map_err(|e| e.to_string())?;
        let oracle = kkt_minimizer(stencil.basis_values(), stencil.weights(), &lambda);
        for (a, b) in row.values.iter().zip(oracle.iter()) {
            worst = worst.max((a - b).abs());
        }
        tested += 1;
    }
    check(worst <= 1e-9, format!("50 stencils (N_loc <= 30), max |a - a_KKT| = {worst:.1e}"))
}

fn derivative_order() -> Outcome {
    let hs = [0.1, 0.05, 0.025];
    let e = bench::derivative_recovery_errors(2, &hs, 0.6, 4.0).map_err(|e| e.to_string())?;
    let order = bench::observed_ratio(e[1], e[2]);
    check(order >= 1.7, format!("errors {} order {order:.2}", fmt_errors(&e)))
}

fn patch_test() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let exact = ManufacturedData {
            value: |p: &[f64]| c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[0] * p[0] + c[4] * p[0] * p[1] + c[5] * p[1] * p[1],
            gradient: |p: &[f64]| vec![c[1] + 2.0 * c[3] * p[0] + c[4] * p[1], c[2] + c[4] * p[0] + 2.0 * c[5] * p[1]],
            laplacian: |_: &[f64]| 2.0 * (c[3] + c[5]),
        };
        for method in [Method::Dmlpg2, Method::Dmlpg5] {
            let row = bench::run_case(method, 2, 0.1, &CaseParams::defaults_for(2), &exact).map_err(|e| e.to_string())?;
            worst = worst.max(row.max_error);
        }
    }
    check(worst <= 1e-8, format!("DMLPG2/DMLPG5 on random quadratics, worst error {worst:.1e}"))
}

fn row_values(spec: &FunctionalSpec, nodes: &NodeSet, m: usize, h: f64) -> Vec<f64> {
    let basis = MonomialBasis::new(m, spec.node.clone(), h).unwrap();
    let weight = WeightFunction::scaled(0.8, 2.0 * m as f64, h).unwrap();
    let lambda = lambda_on_basis(spec, &basis).unwrap();
    Stencil::build(nodes, &spec.node, &basis, &weight).unwrap().solve(&lambda).unwrap().values
}

fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn quadrature_exactness() -> Outcome {
    let domain = Rectangle::unit_square();
    let h = 0.05;
    let nodes = generate_grid(&domain, h).unwrap();
    let y = [0.35, 0.6];
    let mut worst5 = 0.0f64;
    let mut worst1 = 0.0f64;
    for m in 2..=6 {
        let sub = || SubdomainSpec::new(SubdomainShape::Square, h, &y).unwrap();
        let few = FunctionalSpec::weak5(0, sub(), weak5_exact_edge_points(m), &domain).unwrap();
        let many = FunctionalSpec::weak5(0, sub(), 10, &domain).unwrap();
        worst5 = worst5.max(relative_difference(&row_values(&few, &nodes, m, h), &row_values(&many, &nodes, m, h)));
        let v = TestFunction::quartic(h);
        let few = FunctionalSpec::weak1(0, sub(), v, weak1_exact_axis_points(m, 4), &domain).unwrap();
        let many = FunctionalSpec::weak1(0, sub(), v, 10, &domain).unwrap();
        worst1 = worst1.max(relative_difference(&row_values(&few, &nodes, m, h), &row_values(&many, &nodes, m, h)));
    }
    check(
        worst5 <= 1e-12 && worst1 <= 1e-12,
        format!("m=2..6: Weak5 ceil(m/2) vs 10 points {worst5:.1e}, Weak1 exact count vs 10 points {worst1:.1e}"),
    )
}

fn failure_modes() -> Outcome {
    let domain = Rectangle::unit_square();
    let nodes = generate_grid(&domain, 0.1).unwrap();
    let data = FrankeProblem;
    let mut notes = Vec::new();
    for method in [Method::Dmlpg1, Method::Dmlpg5, Method::Mlpg5Reference] {
        let problem = DiscreteProblem::new(domain.clone(), nodes.clone(), method, 1, &data);
        match solver::assemble(&problem) {
            Err(e @ Error::ZeroRow { degree: 1, .. }) if e.to_string().contains("will necessarily fail") => {}
            other => return Err(format!("{method:?} with m=1 gave {:?}", other.map(|s| s.n_rows()))),
        }
    }
    notes.push("m=1 weak assembly refused");
    let basis = MonomialBasis::new(2, vec![0.5, 0.5], 0.1).unwrap();
    let weight = WeightFunction::gaussian(0.06, 0.1001).unwrap();
    match Stencil::build(&nodes, &[0.5, 0.5], &basis, &weight) {
        Err(Error::Unisolvency {
            reason: UnisolvencyReason::TooFewNeighbors,
            n_local: 5,
            q: 6,
            ..
        }) => notes.push("N_loc=5 < Q=6 raises unisolvency"),
        other => return Err(format!("small stencil gave {:?}", other.map(|s| s.len()))),
    }
    Ok(notes.join("; "))
}

/// Reports straight to the stdout handle so the lines survive output capture.
fn run(id: usize, name: &str, outcome: Outcome, failures: &mut Vec<usize>) {
    let line = match outcome {
        Ok(detail) => format!("criterion {id:>2} PASS  {name}: {detail}"),
        Err(detail) => {
            failures.push(id);
            format!("criterion {id:>2} FAIL  {name}: {detail}")
        }
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance_suite() {
    let mut failures = Vec::new();
    run(1, "convergence m=2 (circles)", guarded(convergence_m2), &mut failures);
    run(2, "degree stagnation m=3", guarded(degree_stagnation_m3), &mut failures);
    run(3, "high order m=4 (squares)", guarded(high_order_m4), &mut failures);
    let (cost, accuracy) = panic::catch_unwind(cost_and_accuracy)
        .unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    run(4, "assembly cost MLPG5 vs DMLPG5", cost, &mut failures);
    run(5, "accuracy DMLPG5 vs MLPG5", accuracy, &mut failures);
    run(6, "GMLS exactness on random stencils", guarded(gmls_exactness), &mut failures);
    run(7, "closed form vs KKT minimizer", guarded(kkt_equivalence), &mut failures);
    run(8, "derivative recovery order", guarded(derivative_order), &mut failures);
    run(9, "patch test", guarded(patch_test), &mut failures);
    run(10, "quadrature exactness", guarded(quadrature_exactness), &mut failures);
    run(11, "failure modes", guarded(failure_modes), &mut failures);
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
