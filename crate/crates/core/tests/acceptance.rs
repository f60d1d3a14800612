//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use fvlab_core::mesh::{MeshFunction, TensorMesh};
use fvlab_core::problem::{builtin, derivative_check, smooth_sample_points, QuadratureRule, SolutionSpec};
use fvlab_core::solver::{solve_poisson, SolveOptions, Source};
use fvlab_core::stencil::{apply_lh, assemble_lh, mu_transverse};
use fvlab_core::study::{
    self, coercivity_check_name, observed_order, MeshFamily, StudyConfig, StudyRow, VerifyConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn worst(report: &fvlab_core::VerifyReport, name: &str) -> (f64, bool) {
    let c = report.check(name).unwrap();
    (c.worst_ratio.unwrap_or(f64::NAN), c.pass && c.trials > 0)
}

fn sampled_coercivity() -> Outcome {
    let start = Instant::now();
    let report = study::verify_suite(&VerifyConfig::new(3, 200, 3, 8, 2024)).unwrap();
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(30);
    let mut parts = Vec::new();
    for axis in 0..3 {
        let name = coercivity_check_name(axis);
        let (w, ok) = worst(&report, &name);
        // bound 5/8 - 1e-12, absolute
        pass &= ok && w >= 5.0 / 8.0 - 1e-12;
        parts.push(format!("{name}={w:.6}"));
    }
    outcome(pass, format!("{} (bound 0.625) in {:.2?}", parts.join(" "), elapsed))
}

fn poincare() -> Outcome {
    let r3 = study::verify_suite(&VerifyConfig::new(3, 200, 3, 8, 2024)).unwrap();
    let r2 = study::verify_suite(&VerifyConfig::new(2, 200, 3, 8, 2025)).unwrap();
    let (w3, ok3) = worst(&r3, "poincare");
    let (w2, ok2) = worst(&r2, "poincare");
    let pass = ok3 && ok2 && w3 <= 1.0 / 3.0 + 1e-12 && w2 <= 0.5 + 1e-12;
    outcome(pass, format!("d=3 worst {w3:.6} (<= 1/3), d=2 worst {w2:.6} (<= 1/2)"))
}

fn operator_stability() -> Outcome {
    let start = Instant::now();
    let report = study::verify_suite(&VerifyConfig::new(3, 50, 3, 6, 31)).unwrap();
    let elapsed = start.elapsed();
    let (w, ok) = worst(&report, "operator_stability");
    let bound = 32.0 / 15.0;
    let pass = ok && w <= bound * (1.0 + 1e-10) && elapsed < Duration::from_secs(60);
    outcome(pass, format!("worst {w:.6} (<= {bound:.6}) in {elapsed:.2?}"))
}

fn solution_stability() -> Outcome {
    let report = study::verify_suite(&VerifyConfig::new(3, 20, 3, 5, 32)).unwrap();
    let (w, ok) = worst(&report, "solution_stability");
    let bound = 32.0 / 30.0;
    let pass = ok && w <= bound * (1.0 + 1e-8);
    outcome(pass, format!("worst {w:.6} (<= {bound:.6})"))
}

fn study_rows(dim: usize, spec: SolutionSpec, family: MeshFamily, levels: &[usize]) -> Vec<StudyRow> {
    let config = StudyConfig::new(dim, spec, family, levels.to_vec());
    let result = study::run_study(&config).unwrap();
    assert!(result.aborted.is_none(), "{:?}", result.aborted);
    result.rows
}

fn smooth_rate(rows: &[StudyRow], elapsed: Duration) -> Outcome {
    let last = rows.last().unwrap();
    let (h1, l2) = (last.ord_h1h.unwrap(), last.ord_l2.unwrap());
    let pass = (1.8..=2.2).contains(&h1) && l2 >= 1.9 && elapsed < Duration::from_secs(300);
    outcome(pass, format!("ord_h1h {h1:.4} in [1.8, 2.2], ord_l2 {l2:.4} >= 1.9, single thread {elapsed:.2?}"))
}

fn random_robustness() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [1, 2, 3] {
        let family = MeshFamily::Random {
            perturbation: 0.3,
            seed,
        };
        let rows = study_rows(3, SolutionSpec::named("sine_product"), family, &[4, 8, 16, 32]);
        let q = rows.last().unwrap().ord_h1h.unwrap();
        pass &= q >= 1.7;
        parts.push(format!("seed {seed}: {q:.4}"));
    }
    outcome(pass, format!("ord_h1h {} (>= 1.7)", parts.join(", ")))
}

fn max_norm_rate(rows: &[StudyRow]) -> Outcome {
    let q = rows.last().unwrap().ord_max.unwrap();
    outcome(q >= 1.4, format!("ord_max {q:.4} (>= 1.4)"))
}

const SMOOTH: [&str; 2] = ["gaussian_cube", "mollifier"];
const BUMPS: [&str; 3] = ["gaussian_cube", "mollifier", "hicks_henne"];

fn experiment_cases() -> Vec<(SolutionSpec, bool)> {
    let mut cases: Vec<(SolutionSpec, bool)> = BUMPS
        .iter()
        .map(|n| (SolutionSpec::named(n), SMOOTH.contains(n)))
        .collect();
    for g1 in BUMPS {
        for g2 in BUMPS {
            let smooth = SMOOTH.contains(&g1) && SMOOTH.contains(&g2);
            cases.push((
                SolutionSpec::difference(SolutionSpec::named(g1), SolutionSpec::named(g2)),
                smooth,
            ));
        }
    }
    cases
}

fn experiments() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_l2 = f64::INFINITY;
    let mut count = 0;
    for (dim, levels) in [(2, &[8, 16, 32, 64][..]), (3, &[8, 16, 32][..])] {
        for (spec, smooth) in experiment_cases() {
            let rows = study_rows(dim, spec.clone(), MeshFamily::Uniform, levels);
            count += 1;
            let columns: [(&str, fn(&StudyRow) -> f64); 4] = [
                ("l2", |r| r.l2),
                ("h1semi", |r| r.h1_semi),
                ("h1h", |r| r.h1h),
                ("max", |r| r.max),
            ];
            for (col, pick) in columns {
                if rows.windows(2).any(|w| pick(&w[1]) >= pick(&w[0])) {
                    failures.push(format!("{} d={dim} {col} not decreasing", spec.label()));
                }
            }
            if smooth {
                let q = rows.last().unwrap().ord_l2.unwrap();
                worst_l2 = worst_l2.min(q);
                if q < 1.5 {
                    failures.push(format!("{} d={dim} ord_l2 {q:.3}", spec.label()));
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{count} studies monotone, smooth worst ord_l2 {worst_l2:.4} (>= 1.5)")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut op_worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(2..=3);
        let cells: Vec<usize> = (0..dim).map(|_| rng.random_range(2..=7)).collect();
        let mesh = Arc::new(TensorMesh::random(&cells, 0.4, rng.random()).unwrap());
        let vals: Vec<f64> = (0..mesh.interior_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let v = MeshFunction::from_interior(Arc::clone(&mesh), &vals).unwrap();
        let assembled = assemble_lh(&mesh, false).matvec(&vals);
        let free = apply_lh(&v).unwrap().interior_values();
        let scale = free.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = assembled
            .iter()
            .zip(&free)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        op_worst = op_worst.max(diff / scale);
    }

    let mut quad_worst: f64 = 0.0;
    for p in 1..=8 {
        let rule = QuadratureRule::gauss_legendre(p).unwrap();
        let (lo, hi) = ([0.1, -0.3, 0.2], [0.7, 0.4, 0.25]);
        for _ in 0..20 {
            let degs: Vec<i32> = (0..3).map(|_| rng.random_range(0..2 * p as i32)).collect();
            let got = rule.box_average(&lo, &hi, &|x: &[f64]| {
                x.iter().zip(&degs).map(|(x, &k)| x.powi(k)).product()
            });
            let exact: f64 = (0..3)
                .map(|a| {
                    let k = degs[a] + 1;
                    (hi[a].powi(k) - lo[a].powi(k)) / (k as f64 * (hi[a] - lo[a]))
                })
                .product();
            quad_worst = quad_worst.max((got - exact).abs());
        }
    }

    let mut fd_worst: f64 = 0.0;
    let names = [
        "sine_product",
        "gaussian_cube",
        "mollifier",
        "hicks_henne",
        "difference:gaussian_cube,mollifier",
    ];
    for name in names {
        for dim in [2, 3] {
            let sol = builtin(&SolutionSpec::parse(name).unwrap(), dim).unwrap();
            let pts = smooth_sample_points(&sol, 100, 17);
            fd_worst = fd_worst.max(derivative_check(&sol, &pts, 1e-3));
        }
    }

    let mut rate_worst: f64 = 0.0;
    for q in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
        let hs: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];
        for w in hs.windows(2) {
            let (e0, e1) = (1.7 * w[0].powf(q), 1.7 * w[1].powf(q));
            rate_worst = rate_worst.max((observed_order(e0, e1, w[0], w[1]).unwrap() - q).abs());
        }
    }
    let pass = op_worst <= 1e-13 && quad_worst <= 1e-12 && fd_worst <= 1e-5 && rate_worst <= 1e-12;
    outcome(
        pass,
        format!(
            "operator {op_worst:.1e} (1e-13), quadrature {quad_worst:.1e} (1e-12), derivatives {fd_worst:.1e} (1e-5), rate {rate_worst:.1e} (1e-12)"
        ),
    )
}

fn exactness() -> Outcome {
    let mut zero_worst: f64 = 0.0;
    let mut annihilate_worst: f64 = 0.0;
    let mut mu_worst: f64 = 0.0;
    for seed in 0..10 {
        let dim = 2 + seed as usize % 2;
        let mesh = Arc::new(TensorMesh::random(&vec![6; dim], 0.3, seed).unwrap());
        let zero = |_: &[f64]| 0.0;
        let (u, _) =
            solve_poisson(&mesh, Source::Function(&zero), &QuadratureRule::gauss_legendre(4).unwrap(), &SolveOptions::default())
                .unwrap();
        zero_worst = zero_worst.max(u.values().iter().fold(0.0, |m, x| m.max(x.abs())));

        let c = MeshFunction::from_fn(Arc::clone(&mesh), |_| 2.5);
        let lc = apply_lh(&c).unwrap();
        let scale = mesh.axes().iter().map(|a| a.min_step()).fold(1.0, f64::min).powi(-2);
        for idx in mesh.interior_nodes() {
            annihilate_worst = annihilate_worst.max(lc.at(&idx).abs() / scale);
        }
        for axis in 0..dim {
            let mu = mu_transverse(&c, axis).unwrap();
            for idx in mesh.interior_nodes() {
                mu_worst = mu_worst.max((mu.at(&idx) - 2.5).abs());
            }
        }
    }
    let pass = zero_worst == 0.0 && annihilate_worst <= 1e-12 && mu_worst <= 1e-14;
    outcome(
        pass,
        format!(
            "f=0 gives max |u| {zero_worst:.1e}, constants under L^h {annihilate_worst:.1e} (relative, 1e-12), mu on constants {mu_worst:.1e} (1e-14)"
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("1 coercivity constant (3D, sampled)", sampled_coercivity());
    report("2 discrete Poincare constant", poincare());
    report("3 operator stability", operator_stability());
    report("4 solution stability", solution_stability());

    let start = Instant::now();
    let smooth = single_threaded(|| {
        study_rows(3, SolutionSpec::named("sine_product"), MeshFamily::Uniform, &[4, 8, 16, 32])
    });
    let elapsed = start.elapsed();
    report("5 smooth convergence rate", smooth_rate(&smooth, elapsed));
    report("6 random mesh robustness", random_robustness());
    report("7 max-norm rate", max_norm_rate(&smooth));
    report("8 bump and difference studies", experiments());
    report("9 oracle equivalences", oracles());
    report("10 exactness", exactness());

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
