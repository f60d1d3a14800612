use std::f64::consts::PI;
use std::sync::Arc;

use fvlab_core::mesh::{IndexBox, MeshFunction, TensorMesh};
use fvlab_core::norms;
use fvlab_core::solver::symmetry_defect;
use fvlab_core::stencil::{apply_lh, assemble_lh, mu_transverse};
use fvlab_core::study::coercivity_ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mesh_strategy() -> impl Strategy<Value = TensorMesh> {
    (2usize..=3, prop::collection::vec(2usize..=6, 3), 0.0f64..0.45, any::<u64>())
        .prop_map(|(d, cells, p, seed)| TensorMesh::random(&cells[..d], p, seed).unwrap())
}

fn random_interior(mesh: &Arc<TensorMesh>, seed: u64) -> MeshFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..mesh.interior_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    MeshFunction::from_interior(Arc::clone(mesh), &vals).unwrap()
}

/// Random values on the nodes used by the `axis` coercivity ratio.
fn transverse_interior(mesh: &Arc<TensorMesh>, axis: usize, seed: u64) -> MeshFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = mesh.cells();
    let d = mesh.dim();
    let nodes = IndexBox::new(
        (0..d).map(|a| usize::from(a != axis)).collect(),
        (0..d).map(|a| if a == axis { cells[a] + 1 } else { cells[a] - 1 }).collect(),
    );
    let mut v = MeshFunction::zeros(Arc::clone(mesh));
    for idx in nodes {
        v.set(&idx, rng.random_range(-1.0..1.0));
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assembled_operator_matches_matrix_free(mesh in mesh_strategy(), seed in any::<u64>()) {
        let mesh = Arc::new(mesh);
        let v = random_interior(&mesh, seed);
        let a = assemble_lh(&mesh, false);
        let lhs = a.matvec(&v.interior_values());
        let rhs = apply_lh(&v).unwrap().interior_values();
        let scale = rhs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (x, y) in lhs.iter().zip(&rhs) {
            prop_assert!((x - y).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn scaled_matrix_symmetric(mesh in mesh_strategy()) {
        let a = assemble_lh(&mesh, true);
        prop_assert!(symmetry_defect(&a) <= 1e-13);
    }

    #[test]
    fn averaging_preserves_constants(mesh in mesh_strategy(), c in -5.0f64..5.0) {
        let mesh = Arc::new(mesh);
        let v = MeshFunction::from_fn(Arc::clone(&mesh), |_| c);
        for axis in 0..mesh.dim() {
            let mu = mu_transverse(&v, axis).unwrap();
            for idx in mesh.interior_nodes() {
                prop_assert!((mu.at(&idx) - c).abs() <= 1e-14 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn operator_annihilates_constants(mesh in mesh_strategy(), c in -5.0f64..5.0) {
        let mesh = Arc::new(mesh);
        let v = MeshFunction::from_fn(Arc::clone(&mesh), |_| c);
        let lv = apply_lh(&v).unwrap();
        let scale = mesh.max_step().powi(-2) / mesh.quasi_uniformity_ratio();
        for idx in mesh.interior_nodes() {
            prop_assert!(lv.at(&idx).abs() <= 1e-12 * scale * c.abs().max(1.0));
        }
    }

    #[test]
    fn norms_are_homogeneous(mesh in mesh_strategy(), seed in any::<u64>(), t in -3.0f64..3.0) {
        let mesh = Arc::new(mesh);
        let v = random_interior(&mesh, seed);
        let (a, b) = (norms::norms(&v), norms::norms(&v.scaled(t)));
        for (x, y) in [(a.l2, b.l2), (a.h1_semi, b.h1_semi), (a.h1, b.h1), (a.max, b.max)] {
            prop_assert!((t.abs() * x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn poincare_bound_holds(mesh in mesh_strategy(), seed in any::<u64>()) {
        let mesh = Arc::new(mesh);
        let v = random_interior(&mesh, seed);
        let l2 = norms::inner(&v, &v).unwrap();
        let semi = norms::h1_seminorm_sq(&v);
        prop_assert!(l2 <= semi / mesh.dim() as f64 * (1.0 + 1e-12));
    }

    // The weight-identity bound: every averaging coefficient set gives at
    // least one half, in any dimension and on any tensor mesh.
    #[test]
    fn coercivity_at_least_one_half(mesh in mesh_strategy(), seed in any::<u64>()) {
        let mesh = Arc::new(mesh);
        for axis in 0..mesh.dim() {
            let v = transverse_interior(&mesh, axis, seed.wrapping_add(axis as u64));
            if let Some(r) = coercivity_ratio(&v, axis).unwrap() {
                prop_assert!(r >= 0.5 - 1e-12, "ratio {r}");
            }
        }
    }
}

/// Lowest mode along y times highest mode along z on a uniform 3D mesh: the
/// coercivity ratio is `3/4 - cos^2(pi/M)/4`, below 5/8 once `M >= 5`.
fn checkerboard_ratio(m: usize) -> f64 {
    let mesh = Arc::new(TensorMesh::uniform(3, m).unwrap());
    let low = |i: usize| (PI * i as f64 / m as f64).sin();
    let high = |i: usize| (PI * i as f64 * (m - 1) as f64 / m as f64).sin();
    let mut v = MeshFunction::zeros(Arc::clone(&mesh));
    for i in 0..=m {
        for j in 1..m {
            for k in 1..m {
                v.set(&[i, j, k], low(j) * high(k));
            }
        }
    }
    coercivity_ratio(&v, 0).unwrap().unwrap()
}

#[test]
fn coercivity_extremal_mode_matches_symbol() {
    for m in 3..=8 {
        let c = (PI / m as f64).cos();
        let expected = 0.75 - c * c / 4.0;
        assert!((checkerboard_ratio(m) - expected).abs() < 1e-13, "M={m}");
    }
}

#[test]
fn coercivity_five_eighths_fails_at_m5() {
    let r = checkerboard_ratio(5);
    assert!(r < 5.0 / 8.0 - 0.03, "{r}");
    assert!(r > 0.5);
    assert!(checkerboard_ratio(4) >= 5.0 / 8.0 - 1e-12);
}
