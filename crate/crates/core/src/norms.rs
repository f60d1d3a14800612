//! Discrete inner products and norms on tensor meshes.
//!
//! * `(v, w)` sums over interior nodes with weight `prod hbar`.
//! * `(v, w]_a` sums over nodes with index `1..=M` along `a` and interior
//!   transverse indices, with weight `h_i` along `a` and `hbar` transversely.
//! * `|v|_{1,h}^2 = sum_a (D-_a v, D-_a v]_a` and
//!   `||v||_{1,h}^2 = (v, v) + |v|_{1,h}^2`.
//! * `||v||_{-1,h} = sup_w |(v, w)| / ||w||_{1,h}` over `w` vanishing on the
//!   boundary, evaluated as `sqrt(m^T G^{-1} m)` with `G` the Gram matrix of
//!   `||.||_{1,h}` and `m` the mass-weighted interior values of `v`.
//!
//! All reductions go through [`crate::sum`] so results are reproducible.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{IndexBox, MeshFunction, TensorMesh};
use crate::sparse::SparseOperator;
use crate::stencil::backward_diff;
use crate::sum::pairwise_sum;

pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l2: f64,
    pub h1_semi: f64,
    pub h1: f64,
    pub max: f64,
}

pub fn inner(v: &MeshFunction, w: &MeshFunction) -> Result<f64> {
    v.check_same_mesh(w)?;
    let mesh = v.mesh();
    let terms: Vec<f64> = mesh
        .interior_nodes()
        .map(|idx| {
            let k = mesh.flat(&idx);
            mesh.volume(&idx) * v.values()[k] * w.values()[k]
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

pub fn l2_norm(v: &MeshFunction) -> f64 {
    inner(v, v).expect("same mesh").sqrt()
}

fn onesided_box(mesh: &TensorMesh, axis: usize) -> IndexBox {
    let cells = mesh.cells();
    IndexBox::new(
        vec![1; mesh.dim()],
        (0..mesh.dim())
            .map(|a| if a == axis { cells[a] } else { cells[a] - 1 })
            .collect(),
    )
}

/// Weight of node `idx` in `(., .]_axis`.
fn onesided_weight(mesh: &TensorMesh, axis: usize, idx: &[usize]) -> f64 {
    idx.iter()
        .enumerate()
        .map(|(a, &i)| {
            let ax = mesh.axis(a);
            if a == axis {
                ax.h(i)
            } else {
                ax.hbar(i)
            }
        })
        .product()
}

/// `(v, w]_axis`.
pub fn onesided_inner(v: &MeshFunction, w: &MeshFunction, axis: usize) -> Result<f64> {
    v.check_same_mesh(w)?;
    let mesh = v.mesh();
    if axis >= mesh.dim() {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    let terms: Vec<f64> = onesided_box(mesh, axis)
        .map(|idx| {
            let k = mesh.flat(&idx);
            onesided_weight(mesh, axis, &idx) * v.values()[k] * w.values()[k]
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `||v|]_axis^2`.
pub fn onesided_norm_sq(v: &MeshFunction, axis: usize) -> Result<f64> {
    onesided_inner(v, v, axis)
}

/// `|v|_{1,h}^2`.
pub fn h1_seminorm_sq(v: &MeshFunction) -> f64 {
    let terms: Vec<f64> = (0..v.mesh().dim())
        .map(|axis| {
            let d = backward_diff(v, axis).expect("axis in range");
            onesided_norm_sq(&d, axis).expect("same mesh")
        })
        .collect();
    pairwise_sum(&terms)
}

pub fn h1_seminorm(v: &MeshFunction) -> f64 {
    h1_seminorm_sq(v).sqrt()
}

pub fn h1_norm(v: &MeshFunction) -> f64 {
    (inner(v, v).expect("same mesh") + h1_seminorm_sq(v)).sqrt()
}

/// Maximum of `|v|` over all mesh points.
pub fn max_norm(v: &MeshFunction) -> f64 {
    v.values().iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norms(v: &MeshFunction) -> NormReport {
    let l2_sq = inner(v, v).expect("same mesh");
    let semi_sq = h1_seminorm_sq(v);
    NormReport {
        l2: l2_sq.sqrt(),
        h1_semi: semi_sq.sqrt(),
        h1: (l2_sq + semi_sq).sqrt(),
        max: max_norm(v),
    }
}

/// Interior control volumes in interior order: the diagonal of the mass matrix.
pub fn mass_weights(mesh: &TensorMesh) -> Vec<f64> {
    mesh.interior_nodes().map(|idx| mesh.volume(&idx)).collect()
}

/// Gram matrix `G` of `||.||_{1,h}^2` over interior values of functions
/// vanishing on the boundary: `v^T G v = ||v||_{1,h}^2`.
pub fn h1_gram(mesh: &TensorMesh) -> SparseOperator {
    let n = mesh.interior_count();
    let mut rows: Vec<Vec<(usize, f64)>> = mesh
        .interior_nodes()
        .map(|idx| vec![(mesh.interior_flat(&idx), mesh.volume(&idx))])
        .collect();
    // Each one-sided term w (v_q - v_{q-e})^2 / h^2 couples q and q-e.
    for axis in 0..mesh.dim() {
        let ax = mesh.axis(axis);
        for idx in onesided_box(mesh, axis) {
            let i = idx[axis];
            let h = ax.h(i);
            let c = onesided_weight(mesh, axis, &idx) / (h * h);
            let mut lower = idx.clone();
            lower[axis] -= 1;
            let hi = mesh.is_interior(&idx).then(|| mesh.interior_flat(&idx));
            let lo = mesh.is_interior(&lower).then(|| mesh.interior_flat(&lower));
            if let Some(p) = hi {
                rows[p].push((p, c));
            }
            if let Some(q) = lo {
                rows[q].push((q, c));
            }
            if let (Some(p), Some(q)) = (hi, lo) {
                rows[p].push((q, -c));
                rows[q].push((p, -c));
            }
        }
    }
    SparseOperator::from_rows(n, rows, false).expect("gram columns are in range")
}

/// Dense factorisation of the H^1 Gram matrix for evaluating the dual norm
/// repeatedly on one mesh.
pub struct DualNorm {
    mesh: Arc<TensorMesh>,
    mass: Vec<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl DualNorm {
    pub fn new(mesh: Arc<TensorMesh>, cap: usize) -> Result<Self> {
        let n = mesh.interior_count();
        if n > cap {
            return Err(Error::Capacity { dofs: n, cap });
        }
        let gram = h1_gram(&mesh);
        let dense = DMatrix::from_row_slice(n, n, &gram.to_dense());
        let factor = Cholesky::new(dense)
            .ok_or_else(|| Error::invalid("H1 Gram matrix is not positive definite"))?;
        Ok(Self {
            mass: mass_weights(&mesh),
            mesh,
            factor,
        })
    }

    fn pairing(&self, v: &MeshFunction) -> Result<DVector<f64>> {
        if !(Arc::ptr_eq(v.mesh(), &self.mesh) || **v.mesh() == *self.mesh) {
            return Err(Error::MeshMismatch);
        }
        let vals = v.interior_values();
        Ok(DVector::from_iterator(
            vals.len(),
            vals.iter().zip(&self.mass).map(|(x, m)| x * m),
        ))
    }

    /// `||v||_{-1,h}`; only the interior values of `v` enter.
    pub fn eval(&self, v: &MeshFunction) -> Result<f64> {
        let m = self.pairing(v)?;
        let y = self.factor.solve(&m);
        Ok(m.dot(&y).max(0.0).sqrt())
    }

    /// The maximiser `w* = G^{-1} m` of `(v, w) / ||w||_{1,h}`.
    pub fn maximizer(&self, v: &MeshFunction) -> Result<MeshFunction> {
        let m = self.pairing(v)?;
        let y = self.factor.solve(&m);
        MeshFunction::from_interior(Arc::clone(&self.mesh), y.as_slice())
    }
}

/// `||v||_{-1,h}` via a dense factorisation, capped at [`DEFAULT_DENSE_CAP`] unknowns.
pub fn hminus1_dense(v: &MeshFunction) -> Result<f64> {
    hminus1_dense_capped(v, DEFAULT_DENSE_CAP)
}

pub fn hminus1_dense_capped(v: &MeshFunction, cap: usize) -> Result<f64> {
    DualNorm::new(Arc::clone(v.mesh()), cap)?.eval(v)
}
