//! Divided differences, transverse averaging and the discrete operator
//!
//! ```text
//! L^h v = -sum_a D+_a D-_a mu_a v
//! ```
//!
//! where `D-_a` divides by the step `h`, `D+_a` divides by the half-step
//! `hbar`, and `mu_a` averages over the `d-1` directions transverse to `a`:
//!
//! ```text
//! mu_a v(p) = [3 * 2^(d-1) * prod hbar * v(p) + sum_{s in {-1,+1}^(d-1)} prod w_m(s_m) v(p+s)]
//!             / (2^(d+1) * prod hbar)
//! ```
//!
//! with `w_m(-1) = h^m_{p_m}` and `w_m(+1) = h^m_{p_m+1}`. For `d = 3` this is
//! the 12/16 central weight with four diagonal neighbours.
//!
//! [`apply_lh`] composes the operators on mesh functions; [`assemble_lh`]
//! expands the same stencil into matrix coefficients independently.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{IndexBox, MeshFunction, TensorMesh};
pub use crate::sparse::SparseOperator;

fn check_axis(mesh: &TensorMesh, axis: usize) -> Result<()> {
    if axis >= mesh.dim() {
        return Err(Error::invalid(format!(
            "axis {axis} out of range for dimension {}",
            mesh.dim()
        )));
    }
    Ok(())
}

/// Nodes whose transverse indices are interior and whose index along
/// `axis` runs over `lo..=hi`.
fn line_box(mesh: &TensorMesh, axis: usize, lo: usize, hi: usize) -> IndexBox {
    let cells = mesh.cells();
    let start = (0..mesh.dim())
        .map(|a| if a == axis { lo } else { 1 })
        .collect();
    let extent = (0..mesh.dim())
        .map(|a| if a == axis { hi + 1 - lo } else { cells[a] - 1 })
        .collect();
    IndexBox::new(start, extent)
}

fn transverse(dim: usize, axis: usize) -> Vec<usize> {
    (0..dim).filter(|&m| m != axis).collect()
}

/// `D-_a v = (v_i - v_{i-1}) / h_i` at one node; `i = 0` is an error.
pub fn backward_diff_at(v: &MeshFunction, axis: usize, idx: &[usize]) -> Result<f64> {
    let mesh = v.mesh();
    check_axis(mesh, axis)?;
    let i = idx[axis];
    if i == 0 || i > mesh.axis(axis).cells() {
        return Err(Error::invalid(format!(
            "backward difference undefined at index {i} along axis {axis}"
        )));
    }
    let k = mesh.flat(idx);
    let s = mesh.node_stride(axis);
    Ok((v.values()[k] - v.values()[k - s]) / mesh.axis(axis).h(i))
}

/// `D+_a v = (v_{i+1} - v_i) / hbar_i` at one node; only interior `i` are valid.
pub fn forward_diff_at(v: &MeshFunction, axis: usize, idx: &[usize]) -> Result<f64> {
    let mesh = v.mesh();
    check_axis(mesh, axis)?;
    let i = idx[axis];
    let m = mesh.axis(axis).cells();
    if i == 0 || i >= m {
        return Err(Error::invalid(format!(
            "forward difference needs an interior index along axis {axis}, got {i}"
        )));
    }
    let k = mesh.flat(idx);
    let s = mesh.node_stride(axis);
    Ok((v.values()[k + s] - v.values()[k]) / mesh.axis(axis).hbar(i))
}

/// `D-_a v` on every node with index `1..=M` along `axis` and interior
/// transverse indices; zero elsewhere.
pub fn backward_diff(v: &MeshFunction, axis: usize) -> Result<MeshFunction> {
    let mesh = Arc::clone(v.mesh());
    check_axis(&mesh, axis)?;
    let ax = mesh.axis(axis);
    let s = mesh.node_stride(axis);
    let mut out = MeshFunction::zeros(Arc::clone(&mesh));
    let vals = v.values();
    for idx in line_box(&mesh, axis, 1, ax.cells()) {
        let k = mesh.flat(&idx);
        out.values_mut()[k] = (vals[k] - vals[k - s]) / ax.h(idx[axis]);
    }
    Ok(out)
}

/// `D+_a v` on every node with index `1..=M-1` along `axis` and interior
/// transverse indices; zero elsewhere.
pub fn forward_diff(v: &MeshFunction, axis: usize) -> Result<MeshFunction> {
    let mesh = Arc::clone(v.mesh());
    check_axis(&mesh, axis)?;
    let ax = mesh.axis(axis);
    let s = mesh.node_stride(axis);
    let mut out = MeshFunction::zeros(Arc::clone(&mesh));
    let vals = v.values();
    for idx in line_box(&mesh, axis, 1, ax.cells() - 1) {
        let k = mesh.flat(&idx);
        out.values_mut()[k] = (vals[k + s] - vals[k]) / ax.hbar(idx[axis]);
    }
    Ok(out)
}

/// Weights of the transverse average at a node: the central weight and, per
/// corner, the node offset pattern and weight. Weights sum to one.
struct TransverseWeights {
    central: f64,
    corners: Vec<(u32, f64)>,
}

fn transverse_weights(mesh: &TensorMesh, axes: &[usize], idx: &[usize]) -> TransverseWeights {
    let d = mesh.dim() as i32;
    let hbar_prod: f64 = axes.iter().map(|&m| mesh.axis(m).hbar(idx[m])).product();
    let denom = 2f64.powi(d + 1) * hbar_prod;
    let central = 3.0 * 2f64.powi(d - 1) * hbar_prod / denom;
    let corners = (0..1u32 << axes.len())
        .map(|mask| {
            let w: f64 = axes
                .iter()
                .enumerate()
                .map(|(bit, &m)| {
                    let i = idx[m];
                    if mask >> bit & 1 == 1 {
                        mesh.axis(m).h(i + 1)
                    } else {
                        mesh.axis(m).h(i)
                    }
                })
                .product();
            (mask, w / denom)
        })
        .collect();
    TransverseWeights { central, corners }
}

#[inline]
fn corner_offset(mesh: &TensorMesh, axes: &[usize], mask: u32, base: usize) -> usize {
    axes.iter().enumerate().fold(base, |k, (bit, &m)| {
        if mask >> bit & 1 == 1 {
            k + mesh.node_stride(m)
        } else {
            k - mesh.node_stride(m)
        }
    })
}

/// Transverse average `mu_axis v`, evaluated on every node whose transverse
/// indices are interior (all positions along `axis`); zero elsewhere.
/// Neighbour values on the boundary are read from `v`.
pub fn mu_transverse(v: &MeshFunction, axis: usize) -> Result<MeshFunction> {
    let mesh = Arc::clone(v.mesh());
    check_axis(&mesh, axis)?;
    let axes = transverse(mesh.dim(), axis);
    let vals = v.values();
    let mut out = MeshFunction::zeros(Arc::clone(&mesh));
    for idx in line_box(&mesh, axis, 0, mesh.axis(axis).cells()) {
        let k = mesh.flat(&idx);
        let w = transverse_weights(&mesh, &axes, &idx);
        let corners: f64 = w
            .corners
            .iter()
            .map(|&(mask, c)| c * vals[corner_offset(&mesh, &axes, mask, k)])
            .sum();
        out.values_mut()[k] = w.central * vals[k] + corners;
    }
    Ok(out)
}

/// Matrix-free `L^h v` at interior nodes (boundary entries of the result are zero).
pub fn apply_lh(v: &MeshFunction) -> Result<MeshFunction> {
    let mesh = Arc::clone(v.mesh());
    let mut out = MeshFunction::zeros(Arc::clone(&mesh));
    for axis in 0..mesh.dim() {
        let second = forward_diff(&backward_diff(&mu_transverse(v, axis)?, axis)?, axis)?;
        for idx in mesh.interior_nodes() {
            let k = mesh.flat(&idx);
            out.values_mut()[k] -= second.values()[k];
        }
    }
    Ok(out)
}

/// Coefficients of one row of `L^h` over all node indices (boundary included).
fn stencil_row(mesh: &TensorMesh, idx: &[usize]) -> Vec<(usize, f64)> {
    let d = mesh.dim();
    let k = mesh.flat(idx);
    let mut row = Vec::with_capacity(3usize.pow(d as u32));
    for axis in 0..d {
        let ax = mesh.axis(axis);
        let i = idx[axis];
        let plus = 1.0 / (ax.h(i + 1) * ax.hbar(i));
        let minus = 1.0 / (ax.h(i) * ax.hbar(i));
        let s = mesh.node_stride(axis);
        let axes = transverse(d, axis);
        // mu weights depend only on transverse indices, shared by all three points.
        let w = transverse_weights(mesh, &axes, idx);
        for (centre, c) in [(k - s, minus), (k, -(plus + minus)), (k + s, plus)] {
            row.push((centre, -c * w.central));
            for &(mask, wc) in &w.corners {
                row.push((corner_offset(mesh, &axes, mask, centre), -c * wc));
            }
        }
    }
    row
}

/// Assembles `L^h` over interior unknowns, dropping boundary columns.
/// With `volume_scaled`, row `p` is multiplied by `prod_a hbar_{p_a}`.
pub fn assemble_lh(mesh: &TensorMesh, volume_scaled: bool) -> SparseOperator {
    let n = mesh.interior_count();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let idx = mesh.interior_multi_index(r);
            let scale = if volume_scaled { mesh.volume(&idx) } else { 1.0 };
            let mut entries: Vec<(usize, f64)> = stencil_row(mesh, &idx)
                .into_iter()
                .filter_map(|(k, c)| {
                    let q = mesh.multi_index(k);
                    mesh.is_interior(&q)
                        .then(|| (mesh.interior_flat(&q), c * scale))
                })
                .collect();
            entries.sort_by_key(|&(c, _)| c);
            // Sum duplicates in a fixed order before handing over.
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some((lc, lv)) if *lc == c => *lv += v,
                    _ => merged.push((c, v)),
                }
            }
            merged
        })
        .collect();
    SparseOperator::from_rows(n, rows, volume_scaled).expect("stencil columns are in range")
}
