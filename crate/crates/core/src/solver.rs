//! Krylov solvers for the assembled finite volume system.
//!
//! The system is `(volume-scaled L^h) u = |ω| * avg_ω f` over interior
//! unknowns. `Method::Auto` measures the symmetry defect of the matrix and
//! uses preconditioned CG when it is below tolerance, BiCGStab otherwise.
//! Every reported success has its residual recomputed from `A` and `b`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshFunction, TensorMesh};
use crate::norms::mass_weights;
use crate::problem::{rhs_cell_average, ManufacturedSolution, QuadratureRule};
use crate::sparse::SparseOperator;
use crate::stencil::assemble_lh;
use crate::sum::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Auto,
    Cg,
    BiCgStab,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Auto => "auto",
            Method::Cg => "cg",
            Method::BiCgStab => "bicgstab",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Method::Auto),
            "cg" => Ok(Method::Cg),
            "bicgstab" => Ok(Method::BiCgStab),
            other => Err(Error::invalid(format!("unknown solver method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub rel_tolerance: f64,
    /// `None` picks `20 * n^(1/d) * d` (with `d = 3` when the dimension is unknown).
    pub max_iterations: Option<usize>,
    pub method: Method,
    pub preconditioner: Preconditioner,
    /// Relative to the largest matrix entry.
    pub symmetry_tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-10,
            max_iterations: None,
            method: Method::Auto,
            preconditioner: Preconditioner::Jacobi,
            symmetry_tolerance: 1e-12,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.rel_tolerance = tol;
        self
    }

    pub fn iteration_limit(&self, n: usize, dim: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| {
            let per_axis = (n as f64).powf(1.0 / dim as f64).ceil() as usize;
            (20 * per_axis.max(1) * dim).max(50)
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0) || !(self.symmetry_tolerance > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub symmetry_defect: f64,
    pub method: Method,
}

/// `max |A_ij - A_ji| / max |A|` over stored positions; missing transposed
/// entries count as zero.
pub fn symmetry_defect(a: &SparseOperator) -> f64 {
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for r in 0..a.n() {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            worst = worst.max((v - a.get(c, r)).abs());
        }
    }
    worst / scale
}

fn true_residual(a: &SparseOperator, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    a.matvec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

struct Jacobi(Option<Vec<f64>>);

impl Jacobi {
    fn new(a: &SparseOperator, kind: Preconditioner) -> Result<Self> {
        match kind {
            Preconditioner::None => Ok(Self(None)),
            Preconditioner::Jacobi => {
                let diag = a.diagonal();
                if diag.iter().any(|&d| d == 0.0 || !d.is_finite()) {
                    return Err(Error::invalid("Jacobi preconditioner needs a nonzero diagonal"));
                }
                Ok(Self(Some(diag.iter().map(|d| 1.0 / d).collect())))
            }
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match &self.0 {
            Some(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
            None => z.copy_from_slice(r),
        }
    }
}

/// Solves `A x = b`. `b = 0` returns `x = 0` without iterating.
pub fn solve(a: &SparseOperator, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveReport)> {
    solve_with_dim(a, b, opts, 3)
}

pub(crate) fn solve_with_dim(
    a: &SparseOperator,
    b: &[f64],
    opts: &SolveOptions,
    dim: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    let n = a.n();
    if b.len() != n {
        return Err(Error::invalid(format!(
            "right-hand side has length {}, matrix has {n} rows",
            b.len()
        )));
    }
    let defect = symmetry_defect(a);
    let method = match opts.method {
        Method::Auto if defect <= opts.symmetry_tolerance => Method::Cg,
        Method::Auto => Method::BiCgStab,
        m => m,
    };
    let mut report = SolveReport {
        iterations: 0,
        relative_residual: 0.0,
        symmetry_defect: defect,
        method,
    };
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], report));
    }
    let limit = opts.iteration_limit(n, dim);
    let precond = Jacobi::new(a, opts.preconditioner)?;
    let mut x = vec![0.0; n];
    let (iterations, residual) = match method {
        Method::Cg => cg(a, b, &mut x, &precond, opts.rel_tolerance * b_norm, limit),
        _ => bicgstab(a, b, &mut x, &precond, opts.rel_tolerance * b_norm, limit),
    };
    report.iterations = iterations;
    report.relative_residual = residual / b_norm;
    if report.relative_residual <= opts.rel_tolerance {
        Ok((x, report))
    } else {
        Err(Error::NotConverged {
            method: if method == Method::Cg { "cg" } else { "bicgstab" },
            report: Box::new(report),
        })
    }
}

/// Preconditioned CG. Returns iterations and the recomputed residual norm.
fn cg(
    a: &SparseOperator,
    b: &[f64],
    x: &mut [f64],
    m: &Jacobi,
    target: f64,
    limit: usize,
) -> (usize, f64) {
    let n = b.len();
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    while it < limit {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        if norm2(&r) <= target {
            let residual = true_residual(a, x, b, &mut r);
            if residual <= target {
                return (it, residual);
            }
            // Recurrence drifted: restart from the true residual.
            m.apply(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = true_residual(a, x, b, &mut r);
    (it, residual)
}

/// Right-preconditioned BiCGStab.
fn bicgstab(
    a: &SparseOperator,
    b: &[f64],
    x: &mut [f64],
    m: &Jacobi,
    target: f64,
    limit: usize,
) -> (usize, f64) {
    let n = b.len();
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut it = 0;
    while it < limit {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            // Breakdown: restart with the current residual as shadow vector.
            true_residual(a, x, b, &mut r);
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.fill(0.0);
            p.fill(0.0);
            if norm2(&r) <= target {
                break;
            }
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut p_hat);
        a.matvec_into(&p_hat, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        it += 1;
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            let res = true_residual(a, x, b, &mut r);
            if res <= target {
                return (it, res);
            }
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.fill(0.0);
            p.fill(0.0);
            continue;
        }
        m.apply(&s, &mut s_hat);
        a.matvec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= target {
            let res = true_residual(a, x, b, &mut r);
            if res <= target {
                return (it, res);
            }
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.fill(0.0);
            p.fill(0.0);
        }
    }
    let res = true_residual(a, x, b, &mut r);
    (it, res)
}

/// Right-hand side of the finite volume system.
pub enum Source<'a> {
    /// Cell averages taken with the solution's support-aware subdivision.
    Solution(&'a ManufacturedSolution),
    Function(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
}

/// Volume-scaled system matrix and load vector for one mesh.
pub struct PoissonSystem {
    pub mesh: Arc<TensorMesh>,
    pub matrix: SparseOperator,
    pub rhs: Vec<f64>,
}

impl PoissonSystem {
    pub fn new(mesh: Arc<TensorMesh>, source: Source<'_>, rule: &QuadratureRule) -> Self {
        let averages = match source {
            Source::Solution(sol) => sol.cell_averages(&mesh, rule),
            Source::Function(f) => rhs_cell_average(&mesh, f, rule),
        };
        let rhs = averages
            .interior_values()
            .iter()
            .zip(mass_weights(&mesh))
            .map(|(f, vol)| f * vol)
            .collect();
        Self {
            matrix: assemble_lh(&mesh, true),
            mesh,
            rhs,
        }
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<(MeshFunction, SolveReport)> {
        let (x, report) = solve_with_dim(&self.matrix, &self.rhs, opts, self.mesh.dim())?;
        let u = MeshFunction::from_interior(Arc::clone(&self.mesh), &x)?;
        Ok((u, report))
    }
}

/// Assembles, solves and scatters `u^h` with exact zeros on the boundary.
pub fn solve_poisson(
    mesh: &Arc<TensorMesh>,
    source: Source<'_>,
    rule: &QuadratureRule,
    opts: &SolveOptions,
) -> Result<(MeshFunction, SolveReport)> {
    PoissonSystem::new(Arc::clone(mesh), source, rule).solve(opts)
}
