//! Manufactured solutions with closed-form right-hand sides `f = -Δu`, and
//! cell averaging of `f` over control volumes by tensor Gauss–Legendre rules.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshFunction, TensorMesh};
use crate::sum::pairwise_sum;

pub const BUILTIN_NAMES: [&str; 5] = [
    "sine_product",
    "gaussian_cube",
    "mollifier",
    "hicks_henne",
    "difference",
];

pub const DEFAULT_QUAD_ORDER: usize = 4;

/// Serialized description of a solution, e.g.
/// `{"name": "gaussian_cube", "params": {"c": 1.0}}` or
/// `{"name": "difference", "components": [{"name": "mollifier"}, {"name": "mollifier"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<SolutionSpec>,
}

impl SolutionSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            components: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn difference(g1: SolutionSpec, g2: SolutionSpec) -> Self {
        Self {
            name: "difference".into(),
            params: BTreeMap::new(),
            components: vec![g1, g2],
        }
    }

    /// Parses `name` or `difference:<g1>,<g2>`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.split_once(':') {
            Some(("difference", rest)) => {
                let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Error::invalid(format!(
                        "difference needs two components, got `{rest}`"
                    )));
                }
                Ok(Self::difference(Self::named(parts[0]), Self::named(parts[1])))
            }
            Some((name, _)) => Err(Error::UnknownSolution(name.to_string())),
            None => Ok(Self::named(text.trim())),
        }
    }

    pub fn label(&self) -> String {
        if self.components.is_empty() {
            self.name.clone()
        } else {
            let parts: Vec<String> = self.components.iter().map(Self::label).collect();
            format!("{}:{}", self.name, parts.join(","))
        }
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Ball `|x - (c,..,c)| <= radius` outside which a solution vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSphere {
    pub center: f64,
    pub radius: f64,
}

impl SupportSphere {
    /// Whether the sphere surface passes through the box.
    pub fn crosses(&self, lower: &[f64], upper: &[f64]) -> bool {
        let (mut near, mut far) = (0.0, 0.0);
        for (&lo, &hi) in lower.iter().zip(upper) {
            let (a, b) = ((lo - self.center).abs(), (hi - self.center).abs());
            let nearest = if lo <= self.center && self.center <= hi {
                0.0
            } else {
                a.min(b)
            };
            near += nearest * nearest;
            far += a.max(b) * a.max(b);
        }
        near.sqrt() <= self.radius && self.radius <= far.sqrt()
    }
}

#[derive(Debug, Clone)]
enum Kind {
    SineProduct { amplitude: f64 },
    GaussianCube { width: f64 },
    Mollifier,
    HicksHenne,
    Difference(Box<ManufacturedSolution>, Box<ManufacturedSolution>),
}

#[derive(Debug, Clone)]
pub struct ManufacturedSolution {
    name: String,
    dim: usize,
    params: BTreeMap<String, f64>,
    kind: Kind,
    expected_h1h_order: f64,
}

fn check_params(spec: &SolutionSpec, allowed: &[&str]) -> Result<()> {
    if let Some(key) = spec.params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::invalid(format!(
            "solution `{}` has no parameter `{key}`",
            spec.name
        )));
    }
    if !spec.components.is_empty() && spec.name != "difference" {
        return Err(Error::invalid(format!(
            "solution `{}` takes no components",
            spec.name
        )));
    }
    Ok(())
}

/// Builds a solution from its description.
pub fn builtin(spec: &SolutionSpec, dim: usize) -> Result<ManufacturedSolution> {
    if dim < 2 {
        return Err(Error::invalid(format!("dimension must be at least 2, got {dim}")));
    }
    let kind = match spec.name.as_str() {
        "sine_product" => {
            check_params(spec, &["amplitude"])?;
            let amplitude = spec.params.get("amplitude").copied().unwrap_or(1.0);
            if !amplitude.is_finite() {
                return Err(Error::invalid("amplitude must be finite"));
            }
            Kind::SineProduct { amplitude }
        }
        "gaussian_cube" => {
            check_params(spec, &["c"])?;
            let width = spec.params.get("c").copied().unwrap_or(1.0);
            if !(width > 0.0 && width.is_finite()) {
                return Err(Error::invalid(format!(
                    "gaussian_cube width c must be positive, got {width}"
                )));
            }
            Kind::GaussianCube { width }
        }
        "mollifier" => {
            check_params(spec, &[])?;
            Kind::Mollifier
        }
        "hicks_henne" => {
            check_params(spec, &[])?;
            Kind::HicksHenne
        }
        "difference" => {
            check_params(spec, &[])?;
            let [g1, g2] = spec.components.as_slice() else {
                return Err(Error::invalid(format!(
                    "difference needs exactly two components, got {}",
                    spec.components.len()
                )));
            };
            Kind::Difference(Box::new(builtin(g1, dim)?), Box::new(builtin(g2, dim)?))
        }
        other => return Err(Error::UnknownSolution(other.to_string())),
    };
    Ok(ManufacturedSolution {
        name: spec.label(),
        dim,
        params: spec.params.clone(),
        kind,
        expected_h1h_order: 2.0,
    })
}

fn separable(x: &[f64], g: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let vals: Vec<(f64, f64)> = x.iter().map(|&xi| g(xi)).collect();
    let u: f64 = vals.iter().map(|v| v.0).product();
    let lap: f64 = (0..vals.len())
        .map(|i| {
            vals.iter()
                .enumerate()
                .map(|(j, v)| if i == j { v.1 } else { v.0 })
                .product::<f64>()
        })
        .sum();
    (u, lap)
}

fn sine_1d(x: f64) -> (f64, f64) {
    let s = (PI * x).sin();
    (s, -PI * PI * s)
}

/// `g(x) = exp(-c cot^2(pi x))` on `(0,1)` and its second derivative.
fn gaussian_1d(x: f64, c: f64) -> (f64, f64) {
    if x <= 0.0 || x >= 1.0 {
        return (0.0, 0.0);
    }
    let (s, co) = (PI * x).sin_cos();
    let t = co / s;
    let e = c * t * t;
    if e > 700.0 {
        return (0.0, 0.0);
    }
    let g = (-e).exp();
    let s2 = 1.0 + t * t;
    let q = t * s2;
    (g, 2.0 * c * PI * PI * g * (2.0 * c * q * q - s2 * (1.0 + 3.0 * t * t)))
}

fn centered_r2(x: &[f64]) -> f64 {
    x.iter().map(|xi| (xi - 0.5) * (xi - 0.5)).sum()
}

fn in_unit_cube(x: &[f64]) -> bool {
    x.iter().all(|&xi| (0.0..=1.0).contains(&xi))
}

impl ManufacturedSolution {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn expected_h1h_order(&self) -> f64 {
        self.expected_h1h_order
    }

    /// `(u(x), Δu(x))`.
    fn eval(&self, x: &[f64]) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            Kind::SineProduct { amplitude } => {
                let (u, lap) = separable(x, sine_1d);
                (amplitude * u, amplitude * lap)
            }
            Kind::GaussianCube { width } => {
                if !in_unit_cube(x) {
                    return (0.0, 0.0);
                }
                separable(x, |xi| gaussian_1d(xi, *width))
            }
            Kind::Mollifier => {
                let r2 = centered_r2(x);
                let s = 1.0 - 4.0 * r2;
                if s <= 0.0 {
                    return (0.0, 0.0);
                }
                let phi = (-1.0 / s).exp();
                if phi == 0.0 {
                    return (0.0, 0.0);
                }
                let s2 = s * s;
                // phi'' and phi'/r for phi(r) = exp(-1/(1-4r^2)).
                let second = phi * (64.0 * r2 / (s2 * s2) - 8.0 / s2 - 128.0 * r2 / (s2 * s));
                let first_over_r = -8.0 * phi / s2;
                (phi, second + (self.dim as f64 - 1.0) * first_over_r)
            }
            Kind::HicksHenne => {
                let r2 = centered_r2(x);
                if r2 > 0.25 {
                    return (0.0, 0.0);
                }
                let (s, c) = (2.0 * PI * (0.25 - r2)).sin_cos();
                let first_over_r = -12.0 * PI * s * s * c;
                let second = first_over_r + 48.0 * PI * PI * r2 * (2.0 * s * c * c - s * s * s);
                (s * s * s, second + (self.dim as f64 - 1.0) * first_over_r)
            }
            Kind::Difference(g1, g2) => {
                let y: Vec<f64> = x.iter().map(|xi| 2.0 * xi - 0.5).collect();
                let (u1, l1) = g1.eval(x);
                let (u2, l2) = g2.eval(&y);
                (u1 - 3.0 * u2, l1 - 12.0 * l2)
            }
        }
    }

    pub fn u(&self, x: &[f64]) -> f64 {
        self.eval(x).0
    }

    /// Right-hand side `f = -Δu`.
    pub fn f(&self, x: &[f64]) -> f64 {
        -self.eval(x).1
    }

    /// Spheres across which the solution is only finitely smooth.
    pub fn support_spheres(&self) -> Vec<SupportSphere> {
        match &self.kind {
            Kind::Mollifier | Kind::HicksHenne => vec![SupportSphere {
                center: 0.5,
                radius: 0.5,
            }],
            Kind::Difference(g1, g2) => {
                let mut out = g1.support_spheres();
                out.extend(g2.support_spheres().into_iter().map(|s| SupportSphere {
                    center: (s.center + 0.5) / 2.0,
                    radius: s.radius / 2.0,
                }));
                out
            }
            _ => Vec::new(),
        }
    }

    /// Points where the closed-form Laplacian can be checked by finite
    /// differences: away from faces where `exp(-cot^2)` underflows and away
    /// from support spheres.
    pub fn is_smooth_point(&self, x: &[f64]) -> bool {
        match &self.kind {
            Kind::SineProduct { .. } => x.iter().all(|&xi| xi > 0.0 && xi < 1.0),
            Kind::GaussianCube { .. } => x.iter().all(|&xi| (0.2..=0.8).contains(&xi)),
            Kind::Mollifier | Kind::HicksHenne => centered_r2(x) <= 0.16,
            Kind::Difference(g1, g2) => {
                let y: Vec<f64> = x.iter().map(|xi| 2.0 * xi - 0.5).collect();
                g1.is_smooth_point(x) && g2.is_smooth_point(&y)
            }
        }
    }

    /// Cell averages of `f`, subdividing cells crossed by a support sphere.
    pub fn cell_averages(&self, mesh: &Arc<TensorMesh>, rule: &QuadratureRule) -> MeshFunction {
        rhs_cell_average_refined(mesh, &|x: &[f64]| self.f(x), rule, &self.support_spheres())
    }
}

/// Gauss–Legendre rule mapped to `[-1/2, 1/2]`; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        if order == 0 || order > 64 {
            return Err(Error::invalid(format!(
                "quadrature order must be in 1..=64, got {order}"
            )));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Newton iteration on P_n from the Chebyshev-like initial guess.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x / 2.0;
            nodes[n - 1 - i] = x / 2.0;
            weights[i] = w / 2.0;
            weights[n - 1 - i] = w / 2.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Average of `f` over the box by the tensor rule.
    pub fn box_average(&self, lower: &[f64], upper: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let d = lower.len();
        let p = self.order();
        let total = p.pow(d as u32);
        let mut point = vec![0.0; d];
        let terms: Vec<f64> = (0..total)
            .map(|mut t| {
                let mut w = 1.0;
                for a in (0..d).rev() {
                    let q = t % p;
                    t /= p;
                    let (lo, hi) = (lower[a], upper[a]);
                    point[a] = 0.5 * (lo + hi) + (hi - lo) * self.nodes[q];
                    w *= self.weights[q];
                }
                w * f(&point)
            })
            .collect();
        pairwise_sum(&terms)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `(1/|ω|) ∫_ω f` at each interior node; boundary entries are zero.
pub fn rhs_cell_average(
    mesh: &Arc<TensorMesh>,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    rule: &QuadratureRule,
) -> MeshFunction {
    rhs_cell_average_refined(mesh, f, rule, &[])
}

/// As [`rhs_cell_average`], splitting each cell crossed by one of `spheres`
/// in two along every axis.
pub fn rhs_cell_average_refined(
    mesh: &Arc<TensorMesh>,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    rule: &QuadratureRule,
    spheres: &[SupportSphere],
) -> MeshFunction {
    let d = mesh.dim();
    let averages: Vec<f64> = (0..mesh.interior_count())
        .into_par_iter()
        .map(|r| {
            let cell = mesh
                .cell_of(&mesh.interior_multi_index(r))
                .expect("interior node");
            if !spheres.iter().any(|s| s.crosses(&cell.lower, &cell.upper)) {
                return rule.box_average(&cell.lower, &cell.upper, f);
            }
            let pieces = 1usize << d;
            let parts: Vec<f64> = (0..pieces)
                .map(|mask| {
                    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
                        .map(|a| {
                            let mid = 0.5 * (cell.lower[a] + cell.upper[a]);
                            if mask >> a & 1 == 1 {
                                (mid, cell.upper[a])
                            } else {
                                (cell.lower[a], mid)
                            }
                        })
                        .unzip();
                    // Halves have equal volume fraction 1/2 per axis.
                    rule.box_average(&lo, &hi, f)
                })
                .collect();
            pairwise_sum(&parts) / pieces as f64
        })
        .collect();
    MeshFunction::from_interior(Arc::clone(mesh), &averages).expect("interior count matches")
}

/// The scheme's right-hand side in its factor-two convention:
/// `2 * rhs_cell_average`. Used for stability diagnostics only.
pub fn doubled_cell_average(
    mesh: &Arc<TensorMesh>,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    rule: &QuadratureRule,
) -> MeshFunction {
    rhs_cell_average(mesh, f, rule).scaled(2.0)
}

/// Largest defect between the closed-form `f` and `-Δu` from a
/// Richardson-extrapolated central second difference with step `h_fd`,
/// relative to `max(|f|, 1)`.
pub fn derivative_check(sol: &ManufacturedSolution, points: &[Vec<f64>], h_fd: f64) -> f64 {
    let lap = |x: &[f64], h: f64| -> f64 {
        let u0 = sol.u(x);
        let mut y = x.to_vec();
        let mut acc = 0.0;
        for a in 0..x.len() {
            y[a] = x[a] + h;
            let up = sol.u(&y);
            y[a] = x[a] - h;
            let um = sol.u(&y);
            y[a] = x[a];
            acc += (up - 2.0 * u0 + um) / (h * h);
        }
        acc
    };
    points
        .iter()
        .map(|x| {
            let fd = (4.0 * lap(x, h_fd / 2.0) - lap(x, h_fd)) / 3.0;
            let exact = sol.f(x);
            (exact + fd).abs() / exact.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Uniform random points in the unit cube accepted by `is_smooth_point`.
pub fn smooth_sample_points(sol: &ManufacturedSolution, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n && tries < 1_000_000 {
        tries += 1;
        let x: Vec<f64> = (0..sol.dim()).map(|_| rng.random::<f64>()).collect();
        if sol.is_smooth_point(&x) {
            out.push(x);
        }
    }
    out
}
