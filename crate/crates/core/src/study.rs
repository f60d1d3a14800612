//! Mesh refinement studies against manufactured solutions, and randomized
//! checks of the discrete stability inequalities.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{IndexBox, MeshFunction, TensorMesh};
use crate::norms::{self, DualNorm, NormReport, DEFAULT_DENSE_CAP};
use crate::problem::{builtin, doubled_cell_average, QuadratureRule, SolutionSpec, DEFAULT_QUAD_ORDER};
use crate::solver::{solve_poisson, SolveOptions, Source};
use crate::stencil::{apply_lh, mu_transverse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeshFamily {
    Uniform,
    Random { perturbation: f64, seed: u64 },
}

impl MeshFamily {
    pub fn label(&self) -> String {
        match self {
            MeshFamily::Uniform => "uniform".into(),
            MeshFamily::Random { perturbation, .. } => format!("random:{perturbation}"),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            MeshFamily::Uniform => 0,
            MeshFamily::Random { seed, .. } => *seed,
        }
    }

    /// The mesh of one refinement level. Random levels draw from a stream
    /// keyed by both the seed and `m`.
    pub fn mesh(&self, dim: usize, m: usize) -> Result<TensorMesh> {
        match *self {
            MeshFamily::Uniform => TensorMesh::uniform(dim, m),
            MeshFamily::Random { perturbation, seed } => {
                TensorMesh::random(&vec![m; dim], perturbation, level_seed(seed, m as u64))
            }
        }
    }
}

fn level_seed(seed: u64, key: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dim: usize,
    pub solution: SolutionSpec,
    pub family: MeshFamily,
    pub levels: Vec<usize>,
    pub quad_order: usize,
    pub solve: SolveOptions,
}

impl StudyConfig {
    pub fn new(dim: usize, solution: SolutionSpec, family: MeshFamily, levels: Vec<usize>) -> Self {
        Self {
            dim,
            solution,
            family,
            levels,
            quad_order: DEFAULT_QUAD_ORDER,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::invalid("a study needs at least two levels"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "levels must be strictly increasing, got {:?}",
                self.levels
            )));
        }
        if self.levels[0] < 2 {
            return Err(Error::invalid("every level needs at least 2 cells per axis"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub dim: usize,
    pub family: String,
    pub seed: u64,
    pub m: usize,
    pub h: f64,
    pub l2: f64,
    pub l2_rel: f64,
    pub h1_semi: f64,
    pub h1h: f64,
    pub max: f64,
    pub ord_l2: Option<f64>,
    pub ord_h1h: Option<f64>,
    pub ord_max: Option<f64>,
    pub iterations: usize,
    pub h1h_rel: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    /// Set when a level failed; `rows` then holds the levels before it.
    pub aborted: Option<String>,
}

/// `log(e_k / e_{k+1}) / log(h_k / h_{k+1})`; `None` when undefined.
pub fn observed_order(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> Option<f64> {
    if e_coarse > 0.0 && e_fine > 0.0 && h_coarse != h_fine {
        Some((e_coarse / e_fine).ln() / (h_coarse / h_fine).ln())
    } else {
        None
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_order(h: &[f64], e: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(e)
        .filter(|(&h, &e)| h > 0.0 && e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

struct LevelOutcome {
    h: f64,
    err: NormReport,
    exact: NormReport,
    iterations: usize,
}

fn run_level(
    config: &StudyConfig,
    sol: &crate::problem::ManufacturedSolution,
    rule: &QuadratureRule,
    m: usize,
) -> Result<LevelOutcome> {
    let mesh = Arc::new(config.family.mesh(config.dim, m)?);
    let (uh, report) = solve_poisson(&mesh, Source::Solution(sol), rule, &config.solve)?;
    let mut exact = MeshFunction::from_fn(Arc::clone(&mesh), |x| sol.u(x));
    exact.clear_boundary();
    let err = exact.lin_comb(1.0, &uh, -1.0)?;
    Ok(LevelOutcome {
        h: mesh.max_step(),
        err: norms::norms(&err),
        exact: norms::norms(&exact),
        iterations: report.iterations,
    })
}

/// Runs every level in order. A solver failure stops the study and is
/// recorded in [`StudyResult::aborted`].
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let sol = builtin(&config.solution, config.dim)?;
    let rule = QuadratureRule::gauss_legendre(config.quad_order)?;
    let mut rows: Vec<StudyRow> = Vec::with_capacity(config.levels.len());
    let mut aborted = None;
    for &m in &config.levels {
        let level = match run_level(config, &sol, &rule, m) {
            Ok(level) => level,
            Err(e) => {
                aborted = Some(format!("level M={m}: {e}"));
                break;
            }
        };
        let prev = rows.last();
        let order = |pick: fn(&StudyRow) -> f64, e: f64| {
            prev.and_then(|p| observed_order(pick(p), e, p.h, level.h))
        };
        rows.push(StudyRow {
            dim: config.dim,
            family: config.family.label(),
            seed: config.family.seed(),
            m,
            h: level.h,
            l2: level.err.l2,
            l2_rel: ratio(level.err.l2, level.exact.l2),
            h1_semi: level.err.h1_semi,
            h1h: level.err.h1,
            max: level.err.max,
            ord_l2: order(|r| r.l2, level.err.l2),
            ord_h1h: order(|r| r.h1h, level.err.h1),
            ord_max: order(|r| r.max, level.err.max),
            iterations: level.iterations,
            h1h_rel: ratio(level.err.h1, level.exact.h1),
            max_rel: ratio(level.err.max, level.exact.max),
        });
    }
    Ok(StudyResult { rows, aborted })
}

pub const CSV_HEADER: &str =
    "dim,family,seed,M,h,l2,l2_rel,h1semi,h1h,max,ord_l2,ord_h1h,ord_max,iters,h1h_rel,max_rel";

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

pub fn to_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.dim.to_string(),
            r.family.clone(),
            r.seed.to_string(),
            r.m.to_string(),
            fmt_f(r.h),
            fmt_f(r.l2),
            fmt_f(r.l2_rel),
            fmt_f(r.h1_semi),
            fmt_f(r.h1h),
            fmt_f(r.max),
            fmt_opt(r.ord_l2),
            fmt_opt(r.ord_h1h),
            fmt_opt(r.ord_max),
            r.iterations.to_string(),
            fmt_f(r.h1h_rel),
            fmt_f(r.max_rel),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_csv(rows: &[StudyRow], path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no study rows to write"));
    }
    std::fs::write(path, to_csv(rows))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<StudyRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid("unexpected study CSV header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 16 {
                return Err(Error::invalid(format!("expected 16 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("invalid number `{s}`")))
            };
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::invalid(format!("invalid integer `{s}`")))
            };
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(StudyRow {
                dim: int(f[0])? as usize,
                family: f[1].to_string(),
                seed: int(f[2])?,
                m: int(f[3])? as usize,
                h: num(f[4])?,
                l2: num(f[5])?,
                l2_rel: num(f[6])?,
                h1_semi: num(f[7])?,
                h1h: num(f[8])?,
                max: num(f[9])?,
                ord_l2: opt(f[10])?,
                ord_h1h: opt(f[11])?,
                ord_max: opt(f[12])?,
                iterations: int(f[13])? as usize,
                h1h_rel: num(f[14])?,
                max_rel: num(f[15])?,
            })
        })
        .collect()
}

/// Reference slopes drawn on the error plot.
pub const GUIDE_ORDERS: [f64; 2] = [1.5, 2.0];

/// Log-log plot of the error norms against `h`. Guide lines of order 1.5 and
/// 2 pass through the finest `h1h` point.
pub fn to_svg(rows: &[StudyRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const L: f64 = 80.0;
    const R: f64 = 170.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    let series: [(&str, &str, fn(&StudyRow) -> f64, fn(&StudyRow) -> Option<f64>); 4] = [
        ("l2", "#1f77b4", |r| r.l2, |r| r.ord_l2),
        ("h1semi", "#2ca02c", |r| r.h1_semi, |_| None),
        ("h1h", "#d62728", |r| r.h1h, |r| r.ord_h1h),
        ("max", "#9467bd", |r| r.max, |r| r.ord_max),
    ];
    let positive = |x: f64| x > 0.0 && x.is_finite();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).filter(|&h| positive(h)).collect();
    let es: Vec<f64> = rows
        .iter()
        .flat_map(|r| series.iter().map(move |s| (s.2)(r)))
        .filter(|&e| positive(e))
        .collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if hs.is_empty() || es.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="{}">no positive errors</text>"#, W / 2.0 - 60.0, H / 2.0);
        out.push_str("</svg>\n");
        return out;
    }
    let decade = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().fold(init, |a, &b| f(a, b)).log10();
    let (mut x0, mut x1) = (decade(&hs, f64::min, f64::INFINITY).floor(), decade(&hs, f64::max, 0.0).ceil());
    let (mut y0, mut y1) = (decade(&es, f64::min, f64::INFINITY).floor(), decade(&es, f64::max, 0.0).ceil());
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let px = |h: f64| L + (h.log10() - x0) / (x1 - x0) * (W - L - R);
    let py = |e: f64| H - B - (e.log10() - y0) / (y1 - y0) * (H - T - B);

    let _ = writeln!(
        out,
        r##"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="#000"/>"##,
        W - L - R,
        H - T - B
    );
    for k in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(k));
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{T}" x2="{x:.2}" y2="{}" stroke="#ddd"/><text x="{x:.2}" y="{}" font-size="12" text-anchor="middle">1e{k}</text>"##,
            H - B,
            H - B + 18.0
        );
    }
    for k in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(k));
        let _ = writeln!(
            out,
            r##"<line x1="{L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" font-size="12" text-anchor="end">1e{k}</text>"##,
            W - R,
            L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">h</text>"#,
        (L + W - R) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {})">error</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );

    let finest = rows.last().expect("rows non-empty");
    let (hmin, hmax) = (
        hs.iter().copied().fold(f64::INFINITY, f64::min),
        hs.iter().copied().fold(0.0, f64::max),
    );
    if positive(finest.h1h) && hmax > hmin {
        for (q, dash) in GUIDE_ORDERS.iter().zip(["6,4", "2,3"]) {
            let at = |h: f64| finest.h1h * (h / finest.h).powf(*q);
            let _ = writeln!(
                out,
                r##"<line class="guide" data-order="{q}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="{dash}"/>"##,
                px(hmin),
                py(at(hmin)),
                px(hmax),
                py(at(hmax))
            );
        }
    }

    let mut legend_y = T + 10.0;
    for (name, colour, value, order) in series {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| positive(r.h) && positive(value(r)))
            .map(|r| (px(r.h), py(value(r))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        for (x, y) in &pts {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#);
        }
        let label = match order(finest) {
            Some(q) if rows.len() > 1 => format!("{name} (order {q:.2})"),
            _ => name.to_string(),
        };
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}" font-size="12">{label}</text>"#,
            W - R + 10.0,
            W - R + 30.0,
            W - R + 35.0,
            legend_y + 4.0
        );
        legend_y += 20.0;
    }
    for (q, dash) in GUIDE_ORDERS.iter().zip(["6,4", "2,3"]) {
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="#555" stroke-dasharray="{dash}"/><text x="{}" y="{}" font-size="12">slope {q}</text>"##,
            W - R + 10.0,
            W - R + 30.0,
            W - R + 35.0,
            legend_y + 4.0
        );
        legend_y += 20.0;
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(rows: &[StudyRow], path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no study rows to plot"));
    }
    std::fs::write(path, to_svg(rows))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Stability inequalities

/// Coercivity constant of the transverse average in `d` dimensions:
/// `(3 * 2^(d-2) - 1) / 2^d`.
pub fn coercivity_constant(dim: usize) -> f64 {
    let d = dim as i32;
    (3.0 * 2f64.powi(d - 2) - 1.0) / 2f64.powi(d)
}

/// Discrete Poincaré constant `1/d`.
pub fn poincare_constant(dim: usize) -> f64 {
    1.0 / dim as f64
}

/// Stability constant of `L^h`: `2^d (1+d) / (d (3 * 2^(d-2) - 1))`.
pub fn operator_constant(dim: usize) -> f64 {
    let d = dim as i32;
    2f64.powi(d) * (1.0 + dim as f64) / (dim as f64 * (3.0 * 2f64.powi(d - 2) - 1.0))
}

/// Stability constant of the scheme in its factor-two convention: half of
/// [`operator_constant`].
pub fn solution_constant(dim: usize) -> f64 {
    operator_constant(dim) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Ratio must stay at or above the constant.
    Lower,
    /// Ratio must stay at or below the constant.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub bound: Bound,
    pub constant: f64,
    /// Relative slack applied to the constant.
    pub slack: f64,
    pub trials: usize,
    pub skipped: usize,
    pub worst_ratio: Option<f64>,
    pub pass: bool,
}

impl InequalityCheck {
    fn new(name: impl Into<String>, bound: Bound, constant: f64, slack: f64) -> Self {
        Self {
            name: name.into(),
            bound,
            constant,
            slack,
            trials: 0,
            skipped: 0,
            worst_ratio: None,
            pass: true,
        }
    }

    fn record(&mut self, ratio: Option<f64>) {
        let Some(r) = ratio else {
            self.skipped += 1;
            return;
        };
        self.trials += 1;
        self.worst_ratio = Some(match (self.worst_ratio, self.bound) {
            (None, _) => r,
            (Some(w), Bound::Lower) => w.min(r),
            (Some(w), Bound::Upper) => w.max(r),
        });
        self.pass = self.holds();
    }

    fn holds(&self) -> bool {
        match (self.worst_ratio, self.bound) {
            (None, _) => true,
            (Some(w), Bound::Lower) => w >= self.constant * (1.0 - self.slack),
            (Some(w), Bound::Upper) => w <= self.constant * (1.0 + self.slack),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub dim: usize,
    pub trials: usize,
    /// Cells per axis are drawn uniformly from `m_min..=m_max`.
    pub m_min: usize,
    pub m_max: usize,
    pub seed: u64,
    pub perturbation: f64,
    /// Meshes with more interior unknowns skip the dual-norm checks.
    pub dense_cap: usize,
}

impl VerifyConfig {
    pub fn new(dim: usize, trials: usize, m_min: usize, m_max: usize, seed: u64) -> Self {
        Self {
            dim,
            trials,
            m_min,
            m_max,
            seed,
            perturbation: 0.3,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub dim: usize,
    pub checks: Vec<InequalityCheck>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const COERCIVITY_SLACK: f64 = 1e-12;
pub const POINCARE_SLACK: f64 = 1e-12;
pub const OPERATOR_SLACK: f64 = 1e-10;
pub const SOLUTION_SLACK: f64 = 1e-8;

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

pub fn coercivity_check_name(axis: usize) -> String {
    match AXIS_NAMES.get(axis) {
        Some(n) => format!("coercivity_{n}"),
        None => format!("coercivity_{axis}"),
    }
}

/// Ratios of one trial; `None` marks a skipped (0/0) evaluation.
struct TrialRatios {
    coercivity: Vec<Option<f64>>,
    poincare: Option<f64>,
    operator: Option<f64>,
    solution: Option<f64>,
}

fn normal_fill(rng: &mut ChaCha8Rng, mesh: &Arc<TensorMesh>, nodes: IndexBox) -> MeshFunction {
    let mut v = MeshFunction::zeros(Arc::clone(mesh));
    for idx in nodes {
        let x: f64 = rng.sample(StandardNormal);
        v.set(&idx, x);
    }
    v
}

fn quotient(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// `(mu_a v, v]_a / ||v|]_a^2` with `v` random on nodes whose transverse
/// indices are interior (zero on the faces normal to the transverse axes).
pub fn coercivity_ratio(v: &MeshFunction, axis: usize) -> Result<Option<f64>> {
    let mu = mu_transverse(v, axis)?;
    Ok(quotient(
        norms::onesided_inner(&mu, v, axis)?,
        norms::onesided_norm_sq(v, axis)?,
    ))
}

fn run_trial(config: &VerifyConfig, trial: usize, rule: &QuadratureRule) -> Result<TrialRatios> {
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(level_seed(config.seed, trial as u64));
    let cells: Vec<usize> = (0..d)
        .map(|_| rng.random_range(config.m_min..=config.m_max))
        .collect();
    let mesh = Arc::new(TensorMesh::random(&cells, config.perturbation, rng.random())?);

    let coercivity = (0..d)
        .map(|axis| {
            let nodes = IndexBox::new(
                (0..d).map(|a| if a == axis { 0 } else { 1 }).collect(),
                (0..d)
                    .map(|a| if a == axis { cells[a] + 1 } else { cells[a] - 1 })
                    .collect(),
            );
            let v = normal_fill(&mut rng, &mesh, nodes);
            coercivity_ratio(&v, axis)
        })
        .collect::<Result<Vec<_>>>()?;

    let v = normal_fill(&mut rng, &mesh, mesh.interior_nodes());
    let poincare = quotient(norms::inner(&v, &v)?, norms::h1_seminorm_sq(&v));

    let (operator, solution) = if mesh.interior_count() <= config.dense_cap {
        let dual = DualNorm::new(Arc::clone(&mesh), config.dense_cap)?;
        let w = normal_fill(&mut rng, &mesh, mesh.interior_nodes());
        let operator = quotient(norms::h1_norm(&w), dual.eval(&apply_lh(&w)?)?);

        let sine = builtin(&SolutionSpec::named("sine_product"), d)?;
        let f = |x: &[f64]| sine.f(x);
        let opts = SolveOptions::default().with_tolerance(1e-13);
        let (uh, _) = solve_poisson(&mesh, Source::Function(&f), rule, &opts)?;
        let t = doubled_cell_average(&mesh, &f, rule);
        let solution = quotient(norms::h1_norm(&uh), dual.eval(&t)?);
        (operator, solution)
    } else {
        (None, None)
    };
    Ok(TrialRatios {
        coercivity,
        poincare,
        operator,
        solution,
    })
}

/// Draws random quasi-uniform meshes and random mesh functions and records
/// the worst ratio of each stability inequality. Failures are reported in
/// the checks, not returned as errors.
pub fn verify_suite(config: &VerifyConfig) -> Result<VerifyReport> {
    if config.dim < 2 {
        return Err(Error::invalid("verification needs dimension at least 2"));
    }
    if config.trials == 0 {
        return Err(Error::invalid("verification needs at least one trial"));
    }
    if config.m_min < 2 || config.m_max < config.m_min {
        return Err(Error::invalid(format!(
            "invalid cell range {}..={}",
            config.m_min, config.m_max
        )));
    }
    let d = config.dim;
    let rule = QuadratureRule::gauss_legendre(DEFAULT_QUAD_ORDER)?;
    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, t, &rule))
        .collect::<Result<Vec<_>>>()?;

    let mut coercivity: Vec<InequalityCheck> = (0..d)
        .map(|a| {
            InequalityCheck::new(
                coercivity_check_name(a),
                Bound::Lower,
                coercivity_constant(d),
                COERCIVITY_SLACK,
            )
        })
        .collect();
    let mut poincare =
        InequalityCheck::new("poincare", Bound::Upper, poincare_constant(d), POINCARE_SLACK);
    let mut operator = InequalityCheck::new(
        "operator_stability",
        Bound::Upper,
        operator_constant(d),
        OPERATOR_SLACK,
    );
    let mut solution = InequalityCheck::new(
        "solution_stability",
        Bound::Upper,
        solution_constant(d),
        SOLUTION_SLACK,
    );
    for o in outcomes {
        for (check, r) in coercivity.iter_mut().zip(o.coercivity) {
            check.record(r);
        }
        poincare.record(o.poincare);
        operator.record(o.operator);
        solution.record(o.solution);
    }
    let mut checks = coercivity;
    checks.extend([poincare, operator, solution]);
    Ok(VerifyReport { dim: d, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_estimator_recovers_synthetic_rate() {
        for q in [0.5, 1.0, 1.5, 2.0, 3.7] {
            let hs = [0.25, 0.125, 0.0625, 0.03125];
            let es: Vec<f64> = hs.iter().map(|h: &f64| 3.2 * h.powf(q)).collect();
            for k in 1..hs.len() {
                let got = observed_order(es[k - 1], es[k], hs[k - 1], hs[k]).unwrap();
                assert!((got - q).abs() < 1e-12);
            }
            assert!((fitted_order(&hs, &es).unwrap() - q).abs() < 1e-12);
        }
        assert_eq!(observed_order(0.0, 0.0, 0.5, 0.25), None);
    }

    #[test]
    fn constants_match_known_values() {
        assert_eq!(coercivity_constant(3), 5.0 / 8.0);
        assert_eq!(coercivity_constant(2), 0.5);
        assert_eq!(poincare_constant(3), 1.0 / 3.0);
        assert!((operator_constant(3) - 32.0 / 15.0).abs() < 1e-15);
        assert!((solution_constant(3) - 32.0 / 30.0).abs() < 1e-15);
        assert_eq!(operator_constant(2), 3.0);
    }

    #[test]
    fn config_validation() {
        let spec = SolutionSpec::named("sine_product");
        let bad = [vec![4], vec![8, 4], vec![4, 4], vec![1, 4]];
        for levels in bad {
            let c = StudyConfig::new(2, spec.clone(), MeshFamily::Uniform, levels);
            assert!(run_study(&c).is_err());
        }
    }

    #[test]
    fn zero_solution_has_zero_errors() {
        let spec = SolutionSpec::named("sine_product").with_param("amplitude", 0.0);
        let c = StudyConfig::new(2, spec, MeshFamily::Uniform, vec![4, 8]);
        let res = run_study(&c).unwrap();
        for r in &res.rows {
            assert_eq!((r.l2, r.h1_semi, r.h1h, r.max), (0.0, 0.0, 0.0, 0.0));
            assert_eq!(r.ord_l2, None);
        }
    }

    #[test]
    fn random_family_is_deterministic_per_level() {
        let fam = MeshFamily::Random {
            perturbation: 0.3,
            seed: 7,
        };
        assert_eq!(fam.mesh(3, 8).unwrap(), fam.mesh(3, 8).unwrap());
        assert_ne!(fam.mesh(2, 8).unwrap().axis(0), fam.mesh(2, 9).unwrap().axis(0));
    }

    #[test]
    fn aborted_study_keeps_partial_rows() {
        let mut c = StudyConfig::new(
            2,
            SolutionSpec::named("mollifier"),
            MeshFamily::Uniform,
            vec![3, 40],
        );
        c.solve.max_iterations = Some(5);
        let res = run_study(&c).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(res.aborted.unwrap().contains("M=40"));
    }

    fn sample_rows() -> Vec<StudyRow> {
        let c = StudyConfig::new(
            2,
            SolutionSpec::named("sine_product"),
            MeshFamily::Random {
                perturbation: 0.2,
                seed: 3,
            },
            vec![4, 8, 16],
        );
        run_study(&c).unwrap().rows
    }

    #[test]
    fn csv_round_trip() {
        let rows = sample_rows();
        let text = to_csv(&rows);
        assert_eq!(parse_csv(&text).unwrap(), rows);
        let one = to_csv(&rows[..1]);
        assert_eq!(one.lines().count(), 2);
        assert!(one.lines().next().unwrap().starts_with(
            "dim,family,seed,M,h,l2,l2_rel,h1semi,h1h,max,ord_l2,ord_h1h,ord_max,iters"
        ));
    }

    #[test]
    fn svg_guides_anchor_on_finest_point() {
        let rows = sample_rows();
        let svg = to_svg(&rows);
        assert!(svg.starts_with("<svg") && !svg.contains("<script"));
        assert_eq!(svg.matches(r#"class="guide""#).count(), 2);
        // Every guide line has one endpoint at the finest h; that endpoint
        // must coincide with the plotted finest h1h marker.
        let circles: Vec<(String, String)> = svg
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let grab = |key: &str| {
                    let s = &l[l.find(key).unwrap() + key.len()..];
                    s[..s.find('"').unwrap()].to_string()
                };
                (grab("cx=\""), grab("cy=\""))
            })
            .collect();
        for line in svg.lines().filter(|l| l.contains(r#"class="guide""#)) {
            let grab = |key: &str| {
                let s = &line[line.find(key).unwrap() + key.len()..];
                s[..s.find('"').unwrap()].to_string()
            };
            let start = (grab("x1=\""), grab("y1=\""));
            assert!(circles.contains(&start), "{start:?}");
        }
        let single = to_svg(&rows[..1]);
        assert!(!single.contains("order "));
    }

    #[test]
    fn small_verify_run_2d() {
        let report = verify_suite(&VerifyConfig::new(2, 10, 3, 6, 1)).unwrap();
        assert!(report.all_pass(), "{report:#?}");
        assert_eq!(report.checks.len(), 5);
        assert_eq!(report.check("poincare").unwrap().trials, 10);
    }

    #[test]
    fn zero_function_ratios_skipped() {
        let mesh = Arc::new(TensorMesh::uniform(3, 4).unwrap());
        let z = MeshFunction::zeros(mesh);
        assert_eq!(coercivity_ratio(&z, 0).unwrap(), None);
        let mut c = InequalityCheck::new("t", Bound::Upper, 1.0, 0.0);
        c.record(None);
        assert_eq!((c.trials, c.skipped, c.pass), (0, 1, true));
    }
}
