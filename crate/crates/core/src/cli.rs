//! `fvlab` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
//! failure (solver non-convergence, an aborted study, or a failed
//! `verify --strict`).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::mesh::{MeshFunction, TensorMesh};
use crate::norms;
use crate::problem::{builtin, QuadratureRule, SolutionSpec, DEFAULT_QUAD_ORDER};
use crate::solver::{Method, PoissonSystem, SolveOptions, Source};
use crate::study::{self, MeshFamily, StudyConfig, VerifyConfig};

#[derive(Debug, Parser)]
#[command(name = "fvlab", version, about = "Finite volume Poisson solver on non-uniform tensor meshes")]
struct Cli {
    /// Worker threads (default: FVLAB_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve on one mesh and report error norms.
    Solve(SolveArgs),
    /// Mesh refinement study.
    Study(StudyArgs),
    /// Randomized checks of the stability inequalities.
    Verify(VerifyArgs),
    /// Write a mesh file.
    MeshGen(MeshGenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MeshKind {
    Uniform,
    Random,
}

#[derive(Debug, Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    mesh: MeshKind,
    /// Maximal node perturbation of random meshes, in cell widths.
    #[arg(long, default_value_t = 0.3)]
    perturb: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MeshArgs {
    fn family(&self) -> MeshFamily {
        match self.mesh {
            MeshKind::Uniform => MeshFamily::Uniform,
            MeshKind::Random => MeshFamily::Random {
                perturbation: self.perturb,
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Args)]
struct SolutionArgs {
    /// Builtin name, or `difference:<g1>,<g2>`.
    #[arg(long, default_value = "sine_product")]
    solution: String,
    /// JSON parameters: a file path or inline object. An object with a
    /// `name` field replaces `--solution` entirely.
    #[arg(long)]
    params: Option<String>,
    #[arg(long, default_value_t = DEFAULT_QUAD_ORDER)]
    quad_order: usize,
    /// Relative residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    /// Iteration cap of the linear solver.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Cg,
    Bicgstab,
}

impl SolutionArgs {
    fn spec(&self) -> Result<SolutionSpec> {
        let mut spec = SolutionSpec::parse(&self.solution)?;
        let Some(params) = &self.params else {
            return Ok(spec);
        };
        let text = if params.trim_start().starts_with('{') {
            params.clone()
        } else {
            std::fs::read_to_string(params)?
        };
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("name").is_some() {
            return Ok(serde_json::from_value(value)?);
        }
        let map: std::collections::BTreeMap<String, f64> = serde_json::from_value(value)?;
        spec.params.extend(map);
        Ok(spec)
    }

    fn options(&self) -> Result<SolveOptions> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!("tolerance must lie in (0, 1), got {}", self.tol)));
        }
        let mut opts = SolveOptions::default().with_tolerance(self.tol);
        opts.method = match self.method {
            MethodArg::Auto => Method::Auto,
            MethodArg::Cg => Method::Cg,
            MethodArg::Bicgstab => Method::BiCgStab,
        };
        opts.max_iterations = self.max_iter;
        Ok(opts)
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    solution: SolutionArgs,
    /// Cells per axis.
    #[arg(long = "M", default_value_t = 16)]
    m: usize,
    /// Read the mesh from a file instead of generating it.
    #[arg(long)]
    mesh_file: Option<PathBuf>,
    /// CSV of the discrete and exact solution at every node.
    #[arg(long)]
    dump_solution: Option<PathBuf>,
    /// Matrix Market file of the volume-scaled system matrix.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    solution: SolutionArgs,
    /// Comma-separated cells per axis of each level.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    levels: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    m_min: usize,
    #[arg(long, default_value_t = 8)]
    m_max: usize,
    #[arg(long, default_value_t = 0.3)]
    perturb: f64,
    /// Exit with status 2 when any inequality fails.
    #[arg(long)]
    strict: bool,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MeshGenArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long = "M", default_value_t = 16)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
}

enum Outcome {
    Ok,
    NumericalFailure(String),
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                let msg = e.kind().to_string();
                let detail = e.to_string();
                let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
                eprintln!("fvlab: {first}");
            }
            return code;
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("fvlab: {e}");
            return 1;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("fvlab: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::NumericalFailure(msg)) => {
            eprintln!("fvlab: {msg}");
            2
        }
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("fvlab: {line}");
            match e {
                Error::NotConverged { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("FVLAB_THREADS") {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("FVLAB_THREADS is not a count: `{s}`")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(Error::invalid("thread count must be positive"));
    }
    Ok(n)
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Solve(a) => solve(a),
        Command::Study(a) => run_study(a),
        Command::Verify(a) => verify(a),
        Command::MeshGen(a) => mesh_gen(a),
    }
}

fn solve(args: SolveArgs) -> Result<Outcome> {
    let mesh = match &args.mesh_file {
        Some(path) => TensorMesh::read_file(path)?,
        None => args.mesh.family().mesh(args.mesh.dim, args.m)?,
    };
    let mesh = Arc::new(mesh);
    let spec = args.solution.spec()?;
    let sol = builtin(&spec, mesh.dim())?;
    let rule = QuadratureRule::gauss_legendre(args.solution.quad_order)?;
    let opts = args.solution.options()?;

    let system = PoissonSystem::new(Arc::clone(&mesh), Source::Solution(&sol), &rule);
    if let Some(path) = &args.dump_matrix {
        system.matrix.write_matrix_market(path)?;
    }
    let (uh, report) = system.solve(&opts)?;
    let mut exact = MeshFunction::from_fn(Arc::clone(&mesh), |x| sol.u(x));
    exact.clear_boundary();
    let err = norms::norms(&exact.lin_comb(1.0, &uh, -1.0)?);
    if let Some(path) = &args.dump_solution {
        write_solution(path, &uh, &exact)?;
    }
    println!(
        "RESULT cmd=solve dim={} solution={} cells={} dofs={} h={:.6e} q={:.6} method={} iters={} residual={:.3e} symmetry={:.3e} l2={:.6e} h1semi={:.6e} h1h={:.6e} max={:.6e}",
        mesh.dim(),
        spec.label(),
        join(&mesh.cells()),
        mesh.interior_count(),
        mesh.max_step(),
        mesh.quasi_uniformity_ratio(),
        report.method,
        report.iterations,
        report.relative_residual,
        report.symmetry_defect,
        err.l2,
        err.h1_semi,
        err.h1,
        err.max,
    );
    Ok(Outcome::Ok)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join("x")
}

fn write_solution(path: &Path, uh: &MeshFunction, exact: &MeshFunction) -> Result<()> {
    let mesh = uh.mesh();
    let d = mesh.dim();
    let names = |base: &[&str], fallback: &str| -> Vec<String> {
        (0..d)
            .map(|a| base.get(a).map_or(format!("{fallback}{a}"), |s| s.to_string()))
            .collect()
    };
    let mut header = names(&["i", "j", "k"], "i");
    header.extend(names(&["x", "y", "z"], "x"));
    header.extend(["u_h", "u_exact", "abs_err"].map(String::from));
    let mut out = header.join(",");
    out.push('\n');
    for idx in mesh.nodes() {
        let (u, e) = (uh.at(&idx), exact.at(&idx));
        for i in &idx {
            let _ = write!(out, "{i},");
        }
        for x in mesh.point(&idx) {
            let _ = write!(out, "{x:.16e},");
        }
        let _ = writeln!(out, "{u:.16e},{e:.16e},{:.16e}", (u - e).abs());
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn run_study(args: StudyArgs) -> Result<Outcome> {
    let mut config = StudyConfig::new(
        args.mesh.dim,
        args.solution.spec()?,
        args.mesh.family(),
        args.levels.clone(),
    );
    config.quad_order = args.solution.quad_order;
    config.solve = args.solution.options()?;
    let result = study::run_study(&config)?;
    let rows = &result.rows;
    if !rows.is_empty() {
        if let Some(path) = &args.out {
            study::emit_csv(rows, path)?;
        }
        if let Some(path) = &args.svg {
            study::emit_svg(rows, path)?;
        }
    }
    let last = rows.last();
    let opt = |x: Option<f64>| x.map_or("nan".to_string(), |v| format!("{v:.4}"));
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let fit = |pick: fn(&study::StudyRow) -> f64| {
        let es: Vec<f64> = rows.iter().map(pick).collect();
        opt(study::fitted_order(&hs, &es))
    };
    println!(
        "RESULT cmd=study dim={} solution={} family={} seed={} levels={} completed={} ord_l2={} ord_h1h={} ord_max={} fit_l2={} fit_h1h={} fit_max={}",
        config.dim,
        config.solution.label(),
        config.family.label(),
        config.family.seed(),
        args.levels.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        rows.len(),
        opt(last.and_then(|r| r.ord_l2)),
        opt(last.and_then(|r| r.ord_h1h)),
        opt(last.and_then(|r| r.ord_max)),
        fit(|r| r.l2),
        fit(|r| r.h1h),
        fit(|r| r.max),
    );
    Ok(match result.aborted {
        Some(msg) => Outcome::NumericalFailure(format!("study aborted at {msg}")),
        None => Outcome::Ok,
    })
}

fn verify(args: VerifyArgs) -> Result<Outcome> {
    let mut config = VerifyConfig::new(args.dim, args.trials, args.m_min, args.m_max, args.seed);
    config.perturbation = args.perturb;
    let report = study::verify_suite(&config)?;
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    let mut line = format!("RESULT cmd=verify dim={} trials={} seed={}", args.dim, args.trials, args.seed);
    for c in &report.checks {
        let worst = c.worst_ratio.map_or("nan".to_string(), |w| format!("{w:.12}"));
        let _ = write!(
            line,
            " {}={} {}_bound={:.12} {}_pass={}",
            c.name, worst, c.name, c.constant, c.name, c.pass
        );
        eprintln!(
            "{:<20} {:>6} trials {:>4} skipped  worst {}  bound {:.12}  {}",
            c.name,
            c.trials,
            c.skipped,
            worst,
            c.constant,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    let _ = write!(line, " pass={}", report.all_pass());
    println!("{line}");
    if args.strict && !report.all_pass() {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Ok(Outcome::NumericalFailure(format!(
            "inequalities violated: {}",
            failed.join(", ")
        )));
    }
    Ok(Outcome::Ok)
}

fn mesh_gen(args: MeshGenArgs) -> Result<Outcome> {
    let mesh = args.mesh.family().mesh(args.mesh.dim, args.m)?;
    mesh.write_file(&args.out)?;
    println!(
        "RESULT cmd=mesh-gen dim={} cells={} q={:.6} out={}",
        mesh.dim(),
        join(&mesh.cells()),
        mesh.quasi_uniformity_ratio(),
        args.out.display()
    );
    Ok(Outcome::Ok)
}
