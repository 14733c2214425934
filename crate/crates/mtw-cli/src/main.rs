//! Command-line front end binding the library into reproducible
//! experiments: exponential maps, c-transforms, section geometry, and the
//! regularity checkers. Every run prints a line-delimited record embedding
//! the resolved configuration; checker subcommands exit 0 on pass, 1 on a
//! violation, 2 on an execution error.

mod config;
mod record;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use mtw_core::cexp::{c_exp, c_segment, NewtonParams};
use mtw_core::cost::cost_grad_x;
use mtw_core::families::family_parameters;
use mtw_core::grid::{GridPotential, GridSpec};
use mtw_core::mtw::{self, ScanConfig, METHOD_NAMES};
use mtw_core::sections::{
    c_hyperplane, hausdorff_convergence, section_boundary, section_nesting_test,
    sff_monotonicity_test, Section, SectionSpec,
};
use mtw_core::transform::{
    c_transform, contact_set, epsilon_grid, is_c_convex, local_global_experiment,
    random_c_affine_potential,
};
use mtw_core::{builtin_cost, default_domains, verify_a1a2, Cost, DomainBox, Point, BUILTIN_NAMES};

use config::{fmt_f64, fmt_point, parse_theta_pairs, Settings};
use record::{sink_csv, Record};

#[derive(Parser)]
#[command(
    name = "mtw",
    version,
    about = "Optimal-transport cost geometry: c-exponential maps, c-transforms, \
             sections, and Ma-Trudinger-Wang regularity checkers"
)]
struct Cli {
    /// Plain-text `key = value` experiment config; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Append the run record to this file as well as stdout.
    #[arg(long, global = true, value_name = "FILE")]
    record: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect the built-in cost families.
    Costs {
        #[command(subcommand)]
        cmd: CostsCmd,
    },
    /// Falsification checks; exit 1 when a violation is found.
    Check {
        #[command(subcommand)]
        cmd: CheckCmd,
    },
    /// Solve one c-exponential y = c-exp_x(p).
    Cexp(CexpArgs),
    /// Solve a c-segment through interpolation parameters.
    Segment(SegmentArgs),
    /// Section geometry: boundary traces, limit convergence, curvature, nesting.
    Section {
        #[command(subcommand)]
        cmd: SectionCmd,
    },
    /// c-transform a potential on a grid.
    Transform(TransformArgs),
    /// Contact set of a potential at one target; exit 1 if disconnected.
    Contact(ContactArgs),
    /// Local vs global c-support over random potentials; exit 1 on a gap.
    Localglobal(LocalGlobalArgs),
}

#[derive(Subcommand)]
enum CostsCmd {
    /// List families with their parameters and default domains.
    List,
}

#[derive(Subcommand)]
enum CheckCmd {
    /// Sampled target/source injectivity and mixed-Hessian invertibility.
    A1a2(A1a2Args),
    /// Randomized scan of one Ma-Trudinger-Wang checker.
    Mtw(MtwArgs),
    /// Paired scans of the cost and its transpose must agree.
    Duality(DualityArgs),
}

#[derive(Subcommand)]
enum SectionCmd {
    /// Trace a section boundary (or the limiting c-hyperplane) as CSV.
    Trace(TraceArgs),
    /// Hausdorff distance from section boundaries to the limit hyperplane.
    Converge(ConvergeArgs),
    /// Second-fundamental-form monotonicity along theta; exit 1 on failure.
    Sff(SffArgs),
    /// Section nesting on a grid; exit 1 when a larger theta pokes out.
    Nest(NestArgs),
}

#[derive(Args, Default)]
struct CostArgs {
    /// Built-in cost family (see `mtw costs list`).
    #[arg(long)]
    cost: Option<String>,
    /// Comma-separated family parameters.
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    /// Shorthand for --params with power_p.
    #[arg(long, conflicts_with_all = ["params", "eps"], allow_hyphen_values = true)]
    p: Option<f64>,
    /// Shorthand for --params with perturbed_quadratic.
    #[arg(long, conflicts_with = "params", allow_hyphen_values = true)]
    eps: Option<f64>,
    /// Space dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Source box corner, comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    omega_lower: Option<String>,
    /// Source box corner, comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    omega_upper: Option<String>,
    /// Target box corner, comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    omega_star_lower: Option<String>,
    /// Target box corner, comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    omega_star_upper: Option<String>,
}

#[derive(Args, Default)]
struct PointsArgs {
    /// Section anchor; defaults to the source box center.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// First target; defaults to 25% of the way to the target box lower corner.
    #[arg(long, allow_hyphen_values = true)]
    y0: Option<String>,
    /// Second target; defaults to 25% of the way to the target box upper corner.
    #[arg(long, allow_hyphen_values = true)]
    y1: Option<String>,
}

#[derive(Args)]
struct A1a2Args {
    #[command(flatten)]
    cost: CostArgs,
    /// Random (x, y) pairs to test.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MtwArgs {
    #[command(flatten)]
    cost: CostArgs,
    /// Checker: a3v_direct, codim1, or tensor.
    #[arg(long)]
    method: Option<String>,
    /// Number of scanned configurations.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replay a single configuration at this base point instead of scanning.
    #[arg(long, requires_all = ["y0", "y1"], allow_hyphen_values = true)]
    x: Option<String>,
    /// Replay: first target.
    #[arg(long, allow_hyphen_values = true)]
    y0: Option<String>,
    /// Replay: second target.
    #[arg(long, allow_hyphen_values = true)]
    y1: Option<String>,
    /// Replay: test direction (codim1, tensor).
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<String>,
    /// Replay: perturbation direction (tensor).
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<String>,
}

#[derive(Args)]
struct DualityArgs {
    #[command(flatten)]
    cost: CostArgs,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CexpArgs {
    #[command(flatten)]
    cost: CostArgs,
    /// Base point; defaults to the source box center.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    /// Momentum; defaults to the one mapping x to the target box center.
    #[arg(long, allow_hyphen_values = true)]
    momentum: Option<String>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    points: PointsArgs,
    /// Interpolation parameters, comma-separated.
    #[arg(long)]
    thetas: Option<String>,
    /// Write samples as CSV here instead of embedding them in the record.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    points: PointsArgs,
    /// Section parameter in (0, 1].
    #[arg(long)]
    theta: Option<f64>,
    /// Marching resolution per axis (2-D), rays (3-D).
    #[arg(long)]
    resolution: Option<usize>,
    /// Trace the limiting c-hyperplane instead of a section boundary.
    #[arg(long)]
    hyperplane: bool,
    /// Hyperplane trace: arc-length step between vertices.
    #[arg(long)]
    spacing: Option<f64>,
    /// Hyperplane trace: maximum steps per ray.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    points: PointsArgs,
    /// Shrinking section parameters, comma-separated.
    #[arg(long)]
    thetas: Option<String>,
    /// Radius of the comparison ball around x0.
    #[arg(long)]
    ball: Option<f64>,
    /// Boundary mesh resolution.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SffArgs {
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    points: PointsArgs,
    /// Increasing section parameters, comma-separated.
    #[arg(long)]
    thetas: Option<String>,
    /// Tangent directions per theta.
    #[arg(long)]
    directions: Option<usize>,
    /// Margin tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct NestArgs {
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    points: PointsArgs,
    /// Comparisons as `theta:theta'` pairs with theta < theta', comma-separated.
    #[arg(long)]
    theta_pairs: Option<String>,
    /// Test grid resolution per axis.
    #[arg(long)]
    resolution: Option<usize>,
    /// Membership tolerance band.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    cost: CostArgs,
    /// Potential file to transform (text grid format).
    #[arg(long, value_name = "FILE")]
    phi: Option<PathBuf>,
    /// Generate a random c-convex potential from this many c-affine pieces.
    #[arg(long, value_name = "N", conflicts_with = "phi")]
    random_pieces: Option<usize>,
    /// Grid resolution for a generated potential.
    #[arg(long)]
    resolution: Option<usize>,
    /// Target grid resolution for the transform.
    #[arg(long)]
    resolution_dual: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the generated source potential here.
    #[arg(long, value_name = "FILE")]
    save_phi: Option<PathBuf>,
    /// Output path for the transformed potential.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also double-transform and report c-convexity of the source.
    #[arg(long)]
    roundtrip: bool,
    /// Deviation tolerance for --roundtrip; defaults to the grid slack.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct ContactArgs {
    #[command(flatten)]
    cost: CostArgs,
    /// Potential file (text grid format).
    #[arg(long, value_name = "FILE")]
    phi: Option<PathBuf>,
    /// Generate a random c-convex potential from this many c-affine pieces.
    #[arg(long, value_name = "N", conflicts_with = "phi")]
    random_pieces: Option<usize>,
    /// Grid resolution for a generated potential.
    #[arg(long)]
    resolution: Option<usize>,
    /// Target grid resolution for the transform.
    #[arg(long)]
    resolution_dual: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target point; snapped to the nearest dual grid node.
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
    /// Contact tolerance; defaults to the grid slack.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct LocalGlobalArgs {
    #[command(flatten)]
    cost: CostArgs,
    /// Grid resolution per axis.
    #[arg(long)]
    resolution: Option<usize>,
    /// Number of random potentials.
    #[arg(long)]
    potentials: Option<usize>,
    /// c-affine pieces per potential.
    #[arg(long)]
    pieces: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Neighborhood radius for the local support test.
    #[arg(long)]
    radius_local: Option<f64>,
    /// Support inequality tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8, String> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let out = cli.record.as_deref();
    match cli.cmd {
        Cmd::Costs { cmd: CostsCmd::List } => costs_list(),
        Cmd::Check { cmd } => match cmd {
            CheckCmd::A1a2(a) => check_a1a2(&mut s, out, a),
            CheckCmd::Mtw(a) => check_mtw(&mut s, out, a),
            CheckCmd::Duality(a) => check_duality(&mut s, out, a),
        },
        Cmd::Cexp(a) => cmd_cexp(&mut s, out, a),
        Cmd::Segment(a) => cmd_segment(&mut s, out, a),
        Cmd::Section { cmd } => match cmd {
            SectionCmd::Trace(a) => section_trace(&mut s, out, a),
            SectionCmd::Converge(a) => section_converge(&mut s, out, a),
            SectionCmd::Sff(a) => section_sff(&mut s, out, a),
            SectionCmd::Nest(a) => section_nest(&mut s, out, a),
        },
        Cmd::Transform(a) => cmd_transform(&mut s, out, a),
        Cmd::Contact(a) => cmd_contact(&mut s, out, a),
        Cmd::Localglobal(a) => cmd_localglobal(&mut s, out, a),
    }
}

fn err_str(e: mtw_core::MtwError) -> String {
    e.to_string()
}

/// Resolve family, parameters, dimension, and both domain boxes.
fn build_cost(
    s: &mut Settings,
    a: &CostArgs,
) -> Result<(Arc<dyn Cost>, DomainBox, DomainBox, usize), String> {
    let dim = s.usizev("dim", a.dim, 2)?;
    let name = s.string("cost", a.cost.as_deref(), "quadratic");
    let sugar = a
        .p
        .map(fmt_f64)
        .or_else(|| a.eps.map(fmt_f64))
        .or_else(|| a.params.clone());
    let params = match s.opt_string("params", sugar.as_deref()) {
        Some(text) => config::parse_f64_list(&text)?,
        None => Vec::new(),
    };
    let c = builtin_cost(&name, dim, &params).map_err(err_str)?;
    let (omega_def, omega_star_def) = default_domains(&name, dim).map_err(err_str)?;
    let omega = s.domain_box(
        "omega_lower",
        "omega_upper",
        (a.omega_lower.as_deref(), a.omega_upper.as_deref()),
        &omega_def,
        dim,
    )?;
    let omega_star = s.domain_box(
        "omega_star_lower",
        "omega_star_upper",
        (a.omega_star_lower.as_deref(), a.omega_star_upper.as_deref()),
        &omega_star_def,
        dim,
    )?;
    Ok((c, omega, omega_star, dim))
}

/// Default section targets: pulled 25% from the center toward each corner,
/// so they are admissible for every built-in domain pair.
fn default_targets(omega_star: &DomainBox) -> (Point, Point) {
    let center = omega_star.center();
    let y0 = &center + (&omega_star.lower - &center) * 0.25;
    let y1 = &center + (&omega_star.upper - &center) * 0.25;
    (y0, y1)
}

fn resolve_points(
    s: &mut Settings,
    a: &PointsArgs,
    omega: &DomainBox,
    omega_star: &DomainBox,
    dim: usize,
) -> Result<(Point, Point, Point), String> {
    let (y0_def, y1_def) = default_targets(omega_star);
    let x0 = s.point("x0", a.x0.as_deref(), &omega.center(), dim)?;
    let y0 = s.point("y0", a.y0.as_deref(), &y0_def, dim)?;
    let y1 = s.point("y1", a.y1.as_deref(), &y1_def, dim)?;
    Ok((x0, y0, y1))
}

fn read_potential(path: &Path) -> Result<GridPotential, String> {
    let f = std::fs::File::open(path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let mut r = std::io::BufReader::new(f);
    GridPotential::read_text(&mut r).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_potential(path: &Path, phi: &GridPotential) -> Result<(), String> {
    let f = std::fs::File::create(path)
        .map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    let mut w = std::io::BufWriter::new(f);
    phi.write_text(&mut w)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn costs_list() -> Result<u8, String> {
    for name in BUILTIN_NAMES {
        let params = family_parameters(name).map_err(err_str)?;
        let (omega, omega_star) = default_domains(name, 2).map_err(err_str)?;
        let plist = if params.is_empty() {
            "(none)".to_string()
        } else {
            params.join(",")
        };
        println!(
            "{name} params={plist} omega=[{}]..[{}] omega_star=[{}]..[{}]",
            fmt_point(&omega.lower),
            fmt_point(&omega.upper),
            fmt_point(&omega_star.lower),
            fmt_point(&omega_star.upper),
        );
    }
    Ok(0)
}

fn check_a1a2(s: &mut Settings, out: Option<&Path>, a: A1a2Args) -> Result<u8, String> {
    let (c, omega, omega_star, _) = build_cost(s, &a.cost)?;
    let samples = s.usizev("samples", a.samples, 4000)?;
    let seed = s.u64v("seed", a.seed, 7)?;
    let mut rec = Record::new("check.a1a2");
    let rep = verify_a1a2(c.as_ref(), &omega, &omega_star, samples, seed).map_err(err_str)?;
    rec.line(format!(
        "a1a2 cost={} samples={} pass={}",
        c.name(),
        rep.samples,
        rep.pass()
    ));
    rec.line(format!(
        "a2 min_abs_det={} det_threshold={} singular_count={} at_x={} at_y={}",
        fmt_f64(rep.min_abs_det),
        fmt_f64(rep.det_threshold),
        rep.singular_count,
        fmt_point(&rep.min_det_at.0),
        fmt_point(&rep.min_det_at.1),
    ));
    rec.line(format!(
        "a1 min_injectivity_ratio={} min_dual_injectivity_ratio={} injectivity_threshold={}",
        fmt_f64(rep.min_injectivity_ratio),
        fmt_f64(rep.min_dual_injectivity_ratio),
        fmt_f64(rep.injectivity_threshold),
    ));
    let code = if rep.pass() { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}

fn check_mtw(s: &mut Settings, out: Option<&Path>, a: MtwArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let method = s.string("method", a.method.as_deref(), "a3v_direct");
    if !METHOD_NAMES.contains(&method.as_str()) {
        return Err(format!(
            "unknown method `{method}`; expected one of {}",
            METHOD_NAMES.join(", ")
        ));
    }
    let seed = s.u64v("seed", a.seed, 7)?;
    let mut rec = Record::new("check.mtw");

    // Single-configuration replay: the coordinates a violation report
    // prints feed straight back in and reproduce the scan's margin.
    if a.x.is_some() {
        let x = s.point("x", a.x.as_deref(), &omega.center(), dim)?;
        let (y0d, y1d) = default_targets(&omega_star);
        let y0 = s.point("y0", a.y0.as_deref(), &y0d, dim)?;
        let y1 = s.point("y1", a.y1.as_deref(), &y1d, dim)?;
        let xi = s.opt_point("xi", a.xi.as_deref(), dim)?;
        let eta = s.opt_point("eta", a.eta.as_deref(), dim)?;
        if method != "a3v_direct" && xi.is_none() {
            return Err(format!("method {method} needs --xi to replay"));
        }
        if method == "tensor" && eta.is_none() {
            return Err(format!("method {method} needs --eta to replay"));
        }
        let cfg = ScanConfig {
            index: 0,
            x,
            y0,
            y1,
            xi: xi.unwrap_or_else(|| Point::zeros(dim)),
            eta: eta.unwrap_or_else(|| Point::zeros(dim)),
        };
        let env = mtw::ScanEnv::new(c.as_ref(), &omega, &omega_star, seed).map_err(err_str)?;
        let checker = mtw::checker_by_name(&method).map_err(err_str)?;
        let tol = checker.tolerance(&env);
        let o = checker.config_margin(c.as_ref(), &env, &cfg).map_err(err_str)?;
        let violation = o.margin < -tol;
        rec.line(format!(
            "replay method={method} margin={} theta={} radius={} tolerance={} violation={violation}",
            fmt_f64(o.margin),
            fmt_f64(o.theta),
            fmt_f64(o.radius),
            fmt_f64(tol),
        ));
        let code = if violation { 1 } else { 0 };
        rec.emit(s, out)?;
        return Ok(code);
    }

    let budget = s.usizev("budget", a.budget, 2000)?;
    let report = mtw::scan(c.as_ref(), &omega, &omega_star, &method, budget, seed).map_err(err_str)?;
    rec.line(format!(
        "scan method={} cost={} pass={} samples={} skipped={} worst_margin={} tolerance={}",
        report.method,
        report.cost,
        report.pass,
        report.samples,
        report.skipped,
        fmt_f64(report.worst_margin),
        fmt_f64(report.tolerance),
    ));
    for (radius, value) in &report.diagnostic_trend {
        rec.line(format!(
            "trend radius={} margin_over_r2={}",
            fmt_f64(*radius),
            fmt_f64(*value)
        ));
    }
    if let Some(w) = &report.worst_location {
        rec.line(format!(
            "worst x={} y0={} y1={} xi={} eta={} theta={} radius={}",
            fmt_point(&w.x),
            fmt_point(&w.y0),
            fmt_point(&w.y1),
            fmt_point(&w.xi),
            fmt_point(&w.eta),
            fmt_f64(w.theta),
            fmt_f64(w.radius),
        ));
        rec.line(format!(
            "worst p0={} p1={}",
            fmt_point(&w.p0),
            fmt_point(&w.p1)
        ));
        if !report.pass {
            // Prove the report is self-contained: re-run the worst
            // configuration from its printed coordinates alone.
            let cfg = ScanConfig {
                index: 0,
                x: w.x.clone(),
                y0: w.y0.clone(),
                y1: w.y1.clone(),
                xi: w.xi.clone(),
                eta: w.eta.clone(),
            };
            let o =
                mtw::replay(c.as_ref(), &omega, &omega_star, &method, seed, &cfg).map_err(err_str)?;
            rec.line(format!(
                "replay margin={} theta={} radius={} matches={}",
                fmt_f64(o.margin),
                fmt_f64(o.theta),
                fmt_f64(o.radius),
                o.margin == report.worst_margin,
            ));
        }
    }
    let code = if report.pass { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}

fn check_duality(s: &mut Settings, out: Option<&Path>, a: DualityArgs) -> Result<u8, String> {
    let (c, omega, omega_star, _) = build_cost(s, &a.cost)?;
    let budget = s.usizev("budget", a.budget, 2000)?;
    let seed = s.u64v("seed", a.seed, 7)?;
    let mut rec = Record::new("check.duality");
    let rep = mtw::check_duality_invariance(c.clone(), &omega, &omega_star, budget, seed)
        .map_err(err_str)?;
    rec.line(format!("duality cost={} agree={}", c.name(), rep.agree));
    for (label, r) in [("primal", &rep.primal), ("dual", &rep.dual)] {
        rec.line(format!(
            "{label} pass={} samples={} skipped={} worst_margin={} tolerance={}",
            r.pass,
            r.samples,
            r.skipped,
            fmt_f64(r.worst_margin),
            fmt_f64(r.tolerance),
        ));
    }
    let code = if rep.agree { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}

fn cmd_cexp(s: &mut Settings, out: Option<&Path>, a: CexpArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let x = s.point("x", a.x.as_deref(), &omega.center(), dim)?;
    let center = omega_star.center();
    let p_default = -cost_grad_x(c.as_ref(), x.as_slice(), center.as_slice());
    let p = s.point("momentum", a.momentum.as_deref(), &p_default, dim)?;
    let mut rec = Record::new("cexp");
    let params = NewtonParams::default();
    let r = c_exp(c.as_ref(), &x, &p, &center, &omega_star, &params).map_err(err_str)?;
    rec.line(format!(
        "cexp x={} momentum={} y={} iterations={} residual={} converged={}",
        fmt_point(&x),
        fmt_point(&p),
        fmt_point(&r.point),
        r.iterations,
        fmt_f64(r.residual),
        r.converged,
    ));
    rec.emit(s, out)?;
    Ok(0)
}

fn cmd_segment(s: &mut Settings, out: Option<&Path>, a: SegmentArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let (x0, y0, y1) = resolve_points(s, &a.points, &omega, &omega_star, dim)?;
    let thetas = s.f64_list("thetas", a.thetas.as_deref(), &[0.0, 0.25, 0.5, 0.75, 1.0])?;
    let mut rec = Record::new("segment");
    let params = NewtonParams::default();
    let seg =
        c_segment(c.as_ref(), &x0, &y0, &y1, &thetas, &omega_star, &params).map_err(err_str)?;
    rec.line(format!(
        "segment x0={} y0={} y1={} p0={} p1={}",
        fmt_point(&x0),
        fmt_point(&seg.end0),
        fmt_point(&seg.end1),
        fmt_point(&seg.p0),
        fmt_point(&seg.p1),
    ));
    let header = format!("theta,{},residual", coord_header("y", dim));
    let rows: Vec<String> = seg
        .samples
        .iter()
        .map(|(t, y, res)| format!("{},{},{}", fmt_f64(*t), fmt_point(y), fmt_f64(*res)))
        .collect();
    sink_csv(&mut rec, a.out.as_deref(), &header, &rows)?;
    rec.emit(s, out)?;
    Ok(0)
}

fn coord_header(prefix: &str, dim: usize) -> String {
    (1..=dim)
        .map(|k| format!("{prefix}{k}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn section_trace(s: &mut Settings, out: Option<&Path>, a: TraceArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let (x0, y0, y1) = resolve_points(s, &a.points, &omega, &omega_star, dim)?;
    let params = NewtonParams::default();
    let mut rec = Record::new("section.trace");
    if a.hyperplane {
        let spacing = s.f64v("spacing", a.spacing, 0.02)?;
        let max_steps = s.usizev("max_steps", a.max_steps, 400)?;
        let hp = c_hyperplane(c.as_ref(), &x0, &y0, &y1).map_err(err_str)?;
        let rays = hp
            .trace(c.as_ref(), &omega, spacing, max_steps, &params)
            .map_err(err_str)?;
        let mut rows = Vec::new();
        let mut max_abs_g: f64 = 0.0;
        let mut vertices = 0usize;
        for (i, ray) in rays.iter().enumerate() {
            for v in ray {
                let g = hp.g(c.as_ref(), v);
                max_abs_g = max_abs_g.max(g.abs());
                vertices += 1;
                rows.push(format!("{i},{},{}", fmt_point(v), fmt_f64(g)));
            }
        }
        rec.line(format!(
            "trace kind=hyperplane rays={} vertices={vertices} max_abs_g={}",
            rays.len(),
            fmt_f64(max_abs_g),
        ));
        let header = format!("poly,{},g", coord_header("x", dim));
        sink_csv(&mut rec, a.out.as_deref(), &header, &rows)?;
    } else {
        let theta = s.f64v("theta", a.theta, 0.5)?;
        let resolution = s.usizev("resolution", a.resolution, 96)?;
        let spec = SectionSpec {
            x0: x0.clone(),
            y0: y0.clone(),
            y1: y1.clone(),
            theta,
        };
        let section = Section::resolve(c.as_ref(), spec, &omega_star, &params).map_err(err_str)?;
        let mesh = section_boundary(c.as_ref(), &section, &omega, resolution);
        let mut rows = Vec::new();
        let mut max_abs_h: f64 = 0.0;
        let mut vertices = 0usize;
        for (i, poly) in mesh.polylines.iter().enumerate() {
            for v in poly {
                let h = section.h(c.as_ref(), v.as_slice());
                max_abs_h = max_abs_h.max(h.abs());
                vertices += 1;
                rows.push(format!("{i},{},{}", fmt_point(v), fmt_f64(h)));
            }
        }
        for (i, (v, _dir)) in mesh.ray_points.iter().enumerate() {
            let h = section.h(c.as_ref(), v.as_slice());
            max_abs_h = max_abs_h.max(h.abs());
            vertices += 1;
            rows.push(format!("{i},{},{}", fmt_point(v), fmt_f64(h)));
        }
        rec.line(format!(
            "trace kind=section theta={} polylines={} ray_points={} vertices={vertices} \
             max_abs_h={} star_violations={} mesh_tol={} empty={}",
            fmt_f64(theta),
            mesh.polylines.len(),
            mesh.ray_points.len(),
            fmt_f64(max_abs_h),
            mesh.star_violations,
            fmt_f64(mesh.mesh_tol),
            mesh.empty,
        ));
        let header = format!("poly,{},h", coord_header("x", dim));
        sink_csv(&mut rec, a.out.as_deref(), &header, &rows)?;
    }
    rec.emit(s, out)?;
    Ok(0)
}

fn section_converge(s: &mut Settings, out: Option<&Path>, a: ConvergeArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let (x0, y0, y1) = resolve_points(s, &a.points, &omega, &omega_star, dim)?;
    let thetas = s.f64_list("thetas", a.thetas.as_deref(), &[0.2, 0.1, 0.05, 0.025])?;
    let ball = s.f64v("ball", a.ball, 0.25)?;
    let resolution = s.usizev("resolution", a.resolution, 96)?;
    let params = NewtonParams::default();
    let mut rec = Record::new("section.converge");
    let rep = hausdorff_convergence(
        c.as_ref(),
        &x0,
        &y0,
        &y1,
        &thetas,
        ball,
        &omega,
        &omega_star,
        resolution,
        &params,
    )
    .map_err(err_str)?;
    let mut rows = Vec::new();
    for p in &rep.distances {
        rec.line(format!(
            "point theta={} hausdorff={} section_vertices={} hyperplane_vertices={}",
            fmt_f64(p.theta),
            fmt_f64(p.hausdorff),
            p.section_vertices,
            p.hyperplane_vertices,
        ));
        rows.push(format!("{},{}", fmt_f64(p.theta), fmt_f64(p.hausdorff)));
    }
    let mut monotone = true;
    for w in rep.distances.windows(2) {
        let ratio = if w[0].hausdorff > 0.0 {
            w[1].hausdorff / w[0].hausdorff
        } else {
            0.0
        };
        monotone &= w[1].hausdorff <= w[0].hausdorff;
        rec.line(format!(
            "ratio from={} to={} value={}",
            fmt_f64(w[0].theta),
            fmt_f64(w[1].theta),
            fmt_f64(ratio),
        ));
    }
    rec.line(format!(
        "converge monotone={monotone} ball_radius={} ball_clipped={}",
        fmt_f64(rep.ball_radius),
        rep.ball_clipped,
    ));
    sink_csv(&mut rec, a.out.as_deref(), "theta,hausdorff", &rows)?;
    rec.emit(s, out)?;
    Ok(0)
}

fn section_sff(s: &mut Settings, out: Option<&Path>, a: SffArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let (x0, y0, y1) = resolve_points(s, &a.points, &omega, &omega_star, dim)?;
    let thetas = s.f64_list("thetas", a.thetas.as_deref(), &[0.2, 0.4, 0.6, 0.8, 1.0])?;
    let directions = s.usizev("directions", a.directions, 8)?;
    let tol = s.f64v("tolerance", a.tolerance, 1e-7)?;
    let params = NewtonParams::default();
    let mut rec = Record::new("section.sff");
    let rep = sff_monotonicity_test(
        c.as_ref(),
        &x0,
        &y0,
        &y1,
        &thetas,
        directions,
        &omega_star,
        &params,
        tol,
    )
    .map_err(err_str)?;
    rec.line(format!(
        "sff pass={} min_margin={} tolerance={} directions={}",
        rep.pass,
        fmt_f64(rep.min_margin),
        fmt_f64(rep.tol),
        rep.directions,
    ));
    for (k, chunk) in rep.margins.chunks(rep.directions.max(1)).enumerate() {
        let min = chunk.iter().copied().fold(f64::INFINITY, f64::min);
        rec.line(format!(
            "margin pair={}:{} min={}",
            fmt_f64(rep.thetas[k]),
            fmt_f64(rep.thetas[k + 1]),
            fmt_f64(min),
        ));
    }
    let code = if rep.pass { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}

fn section_nest(s: &mut Settings, out: Option<&Path>, a: NestArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let (x0, y0, y1) = resolve_points(s, &a.points, &omega, &omega_star, dim)?;
    let pairs_text = s.string(
        "theta_pairs",
        a.theta_pairs.as_deref(),
        "0.25:0.75,0.1:0.9,0.5:1",
    );
    let pairs = parse_theta_pairs(&pairs_text)?;
    let resolution = s.usizev("resolution", a.resolution, 33)?;
    let tol = s.f64v("tolerance", a.tolerance, 1e-9)?;
    let grid = GridSpec::square(omega.clone(), resolution).map_err(err_str)?;
    let params = NewtonParams::default();
    let mut rec = Record::new("section.nest");
    let rep = section_nesting_test(
        c.as_ref(),
        &x0,
        &y0,
        &y1,
        &pairs,
        &grid,
        &omega_star,
        &params,
        tol,
    )
    .map_err(err_str)?;
    rec.line(format!(
        "nest pairs={} checked_nodes={} violations={} worst_excess={} tolerance={}",
        rep.pair_count,
        rep.checked_nodes,
        rep.violations,
        fmt_f64(rep.worst_excess),
        fmt_f64(tol),
    ));
    let code = if rep.violations == 0 { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}

/// Load a potential file or generate a random c-convex one; records where
/// it came from either way.
#[allow(clippy::too_many_arguments)]
fn source_potential(
    s: &mut Settings,
    rec: &mut Record,
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
    phi_flag: Option<&Path>,
    random_pieces: Option<usize>,
    resolution_flag: Option<usize>,
    seed_flag: Option<u64>,
) -> Result<GridPotential, String> {
    let phi_key = s.opt_string("phi", phi_flag.and_then(|p| p.to_str()));
    match (phi_key, random_pieces) {
        (Some(path), None) => {
            let phi = read_potential(Path::new(&path))?;
            rec.line(format!(
                "source kind=file path={path} resolution={}",
                phi.grid
                    .resolution
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join("x"),
            ));
            Ok(phi)
        }
        (None, pieces_flag) => {
            let pieces = s.usizev("pieces", pieces_flag, 4)?;
            let resolution = s.usizev("resolution", resolution_flag, 33)?;
            let seed = s.u64v("seed", seed_flag, 7)?;
            let grid = GridSpec::square(omega.clone(), resolution).map_err(err_str)?;
            let (phi, built) =
                random_c_affine_potential(c, &grid, omega_star, pieces, seed).map_err(err_str)?;
            rec.line(format!(
                "source kind=random pieces={} resolution={resolution} seed={seed}",
                built.len()
            ));
            for piece in &built {
                rec.line(format!(
                    "piece y={} offset={}",
                    fmt_point(&piece.y),
                    fmt_f64(piece.offset)
                ));
            }
            Ok(phi)
        }
        (Some(_), Some(_)) => Err("pass either a potential file or --random-pieces, not both".into()),
    }
}

fn cmd_transform(s: &mut Settings, out: Option<&Path>, a: TransformArgs) -> Result<u8, String> {
    let (c, omega, omega_star, _) = build_cost(s, &a.cost)?;
    let mut rec = Record::new("transform");
    let phi = source_potential(
        s,
        &mut rec,
        c.as_ref(),
        &omega,
        &omega_star,
        a.phi.as_deref(),
        a.random_pieces,
        a.resolution,
        a.seed,
    )?;
    if let Some(path) = &a.save_phi {
        write_potential(path, &phi)?;
        rec.line(format!("saved_phi path={}", path.display()));
    }
    let res_dual = s.usizev(
        "resolution_dual",
        a.resolution_dual,
        phi.grid.resolution[0],
    )?;
    let dual = GridSpec::square(omega_star.clone(), res_dual).map_err(err_str)?;
    let phi_c = c_transform(&phi, c.as_ref(), &dual);
    let eps = epsilon_grid(c.as_ref(), &phi.grid, &dual);
    rec.line(format!(
        "transform resolution_dual={res_dual} epsilon_grid={}",
        fmt_f64(eps)
    ));
    let out_path = match &a.out {
        Some(p) => p.clone(),
        None => PathBuf::from(s.string("out", None, "phi_c.grid")),
    };
    if a.out.is_some() {
        s.string("out", a.out.as_deref().and_then(|p| p.to_str()), "phi_c.grid");
    }
    write_potential(&out_path, &phi_c)?;
    rec.line(format!("out path={}", out_path.display()));
    if a.roundtrip {
        let tol = s.f64v("tolerance", a.tolerance, eps)?;
        let conv = is_c_convex(&phi, c.as_ref(), &dual, tol);
        rec.line(format!(
            "roundtrip c_convex={} max_deviation={} tolerance={}",
            conv.is_c_convex,
            fmt_f64(conv.max_deviation),
            fmt_f64(tol),
        ));
    }
    rec.emit(s, out)?;
    Ok(0)
}

fn cmd_contact(s: &mut Settings, out: Option<&Path>, a: ContactArgs) -> Result<u8, String> {
    let (c, omega, omega_star, dim) = build_cost(s, &a.cost)?;
    let mut rec = Record::new("contact");
    let phi = source_potential(
        s,
        &mut rec,
        c.as_ref(),
        &omega,
        &omega_star,
        a.phi.as_deref(),
        a.random_pieces,
        a.resolution,
        a.seed,
    )?;
    let res_dual = s.usizev(
        "resolution_dual",
        a.resolution_dual,
        phi.grid.resolution[0],
    )?;
    let dual = GridSpec::square(omega_star.clone(), res_dual).map_err(err_str)?;
    let phi_c = c_transform(&phi, c.as_ref(), &dual);
    let requested = s.point("y", a.y.as_deref(), &omega_star.center(), dim)?;
    // contact_set wants y exactly on a node; snap and report the node used.
    let idx = dual
        .nearest_node(&requested)
        .ok_or("y lies outside the target grid")?;
    let y = dual.node(idx);
    let eps = epsilon_grid(c.as_ref(), &phi.grid, &dual);
    let tol = s.f64v("tolerance", a.tolerance, eps)?;
    let set = contact_set(&phi, &phi_c, c.as_ref(), &y, tol).map_err(err_str)?;
    rec.line(format!(
        "contact y={} y_index={} members={} component_count={} tolerance={}",
        fmt_point(&y),
        set.y_index,
        set.indices.len(),
        set.component_count,
        fmt_f64(set.tol),
    ));
    let code = if set.component_count == 1 { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}

fn cmd_localglobal(s: &mut Settings, out: Option<&Path>, a: LocalGlobalArgs) -> Result<u8, String> {
    let (c, omega, omega_star, _) = build_cost(s, &a.cost)?;
    let resolution = s.usizev("resolution", a.resolution, 32)?;
    let potentials = s.usizev("potentials", a.potentials, 10)?;
    let pieces = s.usizev("pieces", a.pieces, 5)?;
    let seed = s.u64v("seed", a.seed, 7)?;
    let r_local = s.f64v("radius_local", a.radius_local, 0.3)?;
    let tol = s.f64v("tolerance", a.tolerance, 1e-3)?;
    let grid = GridSpec::square(omega.clone(), resolution).map_err(err_str)?;
    let mut rec = Record::new("localglobal");
    let mut total = 0usize;
    for k in 0..potentials {
        let seed_k = seed.wrapping_add(k as u64);
        let (phi, _) = random_c_affine_potential(c.as_ref(), &grid, &omega_star, pieces, seed_k)
            .map_err(err_str)?;
        let rep = local_global_experiment(&phi, c.as_ref(), &omega_star, r_local, tol);
        total += rep.local_not_global_count();
        rec.line(format!(
            "potential seed={seed_k} interior={} indeterminate={} locally_supported={} \
             globally_supported={} local_not_global={}",
            rep.interior_count,
            rep.indeterminate,
            rep.locally_supported,
            rep.globally_supported,
            rep.local_not_global_count(),
        ));
    }
    rec.line(format!(
        "localglobal potentials={potentials} total_local_not_global={total} \
         radius_local={} tolerance={}",
        fmt_f64(r_local),
        fmt_f64(tol),
    ));
    let code = if total == 0 { 0 } else { 1 };
    rec.emit(s, out)?;
    Ok(code)
}
