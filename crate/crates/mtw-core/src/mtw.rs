//! Checkers for the Ma-Trudinger-Wang condition.
//!
//! Three independent measurements of the same geometric property: the
//! direct cost-difference inequality on probe spheres (`a3v_direct`), the
//! chord-above-curve margin of the A-matrix restricted to momenta
//! orthogonal directions (`codim1`), and a finite-difference second
//! derivative of the A-form (`tensor`). Each is exposed both as a
//! single-configuration operation and as a seeded randomized scan; the
//! three scans must agree in verdict on every built-in cost.
//!
//! Margins are oriented so that nonnegative means the condition holds;
//! verdicts compare the worst margin against a scale-aware tolerance.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::cexp::{c_exp, c_segment, interpolate, NewtonParams};
use crate::cost::{
    cost_grad_x, cost_hess_xx, derivative_bundle, sample_pair, Cost, TransposedCost,
};
use crate::error::{MtwError, Result};
use crate::geometry::{pair_min_separation, sphere_directions, DomainBox, Point};

/// Step scale for the finite-difference tensor: differences of second
/// derivatives lose two orders to cancellation, so the step sits well above
/// the first-derivative choice.
pub const TENSOR_STEP_SCALE: f64 = 1e-3;

/// Interior interpolation parameters used by scans. Endpoints are excluded
/// because their margins vanish identically and carry no information.
pub const DEFAULT_THETAS: [f64; 3] = [0.25, 0.5, 0.75];

/// Probe sphere radii as fractions of the source-box diagonal.
pub const PROBE_RADIUS_FRACTIONS: [f64; 3] = [0.01, 0.003, 0.001];

/// Probe directions per sphere.
pub const PROBE_DIRECTIONS: usize = 8;

const SCALE_SAMPLES: usize = 64;

// ---------------------------------------------------------------------------
// A matrix

/// The matrix A(x, p) = -c_xx(x, cexp_x(p)) together with the point pair
/// that produced it.
#[derive(Debug, Clone)]
pub struct AMatrixSample {
    pub x: Point,
    pub p: Point,
    /// The solved target cexp_x(p).
    pub y: Point,
    /// Symmetrized after evaluation.
    pub a: DMatrix<f64>,
}

fn neg_sym_hess_xx(c: &dyn Cost, x: &Point, y: &Point) -> DMatrix<f64> {
    let h = cost_hess_xx(c, x.as_slice(), y.as_slice());
    (&h + h.transpose()) * (-0.5)
}

/// Evaluate A(x, p) by solving the c-exponential at (x, p) and negating the
/// source-source hessian there.
pub fn a_matrix(
    c: &dyn Cost,
    x: &Point,
    p: &Point,
    y_seed: &Point,
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<AMatrixSample> {
    let sol = c_exp(c, x, p, y_seed, omega_star, params)?;
    let a = neg_sym_hess_xx(c, x, &sol.point);
    Ok(AMatrixSample {
        x: x.clone(),
        p: p.clone(),
        y: sol.point,
        a,
    })
}

// ---------------------------------------------------------------------------
// Momentum segments

struct MomentumSegment {
    y_end0: Point,
    y_end1: Point,
    /// (theta, solved target), in the caller's order.
    samples: Vec<(f64, Point)>,
}

/// Solve y(theta) = cexp_x((1-theta) p0 + theta p1) for each requested
/// theta. The endpoint momenta are solved first and every interior theta is
/// seeded from the nearest already-solved parameter, so theta in {0, 1}
/// reproduces the endpoint solutions bitwise and the result does not depend
/// on the order of the requested list.
fn momentum_segment(
    c: &dyn Cost,
    x: &Point,
    p0: &Point,
    p1: &Point,
    thetas: &[f64],
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<MomentumSegment> {
    let y_end0 = c_exp(c, x, p0, &omega_star.center(), omega_star, params)?.point;
    let y_end1 = c_exp(c, x, p1, &y_end0, omega_star, params)?.point;

    let mut solved: Vec<(f64, Point)> = vec![(0.0, y_end0.clone()), (1.0, y_end1.clone())];
    let mut order: Vec<usize> = (0..thetas.len()).collect();
    order.sort_by(|&a, &b| thetas[a].total_cmp(&thetas[b]));

    let mut out: Vec<Option<(f64, Point)>> = vec![None; thetas.len()];
    for idx in order {
        let t = thetas[idx];
        if !(0.0..=1.0).contains(&t) {
            return Err(MtwError::Invalid(format!(
                "interpolation parameter {t} outside [0, 1]"
            )));
        }
        let seed = solved
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .expect("endpoints are always solved")
            .1
            .clone();
        let p = interpolate(p0, p1, t);
        let sol = c_exp(c, x, &p, &seed, omega_star, params)?;
        solved.push((t, sol.point.clone()));
        out[idx] = Some((t, sol.point));
    }
    Ok(MomentumSegment {
        y_end0,
        y_end1,
        samples: out.into_iter().map(|s| s.expect("all thetas solved")).collect(),
    })
}

// ---------------------------------------------------------------------------
// codim1 checker

#[derive(Debug, Clone)]
pub struct Codim1Outcome {
    /// (theta, margin), in the caller's theta order.
    pub margins: Vec<(f64, f64)>,
    pub min_margin: f64,
    pub worst_theta: f64,
    /// The direction actually used: the input projected orthogonal to
    /// p1 - p0 and renormalized.
    pub xi: Point,
}

/// Project xi orthogonal to dp and renormalize. A zero dp leaves xi
/// unconstrained (the orthogonality requirement is vacuous).
fn project_orthogonal(xi: &Point, dp: &Point) -> Result<Point> {
    let xi_norm = xi.norm();
    if xi_norm == 0.0 {
        return Err(MtwError::DegenerateDirection { remainder: 0.0 });
    }
    let dp_norm = dp.norm();
    if dp_norm == 0.0 {
        return Ok(xi / xi_norm);
    }
    let proj = xi - dp * (xi.dot(dp) / (dp_norm * dp_norm));
    let remainder = proj.norm() / xi_norm;
    if remainder < 1e-6 {
        return Err(MtwError::DegenerateDirection { remainder });
    }
    Ok(&proj / proj.norm())
}

/// Margin of the chord-above-curve inequality for the A-matrix along the
/// momentum segment from p0 to p1, in the direction xi (projected
/// orthogonal to p1 - p0 first).
///
/// The mixture is grouped as (A0 - At)(1-t) + (A1 - At)t so that a cost
/// whose A does not depend on p yields exactly zero at every theta, and
/// theta in {0, 1} yields exactly zero for every cost.
pub fn check_a3w_codim1(
    c: &dyn Cost,
    x: &Point,
    p0: &Point,
    p1: &Point,
    xi: &Point,
    thetas: &[f64],
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<Codim1Outcome> {
    let dp = p1 - p0;
    let xi_used = project_orthogonal(xi, &dp)?;
    let seg = momentum_segment(c, x, p0, p1, thetas, omega_star, params)?;
    let a0 = neg_sym_hess_xx(c, x, &seg.y_end0);
    let a1 = neg_sym_hess_xx(c, x, &seg.y_end1);

    let mut margins = Vec::with_capacity(thetas.len());
    let mut min_margin = f64::INFINITY;
    let mut worst_theta = f64::NAN;
    for (t, y_t) in &seg.samples {
        let a_t = neg_sym_hess_xx(c, x, y_t);
        let mix = (&a0 - &a_t) * (1.0 - *t) + (&a1 - &a_t) * *t;
        let margin = (&mix * &xi_used).dot(&xi_used);
        if margin < min_margin {
            min_margin = margin;
            worst_theta = *t;
        }
        margins.push((*t, margin));
    }
    Ok(Codim1Outcome {
        margins,
        min_margin,
        worst_theta,
        xi: xi_used,
    })
}

// ---------------------------------------------------------------------------
// tensor checker

/// Orthonormalize (xi, eta): xi is normalized, eta is projected orthogonal
/// to xi and renormalized.
fn orthonormal_pair(xi: &Point, eta: &Point) -> Result<(Point, Point)> {
    let xi_norm = xi.norm();
    if xi_norm == 0.0 {
        return Err(MtwError::DegenerateDirection { remainder: 0.0 });
    }
    let xi_hat = xi / xi_norm;
    let eta_proj = project_orthogonal(eta, &xi_hat)?;
    Ok((xi_hat, eta_proj))
}

/// Second derivative of p -> A(x, p) xi . xi in the direction eta,
/// by a central second difference with one Richardson refinement.
/// Nonnegativity of this value over admissible (x, p, xi, eta) with
/// eta orthogonal to xi is the differential form of the condition.
///
/// Offset momenta are solved by continuation outward from the base point,
/// so the evaluation is deterministic.
pub fn mtw_tensor(
    c: &dyn Cost,
    x: &Point,
    p: &Point,
    xi: &Point,
    eta: &Point,
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<f64> {
    let (xi_hat, eta_hat) = orthonormal_pair(xi, eta)?;
    let h = TENSOR_STEP_SCALE * (1.0 + p.norm());

    let y_base = c_exp(c, x, p, &omega_star.center(), omega_star, params)?.point;
    let a_form = |y: &Point| -> f64 {
        let a = neg_sym_hess_xx(c, x, y);
        (&a * &xi_hat).dot(&xi_hat)
    };
    let base = a_form(&y_base);

    // Solve the four offsets, each seeded from the previous point on its ray.
    let offset_form = |s: f64, seed: &Point| -> Result<(f64, Point)> {
        let p_off = p + &eta_hat * s;
        let sol = c_exp(c, x, &p_off, seed, omega_star, params)?;
        Ok((a_form(&sol.point), sol.point))
    };
    let (f_ph, y_ph) = offset_form(0.5 * h, &y_base)?;
    let (f_fh, _) = offset_form(h, &y_ph)?;
    let (f_mh, y_mh) = offset_form(-0.5 * h, &y_base)?;
    let (f_fmh, _) = offset_form(-h, &y_mh)?;

    let coarse = (f_fh - 2.0 * base + f_fmh) / (h * h);
    let fine = (f_ph - 2.0 * base + f_mh) / (0.25 * h * h);
    Ok((4.0 * fine - coarse) / 3.0)
}

// ---------------------------------------------------------------------------
// a3v direct checker

/// Margins of the clean cost-difference inequality at explicit probe
/// points: max{c(x0,y0)-c(x,y0), c(x0,y1)-c(x,y1)} + c(x,y_theta) -
/// c(x0,y_theta), nonnegative when the condition holds.
///
/// Each target's increment is grouped as c(x,y) - c(x0,y) so a probe at x0
/// itself contributes exactly zero.
pub fn a3v_probe_margins(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    theta: f64,
    probes: &[Point],
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<Vec<f64>> {
    let seg = c_segment(c, x0, y0, y1, &[theta], omega_star, params)?;
    let y_theta = &seg.samples[0].1;
    Ok(clean_margins(c, x0, y0, y1, y_theta, probes))
}

fn clean_margins(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    y_theta: &Point,
    probes: &[Point],
) -> Vec<f64> {
    let anchor0 = c.eval(x0.as_slice(), y0.as_slice());
    let anchor1 = c.eval(x0.as_slice(), y1.as_slice());
    let anchor_t = c.eval(x0.as_slice(), y_theta.as_slice());
    probes
        .iter()
        .map(|x| {
            let l0 = c.eval(x.as_slice(), y0.as_slice()) - anchor0;
            let l1 = c.eval(x.as_slice(), y1.as_slice()) - anchor1;
            let lt = c.eval(x.as_slice(), y_theta.as_slice()) - anchor_t;
            f64::max(-l0, -l1) + lt
        })
        .collect()
}

struct A3vSweep {
    min_margin: f64,
    worst_theta: f64,
    worst_radius: f64,
    samples: usize,
    skipped_probes: usize,
    /// (radius, min margin / radius^2) across the sweep, largest radius
    /// first. Diagnostic only; it never participates in a verdict.
    trend: Vec<(f64, f64)>,
}

fn a3v_sweep(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    thetas: &[f64],
    probe_radii: &[f64],
    directions: usize,
    omega: &DomainBox,
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<A3vSweep> {
    let seg = c_segment(c, x0, y0, y1, thetas, omega_star, params)?;
    let dirs = sphere_directions(x0.len(), directions);

    let mut sweep = A3vSweep {
        min_margin: f64::INFINITY,
        worst_theta: f64::NAN,
        worst_radius: f64::NAN,
        samples: 0,
        skipped_probes: 0,
        trend: Vec::with_capacity(probe_radii.len()),
    };
    for &r in probe_radii {
        let probes: Vec<Point> = dirs
            .iter()
            .filter_map(|d| {
                let x = x0 + d * r;
                if omega.contains(x.as_slice()) {
                    Some(x)
                } else {
                    sweep.skipped_probes += 1;
                    None
                }
            })
            .collect();
        let mut radius_min = f64::INFINITY;
        for (t, y_t, _) in &seg.samples {
            for m in clean_margins(c, x0, y0, y1, y_t, &probes) {
                sweep.samples += 1;
                if m < radius_min {
                    radius_min = m;
                }
                if m < sweep.min_margin {
                    sweep.min_margin = m;
                    sweep.worst_theta = *t;
                    sweep.worst_radius = r;
                }
            }
        }
        if radius_min.is_finite() {
            sweep.trend.push((r, radius_min / (r * r)));
        }
    }
    Ok(sweep)
}

/// Sweep the clean inequality over probe spheres around x0 and report the
/// worst margin.
///
/// The verdict uses the clean form; the per-radius margin/r^2 trend is
/// reported as a diagnostic of quadratic-order behavior but never changes
/// the verdict.
#[allow(clippy::too_many_arguments)]
pub fn check_a3v_direct(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    thetas: &[f64],
    probe_radii: &[f64],
    directions: usize,
    omega: &DomainBox,
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<MTWReport> {
    let sweep = a3v_sweep(
        c, x0, y0, y1, thetas, probe_radii, directions, omega, omega_star, params,
    )?;
    if sweep.samples == 0 {
        return Err(MtwError::Invalid(
            "every probe point fell outside the source domain".into(),
        ));
    }
    let s2 = local_hessian_scale(c, x0, y0, y1);
    let r_max = probe_radii.iter().cloned().fold(0.0, f64::max);
    let tolerance = 1e-7 * s2 * r_max * r_max;
    let p0 = -cost_grad_x(c, x0.as_slice(), y0.as_slice());
    let p1 = -cost_grad_x(c, x0.as_slice(), y1.as_slice());
    Ok(MTWReport {
        method: "a3v_direct".into(),
        cost: c.name(),
        samples: sweep.samples,
        skipped: sweep.skipped_probes,
        worst_margin: sweep.min_margin,
        worst_location: Some(WorstLocation {
            x: x0.clone(),
            y0: y0.clone(),
            y1: y1.clone(),
            p0,
            p1,
            xi: Point::zeros(x0.len()),
            eta: Point::zeros(x0.len()),
            theta: sweep.worst_theta,
            radius: sweep.worst_radius,
        }),
        pass: sweep.min_margin >= -tolerance,
        tolerance,
        diagnostic_trend: sweep.trend,
    })
}

fn local_hessian_scale(c: &dyn Cost, x0: &Point, y0: &Point, y1: &Point) -> f64 {
    let h0 = cost_hess_xx(c, x0.as_slice(), y0.as_slice()).norm();
    let h1 = cost_hess_xx(c, x0.as_slice(), y1.as_slice()).norm();
    f64::max(h0, h1).max(f64::MIN_POSITIVE)
}

/// Margins of the section-ordering inequality max{h1, 0} - h_theta at
/// explicit probe points, where h_t(x) = (c(x,y0) - c(x0,y0)) -
/// (c(x,y_t) - c(x0,y_t)). Algebraically identical to the clean
/// cost-difference margins; kept as an independently grouped code path for
/// cross-validation.
pub fn check_h_ordering(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    theta: f64,
    probes: &[Point],
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<Vec<f64>> {
    let seg = c_segment(c, x0, y0, y1, &[theta], omega_star, params)?;
    let y_theta = &seg.samples[0].1;
    let anchor0 = c.eval(x0.as_slice(), y0.as_slice());
    let anchor1 = c.eval(x0.as_slice(), y1.as_slice());
    let anchor_t = c.eval(x0.as_slice(), y_theta.as_slice());
    Ok(probes
        .iter()
        .map(|x| {
            let h1 = (c.eval(x.as_slice(), y0.as_slice()) - anchor0)
                - (c.eval(x.as_slice(), y1.as_slice()) - anchor1);
            let h_t = (c.eval(x.as_slice(), y0.as_slice()) - anchor0)
                - (c.eval(x.as_slice(), y_theta.as_slice()) - anchor_t);
            f64::max(h1, 0.0) - h_t
        })
        .collect())
}

// ---------------------------------------------------------------------------
// local c-convexity form

/// Quadratic form whose nonnegativity over directions tau tangent to a
/// level set of phi certifies local convexity of the image of the sublevel
/// set {phi <= 0} under the chart x -> -c_y(x, y0).
///
/// The value is tau' (phi_hess - M) tau with M_ij = sum_k d(c_xx)_ij/dy_k
/// w_k and w = c_xy^{-1} grad phi; the third derivatives are taken by
/// central differences of c_xx in y. Along a momentum segment this equals
/// the chord defect A(p1) - A(p0) - DA(p0)[p1 - p0] in form sense, which is
/// how the sign convention is fixed. No sign is asserted here; the caller
/// interprets the value.
pub fn local_cconvexity_form(
    c: &dyn Cost,
    phi_grad: &Point,
    phi_hess: &DMatrix<f64>,
    x: &Point,
    y0: &Point,
    tau: &Point,
) -> Result<f64> {
    let n = x.len();
    let tau_norm = tau.norm();
    if tau_norm == 0.0 {
        return Err(MtwError::DegenerateDirection { remainder: 0.0 });
    }
    let tau_hat = tau / tau_norm;
    let bundle = derivative_bundle(c, x, y0)?;
    let w = &bundle.cxy_inv * phi_grad;

    // Analytic hessians tolerate a first-derivative step; finite-difference
    // hessians carry noise that a larger step must average out.
    let scale = 1.0 + x.norm() + y0.norm();
    let step = if c.hess_xx(x.as_slice(), y0.as_slice()).is_some() {
        1e-5 * scale
    } else {
        10.0 * c.fd_step() * scale
    };

    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut y_hi = y0.clone();
    let mut y_lo = y0.clone();
    for k in 0..n {
        y_hi[k] = y0[k] + step;
        y_lo[k] = y0[k] - step;
        let d = (cost_hess_xx(c, x.as_slice(), y_hi.as_slice())
            - cost_hess_xx(c, x.as_slice(), y_lo.as_slice()))
            / (2.0 * step);
        m += d * w[k];
        y_hi[k] = y0[k];
        y_lo[k] = y0[k];
    }
    let form = phi_hess - m;
    Ok((&form * &tau_hat).dot(&tau_hat))
}

// ---------------------------------------------------------------------------
// reports, registry, scans

/// The configuration a scan evaluates at one sample: a source point, two
/// targets, and raw direction material for the checkers that need it.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub index: usize,
    pub x: Point,
    pub y0: Point,
    pub y1: Point,
    pub xi: Point,
    pub eta: Point,
}

/// Where a scan's worst margin occurred, with enough data to replay it.
#[derive(Debug, Clone)]
pub struct WorstLocation {
    pub x: Point,
    pub y0: Point,
    pub y1: Point,
    pub p0: Point,
    pub p1: Point,
    pub xi: Point,
    pub eta: Point,
    pub theta: f64,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct MTWReport {
    pub method: String,
    pub cost: String,
    /// Margins actually evaluated.
    pub samples: usize,
    /// Configurations (or probes) that could not be evaluated: degenerate
    /// directions, unsolvable exponentials, probes outside the domain.
    pub skipped: usize,
    pub worst_margin: f64,
    pub worst_location: Option<WorstLocation>,
    pub pass: bool,
    pub tolerance: f64,
    /// Per-radius margin/r^2 minima (a3v sweeps only).
    pub diagnostic_trend: Vec<(f64, f64)>,
}

/// Outcome of one configuration inside a scan.
#[derive(Debug, Clone, Copy)]
pub struct ConfigOutcome {
    pub margin: f64,
    pub theta: f64,
    pub radius: f64,
}

/// Per-configuration record for machine-readable dumps.
#[derive(Debug, Clone)]
pub struct ConfigRecord {
    pub index: usize,
    /// None when the configuration was skipped.
    pub margin: Option<f64>,
    pub theta: f64,
    pub radius: f64,
}

/// Shared scan context: domains, solver parameters, and the sampled cost
/// scales that make tolerances unitless.
#[derive(Debug, Clone)]
pub struct ScanEnv {
    pub omega: DomainBox,
    pub omega_star: DomainBox,
    pub params: NewtonParams,
    pub thetas: Vec<f64>,
    pub probe_radii: Vec<f64>,
    pub probe_directions: usize,
    /// Sampled max |c_x|.
    pub s1: f64,
    /// Sampled max Frobenius norm of c_xx.
    pub s2: f64,
}

impl ScanEnv {
    /// Sample the gradient and hessian scales over admissible pairs. The rng
    /// stream is decorrelated from the configuration stream so budget
    /// changes do not move the tolerances.
    pub fn new(
        c: &dyn Cost,
        omega: &DomainBox,
        omega_star: &DomainBox,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7363_616c_6573u64);
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for _ in 0..SCALE_SAMPLES {
            let (x, y) = sample_pair(&mut rng, c, omega, omega_star)?;
            s1 = s1.max(cost_grad_x(c, x.as_slice(), y.as_slice()).norm());
            s2 = s2.max(cost_hess_xx(c, x.as_slice(), y.as_slice()).norm());
        }
        if s1 == 0.0 || s2 == 0.0 {
            return Err(MtwError::Invalid(
                "cost scales sampled as zero; tolerances would be meaningless".into(),
            ));
        }
        let diag = omega.diagonal();
        Ok(ScanEnv {
            omega: omega.clone(),
            omega_star: omega_star.clone(),
            params: NewtonParams::default(),
            thetas: DEFAULT_THETAS.to_vec(),
            probe_radii: PROBE_RADIUS_FRACTIONS.iter().map(|f| f * diag).collect(),
            probe_directions: PROBE_DIRECTIONS,
            s1,
            s2,
        })
    }

    pub fn max_probe_radius(&self) -> f64 {
        self.probe_radii.iter().cloned().fold(0.0, f64::max)
    }
}

/// One checker strategy: evaluates its margin at a sampled configuration
/// and owns its scale-aware tolerance.
pub trait MtwChecker: Send + Sync {
    fn name(&self) -> &'static str;
    fn tolerance(&self, env: &ScanEnv) -> f64;
    fn config_margin(&self, c: &dyn Cost, env: &ScanEnv, cfg: &ScanConfig)
        -> Result<ConfigOutcome>;
}

struct A3vDirectChecker;
struct Codim1Checker;
struct TensorChecker;

impl MtwChecker for A3vDirectChecker {
    fn name(&self) -> &'static str {
        "a3v_direct"
    }

    // Margins are second-order in the probe radius, so the unitless scale
    // carries r_max^2.
    fn tolerance(&self, env: &ScanEnv) -> f64 {
        let r = env.max_probe_radius();
        1e-7 * env.s2 * r * r
    }

    fn config_margin(
        &self,
        c: &dyn Cost,
        env: &ScanEnv,
        cfg: &ScanConfig,
    ) -> Result<ConfigOutcome> {
        let sweep = a3v_sweep(
            c,
            &cfg.x,
            &cfg.y0,
            &cfg.y1,
            &env.thetas,
            &env.probe_radii,
            env.probe_directions,
            &env.omega,
            &env.omega_star,
            &env.params,
        )?;
        if sweep.samples == 0 {
            return Err(MtwError::Invalid("all probes outside the domain".into()));
        }
        Ok(ConfigOutcome {
            margin: sweep.min_margin,
            theta: sweep.worst_theta,
            radius: sweep.worst_radius,
        })
    }
}

impl MtwChecker for Codim1Checker {
    fn name(&self) -> &'static str {
        "codim1"
    }

    fn tolerance(&self, env: &ScanEnv) -> f64 {
        1e-7 * env.s2
    }

    fn config_margin(
        &self,
        c: &dyn Cost,
        env: &ScanEnv,
        cfg: &ScanConfig,
    ) -> Result<ConfigOutcome> {
        let p0 = -cost_grad_x(c, cfg.x.as_slice(), cfg.y0.as_slice());
        let p1 = -cost_grad_x(c, cfg.x.as_slice(), cfg.y1.as_slice());
        let out = check_a3w_codim1(
            c,
            &cfg.x,
            &p0,
            &p1,
            &cfg.xi,
            &env.thetas,
            &env.omega_star,
            &env.params,
        )?;
        Ok(ConfigOutcome {
            margin: out.min_margin,
            theta: out.worst_theta,
            radius: 0.0,
        })
    }
}

impl MtwChecker for TensorChecker {
    fn name(&self) -> &'static str {
        "tensor"
    }

    // The tensor differentiates A twice along momenta, which divides the
    // hessian scale by the squared gradient scale.
    fn tolerance(&self, env: &ScanEnv) -> f64 {
        1e-7 * env.s2 / (env.s1 * env.s1)
    }

    fn config_margin(
        &self,
        c: &dyn Cost,
        env: &ScanEnv,
        cfg: &ScanConfig,
    ) -> Result<ConfigOutcome> {
        let p = -cost_grad_x(c, cfg.x.as_slice(), cfg.y0.as_slice());
        let value = mtw_tensor(
            c,
            &cfg.x,
            &p,
            &cfg.xi,
            &cfg.eta,
            &env.omega_star,
            &env.params,
        )?;
        Ok(ConfigOutcome {
            margin: value,
            theta: 0.0,
            radius: 0.0,
        })
    }
}

pub const METHOD_NAMES: [&str; 3] = ["a3v_direct", "codim1", "tensor"];

pub fn checker_by_name(name: &str) -> Result<Arc<dyn MtwChecker>> {
    match name {
        "a3v_direct" => Ok(Arc::new(A3vDirectChecker)),
        "codim1" => Ok(Arc::new(Codim1Checker)),
        "tensor" => Ok(Arc::new(TensorChecker)),
        other => Err(MtwError::UnknownMethod(other.to_string())),
    }
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Point {
    loop {
        let v = Point::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if (1e-3..=1.0).contains(&n) {
            return v / n;
        }
    }
}

fn sample_admissible_target<R: Rng>(
    rng: &mut R,
    x: &Point,
    omega_star: &DomainBox,
    min_sep: f64,
) -> Result<Point> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let y = omega_star.sample(rng);
        if (x - &y).norm() >= min_sep {
            return Ok(y);
        }
    }
    Err(MtwError::SamplingExhausted { attempts: ATTEMPTS })
}

/// Deterministic configuration list: 70% of the budget on a jittered
/// lattice over the source box (one point per cell, cells in row-major
/// order), the rest uniform. Targets and directions are drawn from the same
/// stream.
pub fn generate_configs(
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
    budget: usize,
    seed: u64,
) -> Result<Vec<ScanConfig>> {
    if budget == 0 {
        return Err(MtwError::Invalid("sample budget is zero".into()));
    }
    let dim = omega.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let min_sep = pair_min_separation(omega, omega_star);
    if c.singular_at_diagonal() && min_sep == 0.0 && omega.distance_to_box(omega_star) == 0.0 {
        return Err(MtwError::DiagonalNotExcluded);
    }

    let stratified = budget * 7 / 10;
    let cells_per_axis = (stratified as f64)
        .powf(1.0 / dim as f64)
        .ceil()
        .max(1.0) as usize;

    let mut configs = Vec::with_capacity(budget);
    let mut cell = vec![0usize; dim];
    for index in 0..budget {
        let x = if index < stratified {
            let mut x = Point::zeros(dim);
            for a in 0..dim {
                let side = omega.side(a) / cells_per_axis as f64;
                let u: f64 = rng.random_range(0.0..1.0);
                x[a] = omega.lower[a] + (cell[a] as f64 + u) * side;
            }
            // advance the cell counter, wrapping in row-major order
            for a in (0..dim).rev() {
                cell[a] += 1;
                if cell[a] < cells_per_axis {
                    break;
                }
                cell[a] = 0;
            }
            x
        } else {
            omega.sample(&mut rng)
        };
        let y0 = sample_admissible_target(&mut rng, &x, omega_star, min_sep)?;
        let y1 = sample_admissible_target(&mut rng, &x, omega_star, min_sep)?;
        let xi = random_unit(&mut rng, dim);
        let eta = random_unit(&mut rng, dim);
        configs.push(ScanConfig {
            index,
            x,
            y0,
            y1,
            xi,
            eta,
        });
    }
    Ok(configs)
}

/// Randomized scan of one checker over sampled configurations.
/// Deterministic for a fixed seed: the configuration list is generated
/// sequentially and the worst-margin reduction runs in index order after
/// the parallel evaluation.
pub fn scan(
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
    method: &str,
    budget: usize,
    seed: u64,
) -> Result<MTWReport> {
    Ok(scan_with_records(c, omega, omega_star, method, budget, seed)?.0)
}

/// Like `scan`, but also returns one record per configuration.
pub fn scan_with_records(
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
    method: &str,
    budget: usize,
    seed: u64,
) -> Result<(MTWReport, Vec<ConfigRecord>)> {
    let checker = checker_by_name(method)?;
    let env = ScanEnv::new(c, omega, omega_star, seed)?;
    let configs = generate_configs(c, omega, omega_star, budget, seed)?;

    let outcomes: Vec<Result<ConfigOutcome>> = configs
        .par_iter()
        .map(|cfg| checker.config_margin(c, &env, cfg))
        .collect();

    let mut records = Vec::with_capacity(configs.len());
    let mut skipped = 0usize;
    let mut samples = 0usize;
    let mut worst: Option<(f64, usize, f64, f64)> = None;
    for (cfg, outcome) in configs.iter().zip(outcomes.iter()) {
        match outcome {
            Err(_) => {
                skipped += 1;
                records.push(ConfigRecord {
                    index: cfg.index,
                    margin: None,
                    theta: f64::NAN,
                    radius: f64::NAN,
                });
            }
            Ok(o) => {
                samples += 1;
                if worst.map_or(true, |(m, _, _, _)| o.margin < m) {
                    worst = Some((o.margin, cfg.index, o.theta, o.radius));
                }
                records.push(ConfigRecord {
                    index: cfg.index,
                    margin: Some(o.margin),
                    theta: o.theta,
                    radius: o.radius,
                });
            }
        }
    }
    let (worst_margin, worst_index, worst_theta, worst_radius) = worst.ok_or_else(|| {
        MtwError::Invalid("every configuration was skipped; no margins evaluated".into())
    })?;
    let tolerance = checker.tolerance(&env);
    let cfg = &configs[worst_index];
    let p0 = -cost_grad_x(c, cfg.x.as_slice(), cfg.y0.as_slice());
    let p1 = -cost_grad_x(c, cfg.x.as_slice(), cfg.y1.as_slice());
    let report = MTWReport {
        method: checker.name().into(),
        cost: c.name(),
        samples,
        skipped,
        worst_margin,
        worst_location: Some(WorstLocation {
            x: cfg.x.clone(),
            y0: cfg.y0.clone(),
            y1: cfg.y1.clone(),
            p0,
            p1,
            xi: cfg.xi.clone(),
            eta: cfg.eta.clone(),
            theta: worst_theta,
            radius: worst_radius,
        }),
        pass: worst_margin >= -tolerance,
        tolerance,
        diagnostic_trend: Vec::new(),
    };
    Ok((report, records))
}

/// Re-evaluate one configuration exactly as a scan with the same seed
/// would. Reproduces the scan's margin bit for bit.
pub fn replay(
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
    method: &str,
    seed: u64,
    cfg: &ScanConfig,
) -> Result<ConfigOutcome> {
    let checker = checker_by_name(method)?;
    let env = ScanEnv::new(c, omega, omega_star, seed)?;
    checker.config_margin(c, &env, cfg)
}

/// Scan the transposed cost with swapped domains alongside the original;
/// the condition is invariant under this exchange, so the verdicts must
/// match.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub primal: MTWReport,
    pub dual: MTWReport,
    pub agree: bool,
}

pub fn check_duality_invariance(
    c: Arc<dyn Cost>,
    omega: &DomainBox,
    omega_star: &DomainBox,
    budget: usize,
    seed: u64,
) -> Result<DualityReport> {
    let primal = scan(&*c, omega, omega_star, "a3v_direct", budget, seed)?;
    let transposed = TransposedCost::new(c);
    let dual = scan(&transposed, omega_star, omega, "a3v_direct", budget, seed)?;
    let agree = primal.pass == dual.pass;
    Ok(DualityReport {
        primal,
        dual,
        agree,
    })
}
