//! c-exponential maps and c-segments.
//!
//! y = cexp_x(p) is the unique solution of -c_x(x, y) = p; it is computed
//! by damped Newton iteration with the mixed hessian as Jacobian. The sign
//! convention p = -c_x is used everywhere in this crate; affine
//! interpolation commutes with the sign flip, so curves defined through
//! interpolated momenta are unaffected by the choice.

use nalgebra::DMatrix;

use crate::cost::{cost_grad_x, cost_grad_y, cost_hess_xy, singularity_threshold, Cost};
use crate::error::{MtwError, Result};
use crate::geometry::{DomainBox, Point};

#[derive(Debug, Clone, Copy)]
pub struct NewtonParams {
    /// Absolute residual norm below which the iteration has converged.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams {
            tol: 1e-12,
            max_iter: 50,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CExpResult {
    /// The solved point (a target point for `c_exp`, a source point for
    /// `c_star_exp`).
    pub point: Point,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Damped Newton on residual(z) = 0 with iterates confined to `target`.
/// The iterate is clamped to the box; leaving it by more than one box
/// diagonal aborts, which is how segment escape is reported rather than
/// extrapolated.
fn newton_solve(
    residual: &dyn Fn(&Point) -> Point,
    jacobian: &dyn Fn(&Point) -> DMatrix<f64>,
    init: &Point,
    target: &DomainBox,
    params: &NewtonParams,
) -> Result<CExpResult> {
    let mut z = target.clamp(init);
    let mut r = residual(&z);
    let mut rn = r.norm();
    let diagonal = target.diagonal();

    for iter in 0..params.max_iter {
        if rn < params.tol {
            return Ok(CExpResult {
                point: z,
                iterations: iter,
                residual: rn,
                converged: true,
            });
        }
        let j = jacobian(&z);
        let threshold = singularity_threshold(&j);
        let det = j.determinant();
        if det.abs() <= threshold {
            return Err(MtwError::SingularMixedHessian {
                x: vec![],
                y: z.as_slice().to_vec(),
                det,
                threshold,
            });
        }
        let step = j
            .lu()
            .solve(&(-&r))
            .ok_or(MtwError::SingularMixedHessian {
                x: vec![],
                y: z.as_slice().to_vec(),
                det,
                threshold,
            })?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=params.max_halvings {
            let raw = &z + &step * t;
            let clamped = target.clamp(&raw);
            let overshoot = (&raw - &clamped).norm();
            if overshoot > diagonal {
                return Err(MtwError::IterateEscaped {
                    distance: overshoot,
                    diagonal,
                });
            }
            let r_new = residual(&clamped);
            let rn_new = r_new.norm();
            if rn_new < rn {
                z = clamped;
                r = r_new;
                rn = rn_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(MtwError::NewtonStalled {
                iterations: iter,
                residual: rn,
            });
        }
    }
    if rn < params.tol {
        return Ok(CExpResult {
            point: z,
            iterations: params.max_iter,
            residual: rn,
            converged: true,
        });
    }
    Err(MtwError::NewtonStalled {
        iterations: params.max_iter,
        residual: rn,
    })
}

/// Solve -c_x(x, y) = p for y, starting from `y_init`.
pub fn c_exp(
    c: &dyn Cost,
    x: &Point,
    p: &Point,
    y_init: &Point,
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<CExpResult> {
    let residual = |y: &Point| -cost_grad_x(c, x.as_slice(), y.as_slice()) - p;
    let jacobian = |y: &Point| -cost_hess_xy(c, x.as_slice(), y.as_slice());
    newton_solve(&residual, &jacobian, y_init, omega_star, params)
}

/// Solve -c_y(x, y) = q for x, starting from `x_init` (the dual map).
pub fn c_star_exp(
    c: &dyn Cost,
    y: &Point,
    q: &Point,
    x_init: &Point,
    omega: &DomainBox,
    params: &NewtonParams,
) -> Result<CExpResult> {
    let residual = |x: &Point| -cost_grad_y(c, x.as_slice(), y.as_slice()) - q;
    let jacobian = |x: &Point| -cost_hess_xy(c, x.as_slice(), y.as_slice()).transpose();
    newton_solve(&residual, &jacobian, x_init, omega, params)
}

/// A curve of solved points whose momenta interpolate affinely between two
/// endpoint momenta. Produced by `c_segment` (anchor in the source space,
/// curve in the target space) and `dual_c_segment` (roles swapped).
#[derive(Debug, Clone)]
pub struct CSegment {
    pub anchor: Point,
    pub end0: Point,
    pub end1: Point,
    pub p0: Point,
    pub p1: Point,
    /// (theta, solved point, residual), in the caller's theta order.
    pub samples: Vec<(f64, Point, f64)>,
}

impl CSegment {
    pub fn point_at(&self, theta: f64) -> Option<&Point> {
        self.samples
            .iter()
            .find(|(t, _, _)| *t == theta)
            .map(|(_, p, _)| p)
    }
}

/// Affine momentum interpolation, exact at the endpoints.
pub fn interpolate(p0: &Point, p1: &Point, theta: f64) -> Point {
    p0 * (1.0 - theta) + p1 * theta
}

/// Track the curve theta -> cexp_{x0}((1 - theta) p0 + theta p1).
///
/// Each theta is seeded by continuation from the nearest already-solved
/// parameter (the endpoints count as solved), which keeps the Newton
/// iteration on the branch the injectivity condition makes locally unique
/// and makes the result independent of the evaluation order.
pub fn c_segment(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    thetas: &[f64],
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<CSegment> {
    let p0 = -cost_grad_x(c, x0.as_slice(), y0.as_slice());
    let p1 = -cost_grad_x(c, x0.as_slice(), y1.as_slice());
    let samples = solve_along(
        &|p, seed| c_exp(c, x0, p, seed, omega_star, params),
        &p0,
        &p1,
        y0,
        y1,
        thetas,
    )?;
    Ok(CSegment {
        anchor: x0.clone(),
        end0: y0.clone(),
        end1: y1.clone(),
        p0,
        p1,
        samples,
    })
}

/// The dual curve theta -> c*exp_{y0}((1 - theta) q0 + theta q1) through
/// source points x0, x1.
pub fn dual_c_segment(
    c: &dyn Cost,
    y0: &Point,
    x0: &Point,
    x1: &Point,
    thetas: &[f64],
    omega: &DomainBox,
    params: &NewtonParams,
) -> Result<CSegment> {
    let q0 = -cost_grad_y(c, x0.as_slice(), y0.as_slice());
    let q1 = -cost_grad_y(c, x1.as_slice(), y0.as_slice());
    let samples = solve_along(
        &|q, seed| c_star_exp(c, y0, q, seed, omega, params),
        &q0,
        &q1,
        x0,
        x1,
        thetas,
    )?;
    Ok(CSegment {
        anchor: y0.clone(),
        end0: x0.clone(),
        end1: x1.clone(),
        p0: q0,
        p1: q1,
        samples,
    })
}

fn solve_along(
    solve: &dyn Fn(&Point, &Point) -> Result<CExpResult>,
    p0: &Point,
    p1: &Point,
    end0: &Point,
    end1: &Point,
    thetas: &[f64],
) -> Result<Vec<(f64, Point, f64)>> {
    let mut known: Vec<(f64, Point)> = vec![(0.0, end0.clone()), (1.0, end1.clone())];
    let mut out = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        if !(0.0..=1.0).contains(&theta) {
            return Err(MtwError::Invalid(format!(
                "theta {theta} outside [0, 1]"
            )));
        }
        let seed = known
            .iter()
            .min_by(|a, b| {
                (a.0 - theta)
                    .abs()
                    .partial_cmp(&(b.0 - theta).abs())
                    .unwrap()
            })
            .map(|(_, pt)| pt.clone())
            .unwrap();
        let p = interpolate(p0, p1, theta);
        let solved = solve(&p, &seed).map_err(|e| {
            MtwError::Invalid(format!("segment solve failed at theta {theta}: {e}"))
        })?;
        known.push((theta, solved.point.clone()));
        out.push((theta, solved.point, solved.residual));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{builtin_cost, default_domains};
    use crate::geometry::point;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn params() -> NewtonParams {
        NewtonParams::default()
    }

    #[test]
    fn quadratic_map_is_translation() {
        let c = builtin_cost("quadratic", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x = point(&[0.2, 0.3]);
        let p = point(&[0.1, -0.1]);
        let r = c_exp(c.as_ref(), &x, &p, &omega_star.center(), &omega_star, &params()).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.point, point(&[0.3, 0.2]), epsilon = 1e-15);
        assert!(r.iterations <= 1, "one Newton step must suffice");
    }

    #[test]
    fn fixed_point_returns_seed_exactly() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x = point(&[0.4, -0.7]);
        let y = point(&[-0.3, 0.5]);
        let p = -cost_grad_x(c.as_ref(), x.as_slice(), y.as_slice());
        let r = c_exp(c.as_ref(), &x, &p, &y, &omega_star, &params()).unwrap();
        assert_eq!(r.point, y);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual, 0.0);
    }

    /// neg_log has the closed form cexp_x(p) = x - p / |p|^2.
    #[test]
    fn neg_log_closed_form() {
        let c = builtin_cost("neg_log", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x = point(&[1.0, 0.0]);
        let p = point(&[0.9, 0.1]);
        let expected = &x - &p / p.norm_squared();
        assert!(
            omega_star.contains(expected.as_slice()),
            "test setup: solution must lie in the target box"
        );
        let seed = point(&[0.0, 0.0]);
        let r = c_exp(c.as_ref(), &x, &p, &seed, &omega_star, &params()).unwrap();
        assert!(r.residual < 1e-12);
        // Independent check: the solved point satisfies the defining
        // momentum equation.
        let back = -cost_grad_x(c.as_ref(), x.as_slice(), r.point.as_slice());
        assert!((back - &p).norm() < 1e-12);
        assert_abs_diff_eq!(r.point, expected, epsilon = 1e-10);
    }

    #[test]
    fn round_trip_through_momentum() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for (name, params_v) in [
            ("quadratic", vec![]),
            ("sqrt_plus", vec![]),
            ("neg_log", vec![]),
            ("perturbed_quadratic", vec![0.2]),
        ] {
            let c = builtin_cost(name, 2, &params_v).unwrap();
            let (omega, omega_star) = default_domains(name, 2).unwrap();
            for _ in 0..250 {
                let (x, y) =
                    crate::cost::sample_pair(&mut rng, c.as_ref(), &omega, &omega_star).unwrap();
                let p = -cost_grad_x(c.as_ref(), x.as_slice(), y.as_slice());
                let r =
                    c_exp(c.as_ref(), &x, &p, &omega_star.center(), &omega_star, &params()).unwrap();
                assert!(
                    (r.point - &y).norm() < 1e-9,
                    "{name}: round trip drifted"
                );
            }
        }
    }

    #[test]
    fn dual_map_round_trip() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x = point(&[0.4, 0.1]);
        let y = point(&[-0.2, -0.6]);
        let q = -cost_grad_y(c.as_ref(), x.as_slice(), y.as_slice());
        let r = c_star_exp(c.as_ref(), &y, &q, &omega.center(), &omega, &params()).unwrap();
        assert_abs_diff_eq!(r.point, x, epsilon = 1e-10);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn quadratic_dual_map_is_translation() {
        let c = builtin_cost("quadratic", 2, &[]).unwrap();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let y = point(&[0.0, 0.0]);
        let q = point(&[0.4, 0.0]);
        let r = c_star_exp(c.as_ref(), &y, &q, &omega.center(), &omega, &params()).unwrap();
        assert_abs_diff_eq!(r.point, point(&[0.4, 0.0]), epsilon = 1e-15);
    }

    /// Finite-difference derivative of the map in p agrees with the negated
    /// inverse mixed hessian at the solution.
    #[test]
    fn map_derivative_matches_inverse_mixed_hessian() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for (name, params_v) in [
            ("sqrt_plus", vec![]),
            ("neg_log", vec![]),
            ("perturbed_quadratic", vec![0.2]),
        ] {
            let c = builtin_cost(name, 2, &params_v).unwrap();
            let (omega, omega_star) = default_domains(name, 2).unwrap();
            for _ in 0..60 {
                let (x, y) =
                    crate::cost::sample_pair(&mut rng, c.as_ref(), &omega, &omega_star).unwrap();
                let p = -cost_grad_x(c.as_ref(), x.as_slice(), y.as_slice());
                let h = 1e-6 * (1.0 + p.norm());
                let mut jac = DMatrix::zeros(2, 2);
                let mut ok = true;
                for k in 0..2 {
                    let mut pp = p.clone();
                    pp[k] += h;
                    let mut pm = p.clone();
                    pm[k] -= h;
                    let yp = c_exp(c.as_ref(), &x, &pp, &y, &omega_star, &params());
                    let ym = c_exp(c.as_ref(), &x, &pm, &y, &omega_star, &params());
                    match (yp, ym) {
                        (Ok(a), Ok(b)) => {
                            jac.set_column(k, &((a.point - b.point) / (2.0 * h)));
                        }
                        _ => ok = false,
                    }
                }
                if !ok {
                    continue;
                }
                let bundle = crate::cost::derivative_bundle(c.as_ref(), &x, &y).unwrap();
                let expected = -&bundle.cxy_inv;
                let scale = 1.0 + expected.norm();
                assert!(
                    (&jac - &expected).norm() < 1e-5 * scale,
                    "{name}: map derivative mismatch\n{jac}{expected}"
                );
            }
        }
    }

    #[test]
    fn quadratic_segments_are_straight() {
        let c = builtin_cost("quadratic", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x0 = point(&[0.1, -0.2]);
        let y0 = point(&[-0.5, 0.3]);
        let y1 = point(&[0.7, 0.6]);
        let thetas = [0.0, 0.25, 0.5, 0.75, 1.0];
        let seg = c_segment(c.as_ref(), &x0, &y0, &y1, &thetas, &omega_star, &params()).unwrap();
        for (theta, y, _) in &seg.samples {
            let straight = &y0 * (1.0 - *theta) + &y1 * *theta;
            assert_abs_diff_eq!(y.clone(), straight, epsilon = 1e-12);
        }
        assert_eq!(seg.point_at(0.0).unwrap(), &y0);
        assert_eq!(seg.point_at(1.0).unwrap(), &y1);
    }

    #[test]
    fn segment_momenta_interpolate() {
        let c = builtin_cost("neg_log", 2, &[]).unwrap();
        let (_, omega_star) = default_domains("neg_log", 2).unwrap();
        let x0 = point(&[-1.0, -1.0]);
        let y0 = point(&[0.7, 0.9]);
        let y1 = point(&[1.2, 1.3]);
        let seg = c_segment(c.as_ref(), &x0, &y0, &y1, &[0.5], &omega_star, &params()).unwrap();
        let (_, y_half, residual) = &seg.samples[0];
        assert!(*residual < 1e-12);
        let p_half = -cost_grad_x(c.as_ref(), x0.as_slice(), y_half.as_slice());
        let expected = (&seg.p0 + &seg.p1) * 0.5;
        assert!((p_half - expected).norm() < 1e-11);
    }

    #[test]
    fn segment_solution_is_order_independent() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x0 = point(&[0.3, 0.4]);
        let y0 = point(&[-0.8, -0.1]);
        let y1 = point(&[0.6, -0.7]);
        let forward = [0.1, 0.3, 0.5, 0.7, 0.9];
        let backward = [0.9, 0.7, 0.5, 0.3, 0.1];
        let a = c_segment(c.as_ref(), &x0, &y0, &y1, &forward, &omega_star, &params()).unwrap();
        let b = c_segment(c.as_ref(), &x0, &y0, &y1, &backward, &omega_star, &params()).unwrap();
        for (theta, y, _) in &a.samples {
            let yb = b.point_at(*theta).unwrap();
            assert!((y - yb).norm() < 1e-9);
        }
    }

    #[test]
    fn dual_segment_endpoints() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let y0 = point(&[0.2, -0.3]);
        let x0 = point(&[-0.6, 0.1]);
        let x1 = point(&[0.5, 0.8]);
        let seg =
            dual_c_segment(c.as_ref(), &y0, &x0, &x1, &[0.0, 0.5, 1.0], &omega, &params()).unwrap();
        assert_eq!(seg.point_at(0.0).unwrap(), &x0);
        assert_eq!(seg.point_at(1.0).unwrap(), &x1);
        let (_, x_half, r) = &seg.samples[1];
        assert!(*r < 1e-12);
        // Quadratic would give the midpoint; sqrt_plus stays close but the
        // defining property is the interpolated dual momentum.
        let q_half = -cost_grad_y(c.as_ref(), x_half.as_slice(), y0.as_slice());
        assert!((q_half - (&seg.p0 + &seg.p1) * 0.5).norm() < 1e-11);
    }

    #[test]
    fn escape_is_reported() {
        let c = builtin_cost("quadratic", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let x = point(&[0.0, 0.0]);
        // Solution would be far outside the target box.
        let p = point(&[25.0, 0.0]);
        let r = c_exp(c.as_ref(), &x, &p, &omega_star.center(), &omega_star, &params());
        assert!(matches!(
            r,
            Err(MtwError::IterateEscaped { .. }) | Err(MtwError::NewtonStalled { .. })
        ));
    }
}
