//! Built-in cost families, addressable by name and parameter list.
//!
//! Radial families are c(x, y) = F(s) with s = |x - y|^2, so all derivative
//! formulas reduce to F' and F'':
//!   c_x  =  2 F'(s) u              (u = x - y)
//!   c_xx =  2 F'(s) I + 4 F''(s) u u^T
//!   c_xy = -c_xx,  c_yy = c_xx
//! The quartic perturbation of the quadratic is separable per coordinate
//! instead; its fourth-order behaviour near u = 0 is what makes it the
//! stock counterexample cost of the test suite.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cost::Cost;
use crate::error::{MtwError, Result};
use crate::geometry::{DomainBox, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
enum RadialProfile {
    /// F(s) = s / 2, the squared-distance cost.
    Quadratic,
    /// F(s) = -log(s) / 2, i.e. c = -log|x - y|.
    NegLog,
    /// F(s) = sqrt(1 + s).
    SqrtPlus,
    /// F(s) = s^(p/2) / p, i.e. c = |x - y|^p / p.
    Power(f64),
}

impl RadialProfile {
    fn value(&self, s: f64) -> f64 {
        match self {
            RadialProfile::Quadratic => 0.5 * s,
            RadialProfile::NegLog => -0.5 * s.ln(),
            RadialProfile::SqrtPlus => (1.0 + s).sqrt(),
            RadialProfile::Power(p) => s.powf(0.5 * p) / p,
        }
    }

    fn d1(&self, s: f64) -> f64 {
        match self {
            RadialProfile::Quadratic => 0.5,
            RadialProfile::NegLog => -0.5 / s,
            RadialProfile::SqrtPlus => 0.5 / (1.0 + s).sqrt(),
            RadialProfile::Power(p) => 0.5 * s.powf(0.5 * p - 1.0),
        }
    }

    fn d2(&self, s: f64) -> f64 {
        match self {
            RadialProfile::Quadratic => 0.0,
            RadialProfile::NegLog => 0.5 / (s * s),
            RadialProfile::SqrtPlus => -0.25 / (1.0 + s).powf(1.5),
            RadialProfile::Power(p) => 0.5 * (0.5 * p - 1.0) * s.powf(0.5 * p - 2.0),
        }
    }

    fn singular_at_diagonal(&self) -> bool {
        match self {
            RadialProfile::Quadratic | RadialProfile::SqrtPlus => false,
            RadialProfile::NegLog => true,
            // Even powers >= 2 are polynomials in s; everything else has
            // unbounded second derivatives as s -> 0.
            RadialProfile::Power(p) => !(*p >= 2.0 && p.fract() == 0.0 && (*p as i64) % 2 == 0),
        }
    }
}

struct RadialCost {
    name: String,
    dim: usize,
    profile: RadialProfile,
}

impl RadialCost {
    #[inline]
    fn s(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let d = x[i] - y[i];
            s += d * d;
        }
        s
    }

    fn u(&self, x: &[f64], y: &[f64]) -> Point {
        Point::from_fn(self.dim, |i, _| x[i] - y[i])
    }

    fn hess(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let s = self.s(x, y);
        let u = self.u(x, y);
        let mut m = DMatrix::identity(self.dim, self.dim) * (2.0 * self.profile.d1(s));
        let quad = 4.0 * self.profile.d2(s);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] += quad * u[i] * u[j];
            }
        }
        m
    }
}

impl Cost for RadialCost {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.profile.value(self.s(x, y))
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Option<Point> {
        let s = self.s(x, y);
        Some(self.u(x, y) * (2.0 * self.profile.d1(s)))
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Option<Point> {
        let s = self.s(x, y);
        Some(self.u(x, y) * (-2.0 * self.profile.d1(s)))
    }

    fn hess_xx(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.hess(x, y))
    }

    fn hess_xy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        Some(-self.hess(x, y))
    }

    fn hess_yy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.hess(x, y))
    }

    fn singular_at_diagonal(&self) -> bool {
        self.profile.singular_at_diagonal()
    }
}

/// c = sum_i f(x_i - y_i) with f(t) = t^2/2 + eps t^4; separable, so all
/// second derivatives are diagonal with entries f''(t) = 1 + 12 eps t^2.
struct PerturbedQuadratic {
    dim: usize,
    eps: f64,
}

impl Cost for PerturbedQuadratic {
    fn name(&self) -> String {
        format!("perturbed_quadratic[eps={}]", self.eps)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut c = 0.0;
        for i in 0..self.dim {
            let t = x[i] - y[i];
            let t2 = t * t;
            c += 0.5 * t2 + self.eps * t2 * t2;
        }
        c
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Option<Point> {
        Some(Point::from_fn(self.dim, |i, _| {
            let t = x[i] - y[i];
            t + 4.0 * self.eps * t * t * t
        }))
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Option<Point> {
        self.grad_x(x, y).map(|g| -g)
    }

    fn hess_xx(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if i == j {
                let t = x[i] - y[i];
                1.0 + 12.0 * self.eps * t * t
            } else {
                0.0
            }
        }))
    }

    fn hess_xy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.hess_xx(x, y).map(|m| -m)
    }

    fn hess_yy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.hess_xx(x, y)
    }
}

pub const BUILTIN_NAMES: [&str; 5] = [
    "quadratic",
    "neg_log",
    "sqrt_plus",
    "power_p",
    "perturbed_quadratic",
];

/// Parameter signature of each family, for CLI help and config validation.
pub fn family_parameters(name: &str) -> Result<&'static [&'static str]> {
    match name {
        "quadratic" | "neg_log" | "sqrt_plus" => Ok(&[]),
        "power_p" => Ok(&["p"]),
        "perturbed_quadratic" => Ok(&["eps"]),
        other => Err(MtwError::UnknownCost(other.to_string())),
    }
}

pub fn builtin_cost(name: &str, dim: usize, params: &[f64]) -> Result<Arc<dyn Cost>> {
    if dim == 0 {
        return Err(MtwError::BadCostParams {
            name: name.to_string(),
            reason: "dimension must be positive".into(),
        });
    }
    let expected = family_parameters(name)?.len();
    if params.len() != expected {
        return Err(MtwError::BadCostParams {
            name: name.to_string(),
            reason: format!("expected {expected} parameter(s), got {}", params.len()),
        });
    }
    match name {
        "quadratic" => Ok(Arc::new(RadialCost {
            name: "quadratic".into(),
            dim,
            profile: RadialProfile::Quadratic,
        })),
        "neg_log" => Ok(Arc::new(RadialCost {
            name: "neg_log".into(),
            dim,
            profile: RadialProfile::NegLog,
        })),
        "sqrt_plus" => Ok(Arc::new(RadialCost {
            name: "sqrt_plus".into(),
            dim,
            profile: RadialProfile::SqrtPlus,
        })),
        "power_p" => {
            let p = params[0];
            if !p.is_finite() || p == 0.0 {
                return Err(MtwError::BadCostParams {
                    name: name.into(),
                    reason: "p must be finite and nonzero".into(),
                });
            }
            if p == 1.0 {
                return Err(MtwError::BadCostParams {
                    name: name.into(),
                    reason: "p = 1 makes the mixed hessian singular everywhere".into(),
                });
            }
            Ok(Arc::new(RadialCost {
                name: format!("power_p[p={p}]"),
                dim,
                profile: RadialProfile::Power(p),
            }))
        }
        "perturbed_quadratic" => {
            let eps = params[0];
            if !eps.is_finite() {
                return Err(MtwError::BadCostParams {
                    name: name.into(),
                    reason: "eps must be finite".into(),
                });
            }
            Ok(Arc::new(PerturbedQuadratic { dim, eps }))
        }
        other => Err(MtwError::UnknownCost(other.to_string())),
    }
}

/// Domains on which each family is smooth and invertibility of the mixed
/// hessian holds, used by the CLI and the test suite. Families singular on
/// the diagonal get separated boxes; the rest share one box.
pub fn default_domains(name: &str, dim: usize) -> Result<(DomainBox, DomainBox)> {
    match name {
        "quadratic" | "sqrt_plus" | "perturbed_quadratic" => Ok((
            DomainBox::cube(dim, -1.0, 1.0)?,
            DomainBox::cube(dim, -1.0, 1.0)?,
        )),
        "neg_log" | "power_p" => Ok((
            DomainBox::cube(dim, -1.5, -0.5)?,
            DomainBox::cube(dim, 0.5, 1.5)?,
        )),
        other => Err(MtwError::UnknownCost(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{
        cost_grad_x, cost_grad_y, cost_hess_xx, cost_hess_xy, derivative_bundle, verify_a1a2,
        TransposedCost,
    };
    use crate::geometry::point;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn quadratic_value_and_derivatives() {
        let c = builtin_cost("quadratic", 2, &[]).unwrap();
        assert_eq!(c.eval(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        let b = derivative_bundle(c.as_ref(), &point(&[0.5, 0.0]), &point(&[0.0, 0.0])).unwrap();
        assert_eq!(b.cx, point(&[0.5, 0.0]));
        assert_eq!(b.cxx, DMatrix::identity(2, 2));
        assert_eq!(b.cxy, -DMatrix::identity(2, 2));
        assert_eq!(b.cxy_inv, -DMatrix::identity(2, 2));
        assert_eq!(b.cxy_det, 1.0);
    }

    #[test]
    fn neg_log_matches_closed_forms() {
        let c = builtin_cost("neg_log", 2, &[]).unwrap();
        assert_eq!(c.eval(&[1.0, 0.0], &[0.0, 0.0]), 0.0);
        // c_x = -(x - y)/|x - y|^2
        let g = cost_grad_x(c.as_ref(), &[1.0, 0.0], &[0.0, 0.0]);
        assert_relative_eq!(g, point(&[-1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn sqrt_plus_at_diagonal() {
        let c = builtin_cost("sqrt_plus", 3, &[]).unwrap();
        assert_eq!(c.eval(&[0.2, -0.1, 0.4], &[0.2, -0.1, 0.4]), 1.0);
        assert!(!c.singular_at_diagonal());
    }

    #[test]
    fn power_family_validates_parameters() {
        assert!(builtin_cost("power_p", 2, &[]).is_err());
        assert!(builtin_cost("power_p", 2, &[0.0]).is_err());
        assert!(builtin_cost("power_p", 2, &[1.0]).is_err());
        let c = builtin_cost("power_p", 2, &[-1.0]).unwrap();
        assert!(c.singular_at_diagonal());
        let c4 = builtin_cost("power_p", 2, &[4.0]).unwrap();
        assert!(!c4.singular_at_diagonal());
        // c = |u|^{-1} / (-1) at |u| = 2
        assert_relative_eq!(c.eval(&[2.0, 0.0], &[0.0, 0.0]), -0.5);
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!(
            builtin_cost("cubic", 2, &[]),
            Err(MtwError::UnknownCost(_))
        ));
    }

    /// Analytic derivatives of every family agree with pure finite
    /// differences of the value at random admissible pairs.
    #[test]
    fn analytic_derivatives_match_finite_differences() {
        struct Stripped(Arc<dyn Cost>);
        impl Cost for Stripped {
            fn name(&self) -> String {
                self.0.name()
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
                self.0.eval(x, y)
            }
            fn singular_at_diagonal(&self) -> bool {
                self.0.singular_at_diagonal()
            }
        }

        let cases: Vec<(&str, Vec<f64>)> = vec![
            ("quadratic", vec![]),
            ("neg_log", vec![]),
            ("sqrt_plus", vec![]),
            ("power_p", vec![-1.0]),
            ("power_p", vec![3.0]),
            ("perturbed_quadratic", vec![0.2]),
            ("perturbed_quadratic", vec![-0.05]),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for (name, params) in cases {
            let c = builtin_cost(name, 2, &params).unwrap();
            let stripped = Stripped(c.clone());
            let (omega, omega_star) = default_domains(name, 2).unwrap();
            for _ in 0..200 {
                let (x, y) =
                    crate::cost::sample_pair(&mut rng, c.as_ref(), &omega, &omega_star).unwrap();
                let (xs, ys) = (x.as_slice(), y.as_slice());
                let scale_g = 1.0 + cost_grad_x(c.as_ref(), xs, ys).norm();
                assert_abs_diff_eq!(
                    cost_grad_x(c.as_ref(), xs, ys),
                    cost_grad_x(&stripped, xs, ys),
                    epsilon = 1e-6 * scale_g
                );
                assert_abs_diff_eq!(
                    cost_grad_y(c.as_ref(), xs, ys),
                    cost_grad_y(&stripped, xs, ys),
                    epsilon = 1e-6 * scale_g
                );
                let hxx = cost_hess_xx(c.as_ref(), xs, ys);
                let scale_h = 1.0 + hxx.norm();
                assert_abs_diff_eq!(
                    hxx,
                    cost_hess_xx(&stripped, xs, ys),
                    epsilon = 1e-6 * scale_h
                );
                assert_abs_diff_eq!(
                    cost_hess_xy(c.as_ref(), xs, ys),
                    cost_hess_xy(&stripped, xs, ys),
                    epsilon = 1e-6 * scale_h
                );
            }
        }
    }

    #[test]
    fn bundle_inverse_is_consistent() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for (name, params) in [("neg_log", vec![]), ("perturbed_quadratic", vec![0.2])] {
            let c = builtin_cost(name, 2, &params).unwrap();
            let (omega, omega_star) = default_domains(name, 2).unwrap();
            for _ in 0..100 {
                let (x, y) =
                    crate::cost::sample_pair(&mut rng, c.as_ref(), &omega, &omega_star).unwrap();
                let b = derivative_bundle(c.as_ref(), &x, &y).unwrap();
                let residual = (&b.cxy_inv * &b.cxy - DMatrix::identity(2, 2))
                    .iter()
                    .fold(0.0_f64, |a, v| a.max(v.abs()));
                assert!(residual < 1e-10, "{name}: inverse residual {residual}");
            }
        }
    }

    #[test]
    fn bundle_is_deterministic() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let x = point(&[0.31, -0.62]);
        let y = point(&[-0.44, 0.17]);
        let a = derivative_bundle(c.as_ref(), &x, &y).unwrap();
        let b = derivative_bundle(c.as_ref(), &x, &y).unwrap();
        assert_eq!(a.c, b.c);
        assert_eq!(a.cx, b.cx);
        assert_eq!(a.cxx, b.cxx);
        assert_eq!(a.cxy_inv, b.cxy_inv);
    }

    #[test]
    fn transpose_swaps_derivative_roles() {
        let c = builtin_cost("perturbed_quadratic", 2, &[0.2]).unwrap();
        let t = TransposedCost::new(c.clone());
        let x = point(&[0.3, -0.5]);
        let y = point(&[-0.2, 0.6]);
        assert_eq!(
            t.eval(x.as_slice(), y.as_slice()),
            c.eval(y.as_slice(), x.as_slice())
        );
        let bt = derivative_bundle(&t, &x, &y).unwrap();
        let bc = derivative_bundle(c.as_ref(), &y, &x).unwrap();
        assert_eq!(bt.cx, bc.cy);
        assert_eq!(bt.cy, bc.cx);
        assert_eq!(bt.cxy, bc.cxy.transpose());
    }

    #[test]
    fn a1a2_clean_on_quadratic() {
        let c = builtin_cost("quadratic", 2, &[]).unwrap();
        let (omega, omega_star) = default_domains("quadratic", 2).unwrap();
        let report = verify_a1a2(c.as_ref(), &omega, &omega_star, 1000, 11).unwrap();
        assert!(report.pass());
        assert_relative_eq!(report.min_abs_det, 1.0);
        assert!(report.min_injectivity_ratio > 0.9);
    }

    #[test]
    fn a1a2_positive_for_neg_log_on_separated_boxes() {
        let c = builtin_cost("neg_log", 2, &[]).unwrap();
        let (omega, omega_star) = default_domains("neg_log", 2).unwrap();
        let report = verify_a1a2(c.as_ref(), &omega, &omega_star, 1000, 11).unwrap();
        assert!(report.pass());
        assert!(report.min_abs_det > 0.0);
    }

    /// A cost that ignores one coordinate: rank-one mixed hessian, caught by
    /// the invertibility check.
    #[test]
    fn a1a2_flags_degenerate_cost() {
        struct RankOne;
        impl Cost for RankOne {
            fn name(&self) -> String {
                "rank_one".into()
            }
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
                x[0] * y[0]
            }
        }
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let report = verify_a1a2(&RankOne, &omega, &omega, 100, 3).unwrap();
        assert!(!report.a2_pass());
        assert!(!report.a1_pass());
        assert!(report.singular_count > 0);
    }

    #[test]
    fn singular_cost_requires_separation() {
        let c = builtin_cost("neg_log", 2, &[]).unwrap();
        let overlap = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(
            crate::cost::sample_pair(&mut rng, c.as_ref(), &overlap, &overlap),
            Err(MtwError::DiagonalNotExcluded)
        ));
        let excluded = overlap.clone().with_exclusion(0.25).unwrap();
        let (x, y) =
            crate::cost::sample_pair(&mut rng, c.as_ref(), &excluded, &overlap).unwrap();
        assert!((x - y).norm() >= 0.25);
    }
}
