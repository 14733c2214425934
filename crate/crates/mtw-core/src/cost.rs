//! Cost functions c(x, y) and their derivative bundles.
//!
//! A cost exposes its value on raw slices (the only allocation-free hot
//! path, used by the grid transforms) and optional analytic derivatives.
//! Whatever a family does not provide analytically is filled in by central
//! finite differences with one Richardson refinement.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{MtwError, Result};
use crate::geometry::{pair_min_separation, DomainBox, Point};

pub trait Cost: Send + Sync {
    /// Full identifier, including parameters, e.g. `power_p[p=-1]`.
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    /// c(x, y). Must not allocate: this is the transform hot path.
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// Analytic first derivative in x, when the family provides one.
    fn grad_x(&self, _x: &[f64], _y: &[f64]) -> Option<Point> {
        None
    }

    fn grad_y(&self, _x: &[f64], _y: &[f64]) -> Option<Point> {
        None
    }

    fn hess_xx(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Mixed second derivative, entry (i, j) = d2c / dx_i dy_j.
    fn hess_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn hess_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Base finite-difference step; scaled by (1 + |x| + |y|) at the
    /// evaluation site.
    fn fd_step(&self) -> f64 {
        1e-5
    }

    /// True when c blows up on x = y; samplers must then keep |x - y|
    /// above a positive exclusion radius.
    fn singular_at_diagonal(&self) -> bool {
        false
    }
}

/// All first and second derivatives of c at one point pair, with the mixed
/// hessian inverted.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub c: f64,
    pub cx: Point,
    pub cy: Point,
    pub cxx: DMatrix<f64>,
    pub cxy: DMatrix<f64>,
    pub cxy_inv: DMatrix<f64>,
    pub cxy_det: f64,
}

fn fd_scale(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    1.0 + nx + ny
}

/// Step for second differences taken directly on values. Differencing the
/// value twice divides roundoff by h^2, so the first-derivative step would
/// sit at a ~1e-6 noise floor; 100x the base step puts the Richardson-refined
/// O(h^4) truncation and the roundoff both near 1e-8.
fn second_step(c: &dyn Cost, x: &[f64], y: &[f64]) -> f64 {
    100.0 * c.fd_step() * fd_scale(x, y)
}

/// One Richardson level on a central difference with O(h^2) error.
fn richardson<F: FnMut(f64) -> f64>(mut d: F, h: f64) -> f64 {
    let coarse = d(h);
    let fine = d(0.5 * h);
    (4.0 * fine - coarse) / 3.0
}

fn central_partial<F: Fn(&[f64]) -> f64>(f: F, z: &[f64], i: usize, h0: f64) -> f64 {
    let mut buf = z.to_vec();
    richardson(
        |h| {
            buf[i] = z[i] + h;
            let fp = f(&buf);
            buf[i] = z[i] - h;
            let fm = f(&buf);
            buf[i] = z[i];
            (fp - fm) / (2.0 * h)
        },
        h0,
    )
}

fn central_second<F: Fn(&[f64]) -> f64>(f: &F, z: &[f64], i: usize, j: usize, h0: f64) -> f64 {
    let mut buf = z.to_vec();
    if i == j {
        let f0 = f(z);
        richardson(
            |h| {
                buf[i] = z[i] + h;
                let fp = f(&buf);
                buf[i] = z[i] - h;
                let fm = f(&buf);
                buf[i] = z[i];
                (fp - 2.0 * f0 + fm) / (h * h)
            },
            h0,
        )
    } else {
        richardson(
            |h| {
                let mut acc = 0.0;
                for (si, sj, w) in [
                    (1.0, 1.0, 1.0),
                    (1.0, -1.0, -1.0),
                    (-1.0, 1.0, -1.0),
                    (-1.0, -1.0, 1.0),
                ] {
                    buf[i] = z[i] + si * h;
                    buf[j] = z[j] + sj * h;
                    acc += w * f(&buf);
                }
                buf[i] = z[i];
                buf[j] = z[j];
                acc / (4.0 * h * h)
            },
            h0,
        )
    }
}

/// c_x, analytic when available, otherwise finite differences.
pub fn cost_grad_x(c: &dyn Cost, x: &[f64], y: &[f64]) -> Point {
    if let Some(g) = c.grad_x(x, y) {
        return g;
    }
    let h = c.fd_step() * fd_scale(x, y);
    Point::from_fn(c.dim(), |i, _| central_partial(|xs| c.eval(xs, y), x, i, h))
}

pub fn cost_grad_y(c: &dyn Cost, x: &[f64], y: &[f64]) -> Point {
    if let Some(g) = c.grad_y(x, y) {
        return g;
    }
    let h = c.fd_step() * fd_scale(x, y);
    Point::from_fn(c.dim(), |j, _| central_partial(|ys| c.eval(x, ys), y, j, h))
}

pub fn cost_hess_xx(c: &dyn Cost, x: &[f64], y: &[f64]) -> DMatrix<f64> {
    if let Some(m) = c.hess_xx(x, y) {
        return m;
    }
    let n = c.dim();
    let h = c.fd_step() * fd_scale(x, y);
    if c.grad_x(x, y).is_some() {
        // Differencing the analytic gradient keeps one FD level.
        let mut buf = x.to_vec();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = richardson_vec(
                |h| {
                    buf[j] = x[j] + h;
                    let gp = c.grad_x(&buf, y).unwrap();
                    buf[j] = x[j] - h;
                    let gm = c.grad_x(&buf, y).unwrap();
                    buf[j] = x[j];
                    (gp - gm) / (2.0 * h)
                },
                h,
            );
            m.set_column(j, &col);
        }
        return symmetrize(&m);
    }
    let h2 = second_step(c, x, y);
    let f = |xs: &[f64]| c.eval(xs, y);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = central_second(&f, x, i, j, h2);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub fn cost_hess_yy(c: &dyn Cost, x: &[f64], y: &[f64]) -> DMatrix<f64> {
    if let Some(m) = c.hess_yy(x, y) {
        return m;
    }
    let n = c.dim();
    let h = c.fd_step() * fd_scale(x, y);
    if c.grad_y(x, y).is_some() {
        let mut buf = y.to_vec();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = richardson_vec(
                |h| {
                    buf[j] = y[j] + h;
                    let gp = c.grad_y(x, &buf).unwrap();
                    buf[j] = y[j] - h;
                    let gm = c.grad_y(x, &buf).unwrap();
                    buf[j] = y[j];
                    (gp - gm) / (2.0 * h)
                },
                h,
            );
            m.set_column(j, &col);
        }
        return symmetrize(&m);
    }
    let h2 = second_step(c, x, y);
    let f = |ys: &[f64]| c.eval(x, ys);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = central_second(&f, y, i, j, h2);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Mixed hessian [d2c / dx_i dy_j].
pub fn cost_hess_xy(c: &dyn Cost, x: &[f64], y: &[f64]) -> DMatrix<f64> {
    if let Some(m) = c.hess_xy(x, y) {
        return m;
    }
    let n = c.dim();
    let h = c.fd_step() * fd_scale(x, y);
    if c.grad_x(x, y).is_some() {
        let mut buf = y.to_vec();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = richardson_vec(
                |h| {
                    buf[j] = y[j] + h;
                    let gp = c.grad_x(x, &buf).unwrap();
                    buf[j] = y[j] - h;
                    let gm = c.grad_x(x, &buf).unwrap();
                    buf[j] = y[j];
                    (gp - gm) / (2.0 * h)
                },
                h,
            );
            m.set_column(j, &col);
        }
        return m;
    }
    let mut z = Vec::with_capacity(2 * n);
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    let h2 = second_step(c, x, y);
    let f = |zs: &[f64]| c.eval(&zs[..n], &zs[n..]);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = central_second(&f, &z, i, n + j, h2);
        }
    }
    m
}

fn richardson_vec<F: FnMut(f64) -> Point>(mut d: F, h: f64) -> Point {
    let coarse = d(h);
    let fine = d(0.5 * h);
    (fine * 4.0 - coarse) / 3.0
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Scale-aware near-singularity threshold for det c_xy.
pub fn singularity_threshold(cxy: &DMatrix<f64>) -> f64 {
    let max_norm = cxy.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    1e-12 * max_norm.powi(cxy.nrows() as i32)
}

pub fn derivative_bundle(c: &dyn Cost, x: &Point, y: &Point) -> Result<DerivativeBundle> {
    let (xs, ys) = (x.as_slice(), y.as_slice());
    let cxy = cost_hess_xy(c, xs, ys);
    let det = cxy.determinant();
    let threshold = singularity_threshold(&cxy);
    if det.abs() <= threshold {
        return Err(MtwError::SingularMixedHessian {
            x: xs.to_vec(),
            y: ys.to_vec(),
            det,
            threshold,
        });
    }
    let cxy_inv = cxy
        .clone()
        .try_inverse()
        .ok_or_else(|| MtwError::SingularMixedHessian {
            x: xs.to_vec(),
            y: ys.to_vec(),
            det,
            threshold,
        })?;
    Ok(DerivativeBundle {
        c: c.eval(xs, ys),
        cx: cost_grad_x(c, xs, ys),
        cy: cost_grad_y(c, xs, ys),
        cxx: cost_hess_xx(c, xs, ys),
        cxy,
        cxy_inv,
        cxy_det: det,
    })
}

/// The cost with its arguments swapped: transpose(c)(x, y) = c(y, x).
/// Checking a condition on the transpose with the domains exchanged is the
/// duality side of every paired verdict.
pub struct TransposedCost {
    inner: Arc<dyn Cost>,
}

impl TransposedCost {
    pub fn new(inner: Arc<dyn Cost>) -> Self {
        TransposedCost { inner }
    }
}

impl Cost for TransposedCost {
    fn name(&self) -> String {
        format!("transpose({})", self.inner.name())
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.eval(y, x)
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Option<Point> {
        self.inner.grad_y(y, x)
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Option<Point> {
        self.inner.grad_x(y, x)
    }

    fn hess_xx(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.hess_yy(y, x)
    }

    fn hess_xy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.hess_xy(y, x).map(|m| m.transpose())
    }

    fn hess_yy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.hess_xx(y, x)
    }

    fn fd_step(&self) -> f64 {
        self.inner.fd_step()
    }

    fn singular_at_diagonal(&self) -> bool {
        self.inner.singular_at_diagonal()
    }
}

/// Draw (x, y) admissible for `c`: inside the boxes and outside any declared
/// diagonal exclusion.
pub fn sample_pair<R: Rng>(
    rng: &mut R,
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
) -> Result<(Point, Point)> {
    let min_sep = pair_min_separation(omega, omega_star);
    if c.singular_at_diagonal() && min_sep == 0.0 && omega.distance_to_box(omega_star) == 0.0 {
        return Err(MtwError::DiagonalNotExcluded);
    }
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let x = omega.sample(rng);
        let y = omega_star.sample(rng);
        if (&x - &y).norm() >= min_sep {
            return Ok((x, y));
        }
    }
    Err(MtwError::SamplingExhausted { attempts: ATTEMPTS })
}

/// Draw y admissible against the whole source box (used when one y must be
/// paired with every grid node of omega).
pub fn sample_target_point<R: Rng>(
    rng: &mut R,
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
) -> Result<Point> {
    let min_sep = pair_min_separation(omega, omega_star);
    if c.singular_at_diagonal() && min_sep == 0.0 && omega.distance_to_box(omega_star) == 0.0 {
        return Err(MtwError::DiagonalNotExcluded);
    }
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let y = omega_star.sample(rng);
        let clamped = omega.clamp(&y);
        if (&y - &clamped).norm() >= min_sep {
            return Ok(y);
        }
    }
    Err(MtwError::SamplingExhausted { attempts: ATTEMPTS })
}

/// Sampled verification of injectivity of y -> -c_x(x, y) (first condition)
/// and invertibility of the mixed hessian (second condition), plus the dual
/// counterparts.
#[derive(Debug, Clone)]
pub struct A1A2Report {
    pub samples: usize,
    /// Smallest |det c_xy| seen, with its location.
    pub min_abs_det: f64,
    pub min_det_at: (Point, Point),
    pub det_threshold: f64,
    pub singular_count: usize,
    /// Smallest |c_x(x,y) - c_x(x,y')| / |y - y'| over sampled pairs and
    /// axis probes; a collapse to ~0 is an injectivity violation.
    pub min_injectivity_ratio: f64,
    pub injectivity_threshold: f64,
    /// Dual: |c_y(x,y) - c_y(x',y)| / |x - x'|.
    pub min_dual_injectivity_ratio: f64,
}

impl A1A2Report {
    pub fn a1_pass(&self) -> bool {
        self.min_injectivity_ratio > self.injectivity_threshold
            && self.min_dual_injectivity_ratio > self.injectivity_threshold
    }

    pub fn a2_pass(&self) -> bool {
        self.singular_count == 0
    }

    pub fn pass(&self) -> bool {
        self.a1_pass() && self.a2_pass()
    }
}

pub fn verify_a1a2(
    c: &dyn Cost,
    omega: &DomainBox,
    omega_star: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<A1A2Report> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = c.dim();
    let mut min_abs_det = f64::INFINITY;
    let mut min_det_at = (omega.center(), omega_star.center());
    let mut det_threshold = 0.0;
    let mut singular = 0;
    let mut hess_scale = 0.0_f64;

    let mut pairs = Vec::with_capacity(samples);
    for _ in 0..samples.max(1) {
        let (x, y) = sample_pair(&mut rng, c, omega, omega_star)?;
        let cxy = cost_hess_xy(c, x.as_slice(), y.as_slice());
        let det = cxy.determinant().abs();
        let thr = singularity_threshold(&cxy);
        hess_scale = hess_scale.max(cxy.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        if det <= thr {
            singular += 1;
        }
        if det < min_abs_det {
            min_abs_det = det;
            min_det_at = (x.clone(), y.clone());
            det_threshold = thr;
        }
        pairs.push((x, y));
    }

    // Injectivity ratios: random pairs plus per-axis probes, which catch
    // costs that ignore a coordinate entirely.
    let min_sep = pair_min_separation(omega, omega_star);
    let ratio_threshold = 1e-9 * (1.0 + hess_scale);
    let mut min_ratio = f64::INFINITY;
    let mut min_dual_ratio = f64::INFINITY;
    for (x, y) in &pairs {
        let gx = cost_grad_x(c, x.as_slice(), y.as_slice());
        let gy = cost_grad_y(c, x.as_slice(), y.as_slice());
        let (x2, y2) = sample_pair(&mut rng, c, omega, omega_star)?;
        if (&y2 - y).norm() > 1e-12 {
            let g2 = cost_grad_x(c, x.as_slice(), y2.as_slice());
            min_ratio = min_ratio.min((&g2 - &gx).norm() / (&y2 - y).norm());
        }
        if (&x2 - x).norm() > 1e-12 {
            let g2 = cost_grad_y(c, x2.as_slice(), y.as_slice());
            min_dual_ratio = min_dual_ratio.min((&g2 - &gy).norm() / (&x2 - x).norm());
        }
        for k in 0..n {
            let delta = 1e-3 * omega_star.side(k);
            let mut yk = y.clone();
            yk[k] += if y[k] + delta <= omega_star.upper[k] {
                delta
            } else {
                -delta
            };
            if (x - &yk).norm() >= min_sep {
                let g2 = cost_grad_x(c, x.as_slice(), yk.as_slice());
                min_ratio = min_ratio.min((&g2 - &gx).norm() / delta);
            }
            let delta = 1e-3 * omega.side(k);
            let mut xk = x.clone();
            xk[k] += if x[k] + delta <= omega.upper[k] {
                delta
            } else {
                -delta
            };
            if (&xk - y).norm() >= min_sep {
                let g2 = cost_grad_y(c, xk.as_slice(), y.as_slice());
                min_dual_ratio = min_dual_ratio.min((&g2 - &gy).norm() / delta);
            }
        }
    }

    Ok(A1A2Report {
        samples: samples.max(1),
        min_abs_det,
        min_det_at,
        det_threshold,
        singular_count: singular,
        min_injectivity_ratio: min_ratio,
        injectivity_threshold: ratio_threshold,
        min_dual_injectivity_ratio: min_dual_ratio,
    })
}
