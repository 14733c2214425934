//! Sections S_theta, their boundaries, the limiting c-hyperplane, second
//! fundamental forms and their monotonicity in theta, nesting, and convexity
//! testing of mapped point sets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::cexp::{c_segment, interpolate, CSegment, NewtonParams};
use crate::cost::{cost_grad_x, cost_grad_y, cost_hess_xx, derivative_bundle, Cost};
use crate::error::{MtwError, Result};
use crate::geometry::{
    convex_hull_2d, point_segment_distance, polygon_area, sphere_directions, tangent_basis,
    DomainBox, Point,
};
use crate::grid::GridSpec;

/// Refined level-set vertices satisfy |h| below this.
pub const MESH_TOL: f64 = 1e-9;

/// A section S_theta = {x: c(x,y0) - c(x0,y0) <= c(x,y_theta) - c(x0,y_theta)}
/// named by its anchor, the two targets, and the interpolation parameter.
#[derive(Debug, Clone)]
pub struct SectionSpec {
    pub x0: Point,
    pub y0: Point,
    pub y1: Point,
    pub theta: f64,
}

/// A spec with its interpolated target solved, ready for h evaluation.
#[derive(Debug, Clone)]
pub struct Section {
    pub spec: SectionSpec,
    pub p0: Point,
    pub p1: Point,
    pub p_theta: Point,
    pub y_theta: Point,
    /// c(x0,y0) - c(x0,y_theta), the constant making h(x0) = 0.
    anchor_gap: f64,
}

impl Section {
    pub fn resolve(
        c: &dyn Cost,
        spec: SectionSpec,
        omega_star: &DomainBox,
        params: &NewtonParams,
    ) -> Result<Self> {
        if !(spec.theta > 0.0 && spec.theta <= 1.0) {
            return Err(MtwError::Invalid(format!(
                "theta must lie in (0, 1], got {}",
                spec.theta
            )));
        }
        let seg = c_segment(c, &spec.x0, &spec.y0, &spec.y1, &[spec.theta], omega_star, params)?;
        let y_theta = seg.samples[0].1.clone();
        let p_theta = interpolate(&seg.p0, &seg.p1, spec.theta);
        let anchor_gap = c.eval(spec.x0.as_slice(), spec.y0.as_slice())
            - c.eval(spec.x0.as_slice(), y_theta.as_slice());
        Ok(Section {
            p0: seg.p0,
            p1: seg.p1,
            p_theta,
            y_theta,
            anchor_gap,
            spec,
        })
    }

    /// h(x) = c(x,y0) - c(x,y_theta) - c(x0,y0) + c(x0,y_theta).
    /// Grouped so h(x0) is exactly zero: the same computed difference is
    /// subtracted from itself.
    pub fn h(&self, c: &dyn Cost, x: &[f64]) -> f64 {
        let gap = c.eval(x, self.spec.y0.as_slice()) - c.eval(x, self.y_theta.as_slice());
        gap - self.anchor_gap
    }

    pub fn grad_h(&self, c: &dyn Cost, x: &[f64]) -> Point {
        cost_grad_x(c, x, self.spec.y0.as_slice()) - cost_grad_x(c, x, self.y_theta.as_slice())
    }

    pub fn hess_h(&self, c: &dyn Cost, x: &[f64]) -> DMatrix<f64> {
        cost_hess_xx(c, x, self.spec.y0.as_slice())
            - cost_hess_xx(c, x, self.y_theta.as_slice())
    }
}

/// Resolve a spec and evaluate its defining function at one point.
pub fn h_theta(
    c: &dyn Cost,
    spec: &SectionSpec,
    x: &Point,
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<f64> {
    let section = Section::resolve(c, spec.clone(), omega_star, params)?;
    Ok(section.h(c, x.as_slice()))
}

/// Discrete trace of a zero level set.
#[derive(Debug, Clone)]
pub struct LevelSetMesh {
    /// Chained crossing vertices (two dimensions). Closed loops repeat their
    /// first vertex at the end.
    pub polylines: Vec<Vec<Point>>,
    /// Ray-cast crossings with their directions (other dimensions).
    pub ray_points: Vec<(Point, Point)>,
    /// Rays crossing the boundary more than once (star-shape violations).
    pub star_violations: usize,
    pub resolution: usize,
    pub mesh_tol: f64,
    pub empty: bool,
}

impl LevelSetMesh {
    pub fn vertices(&self) -> impl Iterator<Item = &Point> {
        self.polylines
            .iter()
            .flatten()
            .chain(self.ray_points.iter().map(|(_, p)| p))
    }

    pub fn vertex_count(&self) -> usize {
        self.polylines.iter().map(Vec::len).sum::<usize>() + self.ray_points.len()
    }
}

/// Safeguarded secant/bisection root refinement of f on [0,1] with a sign
/// change between the ends, to |f| <= tol. Exact in one step for affine f.
fn refine_crossing(f: impl Fn(f64) -> f64, fa0: f64, fb0: f64, tol: f64) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (0.0_f64, 1.0_f64, fa0, fb0);
    if fa.abs() <= tol {
        return a;
    }
    if fb.abs() <= tol {
        return b;
    }
    for iter in 0..200 {
        let mut t = if (fb - fa).abs() > f64::MIN_POSITIVE {
            a - fa * (b - a) / (fb - fa)
        } else {
            0.5 * (a + b)
        };
        if iter % 2 == 1 || !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let ft = f(t);
        if ft.abs() <= tol || (b - a) < 1e-15 {
            return t;
        }
        if (ft > 0.0) == (fa > 0.0) {
            a = t;
            fa = ft;
        } else {
            b = t;
            fb = ft;
        }
    }
    0.5 * (a + b)
}

/// Zero level set of the section's defining function inside omega.
///
/// Two dimensions: marching squares over a resolution^2 node grid, ambiguous
/// saddle cells split by the sign at the cell center, crossings refined along
/// grid edges to MESH_TOL and chained into polylines. Other dimensions:
/// bisection along rays from x0 over a direction sample; rays with several
/// crossings are counted as star-shape violations and contribute their first
/// crossing.
pub fn section_boundary(
    c: &dyn Cost,
    section: &Section,
    omega: &DomainBox,
    resolution: usize,
) -> LevelSetMesh {
    if omega.dim() == 2 {
        marching_squares(omega, resolution, |x| section.h(c, x))
    } else {
        ray_cast_boundary(omega, resolution, &section.spec.x0, |x| section.h(c, x))
    }
}

fn marching_squares(
    omega: &DomainBox,
    resolution: usize,
    h: impl Fn(&[f64]) -> f64 + Sync,
) -> LevelSetMesh {
    let res = resolution.max(2);
    let grid = GridSpec::new(omega.clone(), vec![res, res]).expect("validated resolution");
    let table = grid.node_table();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| h(&table[i * 2..i * 2 + 2]))
        .collect();
    let node = |i: usize, j: usize| i * res + j;
    let inside = |i: usize, j: usize| values[node(i, j)] <= 0.0;

    // Edge ids: axis-1 edge (i, j)-(i, j+1) is even, axis-0 edge
    // (i, j)-(i+1, j) is odd.
    let h_edge = |i: usize, j: usize| 2 * (i * res + j);
    let v_edge = |i: usize, j: usize| 2 * (i * res + j) + 1;

    let mut vertex_of_edge: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::new();
    let mut vertices: Vec<Point> = Vec::new();
    let mut segments: Vec<(usize, usize)> = Vec::new();

    let vertex_on = |edge: usize,
                         ia: usize,
                         ja: usize,
                         ib: usize,
                         jb: usize,
                         vertices: &mut Vec<Point>,
                         vertex_of_edge: &mut std::collections::HashMap<usize, usize>|
     -> usize {
        if let Some(&v) = vertex_of_edge.get(&edge) {
            return v;
        }
        let pa = grid.node(node(ia, ja));
        let pb = grid.node(node(ib, jb));
        let fa = values[node(ia, ja)];
        let fb = values[node(ib, jb)];
        let t = refine_crossing(
            |t| {
                let x = &pa + (&pb - &pa) * t;
                h(x.as_slice())
            },
            fa,
            fb,
            MESH_TOL,
        );
        let v = &pa + (&pb - &pa) * t;
        vertices.push(v);
        vertex_of_edge.insert(edge, vertices.len() - 1);
        vertices.len() - 1
    };

    for i in 0..res - 1 {
        for j in 0..res - 1 {
            let (b00, b01, b10, b11) = (
                inside(i, j),
                inside(i, j + 1),
                inside(i + 1, j),
                inside(i + 1, j + 1),
            );
            // Crossing edges around this cell, keyed by the corner pair.
            let ea = (b00 != b01).then(|| (h_edge(i, j), (i, j, i, j + 1)));
            let eb = (b01 != b11).then(|| (v_edge(i, j + 1), (i, j + 1, i + 1, j + 1)));
            let ec = (b10 != b11).then(|| (h_edge(i + 1, j), (i + 1, j, i + 1, j + 1)));
            let ed = (b00 != b10).then(|| (v_edge(i, j), (i, j, i + 1, j)));
            let crossings: Vec<_> = [ea, eb, ec, ed].into_iter().flatten().collect();
            let mut vid = |e: (usize, (usize, usize, usize, usize))| {
                vertex_on(e.0, e.1 .0, e.1 .1, e.1 .2, e.1 .3, &mut vertices, &mut vertex_of_edge)
            };
            match crossings.len() {
                0 => {}
                2 => {
                    let v0 = vid(crossings[0].clone());
                    let v1 = vid(crossings[1].clone());
                    segments.push((v0, v1));
                }
                4 => {
                    // Saddle: both diagonals alternate; pair crossings around
                    // whichever diagonal corners are isolated from the center.
                    let center = {
                        let p = (grid.node(node(i, j)) + grid.node(node(i + 1, j + 1))) * 0.5;
                        h(p.as_slice()) <= 0.0
                    };
                    let (va, vb, vc, vd) = (
                        vid(crossings[0].clone()),
                        vid(crossings[1].clone()),
                        vid(crossings[2].clone()),
                        vid(crossings[3].clone()),
                    );
                    // crossings order is (ea, eb, ec, ed); corners: a-d meet
                    // at (i,j), a-b at (i,j+1), b-c at (i+1,j+1), c-d at (i+1,j).
                    if b00 == center {
                        // (i,j)'s region reaches the center: separate the two
                        // opposite-corner components.
                        segments.push((va, vb));
                        segments.push((vc, vd));
                    } else {
                        segments.push((va, vd));
                        segments.push((vb, vc));
                    }
                }
                _ => unreachable!("marching squares cell has even crossings"),
            }
        }
    }

    let polylines = chain_segments(&vertices, &segments);
    LevelSetMesh {
        empty: polylines.is_empty(),
        polylines,
        ray_points: Vec::new(),
        star_violations: 0,
        resolution: res,
        mesh_tol: MESH_TOL,
    }
}

fn chain_segments(vertices: &[Point], segments: &[(usize, usize)]) -> Vec<Vec<Point>> {
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); vertices.len()];
    for (s, &(a, b)) in segments.iter().enumerate() {
        adjacency[a].push(s);
        adjacency[b].push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    let walk = |start_vertex: usize, used: &mut Vec<bool>| -> Vec<Point> {
        let mut line = vec![vertices[start_vertex].clone()];
        let mut at = start_vertex;
        loop {
            let next_seg = adjacency[at].iter().copied().find(|&s| !used[s]);
            let Some(s) = next_seg else { break };
            used[s] = true;
            let (a, b) = segments[s];
            at = if a == at { b } else { a };
            line.push(vertices[at].clone());
        }
        line
    };
    // Open chains first (endpoints have odd unused degree), then leftover loops.
    for v in 0..vertices.len() {
        let unused = adjacency[v].iter().filter(|&&s| !used[s]).count();
        if unused == 1 {
            polylines.push(walk(v, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let start = segments[s].0;
            let line = walk(start, &mut used);
            if line.len() > 1 {
                polylines.push(line);
            }
        }
    }
    polylines
}

fn ray_cast_boundary(
    omega: &DomainBox,
    resolution: usize,
    x0: &Point,
    h: impl Fn(&[f64]) -> f64 + Sync,
) -> LevelSetMesh {
    let dim = omega.dim();
    let dirs = sphere_directions(dim, resolution.max(4));
    let samples = resolution.max(16);
    let per_ray: Vec<(Vec<Point>, usize)> = dirs
        .par_iter()
        .map(|d| {
            let t_exit = omega.ray_exit(x0, d);
            if !(t_exit > 0.0) {
                return (Vec::new(), 0);
            }
            let f = |t: f64| {
                let x = x0 + d * t;
                h(x.as_slice())
            };
            let mut crossings = Vec::new();
            let dt = t_exit / samples as f64;
            let mut prev_t = dt;
            let mut prev_f = f(prev_t);
            for k in 2..=samples {
                let t = dt * k as f64;
                let ft = f(t);
                if (prev_f <= 0.0) != (ft <= 0.0) {
                    let s = refine_crossing(
                        |s| f(prev_t + s * (t - prev_t)),
                        prev_f,
                        ft,
                        MESH_TOL,
                    );
                    crossings.push(x0 + d * (prev_t + s * (t - prev_t)));
                }
                prev_t = t;
                prev_f = ft;
            }
            let extra = crossings.len().saturating_sub(1);
            (crossings, extra)
        })
        .collect();
    let mut ray_points = Vec::new();
    let mut star_violations = 0;
    for (d, (crossings, extra)) in dirs.iter().zip(per_ray) {
        star_violations += extra;
        if let Some(first) = crossings.into_iter().next() {
            ray_points.push((d.clone(), first));
        }
    }
    LevelSetMesh {
        polylines: Vec::new(),
        empty: ray_points.is_empty(),
        ray_points,
        star_violations,
        resolution,
        mesh_tol: MESH_TOL,
    }
}

/// The limiting hyperplane of the sections S_theta as theta shrinks: the
/// image, under the inverse target chart, of a flat hyperplane in
/// q = -c_y(., y0) coordinates.
#[derive(Debug, Clone)]
pub struct CHyperplane {
    pub x0: Point,
    pub y0: Point,
    /// -c_xy(x0,y0)^{-1} (p1 - p0): the target-space velocity of y_theta at
    /// theta = 0, and the vector against which target-gradient differences
    /// are measured.
    pub normal_seed: Point,
    /// c_y(x0, y0), cached so g(x0) = 0 holds exactly.
    pub cy0: Point,
    /// Normal of the image hyperplane in q coordinates.
    pub q_normal: Point,
}

impl CHyperplane {
    /// g(x) = normal_seed . [c_y(x,y0) - c_y(x0,y0)]; H0 = {g = 0}.
    pub fn g(&self, c: &dyn Cost, x: &Point) -> f64 {
        let diff = cost_grad_y(c, x.as_slice(), self.y0.as_slice()) - &self.cy0;
        self.normal_seed.dot(&diff)
    }

    pub fn q0(&self) -> Point {
        -&self.cy0
    }

    /// Follow the flat q-space hyperplane through the inverse chart: rays of
    /// points x with -c_y(x, y0) = q0 + t d, d running over tangent
    /// directions of the q-hyperplane, each solved by parameter continuation
    /// until the iterate leaves omega or the solver fails. Every returned
    /// polyline starts at x0.
    pub fn trace(
        &self,
        c: &dyn Cost,
        omega: &DomainBox,
        target_spacing: f64,
        max_steps: usize,
        params: &NewtonParams,
    ) -> Result<Vec<Vec<Point>>> {
        let dim = self.x0.len();
        let bundle = derivative_bundle(c, &self.x0, &self.y0)?;
        let q_dirs: Vec<Point> = if dim == 2 {
            let t = &tangent_basis(&self.q_normal)[0];
            vec![t.clone(), -t]
        } else {
            let basis = tangent_basis(&self.q_normal);
            sphere_directions(dim - 1, (dim - 1) * 8)
                .into_iter()
                .map(|coeff| {
                    let mut d = Point::zeros(dim);
                    for (b, &w) in basis.iter().zip(coeff.iter()) {
                        d += b * w;
                    }
                    d
                })
                .collect()
        };
        let q0 = self.q0();
        let mut rays = Vec::with_capacity(q_dirs.len());
        for d in q_dirs {
            // dx/dt = -(c_xy^T)^{-1} dq/dt sets the step so points land
            // roughly target_spacing apart.
            let speed = (bundle.cxy_inv.transpose() * &d).norm();
            if speed < 1e-14 {
                continue;
            }
            let dt = target_spacing / speed;
            let mut ray = vec![self.x0.clone()];
            let mut seed = self.x0.clone();
            for k in 1..=max_steps {
                let q = &q0 + &d * (dt * k as f64);
                match crate::cexp::c_star_exp(c, &self.y0, &q, &seed, omega, params) {
                    Ok(r) if r.converged => {
                        seed = r.point.clone();
                        ray.push(r.point);
                    }
                    _ => break,
                }
            }
            rays.push(ray);
        }
        Ok(rays)
    }
}

pub fn c_hyperplane(c: &dyn Cost, x0: &Point, y0: &Point, y1: &Point) -> Result<CHyperplane> {
    let bundle = derivative_bundle(c, x0, y0)?;
    let p0 = -cost_grad_x(c, x0.as_slice(), y0.as_slice());
    let p1 = -cost_grad_x(c, x0.as_slice(), y1.as_slice());
    let dp = &p1 - &p0;
    let q_normal = &bundle.cxy_inv * &dp;
    let normal_seed = -&q_normal;
    if normal_seed.norm() < 1e-14 {
        return Err(MtwError::DegenerateDirection { remainder: normal_seed.norm() });
    }
    Ok(CHyperplane {
        x0: x0.clone(),
        y0: y0.clone(),
        normal_seed,
        cy0: bundle.cy.clone(),
        q_normal,
    })
}

/// Hausdorff distance per theta between the section boundary and the
/// limiting hyperplane, both clipped to the ball around x0.
#[derive(Debug, Clone)]
pub struct ConvergencePoint {
    pub theta: f64,
    pub hausdorff: f64,
    pub section_vertices: usize,
    pub hyperplane_vertices: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub distances: Vec<ConvergencePoint>,
    /// Set when the requested ball was not contained in omega.
    pub ball_clipped: bool,
    pub ball_radius: f64,
}

pub fn hausdorff_convergence(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    thetas: &[f64],
    ball_radius: f64,
    omega: &DomainBox,
    omega_star: &DomainBox,
    resolution: usize,
    params: &NewtonParams,
) -> Result<ConvergenceReport> {
    let boundary_gap = (0..omega.dim())
        .map(|k| (x0[k] - omega.lower[k]).min(omega.upper[k] - x0[k]))
        .fold(f64::INFINITY, f64::min);
    let ball_clipped = ball_radius > boundary_gap;

    let plane = c_hyperplane(c, x0, y0, y1)?;
    let spacing = 2.0 * ball_radius / resolution as f64;
    let max_steps = (2 * resolution).max(64);
    let rays = plane.trace(c, omega, spacing, max_steps, params)?;
    let plane_clipped = clip_polyline_set(&rays, x0, ball_radius);
    if plane_clipped.iter().all(|p| p.len() < 2) {
        return Err(MtwError::Invalid(
            "hyperplane trace degenerate inside the ball".into(),
        ));
    }

    let mut distances = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let section = Section::resolve(
            c,
            SectionSpec {
                x0: x0.clone(),
                y0: y0.clone(),
                y1: y1.clone(),
                theta,
            },
            omega_star,
            params,
        )?;
        let mesh = section_boundary(c, &section, omega, resolution);
        let mesh_clipped = clip_polyline_set(&mesh.polylines, x0, ball_radius);
        let d = symmetric_hausdorff(&mesh_clipped, &plane_clipped).ok_or_else(|| {
            MtwError::Invalid(format!(
                "section boundary empty inside the ball at theta = {theta}"
            ))
        })?;
        distances.push(ConvergencePoint {
            theta,
            hausdorff: d,
            section_vertices: mesh_clipped.iter().map(Vec::len).sum(),
            hyperplane_vertices: plane_clipped.iter().map(Vec::len).sum(),
        });
    }
    Ok(ConvergenceReport {
        distances,
        ball_clipped,
        ball_radius,
    })
}

/// Clip each polyline to the closed ball, splitting where it leaves; exact
/// circle crossings are inserted at entry and exit.
fn clip_polyline_set(polylines: &[Vec<Point>], center: &Point, radius: f64) -> Vec<Vec<Point>> {
    let mut out = Vec::new();
    for line in polylines {
        let mut current: Vec<Point> = Vec::new();
        if line.len() == 1 {
            if (&line[0] - center).norm() <= radius {
                out.push(line.clone());
            }
            continue;
        }
        for w in line.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if let Some((sa, sb)) = segment_ball_overlap(a, b, center, radius) {
                let u = b - a;
                let pa = a + &u * sa;
                let pb = a + &u * sb;
                if current.is_empty() {
                    current.push(pa);
                } else if (current.last().unwrap() - &pa).norm() > 1e-12 {
                    out.push(std::mem::take(&mut current));
                    current.push(pa);
                }
                current.push(pb);
            } else if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Parameter range [sa, sb] of a + s(b-a) inside the ball, if any.
fn segment_ball_overlap(
    a: &Point,
    b: &Point,
    center: &Point,
    radius: f64,
) -> Option<(f64, f64)> {
    let u = b - a;
    let w = a - center;
    let alpha = u.dot(&u);
    if alpha == 0.0 {
        return (w.norm() <= radius).then_some((0.0, 1.0));
    }
    let beta = u.dot(&w);
    let gamma = w.dot(&w) - radius * radius;
    let disc = beta * beta - alpha * gamma;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let s_lo = ((-beta - sqrt_disc) / alpha).max(0.0);
    let s_hi = ((-beta + sqrt_disc) / alpha).min(1.0);
    (s_hi >= s_lo).then_some((s_lo, s_hi))
}

/// Max over vertices of one set of the distance to the segments of the
/// other, symmetrized. None when either side has no vertices.
pub fn symmetric_hausdorff(a: &[Vec<Point>], b: &[Vec<Point>]) -> Option<f64> {
    let one_way = |from: &[Vec<Point>], to: &[Vec<Point>]| -> Option<f64> {
        let mut worst: Option<f64> = None;
        for line in from {
            for v in line {
                let mut best = f64::INFINITY;
                for other in to {
                    if other.len() == 1 {
                        best = best.min((v - &other[0]).norm());
                    }
                    for w in other.windows(2) {
                        best = best.min(point_segment_distance(v, &w[0], &w[1]));
                    }
                }
                if best.is_finite() {
                    worst = Some(worst.map_or(best, |w: f64| w.max(best)));
                }
            }
        }
        worst
    };
    match (one_way(a, b), one_way(b, a)) {
        (Some(x), Some(y)) => Some(x.max(y)),
        _ => None,
    }
}

/// Second fundamental form of a level surface {h = 0} at a point, from the
/// gradient and hessian of h: the hessian restricted to the tangent space,
/// divided by |grad h|. The normal points out of {h <= 0}.
#[derive(Debug, Clone)]
pub struct SffForm {
    pub normal: Point,
    pub tangent: Vec<Point>,
    /// Form matrix on the tangent basis, already divided by |grad h|.
    pub matrix: DMatrix<f64>,
    pub grad_norm: f64,
}

impl SffForm {
    /// II(xi, xi) for an ambient direction, projected onto the tangent space
    /// and renormalized.
    pub fn value(&self, xi: &Point) -> Result<f64> {
        let mut tau = xi.clone();
        let along = self.normal.dot(xi);
        tau -= &self.normal * along;
        let norm = tau.norm();
        if norm < 1e-10 {
            return Err(MtwError::DegenerateDirection { remainder: norm });
        }
        tau /= norm;
        let coeffs: Vec<f64> = self.tangent.iter().map(|t| t.dot(&tau)).collect();
        let mut v = 0.0;
        for (i, ci) in coeffs.iter().enumerate() {
            for (j, cj) in coeffs.iter().enumerate() {
                v += ci * cj * self.matrix[(i, j)];
            }
        }
        Ok(v)
    }
}

/// Degenerate-gradient threshold for second-fundamental-form extraction.
pub fn sff_gradient_threshold(hess: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + hess.norm())
}

pub fn sff_from_grad_hess(grad: &Point, hess: &DMatrix<f64>) -> Result<SffForm> {
    let grad_norm = grad.norm();
    let threshold = sff_gradient_threshold(hess);
    if grad_norm <= threshold {
        return Err(MtwError::DegenerateGradient {
            grad_norm,
            threshold,
        });
    }
    let normal = grad / grad_norm;
    let tangent = tangent_basis(&normal);
    let k = tangent.len();
    let matrix = DMatrix::from_fn(k, k, |i, j| {
        (tangent[i].transpose() * hess * &tangent[j])[(0, 0)] / grad_norm
    });
    Ok(SffForm {
        normal,
        tangent,
        matrix,
        grad_norm,
    })
}

/// Second fundamental form of the section boundary at x, from the analytic
/// (or finite-difference) derivative bundles of the two cost slices.
pub fn section_sff(c: &dyn Cost, section: &Section, x: &Point) -> Result<SffForm> {
    let grad = section.grad_h(c, x.as_slice());
    let mut hess = section.hess_h(c, x.as_slice());
    let sym = (&hess + hess.transpose()) * 0.5;
    hess = sym;
    sff_from_grad_hess(&grad, &hess)
}

/// Second fundamental form of a scalar field's zero set at x, derivatives by
/// central differences at step 1e-4 * (1 + |x|).
pub fn sff_of_field(f: impl Fn(&Point) -> f64, x: &Point) -> Result<SffForm> {
    let n = x.len();
    let step = 1e-4 * (1.0 + x.norm());
    let mut grad = Point::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let at = |dx: &[(usize, f64)]| {
        let mut z = x.clone();
        for &(k, d) in dx {
            z[k] += d;
        }
        f(&z)
    };
    let f0 = f(x);
    for i in 0..n {
        grad[i] = (at(&[(i, step)]) - at(&[(i, -step)])) / (2.0 * step);
        hess[(i, i)] = (at(&[(i, step)]) - 2.0 * f0 + at(&[(i, -step)])) / (step * step);
        for j in i + 1..n {
            let v = (at(&[(i, step), (j, step)]) - at(&[(i, step), (j, -step)])
                - at(&[(i, -step), (j, step)])
                + at(&[(i, -step), (j, -step)]))
                / (4.0 * step * step);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    sff_from_grad_hess(&grad, &hess)
}

/// Second fundamental form of S_theta at the anchor x0, where the gradient is
/// theta (p1 - p0) and the hessian is the difference of target-chart
/// curvature matrices: II = [A(p_theta) - A(p0)] / (theta |p1 - p0|) on the
/// tangent space.
fn anchor_sff(
    c: &dyn Cost,
    x0: &Point,
    p0: &Point,
    p_theta: &Point,
    y0: &Point,
    y_theta: &Point,
) -> Result<SffForm> {
    let a0 = neg_symmetrized_cxx(c, x0, y0);
    let at = neg_symmetrized_cxx(c, x0, y_theta);
    let hess = at - a0;
    let grad = p_theta - p0;
    sff_from_grad_hess(&grad, &hess)
}

fn neg_symmetrized_cxx(c: &dyn Cost, x: &Point, y: &Point) -> DMatrix<f64> {
    let m = cost_hess_xx(c, x.as_slice(), y.as_slice());
    -(&m + m.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct SffMonotonicityReport {
    pub thetas: Vec<f64>,
    pub directions: usize,
    /// II_{theta'} - II_theta for consecutive theta pairs and each tangent
    /// direction, flattened pair-major.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub pass: bool,
    pub tol: f64,
}

/// The second fundamental form of S_theta at x0 must not decrease as theta
/// grows. Evaluates II_theta(xi, xi) at x0 over a theta grid and tangent
/// directions xi and reports consecutive differences.
pub fn sff_monotonicity_test(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    thetas: &[f64],
    xi_count: usize,
    omega_star: &DomainBox,
    params: &NewtonParams,
    tol: f64,
) -> Result<SffMonotonicityReport> {
    if thetas.len() < 2 {
        return Err(MtwError::Invalid("need at least two theta values".into()));
    }
    let mut sorted = thetas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite thetas"));
    let seg = c_segment(c, x0, y0, y1, &sorted, omega_star, params)?;
    let dp = &seg.p1 - &seg.p0;
    if dp.norm() < 1e-12 {
        return Err(MtwError::DegenerateDirection { remainder: dp.norm() });
    }
    let dp_hat = dp.normalize();
    let dim = x0.len();
    let tangents: Vec<Point> = if dim == 2 {
        vec![tangent_basis(&dp_hat)[0].clone()]
    } else {
        let basis = tangent_basis(&dp_hat);
        sphere_directions(dim - 1, xi_count.max(1))
            .into_iter()
            .map(|coeff| {
                let mut d = Point::zeros(dim);
                for (b, &w) in basis.iter().zip(coeff.iter()) {
                    d += b * w;
                }
                d.normalize()
            })
            .collect()
    };
    let forms: Vec<SffForm> = sorted
        .iter()
        .zip(&seg.samples)
        .map(|(&theta, sample)| {
            let p_theta = interpolate(&seg.p0, &seg.p1, theta);
            anchor_sff(c, x0, &seg.p0, &p_theta, y0, &sample.1)
        })
        .collect::<Result<_>>()?;
    let mut margins = Vec::with_capacity((sorted.len() - 1) * tangents.len());
    for w in forms.windows(2) {
        for xi in &tangents {
            let lo = w[0].value(xi)?;
            let hi = w[1].value(xi)?;
            margins.push(hi - lo);
        }
    }
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SffMonotonicityReport {
        thetas: sorted,
        directions: tangents.len(),
        min_margin,
        pass: min_margin >= -tol,
        margins,
        tol,
    })
}

#[derive(Debug, Clone)]
pub struct NestingReport {
    pub checked_nodes: usize,
    pub pair_count: usize,
    pub violations: usize,
    /// Largest h_theta among violating nodes (how far outside S_theta a
    /// point of S_theta' was found).
    pub worst_excess: f64,
}

/// Sections shrink as theta grows: for theta' > theta, count grid nodes in
/// S_theta' but outside S_theta beyond the tolerance band
/// (h_theta' <= 0 < h_theta - tol).
pub fn section_nesting_test(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    theta_pairs: &[(f64, f64)],
    grid: &GridSpec,
    omega_star: &DomainBox,
    params: &NewtonParams,
    tol: f64,
) -> Result<NestingReport> {
    let mut thetas: Vec<f64> = theta_pairs
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect();
    thetas.sort_by(|a, b| a.partial_cmp(b).expect("finite thetas"));
    thetas.dedup();
    let seg = c_segment(c, x0, y0, y1, &thetas, omega_star, params)?;
    let theta_index = |t: f64| thetas.iter().position(|&u| u == t).expect("solved theta");
    let sections: Vec<Section> = thetas
        .iter()
        .zip(&seg.samples)
        .map(|(&theta, sample)| {
            let y_theta = sample.1.clone();
            let anchor_gap = c.eval(x0.as_slice(), y0.as_slice())
                - c.eval(x0.as_slice(), y_theta.as_slice());
            Section {
                spec: SectionSpec {
                    x0: x0.clone(),
                    y0: y0.clone(),
                    y1: y1.clone(),
                    theta,
                },
                p0: seg.p0.clone(),
                p1: seg.p1.clone(),
                p_theta: interpolate(&seg.p0, &seg.p1, theta),
                y_theta,
                anchor_gap,
            }
        })
        .collect();
    let table = grid.node_table();
    let n = grid.dim();
    let pairs: Vec<(usize, usize)> = theta_pairs
        .iter()
        .map(|&(a, b)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            (theta_index(lo), theta_index(hi))
        })
        .collect();
    let per_node: Vec<(usize, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = &table[i * n..(i + 1) * n];
            let hs: Vec<f64> = sections.iter().map(|s| s.h(c, x)).collect();
            let mut violations = 0;
            let mut worst = f64::NEG_INFINITY;
            for &(lo, hi) in &pairs {
                if hs[hi] <= 0.0 && hs[lo] > tol {
                    violations += 1;
                    worst = worst.max(hs[lo]);
                }
            }
            (violations, worst)
        })
        .collect();
    let violations = per_node.iter().map(|&(v, _)| v).sum();
    let worst_excess = per_node
        .iter()
        .map(|&(_, w)| w)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(NestingReport {
        checked_nodes: grid.len(),
        pair_count: theta_pairs.len() * grid.len(),
        violations,
        worst_excess: if violations == 0 { 0.0 } else { worst_excess },
    })
}

/// How the input points describe the set under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSetKind {
    /// Points walk the boundary in order (two dimensions): the violation is
    /// the convex-hull area defect of the polygon, normalized by hull area.
    OrderedBoundary,
    /// Unordered sample of the whole set: the violation is the fraction of
    /// sampled pair-midpoints farther from the set than its covering radius.
    Cloud,
}

#[derive(Debug, Clone)]
pub struct ConvexityCheck {
    pub max_violation: f64,
    /// Too few points (or a flat hull) to carry a verdict.
    pub degenerate: bool,
    pub tested_pairs: usize,
}

pub fn convexity_of_point_set(
    points: &[Point],
    kind: PointSetKind,
    seed: u64,
) -> ConvexityCheck {
    let degenerate = ConvexityCheck {
        max_violation: 0.0,
        degenerate: true,
        tested_pairs: 0,
    };
    if points.len() < 3 {
        return degenerate;
    }
    match kind {
        PointSetKind::OrderedBoundary if points[0].len() == 2 => {
            let poly = polygon_area(points).abs();
            let hull = convex_hull_2d(points);
            let hull_area = polygon_area(&hull).abs();
            let scale: f64 = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
            if hull.len() < 3 || hull_area <= 1e-14 * (1.0 + scale * scale) {
                return degenerate;
            }
            ConvexityCheck {
                max_violation: ((hull_area - poly) / hull_area).max(0.0),
                degenerate: false,
                tested_pairs: points.len(),
            }
        }
        _ => cloud_convexity(points, seed),
    }
}

fn cloud_convexity(points: &[Point], seed: u64) -> ConvexityCheck {
    let n = points.len();
    if n < 4 {
        return ConvexityCheck {
            max_violation: 0.0,
            degenerate: true,
            tested_pairs: 0,
        };
    }
    let nearest_other = |i: usize| -> f64 {
        let mut best = f64::INFINITY;
        for (j, p) in points.iter().enumerate() {
            if j != i {
                best = best.min((p - &points[i]).norm());
            }
        }
        best
    };
    let probe_count = n.min(256);
    let stride = (n / probe_count).max(1);
    let covering = (0..n)
        .step_by(stride)
        .map(nearest_other)
        .fold(0.0, f64::max);
    let scale: f64 = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let allowance = 1.5 * covering.max(1e-12 * (1.0 + scale));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pairs = 2000.min(n * (n - 1) / 2);
    let mut failures = 0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let mid = (&points[i] + &points[j]) * 0.5;
        let dist = points
            .iter()
            .map(|p| (p - &mid).norm())
            .fold(f64::INFINITY, f64::min);
        if dist > allowance {
            failures += 1;
        }
    }
    ConvexityCheck {
        max_violation: failures as f64 / pairs as f64,
        degenerate: false,
        tested_pairs: pairs,
    }
}

/// Solve the segment once and return it together with resolved sections at
/// each theta (shared helper for scans that need many thetas of one spec).
pub fn resolve_sections_along(
    c: &dyn Cost,
    x0: &Point,
    y0: &Point,
    y1: &Point,
    thetas: &[f64],
    omega_star: &DomainBox,
    params: &NewtonParams,
) -> Result<(CSegment, Vec<Section>)> {
    let seg = c_segment(c, x0, y0, y1, thetas, omega_star, params)?;
    let sections = thetas
        .iter()
        .zip(&seg.samples)
        .map(|(&theta, sample)| {
            let y_theta = sample.1.clone();
            let anchor_gap = c.eval(x0.as_slice(), y0.as_slice())
                - c.eval(x0.as_slice(), y_theta.as_slice());
            Section {
                spec: SectionSpec {
                    x0: x0.clone(),
                    y0: y0.clone(),
                    y1: y1.clone(),
                    theta,
                },
                p0: seg.p0.clone(),
                p1: seg.p1.clone(),
                p_theta: interpolate(&seg.p0, &seg.p1, theta),
                y_theta,
                anchor_gap,
            }
        })
        .collect();
    Ok((seg, sections))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{builtin_cost, default_domains};
    use crate::geometry::point;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn quad() -> Arc<dyn Cost> {
        builtin_cost("quadratic", 2, &[]).unwrap()
    }

    fn resolve(c: &dyn Cost, x0: &[f64], y0: &[f64], y1: &[f64], theta: f64) -> Section {
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        Section::resolve(
            c,
            SectionSpec {
                x0: point(x0),
                y0: point(y0),
                y1: point(y1),
                theta,
            },
            &omega_star,
            &NewtonParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn h_vanishes_at_anchor_exactly() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        for theta in [0.13, 0.5, 1.0] {
            let s = resolve(c.as_ref(), &[0.31, -0.22], &[-0.4, 0.1], &[0.5, 0.6], theta);
            assert_eq!(s.h(c.as_ref(), &[0.31, -0.22]), 0.0);
        }
    }

    #[test]
    fn quadratic_h_is_the_linear_expansion() {
        let c = quad();
        let x0 = [0.2, -0.1];
        let s = resolve(c.as_ref(), &x0, &[-0.3, 0.4], &[0.6, -0.2], 0.37);
        for x in [[0.5, 0.5], [-0.7, 0.25], [0.0, -0.9]] {
            let expected: f64 = (0..2)
                .map(|k| (x[k] - x0[k]) * (s.y_theta[k] - s.spec.y0[k]))
                .sum();
            assert_relative_eq!(s.h(c.as_ref(), &x), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn h_shrinks_linearly_as_theta_vanishes() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let x = [0.8, 0.3];
        let mut prev = f64::INFINITY;
        for theta in [0.4, 0.2, 0.1, 0.05] {
            let s = resolve(c.as_ref(), &[0.1, -0.2], &[-0.5, 0.0], &[0.4, 0.6], theta);
            let h = s.h(c.as_ref(), &x).abs();
            assert!(h < prev, "h must shrink with theta");
            prev = h;
        }
    }

    #[test]
    fn quadratic_boundary_is_a_straight_line_through_anchor() {
        let c = quad();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let s = resolve(c.as_ref(), &[0.1, 0.05], &[-0.4, -0.1], &[0.5, 0.3], 0.6);
        let mesh = section_boundary(c.as_ref(), &s, &omega, 40);
        assert!(!mesh.empty);
        let normal = &s.y_theta - &s.spec.y0;
        let x0 = point(&[0.1, 0.05]);
        for v in mesh.vertices() {
            assert!(s.h(c.as_ref(), v.as_slice()).abs() <= MESH_TOL);
            let off = (v - &x0).dot(&normal).abs() / normal.norm();
            assert!(off <= 1e-8, "vertex off the line by {off}");
        }
    }

    #[test]
    fn curved_boundary_matches_dense_sign_scan() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let s = resolve(c.as_ref(), &[0.0, 0.0], &[-0.6, -0.3], &[0.7, 0.5], 0.8);
        let res = 32;
        let mesh = section_boundary(c.as_ref(), &s, &omega, res);
        assert!(!mesh.empty);
        for v in mesh.vertices() {
            assert!(s.h(c.as_ref(), v.as_slice()).abs() <= MESH_TOL);
        }
        // Oracle: sign changes along rows of a 10x denser grid must all lie
        // near the mesh.
        let dense = 10 * res;
        let spacing = 2.0 / (res - 1) as f64;
        let mut oracle_points = Vec::new();
        for i in 0..dense {
            let x1 = -1.0 + 2.0 * i as f64 / (dense - 1) as f64;
            let mut prev: Option<(f64, f64)> = None;
            for j in 0..dense {
                let x2 = -1.0 + 2.0 * j as f64 / (dense - 1) as f64;
                let h = s.h(c.as_ref(), &[x1, x2]);
                if let Some((px2, ph)) = prev {
                    if (ph <= 0.0) != (h <= 0.0) {
                        let t = refine_crossing(
                            |t| s.h(c.as_ref(), &[x1, px2 + t * (x2 - px2)]),
                            ph,
                            h,
                            MESH_TOL,
                        );
                        oracle_points.push(point(&[x1, px2 + t * (x2 - px2)]));
                    }
                }
                prev = Some((x2, h));
            }
        }
        assert!(!oracle_points.is_empty());
        let mesh_lines = mesh.polylines.clone();
        for op in &oracle_points {
            let mut best = f64::INFINITY;
            for line in &mesh_lines {
                for w in line.windows(2) {
                    best = best.min(point_segment_distance(op, &w[0], &w[1]));
                }
            }
            assert!(
                best <= spacing,
                "oracle crossing {op:?} is {best} from the mesh (spacing {spacing})"
            );
        }
    }

    #[test]
    fn ray_mesh_of_synthetic_sphere_and_shell() {
        let omega = DomainBox::cube(3, -1.0, 1.0).unwrap();
        let x0 = point(&[0.1, -0.05, 0.0]);
        let r = 0.4;
        let center = x0.clone();
        let mesh = ray_cast_boundary(&omega, 64, &x0, |x| {
            let d2: f64 = x
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2 - r * r
        });
        assert!(!mesh.empty);
        assert_eq!(mesh.ray_points.len(), 64, "every ray crosses the sphere");
        assert_eq!(mesh.star_violations, 0);
        for (_, p) in &mesh.ray_points {
            assert!(((p - &x0).norm() - r).abs() <= 1e-8);
        }

        // A hollow shell is not star-shaped from its center: each ray crosses
        // twice; the extra crossings are counted and the first is kept.
        let center = x0.clone();
        let mesh = ray_cast_boundary(&omega, 64, &x0, |x| {
            let d: f64 = x
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (d - 0.25) * (d - 0.5)
        });
        assert_eq!(mesh.ray_points.len(), 64);
        assert_eq!(mesh.star_violations, 64);
        for (_, p) in &mesh.ray_points {
            assert!(((p - &x0).norm() - 0.25).abs() <= 1e-6);
        }
    }

    #[test]
    fn flat_three_dimensional_section_has_flagged_empty_mesh() {
        // Quadratic sections are exact planes through x0: no ray from x0
        // crosses them again, and the mesh reports itself empty.
        let c = builtin_cost("quadratic", 3, &[]).unwrap();
        let box3 = DomainBox::cube(3, -1.0, 1.0).unwrap();
        let s = Section::resolve(
            c.as_ref(),
            SectionSpec {
                x0: point(&[0.0, 0.0, 0.0]),
                y0: point(&[-0.5, -0.2, 0.1]),
                y1: point(&[0.6, 0.4, -0.3]),
                theta: 0.9,
            },
            &box3,
            &NewtonParams::default(),
        )
        .unwrap();
        let mesh = section_boundary(c.as_ref(), &s, &box3, 48);
        assert!(mesh.empty);
        assert!(mesh.ray_points.is_empty());
    }

    #[test]
    fn quadratic_hyperplane_is_the_classical_plane() {
        let c = quad();
        let x0 = point(&[0.15, -0.2]);
        let y0 = point(&[-0.3, 0.1]);
        let y1 = point(&[0.5, 0.45]);
        let plane = c_hyperplane(c.as_ref(), &x0, &y0, &y1).unwrap();
        assert_eq!(plane.g(c.as_ref(), &x0), 0.0);
        for x in [[0.7, 0.2], [-0.4, -0.6], [0.05, 0.9]] {
            let x = point(&x);
            let expected = -(&y1 - &y0).dot(&(&x - &x0));
            assert_relative_eq!(plane.g(c.as_ref(), &x), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn traced_hyperplane_is_flat_in_target_chart() {
        let c = builtin_cost("neg_log", 2, &[]).unwrap();
        let (omega, _) = default_domains("neg_log", 2).unwrap();
        let x0 = omega.center();
        let y0 = point(&[0.8, 0.9]);
        let y1 = point(&[1.2, 1.1]);
        let plane = c_hyperplane(c.as_ref(), &x0, &y0, &y1).unwrap();
        let rays = plane
            .trace(c.as_ref(), &omega, 0.02, 200, &NewtonParams::default())
            .unwrap();
        let q0 = plane.q0();
        let nu = plane.q_normal.normalize();
        let mut checked = 0;
        for ray in &rays {
            assert_eq!(ray[0], x0, "rays start at the anchor");
            for x in ray {
                let q = -cost_grad_y(c.as_ref(), x.as_slice(), plane.y0.as_slice());
                assert!(nu.dot(&(&q - &q0)).abs() <= 1e-8);
                assert!(plane.g(c.as_ref(), x).abs() <= 1e-8);
                checked += 1;
            }
        }
        assert!(checked > 20, "trace too short: {checked} points");
    }

    #[test]
    fn quadratic_sections_already_sit_on_the_hyperplane() {
        let c = quad();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let report = hausdorff_convergence(
            c.as_ref(),
            &point(&[0.0, 0.0]),
            &point(&[-0.4, -0.1]),
            &point(&[0.5, 0.3]),
            &[0.3, 0.15],
            0.5,
            &omega,
            &omega_star,
            64,
            &NewtonParams::default(),
        )
        .unwrap();
        assert!(!report.ball_clipped);
        for d in &report.distances {
            assert!(
                d.hausdorff <= 1e-6,
                "theta {}: distance {}",
                d.theta,
                d.hausdorff
            );
        }
    }

    #[test]
    fn oversized_ball_is_flagged() {
        let c = quad();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let report = hausdorff_convergence(
            c.as_ref(),
            &point(&[0.0, 0.0]),
            &point(&[-0.4, -0.1]),
            &point(&[0.5, 0.3]),
            &[0.3],
            5.0,
            &omega,
            &omega,
            48,
            &NewtonParams::default(),
        )
        .unwrap();
        assert!(report.ball_clipped);
    }

    #[test]
    fn sphere_field_curvature_is_one_over_radius() {
        for r in [0.5, 1.5] {
            let x0 = point(&[0.3, -0.2, 0.1]);
            let x0c = x0.clone();
            let f = move |x: &Point| (x - &x0c).norm_squared() - r * r;
            let on_sphere = &x0 + point(&[r, 0.0, 0.0]);
            let sff = sff_of_field(f, &on_sphere).unwrap();
            for xi in [point(&[0.0, 1.0, 0.0]), point(&[0.0, 0.3, -0.8])] {
                assert_relative_eq!(sff.value(&xi).unwrap(), 1.0 / r, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn section_sff_matches_polyline_turning_rate() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let s = resolve(c.as_ref(), &[0.0, 0.0], &[-0.6, -0.3], &[0.7, 0.5], 1.0);
        let mesh = section_boundary(c.as_ref(), &s, &omega, 160);
        let line = mesh
            .polylines
            .iter()
            .max_by_key(|l| l.len())
            .expect("nonempty mesh");
        assert!(line.len() > 20);
        let mid = line.len() / 2;
        let (a, b, d) = (&line[mid - 1], &line[mid], &line[mid + 1]);
        // Menger curvature of three consecutive vertices.
        let area2 = ((b[0] - a[0]) * (d[1] - a[1]) - (b[1] - a[1]) * (d[0] - a[0])).abs();
        let kappa = 2.0 * area2
            / ((b - a).norm() * (d - b).norm() * (d - a).norm());
        let sff = section_sff(c.as_ref(), &s, b).unwrap();
        let tangent = (d - a).normalize();
        let ii = sff.value(&tangent).unwrap().abs();
        assert_relative_eq!(ii, kappa, max_relative = 0.05);
    }

    #[test]
    fn degenerate_gradient_is_reported() {
        let grad = point(&[1e-12, 0.0]);
        let hess = DMatrix::identity(2, 2);
        match sff_from_grad_hess(&grad, &hess) {
            Err(MtwError::DegenerateGradient { grad_norm, .. }) => {
                assert!(grad_norm < 1e-10);
            }
            other => panic!("expected degenerate gradient, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_sff_margins_are_exactly_zero() {
        let c = quad();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let report = sff_monotonicity_test(
            c.as_ref(),
            &point(&[0.1, -0.3]),
            &point(&[-0.4, 0.2]),
            &point(&[0.6, 0.5]),
            &[0.2, 0.4, 0.6, 0.8, 1.0],
            4,
            &omega_star,
            &NewtonParams::default(),
            0.0,
        )
        .unwrap();
        assert!(report.pass);
        for m in &report.margins {
            assert_eq!(*m, 0.0);
        }
    }

    #[test]
    fn passing_cost_sff_margins_stay_nonnegative() {
        let c = builtin_cost("sqrt_plus", 2, &[]).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let report = sff_monotonicity_test(
            c.as_ref(),
            &point(&[0.2, 0.1]),
            &point(&[-0.5, -0.4]),
            &point(&[0.6, 0.3]),
            &[0.1, 0.3, 0.5, 0.7, 0.9],
            4,
            &omega_star,
            &NewtonParams::default(),
            1e-9,
        )
        .unwrap();
        assert!(report.pass, "min margin {}", report.min_margin);
    }

    #[test]
    fn quadratic_nesting_has_zero_violations_at_zero_tolerance() {
        let c = quad();
        let omega = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let grid = GridSpec::square(omega, 48).unwrap();
        let omega_star = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let report = section_nesting_test(
            c.as_ref(),
            &point(&[0.1, 0.0]),
            &point(&[-0.4, -0.2]),
            &point(&[0.5, 0.4]),
            &[(0.2, 0.6), (0.3, 0.3), (0.5, 1.0)],
            &grid,
            &omega_star,
            &NewtonParams::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(report.violations, 0);
        assert_eq!(report.worst_excess, 0.0);
    }

    #[test]
    fn square_and_l_shape_convexity() {
        let mut square_cloud = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                square_cloud.push(point(&[i as f64 / 11.0, j as f64 / 11.0]));
            }
        }
        let check = convexity_of_point_set(&square_cloud, PointSetKind::Cloud, 42);
        assert!(!check.degenerate);
        assert_eq!(check.max_violation, 0.0);

        // Ordered square boundary.
        let square = vec![
            point(&[0.0, 0.0]),
            point(&[1.0, 0.0]),
            point(&[1.0, 1.0]),
            point(&[0.0, 1.0]),
        ];
        let check = convexity_of_point_set(&square, PointSetKind::OrderedBoundary, 1);
        assert_eq!(check.max_violation, 0.0);

        // L-shape: unit square minus its upper-right quadrant.
        let l_shape = vec![
            point(&[0.0, 0.0]),
            point(&[1.0, 0.0]),
            point(&[1.0, 0.5]),
            point(&[0.5, 0.5]),
            point(&[0.5, 1.0]),
            point(&[0.0, 1.0]),
        ];
        let check = convexity_of_point_set(&l_shape, PointSetKind::OrderedBoundary, 1);
        assert!(check.max_violation > 0.1, "violation {}", check.max_violation);

        let two = vec![point(&[0.0, 0.0]), point(&[1.0, 1.0])];
        let check = convexity_of_point_set(&two, PointSetKind::Cloud, 1);
        assert!(check.degenerate);
        assert_eq!(check.max_violation, 0.0);
    }
}
