//! Discrete c-transforms, c-convexity of grid potentials, contact sets, and
//! the local-vs-global support experiment.
//!
//! Transforms are exact discrete suprema over grid nodes: no continuous
//! optimization happens inside, so order reversal and idempotence are exact
//! float identities and all discretization error is carried by one quantity,
//! `epsilon_grid`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::cexp::{c_exp, NewtonParams};
use crate::cost::{cost_grad_x, cost_grad_y, cost_hess_xx, Cost};
use crate::error::{MtwError, Result};
use crate::geometry::{pair_min_separation, DomainBox, Point};
use crate::grid::{GridPotential, GridSpec};
use crate::sections::{convexity_of_point_set, ConvexityCheck, PointSetKind};

/// sup over source nodes of -(value + cost), per destination node.
///
/// The inner sum is grouped as `-(value[i] + cost(i, j))`, and the running
/// maximum updates on strict `>` only, so the argmax is the lexicographically
/// first source node attaining the supremum. Contact residuals computed with
/// the same grouping vanish exactly at the argmax.
fn sup_transform(
    src: &GridPotential,
    dst: &GridSpec,
    cost_of: impl Fn(&[f64], &[f64]) -> f64 + Sync,
) -> GridPotential {
    let n_src = src.grid.dim();
    let n_dst = dst.dim();
    let src_table = src.grid.node_table();
    let dst_table = dst.node_table();
    let values: Vec<f64> = (0..dst.len())
        .into_par_iter()
        .map(|j| {
            let dst_pt = &dst_table[j * n_dst..(j + 1) * n_dst];
            let mut best = f64::NEG_INFINITY;
            for i in 0..src.values.len() {
                let src_pt = &src_table[i * n_src..(i + 1) * n_src];
                let v = -(src.values[i] + cost_of(src_pt, dst_pt));
                if v > best {
                    best = v;
                }
            }
            best
        })
        .collect();
    GridPotential {
        grid: dst.clone(),
        values,
    }
}

/// phi^c(y) = sup over source-grid x of { -phi(x) - c(x,y) }, per node of the
/// target grid.
pub fn c_transform(
    phi: &GridPotential,
    c: &dyn Cost,
    omega_star_grid: &GridSpec,
) -> GridPotential {
    sup_transform(phi, omega_star_grid, |x, y| c.eval(x, y))
}

/// psi^{c*}(x) = sup over target-grid y of { -psi(y) - c(x,y) }, per node of
/// the source grid.
pub fn c_star_transform(
    psi: &GridPotential,
    c: &dyn Cost,
    omega_grid: &GridSpec,
) -> GridPotential {
    sup_transform(psi, omega_grid, |y, x| c.eval(x, y))
}

/// Discretization slack 2 * Lip(c) * max grid spacing, with the Lipschitz
/// constant estimated from gradient norms on a deterministic subgrid of
/// admissible node pairs.
pub fn epsilon_grid(c: &dyn Cost, omega_grid: &GridSpec, omega_star_grid: &GridSpec) -> f64 {
    let min_sep = pair_min_separation(&omega_grid.domain, &omega_star_grid.domain);
    let probes = |g: &GridSpec| -> Vec<Point> {
        let strides: Vec<usize> = g
            .resolution
            .iter()
            .map(|&r| ((r - 1) / 7).max(1))
            .collect();
        (0..g.len())
            .filter(|&flat| {
                g.multi_index(flat)
                    .iter()
                    .zip(&strides)
                    .zip(&g.resolution)
                    .all(|((&i, &s), &r)| i % s == 0 || i == r - 1)
            })
            .map(|flat| g.node(flat))
            .collect()
    };
    let xs = probes(omega_grid);
    let ys = probes(omega_star_grid);
    let mut lip: f64 = 0.0;
    for x in &xs {
        for y in &ys {
            if (x - y).norm() < min_sep {
                continue;
            }
            let gx = cost_grad_x(c, x.as_slice(), y.as_slice()).norm();
            let gy = cost_grad_y(c, x.as_slice(), y.as_slice()).norm();
            lip = lip.max(gx).max(gy);
        }
    }
    2.0 * lip * omega_grid.max_spacing().max(omega_star_grid.max_spacing())
}

/// Outcome of the double-transform invariance test.
#[derive(Debug, Clone)]
pub struct CConvexityReport {
    pub is_c_convex: bool,
    pub max_deviation: f64,
    /// The double transform phi^{cc*} on phi's grid, for further comparison.
    pub double_transform: GridPotential,
}

/// A potential is c-convex when the double transform reproduces it. Returns
/// max |phi^{cc*} - phi| and the verdict against `tol`; phi^{cc*} <= phi +
/// slack always holds, so the deviation measures one-sided defect.
pub fn is_c_convex(
    phi: &GridPotential,
    c: &dyn Cost,
    omega_star_grid: &GridSpec,
    tol: f64,
) -> CConvexityReport {
    let phi_c = c_transform(phi, c, omega_star_grid);
    let phi_cc = c_star_transform(&phi_c, c, &phi.grid);
    let max_deviation = phi
        .values
        .iter()
        .zip(&phi_cc.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    CConvexityReport {
        is_c_convex: max_deviation <= tol,
        max_deviation,
        double_transform: phi_cc,
    }
}

/// Grid nodes where the c-support from `y` touches the potential.
#[derive(Debug, Clone)]
pub struct ContactSet {
    /// Flat node index of y in the target grid.
    pub y_index: usize,
    /// Flat node indices of members in the source grid, ascending.
    pub indices: Vec<usize>,
    pub tol: f64,
    /// Face-adjacency connected components among members.
    pub component_count: usize,
}

/// Members x of phi's grid with |phi(x) + phi_c(y) + c(x,y)| <= tol, where y
/// must be a node of phi_c's grid. The residual groups as
/// phi_c(y) + (phi(x) + c(x,y)), which is exactly zero at the transform's
/// argmax nodes; an empty result just means tol was too small.
pub fn contact_set(
    phi: &GridPotential,
    phi_c: &GridPotential,
    c: &dyn Cost,
    y: &Point,
    tol: f64,
) -> Result<ContactSet> {
    let y_index = phi_c
        .grid
        .nearest_node(y)
        .ok_or_else(|| MtwError::Invalid("y lies outside the transform grid".into()))?;
    let snap = (&phi_c.grid.node(y_index) - y).norm();
    if snap > 1e-9 * (1.0 + y.norm()) {
        return Err(MtwError::Invalid(format!(
            "y must be a grid node of the transform (nearest node is {snap:.3e} away)"
        )));
    }
    let y = phi_c.grid.node(y_index);
    let pc = phi_c.values[y_index];
    let n = phi.grid.dim();
    let table = phi.grid.node_table();
    let mask: Vec<bool> = (0..phi.values.len())
        .into_par_iter()
        .map(|i| {
            let x = &table[i * n..(i + 1) * n];
            (pc + (phi.values[i] + c.eval(x, y.as_slice()))).abs() <= tol
        })
        .collect();
    let indices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let component_count = count_components(&phi.grid, &mask);
    Ok(ContactSet {
        y_index,
        indices,
        tol,
        component_count,
    })
}

/// Face-adjacency connected components of a node mask.
pub fn count_components(grid: &GridSpec, mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut components = 0;
    let mut queue = Vec::new();
    let mut neighbors = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push(start);
        while let Some(node) = queue.pop() {
            grid.face_neighbors(node, &mut neighbors);
            for &nb in &neighbors {
                if mask[nb] && !seen[nb] {
                    seen[nb] = true;
                    queue.push(nb);
                }
            }
        }
    }
    components
}

/// Outcome of mapping a sublevel set {phi + c(.,y0) <= h} through
/// q = -c_y(., y0) and testing convexity of the image.
#[derive(Debug, Clone)]
pub struct SublevelReport {
    pub level: f64,
    pub member_count: usize,
    pub component_count: usize,
    /// Convexity of the mapped point set; degenerate when the set is too
    /// small to carry a verdict.
    pub convexity: ConvexityCheck,
}

/// Extracts the grid sublevel set of phi + c(., y0) at height h, maps member
/// nodes through q = -c_y(., y0), and tests convexity of the image cloud.
pub fn sublevel_c_convexity_test(
    phi: &GridPotential,
    c: &dyn Cost,
    y0: &Point,
    h: f64,
    seed: u64,
) -> SublevelReport {
    let grid = &phi.grid;
    let n = grid.dim();
    let table = grid.node_table();
    let mask: Vec<bool> = (0..phi.values.len())
        .into_par_iter()
        .map(|i| phi.values[i] + c.eval(&table[i * n..(i + 1) * n], y0.as_slice()) <= h)
        .collect();
    let member_count = mask.iter().filter(|&&m| m).count();
    let component_count = count_components(grid, &mask);
    let points: Vec<Point> = (0..mask.len())
        .into_par_iter()
        .filter(|&i| mask[i])
        .map(|i| -cost_grad_y(c, &table[i * n..(i + 1) * n], y0.as_slice()))
        .collect();
    let convexity = convexity_of_point_set(&points, PointSetKind::Cloud, seed);
    SublevelReport {
        level: h,
        member_count,
        component_count,
        convexity,
    }
}

/// Per-node outcome of the local-vs-global support experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportStatus {
    /// Gradient or c-exponential failed; no candidate support.
    Indeterminate,
    /// The candidate support fails already in the r_local ball.
    NotLocal,
    /// Supported in the ball but violated somewhere in the full box.
    LocalNotGlobal,
    /// Supported over the whole grid.
    Global,
}

#[derive(Debug, Clone)]
pub struct LocalGlobalReport {
    pub interior_count: usize,
    pub indeterminate: usize,
    pub locally_supported: usize,
    pub globally_supported: usize,
    /// Flat indices of nodes supported locally but not globally.
    pub local_not_global: Vec<usize>,
    pub r_local: f64,
    pub tol: f64,
}

impl LocalGlobalReport {
    pub fn local_not_global_count(&self) -> usize {
        self.local_not_global.len()
    }
}

/// One gradient estimate from the stencil on side `signs[k]` of each axis
/// (+1 forward, -1 backward). Interior nodes only.
fn one_sided_gradient(phi: &GridPotential, flat: usize, signs: &[i8]) -> Point {
    let grid = &phi.grid;
    let strides = grid.strides();
    Point::from_fn(grid.dim(), |k, _| {
        let h = grid.spacing(k);
        if signs[k] > 0 {
            (phi.values[flat + strides[k]] - phi.values[flat]) / h
        } else {
            (phi.values[flat] - phi.values[flat - strides[k]]) / h
        }
    })
}

/// At each interior node x, builds candidate supports y = c_exp(x, g) from
/// the central-difference gradient and from every one-sided corner stencil
/// (at a kink of the potential the central difference blends the slopes of
/// two pieces into a spurious candidate, while one of the one-sided
/// stencils is piece-pure), then tests the support inequality
/// phi(x') >= phi(x) - c(x',y) + c(x,y) in two stages. A candidate is
/// locally certified when the inequality holds within tol over
/// |x'-x| <= r_local. The global stage allows the band
/// tol + sqrt(2*lambda*tol)*|x'-x|, because a gradient error passing the
/// local window can hide a slope error of at most sqrt(2*lambda*tol)
/// behind the deficit's curvature lambda, and that error drifts linearly
/// with distance; lambda comes from the cost's Hessian at the candidate.
/// A node is a finding only when some candidate certifies locally and no
/// certified candidate survives globally.
pub fn local_global_experiment(
    phi: &GridPotential,
    c: &dyn Cost,
    omega_star: &DomainBox,
    r_local: f64,
    tol: f64,
) -> LocalGlobalReport {
    let grid = &phi.grid;
    let n = grid.dim();
    let table = grid.node_table();
    let params = NewtonParams::default();
    let seed = omega_star.center();
    let interior: Vec<usize> = (0..grid.len()).filter(|&i| grid.is_interior(i)).collect();
    let statuses: Vec<SupportStatus> = interior
        .par_iter()
        .map(|&i| {
            let x = grid.node(i);
            let mut grads = vec![phi.gradient_at(i)];
            for corner in 0..(1usize << n) {
                let signs: Vec<i8> = (0..n)
                    .map(|k| if corner >> k & 1 == 1 { 1 } else { -1 })
                    .collect();
                grads.push(one_sided_gradient(phi, i, &signs));
            }
            let mut any_solved = false;
            let mut any_local = false;
            let mut globally = false;
            for grad in &grads {
                let y = match c_exp(c, &x, grad, &seed, omega_star, &params) {
                    Ok(r) => r.point,
                    Err(_) => continue,
                };
                any_solved = true;
                let lambda =
                    2.0 * (1.0 + cost_hess_xx(c, x.as_slice(), y.as_slice()).norm());
                let drift = (2.0 * lambda * tol).sqrt();
                let cxy = c.eval(x.as_slice(), y.as_slice());
                let base = phi.values[i] + cxy;
                let mut local_ok = true;
                let mut global_ok = true;
                for j in 0..grid.len() {
                    let xp = &table[j * n..(j + 1) * n];
                    let defect = phi.values[j] + c.eval(xp, y.as_slice()) - base;
                    if defect >= -tol {
                        continue;
                    }
                    let dist2: f64 = xp
                        .iter()
                        .zip(x.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if dist2 <= r_local * r_local {
                        local_ok = false;
                        break;
                    }
                    // No break: a nearer node may still disqualify the
                    // candidate locally, which voids its certification.
                    if defect < -(tol + drift * dist2.sqrt()) {
                        global_ok = false;
                    }
                }
                if !local_ok {
                    continue;
                }
                any_local = true;
                if global_ok {
                    globally = true;
                    break;
                }
            }
            if !any_solved {
                SupportStatus::Indeterminate
            } else if globally {
                SupportStatus::Global
            } else if any_local {
                SupportStatus::LocalNotGlobal
            } else {
                SupportStatus::NotLocal
            }
        })
        .collect();
    let mut report = LocalGlobalReport {
        interior_count: interior.len(),
        indeterminate: 0,
        locally_supported: 0,
        globally_supported: 0,
        local_not_global: Vec::new(),
        r_local,
        tol,
    };
    for (&i, &s) in interior.iter().zip(&statuses) {
        match s {
            SupportStatus::Indeterminate => report.indeterminate += 1,
            SupportStatus::NotLocal => {}
            SupportStatus::LocalNotGlobal => {
                report.locally_supported += 1;
                report.local_not_global.push(i);
            }
            SupportStatus::Global => {
                report.locally_supported += 1;
                report.globally_supported += 1;
            }
        }
    }
    report
}

/// One c-affine piece x -> -offset - c(x, y).
#[derive(Debug, Clone)]
pub struct CAffinePiece {
    pub y: Point,
    pub offset: f64,
}

/// Random c-convex potential: the max of `pieces` c-affine functions with
/// targets drawn from omega_star and offsets in [-0.3, 0.3]. Deterministic
/// given the seed. Returns the potential and the pieces that built it.
pub fn random_c_affine_potential(
    c: &dyn Cost,
    grid: &GridSpec,
    omega_star: &DomainBox,
    pieces: usize,
    seed: u64,
) -> Result<(GridPotential, Vec<CAffinePiece>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let min_sep = pair_min_separation(&grid.domain, omega_star);
    let mut built = Vec::with_capacity(pieces);
    for _ in 0..pieces.max(1) {
        let mut accepted = None;
        for _ in 0..1000 {
            let y = omega_star.sample(&mut rng);
            let clamped = grid.domain.clamp(&y);
            if (&y - &clamped).norm() >= min_sep {
                accepted = Some(y);
                break;
            }
        }
        let y = accepted.ok_or(MtwError::SamplingExhausted { attempts: 1000 })?;
        let offset = rng.random_range(-0.3..0.3);
        built.push(CAffinePiece { y, offset });
    }
    let phi = GridPotential::from_fn(grid.clone(), |x| {
        built
            .iter()
            .map(|p| -p.offset - c.eval(x, p.y.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok((phi, built))
}
