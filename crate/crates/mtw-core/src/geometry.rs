use nalgebra::DVector;
use rand::Rng;

use crate::error::{MtwError, Result};

/// A point in source or target space. Dimensions 1..3 are exercised by the
/// test suite; higher dimensions work wherever no 2-D-specific machinery
/// (marching squares, polygon areas) is involved.
pub type Point = DVector<f64>;

pub fn point(coords: &[f64]) -> Point {
    DVector::from_column_slice(coords)
}

/// Axis-aligned box, the carrier of the source and target domains.
///
/// `excluded_diagonal_radius` is only meaningful when the box is used in a
/// pair: samplers reject pairs (x, y) with |x - y| below it, which is how
/// costs singular at x = y are kept inside their smooth region.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: Point,
    pub upper: Point,
    pub excluded_diagonal_radius: f64,
}

impl DomainBox {
    pub fn new(lower: Point, upper: Point) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(MtwError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.len() == 0 {
            return Err(MtwError::BadDomain("empty dimension".into()));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(MtwError::BadDomain("bounds must be finite".into()));
            }
            if lower[i] >= upper[i] {
                return Err(MtwError::BadDomain(format!(
                    "lower[{i}] = {} is not below upper[{i}] = {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(DomainBox {
            lower,
            upper,
            excluded_diagonal_radius: 0.0,
        })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, lo),
            DVector::from_element(dim, hi),
        )
    }

    pub fn with_exclusion(mut self, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(MtwError::BadDomain(
                "exclusion radius must be nonnegative".into(),
            ));
        }
        self.excluded_diagonal_radius = radius;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &Point) -> Point {
        Point::from_fn(self.dim(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn center(&self) -> Point {
        (&self.lower + &self.upper) * 0.5
    }

    /// Euclidean length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        (&self.upper - &self.lower).norm()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        Point::from_fn(self.dim(), |i, _| {
            rng.random_range(self.lower[i]..self.upper[i])
        })
    }

    /// Smallest Euclidean distance between a point of `self` and a point of
    /// `other` (0 when the boxes overlap).
    pub fn distance_to_box(&self, other: &DomainBox) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let gap = (self.lower[i] - other.upper[i])
                .max(other.lower[i] - self.upper[i])
                .max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    /// Exit parameter t > 0 of the ray x0 + t*dir, for x0 inside the box.
    pub fn ray_exit(&self, x0: &Point, dir: &Point) -> f64 {
        let mut t = f64::INFINITY;
        for i in 0..self.dim() {
            if dir[i] > 0.0 {
                t = t.min((self.upper[i] - x0[i]) / dir[i]);
            } else if dir[i] < 0.0 {
                t = t.min((self.lower[i] - x0[i]) / dir[i]);
            }
        }
        t.max(0.0)
    }
}

/// Minimum |x - y| a sampler must respect for this pair of domains.
pub fn pair_min_separation(omega: &DomainBox, omega_star: &DomainBox) -> f64 {
    omega
        .excluded_diagonal_radius
        .max(omega_star.excluded_diagonal_radius)
}

/// Unit vector at a given angle (dim 2 helper).
pub fn unit2(angle: f64) -> Point {
    point(&[angle.cos(), angle.sin()])
}

/// Deterministic near-uniform directions on the unit sphere (dim 3) or
/// circle (dim 2); evenly spread for any count.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Point> {
    match dim {
        1 => vec![point(&[1.0]), point(&[-1.0])],
        2 => (0..count)
            .map(|j| unit2(std::f64::consts::TAU * j as f64 / count as f64))
            .collect(),
        _ => {
            // Fibonacci lattice on S^2; higher dimensions are not needed by
            // the direction-hungry operations (ray meshing, probe scans).
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..count)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = std::f64::consts::TAU * (j as f64 / golden).fract();
                    let mut v = vec![r * phi.cos(), r * phi.sin(), z];
                    v.resize(dim, 0.0);
                    point(&v)
                })
                .collect()
        }
    }
}

/// Orthonormal basis of the hyperplane orthogonal to `normal`.
pub fn tangent_basis(normal: &Point) -> Vec<Point> {
    let n = normal.len();
    let unit = normal / normal.norm();
    if n == 2 {
        return vec![point(&[-unit[1], unit[0]])];
    }
    let mut basis = Vec::with_capacity(n - 1);
    for k in 0..n {
        let mut v = Point::zeros(n);
        v[k] = 1.0;
        v -= &unit * unit[k];
        for b in &basis {
            let proj = v.dot(b);
            v -= b * proj;
        }
        let len = v.norm();
        if len > 1e-8 {
            basis.push(v / len);
            if basis.len() == n - 1 {
                break;
            }
        }
    }
    basis
}

/// Distance from a point to a segment [a, b].
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let denom = ab.norm_squared();
    if denom == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / denom).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Signed polygon area (shoelace); vertices in order, dim 2.
pub fn polygon_area(vertices: &[Point]) -> f64 {
    let k = vertices.len();
    if k < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..k {
        let a = &vertices[i];
        let b = &vertices[(i + 1) % k];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s * 0.5
}

/// Convex hull of a planar point set (monotone chain), counterclockwise.
/// Collinear boundary points are dropped.
pub fn convex_hull_2d(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts.iter().map(|&(x, y)| point(&[x, y])).collect();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower.iter().map(|&(x, y)| point(&[x, y])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_rejects_inverted_bounds() {
        let b = DomainBox::new(point(&[0.0, 1.0]), point(&[1.0, 0.5]));
        assert!(b.is_err());
    }

    #[test]
    fn box_geometry() {
        let b = DomainBox::cube(2, -1.0, 1.0).unwrap();
        assert!(b.contains(&[0.3, -0.9]));
        assert!(!b.contains(&[0.3, -1.1]));
        assert_eq!(b.center(), point(&[0.0, 0.0]));
        assert_relative_eq!(b.diagonal(), 8.0_f64.sqrt());
        let clamped = b.clamp(&point(&[2.0, 0.1]));
        assert_eq!(clamped, point(&[1.0, 0.1]));
    }

    #[test]
    fn box_distance() {
        let a = DomainBox::cube(2, -1.5, -0.5).unwrap();
        let b = DomainBox::cube(2, 0.5, 1.5).unwrap();
        assert_relative_eq!(a.distance_to_box(&b), 2.0_f64.sqrt());
        let c = DomainBox::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(c.distance_to_box(&c), 0.0);
    }

    #[test]
    fn ray_exit_hits_nearest_face() {
        let b = DomainBox::cube(2, -1.0, 1.0).unwrap();
        let t = b.ray_exit(&point(&[0.5, 0.0]), &point(&[1.0, 0.0]));
        assert_relative_eq!(t, 0.5);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for normal in [point(&[3.0, 4.0]), point(&[0.0, 1.0])] {
            let basis = tangent_basis(&normal);
            assert_eq!(basis.len(), 1);
            assert_relative_eq!(basis[0].norm(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(basis[0].dot(&normal), 0.0, epsilon = 1e-14);
        }
        let basis = tangent_basis(&point(&[1.0, 1.0, 1.0]));
        assert_eq!(basis.len(), 2);
        assert_relative_eq!(basis[0].dot(&basis[1]), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn hull_and_area_on_square() {
        let square = vec![
            point(&[0.0, 0.0]),
            point(&[1.0, 0.0]),
            point(&[1.0, 1.0]),
            point(&[0.0, 1.0]),
        ];
        assert_relative_eq!(polygon_area(&square).abs(), 1.0);
        let mut cloud = square.clone();
        cloud.push(point(&[0.5, 0.5]));
        let hull = convex_hull_2d(&cloud);
        assert_eq!(hull.len(), 4);
        assert_relative_eq!(polygon_area(&hull).abs(), 1.0);
    }

    #[test]
    fn segment_distance() {
        let a = point(&[0.0, 0.0]);
        let b = point(&[2.0, 0.0]);
        assert_relative_eq!(point_segment_distance(&point(&[1.0, 1.5]), &a, &b), 1.5);
        assert_relative_eq!(point_segment_distance(&point(&[-1.0, 0.0]), &a, &b), 1.0);
    }
}
