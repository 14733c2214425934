//! Uniform box grids and scalar potentials sampled on them.
//!
//! Nodes include both box faces: along axis k with resolution r there are r
//! nodes at spacing side/(r-1). Values are stored row-major with the last
//! axis fastest, so the flat index order is the lexicographic order of the
//! multi-index; every tie-break in the crate leans on that.

use std::io::{BufRead, Read, Write};

use crate::error::{MtwError, Result};
use crate::geometry::{DomainBox, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub domain: DomainBox,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(domain: DomainBox, resolution: Vec<usize>) -> Result<Self> {
        if resolution.len() != domain.dim() {
            return Err(MtwError::DimensionMismatch {
                expected: domain.dim(),
                got: resolution.len(),
            });
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(MtwError::BadDomain(
                "grid resolution must be at least 2 per dimension".into(),
            ));
        }
        Ok(GridSpec { domain, resolution })
    }

    pub fn square(domain: DomainBox, res: usize) -> Result<Self> {
        let dim = domain.dim();
        Self::new(domain, vec![res; dim])
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.side(axis) / (self.resolution[axis] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|k| self.spacing(k))
            .fold(0.0, f64::max)
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.resolution[k + 1];
        }
        s
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.strides()
            .iter()
            .map(|&s| {
                let i = rest / s;
                rest %= s;
                i
            })
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum()
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        self.domain.lower[axis] + self.spacing(axis) * index as f64
    }

    pub fn node(&self, flat: usize) -> Point {
        let multi = self.multi_index(flat);
        Point::from_fn(self.dim(), |k, _| self.coordinate(k, multi[k]))
    }

    /// All node coordinates flattened (len * dim), for hot loops.
    pub fn node_table(&self) -> Vec<f64> {
        let n = self.dim();
        let mut table = Vec::with_capacity(self.len() * n);
        let mut multi = vec![0usize; n];
        for _ in 0..self.len() {
            for k in 0..n {
                table.push(self.coordinate(k, multi[k]));
            }
            for k in (0..n).rev() {
                multi[k] += 1;
                if multi[k] < self.resolution[k] {
                    break;
                }
                multi[k] = 0;
            }
        }
        table
    }

    /// Flat index of the node nearest to x (componentwise rounding).
    pub fn nearest_node(&self, x: &Point) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = (x[k] - self.domain.lower[k]) / self.spacing(k);
            let i = t.round();
            if i < -0.5 || i > (self.resolution[k] - 1) as f64 + 0.5 {
                return None;
            }
            multi.push(i.clamp(0.0, (self.resolution[k] - 1) as f64) as usize);
        }
        Some(self.flat_index(&multi))
    }

    /// Face neighbors (2n) of a node, for flood fills.
    pub fn face_neighbors(&self, flat: usize, out: &mut Vec<usize>) {
        out.clear();
        let multi = self.multi_index(flat);
        let strides = self.strides();
        for k in 0..self.dim() {
            if multi[k] > 0 {
                out.push(flat - strides[k]);
            }
            if multi[k] + 1 < self.resolution[k] {
                out.push(flat + strides[k]);
            }
        }
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.resolution)
            .all(|(&i, &r)| i > 0 && i + 1 < r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPotential {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridPotential {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MtwError::Invalid(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MtwError::Invalid("potential values must be finite".into()));
        }
        Ok(GridPotential { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        let values = vec![value; grid.len()];
        GridPotential { grid, values }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let table = grid.node_table();
        let n = grid.dim();
        let values = (0..grid.len())
            .map(|i| f(&table[i * n..(i + 1) * n]))
            .collect();
        GridPotential { grid, values }
    }

    /// Gradient by central differences, one-sided at the boundary.
    pub fn gradient_at(&self, flat: usize) -> Point {
        let grid = &self.grid;
        let multi = grid.multi_index(flat);
        let strides = grid.strides();
        Point::from_fn(grid.dim(), |k, _| {
            let h = grid.spacing(k);
            let i = multi[k];
            let r = grid.resolution[k];
            if i > 0 && i + 1 < r {
                (self.values[flat + strides[k]] - self.values[flat - strides[k]]) / (2.0 * h)
            } else if i == 0 {
                (self.values[flat + strides[k]] - self.values[flat]) / h
            } else {
                (self.values[flat] - self.values[flat - strides[k]]) / h
            }
        })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain-text form: a small header followed by one value per line in
    /// row-major order. Floats are written in shortest round-trip form, so
    /// write/read is exact.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e: std::io::Error| MtwError::GridIo(e.to_string());
        let g = &self.grid;
        writeln!(w, "potential-grid v1").map_err(io)?;
        writeln!(w, "dim {}", g.dim()).map_err(io)?;
        let join = |v: &[String]| v.join(" ");
        writeln!(
            w,
            "resolution {}",
            join(&g.resolution.iter().map(|r| r.to_string()).collect::<Vec<_>>())
        )
        .map_err(io)?;
        writeln!(
            w,
            "lower {}",
            join(&g.domain.lower.iter().map(|v| v.to_string()).collect::<Vec<_>>())
        )
        .map_err(io)?;
        writeln!(
            w,
            "upper {}",
            join(&g.domain.upper.iter().map(|v| v.to_string()).collect::<Vec<_>>())
        )
        .map_err(io)?;
        writeln!(w, "exclusion {}", g.domain.excluded_diagonal_radius).map_err(io)?;
        writeln!(w, "values {}", self.values.len()).map_err(io)?;
        for v in &self.values {
            writeln!(w, "{v}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| MtwError::GridIo("unexpected end of file".into()))?
                .map_err(|e| MtwError::GridIo(e.to_string()))
        };
        let header = next()?;
        if header.trim() != "potential-grid v1" {
            return Err(MtwError::GridIo(format!(
                "unrecognized header `{header}`"
            )));
        }
        let dim = parse_tagged::<usize>(&next()?, "dim")?[0];
        let resolution = parse_tagged::<usize>(&next()?, "resolution")?;
        let lower = parse_tagged::<f64>(&next()?, "lower")?;
        let upper = parse_tagged::<f64>(&next()?, "upper")?;
        let exclusion = parse_tagged::<f64>(&next()?, "exclusion")?[0];
        let count = parse_tagged::<usize>(&next()?, "values")?[0];
        if resolution.len() != dim || lower.len() != dim || upper.len() != dim {
            return Err(MtwError::GridIo("inconsistent header dimensions".into()));
        }
        let domain = DomainBox::new(
            Point::from_vec(lower),
            Point::from_vec(upper),
        )?
        .with_exclusion(exclusion)?;
        let grid = GridSpec::new(domain, resolution)?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| MtwError::GridIo(format!("bad value line `{line}`")))?;
            values.push(v);
        }
        GridPotential::new(grid, values)
    }

    /// Binary form: magic, little-endian header, then raw f64 values.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e: std::io::Error| MtwError::GridIo(e.to_string());
        let g = &self.grid;
        w.write_all(b"PGRDv1\0\0").map_err(io)?;
        w.write_all(&(g.dim() as u64).to_le_bytes()).map_err(io)?;
        for &r in &g.resolution {
            w.write_all(&(r as u64).to_le_bytes()).map_err(io)?;
        }
        for v in g.domain.lower.iter().chain(g.domain.upper.iter()) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&g.domain.excluded_diagonal_radius.to_le_bytes())
            .map_err(io)?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())
            .map_err(io)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let io = |e: std::io::Error| MtwError::GridIo(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"PGRDv1\0\0" {
            return Err(MtwError::GridIo("bad magic".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(io)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let dim = read_u64(r)? as usize;
        if dim == 0 || dim > 16 {
            return Err(MtwError::GridIo(format!("implausible dimension {dim}")));
        }
        let mut resolution = Vec::with_capacity(dim);
        for _ in 0..dim {
            resolution.push(read_u64(r)? as usize);
        }
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf).map_err(io)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut lower = Point::zeros(dim);
        for k in 0..dim {
            lower[k] = read_f64(r)?;
        }
        let mut upper = Point::zeros(dim);
        for k in 0..dim {
            upper[k] = read_f64(r)?;
        }
        let exclusion = read_f64(r)?;
        let count = {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io)?;
            u64::from_le_bytes(b) as usize
        };
        let domain = DomainBox::new(lower, upper)?.with_exclusion(exclusion)?;
        let grid = GridSpec::new(domain, resolution)?;
        if count != grid.len() {
            return Err(MtwError::GridIo(format!(
                "value count {count} does not match grid size {}",
                grid.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io)?;
            values.push(f64::from_le_bytes(b));
        }
        GridPotential::new(grid, values)
    }
}

fn parse_tagged<T: std::str::FromStr>(line: &str, tag: &str) -> Result<Vec<T>> {
    let mut parts = line.split_whitespace();
    let found = parts.next().unwrap_or("");
    if found != tag {
        return Err(MtwError::GridIo(format!(
            "expected `{tag}` line, found `{line}`"
        )));
    }
    let vals: std::result::Result<Vec<T>, _> = parts.map(|p| p.parse::<T>()).collect();
    let vals = vals.map_err(|_| MtwError::GridIo(format!("bad `{tag}` line `{line}`")))?;
    if vals.is_empty() {
        return Err(MtwError::GridIo(format!("empty `{tag}` line")));
    }
    Ok(vals)
}
