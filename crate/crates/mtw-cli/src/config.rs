//! Plain-text experiment configuration with command-line overrides.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Keys outside [`KNOWN_KEYS`] are rejected so a typo cannot
//! silently fall back to a default. Every getter records the value it
//! resolved (flag, file, or default) so the emitted run record embeds the
//! complete effective configuration, and the digest covers exactly those
//! resolved pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mtw_core::{DomainBox, Point};

/// Every key any subcommand consults. Keys meant for other subcommands are
/// legal in a shared config file; they are ignored and left out of the
/// resolved header.
pub const KNOWN_KEYS: &[&str] = &[
    "ball",
    "budget",
    "cost",
    "dim",
    "directions",
    "eta",
    "max_steps",
    "method",
    "momentum",
    "omega_lower",
    "omega_star_lower",
    "omega_star_upper",
    "omega_upper",
    "out",
    "params",
    "phi",
    "pieces",
    "potentials",
    "radius_local",
    "resolution",
    "resolution_dual",
    "samples",
    "save_phi",
    "seed",
    "spacing",
    "theta",
    "theta_pairs",
    "thetas",
    "tolerance",
    "x",
    "x0",
    "xi",
    "y",
    "y0",
    "y1",
];

#[derive(Debug)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = match raw.find('#') {
                    Some(i) => &raw[..i],
                    None => raw,
                }
                .trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    format!(
                        "{}:{}: expected `key = value`, got `{line}`",
                        path.display(),
                        lineno + 1
                    )
                })?;
                let key = key.trim().to_string();
                let value = value.trim().to_string();
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return Err(format!(
                        "{}:{}: unknown config key `{key}`",
                        path.display(),
                        lineno + 1
                    ));
                }
                if file.insert(key.clone(), value).is_some() {
                    return Err(format!(
                        "{}:{}: duplicate config key `{key}`",
                        path.display(),
                        lineno + 1
                    ));
                }
            }
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Flag > file > default; the winning rendering is recorded.
    fn raw(&mut self, key: &str, flag: Option<String>, default: Option<String>) -> Option<String> {
        let value = flag.or_else(|| self.file.get(key).cloned()).or(default);
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.clone());
        }
        value
    }

    pub fn string(&mut self, key: &str, flag: Option<&str>, default: &str) -> String {
        self.raw(key, flag.map(str::to_string), Some(default.to_string()))
            .unwrap()
    }

    pub fn opt_string(&mut self, key: &str, flag: Option<&str>) -> Option<String> {
        self.raw(key, flag.map(str::to_string), None)
    }

    pub fn u64v(&mut self, key: &str, flag: Option<u64>, default: u64) -> Result<u64, String> {
        self.raw(key, flag.map(|v| v.to_string()), Some(default.to_string()))
            .unwrap()
            .parse()
            .map_err(|e| format!("config key `{key}`: {e}"))
    }

    pub fn usizev(
        &mut self,
        key: &str,
        flag: Option<usize>,
        default: usize,
    ) -> Result<usize, String> {
        self.raw(key, flag.map(|v| v.to_string()), Some(default.to_string()))
            .unwrap()
            .parse()
            .map_err(|e| format!("config key `{key}`: {e}"))
    }

    pub fn f64v(&mut self, key: &str, flag: Option<f64>, default: f64) -> Result<f64, String> {
        self.raw(key, flag.map(fmt_f64), Some(fmt_f64(default)))
            .unwrap()
            .parse()
            .map_err(|e| format!("config key `{key}`: {e}"))
    }

    pub fn point(
        &mut self,
        key: &str,
        flag: Option<&str>,
        default: &Point,
        dim: usize,
    ) -> Result<Point, String> {
        let rendered = self
            .raw(key, flag.map(str::to_string), Some(fmt_point(default)))
            .unwrap();
        let p = parse_point(&rendered).map_err(|e| format!("config key `{key}`: {e}"))?;
        if p.len() != dim {
            return Err(format!(
                "config key `{key}`: expected {dim} coordinates, got {}",
                p.len()
            ));
        }
        Ok(p)
    }

    pub fn opt_point(
        &mut self,
        key: &str,
        flag: Option<&str>,
        dim: usize,
    ) -> Result<Option<Point>, String> {
        match self.raw(key, flag.map(str::to_string), None) {
            None => Ok(None),
            Some(rendered) => {
                let p = parse_point(&rendered).map_err(|e| format!("config key `{key}`: {e}"))?;
                if p.len() != dim {
                    return Err(format!(
                        "config key `{key}`: expected {dim} coordinates, got {}",
                        p.len()
                    ));
                }
                Ok(Some(p))
            }
        }
    }

    pub fn f64_list(
        &mut self,
        key: &str,
        flag: Option<&str>,
        default: &[f64],
    ) -> Result<Vec<f64>, String> {
        let rendered = self
            .raw(
                key,
                flag.map(str::to_string),
                Some(
                    default
                        .iter()
                        .map(|v| fmt_f64(*v))
                        .collect::<Vec<_>>()
                        .join(","),
                ),
            )
            .unwrap();
        parse_f64_list(&rendered).map_err(|e| format!("config key `{key}`: {e}"))
    }

    pub fn domain_box(
        &mut self,
        lower_key: &str,
        upper_key: &str,
        flags: (Option<&str>, Option<&str>),
        default: &DomainBox,
        dim: usize,
    ) -> Result<DomainBox, String> {
        let lower = self.point(lower_key, flags.0, &default.lower, dim)?;
        let upper = self.point(upper_key, flags.1, &default.upper, dim)?;
        DomainBox::new(lower, upper).map_err(|e| e.to_string())
    }

    /// `config key=value` lines for the record, sorted by key.
    pub fn header_lines(&self) -> Vec<String> {
        self.resolved
            .iter()
            .map(|(k, v)| format!("config {k}={v}"))
            .collect()
    }

    /// FNV-1a over the sorted resolved pairs.
    pub fn digest(&self) -> String {
        let canonical: String = self
            .resolved
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Shortest round-trip rendering, stable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_point(p: &Point) -> String {
    p.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number `{}`: {e}", t.trim()))
        })
        .collect()
}

pub fn parse_point(s: &str) -> Result<Point, String> {
    let vals = parse_f64_list(s)?;
    if vals.is_empty() {
        return Err("empty coordinate list".into());
    }
    Ok(Point::from_vec(vals))
}

/// `a:b,c:d` pairs for nesting comparisons.
pub fn parse_theta_pairs(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected `theta:theta'`, got `{pair}`"))?;
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|e| format!("bad theta `{a}`: {e}"))?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|e| format!("bad theta `{b}`: {e}"))?;
            Ok((a, b))
        })
        .collect()
}
