//! Plain-text model documents.
//!
//! ```text
//! velostat-kmeans 1
//! k 2
//! seed 42
//! restarts 10
//! max_iterations 300
//! tolerance 0.000001
//! missing profile-mean
//! normalize none
//! inertia 1.5
//! iterations 4
//! restarts_used 10
//! degenerate false
//! dimension 144
//! centroid 0 <144 values>
//! centroid 1 <144 values>
//! assignments 0 1 1 0
//! members 101:2016-09-13 101:2016-09-14 ..
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! written model reproduces every value bit for bit. `members` is omitted for
//! models fitted on raw points.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{ClusterError, ClusterModel, KmeansConfig, MemberInfo};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "velostat-kmeans";

impl ClusterModel {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {MODEL_FORMAT_VERSION}");
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "restarts {}", c.restarts);
        let _ = writeln!(out, "max_iterations {}", c.max_iterations);
        let _ = writeln!(out, "tolerance {}", c.tolerance);
        let _ = writeln!(out, "missing {}", c.missing);
        match c.normalize_by {
            Some(cap) => writeln!(out, "normalize {cap}"),
            None => writeln!(out, "normalize none"),
        }
        .ok();
        let _ = writeln!(out, "inertia {}", self.inertia);
        let _ = writeln!(out, "iterations {}", self.iterations);
        let _ = writeln!(out, "restarts_used {}", self.restarts_used);
        let _ = writeln!(out, "degenerate {}", self.degenerate);
        let _ = writeln!(out, "dimension {}", self.dims());
        for (i, centroid) in self.centroids.iter().enumerate() {
            let _ = write!(out, "centroid {i}");
            for v in centroid {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out.push_str("assignments");
        for a in &self.assignments {
            let _ = write!(out, " {a}");
        }
        out.push('\n');
        if !self.members.is_empty() {
            out.push_str("members");
            for m in &self.members {
                let _ = write!(out, " {}:{}", m.station_id, m.date);
            }
            out.push('\n');
        }
        out
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn err(line: usize, message: impl Into<String>) -> ClusterError {
        ClusterError::Format { line, message: message.into() }
    }

    /// Next line, which must start with `key`; returns its line number and the
    /// remaining whitespace-separated fields.
    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), ClusterError> {
        let (idx, line) = self.inner.next().ok_or_else(|| Self::err(0, format!("missing {key:?} line")))?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(key) {
            return Err(Self::err(idx + 1, format!("expected {key:?}")));
        }
        Ok((idx + 1, fields.collect()))
    }

    fn scalar<T: FromStr>(&mut self, key: &str) -> Result<T, ClusterError> {
        let (line, fields) = self.expect(key)?;
        match fields.as_slice() {
            [v] => v.parse().map_err(|_| Self::err(line, format!("bad {key} value {v:?}"))),
            _ => Err(Self::err(line, format!("{key} takes exactly one value"))),
        }
    }
}

fn parse_all<T: FromStr>(line: usize, fields: &[&str]) -> Result<Vec<T>, ClusterError> {
    fields.iter().map(|f| f.parse().map_err(|_| Lines::err(line, format!("bad value {f:?}")))).collect()
}

impl FromStr for ClusterModel {
    type Err = ClusterError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = Lines { inner: text.lines().enumerate().peekable() };
        let version: u32 = lines.scalar(MAGIC)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Lines::err(1, format!("unsupported model version {version}")));
        }
        let k: usize = lines.scalar("k")?;
        let seed = lines.scalar("seed")?;
        let restarts = lines.scalar("restarts")?;
        let max_iterations = lines.scalar("max_iterations")?;
        let tolerance = lines.scalar("tolerance")?;
        let missing = lines.scalar("missing")?;
        let normalize: String = lines.scalar("normalize")?;
        let normalize_by = match normalize.as_str() {
            "none" => None,
            v => Some(v.parse().map_err(|_| Lines::err(8, format!("bad normalize value {v:?}")))?),
        };
        let inertia = lines.scalar("inertia")?;
        let iterations = lines.scalar("iterations")?;
        let restarts_used = lines.scalar("restarts_used")?;
        let degenerate = lines.scalar("degenerate")?;
        let dims: usize = lines.scalar("dimension")?;

        let mut centroids = Vec::with_capacity(k);
        for i in 0..k {
            let (line, fields) = lines.expect("centroid")?;
            if fields.first().and_then(|f| f.parse::<usize>().ok()) != Some(i) {
                return Err(Lines::err(line, format!("expected centroid {i}")));
            }
            let values: Vec<f64> = parse_all(line, &fields[1..])?;
            if values.len() != dims {
                return Err(Lines::err(line, format!("centroid has {} values, dimension is {dims}", values.len())));
            }
            centroids.push(values);
        }

        let (line, fields) = lines.expect("assignments")?;
        let assignments: Vec<usize> = parse_all(line, &fields)?;
        if assignments.iter().any(|a| *a >= k) {
            return Err(Lines::err(line, "assignment index out of range"));
        }

        let mut members = Vec::new();
        if lines.inner.peek().is_some_and(|(_, l)| l.starts_with("members")) {
            let (line, fields) = lines.expect("members")?;
            for f in fields {
                let member = f.split_once(':').and_then(|(s, d)| {
                    Some(MemberInfo { station_id: s.parse().ok()?, date: d.parse().ok()? })
                });
                members.push(member.ok_or_else(|| Lines::err(line, format!("bad member {f:?}")))?);
            }
            if members.len() != assignments.len() {
                return Err(Lines::err(line, "members and assignments differ in length"));
            }
        }
        if let Some((idx, l)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Lines::err(idx + 1, format!("unexpected content {l:?}")));
        }

        let config = KmeansConfig { k, seed, restarts, max_iterations, tolerance, missing, normalize_by };
        config.validate()?;
        Ok(ClusterModel {
            k,
            centroids,
            assignments,
            inertia,
            iterations,
            seed,
            restarts_used,
            config,
            degenerate,
            members,
        })
    }
}
