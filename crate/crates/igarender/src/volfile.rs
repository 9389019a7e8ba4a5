//! Plain-text volume files.
//!
//! ```text
//! # optional comments
//! igavol 1
//! dim 3
//! degrees 2 2 2
//! knots 0 0 0 0.5 1 1 1
//! knots 0 0 0 1 1 1
//! knots 0 0 1 1
//! size 4 3 2
//! points
//! 0.0 0.0 0.0
//! ...
//! ```
//!
//! `knots` lines give the `u`, `v` and `w` vectors in order; `size` is
//! optional and checked against the knot vectors when present. Control
//! points follow `points`, `dim` numbers each, `i` varying fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::spline::{BSplineVolume, KnotVector, SplineError};

pub const MAGIC: &str = "igavol";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("{path}: {what}: {source}")]
    Spline { path: String, what: String, source: SplineError },
}

fn syntax(path: &str, line: usize, msg: impl Into<String>) -> VolumeError {
    VolumeError::Syntax { path: path.to_string(), line, msg: msg.into() }
}

fn numbers<T: std::str::FromStr>(words: &[&str], path: &str, line: usize) -> Result<Vec<T>, VolumeError> {
    words.iter().map(|w| w.parse::<T>().map_err(|_| syntax(path, line, format!("not a number: `{w}`")))).collect()
}

/// Parses volume text; `path` is only used in error messages.
pub fn parse_volume(text: &str, path: &str) -> Result<BSplineVolume, VolumeError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (n, first) = lines.next().ok_or_else(|| syntax(path, 1, "empty file"))?;
    let head: Vec<&str> = first.split_whitespace().collect();
    if head.first() != Some(&MAGIC) {
        return Err(syntax(path, n, format!("expected `{MAGIC} {VERSION}` header")));
    }
    if head.get(1).and_then(|v| v.parse::<u32>().ok()) != Some(VERSION) {
        return Err(syntax(path, n, format!("unsupported version, expected {VERSION}")));
    }

    let mut dim = None;
    let mut degrees: Option<[usize; 3]> = None;
    let mut knots: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut size: Option<(usize, [usize; 3])> = None;
    let mut points_line = None;
    for (n, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words[0] {
            "dim" => {
                let v = numbers::<usize>(&words[1..], path, n)?;
                if v.len() != 1 {
                    return Err(syntax(path, n, "`dim` takes one value"));
                }
                dim = Some(v[0]);
            }
            "degrees" => {
                let v = numbers::<usize>(&words[1..], path, n)?;
                degrees = Some(v.try_into().map_err(|_| syntax(path, n, "`degrees` takes three values"))?);
            }
            "knots" => {
                if knots.len() == 3 {
                    return Err(syntax(path, n, "more than three knot vectors"));
                }
                knots.push((n, numbers(&words[1..], path, n)?));
            }
            "size" => {
                let v = numbers::<usize>(&words[1..], path, n)?;
                size = Some((n, v.try_into().map_err(|_| syntax(path, n, "`size` takes three values"))?));
            }
            "points" => {
                points_line = Some(n);
                break;
            }
            other => return Err(syntax(path, n, format!("unknown keyword `{other}`"))),
        }
    }
    let points_line = points_line.ok_or_else(|| syntax(path, 0, "missing `points` section"))?;
    let dim = dim.ok_or_else(|| syntax(path, points_line, "missing `dim`"))?;
    let degrees = degrees.ok_or_else(|| syntax(path, points_line, "missing `degrees`"))?;
    if knots.len() != 3 {
        return Err(syntax(path, points_line, format!("expected 3 knot vectors, found {}", knots.len())));
    }
    let mut kvs = Vec::with_capacity(3);
    for (axis, ((_, k), p)) in knots.into_iter().zip(degrees).enumerate() {
        let kv = KnotVector::new(k, p).map_err(|source| VolumeError::Spline {
            path: path.to_string(),
            what: format!("knots {}", ["u", "v", "w"][axis]),
            source,
        })?;
        kvs.push(kv);
    }
    let kvs: [KnotVector; 3] = kvs.try_into().expect("three knot vectors");
    if let Some((n, s)) = size {
        let expected = [kvs[0].num_basis(), kvs[1].num_basis(), kvs[2].num_basis()];
        if s != expected {
            return Err(syntax(path, n, format!("size {s:?} does not match the knot vectors ({expected:?})")));
        }
    }
    let mut points = Vec::new();
    for (n, line) in lines {
        points.extend(numbers::<f64>(&line.split_whitespace().collect::<Vec<_>>(), path, n)?);
    }
    BSplineVolume::new(kvs, dim, points).map_err(|source| VolumeError::Spline {
        path: path.to_string(),
        what: "control points".into(),
        source,
    })
}

pub fn load_volume(path: &Path) -> Result<BSplineVolume, VolumeError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| VolumeError::Io { path: p.clone(), source })?;
    parse_volume(&text, &p)
}

/// Text form of a volume; floats use the shortest round-tripping notation.
pub fn format_volume(vol: &BSplineVolume) -> String {
    let mut out = format!("{MAGIC} {VERSION}\ndim {}\n", vol.dim());
    let k = vol.knots();
    let _ = writeln!(out, "degrees {} {} {}", k[0].degree(), k[1].degree(), k[2].degree());
    for kv in k {
        out.push_str("knots");
        for x in kv.knots() {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    let s = vol.size();
    let _ = writeln!(out, "size {} {} {}\npoints", s[0], s[1], s[2]);
    for cp in vol.points().chunks(vol.dim()) {
        let line: Vec<String> = cp.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_volume(vol: &BSplineVolume, path: &Path) -> Result<(), VolumeError> {
    fs::write(path, format_volume(vol)).map_err(|source| VolumeError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn round_trip_is_exact() {
        let bar = models::twisted_bar();
        let back = parse_volume(&format_volume(&bar), "mem").unwrap();
        assert_eq!(back, bar);
    }

    #[test]
    fn errors_name_the_file() {
        let text = "igavol 1\ndim 1\ndegrees 1 1 1\nknots 0 0 1 0.5\nknots 0 0 1 1\nknots 0 0 1 1\npoints\n";
        let e = parse_volume(text, "bad.vol").unwrap_err().to_string();
        assert!(e.starts_with("bad.vol: knots u"), "{e}");
        let e = parse_volume("igavol 1\nfoo 2\n", "x.vol").unwrap_err().to_string();
        assert_eq!(e, "x.vol:2: unknown keyword `foo`");
    }
}
