//! Point cloud files, report tables and saved models.
//!
//! Coordinates are written with 9 significant digits, so a write/parse/write
//! cycle is byte-stable.

mod dataset;
mod model;

pub use dataset::{load_dataset_dir, write_dataset_dir, Dataset};
pub use model::{load_model, save_model, ModelManifest, SavedModel};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::scoring::ScoreTable;
use crate::tasks::{AblationRow, EvalRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

impl CloudFormat {
    /// Chooses by extension: `.xyz`/`.txt` or `.ply`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("xyz" | "txt") => Ok(Self::Xyz),
            Some("ply") => Ok(Self::PlyAscii),
            _ => invalid_arg(format!("cannot infer a cloud format from {}", path.display())),
        }
    }
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, message: message.into() })
}

fn parse_float(tok: &str, line: usize) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => parse_err(line, format!("non-finite value {tok:?}")),
        Err(_) => parse_err(line, format!("not a number: {tok:?}")),
    }
}

/// One `x y z` triple per line; blank lines and `#` comments are skipped.
/// Further columns are accepted and ignored.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut pts = Vec::new();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() < 3 {
            return parse_err(line, format!("expected x y z, found {} field(s)", toks.len()));
        }
        let vals = toks[..3].iter().map(|t| parse_float(t, line)).collect::<Result<Vec<_>>>()?;
        pts.push([vals[0], vals[1], vals[2]]);
    }
    if pts.is_empty() {
        return parse_err(last, "empty cloud");
    }
    PointCloud::new(pts)
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    has_list: bool,
}

/// ASCII PLY; only the `vertex` element's `x`, `y`, `z` are read.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return parse_err(1, "missing `ply` magic line"),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut format_seen = false;
    let mut end = None;
    for (line, l) in lines.by_ref() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => format_seen = true,
            ["format", kind, ..] => {
                return parse_err(line, format!("unsupported PLY format {kind:?}; only ascii is supported"))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .or_else(|_| parse_err(line, format!("bad element count {count:?}")))?;
                elements.push(PlyElement { name: name.to_string(), count, props: vec![], has_list: false });
            }
            ["property", "list", ..] => match elements.last_mut() {
                Some(e) => {
                    e.props.push(String::new());
                    e.has_list = true;
                }
                None => return parse_err(line, "property before any element"),
            },
            ["property", _, name] => match elements.last_mut() {
                Some(e) => e.props.push(name.to_string()),
                None => return parse_err(line, "property before any element"),
            },
            ["end_header"] => {
                end = Some(line);
                break;
            }
            _ => return parse_err(line, format!("unrecognised header line {l:?}")),
        }
    }
    let Some(header_end) = end else {
        return parse_err(text.lines().count(), "missing end_header");
    };
    if !format_seen {
        return parse_err(header_end, "missing format line");
    }
    let Some(vi) = elements.iter().position(|e| e.name == "vertex") else {
        return parse_err(header_end, "no vertex element");
    };
    let vertex = &elements[vi];
    if vertex.has_list {
        return parse_err(header_end, "list properties on vertices are not supported");
    }
    let col = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|p| p == axis)
            .map_or_else(|| parse_err(header_end, format!("vertex has no {axis} property")), Ok)
    };
    let cols = [col("x")?, col("y")?, col("z")?];
    let skip: usize = elements[..vi].iter().map(|e| e.count).sum();
    let mut body = lines.filter(|(_, l)| !l.is_empty()).skip(skip);
    let mut pts = Vec::with_capacity(vertex.count);
    for n in 0..vertex.count {
        let Some((line, l)) = body.next() else {
            return parse_err(
                text.lines().count(),
                format!("vertex count mismatch: header declares {}, found {n}", vertex.count),
            );
        };
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != vertex.props.len() {
            return parse_err(
                line,
                format!("expected {} vertex fields, found {}", vertex.props.len(), toks.len()),
            );
        }
        pts.push([
            parse_float(toks[cols[0]], line)?,
            parse_float(toks[cols[1]], line)?,
            parse_float(toks[cols[2]], line)?,
        ]);
    }
    if pts.is_empty() {
        return parse_err(header_end, "empty cloud");
    }
    PointCloud::new(pts)
}

pub fn parse_cloud_str(text: &str, format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::Xyz => parse_xyz(text),
        CloudFormat::PlyAscii => parse_ply(text),
    }
}

/// Reads a cloud, inferring the format from the extension when not given.
pub fn read_cloud(path: &Path, format: Option<CloudFormat>) -> Result<PointCloud> {
    let format = match format {
        Some(f) => f,
        None => CloudFormat::from_path(path)?,
    };
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Parse { line: 1, message: "file is not UTF-8 text (binary PLY?)".into() })?;
    parse_cloud_str(&text, format)
}

/// Shortest decimal form of `v` rounded to 9 significant digits.
pub fn format_coord(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    // Avoid "-0".
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

fn push_point(out: &mut String, p: &Point3) {
    let _ = writeln!(out, "{} {} {}", format_coord(p[0]), format_coord(p[1]), format_coord(p[2]));
}

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for p in cloud.coords() {
        push_point(&mut out, p);
    }
    out
}

pub fn write_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    for p in cloud.coords() {
        push_point(&mut out, p);
    }
    out
}

pub fn cloud_to_string(cloud: &PointCloud, format: CloudFormat) -> String {
    match format {
        CloudFormat::Xyz => write_xyz(cloud),
        CloudFormat::PlyAscii => write_ply(cloud),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: Option<CloudFormat>) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => CloudFormat::from_path(path)?,
    };
    std::fs::write(path, cloud_to_string(cloud, format))?;
    Ok(())
}

pub const SCORE_HEADER: &str = "index,x,y,z,point_score,shape_score,total";

pub fn score_csv(cloud: &PointCloud, table: &ScoreTable) -> Result<String> {
    if cloud.len() != table.len() {
        return invalid_arg("score table and cloud differ in length");
    }
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for (i, p) in cloud.coords().iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            format_coord(p[0]),
            format_coord(p[1]),
            format_coord(p[2]),
            table.point_score[i],
            table.shape_score[i],
            table.total[i]
        );
    }
    Ok(out)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("sampler,M,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.sampler, r.m, r.accuracy);
    }
    out
}

/// `{"rows": [...], "by_sampler": {name: {M: accuracy}}}`.
pub fn eval_summary(rows: &[EvalRow]) -> serde_json::Value {
    let mut by = serde_json::Map::new();
    for r in rows {
        let entry = by
            .entry(r.sampler.clone())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
        if let serde_json::Value::Object(m) = entry {
            m.insert(r.m.to_string(), serde_json::json!(r.accuracy));
        }
    }
    serde_json::json!({ "rows": rows, "by_sampler": by })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("sweep,k,alpha,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.sweep, r.k, r.alpha, r.accuracy);
    }
    out
}

#[cfg(test)]
mod tests;
