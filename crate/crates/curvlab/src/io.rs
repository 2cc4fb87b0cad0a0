//! CSV and JSON encodings of grid fields, measures, plans and reports.
//!
//! Every CSV file opens with a `#` comment line naming the quantity it holds;
//! grid fields put a JSON header with resolution and rank there instead.

use std::path::Path;

use curvlab_core::geodesic::{Distance, DistanceMethod, GeodesicSolution};
use curvlab_core::mollify::CommutatorReport;
use curvlab_core::transport::{DiscreteMeasure, ReferenceVolume, TransportPlan};
use curvlab_core::{PeriodicGridField, Rank};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

/// Shortest round-trip decimal form; `Debug` switches to exponent notation
/// for very large and very small magnitudes.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// A CSV table with a leading quantity comment.
pub struct Table {
    comment: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(quantity: &str, header: &[&str]) -> Self {
        Table {
            comment: quantity.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("# {}\n", self.comment).into_bytes();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.extend(w.into_inner().expect("in-memory flush"));
        out
    }
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes)
}

fn format_err(path: &Path, message: impl Into<String>) -> RunError {
    RunError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format_err(path, format!("bad number {s:?}: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FieldHeader {
    quantity: String,
    resolution: usize,
    rank: Rank,
}

fn component_names(rank: Rank) -> &'static [&'static str] {
    match rank {
        Rank::Scalar => &["value"],
        Rank::Vector => &["vx", "vy"],
        Rank::Matrix => &["m11", "m12", "m21", "m22"],
    }
}

/// One row per node: `i, j, components…`, with a JSON header line.
pub fn field_to_csv(field: &PeriodicGridField, quantity: &str) -> Vec<u8> {
    let header = FieldHeader {
        quantity: quantity.to_string(),
        resolution: field.resolution(),
        rank: field.rank(),
    };
    let mut out = format!("# {}\n", serde_json::to_string(&header).expect("plain struct")).into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut cols = vec!["i", "j"];
    cols.extend(component_names(field.rank()));
    w.write_record(&cols).expect("in-memory write");
    let n = field.resolution();
    for j in 0..n {
        for i in 0..n {
            let mut row = vec![i.to_string(), j.to_string()];
            for c in 0..field.rank().components() {
                row.push(num(field.get(i, j, c)));
            }
            w.write_record(&row).expect("in-memory write");
        }
    }
    out.extend(w.into_inner().expect("in-memory flush"));
    out
}

pub fn field_from_csv(bytes: &[u8], path: &Path) -> Result<(PeriodicGridField, String)> {
    let text = std::str::from_utf8(bytes).map_err(|e| format_err(path, e.to_string()))?;
    let first = text.lines().next().unwrap_or_default();
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| format_err(path, "missing field header line"))?;
    let header: FieldHeader = serde_json::from_str(json.trim()).map_err(|e| format_err(path, e.to_string()))?;
    let n = header.resolution;
    let comps = header.rank.components();
    let mut field = PeriodicGridField::zeros(n, header.rank);
    let mut seen = 0usize;
    for rec in reader(bytes).records() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        if rec.len() != 2 + comps {
            return Err(format_err(
                path,
                format!("expected {} columns, got {}", 2 + comps, rec.len()),
            ));
        }
        let i: usize = rec[0].parse().map_err(|_| format_err(path, "bad node index"))?;
        let j: usize = rec[1].parse().map_err(|_| format_err(path, "bad node index"))?;
        if i >= n || j >= n {
            return Err(format_err(path, format!("node ({i}, {j}) outside a {n}×{n} grid")));
        }
        for c in 0..comps {
            field.set(i, j, c, parse_f64(path, &rec[2 + c])?);
        }
        seen += 1;
    }
    if seen != n * n {
        return Err(format_err(path, format!("expected {} nodes, got {seen}", n * n)));
    }
    Ok((field, header.quantity))
}

/// `x, y, weight, density` (density blank when unknown).
pub fn measure_to_csv(mu: &DiscreteMeasure, quantity: &str) -> Vec<u8> {
    let mut t = Table::new(quantity, &["x", "y", "weight", "density"]);
    let dens = mu.density();
    for (k, (p, w)) in mu.points().iter().zip(mu.weights()).enumerate() {
        t.push(vec![num(p[0]), num(p[1]), num(*w), opt(dens.map(|d| d[k]))]);
    }
    t.to_bytes()
}

pub fn measure_from_csv(bytes: &[u8], path: &Path) -> Result<DiscreteMeasure> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut density = Vec::new();
    let mut any_density = false;
    for rec in reader(bytes).records() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        if rec.len() < 3 {
            return Err(format_err(path, "measure rows need x, y, weight"));
        }
        points.push([parse_f64(path, &rec[0])?, parse_f64(path, &rec[1])?]);
        weights.push(parse_f64(path, &rec[2])?);
        match rec.get(3).map(str::trim).filter(|s| !s.is_empty()) {
            Some(s) => {
                any_density = true;
                density.push(parse_f64(path, s)?);
            }
            None => density.push(f64::NAN),
        }
    }
    let mu = DiscreteMeasure::new(points, weights)?;
    if any_density {
        if density.iter().any(|d| d.is_nan()) {
            return Err(format_err(path, "density column must be filled in every row or none"));
        }
        return Ok(mu.with_density(density, ReferenceVolume::Metric)?);
    }
    Ok(mu)
}

/// Sparse plan: `i, j, weight`.
pub fn plan_to_csv(plan: &TransportPlan) -> Vec<u8> {
    let mut t = Table::new(
        "optimal transport plan: mass moved from source i to target j",
        &["i", "j", "weight"],
    );
    for &(i, j, w) in &plan.entries {
        t.push(vec![i.to_string(), j.to_string(), num(w)]);
    }
    t.to_bytes()
}

pub fn commutator_to_csv(report: &CommutatorReport) -> Vec<u8> {
    let mut t = Table::new(
        &format!(
            "{}: sup-norms of {} on the grid per mollification radius",
            report.name, report.expression
        ),
        &["eps", "norm_C0", "norm_C1", "norm_C2"],
    );
    for r in &report.rows {
        t.push(vec![num(r.eps), num(r.norm_c0), opt(r.norm_c1), opt(r.norm_c2)]);
    }
    t.to_bytes()
}

pub fn geodesic_to_csv(sol: &GeodesicSolution, label: &str) -> Vec<u8> {
    let mut t = Table::new(
        &format!("{label}: geodesic position and velocity in the universal cover"),
        &["t", "x", "y", "vx", "vy"],
    );
    for (k, &time) in sol.times.iter().enumerate() {
        let p = sol.positions[k];
        let v = sol.velocities[k];
        t.push(vec![num(time), num(p[0]), num(p[1]), num(v[0]), num(v[1])]);
    }
    t.to_bytes()
}

/// Upper-triangle entries `(i, j, distance)` with the method that produced them.
pub fn distances_to_csv(pairs: &[(usize, usize, Distance)]) -> Vec<u8> {
    let mut t = Table::new(
        "geodesic distance between support points i and j",
        &["i", "j", "distance", "method"],
    );
    for (i, j, d) in pairs {
        let label = match d.method {
            DistanceMethod::Shooting { class } => format!("shooting[{},{}]", class[0], class[1]),
            DistanceMethod::Graph { spacing } => format!("graph[{}]", num(spacing)),
        };
        t.push(vec![i.to_string(), j.to_string(), num(d.value), label]);
    }
    t.to_bytes()
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable report");
    v.push(b'\n');
    v
}
