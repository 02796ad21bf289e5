//! Grid files: a CSV of `(x0, .., x{d-1}, value)` rows and a JSON header
//! file describing the shape.

use std::path::{Path, PathBuf};

use perc_core::diagrams::{Grid, Shape, Tail};
use perc_core::lattice::ModelSpec;
use perc_core::sampling::ReplicaPlan;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::format_float;

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad grid header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Row { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Grid(#[from] perc_core::PercError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub dimension: usize,
    /// `"box"` or `"torus"`.
    pub shape: String,
    /// Box radius or torus period.
    pub size: i64,
    pub wrap: bool,
    pub seed: u64,
    pub first_stream: u64,
    pub replicas: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// `"vanishing"`, `"unknown"` or `"power_law <amplitude> <exponent>"`.
    pub tail: String,
}

impl GridMeta {
    /// Metadata for a two-point grid estimated on `model` at `p`; the shape
    /// is filled in when the grid is written.
    pub fn for_estimate(model: &ModelSpec, p: f64, plan: &ReplicaPlan) -> Self {
        GridMeta {
            dimension: model.dimension,
            shape: String::new(),
            size: 0,
            wrap: model.is_torus(),
            seed: plan.seed,
            first_stream: plan.first_stream,
            replicas: plan.replicas,
            p: Some(p),
            tail: String::new(),
        }
    }

    fn shape(&self) -> Result<Shape, String> {
        match self.shape.as_str() {
            "box" => Ok(Shape::Box { radius: self.size }),
            "torus" => Ok(Shape::Torus { period: self.size }),
            s => Err(format!("unknown shape {s:?}")),
        }
    }
}

fn tail_text(t: Tail) -> String {
    match t {
        Tail::Vanishing => "vanishing".into(),
        Tail::Unknown => "unknown".into(),
        Tail::PowerLaw { amplitude, exponent } => {
            format!("power_law {} {}", format_float(amplitude), format_float(exponent))
        }
    }
}

fn parse_tail(s: &str) -> Result<Tail, String> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    match parts.as_slice() {
        ["vanishing"] => Ok(Tail::Vanishing),
        ["unknown"] => Ok(Tail::Unknown),
        ["power_law", a, e] => Ok(Tail::PowerLaw {
            amplitude: a.parse().map_err(|_| format!("bad amplitude {a:?}"))?,
            exponent: e.parse().map_err(|_| format!("bad exponent {e:?}"))?,
        }),
        _ => Err(format!("unknown tail {s:?}")),
    }
}

/// The header file that accompanies `csv`.
pub fn header_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> GridIoError + '_ {
    move |source| GridIoError::Io { path: path.to_path_buf(), source }
}

pub fn grid_csv(g: &Grid) -> String {
    let mut out: String = (0..g.dim()).map(|i| format!("x{i},")).collect();
    out.push_str("value\n");
    for (x, v) in g.iter() {
        for c in x {
            out.push_str(&c.to_string());
            out.push(',');
        }
        out.push_str(&format_float(v));
        out.push('\n');
    }
    out
}

pub fn write_grid(csv: &Path, g: &Grid, meta: &GridMeta) -> Result<(), GridIoError> {
    let (shape, size) = match g.shape() {
        Shape::Box { radius } => ("box", radius),
        Shape::Torus { period } => ("torus", period),
    };
    let meta = GridMeta {
        dimension: g.dim(),
        shape: shape.into(),
        size,
        wrap: g.shape().is_torus(),
        tail: tail_text(g.tail()),
        ..meta.clone()
    };
    let json = serde_json::to_string_pretty(&meta).expect("serializable") + "\n";
    std::fs::write(header_path(csv), json).map_err(io(&header_path(csv)))?;
    std::fs::write(csv, grid_csv(g)).map_err(io(csv))
}

pub fn read_grid(csv: &Path) -> Result<(Grid, GridMeta), GridIoError> {
    let hp = header_path(csv);
    let text = std::fs::read_to_string(&hp).map_err(io(&hp))?;
    let meta: GridMeta =
        serde_json::from_str(&text).map_err(|e| GridIoError::Header { path: hp.clone(), reason: e.to_string() })?;
    let bad = |reason: String| GridIoError::Header { path: hp.clone(), reason };
    let shape = meta.shape().map_err(bad)?;
    let tail = parse_tail(&meta.tail).map_err(bad)?;
    let mut g = Grid::zeros(meta.dimension, shape)?.with_tail(tail);
    let body = std::fs::read_to_string(csv).map_err(io(csv))?;
    let d = meta.dimension;
    let row_err = |line: usize, reason: String| GridIoError::Row { path: csv.to_path_buf(), line, reason };
    let mut lines = body.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').count() == d + 1 => {}
        _ => return Err(row_err(1, format!("expected a header with {} columns", d + 1))),
    }
    let mut seen = 0usize;
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(row_err(i + 1, format!("expected {} fields", d + 1)));
        }
        let x: Vec<i64> = fields[..d]
            .iter()
            .map(|f| f.parse().map_err(|_| row_err(i + 1, format!("bad coordinate {f:?}"))))
            .collect::<Result<_, _>>()?;
        let v: f64 = fields[d].parse().map_err(|_| row_err(i + 1, format!("bad value {:?}", fields[d])))?;
        g.set(&x, v).map_err(|e| row_err(i + 1, e.to_string()))?;
        seen += 1;
    }
    if seen != g.len() {
        return Err(row_err(0, format!("{seen} rows for a grid of {} points", g.len())));
    }
    Ok((g, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for shape in [Shape::Box { radius: 2 }, Shape::Torus { period: 5 }] {
            let g = Grid::from_fn(2, shape, |x| 1.0 / (1.0 + (x[0] * x[0] + 3 * x[1] * x[1]) as f64))
                .unwrap()
                .with_tail(Tail::PowerLaw { amplitude: 0.5, exponent: 3.0 });
            let m = ModelSpec::torus(2, 5, 1, 0.1).unwrap();
            let meta = GridMeta::for_estimate(&m, 0.1, &ReplicaPlan::new(4, 10));
            let path = dir.path().join("g.csv");
            write_grid(&path, &g, &meta).unwrap();
            let (back, meta2) = read_grid(&path).unwrap();
            assert_eq!(back.values(), g.values());
            assert_eq!(back.shape(), g.shape());
            assert_eq!(back.tail(), g.tail());
            assert_eq!(meta2.seed, 4);
        }
    }

    #[test]
    fn short_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::delta(1, Shape::Box { radius: 1 }).unwrap();
        let path = dir.path().join("g.csv");
        write_grid(&path, &g, &GridMeta::for_estimate(&ModelSpec::nearest_neighbour(1, 0.1).unwrap(), 0.1, &ReplicaPlan::new(0, 1)))
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.lines().take(2).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(matches!(read_grid(&path), Err(GridIoError::Row { .. })));
    }
}
