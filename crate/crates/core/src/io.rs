//! File formats.
//!
//! Field files are CSV with one value per row in axis-major order (axis `v`
//! slowest for faces, then `i_1`, then `i_2`, then the time index fastest),
//! preceded by a grid-spec comment line `# m=..,n=..,T=..,dim=..` and a
//! header line naming the layout (`cell-half | cell-int | cell-static |
//! face`). Values are printed in shortest round-trip form, so write/read
//! round-trips bit-exactly and readers reject files whose grid spec does not
//! match the expected one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{EntryMaps, GroundMetricModel, InteractionKernel};
use crate::grid::{CellField, FaceField, GridSpec, TimeLayout};

fn spec_comment(spec: &GridSpec) -> String {
    format!("# m={},n={},T={},dim={}", spec.m, spec.n, spec.horizon, spec.dim)
}

fn parse_spec_comment(line: &str, path: &str, lineno: usize) -> Result<GridSpec> {
    let body = line.trim_start_matches('#').trim();
    let mut m = None;
    let mut n = None;
    let mut t = None;
    let mut dim = None;
    for part in body.split(',') {
        let mut kv = part.splitn(2, '=');
        let key = kv.next().unwrap_or("").trim();
        let val = kv.next().ok_or_else(|| Error::Parse {
            path: path.into(),
            line: lineno,
            msg: format!("malformed spec entry '{part}'"),
        })?;
        match key {
            "m" => m = val.parse::<usize>().ok(),
            "n" => n = val.parse::<usize>().ok(),
            "T" => t = val.parse::<f64>().ok(),
            "dim" => dim = val.parse::<usize>().ok(),
            _ => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("unknown spec key '{key}'"),
                })
            }
        }
    }
    match (m, n, t, dim) {
        (Some(m), Some(n), Some(t), Some(dim)) => GridSpec::new(dim, m, n, t),
        _ => Err(Error::Parse {
            path: path.into(),
            line: lineno,
            msg: "spec comment must carry m, n, T and dim".into(),
        }),
    }
}

/// Serialization order of a cell field: `i_1`, then `i_2`, then time fastest.
fn cell_order(spec: &GridSpec, slices: usize) -> impl Iterator<Item = (usize, usize)> {
    let cells = spec.cells();
    (0..cells).flat_map(move |cell| (0..slices).map(move |t| (t, cell)))
}

pub fn write_cell_field(path: &Path, field: &CellField) -> Result<()> {
    let spec = field.spec();
    let mut out = String::new();
    let _ = writeln!(out, "{}", spec_comment(spec));
    let _ = writeln!(out, "{}", field.layout().name());
    for (t, cell) in cell_order(spec, field.slices()) {
        let _ = writeln!(out, "{}", field.at(t, cell));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_cell_field(path: &Path, expected: &GridSpec) -> Result<CellField> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (i, first) = lines.next().ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let spec = parse_spec_comment(first, &name, i + 1)?;
    if spec != *expected {
        return Err(Error::GridMismatch { expected: *expected, found: spec });
    }
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 2,
        msg: "missing layout header".into(),
    })?;
    let layout = TimeLayout::from_name(header.trim()).ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 2,
        msg: format!("unknown layout '{header}'"),
    })?;
    let slices = layout.slices(&spec);
    let mut field = CellField::zeros(spec, layout);
    let mut order = cell_order(&spec, slices);
    let mut count = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (t, cell) = order.next().ok_or_else(|| Error::Parse {
            path: name.clone(),
            line: lineno + 1,
            msg: "more values than the layout holds".into(),
        })?;
        let v: f64 = line.trim().parse().map_err(|_| Error::Parse {
            path: name.clone(),
            line: lineno + 1,
            msg: format!("bad float '{line}'"),
        })?;
        field.set(t, cell, v);
        count += 1;
    }
    if count != slices * spec.cells() {
        return Err(Error::Parse {
            path: name,
            line: count + 2,
            msg: format!("expected {} values, found {count}", slices * spec.cells()),
        });
    }
    Ok(field)
}

pub fn write_face_field(path: &Path, field: &FaceField) -> Result<()> {
    let spec = field.spec();
    let mut out = String::new();
    let _ = writeln!(out, "{}", spec_comment(spec));
    let _ = writeln!(out, "face");
    for axis in 0..spec.dim {
        for (t, cell) in cell_order(spec, field.steps()) {
            let _ = writeln!(out, "{}", field.at(axis, t, cell));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_face_field(path: &Path, expected: &GridSpec) -> Result<FaceField> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (i, first) = lines.next().ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let spec = parse_spec_comment(first, &name, i + 1)?;
    if spec != *expected {
        return Err(Error::GridMismatch { expected: *expected, found: spec });
    }
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 2,
        msg: "missing layout header".into(),
    })?;
    if header.trim() != "face" {
        return Err(Error::Parse {
            path: name.clone(),
            line: 2,
            msg: format!("expected layout 'face', found '{header}'"),
        });
    }
    let mut field = FaceField::zeros(spec);
    let mut order = (0..spec.dim)
        .flat_map(|axis| {
            let s = spec;
            (0..s.cells()).flat_map(move |cell| (0..s.n).map(move |t| (axis, t, cell)))
        })
        .collect::<Vec<_>>()
        .into_iter();
    let mut count = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (axis, t, cell) = order.next().ok_or_else(|| Error::Parse {
            path: name.clone(),
            line: lineno + 1,
            msg: "more values than the layout holds".into(),
        })?;
        let v: f64 = line.trim().parse().map_err(|_| Error::Parse {
            path: name.clone(),
            line: lineno + 1,
            msg: format!("bad float '{line}'"),
        })?;
        field.set(axis, t, cell, v);
        count += 1;
    }
    let expect = spec.dim * spec.n * spec.cells();
    if count != expect {
        return Err(Error::Parse {
            path: name,
            line: count + 2,
            msg: format!("expected {expect} values, found {count}"),
        });
    }
    Ok(field)
}

/// Metric-kernel file: spec comment, entry-map preset name, then `g0` over
/// `V` in axis-major order.
pub fn write_metric(path: &Path, model: &GroundMetricModel) -> Result<()> {
    let spec = model.spec();
    let mut out = String::new();
    let _ = writeln!(out, "{}", spec_comment(spec));
    let _ = writeln!(out, "{}", model.maps().name());
    for v in model.g0() {
        let _ = writeln!(out, "{v}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_metric(path: &Path, expected: &GridSpec) -> Result<GroundMetricModel> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (i, first) =
        lines.next().ok_or_else(|| Error::Parse { path: name.clone(), line: 1, msg: "empty file".into() })?;
    let spec = parse_spec_comment(first, &name, i + 1)?;
    if spec != *expected {
        return Err(Error::GridMismatch { expected: *expected, found: spec });
    }
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 2,
        msg: "missing entry-map header".into(),
    })?;
    let maps = EntryMaps::from_name(header.trim()).ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: 2,
        msg: format!("unknown entry-map preset '{header}'"),
    })?;
    let mut values = Vec::with_capacity(spec.cells());
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.push(line.trim().parse().map_err(|_| Error::Parse {
            path: name.clone(),
            line: lineno + 1,
            msg: format!("bad float '{line}'"),
        })?);
    }
    if values.len() != spec.cells() {
        return Err(Error::Parse {
            path: name,
            line: 3,
            msg: format!("expected {} g0 values, found {}", spec.cells(), values.len()),
        });
    }
    let field = CellField::from_values(spec, TimeLayout::Static, values)?;
    GroundMetricModel::new(field, maps)
}

/// Quotient-grid kernel file: `# quotient-grid m=..` header then `K̃` values
/// in axis-major order over `Ṽ`.
pub fn write_kernel(path: &Path, kernel: &InteractionKernel) -> Result<()> {
    let spec = kernel.spec();
    let mut out = String::new();
    let _ = writeln!(out, "# quotient-grid m={},n={},T={},dim={}", spec.m, spec.n, spec.horizon, spec.dim);
    for v in kernel.values() {
        let _ = writeln!(out, "{v}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_kernel(path: &Path, expected: &GridSpec) -> Result<InteractionKernel> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (i, first) =
        lines.next().ok_or_else(|| Error::Parse { path: name.clone(), line: 1, msg: "empty file".into() })?;
    let body = first.trim_start_matches('#').trim();
    let body = body.strip_prefix("quotient-grid").ok_or_else(|| Error::Parse {
        path: name.clone(),
        line: i + 1,
        msg: "kernel files start with '# quotient-grid m=..'".into(),
    })?;
    let spec = parse_spec_comment(body, &name, i + 1)?;
    if spec != *expected {
        return Err(Error::GridMismatch { expected: *expected, found: spec });
    }
    let mut values = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.push(line.trim().parse().map_err(|_| Error::Parse {
            path: name.clone(),
            line: lineno + 1,
            msg: format!("bad float '{line}'"),
        })?);
    }
    InteractionKernel::from_values(spec, values)
}

/// Write any numeric table as CSV with a header row; every artifact embeds
/// the resolved grid spec as a leading comment.
pub fn write_table(path: &Path, spec: &GridSpec, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", spec_comment(spec));
    let _ = writeln!(out, "{header}");
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Shortest round-trip formatting for optional table entries.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
