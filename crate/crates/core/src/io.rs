//! Text persistence: dataset CSV, normalized datasets (CSV plus JSON
//! sidecar), parameter checkpoints and histogram CSV.
//!
//! A header column named `y` holds ±1 labels; `y1..yp` hold regression
//! targets, even for p = 1.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::dataset::{Dataset, NormKind, NormalizedDataset, Targets};
use crate::deep::{Block, DeepLinearParams};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainers::Model;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("line {line}: `{}` is not a number", s.trim())))
}

enum TargetCols {
    Labels,
    Regression(usize),
}

fn parse_header(header: &str) -> Result<(usize, TargetCols)> {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.iter().take_while(|c| c.starts_with('x')).count();
    for (i, c) in cols[..d].iter().enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(Error::Parse(format!("header column {} is `{c}`, expected `x{}`", i + 1, i + 1)));
        }
    }
    let rest = &cols[d..];
    if d == 0 || rest.is_empty() {
        return Err(Error::Parse("header must be x1..xd followed by y or y1..yp".into()));
    }
    if rest == ["y"] {
        return Ok((d, TargetCols::Labels));
    }
    for (i, c) in rest.iter().enumerate() {
        if *c != format!("y{}", i + 1) {
            return Err(Error::Parse(format!("target column `{c}`, expected `y{}`", i + 1)));
        }
    }
    Ok((d, TargetCols::Regression(rest.len())))
}

/// Parses a dataset from CSV text, one point per row.
pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let (d, tcols) = parse_header(header)?;
    let p = match tcols {
        TargetCols::Labels => 1,
        TargetCols::Regression(p) => p,
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in lines {
        let vals: Vec<f64> = line.split(',').map(|s| parse_f64(s, i + 1)).collect::<Result<_>>()?;
        if vals.len() != d + p {
            return Err(Error::Parse(format!("line {}: {} fields, expected {}", i + 1, vals.len(), d + p)));
        }
        xs.extend_from_slice(&vals[..d]);
        ys.extend_from_slice(&vals[d..]);
    }
    let n = xs.len() / d;
    let x = DMatrix::from_column_slice(d, n, &xs);
    match tcols {
        TargetCols::Labels => Dataset::classification(x, ys),
        TargetCols::Regression(p) => Dataset::regression(x, DMatrix::from_column_slice(p, n, &ys)),
    }
}

fn header(d: usize, targets: &Targets) -> String {
    let mut cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    match targets {
        Targets::Labels(_) => cols.push("y".into()),
        Targets::Regression(y) => cols.extend((1..=y.nrows()).map(|k| format!("y{k}"))),
    }
    cols.join(",")
}

fn rows_csv(x: &DMatrix<f64>, targets: &Targets, extra: impl Fn(usize) -> Vec<String>) -> String {
    let t = targets.as_matrix();
    let mut s = String::new();
    for c in 0..x.ncols() {
        let mut f: Vec<String> = x.column(c).iter().map(|&v| fmt_f64(v)).collect();
        match targets {
            // Labels are written as integers so the file reads naturally.
            Targets::Labels(l) => f.push(format!("{}", l[c] as i64)),
            Targets::Regression(_) => f.extend(t.column(c).iter().map(|&v| fmt_f64(v))),
        }
        f.extend(extra(c));
        s.push_str(&f.join(","));
        s.push('\n');
    }
    s
}

pub fn dataset_to_csv(ds: &Dataset) -> String {
    format!("{}\n{}", header(ds.d(), ds.targets()), rows_csv(ds.x(), ds.targets(), |_| Vec::new()))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset_csv(&fs::read_to_string(path)?)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    Ok(fs::write(path, dataset_to_csv(ds))?)
}

/// Path of the JSON sidecar next to a normalized-dataset CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// CSV of the normalized features with `batch` and `source` columns.
pub fn normalized_to_csv(nds: &NormalizedDataset) -> String {
    let mut batch_of = vec![0usize; nds.q()];
    for (j, r) in nds.boundaries().iter().enumerate() {
        for c in r.clone() {
            batch_of[c] = j;
        }
    }
    format!(
        "{},batch,source\n{}",
        header(nds.d(), nds.targets()),
        rows_csv(nds.xbar(), nds.targets(), |c| vec![batch_of[c].to_string(), nds.source()[c].to_string()])
    )
}

pub fn normalized_sidecar(nds: &NormalizedDataset) -> Value {
    let mut v = json!({
        "kind": nds.kind().name(),
        "batch_size": nds.batch_size(),
        "epsilon": nds.epsilon(),
        "n": nds.n(),
        "boundaries": nds.boundaries().iter().map(|r| [r.start, r.end]).collect::<Vec<_>>(),
    });
    match nds.kind() {
        NormKind::Ss { perm } => v["perm"] = json!(perm),
        NormKind::RrSampled { perms } => v["perms"] = json!(perms),
        NormKind::Gd | NormKind::RrFull => {}
    }
    v
}

pub fn write_normalized(nds: &NormalizedDataset, csv: &Path) -> Result<()> {
    fs::write(csv, normalized_to_csv(nds))?;
    fs::write(sidecar_path(csv), serde_json::to_string_pretty(&normalized_sidecar(nds))?)?;
    Ok(())
}

fn json_usize(v: &Value, key: &str) -> Result<usize> {
    v[key].as_u64().map(|u| u as usize).ok_or_else(|| Error::Parse(format!("sidecar field `{key}` missing")))
}

fn json_indices(v: &Value) -> Result<Vec<usize>> {
    v.as_array()
        .ok_or_else(|| Error::Parse("expected an index array".into()))?
        .iter()
        .map(|u| u.as_u64().map(|u| u as usize).ok_or_else(|| Error::Parse("bad index".into())))
        .collect()
}

pub fn read_normalized(csv: &Path) -> Result<NormalizedDataset> {
    let text = fs::read_to_string(csv)?;
    let side: Value = serde_json::from_str(&fs::read_to_string(sidecar_path(csv))?)?;
    let (head, body) = text.split_once('\n').ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let head = head.trim();
    let plain = head
        .strip_suffix(",batch,source")
        .ok_or_else(|| Error::Parse("normalized CSV must end with batch,source columns".into()))?;
    // Drop the two trailing columns and reuse the dataset parser.
    let mut trimmed = String::from(plain);
    trimmed.push('\n');
    let mut source = Vec::new();
    for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 3 {
            return Err(Error::Parse(format!("line {}: too few fields", i + 2)));
        }
        let src = parts.pop().unwrap();
        parts.pop();
        source.push(src.trim().parse::<usize>().map_err(|_| Error::Parse(format!("line {}: bad source", i + 2)))?);
        trimmed.push_str(&parts.join(","));
        trimmed.push('\n');
    }
    let (d, tcols) = parse_header(plain)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in trimmed.lines().enumerate().skip(1) {
        let vals: Vec<f64> = line.split(',').map(|s| parse_f64(s, i + 1)).collect::<Result<_>>()?;
        xs.extend_from_slice(&vals[..d]);
        ys.extend_from_slice(&vals[d..]);
    }
    let q = source.len();
    let xbar = DMatrix::from_column_slice(d, q, &xs);
    let targets = match tcols {
        TargetCols::Labels => Targets::Labels(ys),
        TargetCols::Regression(p) => Targets::Regression(DMatrix::from_column_slice(p, q, &ys)),
    };
    let boundaries: Vec<Range<usize>> = side["boundaries"]
        .as_array()
        .ok_or_else(|| Error::Parse("sidecar field `boundaries` missing".into()))?
        .iter()
        .map(|r| {
            let r = json_indices(r)?;
            match r.as_slice() {
                [a, b] => Ok(*a..*b),
                _ => Err(Error::Parse("boundary must be [start, end]".into())),
            }
        })
        .collect::<Result<_>>()?;
    let kind = match side["kind"].as_str() {
        Some("SS") => NormKind::Ss { perm: json_indices(&side["perm"])? },
        Some("GD") => NormKind::Gd,
        Some("RR-full") => NormKind::RrFull,
        Some("RR-sampled") => NormKind::RrSampled {
            perms: side["perms"]
                .as_array()
                .ok_or_else(|| Error::Parse("sidecar field `perms` missing".into()))?
                .iter()
                .map(json_indices)
                .collect::<Result<_>>()?,
        },
        other => return Err(Error::Parse(format!("unknown kind {other:?}"))),
    };
    let epsilon = side["epsilon"].as_f64().ok_or_else(|| Error::Parse("sidecar field `epsilon` missing".into()))?;
    NormalizedDataset::from_parts(
        xbar,
        targets,
        boundaries,
        source,
        epsilon,
        kind,
        json_usize(&side, "batch_size")?,
        json_usize(&side, "n")?,
    )
}

/// `{"rows":r,"cols":c,"data":[row-major]}` with 17 significant digits.
fn matrix_json(m: &DMatrix<f64>) -> String {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(fmt_f64(m[(r, c)]));
        }
    }
    format!("{{\"rows\":{},\"cols\":{},\"data\":[{}]}}", m.nrows(), m.ncols(), data.join(","))
}

fn vector_json(v: &DVector<f64>) -> String {
    matrix_json(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

fn matrix_from_json(v: &Value) -> Result<DMatrix<f64>> {
    let rows = json_usize(v, "rows")?;
    let cols = json_usize(v, "cols")?;
    let data: Vec<f64> = v["data"]
        .as_array()
        .ok_or_else(|| Error::Parse("matrix without data".into()))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::Parse("non-numeric matrix entry".into())))
        .collect::<Result<_>>()?;
    if data.len() != rows * cols {
        return Err(Error::Parse(format!("matrix has {} entries, expected {}", data.len(), rows * cols)));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn vector_from_json(v: &Value) -> Result<DVector<f64>> {
    let m = matrix_from_json(v)?;
    Ok(DVector::from_column_slice(m.as_slice()))
}

pub fn checkpoint_json(model: &Model) -> String {
    match model {
        Model::Shallow(p) => {
            format!("{{\"type\":\"shallow\",\"w\":{},\"gamma\":{}}}\n", matrix_json(&p.w), vector_json(&p.gamma))
        }
        Model::Deep(p) => {
            let input = p.input.as_ref().map_or("null".to_string(), matrix_json);
            let blocks: Vec<String> = p
                .blocks
                .iter()
                .map(|b| format!("{{\"gamma\":{},\"w\":{}}}", vector_json(&b.gamma), matrix_json(&b.w)))
                .collect();
            format!("{{\"type\":\"deep\",\"input\":{input},\"blocks\":[{}]}}\n", blocks.join(","))
        }
    }
}

pub fn parse_checkpoint(text: &str) -> Result<Model> {
    let v: Value = serde_json::from_str(text)?;
    match v["type"].as_str() {
        Some("shallow") => Ok(Model::Shallow(ModelParams::new(matrix_from_json(&v["w"])?, vector_from_json(&v["gamma"])?)?)),
        Some("deep") => {
            let input = if v["input"].is_null() { None } else { Some(matrix_from_json(&v["input"])?) };
            let blocks = v["blocks"]
                .as_array()
                .ok_or_else(|| Error::Parse("deep checkpoint without blocks".into()))?
                .iter()
                .map(|b| Ok(Block { gamma: vector_from_json(&b["gamma"])?, w: matrix_from_json(&b["w"])? }))
                .collect::<Result<_>>()?;
            Ok(Model::Deep(DeepLinearParams::new(input, blocks)?))
        }
        other => Err(Error::Parse(format!("unknown checkpoint type {other:?}"))),
    }
}

pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    Ok(fs::write(path, checkpoint_json(model))?)
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

/// `perm_index,<column>` rows.
pub fn histogram_csv(column: &str, values: &[f64]) -> String {
    let mut s = format!("perm_index,{column}\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{normalize_rr_sampled, normalize_ss, BatchPlan};

    fn clf() -> Dataset {
        let x = DMatrix::from_row_slice(2, 4, &[0.1, -2.5, 1.0 / 3.0, 4.0, 1e-300, 7.0, -0.0, 2.0]);
        Dataset::classification(x, vec![1.0, -1.0, -1.0, 1.0]).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let ds = clf();
        assert_eq!(parse_dataset_csv(&dataset_to_csv(&ds)).unwrap(), ds);
        let reg = Dataset::regression(ds.x().clone(), DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0])).unwrap();
        let text = dataset_to_csv(&reg);
        assert!(text.starts_with("x1,x2,y1\n"));
        assert_eq!(parse_dataset_csv(&text).unwrap(), reg);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_dataset_csv("a,b\n1,2\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_dataset_csv("x1,y\n1\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_dataset_csv("x1,y\n1,2\n2,1\n"), Err(Error::NonBinaryLabel(_))));
        assert!(matches!(parse_dataset_csv("x1,y1\n1,oops\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn normalized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = clf();
        let plan = BatchPlan::new(vec![2, 0, 3, 1], 2).unwrap();
        for nds in [normalize_ss(&ds, &plan, 1e-5).unwrap(), normalize_rr_sampled(&ds, 2, 0.0, 3, 1).unwrap()] {
            let path = dir.path().join("n.csv");
            write_normalized(&nds, &path).unwrap();
            assert!(sidecar_path(&path).exists());
            assert_eq!(read_normalized(&path).unwrap(), nds);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::new(DMatrix::from_row_slice(1, 2, &[0.1, 1.0 / 3.0]), DVector::from_vec(vec![1.0, -2.0])).unwrap();
        let m = Model::Shallow(p);
        let text = checkpoint_json(&m);
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(parse_checkpoint(&text).unwrap(), m);
        let deep = Model::Deep(DeepLinearParams::init(3, 2, 3, 1, 4).unwrap());
        assert_eq!(parse_checkpoint(&checkpoint_json(&deep)).unwrap(), deep);
    }

    #[test]
    fn histogram_layout() {
        let h = histogram_csv("d_ss", &[0.5, 0.25]);
        assert_eq!(h.lines().next(), Some("perm_index,d_ss"));
        assert_eq!(h.lines().count(), 3);
    }
}
