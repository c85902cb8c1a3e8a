//! Versioned CSV files: datasets, attributions and inclusion curves.
//!
//! Each file opens with a `# attrib-<kind> v1 key=value ...` line followed by
//! an ordinary CSV header. Reals are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::evaluation::{Grid, InclusionCurve};
use crate::prob::{AttributionVector, Dataset, Instance, Label};

pub const DATASET_TAG: &str = "attrib-dataset";
pub const ATTRIBUTIONS_TAG: &str = "attrib-attributions";
pub const CURVE_TAG: &str = "attrib-curve";
const VERSION: &str = "v1";

fn meta_line(tag: &str, meta: &[(&str, String)]) -> String {
    let mut line = format!("# {tag} {VERSION}");
    for (k, v) in meta {
        line.push_str(&format!(" {k}={v}"));
    }
    line.push('\n');
    line
}

/// Splits a file into its parsed metadata line and the CSV body.
fn split_meta<'a>(text: &'a str, tag: &str) -> Result<(BTreeMap<String, String>, &'a str)> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let mut tokens = first.split_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some(tag) {
        return Err(Error::Parse(format!("expected a \"# {tag}\" header line")));
    }
    match tokens.next() {
        Some(VERSION) => {}
        other => return Err(Error::Parse(format!("unsupported {tag} version {other:?}"))),
    }
    let mut meta = BTreeMap::new();
    for token in tokens {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header token {token:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok((meta, body))
}

fn meta_get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::Parse(format!("header lacks {key:?}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("malformed header value for {key:?}")))
}

fn parse_f64(field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number {field:?}")))
}

fn parse_usize(field: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer {field:?}")))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::fs::File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn write_file(path: &Path, meta: String, records: Vec<Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(meta.into_bytes());
    for r in records {
        out.write_record(&r)?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

fn records(body: &str) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

/// Header `x_1..x_d,y`; metadata `d` and `K`.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let d = data.dim();
    let meta = meta_line(DATASET_TAG, &[("d", d.to_string()), ("K", data.num_classes().to_string())]);
    let mut rows = vec![(1..=d).map(|i| format!("x_{i}")).chain(["y".to_string()]).collect()];
    for (x, y) in data.iter() {
        rows.push(x.features().iter().map(|v| v.to_string()).chain([y.0.to_string()]).collect());
    }
    write_file(path.as_ref(), meta, rows)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = read_text(path.as_ref())?;
    let (meta, body) = split_meta(&text, DATASET_TAG)?;
    let d: usize = meta_get(&meta, "d")?;
    let k: usize = meta_get(&meta, "K")?;
    let (header, rows) = records(body)?;
    check_dim(d + 1, header.len())?;
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for r in &rows {
        check_dim(d + 1, r.len())?;
        xs.push(Instance::new(r.iter().take(d).map(parse_f64).collect::<Result<_>>()?)?);
        ys.push(Label(parse_usize(&r[d])?));
    }
    Dataset::new(xs, ys, d, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRow {
    pub index: usize,
    /// The class explained, for class-dependent methods.
    pub class: Option<Label>,
    pub scores: AttributionVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionFile {
    pub method: String,
    pub dim: usize,
    pub rows: Vec<AttributionRow>,
}

impl AttributionFile {
    pub fn has_class(&self) -> bool {
        self.rows.first().is_some_and(|r| r.class.is_some())
    }

    pub fn vectors(&self) -> Vec<AttributionVector> {
        self.rows.iter().map(|r| r.scores.clone()).collect()
    }

    /// Header `index,[class,]e_1..e_d`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let with_class = self.has_class();
        if self.rows.iter().any(|r| r.class.is_some() != with_class) {
            return Err(Error::InvalidArgument("rows disagree on the class column".into()));
        }
        let meta = meta_line(ATTRIBUTIONS_TAG, &[("method", self.method.clone()), ("d", self.dim.to_string())]);
        let mut header = vec!["index".to_string()];
        if with_class {
            header.push("class".into());
        }
        header.extend((1..=self.dim).map(|i| format!("e_{i}")));
        let mut rows = vec![header];
        for r in &self.rows {
            check_dim(self.dim, r.scores.dim())?;
            let mut rec = vec![r.index.to_string()];
            if let Some(c) = r.class {
                rec.push(c.0.to_string());
            }
            rec.extend(r.scores.scores().iter().map(|v| v.to_string()));
            rows.push(rec);
        }
        write_file(path.as_ref(), meta, rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = read_text(path.as_ref())?;
        let (meta, body) = split_meta(&text, ATTRIBUTIONS_TAG)?;
        let method: String = meta_get(&meta, "method")?;
        let dim: usize = meta_get(&meta, "d")?;
        let (header, recs) = records(body)?;
        let with_class = header.get(1) == Some("class");
        let offset = if with_class { 2 } else { 1 };
        check_dim(dim + offset, header.len())?;
        let rows = recs
            .iter()
            .map(|r| {
                check_dim(dim + offset, r.len())?;
                Ok(AttributionRow {
                    index: parse_usize(&r[0])?,
                    class: if with_class { Some(Label(parse_usize(&r[1])?)) } else { None },
                    scores: AttributionVector::new(r.iter().skip(offset).map(parse_f64).collect::<Result<_>>()?)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { method, dim, rows })
    }
}

/// Header `n,mean_loglik,ci_low,ci_high`.
pub fn write_curve(
    path: impl AsRef<Path>,
    method: &str,
    curve: &InclusionCurve,
    intervals: &[(f64, f64)],
) -> Result<()> {
    check_dim(curve.grid.len(), intervals.len())?;
    let meta = meta_line(CURVE_TAG, &[("method", method.to_string())]);
    let mut rows = vec![vec!["n".into(), "mean_loglik".into(), "ci_low".into(), "ci_high".into()]];
    for ((n, m), (lo, hi)) in curve.grid.points().iter().zip(&curve.mean_loglik).zip(intervals) {
        rows.push(vec![n.to_string(), m.to_string(), lo.to_string(), hi.to_string()]);
    }
    write_file(path.as_ref(), meta, rows)
}

/// The grid and mean log-likelihoods of a curve file.
pub fn read_curve(path: impl AsRef<Path>) -> Result<InclusionCurve> {
    let text = read_text(path.as_ref())?;
    let (_, body) = split_meta(&text, CURVE_TAG)?;
    let (_, recs) = records(body)?;
    let mut grid = Vec::with_capacity(recs.len());
    let mut means = Vec::with_capacity(recs.len());
    for r in &recs {
        check_dim(4, r.len())?;
        grid.push(parse_f64(&r[0])?);
        means.push(parse_f64(&r[1])?);
    }
    InclusionCurve::from_means(Grid::new(grid)?, means)
}
