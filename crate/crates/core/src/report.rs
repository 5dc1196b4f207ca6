//! Experiment tables, five-number summaries and their CSV/JSON forms.
//!
//! Floats are written with six significant digits so that identical inputs
//! always produce identical bytes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Number, Value};

use crate::{Error, Result, Scalar};

/// Quantile method recorded next to every summary.
pub const QUANTILE_RULE: &str = "linear interpolation between order statistics (type 7)";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Bool(_) => 0,
            Cell::Int(_) | Cell::Float(_) => 1,
            Cell::Text(_) => 2,
        }
    }

    /// Total order used for sorting group keys.
    pub fn total_cmp(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Bool(a), Cell::Bool(b)) => a.cmp(b),
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (a, b) if a.rank() == 1 && b.rank() == 1 => {
                a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap())
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    fn parse(s: &str) -> Cell {
        if let Ok(v) = s.parse::<i64>() {
            return Cell::Int(v);
        }
        match s {
            "true" => return Cell::Bool(true),
            "false" => return Cell::Bool(false),
            _ => {}
        }
        let looks_float = s.contains(['.', 'e', 'E']) || matches!(s, "NaN" | "inf" | "-inf");
        if looks_float {
            if let Ok(v) = s.parse::<f64>() {
                return Cell::Float(v);
            }
        }
        Cell::Text(s.to_string())
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Bool(v) => Value::from(*v),
            Cell::Text(v) => Value::from(v.as_str()),
            Cell::Float(v) => format_sig6(*v)
                .parse::<f64>()
                .ok()
                .and_then(Number::from_f64)
                .map_or(Value::Null, Value::Number),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => f.write_str(&format_sig6(*v)),
            Cell::Bool(v) => write!(f, "{v}"),
            Cell::Text(v) => f.write_str(v),
        }
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// `%g`-style formatting with six significant digits. The result always
/// reads back as a float (it contains `.`, `e`, or is non-finite).
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let fixed = format!("{:.*}", (5 - exp) as usize, x);
        if fixed.contains('.') {
            let trimmed = fixed.trim_end_matches('0');
            if trimmed.ends_with('.') {
                format!("{trimmed}0")
            } else {
                trimmed.to_string()
            }
        } else {
            format!("{fixed}.0")
        }
    } else {
        let m = mantissa.trim_end_matches('0');
        let m = if m.ends_with('.') {
            format!("{m}0")
        } else {
            m.to_string()
        };
        format!("{m}e{exp}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width matches the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends the rows of `other`, which must have the same columns.
    pub fn extend(&mut self, other: Table) {
        assert_eq!(self.columns, other.columns);
        self.rows.extend(other.rows);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

struct Counting<W> {
    inner: W,
    bytes: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Writes `table` and returns the number of bytes written.
pub fn emit<W: Write>(table: &Table, format: Format, out: W) -> Result<u64> {
    let mut out = Counting {
        inner: out,
        bytes: 0,
    };
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&table.columns)?;
            for row in &table.rows {
                w.write_record(row.iter().map(|c| c.to_string()))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = table
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::to_json))
                        .collect();
                    Value::Object(obj)
                })
                .collect();
            serde_json::to_writer_pretty(&mut out, &rows)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(out.bytes)
}

pub fn emit_to_path(table: &Table, format: Format, path: &Path) -> Result<u64> {
    let file = File::create(path)?;
    emit(table, format, BufWriter::new(file))
}

/// Reads a CSV written by [`emit`], inferring cell types.
pub fn parse_csv<R: Read>(input: R) -> Result<Table> {
    let mut r = csv::Reader::from_reader(input);
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut table = Table {
        columns,
        rows: Vec::new(),
    };
    for rec in r.records() {
        table.rows.push(rec?.iter().map(Cell::parse).collect());
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber<T> {
    pub min: T,
    pub q1: T,
    pub median: T,
    pub q3: T,
    pub max: T,
}

fn quantile<T: Scalar>(sorted: &[T], p: f64) -> T {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::of(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn five_number_summary<T: Scalar>(values: &[T]) -> Result<FiveNumber<T>> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Config("cannot summarize NaN values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(FiveNumber {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub keys: Vec<Cell>,
    pub count: usize,
    pub summary: FiveNumber<f64>,
}

/// One five-number summary per distinct combination of `group_keys`.
/// Rows whose `disqualified` column is true are skipped unless
/// `include_disqualified`; rows with a non-numeric or NaN metric are skipped.
pub fn group_summaries(
    table: &Table,
    metric: &str,
    group_keys: &[&str],
    include_disqualified: bool,
) -> Result<Vec<SummaryRow>> {
    let metric_col = table.column(metric)?;
    let key_cols = group_keys
        .iter()
        .map(|k| table.column(k))
        .collect::<Result<Vec<_>>>()?;
    let disq_col = table.column("disqualified").ok();

    let mut groups: Vec<(Vec<Cell>, Vec<f64>)> = Vec::new();
    for row in &table.rows {
        if !include_disqualified && disq_col.is_some_and(|c| row[c] == Cell::Bool(true)) {
            continue;
        }
        let Some(value) = row[metric_col].as_f64().filter(|v| !v.is_nan()) else {
            continue;
        };
        let keys: Vec<Cell> = key_cols.iter().map(|&c| row[c].clone()).collect();
        match groups.iter_mut().find(|(k, _)| *k == keys) {
            Some((_, vals)) => vals.push(value),
            None => groups.push((keys, vec![value])),
        }
    }
    groups.sort_by(|(a, _), (b, _)| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    groups
        .into_iter()
        .map(|(keys, vals)| {
            Ok(SummaryRow {
                keys,
                count: vals.len(),
                summary: five_number_summary(&vals)?,
            })
        })
        .collect()
}

pub fn summaries_table(group_keys: &[&str], rows: &[SummaryRow]) -> Table {
    let mut columns: Vec<String> = group_keys.iter().map(|s| s.to_string()).collect();
    columns
        .extend(["count", "min", "q1", "median", "q3", "max", "quantile_rule"].map(String::from));
    let mut t = Table {
        columns,
        rows: Vec::new(),
    };
    for r in rows {
        let mut row = r.keys.clone();
        let s = r.summary;
        row.extend([
            Cell::from(r.count),
            s.min.into(),
            s.q1.into(),
            s.median.into(),
            s.q3.into(),
            s.max.into(),
            QUANTILE_RULE.into(),
        ]);
        t.push(row);
    }
    t
}

/// A labelled series of `(x, y)` points.
pub type Curve = (String, Vec<(f64, f64)>);

/// Best `y` per `x` for every curve, where a curve is a distinct combination
/// of `curve_keys`. Returns `(label, points sorted by x)`.
pub fn best_per_x(
    table: &Table,
    x: &str,
    y: &str,
    curve_keys: &[&str],
    include_disqualified: bool,
) -> Result<Vec<Curve>> {
    let (xc, yc) = (table.column(x)?, table.column(y)?);
    let kc = curve_keys
        .iter()
        .map(|k| table.column(k))
        .collect::<Result<Vec<_>>>()?;
    let disq_col = table.column("disqualified").ok();
    let mut curves: BTreeMap<String, BTreeMap<i64, (f64, f64)>> = BTreeMap::new();
    for row in &table.rows {
        if !include_disqualified && disq_col.is_some_and(|c| row[c] == Cell::Bool(true)) {
            continue;
        }
        let (Some(xv), Some(yv)) = (row[xc].as_f64(), row[yc].as_f64()) else {
            continue;
        };
        if yv.is_nan() {
            continue;
        }
        let label = curve_keys
            .iter()
            .zip(&kc)
            .map(|(k, &c)| format!("{k}={}", row[c]))
            .collect::<Vec<_>>()
            .join("_");
        let slot = curves
            .entry(label)
            .or_default()
            .entry((xv * 1e6).round() as i64)
            .or_insert((xv, yv));
        if yv > slot.1 {
            slot.1 = yv;
        }
    }
    Ok(curves
        .into_iter()
        .map(|(label, pts)| (label, pts.into_values().collect()))
        .collect())
}

pub fn series_table(points: &[(f64, f64)]) -> Table {
    let mut t = Table::new(["x", "y"]);
    for &(x, y) in points {
        t.push(vec![x.into(), y.into()]);
    }
    t
}
