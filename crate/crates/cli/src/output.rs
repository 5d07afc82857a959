//! Serialization of run artifacts: JSON with 17 significant digits,
//! schema-tagged CSV tables and plot data.

use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// `x` with 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty printer that writes every float with 17 significant digits.
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    buf.push(b'\n');
    buf
}

/// Parses a JSON artifact and checks its `schema` field.
pub fn load_json<T: DeserializeOwned>(bytes: &[u8], schema: &str) -> Result<T, CliError> {
    let value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| CliError::Output { path: schema.into(), message: e.to_string() })?;
    if value.get("schema").and_then(|s| s.as_str()) != Some(schema) {
        return Err(CliError::Output { path: schema.into(), message: "schema mismatch".into() });
    }
    serde_json::from_value(value).map_err(|e| CliError::Output { path: schema.into(), message: e.to_string() })
}

pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => fmt_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// CSV table whose first line is `# schema: <schema>`.
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Self { schema: schema.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = format!("# schema: {}\n{}\n", self.schema, self.header.join(","));
        for r in &self.rows {
            s.push_str(&r.iter().map(Cell::render).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s.into_bytes()
    }
}

/// Parsed CSV artifact.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvData {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvData {
    /// Column `name` parsed as floats.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }
}

pub fn load_csv(bytes: &[u8]) -> Result<CsvData, CliError> {
    let bad = |m: &str| CliError::Output { path: "csv".into(), message: m.into() };
    let text = std::str::from_utf8(bytes).map_err(|e| bad(&e.to_string()))?;
    let mut lines = text.lines();
    let schema = lines
        .next()
        .and_then(|l| l.strip_prefix("# schema: "))
        .ok_or_else(|| bad("missing schema line"))?
        .to_string();
    let header: Vec<String> = lines.next().ok_or_else(|| bad("missing header"))?.split(',').map(String::from).collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    if rows.iter().any(|r| r.len() != header.len()) {
        return Err(bad("ragged row"));
    }
    Ok(CsvData { schema, header, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    PhasePortrait,
    PsiGraph,
    DensityVsEll,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::PhasePortrait => "phase-portrait",
            PlotKind::PsiGraph => "psi-graph",
            PlotKind::DensityVsEll => "density-vs-ell",
        }
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            PlotKind::PhasePortrait => &["q", "p"],
            PlotKind::PsiGraph => &["q", "psi"],
            PlotKind::DensityVsEll => &["ell", "count", "density"],
        }
    }
}

/// One plot record; the variant must match the requested kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlotRecord {
    Point { q: f64, p: f64 },
    Graph { q: f64, psi: f64 },
    Census { ell: f64, count: usize, density: f64 },
}

/// Plain CSV for external plotting (`# schema: plot/<kind>`).
pub fn emit_plot_data(records: &[PlotRecord], kind: PlotKind) -> Result<Vec<u8>, CliError> {
    if records.is_empty() {
        return Err(CliError::EmptyRecords(kind.name().into()));
    }
    let mut t = CsvTable::new(&format!("plot/{}", kind.name()), kind.header());
    for r in records {
        let row = match (kind, *r) {
            (PlotKind::PhasePortrait, PlotRecord::Point { q, p }) => vec![q.into(), p.into()],
            (PlotKind::PsiGraph, PlotRecord::Graph { q, psi }) => vec![q.into(), psi.into()],
            (PlotKind::DensityVsEll, PlotRecord::Census { ell, count, density }) => {
                vec![ell.into(), count.into(), density.into()]
            }
            (k, r) => {
                return Err(CliError::Output {
                    path: k.name().into(),
                    message: format!("record {r:?} does not belong to a {} plot", k.name()),
                })
            }
        };
        t.push(row);
    }
    Ok(t.to_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::Output { path: path.display().to_string(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        let x = std::f64::consts::PI / 7.0;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        let bytes = to_json(&serde_json::json!({"a": [0.1, 3], "b": f64::NAN}));
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("1.0000000000000001e-1") && text.contains("null"), "{text}");
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.1));
        assert_eq!(back["a"][1].as_u64(), Some(3));
    }

    #[test]
    fn csv_round_trip() {
        let mut t = CsvTable::new("fp/1", &["q", "N", "class"]);
        t.push(vec![0.25.into(), 1usize.into(), "positive".into()]);
        let bytes = t.to_bytes();
        assert!(bytes.starts_with(b"# schema: fp/1\nq,N,class\n"));
        let d = load_csv(&bytes).unwrap();
        assert_eq!(d.schema, "fp/1");
        assert_eq!(d.column("q"), Some(vec![0.25]));
        assert_eq!(d.rows[0][2], "positive");
    }

    #[test]
    fn plot_data() {
        let pts = [PlotRecord::Point { q: 0.0, p: 0.5 }];
        let csv = emit_plot_data(&pts, PlotKind::PhasePortrait).unwrap();
        assert_eq!(load_csv(&csv).unwrap().header, ["q", "p"]);
        let rows = [PlotRecord::Census { ell: 5.0, count: 20, density: 2.0 }];
        let d = load_csv(&emit_plot_data(&rows, PlotKind::DensityVsEll).unwrap()).unwrap();
        assert_eq!(d.schema, "plot/density-vs-ell");
        assert_eq!(d.rows[0][1], "20");
        assert!(matches!(emit_plot_data(&[], PlotKind::PsiGraph), Err(CliError::EmptyRecords(_))));
        assert!(emit_plot_data(&pts, PlotKind::PsiGraph).is_err());
    }

    #[test]
    fn digests_are_hex_sha256() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
