//! CSV profiles and lattice snapshots, JSON summaries and run manifests.
//!
//! A profile file starts with one metadata line, then a header row, then
//! one row per node or cell:
//!
//! ```text
//! # kind=grid x_min=-1e0 dx=1e-2 time=5e0 system=burgers-shifted left=4e-1
//! x,u_1
//! -1.0000000000000000e0,4.0000000000000002e-1
//! ```
//!
//! Lattice files use `kind=lattice`, `n_min`, an `outflow` entry and an
//! integer `n` column. Values are written with 17 significant digits,
//! so a write/read round trip is bitwise exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backward::GridFunction;
use crate::config::SystemChoice;
use crate::error::{Error, Result};
use crate::harness::Scheme;
use crate::semidiscrete::LatticeState;

/// Metadata shared by both profile kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMeta {
    pub system: String,
    pub time: f64,
}

impl ProfileMeta {
    pub fn new(system: impl Into<String>, time: f64) -> Self {
        Self {
            system: system.into(),
            time,
        }
    }

    /// A mismatch is reported, not rejected: data may be reused across systems.
    pub fn system_warning(&self, expected: &str) -> Option<String> {
        (self.system != expected).then(|| {
            format!(
                "profile was written for system {:?}, config uses {expected:?}",
                self.system
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Grid(GridFunction),
    Lattice(LatticeState),
}

pub fn fmt_value(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| fmt_value(*x))
        .collect::<Vec<_>>()
        .join(";")
}

fn component_header(first: &str, dim: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=dim).map(|k| format!("u_{k}")))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn write_rows<W: Write>(
    out: W,
    meta_line: &str,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = out;
    writeln!(out, "{meta_line}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid<W: Write>(out: W, profile: &GridFunction, meta: &ProfileMeta) -> Result<()> {
    let n = profile.dim();
    let line = format!(
        "# kind=grid x_min={} dx={} time={} system={} left={}",
        fmt_value(profile.x_min),
        fmt_value(profile.dx),
        fmt_value(meta.time),
        meta.system,
        fmt_list(profile.left_state())
    );
    let rows = (0..profile.len()).map(|i| {
        std::iter::once(fmt_value(profile.x(i)))
            .chain(profile.node(i).iter().map(|v| fmt_value(*v)))
            .collect()
    });
    write_rows(out, &line, &component_header("x", n), rows)
}

pub fn write_lattice<W: Write>(out: W, state: &LatticeState, meta: &ProfileMeta) -> Result<()> {
    let n = state.dim();
    let line = format!(
        "# kind=lattice n_min={} time={} system={} left={} outflow={}",
        state.n_min,
        fmt_value(state.time),
        meta.system,
        fmt_list(state.left_state()),
        fmt_list(state.outflow())
    );
    let rows = (0..state.len()).map(|i| {
        std::iter::once((state.n_min + i as i64).to_string())
            .chain(state.cell(i).iter().map(|v| fmt_value(*v)))
            .collect()
    });
    write_rows(out, &line, &component_header("n", n), rows)
}

pub fn write_profile(path: &Path, profile: &Profile, meta: &ProfileMeta) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    match profile {
        Profile::Grid(g) => write_grid(file, g, meta),
        Profile::Lattice(l) => write_lattice(file, l, meta),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("{what}: cannot parse {s:?} as a number")))
}

fn parse_list(s: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    s.split(';').map(|x| parse_f64(x, line, what)).collect()
}

struct MetaLine<'a> {
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> MetaLine<'a> {
    fn parse(line: &'a str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "expected a metadata line starting with '#'"))?;
        let fields = body
            .split_whitespace()
            .map(|kv| {
                kv.split_once('=')
                    .ok_or_else(|| parse_err(1, format!("malformed metadata entry {kv:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { fields })
    }

    fn get(&self, key: &str) -> Result<&'a str> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| parse_err(1, format!("metadata is missing {key:?}")))
    }
}

/// Reads either profile kind.
pub fn read_profile_from<R: Read>(mut input: R) -> Result<(Profile, ProfileMeta)> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim().is_empty() {
        return Err(parse_err(1, "empty file"));
    }
    let meta_line = MetaLine::parse(first.trim_end_matches('\r'))?;
    let meta = ProfileMeta {
        system: meta_line.get("system")?.to_string(),
        time: parse_f64(meta_line.get("time")?, 1, "time")?,
    };
    let left = parse_list(meta_line.get("left")?, 1, "left")?;
    let dim = left.len();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(rest.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(2, "missing header row"))?
        .map_err(shift_line)?;
    if header.len() != dim + 1 {
        return Err(parse_err(
            2,
            format!("header has {} columns, expected {}", header.len(), dim + 1),
        ));
    }
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(shift_line)?;
        let line = rec.position().map_or(0, |p| p.line() as usize) + 1;
        if rec.len() != dim + 1 {
            return Err(parse_err(
                line,
                format!("row has {} columns, expected {}", rec.len(), dim + 1),
            ));
        }
        coords.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(parse_f64(field, line, "value")?);
        }
    }
    let profile = match meta_line.get("kind")? {
        "grid" => {
            let x_min = parse_f64(meta_line.get("x_min")?, 1, "x_min")?;
            let dx = parse_f64(meta_line.get("dx")?, 1, "dx")?;
            Profile::Grid(GridFunction::new(x_min, dx, values, left)?)
        }
        "lattice" => {
            let n_min: i64 = meta_line
                .get("n_min")?
                .parse()
                .map_err(|_| parse_err(1, "n_min: expected an integer"))?;
            for (i, c) in coords.iter().enumerate() {
                if c.trim().parse::<i64>().ok() != Some(n_min + i as i64) {
                    return Err(parse_err(
                        i + 3,
                        format!("cell index {c:?} breaks the sequence from n_min = {n_min}"),
                    ));
                }
            }
            let outflow = parse_list(meta_line.get("outflow")?, 1, "outflow")?;
            Profile::Lattice(
                LatticeState::new(n_min, values, left, meta.time)?.with_outflow(outflow)?,
            )
        }
        other => return Err(parse_err(1, format!("unknown profile kind {other:?}"))),
    };
    Ok((profile, meta))
}

/// Record positions count from the header row; the metadata line adds one.
fn shift_line(e: csv::Error) -> Error {
    match csv_err(e) {
        Error::Parse { line, message } => Error::Parse {
            line: line + 1,
            message,
        },
        other => other,
    }
}

pub fn read_profile(path: &Path) -> Result<(Profile, ProfileMeta)> {
    read_profile_from(fs::File::open(path)?)
}

pub fn read_grid(path: &Path) -> Result<(GridFunction, ProfileMeta)> {
    match read_profile(path)? {
        (Profile::Grid(g), m) => Ok((g, m)),
        _ => Err(parse_err(
            1,
            "expected a grid profile, found a lattice snapshot",
        )),
    }
}

pub fn read_lattice(path: &Path) -> Result<(LatticeState, ProfileMeta)> {
    match read_profile(path)? {
        (Profile::Lattice(l), m) => Ok((l, m)),
        _ => Err(parse_err(
            1,
            "expected a lattice snapshot, found a grid profile",
        )),
    }
}

/// Plain numeric table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|x| fmt_value(*x)))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Table whose cells are already formatted (mixed text and numbers).
pub fn write_text_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))
}

/// One recorded snapshot of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub time: f64,
    pub file: PathBuf,
    /// Backward runs with a stride above one also keep `u_{n-1}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<PathBuf>,
}

/// Index of the snapshots a run wrote; file names are relative to the
/// record's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub system: SystemChoice,
    pub scheme: Scheme,
    pub snapshots: Vec<SnapshotEntry>,
}

pub const RECORD_FILE: &str = "record.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to every set of outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_path: Option<PathBuf>,
    pub config_text: Option<String>,
    pub config: Option<crate::config::RunConfig>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_seconds: f64,
}

impl Manifest {
    pub fn version_string() -> String {
        let mut s = String::from(env!("CARGO_PKG_NAME"));
        let _ = write!(s, " {}", env!("CARGO_PKG_VERSION"));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(p: &Profile) -> (Profile, ProfileMeta) {
        let meta = ProfileMeta::new("chromatography", 3.25);
        let mut buf = Vec::new();
        match p {
            Profile::Grid(g) => write_grid(&mut buf, g, &meta).unwrap(),
            Profile::Lattice(l) => write_lattice(&mut buf, l, &meta).unwrap(),
        }
        read_profile_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn grid_roundtrip_is_bitwise() {
        let g = GridFunction::from_fn(-0.1, 1.0 / 3.0, 40, &[1.0, 0.7], |x, u| {
            u[0] = (x * 1.7).sin() / 3.0 + 1e-300;
            u[1] = std::f64::consts::PI * x - 0.0;
        })
        .unwrap();
        let (back, meta) = roundtrip(&Profile::Grid(g.clone()));
        let Profile::Grid(b) = back else { panic!() };
        assert_eq!(b.x_min.to_bits(), g.x_min.to_bits());
        assert_eq!(b.dx.to_bits(), g.dx.to_bits());
        assert!(b
            .values()
            .iter()
            .zip(g.values())
            .all(|(a, c)| a.to_bits() == c.to_bits()));
        assert_eq!(b.left_state(), g.left_state());
        assert_eq!(meta.time, 3.25);
    }

    #[test]
    fn lattice_roundtrip_keeps_outflow() {
        let l = LatticeState::from_fn(-7, 30, &[0.4], |n, u| {
            u[0] = 0.1 + (n as f64 * 0.37).cos() / 7.0
        })
        .unwrap()
        .with_outflow(vec![0.123_456_789_012_345_68])
        .unwrap();
        let (back, _) = roundtrip(&Profile::Lattice(l.clone()));
        let Profile::Lattice(b) = back else { panic!() };
        assert_eq!(b, l);
    }

    #[test]
    fn empty_file_fails_on_line_one() {
        match read_profile_from("".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = "# kind=grid x_min=0 dx=0.5 time=0 system=linear left=0\nx,u_1\n0,1\n0.5,oops\n";
        match read_profile_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let short = "# kind=grid x_min=0 dx=0.5 time=0 system=linear left=0\nx,u_1\n0,1\n0.5\n";
        match read_profile_from(short.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn system_mismatch_is_only_a_warning() {
        let meta = ProfileMeta::new("linear", 0.0);
        assert!(meta.system_warning("linear").is_none());
        assert!(meta
            .system_warning("chromatography")
            .unwrap()
            .contains("linear"));
    }

    #[test]
    fn file_roundtrip_and_record_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let l = LatticeState::from_fn(0, 5, &[1.0, 1.0], |_, u| u.fill(1.1)).unwrap();
        write_profile(
            &path,
            &Profile::Lattice(l.clone()),
            &ProfileMeta::new("chromatography", 0.0),
        )
        .unwrap();
        assert_eq!(read_lattice(&path).unwrap().0, l);
        assert!(read_grid(&path).is_err());

        let rec = RunRecord {
            system: SystemChoice::Chromatography,
            scheme: Scheme::Semidiscrete,
            snapshots: vec![SnapshotEntry {
                step: 0,
                time: 0.0,
                file: "p.csv".into(),
                previous: None,
            }],
        };
        let rp = dir.path().join(RECORD_FILE);
        write_json(&rp, &rec).unwrap();
        assert_eq!(read_json::<RunRecord>(&rp).unwrap(), rec);
    }
}
