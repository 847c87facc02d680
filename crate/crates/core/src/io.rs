//! JSON problem and solution files.
//!
//! Numbers are written with 17 significant digits so every `f64` survives a
//! save/load cycle bit for bit. Matrices are nested row-major arrays.
//!
//! UFTOC file (`"kind": "uftoc"`):
//!
//! ```json
//! { "kind": "uftoc", "version": 1,
//!   "dims": { "n_x": 2, "n_w": 1 },          // n_w may also be a per-stage list
//!   "N": 3,
//!   "x0": [..],
//!   "stages": [ { "Q": [[..]], "l": [..], "c": 0.0, "A": [[..]], "B": [[..]], "a": [..] }, .. ],
//!   "terminal": { "Q": [[..]], "l": [..], "c": 0.0 } }
//! ```
//!
//! MHE file (`"kind": "mhe"`), with `N_mhe + 1` stages:
//!
//! ```json
//! { "kind": "mhe", "version": 1,
//!   "dims": { "n_x": 2, "n_w": 2, "n_y": 1 },
//!   "N": 4,
//!   "x0_prior": [..], "P0_prior": [[..]],
//!   "stages": [ { "A", "B", "C", "a", "d", "y", "w_nom", "v_nom", "Qw", "Qwv", "Qv" }, .. ] }
//! ```

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{asymmetry, symmetrize};
use crate::mhe::MheEstimate;
use crate::problem::{MheProblem, MheStage, Problem, Solution, Stage, Terminal, UftocProblem, SYMMETRY_TOL};
use crate::tree::TreeStats;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid field {field}: {message}")]
    Schema { field: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("unknown problem kind {0:?}")]
    UnknownKind(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl From<serde_json::Error> for FileError {
    fn from(e: serde_json::Error) -> Self {
        FileError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> FileError {
    FileError::Schema { field: field.into(), message: message.into() }
}

#[derive(Deserialize)]
struct Header {
    kind: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum InputDims {
    Fixed(usize),
    PerStage(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
struct UftocDims {
    n_x: usize,
    n_w: InputDims,
}

#[derive(Serialize, Deserialize)]
struct MheDims {
    n_x: usize,
    n_w: usize,
    n_y: usize,
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
struct StageFile {
    #[serde(rename = "Q")]
    q: Rows,
    l: Vec<f64>,
    c: f64,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "a")]
    offset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TerminalFile {
    #[serde(rename = "Q")]
    q: Rows,
    l: Vec<f64>,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct UftocFile {
    kind: String,
    version: u32,
    dims: UftocDims,
    #[serde(rename = "N")]
    horizon: usize,
    x0: Vec<f64>,
    stages: Vec<StageFile>,
    terminal: TerminalFile,
}

#[derive(Serialize, Deserialize)]
struct MheStageFile {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "a")]
    offset: Vec<f64>,
    d: Vec<f64>,
    y: Vec<f64>,
    w_nom: Vec<f64>,
    v_nom: Vec<f64>,
    #[serde(rename = "Qw")]
    q_w: Rows,
    #[serde(rename = "Qwv")]
    q_wv: Rows,
    #[serde(rename = "Qv")]
    q_v: Rows,
}

#[derive(Serialize, Deserialize)]
struct MheFile {
    kind: String,
    version: u32,
    dims: MheDims,
    #[serde(rename = "N")]
    horizon: usize,
    x0_prior: Vec<f64>,
    #[serde(rename = "P0_prior")]
    p0_prior: Rows,
    stages: Vec<MheStageFile>,
}

/// Warnings collected while loading (e.g. symmetrized weights).
pub type Warnings = Vec<String>;

fn matrix(rows: &Rows, shape: (usize, usize), field: &str) -> Result<DMatrix<f64>, FileError> {
    if rows.len() != shape.0 {
        return Err(schema(field, format!("expected {} rows, found {}", shape.0, rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != shape.1 {
            return Err(schema(field, format!("row {i} has {} entries, expected {}", r.len(), shape.1)));
        }
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, field: &str) -> Result<DVector<f64>, FileError> {
    if v.len() != len {
        return Err(schema(field, format!("expected length {len}, found {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn symmetric(rows: &Rows, n: usize, field: &str, warnings: &mut Warnings) -> Result<DMatrix<f64>, FileError> {
    let m = matrix(rows, (n, n), field)?;
    if asymmetry(&m) > SYMMETRY_TOL {
        warnings.push(format!("{field}: relative asymmetry {:.3e} removed by symmetrization", asymmetry(&m)));
    }
    Ok(symmetrize(&m))
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T, FileError> {
    Ok(serde_json::from_str(text)?)
}

/// Parses a problem from JSON text.
pub fn parse_problem(text: &str) -> Result<(Problem<f64>, Warnings), FileError> {
    let header: Header = parse(text)?;
    if header.version != SCHEMA_VERSION {
        return Err(FileError::Version { found: header.version, expected: SCHEMA_VERSION });
    }
    let mut warnings = Vec::new();
    let problem = match header.kind.as_str() {
        "uftoc" => Problem::Uftoc(uftoc_from_file(parse(text)?, &mut warnings)?),
        "mhe" => Problem::Mhe(mhe_from_file(parse(text)?, &mut warnings)?),
        other => return Err(FileError::UnknownKind(other.to_string())),
    };
    Ok((problem, warnings))
}

fn uftoc_from_file(f: UftocFile, warnings: &mut Warnings) -> Result<UftocProblem<f64>, FileError> {
    let nx = f.dims.n_x;
    if f.stages.len() != f.horizon {
        return Err(schema("stages", format!("N = {} but {} stages given", f.horizon, f.stages.len())));
    }
    let n_w: Vec<usize> = match &f.dims.n_w {
        InputDims::Fixed(n) => vec![*n; f.horizon],
        InputDims::PerStage(v) if v.len() == f.horizon => v.clone(),
        InputDims::PerStage(v) => {
            return Err(schema("dims.n_w", format!("{} entries for N = {}", v.len(), f.horizon)));
        }
    };
    let stages = f
        .stages
        .iter()
        .zip(&n_w)
        .enumerate()
        .map(|(t, (s, &nw))| {
            let at = |name: &str| format!("stages[{t}].{name}");
            Ok(Stage {
                q: symmetric(&s.q, nx + nw, &at("Q"), warnings)?,
                l: vector(&s.l, nx + nw, &at("l"))?,
                c: s.c,
                a: matrix(&s.a, (nx, nx), &at("A"))?,
                b: matrix(&s.b, (nx, nw), &at("B"))?,
                offset: vector(&s.offset, nx, &at("a"))?,
            })
        })
        .collect::<Result<Vec<_>, FileError>>()?;
    Ok(UftocProblem {
        x0: vector(&f.x0, nx, "x0")?,
        stages,
        terminal: Terminal {
            q: symmetric(&f.terminal.q, nx, "terminal.Q", warnings)?,
            l: vector(&f.terminal.l, nx, "terminal.l")?,
            c: f.terminal.c,
        },
    })
}

fn mhe_from_file(f: MheFile, warnings: &mut Warnings) -> Result<MheProblem<f64>, FileError> {
    let MheDims { n_x: nx, n_w: nw, n_y: ny } = f.dims;
    if f.stages.len() != f.horizon + 1 {
        return Err(schema(
            "stages",
            format!("N = {} requires {} stages, found {}", f.horizon, f.horizon + 1, f.stages.len()),
        ));
    }
    let stages = f
        .stages
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let at = |name: &str| format!("stages[{k}].{name}");
            Ok(MheStage {
                a: matrix(&s.a, (nx, nx), &at("A"))?,
                b: matrix(&s.b, (nx, nw), &at("B"))?,
                c: matrix(&s.c, (ny, nx), &at("C"))?,
                offset: vector(&s.offset, nx, &at("a"))?,
                d: vector(&s.d, ny, &at("d"))?,
                y: vector(&s.y, ny, &at("y"))?,
                w_nom: vector(&s.w_nom, nw, &at("w_nom"))?,
                v_nom: vector(&s.v_nom, ny, &at("v_nom"))?,
                q_w: symmetric(&s.q_w, nw, &at("Qw"), warnings)?,
                q_wv: matrix(&s.q_wv, (nw, ny), &at("Qwv"))?,
                q_v: symmetric(&s.q_v, ny, &at("Qv"), warnings)?,
            })
        })
        .collect::<Result<Vec<_>, FileError>>()?;
    Ok(MheProblem {
        x0_prior: vector(&f.x0_prior, nx, "x0_prior")?,
        p0_prior: symmetric(&f.p0_prior, nx, "P0_prior", warnings)?,
        stages,
    })
}

fn uftoc_to_file(p: &UftocProblem<f64>) -> UftocFile {
    let n_w: Vec<usize> = p.stages.iter().map(Stage::n_w).collect();
    let fixed = n_w.windows(2).all(|w| w[0] == w[1]);
    UftocFile {
        kind: "uftoc".into(),
        version: SCHEMA_VERSION,
        dims: UftocDims {
            n_x: p.n_x(),
            n_w: if fixed { InputDims::Fixed(n_w.first().copied().unwrap_or(0)) } else { InputDims::PerStage(n_w) },
        },
        horizon: p.horizon(),
        x0: p.x0.as_slice().to_vec(),
        stages: p
            .stages
            .iter()
            .map(|s| StageFile {
                q: rows_of(&s.q),
                l: s.l.as_slice().to_vec(),
                c: s.c,
                a: rows_of(&s.a),
                b: rows_of(&s.b),
                offset: s.offset.as_slice().to_vec(),
            })
            .collect(),
        terminal: TerminalFile { q: rows_of(&p.terminal.q), l: p.terminal.l.as_slice().to_vec(), c: p.terminal.c },
    }
}

fn mhe_to_file(m: &MheProblem<f64>) -> MheFile {
    let first = m.stages.first();
    MheFile {
        kind: "mhe".into(),
        version: SCHEMA_VERSION,
        dims: MheDims { n_x: m.n_x(), n_w: first.map_or(0, |s| s.b.ncols()), n_y: first.map_or(0, |s| s.c.nrows()) },
        horizon: m.horizon(),
        x0_prior: m.x0_prior.as_slice().to_vec(),
        p0_prior: rows_of(&m.p0_prior),
        stages: m
            .stages
            .iter()
            .map(|s| MheStageFile {
                a: rows_of(&s.a),
                b: rows_of(&s.b),
                c: rows_of(&s.c),
                offset: s.offset.as_slice().to_vec(),
                d: s.d.as_slice().to_vec(),
                y: s.y.as_slice().to_vec(),
                w_nom: s.w_nom.as_slice().to_vec(),
                v_nom: s.v_nom.as_slice().to_vec(),
                q_w: rows_of(&s.q_w),
                q_wv: rows_of(&s.q_wv),
                q_v: rows_of(&s.q_v),
            })
            .collect(),
    }
}

/// JSON text for `problem`.
pub fn problem_to_string(problem: &Problem<f64>) -> Result<String, FileError> {
    match problem {
        Problem::Uftoc(p) => to_json_string(&uftoc_to_file(p)),
        Problem::Mhe(m) => to_json_string(&mhe_to_file(m)),
    }
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem<f64>, FileError> {
    load_problem_with_warnings(path).map(|(p, _)| p)
}

pub fn load_problem_with_warnings(path: impl AsRef<Path>) -> Result<(Problem<f64>, Warnings), FileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FileError::Io { path: path.to_path_buf(), source })?;
    parse_problem(&text)
}

pub fn save_problem(problem: &Problem<f64>, path: impl AsRef<Path>) -> Result<(), FileError> {
    write_text(path.as_ref(), &problem_to_string(problem)?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    std::fs::write(path, text).map_err(|source| FileError::Io { path: path.to_path_buf(), source })
}

/// Output of `solve`: the QP solution, plus the estimates when the input was
/// an estimation problem. `rts` fills only `mhe.x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub kind: String,
    pub version: u32,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mhe: Option<EstimateFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<TreeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub v: Vec<Vec<f64>>,
}

fn rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

impl SolutionFile {
    pub fn new(method: &str) -> Self {
        SolutionFile {
            kind: "solution".into(),
            version: SCHEMA_VERSION,
            method: method.into(),
            cost: None,
            x: Vec::new(),
            w: Vec::new(),
            lambda: Vec::new(),
            mhe: None,
            stats: None,
        }
    }

    pub fn with_solution(mut self, s: &Solution<f64>) -> Self {
        self.cost = Some(s.cost);
        self.x = rows(&s.x);
        self.w = rows(&s.w);
        self.lambda = rows(&s.lambda);
        self
    }

    pub fn with_estimate(mut self, e: &MheEstimate<f64>) -> Self {
        self.mhe = Some(EstimateFile { x: rows(&e.x), w: rows(&e.w), v: rows(&e.v) });
        self
    }

    pub fn with_states(mut self, x: &[DVector<f64>]) -> Self {
        self.mhe = Some(EstimateFile { x: rows(x), w: Vec::new(), v: Vec::new() });
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FileError> {
        write_text(path.as_ref(), &to_json_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FileError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| FileError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Serializes any value with 17-significant-digit floats.
pub fn to_json_string<S: Serialize>(value: &S) -> Result<String, FileError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFormatter::default());
    value.serialize(&mut ser).map_err(|e| {
        if e.to_string().contains("non-finite") {
            FileError::NonFinite(e.to_string())
        } else {
            FileError::from(e)
        }
    })?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Objects are indented one key per line; arrays stay on one line.
#[derive(Default)]
struct ExactFormatter {
    depth: usize,
    has_value: Vec<bool>,
}

impl ExactFormatter {
    fn newline<W: ?Sized + Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(b"\n")?;
        for _ in 0..self.depth {
            w.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl serde_json::ser::Formatter for ExactFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("non-finite number {value}")));
        }
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    // serde_json routes NaN and infinities here; none of the file types use null.
    fn write_null<W: ?Sized + Write>(&mut self, _w: &mut W) -> io::Result<()> {
        Err(io::Error::new(io::ErrorKind::InvalidData, "non-finite number"))
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.depth += 1;
        self.has_value.push(false);
        w.write_all(b"{")
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.depth -= 1;
        if self.has_value.pop().unwrap_or(false) {
            self.newline(w)?;
        }
        w.write_all(b"}")
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        self.newline(w)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, _w: &mut W) -> io::Result<()> {
        if let Some(v) = self.has_value.last_mut() {
            *v = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_significant_digits() {
        let s = to_json_string(&vec![0.1f64, -2.5e-300, 1.0]).unwrap();
        assert_eq!(s.trim(), "[1.0000000000000001e-1,-2.5000000000000000e-300,1.0000000000000000e0]");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, -2.5e-300, 1.0]);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(matches!(to_json_string(&vec![f64::NAN]), Err(FileError::NonFinite(_))));
    }

    #[test]
    fn missing_stages_key_is_named() {
        let text = r#"{"kind": "uftoc", "version": 1, "dims": {"n_x": 1, "n_w": 1}, "N": 1,
            "x0": [0.0], "terminal": {"Q": [[1.0]], "l": [0.0], "c": 0.0}}"#;
        let err = parse_problem(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stages") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let err = parse_problem(r#"{"kind": "uftoc", "version": 7}"#).unwrap_err();
        assert!(matches!(err, FileError::Version { found: 7, expected: 1 }));
    }

    #[test]
    fn unknown_kind_is_reported() {
        let err = parse_problem(r#"{"kind": "lqr", "version": 1}"#).unwrap_err();
        assert!(matches!(err, FileError::UnknownKind(k) if k == "lqr"));
    }

    #[test]
    fn ragged_matrix_names_the_field() {
        let text = r#"{"kind": "uftoc", "version": 1, "dims": {"n_x": 1, "n_w": 1}, "N": 1, "x0": [0.0],
            "stages": [{"Q": [[1.0, 0.0], [0.0]], "l": [0.0, 0.0], "c": 0.0, "A": [[1.0]], "B": [[1.0]], "a": [0.0]}],
            "terminal": {"Q": [[1.0]], "l": [0.0], "c": 0.0}}"#;
        let err = parse_problem(text).unwrap_err();
        assert!(err.to_string().contains("stages[0].Q"), "{err}");
    }

    #[test]
    fn asymmetric_weight_is_symmetrized_with_warning() {
        let text = r#"{"kind": "uftoc", "version": 1, "dims": {"n_x": 1, "n_w": 1}, "N": 1, "x0": [0.0],
            "stages": [{"Q": [[1.0, 0.2], [0.0, 1.0]], "l": [0.0, 0.0], "c": 0.0, "A": [[1.0]], "B": [[1.0]], "a": [0.0]}],
            "terminal": {"Q": [[1.0]], "l": [0.0], "c": 0.0}}"#;
        let (p, warnings) = parse_problem(text).unwrap();
        assert_eq!(warnings.len(), 1);
        let Problem::Uftoc(p) = p else { panic!("expected uftoc") };
        assert_eq!(p.stages[0].q[(0, 1)], 0.1);
        assert_eq!(p.stages[0].q[(1, 0)], 0.1);
    }
}
