//! Dataset representation and on-disk persistence.
//!
//! A dataset directory holds a JSON manifest plus one raw binary file per
//! session. Binary files are 64-bit little-endian floats, trial-major and
//! row-major within a trial (time index outer, space index inner). Matrix
//! bundles (ground truth, fitted models) use the same element layout with a
//! single data file and per-matrix offsets.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DATASET_FORMAT: &str = "mmgm-dataset";
pub const BUNDLE_FORMAT: &str = "mmgm-matrices";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

/// Session count, per-session trial counts and the trial shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DimsRecord", into = "DimsRecord")]
pub struct Dimensions {
    n: Vec<usize>,
    p: usize,
    q: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsRecord {
    m: usize,
    n: Vec<usize>,
    p: usize,
    q: usize,
}

impl TryFrom<DimsRecord> for Dimensions {
    type Error = Error;

    fn try_from(r: DimsRecord) -> Result<Self> {
        if r.m != r.n.len() {
            return Err(Error::MalformedManifest(format!(
                "m = {} but {} trial counts given",
                r.m,
                r.n.len()
            )));
        }
        Dimensions::new(r.n, r.p, r.q)
    }
}

impl From<Dimensions> for DimsRecord {
    fn from(d: Dimensions) -> Self {
        DimsRecord {
            m: d.n.len(),
            n: d.n,
            p: d.p,
            q: d.q,
        }
    }
}

impl Dimensions {
    pub fn new(n: Vec<usize>, p: usize, q: usize) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::MalformedManifest("at least one session is required".into()));
        }
        if let Some(l) = n.iter().position(|&nl| nl == 0) {
            return Err(Error::MalformedManifest(format!("session {l} has no trials")));
        }
        if p < 2 || q < 2 {
            return Err(Error::MalformedManifest(format!(
                "trial shape must be at least 2x2, got {p}x{q}"
            )));
        }
        Ok(Dimensions { n, p, q })
    }

    /// Same trial count in every session.
    pub fn balanced(m: usize, n: usize, p: usize, q: usize) -> Result<Self> {
        Dimensions::new(vec![n; m], p, q)
    }

    pub fn m(&self) -> usize {
        self.n.len()
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn n0(&self) -> usize {
        *self.n.iter().min().expect("non-empty by construction")
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }
}

/// One p × q observation (rows are time points, columns spatial nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial(DMatrix<f64>);

impl Trial {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        check_finite(&data, "trial")?;
        Ok(Trial(data))
    }

    pub fn from_row_slice(p: usize, q: usize, values: &[f64]) -> Result<Self> {
        if values.len() != p * q {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {p}x{q} trial, got {}",
                p * q,
                values.len()
            )));
        }
        Trial::new(DMatrix::from_row_slice(p, q, values))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Trial {
        Trial(&self.0 * c)
    }
}

fn check_finite(m: &DMatrix<f64>, context: &str) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFiniteValue {
                    context: context.to_string(),
                    row: r,
                    col: c,
                });
            }
        }
    }
    Ok(())
}

/// Provenance carried in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub seed: Option<u64>,
}

/// Population parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sigma_s: Vec<DMatrix<f64>>,
    pub omega_s: Vec<DMatrix<f64>>,
    /// Partial correlations; diagonal is -1.
    pub rho_s: Vec<DMatrix<f64>>,
    pub sigma_t: Vec<DMatrix<f64>>,
    /// Temporal Cholesky coefficients, entry (s, t) for s < t.
    pub beta_t: Vec<DMatrix<f64>>,
    pub phi_t: Vec<DMatrix<f64>>,
    /// Shared support: true on the diagonal and on every edge.
    pub support: DMatrix<bool>,
}

impl GroundTruth {
    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        let m = dims.m();
        let (p, q) = (dims.p(), dims.q());
        let lens = [
            self.sigma_s.len(),
            self.omega_s.len(),
            self.rho_s.len(),
            self.sigma_t.len(),
            self.beta_t.len(),
            self.phi_t.len(),
        ];
        if lens.iter().any(|&len| len != m) {
            return Err(Error::ShapeMismatch(format!(
                "ground truth must have {m} sessions per parameter, got {lens:?}"
            )));
        }
        if self.support.shape() != (q, q) {
            return Err(Error::ShapeMismatch("support mask must be q x q".into()));
        }
        for l in 0..m {
            let prod = &self.sigma_s[l] * &self.omega_s[l];
            if linalg::max_abs_diff(&prod, &DMatrix::identity(q, q)) > 1e-8 {
                return Err(Error::ShapeMismatch(format!(
                    "spatial covariance and precision of session {l} are not inverses"
                )));
            }
            let tr = self.sigma_t[l].trace();
            if (tr - p as f64).abs() > 1e-8 {
                return Err(Error::ShapeMismatch(format!(
                    "temporal covariance of session {l} has trace {tr}, expected {p}"
                )));
            }
        }
        Ok(())
    }

    /// Pairs i < j that are null in every session.
    pub fn zero_edges(&self) -> EdgeSet {
        let q = self.support.nrows();
        let edges = (0..q)
            .flat_map(|i| ((i + 1)..q).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.support[(i, j)])
            .collect();
        EdgeSet { edges }
    }

    fn to_bundle(&self) -> MatrixBundle {
        let mut b = MatrixBundle::default();
        let groups: [(&str, &Vec<DMatrix<f64>>); 6] = [
            ("sigma_s", &self.sigma_s),
            ("omega_s", &self.omega_s),
            ("rho_s", &self.rho_s),
            ("sigma_t", &self.sigma_t),
            ("beta_t", &self.beta_t),
            ("phi_t", &self.phi_t),
        ];
        for (name, mats) in groups {
            for (l, mat) in mats.iter().enumerate() {
                b.push(format!("{name}/{l}"), mat.clone());
            }
        }
        b.push("support", self.support.map(|s| if s { 1.0 } else { 0.0 }));
        b
    }

    fn from_bundle(b: &MatrixBundle, m: usize) -> Result<Self> {
        let series = |name: &str| -> Result<Vec<DMatrix<f64>>> {
            (0..m).map(|l| b.require(&format!("{name}/{l}")).cloned()).collect()
        };
        Ok(GroundTruth {
            sigma_s: series("sigma_s")?,
            omega_s: series("omega_s")?,
            rho_s: series("rho_s")?,
            sigma_t: series("sigma_t")?,
            beta_t: series("beta_t")?,
            phi_t: series("phi_t")?,
            support: b.require("support")?.map(|v| v != 0.0),
        })
    }
}

/// Multi-session matrix-variate sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSessionDataset {
    pub(crate) dims: Dimensions,
    pub(crate) sessions: Vec<Vec<Trial>>,
    pub info: DatasetInfo,
    pub ground_truth: Option<GroundTruth>,
}

impl MultiSessionDataset {
    /// Builds a dataset, deriving the dimensions from the trials.
    pub fn new(sessions: Vec<Vec<Trial>>, info: DatasetInfo) -> Result<Self> {
        let first = sessions
            .first()
            .and_then(|s| s.first())
            .ok_or_else(|| Error::MalformedManifest("dataset has no sessions".into()))?;
        let (p, q) = first.data().shape();
        let dims = Dimensions::new(sessions.iter().map(Vec::len).collect(), p, q)?;
        let ds = MultiSessionDataset {
            dims,
            sessions,
            info,
            ground_truth: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_ground_truth(mut self, truth: GroundTruth) -> Result<Self> {
        truth.validate(&self.dims)?;
        self.ground_truth = Some(truth);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions.is_empty() {
            return Err(Error::MalformedManifest("dataset has no sessions".into()));
        }
        if self.sessions.len() != self.dims.m() {
            return Err(Error::ShapeMismatch(format!(
                "{} sessions present but dimensions declare {}",
                self.sessions.len(),
                self.dims.m()
            )));
        }
        let (p, q) = (self.dims.p(), self.dims.q());
        for (l, session) in self.sessions.iter().enumerate() {
            if session.len() != self.dims.n()[l] {
                return Err(Error::ShapeMismatch(format!(
                    "session {l} has {} trials, expected {}",
                    session.len(),
                    self.dims.n()[l]
                )));
            }
            for (k, trial) in session.iter().enumerate() {
                if trial.data().shape() != (p, q) {
                    return Err(Error::ShapeMismatch(format!(
                        "trial {k} of session {l} is {:?}, expected ({p}, {q})",
                        trial.data().shape()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &Dimensions {
        &self.dims
    }

    pub fn sessions(&self) -> &[Vec<Trial>] {
        &self.sessions
    }

    pub fn session(&self, l: usize) -> &[Trial] {
        &self.sessions[l]
    }

    /// Every observation multiplied by `c`; ground truth is dropped.
    pub fn scaled(&self, c: f64) -> MultiSessionDataset {
        MultiSessionDataset {
            dims: self.dims.clone(),
            sessions: self
                .sessions
                .iter()
                .map(|s| s.iter().map(|t| t.scaled(c)).collect())
                .collect(),
            info: self.info.clone(),
            ground_truth: None,
        }
    }

    /// Single-session view of session `l`.
    pub fn single_session(&self, l: usize) -> MultiSessionDataset {
        MultiSessionDataset {
            dims: Dimensions::new(vec![self.dims.n()[l]], self.dims.p(), self.dims.q())
                .expect("sub-dimensions of valid dimensions"),
            sessions: vec![self.sessions[l].clone()],
            info: self.info.clone(),
            ground_truth: None,
        }
    }
}

/// Set of spatial node pairs (i, j), stored with i < j.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Validates and normalizes the pairs to i < j, keeping the input order.
    pub fn new(edges: Vec<(usize, usize)>, q: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut out = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidEdgeSet(format!("self-loop ({a}, {a})")));
            }
            if a >= q || b >= q {
                return Err(Error::InvalidEdgeSet(format!(
                    "edge ({a}, {b}) out of range for q = {q}"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::InvalidEdgeSet(format!("duplicate edge {e:?}")));
            }
            out.push(e);
        }
        Ok(EdgeSet { edges: out })
    }

    /// All pairs i < j in row-major order.
    pub fn off_diagonal(q: usize) -> Self {
        EdgeSet {
            edges: (0..q)
                .flat_map(|i| ((i + 1)..q).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// Every pair between two disjoint node ranges, row-major over `a × b`.
    pub fn cross_block(
        a: std::ops::Range<usize>,
        b: std::ops::Range<usize>,
        q: usize,
    ) -> Result<Self> {
        if a.start < b.end && b.start < a.end {
            return Err(Error::InvalidEdgeSet(format!(
                "node ranges {a:?} and {b:?} overlap"
            )));
        }
        let pairs = a
            .flat_map(|i| b.clone().map(move |j| (i, j)))
            .collect();
        EdgeSet::new(pairs, q)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Rows of all trials stacked trial-major: `(n_l p) × q`.
pub fn stack_spatial(session: &[Trial]) -> Result<DMatrix<f64>> {
    let (p, q) = session_shape(session)?;
    let mut out = DMatrix::zeros(session.len() * p, q);
    for (k, trial) in session.iter().enumerate() {
        out.view_mut((k * p, 0), (p, q)).copy_from(trial.data());
    }
    Ok(out)
}

/// Transposed trials stacked trial-major: `(n_l q) × p`.
pub fn stack_temporal(session: &[Trial]) -> Result<DMatrix<f64>> {
    let (p, q) = session_shape(session)?;
    let mut out = DMatrix::zeros(session.len() * q, p);
    for (k, trial) in session.iter().enumerate() {
        out.view_mut((k * q, 0), (q, p))
            .copy_from(&trial.data().transpose());
    }
    Ok(out)
}

fn session_shape(session: &[Trial]) -> Result<(usize, usize)> {
    let first = session
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty session".into()))?;
    let shape = first.data().shape();
    if let Some(k) = session.iter().position(|t| t.data().shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "trial {k} has shape {:?}, expected {shape:?}",
            session[k].data().shape()
        )));
    }
    Ok(shape)
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format: String,
    version: u32,
    name: String,
    #[serde(default)]
    seed: Option<u64>,
    dims: Dimensions,
    dtype: String,
    endianness: String,
    sessions: Vec<SessionFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<String>,
}

/// Either one binary file for the whole session or one CSV file per trial.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFiles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    binary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    csv: Option<Vec<String>>,
}

fn check_encoding(dtype: &str, endianness: &str) -> Result<()> {
    if dtype != "f64" || endianness != "little" {
        return Err(Error::MalformedManifest(format!(
            "unsupported encoding {dtype}/{endianness}; only f64/little is supported"
        )));
    }
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiSessionDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedManifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != DATASET_FORMAT || manifest.version != FORMAT_VERSION {
        return Err(Error::MalformedManifest(format!(
            "unexpected format {} v{}",
            manifest.format, manifest.version
        )));
    }
    check_encoding(&manifest.dtype, &manifest.endianness)?;
    let dims = manifest.dims.clone();
    if manifest.sessions.len() != dims.m() {
        return Err(Error::ShapeMismatch(format!(
            "manifest lists {} session files for m = {}",
            manifest.sessions.len(),
            dims.m()
        )));
    }
    let (p, q) = (dims.p(), dims.q());
    let mut sessions = Vec::with_capacity(dims.m());
    for (l, files) in manifest.sessions.iter().enumerate() {
        let n_l = dims.n()[l];
        let trials = match (&files.binary, &files.csv) {
            (Some(bin), None) => {
                let values = read_f64_file(&dir.join(bin))?;
                if values.len() != n_l * p * q {
                    return Err(Error::ShapeMismatch(format!(
                        "{bin}: {} values, expected {n_l} trials of {p}x{q}",
                        values.len()
                    )));
                }
                values
                    .chunks_exact(p * q)
                    .map(|chunk| Trial::from_row_slice(p, q, chunk))
                    .collect::<Result<Vec<_>>>()?
            }
            (None, Some(csvs)) => {
                if csvs.len() != n_l {
                    return Err(Error::ShapeMismatch(format!(
                        "session {l} lists {} trial files, expected {n_l}",
                        csvs.len()
                    )));
                }
                csvs.iter()
                    .map(|f| {
                        let t = read_csv_trial(dir.join(f))?;
                        if t.data().shape() != (p, q) {
                            return Err(Error::ShapeMismatch(format!(
                                "{f}: shape {:?}, expected ({p}, {q})",
                                t.data().shape()
                            )));
                        }
                        Ok(t)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            _ => {
                return Err(Error::MalformedManifest(format!(
                    "session {l} must name exactly one of `binary` or `csv`"
                )))
            }
        };
        sessions.push(trials);
    }
    let ground_truth = match &manifest.ground_truth {
        Some(file) => {
            let bundle = MatrixBundle::load(dir.join(file))?;
            let truth = GroundTruth::from_bundle(&bundle, dims.m())?;
            truth.validate(&dims)?;
            Some(truth)
        }
        None => None,
    };
    let ds = MultiSessionDataset {
        dims,
        sessions,
        info: DatasetInfo {
            name: manifest.name,
            seed: manifest.seed,
        },
        ground_truth,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &MultiSessionDataset, dir: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sessions = Vec::with_capacity(ds.sessions.len());
    for (l, session) in ds.sessions.iter().enumerate() {
        let name = format!("session_{l}.bin");
        write_f64_file(&dir.join(&name), session.iter().map(Trial::data))?;
        sessions.push(SessionFiles {
            binary: Some(name),
            csv: None,
        });
    }
    let ground_truth = match &ds.ground_truth {
        Some(truth) => {
            truth.to_bundle().save(dir, "truth")?;
            Some("truth.json".to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        name: ds.info.name.clone(),
        seed: ds.info.seed,
        dims: ds.dims.clone(),
        dtype: "f64".into(),
        endianness: "little".into(),
        sessions,
        ground_truth,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Header-free comma-separated trial: one line per time point.
pub fn read_csv_trial(path: impl AsRef<Path>) -> Result<Trial> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (r, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::MalformedManifest(format!(
                        "{}:{}: cannot parse {tok:?}",
                        path.display(),
                        r + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::ShapeMismatch(format!(
                    "{}:{}: {} columns, expected {c}",
                    path.display(),
                    r + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::ShapeMismatch(format!("{} is empty", path.display())))?;
    Trial::from_row_slice(rows, cols, &values)
}

pub fn write_csv_trial(trial: &Trial, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let m = trial.data();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f64_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect())
}

pub(crate) fn write_f64_file<'a>(
    path: &Path,
    mats: impl IntoIterator<Item = &'a DMatrix<f64>>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for mat in mats {
        for r in 0..mat.nrows() {
            for c in 0..mat.ncols() {
                w.write_all(&mat[(r, c)].to_le_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Named collection of dense matrices stored as `<stem>.json` + `<stem>.bin`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixBundle {
    entries: Vec<(String, DMatrix<f64>)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    format: String,
    version: u32,
    dtype: String,
    endianness: String,
    data: String,
    matrices: Vec<BundleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the data file, in elements.
    offset: usize,
}

impl MatrixBundle {
    pub fn push(&mut self, name: impl Into<String>, mat: DMatrix<f64>) {
        self.entries.push((name.into(), mat));
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.get(name)
            .ok_or_else(|| Error::MalformedManifest(format!("bundle has no matrix `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn into_entries(self) -> Vec<(String, DMatrix<f64>)> {
        self.entries
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data = format!("{stem}.bin");
        let mut offset = 0;
        let mut matrices = Vec::with_capacity(self.entries.len());
        for (name, mat) in &self.entries {
            check_finite(mat, name)?;
            matrices.push(BundleEntry {
                name: name.clone(),
                rows: mat.nrows(),
                cols: mat.ncols(),
                offset,
            });
            offset += mat.len();
        }
        write_f64_file(&dir.join(&data), self.entries.iter().map(|(_, m)| m))?;
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.into(),
            version: FORMAT_VERSION,
            dtype: "f64".into(),
            endianness: "little".into(),
            data,
            matrices,
        };
        write_json(&dir.join(format!("{stem}.json")), &manifest)
    }

    /// Loads from the `<stem>.json` manifest path.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text)
            .map_err(|e| Error::MalformedManifest(format!("{}: {e}", path.display())))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::MalformedManifest(format!(
                "unexpected bundle format {}",
                manifest.format
            )));
        }
        check_encoding(&manifest.dtype, &manifest.endianness)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let values = read_f64_file(&dir.join(&manifest.data))?;
        let mut entries = Vec::with_capacity(manifest.matrices.len());
        for e in manifest.matrices {
            let end = e.offset + e.rows * e.cols;
            if end > values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "matrix `{}` extends past the end of {}",
                    e.name, manifest.data
                )));
            }
            let mat = DMatrix::from_row_slice(e.rows, e.cols, &values[e.offset..end]);
            check_finite(&mat, &e.name)?;
            entries.push((e.name, mat));
        }
        Ok(MatrixBundle { entries })
    }
}
