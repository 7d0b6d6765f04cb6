//! Datasets on disk: one `data.csv` with a row per grid node and a
//! `meta.json` describing how the data were produced.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{FieldKind, Grid, ReactorParams, StateField, States};
use crate::error::{Error, Result};
use crate::simulator::{downsample, FineSolution, Scenario};

pub const DATA_FILE: &str = "data.csv";
pub const META_FILE: &str = "meta.json";
const HEADER: [&str; 7] = ["t_index", "z_index", "xa", "xp", "T", "theta", "U"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub n_t: usize,
    pub n_z: usize,
    pub dz: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    /// SHA-256 of the reactor parameters in canonical JSON form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_courant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<usize>,
}

/// Values per `(t, z)` node, time-major; `None` marks a value that was not
/// measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub xa: Vec<Option<f64>>,
    pub xp: Vec<Option<f64>>,
    pub t: Vec<Option<f64>>,
    pub theta: Vec<Option<f64>>,
    pub velocity: Vec<f64>,
}

pub fn params_hash(p: &ReactorParams) -> Result<String> {
    let json = serde_json::to_string(p)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

impl Dataset {
    pub fn from_states(meta: DatasetMeta, s: &States, velocity: Vec<f64>) -> Result<Self> {
        if s.n_t() != meta.n_t || s.n_z() != meta.n_z || velocity.len() != meta.n_t {
            return Err(Error::Usage("dataset dimensions disagree with the fields".into()));
        }
        let wrap = |f: &StateField| f.values.iter().map(|&v| Some(v)).collect();
        Ok(Self {
            xa: wrap(&s.xa),
            xp: wrap(&s.xp),
            t: wrap(&s.t),
            theta: wrap(&s.theta),
            velocity,
            meta,
        })
    }

    /// Ground-truth dataset of a simulated cycle on `grid`.
    pub fn from_solution(
        sol: &FineSolution,
        grid: &Grid,
        params: &ReactorParams,
        scenario: &Scenario,
    ) -> Result<Self> {
        let states = downsample(sol, grid.n_t, grid.n_z)?;
        let meta = DatasetMeta {
            name: scenario.name.clone(),
            n_t: grid.n_t,
            n_z: grid.n_z,
            dz: grid.dz,
            dt: grid.dt,
            scenario: Some(scenario.clone()),
            params_sha256: Some(params_hash(params)?),
            cycle_end: sol.cycle_end,
            solver_steps: Some(sol.steps),
            max_courant: Some(sol.cfl),
            refinement: Some(sol.refinement),
        };
        Self::from_states(meta, &states, grid.velocity.clone())
    }

    fn column(&self, kind: FieldKind) -> &[Option<f64>] {
        match kind {
            FieldKind::Xa => &self.xa,
            FieldKind::Xp => &self.xp,
            FieldKind::T => &self.t,
            FieldKind::Theta => &self.theta,
        }
    }

    pub fn value(&self, kind: FieldKind, t: usize, z: usize) -> Option<f64> {
        self.column(kind)[t * self.meta.n_z + z]
    }

    fn require(&self, kind: FieldKind, t: usize, z: usize) -> Result<f64> {
        self.value(kind, t, z).ok_or_else(|| {
            Error::Usage(format!(
                "dataset {}: {} missing at t={t}, z={z}",
                self.meta.name,
                kind.name()
            ))
        })
    }

    /// Boundary and initial conditions: the inlet is level 0 and the
    /// catalyst starts fresh unless the activity at `t = 0` is recorded.
    pub fn grid(&self) -> Result<Grid> {
        let (n_t, n_z) = (self.meta.n_t, self.meta.n_z);
        let series = |kind| (0..n_t).map(|j| self.require(kind, j, 0)).collect::<Result<Vec<_>>>();
        let theta0 = (0..n_z)
            .map(|z| self.value(FieldKind::Theta, 0, z))
            .collect::<Option<Vec<_>>>()
            .unwrap_or_else(|| vec![1.0; n_z]);
        Ok(Grid {
            n_z,
            n_t,
            dz: self.meta.dz,
            dt: self.meta.dt,
            inlet_xa: series(FieldKind::Xa)?,
            inlet_xp: series(FieldKind::Xp)?,
            inlet_t: series(FieldKind::T)?,
            theta0,
            velocity: self.velocity.clone(),
        })
    }

    /// All four fields; fails if any value is missing.
    pub fn truth(&self) -> Result<States> {
        let (n_t, n_z) = (self.meta.n_t, self.meta.n_z);
        let field = |kind| -> Result<StateField> {
            let values = (0..n_t * n_z)
                .map(|k| self.require(kind, k / n_z, k % n_z))
                .collect::<Result<Vec<_>>>()?;
            Ok(StateField { kind, n_t, n_z, values })
        };
        Ok(States {
            xa: field(FieldKind::Xa)?,
            xp: field(FieldKind::Xp)?,
            t: field(FieldKind::T)?,
            theta: field(FieldKind::Theta)?,
        })
    }

    /// Temperatures at `levels` for every time index, time-major.
    pub fn temperatures(&self, levels: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.meta.n_t * levels.len());
        for j in 0..self.meta.n_t {
            for &z in levels {
                if z >= self.meta.n_z {
                    return Err(Error::Usage(format!("level {z} outside the grid")));
                }
                out.push(self.require(FieldKind::T, j, z)?);
            }
        }
        Ok(out)
    }

    /// Keeps only what a plant would measure: inlet conditions and the
    /// temperatures at `levels`.
    pub fn measurements(&self, levels: &[usize]) -> Self {
        let mut out = self.clone();
        let n_z = self.meta.n_z;
        for k in 0..self.meta.n_t * n_z {
            let z = k % n_z;
            if z != 0 {
                out.xa[k] = None;
                out.xp[k] = None;
                if !levels.contains(&z) {
                    out.t[k] = None;
                }
            }
            out.theta[k] = None;
        }
        out
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATA_FILE);
        fs::write(&path, self.to_csv()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta)? + "\n";
        fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let path = dir.join(DATA_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_csv(meta, &text).map_err(|detail| Error::Format {
            path: path.display().to_string(),
            detail,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Usage(format!("csv: {e}"));
        w.write_record(HEADER).map_err(io)?;
        let n_z = self.meta.n_z;
        let opt = |v: Option<f64>| v.map(format_g12).unwrap_or_default();
        for k in 0..self.meta.n_t * n_z {
            let (j, z) = (k / n_z, k % n_z);
            w.write_record([
                j.to_string(),
                z.to_string(),
                opt(self.xa[k]),
                opt(self.xp[k]),
                opt(self.t[k]),
                opt(self.theta[k]),
                format_g12(self.velocity[j]),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Usage(e.to_string()))
    }

    fn from_csv(meta: DatasetMeta, text: &str) -> std::result::Result<Self, String> {
        let (n_t, n_z) = (meta.n_t, meta.n_z);
        let n = n_t * n_z;
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| e.to_string())?;
        if header.iter().ne(HEADER) {
            return Err(format!("unexpected header {header:?}"));
        }
        let mut cols: [Vec<Option<f64>>; 4] = std::array::from_fn(|_| vec![None; n]);
        let mut velocity = vec![f64::NAN; n_t];
        let mut seen = vec![false; n];
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let at = |i: usize| rec.get(i).unwrap_or("").trim();
            let index = |i: usize| at(i).parse::<usize>().map_err(|e| format!("row {}: {e}", line + 2));
            let (j, z) = (index(0)?, index(1)?);
            if j >= n_t || z >= n_z {
                return Err(format!("row {}: index ({j}, {z}) outside {n_t}x{n_z}", line + 2));
            }
            let k = j * n_z + z;
            if seen[k] {
                return Err(format!("row {}: duplicate node ({j}, {z})", line + 2));
            }
            seen[k] = true;
            let num = |i: usize| -> std::result::Result<Option<f64>, String> {
                match at(i) {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|e| format!("row {}: {s:?}: {e}", line + 2)),
                }
            };
            for (c, col) in cols.iter_mut().enumerate() {
                col[k] = num(2 + c)?;
            }
            if let Some(u) = num(6)? {
                velocity[j] = u;
            }
        }
        if let Some(j) = velocity.iter().position(|u| u.is_nan()) {
            return Err(format!("no velocity recorded for time index {j}"));
        }
        let [xa, xp, t, theta] = cols;
        Ok(Self { meta, xa, xp, t, theta, velocity })
    }
}

/// Formats like C's `%.12g`.
pub fn format_g12(x: f64) -> String {
    const P: i32 = 12;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= P {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
