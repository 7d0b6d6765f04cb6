//! Reconstruction metrics and sensitivity studies.
//!
//! Variances use the population (1/N) convention throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{FieldKind, Grid, SensorLayout, Split, StateField, States};
use crate::error::{Error, Result};
use crate::grid_model::{GridModel, GridOutput};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Temperature differences between successive listed levels, one time
/// series per pair `(levels[i+1], levels[i])`.
pub fn delta_t(t: &StateField, levels: &[usize]) -> Result<Vec<Vec<f64>>> {
    if levels.len() < 2 {
        return Err(Error::Usage(format!("need at least two levels, got {}", levels.len())));
    }
    if let Some(&z) = levels.iter().find(|&&z| z >= t.n_z) {
        return Err(Error::Usage(format!("level {z} outside the grid")));
    }
    Ok(levels
        .windows(2)
        .map(|w| (0..t.n_t).map(|j| t.get(j, w[1]) - t.get(j, w[0])).collect())
        .collect())
}

/// Root-mean-squared error divided by the standard deviation of `target`.
pub fn nrmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || target.len() < 2 {
        return Err(Error::Usage(format!(
            "nrmse needs equal lengths >= 2, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let sd = variance(target).sqrt();
    if !(sd > 0.0) {
        return Err(Error::UndefinedMetric("target has zero standard deviation".into()));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt() / sd)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Usage("r2 needs equal non-empty inputs".into()));
    }
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedMetric("truth has zero variance".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean of the R² scores of `x_a`, `x_p`, `T` and `theta`.
pub fn r2_avg(pred: &GridOutput, truth: &States) -> Result<f64> {
    let mut total = 0.0;
    for kind in FieldKind::ALL {
        let p = pred
            .field(kind)
            .ok_or_else(|| Error::Unsupported(format!("model does not reconstruct {}", kind.name())))?;
        let t = truth.field(kind);
        if p.n_t != t.n_t || p.n_z != t.n_z {
            return Err(Error::Usage("prediction and truth shapes differ".into()));
        }
        total += r2(&p.values, &t.values)
            .map_err(|e| Error::UndefinedMetric(format!("{}: {e}", kind.name())))?;
    }
    Ok(total / 4.0)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Usage("pearson needs equal lengths >= 2".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::UndefinedMetric("constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Rescales a series to `[0, 1]`; a constant series maps to zeros.
pub fn min_max_scale(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// First time (linearly interpolated, in units of `dt`) at which the
/// activity at `level` falls below `threshold`.
pub fn crossing_time(theta: &StateField, level: usize, threshold: f64, dt: f64) -> Option<f64> {
    let s = theta.series(level);
    if s.first().is_some_and(|&v| v < threshold) {
        return Some(0.0);
    }
    s.windows(2).enumerate().find_map(|(j, w)| {
        (w[1] < threshold && w[0] >= threshold).then(|| {
            let frac = (w[0] - threshold) / (w[0] - w[1]);
            (j as f64 + frac) * dt
        })
    })
}

fn gather(f: &StateField, levels: &[usize]) -> Vec<f64> {
    (0..f.n_t).flat_map(|j| levels.iter().map(move |&z| f.get(j, z))).collect()
}

/// Metrics of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub seed: Option<u64>,
    pub dataset: String,
    pub nrmse_t: BTreeMap<String, f64>,
    pub nrmse_delta_t: BTreeMap<String, f64>,
    pub pearson_t: BTreeMap<String, f64>,
    pub r2_avg: Option<f64>,
}

impl MetricReport {
    /// Scores `pred` against `truth` on every split whose levels the model
    /// predicts. `splits` restricts the evaluation, e.g. to the training
    /// levels of a model that only predicts those.
    pub fn compute(
        variant: &str,
        seed: Option<u64>,
        dataset: &str,
        pred: &GridOutput,
        truth: &States,
        layout: &SensorLayout,
        splits: &[Split],
    ) -> Result<Self> {
        let mut r = Self {
            variant: variant.into(),
            seed,
            dataset: dataset.into(),
            nrmse_t: BTreeMap::new(),
            nrmse_delta_t: BTreeMap::new(),
            pearson_t: BTreeMap::new(),
            r2_avg: None,
        };
        for &split in splits {
            let levels = layout.levels(split);
            let (p, t) = (gather(&pred.t, levels), gather(&truth.t, levels));
            let name = split.name().to_string();
            r.nrmse_t.insert(name.clone(), nrmse(&p, &t)?);
            r.pearson_t.insert(name.clone(), pearson(&p, &t)?);
            if levels.len() >= 2 {
                let dp: Vec<f64> = delta_t(&pred.t, levels)?.concat();
                let dt: Vec<f64> = delta_t(&truth.t, levels)?.concat();
                r.nrmse_delta_t.insert(name, nrmse(&dp, &dt)?);
            }
        }
        if pred.theta.is_some() {
            r.r2_avg = Some(r2_avg(pred, truth)?);
        }
        Ok(r)
    }

    pub const CSV_SPLITS: [&'static str; 3] = ["train", "val1", "val2"];

    pub fn csv_header() -> String {
        let mut h = vec!["variant".to_string(), "seed".into(), "dataset".into()];
        for s in Self::CSV_SPLITS {
            h.push(format!("nrmse_T_{s}"));
        }
        for s in Self::CSV_SPLITS {
            h.push(format!("nrmse_dT_{s}"));
        }
        for s in Self::CSV_SPLITS {
            h.push(format!("pearson_T_{s}"));
        }
        h.push("r2_avg".into());
        h.join(",")
    }

    /// One flat CSV row matching [`MetricReport::csv_header`]; absent values
    /// are empty fields.
    pub fn csv_row(&self) -> String {
        let f = |v: Option<&f64>| v.map(|x| crate::dataset::format_g12(*x)).unwrap_or_default();
        let mut row = vec![
            self.variant.clone(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.dataset.clone(),
        ];
        for map in [&self.nrmse_t, &self.nrmse_delta_t, &self.pearson_t] {
            for s in Self::CSV_SPLITS {
                row.push(f(map.get(s)));
            }
        }
        row.push(f(self.r2_avg.as_ref()));
        row.join(",")
    }
}

/// Multiplicative change of the inlet conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub name: String,
    #[serde(default = "one")]
    pub t_inlet: f64,
    #[serde(default = "one")]
    pub xa_inlet: f64,
    #[serde(default = "one")]
    pub xp_inlet: f64,
}

fn one() -> f64 {
    1.0
}

impl Perturbation {
    pub fn new(name: &str, t: f64, xa: f64, xp: f64) -> Self {
        Self {
            name: name.into(),
            t_inlet: t,
            xa_inlet: xa,
            xp_inlet: xp,
        }
    }

    /// Inlet temperature +10 %, inlet poison +25 %, inlet reactant +25 %.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("T_inlet_x1.10", 1.10, 1.0, 1.0),
            Self::new("xp_inlet_x1.25", 1.0, 1.0, 1.25),
            Self::new("xa_inlet_x1.25", 1.0, 1.25, 1.0),
        ]
    }

    pub fn apply(&self, g: &Grid) -> Grid {
        let mut out = g.clone();
        out.inlet_t.iter_mut().for_each(|v| *v *= self.t_inlet);
        out.inlet_xa.iter_mut().for_each(|v| *v *= self.xa_inlet);
        out.inlet_xp.iter_mut().for_each(|v| *v *= self.xp_inlet);
        out
    }
}

/// Baseline and perturbed responses of a grid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResponse {
    pub perturbation: Perturbation,
    pub levels: Vec<usize>,
    /// Min-max scaled ΔT series, one per successive level pair.
    pub baseline: Vec<Vec<f64>>,
    pub perturbed: Vec<Vec<f64>>,
    /// Time for the outlet activity to fall below 0.5; `None` if it never
    /// does within the horizon or the model has no activity field.
    pub baseline_crossing: Option<f64>,
    pub perturbed_crossing: Option<f64>,
}

pub const CROSSING_LEVEL: f64 = 0.5;

pub fn sensitivity_sweep(
    model: &GridModel,
    grid: &Grid,
    perturbation: &Perturbation,
    levels: &[usize],
) -> Result<SensitivityResponse> {
    let base = model.forward(grid)?;
    let pert = model.forward(&perturbation.apply(grid))?;
    let scaled = |o: &GridOutput| -> Result<Vec<Vec<f64>>> {
        Ok(delta_t(&o.t, levels)?.iter().map(|s| min_max_scale(s)).collect())
    };
    let cross = |o: &GridOutput| {
        o.theta
            .as_ref()
            .and_then(|th| crossing_time(th, grid.n_z - 1, CROSSING_LEVEL, grid.dt))
    };
    Ok(SensitivityResponse {
        perturbation: perturbation.clone(),
        levels: levels.to_vec(),
        baseline: scaled(&base)?,
        perturbed: scaled(&pert)?,
        baseline_crossing: cross(&base),
        perturbed_crossing: cross(&pert),
    })
}
