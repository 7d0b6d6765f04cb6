use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::domain::StateField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_lambda_a")]
    pub lambda_a: f64,
    #[serde(default = "default_lambda_p")]
    pub lambda_p: f64,
    /// Time indices `t_j < t_prime` enter the outlet penalty.
    #[serde(default = "default_t_prime")]
    pub t_prime: usize,
    #[serde(default)]
    pub enable_c1: bool,
    #[serde(default)]
    pub enable_c2: bool,
}

fn default_lambda_a() -> f64 {
    1.0
}
fn default_lambda_p() -> f64 {
    100.0
}
fn default_t_prime() -> usize {
    46
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_a: default_lambda_a(),
            lambda_p: default_lambda_p(),
            t_prime: default_t_prime(),
            enable_c1: false,
            enable_c2: false,
        }
    }
}

impl LossConfig {
    pub fn with_penalties() -> Self {
        Self {
            enable_c1: true,
            enable_c2: true,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_t: usize) -> Result<()> {
        if !(self.lambda_a >= 0.0 && self.lambda_p >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.enable_c2 && self.t_prime > n_t {
            return Err(Error::Config(format!("t_prime {} exceeds n_t {n_t}", self.t_prime)));
        }
        Ok(())
    }
}

/// Temperatures measured at `levels` for every time index, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReadings {
    pub levels: Vec<usize>,
    pub n_t: usize,
    pub values: Vec<f64>,
}

impl SensorReadings {
    pub fn new(levels: Vec<usize>, n_t: usize, values: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || n_t == 0 {
            return Err(Error::Usage("sensor readings need at least one level and time".into()));
        }
        if values.len() != n_t * levels.len() {
            return Err(Error::Usage(format!(
                "{} readings for {} times x {} levels",
                values.len(),
                n_t,
                levels.len()
            )));
        }
        Ok(Self { levels, n_t, values })
    }
}

/// Mean squared temperature error over all sensor readings.
pub fn mse_loss(pred_t: &StateField, readings: &SensorReadings) -> Result<f64> {
    mse_loss_at(pred_t, readings, &readings.levels)
}

/// As [`mse_loss`] but reading the prediction at `pred_levels`, which pairs
/// one-to-one with the sensor levels (used by sensor-shift augmentation).
pub fn mse_loss_at(pred_t: &StateField, readings: &SensorReadings, pred_levels: &[usize]) -> Result<f64> {
    check(readings, pred_levels, pred_t.n_t, pred_t.n_z)?;
    let nl = pred_levels.len();
    let mut sum = 0.0;
    for j in 0..readings.n_t {
        for (k, &z) in pred_levels.iter().enumerate() {
            let e = pred_t.get(j, z) - readings.values[j * nl + k];
            sum += e * e;
        }
    }
    Ok(sum / readings.values.len() as f64)
}

fn check(readings: &SensorReadings, pred_levels: &[usize], n_t: usize, n_z: usize) -> Result<()> {
    if readings.values.is_empty() {
        return Err(Error::Usage("no sensor readings".into()));
    }
    if pred_levels.len() != readings.levels.len() {
        return Err(Error::Usage("prediction levels do not pair with sensor levels".into()));
    }
    if readings.n_t > n_t || pred_levels.iter().any(|&z| z >= n_z) {
        return Err(Error::Usage("sensor index outside the predicted field".into()));
    }
    Ok(())
}

/// Tape version: `pred` holds one handle per `(t, z)` node, time-major.
pub fn mse_loss_tape(
    tape: &mut Tape,
    pred: &[Var],
    n_z: usize,
    readings: &SensorReadings,
    pred_levels: &[usize],
    targets: &[f64],
) -> Result<Var> {
    check(readings, pred_levels, pred.len() / n_z, n_z)?;
    let picked: Vec<Var> = (0..readings.n_t)
        .flat_map(|j| pred_levels.iter().map(move |&z| pred[j * n_z + z]))
        .collect();
    let p = tape.concat(&picked)?;
    mse_vector(tape, p, targets)
}

/// Mean squared difference between a vector on the tape and `targets`.
pub fn mse_vector(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    if tape.len_of(pred) != targets.len() || targets.is_empty() {
        return Err(Error::Usage("prediction and target lengths differ".into()));
    }
    let t = tape.constant(targets);
    let e = tape.sub(pred, t)?;
    let sq = tape.mul(e, e)?;
    Ok(tape.mean(sq)?)
}

/// Penalizes negative concentrations anywhere on the grid.
pub fn penalty_c1(xa: &StateField, xp: &StateField, cfg: &LossConfig) -> f64 {
    let neg = |f: &StateField| f.values.iter().map(|&v| v.min(0.0).powi(2)).sum::<f64>();
    cfg.lambda_a * neg(xa) + cfg.lambda_p * neg(xp)
}

/// Penalizes outlet concentrations before `t_prime`.
pub fn penalty_c2(xa: &StateField, xp: &StateField, cfg: &LossConfig) -> f64 {
    let out = xa.n_z - 1;
    let n = cfg.t_prime.min(xa.n_t);
    let sq = |f: &StateField| (0..n).map(|j| f.get(j, out).powi(2)).sum::<f64>();
    cfg.lambda_a * sq(xa) + cfg.lambda_p * sq(xp)
}

pub fn penalty_c1_tape(tape: &mut Tape, xa: &[Var], xp: &[Var], cfg: &LossConfig) -> Result<Var> {
    let zero = tape.scalar_const(0.0);
    let mut term = |vars: &[Var], w: f64| -> Result<Var> {
        let v = tape.concat(vars)?;
        let m = tape.min(v, zero)?;
        let sq = tape.mul(m, m)?;
        let s = tape.sum(sq)?;
        Ok(tape.scale(s, w)?)
    };
    let a = term(xa, cfg.lambda_a)?;
    let p = term(xp, cfg.lambda_p)?;
    Ok(tape.add(a, p)?)
}

pub fn penalty_c2_tape(
    tape: &mut Tape,
    xa: &[Var],
    xp: &[Var],
    n_z: usize,
    cfg: &LossConfig,
) -> Result<Var> {
    let n = cfg.t_prime.min(xa.len() / n_z);
    if n == 0 {
        return Ok(tape.scalar_const(0.0));
    }
    let mut term = |vars: &[Var], w: f64| -> Result<Var> {
        let outlet: Vec<Var> = (0..n).map(|j| vars[j * n_z + n_z - 1]).collect();
        let v = tape.concat(&outlet)?;
        let sq = tape.mul(v, v)?;
        let s = tape.sum(sq)?;
        Ok(tape.scale(s, w)?)
    };
    let a = term(xa, cfg.lambda_a)?;
    let p = term(xp, cfg.lambda_p)?;
    Ok(tape.add(a, p)?)
}
