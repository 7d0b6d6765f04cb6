//! The physics-shaped cell: one Euler step along the reactor for the
//! concentrations and temperature, one step in time for the activity.

use crate::autodiff::{softplus, softplus_inv, Tape, Var};
use crate::cells::Tensor;
use crate::error::{Error, Result};

pub const K_NAMES: [&str; 8] = ["k_a", "k_p", "k_T", "k_theta", "k_1", "k_2", "k_3", "k_4"];

/// Name of the raw-parameter tensor in a checkpoint.
pub const RAW_K: &str = "pde.raw_k";

/// Initial value of every rate constant.
pub const INITIAL_K: f64 = 0.1;

/// Unconstrained raw parameters; the rate constants are their softplus.
/// Holds eight entries when `g_a`, `g_p` have the closed form and six when
/// they are learned networks (no `k_3`, `k_4`).
#[derive(Debug, Clone, PartialEq)]
pub struct PdeCellParams {
    pub raw: Vec<f64>,
}

impl PdeCellParams {
    pub fn initial(closed_form: bool) -> Self {
        let n = if closed_form { 8 } else { 6 };
        Self {
            raw: vec![softplus_inv(INITIAL_K); n],
        }
    }

    pub fn from_k(k: &[f64]) -> Result<Self> {
        if k.len() != 8 && k.len() != 6 {
            return Err(Error::Usage(format!("expected 6 or 8 rate constants, got {}", k.len())));
        }
        if let Some(bad) = k.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!("rate constants must be positive, got {bad}")));
        }
        Ok(Self {
            raw: k.iter().map(|&v| softplus_inv(v)).collect(),
        })
    }

    pub fn k(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| softplus(r)).collect()
    }

    pub fn closed_form(&self) -> bool {
        self.raw.len() == 8
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(RAW_K, &[self.raw.len()], self.raw.clone())
    }
}

/// Rate constants on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PdeKs {
    pub ka: Var,
    pub kp: Var,
    pub kt: Var,
    pub ktheta: Var,
    pub k1: Var,
    pub k2: Var,
    pub k3: Option<Var>,
    pub k4: Option<Var>,
}

impl PdeKs {
    pub fn bind(tape: &mut Tape, raw: Var) -> Result<Self> {
        let n = tape.len_of(raw);
        if n != 8 && n != 6 {
            return Err(Error::Usage(format!("raw rate vector has length {n}")));
        }
        let k = tape.softplus(raw)?;
        let mut get = |i| tape.index(k, i);
        Ok(Self {
            ka: get(0)?,
            kp: get(1)?,
            kt: get(2)?,
            ktheta: get(3)?,
            k1: get(4)?,
            k2: get(5)?,
            k3: if n == 8 { Some(get(6)?) } else { None },
            k4: if n == 8 { Some(get(7)?) } else { None },
        })
    }

    pub fn closed_form(&self) -> Result<ClosedForm> {
        match (self.k3, self.k4) {
            (Some(k3), Some(k4)) => Ok(ClosedForm { k3, k4 }),
            _ => Err(Error::Usage("closed-form rates need k_3 and k_4".into())),
        }
    }
}

/// Inputs and outputs of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub xa: Var,
    pub xp: Var,
    pub t: Var,
    pub theta: Var,
}

/// The nonlinearities shared by the concentration and temperature updates.
pub trait RateTerms {
    fn g_a(&self, tape: &mut Tape, temp: Var, xa: Var) -> Result<Var>;
    fn g_p(&self, tape: &mut Tape, temp: Var, xp: Var) -> Result<Var>;
}

/// `g_a = exp(-k_3 / T) T x_a`, `g_p = exp(-k_4 / T) x_p`.
#[derive(Debug, Clone, Copy)]
pub struct ClosedForm {
    pub k3: Var,
    pub k4: Var,
}

fn arrhenius(tape: &mut Tape, k: Var, temp: Var) -> Result<Var> {
    let tv = tape.scalar(temp);
    if !(tv > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tv}")));
    }
    let r = tape.div(k, temp)?;
    let r = tape.neg(r)?;
    Ok(tape.exp(r)?)
}

impl RateTerms for ClosedForm {
    fn g_a(&self, tape: &mut Tape, temp: Var, xa: Var) -> Result<Var> {
        let e = arrhenius(tape, self.k3, temp)?;
        let et = tape.mul(e, temp)?;
        Ok(tape.mul(et, xa)?)
    }

    fn g_p(&self, tape: &mut Tape, temp: Var, xp: Var) -> Result<Var> {
        let e = arrhenius(tape, self.k4, temp)?;
        Ok(tape.mul(e, xp)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    A,
    P,
}

/// Closed-form rate term evaluated on plain numbers.
pub fn g_closed_form(temp: f64, x: f64, which: Species, p: &PdeCellParams) -> Result<f64> {
    if !p.closed_form() {
        return Err(Error::Usage("parameters carry no k_3/k_4".into()));
    }
    if !(temp > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temp}")));
    }
    let k = p.k();
    Ok(match which {
        Species::A => (-k[6] / temp).exp() * temp * x,
        Species::P => (-k[7] / temp).exp() * x,
    })
}

/// One grid cell:
///
/// ```text
/// xa'    = xa - k_a / U * g_a(T, xa) * theta
/// xp'    = xp - k_p / U * T * g_p(T, xp) * theta^2
/// T'     = T + k_T * g_a(T, xa) * theta / (U (k_1 + k_2 xa))
/// theta' = clamp(theta - k_theta * g_p(T, xp) * theta, 0, 1)
/// ```
pub fn pde_cell_forward(
    tape: &mut Tape,
    s: CellState,
    velocity: Var,
    ks: &PdeKs,
    g: &impl RateTerms,
) -> Result<CellState> {
    let u = tape.scalar(velocity);
    if !(u > 0.0) {
        return Err(Error::Domain(format!("velocity must be positive, got {u}")));
    }
    let ga = g.g_a(tape, s.t, s.xa)?;
    let gp = g.g_p(tape, s.t, s.xp)?;

    let ga_theta = tape.mul(ga, s.theta)?;
    let ka_u = tape.div(ks.ka, velocity)?;
    let dxa = tape.mul(ka_u, ga_theta)?;
    let xa = tape.sub(s.xa, dxa)?;

    let theta2 = tape.mul(s.theta, s.theta)?;
    let tgp = tape.mul(s.t, gp)?;
    let tgp = tape.mul(tgp, theta2)?;
    let kp_u = tape.div(ks.kp, velocity)?;
    let dxp = tape.mul(kp_u, tgp)?;
    let xp = tape.sub(s.xp, dxp)?;

    let k2x = tape.mul(ks.k2, s.xa)?;
    let denom = tape.add(ks.k1, k2x)?;
    let denom = tape.mul(velocity, denom)?;
    let heat = tape.mul(ks.kt, ga_theta)?;
    let dt = tape.div(heat, denom)?;
    let t = tape.add(s.t, dt)?;

    let loss = tape.mul(ks.ktheta, gp)?;
    let loss = tape.mul(loss, s.theta)?;
    let theta = tape.sub(s.theta, loss)?;
    let theta = tape.clamp(theta, 0.0, 1.0)?;
    Ok(CellState { xa, xp, t, theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(inputs: [f64; 4], u: f64, k: &[f64]) -> [f64; 4] {
        let mut tape = Tape::new();
        let p = PdeCellParams { raw: k.iter().map(|&v| if v == 0.0 { f64::NEG_INFINITY } else { softplus_inv(v) }).collect() };
        let raw = tape.param(&p.raw);
        // softplus(-inf) is 0, which lets the tests switch terms off exactly.
        let ks = PdeKs::bind(&mut tape, raw).unwrap();
        let s = CellState {
            xa: tape.scalar_const(inputs[0]),
            xp: tape.scalar_const(inputs[1]),
            t: tape.scalar_const(inputs[2]),
            theta: tape.scalar_const(inputs[3]),
        };
        let u = tape.scalar_const(u);
        let out = pde_cell_forward(&mut tape, s, u, &ks, &ks.closed_form().unwrap()).unwrap();
        [tape.scalar(out.xa), tape.scalar(out.xp), tape.scalar(out.t), tape.scalar(out.theta)]
    }

    const K: [f64; 8] = [0.8, 0.3, 0.5, 0.2, 0.4, 0.6, 1.5, 1.0];

    #[test]
    fn inactive_catalyst_passes_through() {
        let out = run([0.5, 0.1, 1.0, 0.0], 1.0, &K);
        assert_eq!(out, [0.5, 0.1, 1.0, 0.0]);
    }

    #[test]
    fn zero_rates_are_identity() {
        let out = run([0.5, 0.1, 1.2, 0.7], 1.3, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(out, [0.5, 0.1, 1.2, 0.7]);
    }

    #[test]
    fn matches_hand_evaluation() {
        let (xa, xp, t, th, u) = (0.5_f64, 0.1_f64, 1.0_f64, 1.0_f64, 1.0_f64);
        let ga = (-1.5_f64 / t).exp() * t * xa;
        let gp = (-1.0_f64 / t).exp() * xp;
        let want = [
            xa - 0.8 / u * ga * th,
            xp - 0.3 / u * t * gp * th * th,
            t + 0.5 * ga * th / (u * (0.4 + 0.6 * xa)),
            th - 0.2 * gp * th,
        ];
        let got = run([xa, xp, t, th], u, &K);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn closed_form_values() {
        let p = PdeCellParams::from_k(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1e-300, 1.0]).unwrap();
        assert_eq!(g_closed_form(2.0, 0.0, Species::A, &p).unwrap(), 0.0);
        assert_eq!(g_closed_form(2.0, 0.0, Species::P, &p).unwrap(), 0.0);
        assert!((g_closed_form(2.0, 3.0, Species::A, &p).unwrap() - 6.0).abs() < 1e-12);
        assert!((g_closed_form(1.0, 1.0, Species::P, &p).unwrap() - 0.367879).abs() < 1e-6);
        assert!(g_closed_form(0.0, 1.0, Species::P, &p).is_err());
    }

    #[test]
    fn nonpositive_velocity_rejected() {
        let mut tape = Tape::new();
        let raw = tape.param(&PdeCellParams::initial(true).raw);
        let ks = PdeKs::bind(&mut tape, raw).unwrap();
        let one = tape.scalar_const(1.0);
        let s = CellState { xa: one, xp: one, t: one, theta: one };
        let u = tape.scalar_const(0.0);
        assert!(pde_cell_forward(&mut tape, s, u, &ks, &ks.closed_form().unwrap()).is_err());
    }

    #[test]
    fn initial_constants_are_point_one() {
        for k in PdeCellParams::initial(true).k() {
            assert!((k - 0.1).abs() < 1e-15);
        }
        assert_eq!(PdeCellParams::initial(false).raw.len(), 6);
    }
}
