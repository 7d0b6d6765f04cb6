//! Ground-truth simulator for the fixed-bed reactor with catalyst poisoning.
//!
//! The convection-reaction system is integrated with first-order upwind
//! differences in space and explicit Euler in time on a grid that is
//! `refinement` times finer than the coarse dataset grid in both axes:
//!
//! ```text
//! dxa/dt    = -U dxa/dz - alpha(T) r_a
//! dxp/dt    = -U dxp/dz - alpha(T) r_p
//! dT/dt     = -beta(xa, T) U dT/dz + gamma r_a
//! dtheta/dt = -r_d
//! ```
//!
//! Coarse level `i` sits on fine level `refinement * i`, so the fine grid
//! extends `refinement - 1` cells past the outlet. Those extra cells are
//! downstream of everything recorded and never influence it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_grid, FieldKind, Grid, ReactorParams, StateField, States};
use crate::error::{Error, Result};

/// Reaction rates at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    /// Hydrogenation rate.
    pub ra: f64,
    /// Poison adsorption rate.
    pub rp: f64,
    /// Deactivation rate.
    pub rd: f64,
}

pub fn rates(xa: f64, xp: f64, temp: f64, theta: f64, p: &ReactorParams) -> Result<Rates> {
    if ![xa, xp, temp, theta].iter().all(|v| v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite rate input (xa={xa}, xp={xp}, T={temp}, theta={theta})"
        )));
    }
    if temp <= 0.0 {
        return Err(Error::Domain(format!("temperature must be positive, got {temp}")));
    }
    let rt = p.gas_constant * temp;
    let ads = p.adsorption_k0 * (-p.adsorption_energy / rt).exp();
    let ra = p.k0 * p.adsorption_k0 * ((-p.adsorption_energy - p.activation_energy) / rt).exp()
        / (1.0 + ads * p.pressure * xa.powf(p.l2))
        * p.pressure
        * p.pressure
        * xa.powf(p.l1)
        * p.x_h
        * theta;
    let rd = p.k_d0 * (-p.poison_energy / rt).exp() * p.pressure * xp * theta;
    let rp = rd * p.poison_capacity * theta;
    Ok(Rates { ra, rp, rd })
}

/// Fields on the fine solver grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FineState {
    pub xa: Vec<f64>,
    pub xp: Vec<f64>,
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FineState {
    /// Reactor filled with inlet fluid over fresh catalyst.
    pub fn filled(n: usize, inlet: Inlet) -> Self {
        Self {
            xa: vec![inlet.xa; n],
            xp: vec![inlet.xp; n],
            t: vec![inlet.t; n],
            theta: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.xa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xa.is_empty()
    }
}

/// Boundary values at the inlet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inlet {
    pub xa: f64,
    pub xp: f64,
    pub t: f64,
}

/// Courant number bound of the explicit upwind scheme.
pub const CFL_LIMIT: f64 = 0.9;

/// Largest Courant number of the state: concentrations move at `U`, heat at
/// `beta * U`.
pub fn courant_number(s: &FineState, p: &ReactorParams, velocity: f64, dz: f64, dt: f64) -> f64 {
    let beta_max = s
        .xa
        .iter()
        .zip(&s.t)
        .map(|(&xa, &t)| p.beta(xa, t).abs())
        .fold(1.0_f64, f64::max);
    velocity * beta_max * dt / dz
}

/// One explicit Euler step with upwind differences.
pub fn step_fine(
    s: &FineState,
    inlet: Inlet,
    p: &ReactorParams,
    velocity: f64,
    dz: f64,
    dt: f64,
) -> Result<FineState> {
    advance(s, inlet, p, velocity, dz, dt, true)
}

fn advance(
    s: &FineState,
    inlet: Inlet,
    p: &ReactorParams,
    velocity: f64,
    dz: f64,
    dt: f64,
    deactivate: bool,
) -> Result<FineState> {
    let cfl = courant_number(s, p, velocity, dz, dt);
    if !(cfl <= CFL_LIMIT) {
        return Err(Error::Config(format!(
            "CFL condition violated: {cfl:.4} > {CFL_LIMIT} (dt={dt}, dz={dz}, U={velocity})"
        )));
    }
    let n = s.len();
    let mut out = FineState {
        xa: vec![0.0; n],
        xp: vec![0.0; n],
        t: vec![0.0; n],
        theta: vec![0.0; n],
    };
    out.xa[0] = inlet.xa;
    out.xp[0] = inlet.xp;
    out.t[0] = inlet.t;
    let c = velocity / dz;
    for i in 0..n {
        let (xa, xp, temp, theta) = (s.xa[i], s.xp[i], s.t[i], s.theta[i]);
        let r = rates(xa, xp, temp, theta, p)?;
        out.theta[i] = if deactivate {
            (theta - dt * r.rd).clamp(0.0, 1.0)
        } else {
            theta
        };
        if i == 0 {
            continue;
        }
        let alpha = p.alpha(temp);
        let beta = p.beta(xa, temp);
        let dxa = -c * (xa - s.xa[i - 1]) - alpha * r.ra;
        let dxp = -c * (xp - s.xp[i - 1]) - alpha * r.rp;
        let dtemp = -beta * c * (temp - s.t[i - 1]) + p.gamma * r.ra;
        out.xa[i] = (xa + dt * dxa).max(0.0);
        out.xp[i] = (xp + dt * dxp).max(0.0);
        out.t[i] = temp + dt * dtemp;
        if !out.t[i].is_finite() || out.t[i] <= 0.0 {
            return Err(Error::Domain(format!(
                "temperature left the valid range at fine level {i}: {}",
                out.t[i]
            )));
        }
    }
    Ok(out)
}

/// Operating-condition multipliers applied to the inlet series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub multiplier_t_inlet: f64,
    pub multiplier_xa_inlet: f64,
    pub multiplier_xp_inlet: f64,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn new(name: &str, t: f64, xa: f64, xp: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            multiplier_t_inlet: t,
            multiplier_xa_inlet: xa,
            multiplier_xp_inlet: xp,
            rng_seed: seed,
        }
    }

    pub fn training(seed: u64) -> Self {
        Self::new("train", 1.0, 1.0, 1.0, seed)
    }

    /// The training cycle followed by the five test cycles. Test 1 reruns
    /// the training conditions with `test_seed`; Tests 2-5 reuse the
    /// training seed so their inlet series are exact multiples of the
    /// training series.
    pub fn standard_set(train_seed: u64, test_seed: u64) -> Vec<Self> {
        vec![
            Self::training(train_seed),
            Self::new("test1", 1.0, 1.0, 1.0, test_seed),
            Self::new("test2", 1.07, 1.0, 1.0, train_seed),
            Self::new("test3", 1.0, 1.20, 1.0, train_seed),
            Self::new("test4", 1.0, 1.0, 0.85, train_seed),
            Self::new("test5", 1.07, 1.20, 0.85, train_seed),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [
            ("multiplier_T_inlet", self.multiplier_t_inlet),
            ("multiplier_xa_inlet", self.multiplier_xa_inlet),
            ("multiplier_xp_inlet", self.multiplier_xp_inlet),
        ] {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!(
                    "scenario {}: {name} must be positive, got {m}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Seeded inlet-concentration variation: a bounded multiplicative random
/// walk that changes every `period` coarse steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InletWalk {
    pub period: usize,
    /// Largest relative change per update.
    pub step: f64,
    /// Largest relative deviation from the baseline.
    pub amplitude: f64,
}

impl Default for InletWalk {
    fn default() -> Self {
        Self {
            period: 5,
            step: 0.05,
            amplitude: 0.10,
        }
    }
}

impl InletWalk {
    /// Multiplicative factors for the xa and xp inlet series.
    pub fn factors(&self, n_t: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut fa, mut fp) = (1.0_f64, 1.0_f64);
        let mut a = Vec::with_capacity(n_t);
        let mut p = Vec::with_capacity(n_t);
        let lo = (1.0 - self.amplitude).max(1e-6);
        let hi = 1.0 + self.amplitude;
        for j in 0..n_t {
            if j > 0 && self.period > 0 && j % self.period == 0 {
                fa = (fa + rng.random_range(-self.step..=self.step)).clamp(lo, hi);
                fp = (fp + rng.random_range(-self.step..=self.step)).clamp(lo, hi);
            }
            a.push(fa);
            p.push(fp);
        }
        (a, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Fine cells per coarse cell, in both space and time.
    pub refinement: usize,
    /// Target Courant number for the adaptive sub-steps.
    pub cfl: f64,
    /// Budget of fine Euler steps for the whole cycle.
    pub max_steps: usize,
    /// Duration of the start-up phase (catalyst frozen) that brings the
    /// fluid fields to their initial pseudo-steady profile.
    pub warmup_time: f64,
    /// Outlet activity that marks the end of the catalyst cycle.
    pub stop_theta: f64,
    pub walk: InletWalk,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            refinement: 10,
            cfl: 0.8,
            max_steps: 2_000_000,
            warmup_time: 10.0,
            stop_theta: 0.02,
            walk: InletWalk::default(),
        }
    }
}

/// Full solution on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FineSolution {
    pub xa: StateField,
    pub xp: StateField,
    pub t: StateField,
    pub theta: StateField,
    /// Euler steps taken, including the start-up phase.
    pub steps: usize,
    /// Largest Courant number used.
    pub cfl: f64,
    /// Fine cells per coarse cell.
    pub refinement: usize,
    /// First coarse time index with outlet activity below the stop level,
    /// if the cycle ended within the horizon.
    pub cycle_end: Option<usize>,
    /// Inlet series actually applied, per coarse time index.
    pub inlet: Vec<Inlet>,
}

/// Inlet series after applying scenario multipliers and the seeded walk.
pub fn scenario_inlets(g: &Grid, scenario: &Scenario, walk: &InletWalk) -> Vec<Inlet> {
    let (fa, fp) = walk.factors(g.n_t, scenario.rng_seed);
    (0..g.n_t)
        .map(|j| Inlet {
            xa: g.inlet_xa[j] * scenario.multiplier_xa_inlet * fa[j],
            xp: g.inlet_xp[j] * scenario.multiplier_xp_inlet * fp[j],
            t: g.inlet_t[j] * scenario.multiplier_t_inlet,
        })
        .collect()
}

pub fn simulate_cycle(g: &Grid, p: &ReactorParams, scenario: &Scenario) -> Result<FineSolution> {
    simulate_cycle_with(g, p, scenario, &SolverOptions::default())
}

/// Integrates one catalyst cycle over the grid's time horizon.
pub fn simulate_cycle_with(
    g: &Grid,
    p: &ReactorParams,
    scenario: &Scenario,
    opts: &SolverOptions,
) -> Result<FineSolution> {
    let violations = validate_grid(g);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Config(format!("invalid grid: {}", list.join("; "))));
    }
    p.validate()?;
    scenario.validate()?;
    if opts.refinement == 0 || !(opts.cfl > 0.0 && opts.cfl <= CFL_LIMIT) {
        return Err(Error::Config(format!(
            "solver options need refinement >= 1 and 0 < cfl <= {CFL_LIMIT}"
        )));
    }
    let r = opts.refinement;
    let nz_f = g.n_z * r;
    let nt_f = g.n_t * r;
    let dz_f = g.dz / r as f64;
    let record_dt = g.dt / r as f64;
    let inlets = scenario_inlets(g, scenario, &opts.walk);

    let mut state = FineState::filled(nz_f, inlets[0]);
    for (i, th) in state.theta.iter_mut().enumerate() {
        *th = g.theta0[(i / r).min(g.n_z - 1)];
    }
    let mut steps = 0usize;
    let mut cfl_used: f64 = 0.0;
    let budget_exceeded = |steps: usize, time: f64| Error::NonConvergence {
        max_steps: opts.max_steps,
        detail: format!("stopped at t={time:.4} after {steps} steps"),
    };

    // Sub-step size that keeps the Courant number at the target.
    let substep = |s: &FineState, velocity: f64, span: f64| -> (usize, f64) {
        let c1 = courant_number(s, p, velocity, dz_f, 1.0);
        let n = ((span * c1) / opts.cfl).ceil().max(1.0) as usize;
        (n, span / n as f64)
    };

    let mut elapsed = 0.0;
    while elapsed < opts.warmup_time {
        let span = record_dt.min(opts.warmup_time - elapsed);
        let (n, h) = substep(&state, g.velocity[0], span);
        for _ in 0..n {
            cfl_used = cfl_used.max(courant_number(&state, p, g.velocity[0], dz_f, h));
            state = advance(&state, inlets[0], p, g.velocity[0], dz_f, h, false)?;
        }
        steps += n;
        elapsed += span;
        if steps > opts.max_steps {
            return Err(budget_exceeded(steps, -opts.warmup_time + elapsed));
        }
    }

    let mut fields: Vec<StateField> = [FieldKind::Xa, FieldKind::Xp, FieldKind::T, FieldKind::Theta]
        .iter()
        .map(|&k| StateField::zeros(k, nt_f, nz_f))
        .collect();
    let store = |fields: &mut [StateField], rec: usize, s: &FineState| {
        for (f, src) in fields.iter_mut().zip([&s.xa, &s.xp, &s.t, &s.theta]) {
            f.values[rec * nz_f..(rec + 1) * nz_f].copy_from_slice(src);
        }
    };
    store(&mut fields, 0, &state);
    for rec in 1..nt_f {
        // The interval (t_{j-1}, t_j] is driven by the inlet of coarse step j.
        let j = rec.div_ceil(r).min(g.n_t - 1);
        let velocity = g.velocity[j];
        let (n, h) = substep(&state, velocity, record_dt);
        for _ in 0..n {
            cfl_used = cfl_used.max(courant_number(&state, p, velocity, dz_f, h));
            state = step_fine(&state, inlets[j], p, velocity, dz_f, h)?;
        }
        steps += n;
        if steps > opts.max_steps {
            return Err(budget_exceeded(steps, rec as f64 * record_dt));
        }
        store(&mut fields, rec, &state);
    }
    let theta = fields.pop().unwrap();
    let t = fields.pop().unwrap();
    let xp = fields.pop().unwrap();
    let xa = fields.pop().unwrap();
    let outlet = (g.n_z - 1) * r;
    let cycle_end = (0..g.n_t).find(|&j| theta.get(j * r, outlet) < opts.stop_theta);
    Ok(FineSolution {
        xa,
        xp,
        t,
        theta,
        steps,
        cfl: cfl_used,
        refinement: r,
        cycle_end,
        inlet: inlets,
    })
}

/// Index-subsamples a fine solution onto an `n_t x n_z` grid, taking fine
/// index `floor(k * n_fine / n)` along each axis.
pub fn downsample(f: &FineSolution, n_t: usize, n_z: usize) -> Result<States> {
    let (ft, fz) = (f.t.n_t, f.t.n_z);
    if n_t == 0 || n_z == 0 || n_t > ft || n_z > fz {
        return Err(Error::Usage(format!(
            "cannot downsample {ft}x{fz} to {n_t}x{n_z}"
        )));
    }
    let pick = |src: &StateField| {
        StateField::from_fn(src.kind, n_t, n_z, |t, z| {
            src.get(t * ft / n_t, z * fz / n_z)
        })
    };
    Ok(States {
        xa: pick(&f.xa),
        xp: pick(&f.xp),
        t: pick(&f.t),
        theta: pick(&f.theta),
    })
}
