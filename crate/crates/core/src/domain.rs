//! Shared data types: reactor constants, the space-time grid, state fields
//! and sensor layouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and kinetic constants of the reactor, in nondimensional units.
///
/// The mass-balance coefficient is `alpha(T) = alpha_c * T` and the
/// heat-transport coefficient is `beta(x_a, T) = (beta_0 + beta_c * x_a) / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactorParams {
    /// Fluid velocity.
    #[serde(rename = "U")]
    pub velocity: f64,
    /// Hydrogenation pre-exponential factor.
    pub k0: f64,
    /// Aromatics adsorption constant.
    #[serde(rename = "K0")]
    pub adsorption_k0: f64,
    /// Adsorption activation energy.
    #[serde(rename = "Q")]
    pub adsorption_energy: f64,
    /// Hydrogenation activation energy.
    #[serde(rename = "E")]
    pub activation_energy: f64,
    #[serde(rename = "R")]
    pub gas_constant: f64,
    pub l1: f64,
    pub l2: f64,
    #[serde(rename = "P")]
    pub pressure: f64,
    /// Hydrogen concentration, held constant.
    pub x_h: f64,
    /// Poisoning activation energy.
    #[serde(rename = "E_d")]
    pub poison_energy: f64,
    /// Poisoning pre-exponential factor.
    pub k_d0: f64,
    /// Catalyst poison adsorption capacity.
    #[serde(rename = "C_d")]
    pub poison_capacity: f64,
    pub gamma: f64,
    pub alpha_c: f64,
    pub beta_c: f64,
    #[serde(default)]
    pub beta_0: f64,
    /// Reactor length.
    #[serde(rename = "L")]
    pub length: f64,
}

impl ReactorParams {
    /// The parameter set shipped in `config/canonical_params.json`.
    pub fn canonical() -> Self {
        serde_json::from_str(include_str!("../../../config/canonical_params.json"))
            .expect("bundled canonical parameters are valid")
    }

    pub fn alpha(&self, temperature: f64) -> f64 {
        self.alpha_c * temperature
    }

    pub fn beta(&self, xa: f64, temperature: f64) -> f64 {
        (self.beta_0 + self.beta_c * xa) / temperature
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("U", self.velocity),
            ("k0", self.k0),
            ("K0", self.adsorption_k0),
            ("R", self.gas_constant),
            ("P", self.pressure),
            ("x_h", self.x_h),
            ("k_d0", self.k_d0),
            ("C_d", self.poison_capacity),
            ("gamma", self.gamma),
            ("alpha_c", self.alpha_c),
            ("beta_c", self.beta_c),
            ("L", self.length),
        ];
        let nonneg = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("Q", self.adsorption_energy),
            ("E", self.activation_energy),
            ("E_d", self.poison_energy),
            ("beta_0", self.beta_0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Space-time discretization with the boundary and initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_z: usize,
    pub n_t: usize,
    pub dz: f64,
    pub dt: f64,
    pub inlet_xa: Vec<f64>,
    pub inlet_xp: Vec<f64>,
    pub inlet_t: Vec<f64>,
    pub theta0: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Default coarse time step, in catalyst-time units.
pub const DEFAULT_DT: f64 = 1.0;
pub const DEFAULT_N_Z: usize = 46;
pub const DEFAULT_N_T: usize = 93;
/// Reference inlet `(x_a, x_p, T)`: reactant mole fraction 0.1, poison and
/// temperature in their reference units.
pub const SYNTHETIC_INLET: (f64, f64, f64) = (0.1, 1.0, 1.0);

impl Grid {
    /// Grid with constant inlet conditions, fresh catalyst and constant
    /// velocity.
    pub fn uniform(
        n_t: usize,
        n_z: usize,
        length: f64,
        dt: f64,
        inlet: (f64, f64, f64),
        velocity: f64,
    ) -> Self {
        Self {
            n_z,
            n_t,
            dz: length / (n_z.max(2) - 1) as f64,
            dt,
            inlet_xa: vec![inlet.0; n_t],
            inlet_xp: vec![inlet.1; n_t],
            inlet_t: vec![inlet.2; n_t],
            theta0: vec![1.0; n_z],
            velocity: vec![velocity; n_t],
        }
    }

    /// The 93 x 46 synthetic grid with the reference inlet conditions.
    pub fn synthetic(params: &ReactorParams) -> Self {
        Self::uniform(
            DEFAULT_N_T,
            DEFAULT_N_Z,
            params.length,
            DEFAULT_DT,
            SYNTHETIC_INLET,
            params.velocity,
        )
    }

    pub fn length(&self) -> f64 {
        self.dz * (self.n_z - 1) as f64
    }
}

/// One failed grid invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridViolation {
    pub field: &'static str,
    pub rule: String,
}

impl std::fmt::Display for GridViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Lists every invariant the grid breaks; empty when the grid is valid.
pub fn validate_grid(g: &Grid) -> Vec<GridViolation> {
    let mut out = Vec::new();
    let mut push = |field, rule: String| out.push(GridViolation { field, rule });
    if g.n_z < 2 {
        push("n_z", format!("must be >= 2, got {}", g.n_z));
    }
    if g.n_t < 2 {
        push("n_t", format!("must be >= 2, got {}", g.n_t));
    }
    if !(g.dz.is_finite() && g.dz > 0.0) {
        push("dz", format!("must be positive, got {}", g.dz));
    }
    if !(g.dt.is_finite() && g.dt > 0.0) {
        push("dt", format!("must be positive, got {}", g.dt));
    }
    let series: [(&'static str, &Vec<f64>); 4] = [
        ("inlet_xa", &g.inlet_xa),
        ("inlet_xp", &g.inlet_xp),
        ("inlet_T", &g.inlet_t),
        ("velocity", &g.velocity),
    ];
    for (name, s) in series {
        if s.len() != g.n_t {
            push(name, format!("length {} != n_t {}", s.len(), g.n_t));
        } else if s.iter().any(|v| !v.is_finite()) {
            push(name, "entries must be finite".into());
        }
    }
    if g.inlet_t.iter().any(|&v| v <= 0.0) {
        push("inlet_T", "temperatures must be positive".into());
    }
    if g.velocity.iter().any(|&v| v <= 0.0) {
        push("velocity", "velocities must be positive".into());
    }
    if g.theta0.len() != g.n_z {
        push(
            "theta0",
            format!("length {} != n_z {}", g.theta0.len(), g.n_z),
        );
    }
    if g.theta0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        push("theta0", "entries must lie in [0, 1]".into());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    #[serde(rename = "xa")]
    Xa,
    #[serde(rename = "xp")]
    Xp,
    #[serde(rename = "T")]
    T,
    #[serde(rename = "theta")]
    Theta,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [FieldKind::Xa, FieldKind::Xp, FieldKind::T, FieldKind::Theta];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Xa => "xa",
            FieldKind::Xp => "xp",
            FieldKind::T => "T",
            FieldKind::Theta => "theta",
        }
    }
}

/// A time-major `n_t x n_z` array of one state variable.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub kind: FieldKind,
    pub n_t: usize,
    pub n_z: usize,
    pub values: Vec<f64>,
}

impl StateField {
    pub fn zeros(kind: FieldKind, n_t: usize, n_z: usize) -> Self {
        Self {
            kind,
            n_t,
            n_z,
            values: vec![0.0; n_t * n_z],
        }
    }

    pub fn from_fn(kind: FieldKind, n_t: usize, n_z: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_t * n_z);
        for t in 0..n_t {
            for z in 0..n_z {
                values.push(f(t, z));
            }
        }
        Self { kind, n_t, n_z, values }
    }

    #[inline]
    pub fn get(&self, t: usize, z: usize) -> f64 {
        self.values[t * self.n_z + z]
    }

    #[inline]
    pub fn set(&mut self, t: usize, z: usize, v: f64) {
        self.values[t * self.n_z + z] = v;
    }

    /// All levels at time `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_z..(t + 1) * self.n_z]
    }

    /// Time series at level `z`.
    pub fn series(&self, z: usize) -> Vec<f64> {
        (0..self.n_t).map(|t| self.get(t, z)).collect()
    }
}

/// The four reconstructed (or simulated) state variables on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct States {
    pub xa: StateField,
    pub xp: StateField,
    pub t: StateField,
    pub theta: StateField,
}

impl States {
    pub fn field(&self, kind: FieldKind) -> &StateField {
        match kind {
            FieldKind::Xa => &self.xa,
            FieldKind::Xp => &self.xp,
            FieldKind::T => &self.t,
            FieldKind::Theta => &self.theta,
        }
    }

    pub fn n_t(&self) -> usize {
        self.t.n_t
    }

    pub fn n_z(&self) -> usize {
        self.t.n_z
    }
}

/// Which levels feed the training loss and the two validation sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub name: String,
    pub train: Vec<usize>,
    pub val1: Vec<usize>,
    pub val2: Vec<usize>,
    /// Display names of the three splits.
    pub split_names: [String; 3],
    /// Levels allowed to appear in more than one split.
    #[serde(default)]
    pub shared: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val1,
    Val2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val1, Split::Val2];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val1 => "val1",
            Split::Val2 => "val2",
        }
    }
}

impl SensorLayout {
    pub fn levels(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val1 => &self.val1,
            Split::Val2 => &self.val2,
        }
    }

    pub fn validate(&self, n_z: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config(format!("layout {}: train levels empty", self.name)));
        }
        for split in Split::ALL {
            let levels = self.levels(split);
            if let Some(&bad) = levels.iter().find(|&&i| i >= n_z) {
                return Err(Error::Config(format!(
                    "layout {}: {} level {bad} outside [0, {}]",
                    self.name,
                    split.name(),
                    n_z - 1
                )));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "layout {}: {} levels must be strictly increasing",
                    self.name,
                    split.name()
                )));
            }
        }
        for (a, b) in [(Split::Train, Split::Val1), (Split::Train, Split::Val2), (Split::Val1, Split::Val2)] {
            if let Some(l) = self
                .levels(a)
                .iter()
                .find(|l| self.levels(b).contains(l) && !self.shared.contains(l))
            {
                return Err(Error::Config(format!(
                    "layout {}: level {l} in both {} and {}",
                    self.name,
                    a.name(),
                    b.name()
                )));
            }
        }
        Ok(())
    }
}

/// Sensors every fourth level for training, offset-by-one levels for the
/// first validation set and everything else for the second. Only defined for
/// 46 levels.
pub fn make_default_layout(n_z: usize) -> Result<SensorLayout> {
    if n_z != DEFAULT_N_Z {
        return Err(Error::UnsupportedDefault(n_z));
    }
    let train: Vec<usize> = (0..=44).step_by(4).collect();
    let val1: Vec<usize> = (1..=41).step_by(4).collect();
    let val2 = (0..n_z)
        .filter(|i| !train.contains(i) && !val1.contains(i))
        .collect();
    Ok(SensorLayout {
        name: "default".into(),
        train,
        val1,
        val2,
        split_names: ["Train".into(), "Valid. set 1".into(), "Valid. set 2".into()],
        shared: vec![],
    })
}

/// Thermocouple layout of the two-reactor hydrotreatment unit: first reactor
/// plus pole 1 for training, poles 2 and 3 for validation. The outlet level
/// 45 is listed on every pole.
pub fn make_real_layout() -> SensorLayout {
    SensorLayout {
        name: "real".into(),
        train: vec![8, 16, 20, 25, 28, 31, 34, 37, 40, 43, 45],
        val1: vec![24, 27, 30, 33, 36, 39, 42, 45],
        val2: vec![23, 26, 29, 32, 35, 38, 41, 45],
        split_names: ["Train".into(), "Pole 2".into(), "Pole 3".into()],
        shared: vec![45],
    }
}
