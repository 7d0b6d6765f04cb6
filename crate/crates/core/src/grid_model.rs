//! Cells unrolled over the space-time grid.
//!
//! Column `j` holds the reactor profile at time `t_j`. The concentrations and
//! temperature travel down the column from the inlet (vertical edges) while
//! the catalyst activity of each level is carried to the next column
//! (horizontal edges).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{
    gru_forward, gru_readout, init_gru, init_mlp, mlp, mlp_forward, pde_cell_forward, Bound, BoundGru,
    BoundMlp, CellState, GruSpec, MinMax, ParamSet, PdeCellParams, PdeKs, RateTerms,
};
use crate::domain::{validate_grid, FieldKind, Grid, StateField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    PdeParam,
    Mlp,
    GridGru,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::PdeParam => "pde-param",
            CellKind::Mlp => "mlp",
            CellKind::GridGru => "grid-gru",
        }
    }
}

const GRID_GRU: &str = "grid_gru";

/// A grid model: one cell variant and the parameters shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub kind: CellKind,
    pub params: ParamSet,
}

/// Per-channel statistics for the grid GRU: `xa`, `xp`, `T`, `U`.
pub type GruNorm = [MinMax; 4];

impl GridModel {
    pub fn pde_param() -> Self {
        Self::from_pde(&PdeCellParams::initial(true))
    }

    pub fn from_pde(p: &PdeCellParams) -> Self {
        let mut params = ParamSet::default();
        params.push(p.tensor());
        let kind = if p.closed_form() { CellKind::PdeParam } else { CellKind::Mlp };
        Self { kind, params }
    }

    /// MLP rate terms; `x_ranges` are the input ranges of `g_a` and `g_p`.
    pub fn mlp<R: Rng + ?Sized>(t_range: MinMax, x_ranges: (MinMax, MinMax), rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::default();
        params.push(PdeCellParams::initial(false).tensor());
        init_mlp(&mut params, "g_a", &mlp::G_A_HIDDEN, t_range, x_ranges.0, rng)?;
        init_mlp(&mut params, "g_p", &mlp::G_P_HIDDEN, t_range, x_ranges.1, rng)?;
        Ok(Self { kind: CellKind::Mlp, params })
    }

    pub fn grid_gru<R: Rng + ?Sized>(hidden: usize, norm: GruNorm, rng: &mut R) -> Self {
        let mut params = ParamSet::default();
        params.push(crate::cells::Tensor::frozen(
            &format!("{GRID_GRU}.norm_min"),
            norm.iter().map(|m| m.min).collect(),
        ));
        params.push(crate::cells::Tensor::frozen(
            &format!("{GRID_GRU}.norm_max"),
            norm.iter().map(|m| m.max).collect(),
        ));
        let spec = GruSpec { input: 4, hidden, output: 3 };
        init_gru(&mut params, GRID_GRU, spec, rng);
        Self { kind: CellKind::GridGru, params }
    }

    /// Rate constants of a physics-shaped model.
    pub fn pde_params(&self) -> Result<PdeCellParams> {
        let t = self.params.get(crate::cells::pde::RAW_K)?;
        Ok(PdeCellParams { raw: t.values.clone() })
    }

    /// Runs the grid and returns plain fields.
    pub fn forward(&self, grid: &Grid) -> Result<GridOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let f = self.forward_tape(&mut tape, &bound, grid)?;
        Ok(f.values(&tape))
    }

    /// Same as [`GridModel::forward`]; the physics-shaped variants report the
    /// catalyst activity alongside the measured-type fields.
    pub fn reconstruct_states(&self, grid: &Grid) -> Result<GridOutput> {
        self.forward(grid)
    }

    /// Records the grid on `tape` using parameters already bound there.
    pub fn forward_tape(&self, tape: &mut Tape, bound: &Bound, grid: &Grid) -> Result<TapeFields> {
        let bad = validate_grid(grid);
        if !bad.is_empty() {
            let msg: Vec<String> = bad.iter().map(|v| v.to_string()).collect();
            return Err(Error::Config(msg.join("; ")));
        }
        match self.kind {
            CellKind::PdeParam => {
                let ks = PdeKs::bind(tape, bound.var(crate::cells::pde::RAW_K)?)?;
                let g = ks.closed_form()?;
                physics_grid(tape, grid, &ks, &g)
            }
            CellKind::Mlp => {
                let ks = PdeKs::bind(tape, bound.var(crate::cells::pde::RAW_K)?)?;
                let g = MlpRates {
                    ga: BoundMlp::bind(&self.params, bound, "g_a")?,
                    gp: BoundMlp::bind(&self.params, bound, "g_p")?,
                };
                physics_grid(tape, grid, &ks, &g)
            }
            CellKind::GridGru => {
                let gru = BoundGru::bind(&self.params, bound, GRID_GRU)?;
                let lo = &self.params.get(&format!("{GRID_GRU}.norm_min"))?.values;
                let hi = &self.params.get(&format!("{GRID_GRU}.norm_max"))?.values;
                if lo.len() != 4 || hi.len() != 4 || gru.spec.input != 4 || gru.spec.output != 3 {
                    return Err(Error::Usage("grid GRU expects 4 inputs and 3 outputs".into()));
                }
                let norm = [0, 1, 2, 3].map(|i| MinMax::new(lo[i], hi[i]));
                gru_grid(tape, grid, &gru, &norm)
            }
        }
    }
}

struct MlpRates {
    ga: BoundMlp,
    gp: BoundMlp,
}

impl RateTerms for MlpRates {
    fn g_a(&self, tape: &mut Tape, temp: Var, xa: Var) -> Result<Var> {
        mlp_forward(tape, temp, xa, &self.ga)
    }
    fn g_p(&self, tape: &mut Tape, temp: Var, xp: Var) -> Result<Var> {
        mlp_forward(tape, temp, xp, &self.gp)
    }
}

fn at(j: usize, level: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Numeric { .. } => e,
        other => Error::Numeric {
            t: j,
            level,
            detail: other.to_string(),
        },
    }
}

fn physics_grid(tape: &mut Tape, grid: &Grid, ks: &PdeKs, g: &impl RateTerms) -> Result<TapeFields> {
    let (n_t, n_z) = (grid.n_t, grid.n_z);
    let mut out = TapeFields::with_capacity(n_t, n_z, true);
    let mut theta: Vec<Var> = grid.theta0.iter().map(|&v| tape.scalar_const(v)).collect();
    for j in 0..n_t {
        let u = tape.scalar_const(grid.velocity[j]);
        let mut x = CellState {
            xa: tape.scalar_const(grid.inlet_xa[j]),
            xp: tape.scalar_const(grid.inlet_xp[j]),
            t: tape.scalar_const(grid.inlet_t[j]),
            theta: theta[0],
        };
        for i in 0..n_z {
            x.theta = theta[i];
            out.push(x);
            if i + 1 == n_z && j + 1 == n_t {
                break;
            }
            let y = pde_cell_forward(tape, x, u, ks, g).map_err(at(j, i))?;
            theta[i] = y.theta;
            x = y;
        }
    }
    Ok(out)
}

fn gru_grid(tape: &mut Tape, grid: &Grid, gru: &BoundGru, norm: &GruNorm) -> Result<TapeFields> {
    let (n_t, n_z) = (grid.n_t, grid.n_z);
    let mut out = TapeFields::with_capacity(n_t, n_z, false);
    let zero = tape.constant(&vec![0.0; gru.spec.hidden]);
    let mut hidden = vec![zero; n_z];
    for j in 0..n_t {
        let inlet = [grid.inlet_xa[j], grid.inlet_xp[j], grid.inlet_t[j], grid.velocity[j]];
        let scaled: Vec<f64> = inlet.iter().zip(norm).map(|(&v, m)| m.apply(v)).collect();
        let un = tape.scalar_const(scaled[3]);
        let mut xn = tape.constant(&scaled[..3]);
        for i in 0..n_z {
            let emitted = denormalize(tape, xn, norm).map_err(at(j, i))?;
            out.push(emitted);
            if i + 1 == n_z {
                break;
            }
            let input = tape.concat(&[xn, un])?;
            let h = gru_forward(tape, hidden[i], input, gru).map_err(at(j, i))?;
            hidden[i] = h;
            xn = gru_readout(tape, h, gru).map_err(at(j, i))?;
        }
    }
    Ok(out)
}

fn denormalize(tape: &mut Tape, xn: Var, norm: &GruNorm) -> Result<CellState> {
    let mut ch = [xn; 3];
    for (k, c) in ch.iter_mut().enumerate() {
        let v = tape.index(xn, k)?;
        *c = norm[k].invert_tape(tape, v)?;
    }
    Ok(CellState {
        xa: ch[0],
        xp: ch[1],
        t: ch[2],
        theta: ch[2],
    })
}

/// Tape handles of every grid node, time-major.
#[derive(Debug, Clone)]
pub struct TapeFields {
    pub n_t: usize,
    pub n_z: usize,
    pub xa: Vec<Var>,
    pub xp: Vec<Var>,
    pub t: Vec<Var>,
    pub theta: Option<Vec<Var>>,
}

impl TapeFields {
    fn with_capacity(n_t: usize, n_z: usize, theta: bool) -> Self {
        let n = n_t * n_z;
        Self {
            n_t,
            n_z,
            xa: Vec::with_capacity(n),
            xp: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
            theta: theta.then(|| Vec::with_capacity(n)),
        }
    }

    fn push(&mut self, s: CellState) {
        self.xa.push(s.xa);
        self.xp.push(s.xp);
        self.t.push(s.t);
        if let Some(th) = &mut self.theta {
            th.push(s.theta);
        }
    }

    pub fn get(&self, kind: FieldKind, t: usize, z: usize) -> Option<Var> {
        let k = t * self.n_z + z;
        match kind {
            FieldKind::Xa => Some(self.xa[k]),
            FieldKind::Xp => Some(self.xp[k]),
            FieldKind::T => Some(self.t[k]),
            FieldKind::Theta => self.theta.as_ref().map(|v| v[k]),
        }
    }

    pub fn values(&self, tape: &Tape) -> GridOutput {
        let field = |kind, vars: &[Var]| StateField {
            kind,
            n_t: self.n_t,
            n_z: self.n_z,
            values: vars.iter().map(|&v| tape.scalar(v)).collect(),
        };
        GridOutput {
            xa: field(FieldKind::Xa, &self.xa),
            xp: field(FieldKind::Xp, &self.xp),
            t: field(FieldKind::T, &self.t),
            theta: self.theta.as_ref().map(|v| field(FieldKind::Theta, v)),
        }
    }
}

/// Forward-pass fields. `theta` is absent for the recurrent variant, whose
/// hidden state is not a catalyst activity.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    pub xa: StateField,
    pub xp: StateField,
    pub t: StateField,
    pub theta: Option<StateField>,
}

impl GridOutput {
    pub fn field(&self, kind: FieldKind) -> Option<&StateField> {
        match kind {
            FieldKind::Xa => Some(&self.xa),
            FieldKind::Xp => Some(&self.xp),
            FieldKind::T => Some(&self.t),
            FieldKind::Theta => self.theta.as_ref(),
        }
    }
}
