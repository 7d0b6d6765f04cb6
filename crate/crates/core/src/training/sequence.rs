//! Plain GRU baseline: a recurrence over time that maps the inlet
//! conditions to the temperatures at a fixed set of sensor levels.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::cells::{gru_forward, gru_readout, init_gru, Bound, BoundGru, GruSpec, MinMax, ParamSet, Tensor};
use crate::domain::{validate_grid, FieldKind, Grid, StateField};
use crate::error::{Error, Result};
use crate::grid_model::GridOutput;

const PREFIX: &str = "seq";

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceGru {
    pub params: ParamSet,
}

impl SequenceGru {
    /// `inputs` holds the statistics of inlet `xa`, `xp`, `T` and the
    /// velocity; `output` those of the predicted temperatures.
    pub fn new<R: Rng + ?Sized>(
        levels: &[usize],
        hidden: usize,
        inputs: [MinMax; 4],
        output: MinMax,
        rng: &mut R,
    ) -> Result<Self> {
        if levels.is_empty() || hidden == 0 {
            return Err(Error::Config("sequence GRU needs levels and a hidden size".into()));
        }
        let mut params = ParamSet::default();
        params.push(Tensor::frozen(&format!("{PREFIX}.levels"), levels.iter().map(|&z| z as f64).collect()));
        params.push(Tensor::frozen(&format!("{PREFIX}.in_min"), inputs.iter().map(|m| m.min).collect()));
        params.push(Tensor::frozen(&format!("{PREFIX}.in_max"), inputs.iter().map(|m| m.max).collect()));
        params.push(Tensor::frozen(&format!("{PREFIX}.out_range"), vec![output.min, output.max]));
        let spec = GruSpec {
            input: 4,
            hidden,
            output: levels.len(),
        };
        init_gru(&mut params, PREFIX, spec, rng);
        Ok(Self { params })
    }

    pub fn levels(&self) -> Result<Vec<usize>> {
        Ok(self
            .params
            .get(&format!("{PREFIX}.levels"))?
            .values
            .iter()
            .map(|&v| v as usize)
            .collect())
    }

    fn norms(&self) -> Result<([MinMax; 4], MinMax)> {
        let lo = &self.params.get(&format!("{PREFIX}.in_min"))?.values;
        let hi = &self.params.get(&format!("{PREFIX}.in_max"))?.values;
        let out = &self.params.get(&format!("{PREFIX}.out_range"))?.values;
        if lo.len() != 4 || hi.len() != 4 || out.len() != 2 {
            return Err(Error::Usage("malformed sequence GRU statistics".into()));
        }
        Ok(([0, 1, 2, 3].map(|i| MinMax::new(lo[i], hi[i])), MinMax::new(out[0], out[1])))
    }

    /// Predicted temperatures at the model's levels, one vector per time.
    pub fn forward_tape(&self, tape: &mut Tape, bound: &Bound, grid: &Grid) -> Result<Vec<Var>> {
        let bad = validate_grid(grid);
        if !bad.is_empty() {
            let msg: Vec<String> = bad.iter().map(|v| v.to_string()).collect();
            return Err(Error::Config(msg.join("; ")));
        }
        let gru = BoundGru::bind(&self.params, bound, PREFIX)?;
        let (inputs, output) = self.norms()?;
        let mut h = tape.constant(&vec![0.0; gru.spec.hidden]);
        let mut out = Vec::with_capacity(grid.n_t);
        for j in 0..grid.n_t {
            let raw = [grid.inlet_xa[j], grid.inlet_xp[j], grid.inlet_t[j], grid.velocity[j]];
            let u: Vec<f64> = raw.iter().zip(&inputs).map(|(&v, m)| m.apply(v)).collect();
            let u = tape.constant(&u);
            let step = |tape: &mut Tape, h| -> Result<(Var, Var)> {
                let h = gru_forward(tape, h, u, &gru)?;
                let y = gru_readout(tape, h, &gru)?;
                Ok((h, output.invert_tape(tape, y)?))
            };
            let (h2, y) = step(tape, h).map_err(|e| Error::Numeric {
                t: j,
                level: 0,
                detail: e.to_string(),
            })?;
            h = h2;
            out.push(y);
        }
        Ok(out)
    }

    /// Fields with the temperature filled at the model's levels and NaN
    /// elsewhere; the baseline predicts nothing else.
    pub fn predict(&self, grid: &Grid) -> Result<GridOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rows = self.forward_tape(&mut tape, &bound, grid)?;
        let levels = self.levels()?;
        if let Some(&z) = levels.iter().find(|&&z| z >= grid.n_z) {
            return Err(Error::Usage(format!("level {z} outside the grid")));
        }
        let blank = |kind| StateField {
            kind,
            n_t: grid.n_t,
            n_z: grid.n_z,
            values: vec![f64::NAN; grid.n_t * grid.n_z],
        };
        let mut t = blank(FieldKind::T);
        for (j, &row) in rows.iter().enumerate() {
            for (k, &z) in levels.iter().enumerate() {
                t.set(j, z, tape.value(row)[k]);
            }
        }
        Ok(GridOutput {
            xa: blank(FieldKind::Xa),
            xp: blank(FieldKind::Xp),
            t,
            theta: None,
        })
    }
}
