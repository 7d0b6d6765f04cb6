//! Gated recurrent unit used by the sequence baseline and the grid variant.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::cells::mlp::push_affine;
use crate::cells::{Bound, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Adds the GRU tensors under `prefix` with fan-in uniform initialization.
pub fn init_gru<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, spec: GruSpec, rng: &mut R) {
    for gate in ["z", "r", "h"] {
        push_affine(params, &format!("{prefix}.w_{gate}"), spec.hidden, spec.input, rng);
        push_affine(params, &format!("{prefix}.u_{gate}"), spec.hidden, spec.hidden, rng);
    }
    push_affine(params, &format!("{prefix}.out"), spec.output, spec.hidden, rng);
}

#[derive(Debug, Clone, Copy)]
struct Gate {
    w: Var,
    wb: Var,
    u: Var,
    ub: Var,
}

/// Tape handles of a GRU.
#[derive(Debug, Clone)]
pub struct BoundGru {
    pub spec: GruSpec,
    z: Gate,
    r: Gate,
    h: Gate,
    out_w: Var,
    out_b: Var,
}

impl BoundGru {
    pub fn bind(params: &ParamSet, bound: &Bound, prefix: &str) -> Result<Self> {
        let w = params.get(&format!("{prefix}.w_z.w"))?;
        let o = params.get(&format!("{prefix}.out.w"))?;
        if w.shape.len() != 2 || o.shape.len() != 2 {
            return Err(Error::Usage(format!("{prefix}: malformed weight shapes")));
        }
        let spec = GruSpec {
            input: w.shape[1],
            hidden: w.shape[0],
            output: o.shape[0],
        };
        let gate = |g: &str| -> Result<Gate> {
            Ok(Gate {
                w: bound.var(&format!("{prefix}.w_{g}.w"))?,
                wb: bound.var(&format!("{prefix}.w_{g}.b"))?,
                u: bound.var(&format!("{prefix}.u_{g}.w"))?,
                ub: bound.var(&format!("{prefix}.u_{g}.b"))?,
            })
        };
        Ok(Self {
            spec,
            z: gate("z")?,
            r: gate("r")?,
            h: gate("h")?,
            out_w: bound.var(&format!("{prefix}.out.w"))?,
            out_b: bound.var(&format!("{prefix}.out.b"))?,
        })
    }
}

fn affine(tape: &mut Tape, w: Var, b: Var, x: Var, rows: usize) -> Result<Var> {
    let a = tape.matvec(w, x, rows)?;
    Ok(tape.add(a, b)?)
}

/// One recurrence step:
///
/// ```text
/// z  = sigmoid(W_z u + U_z h + b_z)
/// r  = sigmoid(W_r u + U_r h + b_r)
/// h~ = tanh(W_h u + U_h (r * h) + b_h)
/// h' = z * h + (1 - z) * h~
/// ```
pub fn gru_forward(tape: &mut Tape, h: Var, u: Var, g: &BoundGru) -> Result<Var> {
    let GruSpec { input, hidden, .. } = g.spec;
    if tape.len_of(h) != hidden || tape.len_of(u) != input {
        return Err(Error::Usage(format!(
            "GRU expects hidden {hidden} and input {input}, got {} and {}",
            tape.len_of(h),
            tape.len_of(u)
        )));
    }
    let pre = |tape: &mut Tape, gate: &Gate, hh: Var| -> Result<Var> {
        let a = affine(tape, gate.w, gate.wb, u, hidden)?;
        let b = affine(tape, gate.u, gate.ub, hh, hidden)?;
        Ok(tape.add(a, b)?)
    };
    let z = pre(tape, &g.z, h)?;
    let z = tape.sigmoid(z)?;
    let r = pre(tape, &g.r, h)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let c = pre(tape, &g.h, rh)?;
    let c = tape.tanh(c)?;
    let keep = tape.mul(z, h)?;
    let nz = tape.one_minus(z)?;
    let new = tape.mul(nz, c)?;
    Ok(tape.add(keep, new)?)
}

/// Output affine map `W_o h + b_o`.
pub fn gru_readout(tape: &mut Tape, h: Var, g: &BoundGru) -> Result<Var> {
    affine(tape, g.out_w, g.out_b, h, g.spec.output)
}
