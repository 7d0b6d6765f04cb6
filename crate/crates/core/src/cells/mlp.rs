//! Small networks that stand in for the closed-form rate terms.

use rand::Rng;

use crate::autodiff::{softplus_inv, Tape, Var};
use crate::cells::{MinMax, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const G_A_HIDDEN: [usize; 3] = [32, 64, 32];
pub const G_P_HIDDEN: [usize; 2] = [32, 32];
const LN_EPS: f64 = 1e-5;

/// Adds the tensors of a `2 -> hidden... -> 1` network under `prefix`.
///
/// Weights and biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`;
/// normalization gains start at 1 and offsets at 0. The output bias is set
/// so the untrained network returns about a tenth of the largest
/// concentration; an O(1) rate would drive the unrolled grid far outside
/// the data range before the first update. The input statistics
/// (temperature first, concentration second) are stored frozen.
pub fn init_mlp<R: Rng + ?Sized>(
    params: &mut ParamSet,
    prefix: &str,
    hidden: &[usize],
    t_range: MinMax,
    x_range: MinMax,
    rng: &mut R,
) -> Result<()> {
    for (what, r) in [("temperature", t_range), ("concentration", x_range)] {
        if r.is_degenerate() || !r.min.is_finite() || !r.max.is_finite() {
            return Err(Error::Config(format!(
                "{prefix}: degenerate {what} range [{}, {}]",
                r.min, r.max
            )));
        }
    }
    params.push(Tensor::frozen(&format!("{prefix}.input_min"), vec![t_range.min, x_range.min]));
    params.push(Tensor::frozen(&format!("{prefix}.input_max"), vec![t_range.max, x_range.max]));
    let mut fan_in = 2;
    for (i, &width) in hidden.iter().enumerate() {
        push_affine(params, &format!("{prefix}.l{i}"), width, fan_in, rng);
        params.push(Tensor::new(&format!("{prefix}.ln{i}.gain"), &[width], vec![1.0; width]));
        params.push(Tensor::new(&format!("{prefix}.ln{i}.bias"), &[width], vec![0.0; width]));
        fan_in = width;
    }
    push_affine(params, &format!("{prefix}.out"), 1, fan_in, rng);
    let start = 0.1 * x_range.max.abs().max(x_range.min.abs());
    params.get_mut(&format!("{prefix}.out.b"))?.values[0] = softplus_inv(start);
    Ok(())
}

pub(crate) fn push_affine<R: Rng + ?Sized>(
    params: &mut ParamSet,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<_>>();
    let w = draw(rows * cols);
    let b = draw(rows);
    params.push(Tensor::new(&format!("{name}.w"), &[rows, cols], w));
    params.push(Tensor::new(&format!("{name}.b"), &[rows], b));
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: Var,
    b: Var,
    gain: Var,
    bias: Var,
    rows: usize,
}

/// Tape handles of one network.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<Layer>,
    out_w: Var,
    out_b: Var,
    t_norm: MinMax,
    x_norm: MinMax,
}

impl BoundMlp {
    pub fn bind(params: &ParamSet, bound: &crate::cells::Bound, prefix: &str) -> Result<Self> {
        let lo = &params.get(&format!("{prefix}.input_min"))?.values;
        let hi = &params.get(&format!("{prefix}.input_max"))?.values;
        if lo.len() != 2 || hi.len() != 2 {
            return Err(Error::Usage(format!("{prefix}: input statistics must have two entries")));
        }
        let t_norm = MinMax::new(lo[0], hi[0]);
        let x_norm = MinMax::new(lo[1], hi[1]);
        if t_norm.is_degenerate() || x_norm.is_degenerate() {
            return Err(Error::Config(format!("{prefix}: degenerate input range")));
        }
        let mut layers = Vec::new();
        let mut fan_in = 2;
        for i in 0.. {
            let name = format!("{prefix}.l{i}.w");
            let Ok(w) = params.get(&name) else { break };
            if w.shape.len() != 2 || w.shape[1] != fan_in {
                return Err(Error::Usage(format!("{name}: shape {:?} does not follow width {fan_in}", w.shape)));
            }
            let rows = w.shape[0];
            layers.push(Layer {
                w: bound.var(&name)?,
                b: bound.var(&format!("{prefix}.l{i}.b"))?,
                gain: bound.var(&format!("{prefix}.ln{i}.gain"))?,
                bias: bound.var(&format!("{prefix}.ln{i}.bias"))?,
                rows,
            });
            fan_in = rows;
        }
        let out = params.get(&format!("{prefix}.out.w"))?;
        if out.shape != [1, fan_in] {
            return Err(Error::Usage(format!("{prefix}.out.w: shape {:?}", out.shape)));
        }
        Ok(Self {
            layers,
            out_w: bound.var(&format!("{prefix}.out.w"))?,
            out_b: bound.var(&format!("{prefix}.out.b"))?,
            t_norm,
            x_norm,
        })
    }

    pub fn t_norm(&self) -> MinMax {
        self.t_norm
    }

    pub fn x_norm(&self) -> MinMax {
        self.x_norm
    }
}

/// Evaluates the network at `(T, x)`; the output is softplus-activated so
/// it is never negative.
pub fn mlp_forward(tape: &mut Tape, temp: Var, x: Var, net: &BoundMlp) -> Result<Var> {
    let tn = net.t_norm.apply_tape(tape, temp)?;
    let xn = net.x_norm.apply_tape(tape, x)?;
    let mut h = tape.concat(&[tn, xn])?;
    for l in &net.layers {
        let a = tape.matvec(l.w, h, l.rows)?;
        let a = tape.add(a, l.b)?;
        let a = tape.standardize(a, LN_EPS)?;
        let a = tape.mul(a, l.gain)?;
        let a = tape.add(a, l.bias)?;
        h = tape.relu(a)?;
    }
    let o = tape.matvec(net.out_w, h, 1)?;
    let o = tape.add(o, net.out_b)?;
    Ok(tape.softplus(o)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::softplus;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(params: &ParamSet, prefix: &str, t: f64, x: f64) -> f64 {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let net = BoundMlp::bind(params, &bound, prefix).unwrap();
        let t = tape.scalar_const(t);
        let x = tape.scalar_const(x);
        let y = mlp_forward(&mut tape, t, x, &net).unwrap();
        tape.scalar(y)
    }

    #[test]
    fn two_unit_layer_by_hand() {
        let mut p = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_mlp(&mut p, "g", &[2], MinMax::new(0.0, 1.0), MinMax::new(0.0, 1.0), &mut rng).unwrap();
        p.get_mut("g.l0.w").unwrap().values = vec![1.0, 2.0, -1.0, 0.5];
        p.get_mut("g.l0.b").unwrap().values = vec![0.1, 0.0];
        p.get_mut("g.ln0.gain").unwrap().values = vec![2.0, 1.0];
        p.get_mut("g.ln0.bias").unwrap().values = vec![0.5, 0.0];
        p.get_mut("g.out.w").unwrap().values = vec![1.0, -1.0];
        p.get_mut("g.out.b").unwrap().values = vec![0.25];

        // a = (1.6, -0.25); mean 0.675, deviation +-0.925.
        let a = [1.6_f64, -0.25];
        let mu = (a[0] + a[1]) / 2.0;
        let sd = (((a[0] - mu).powi(2) + (a[1] - mu).powi(2)) / 2.0 + LN_EPS).sqrt();
        let n = [(a[0] - mu) / sd, (a[1] - mu) / sd];
        let h = [(2.0 * n[0] + 0.5).max(0.0), (n[1]).max(0.0)];
        let want = softplus(h[0] - h[1] + 0.25);
        assert!((eval(&p, "g", 0.5, 0.5) - want).abs() < 1e-12);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut p = ParamSet::default();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            init_mlp(&mut p, "g_a", &G_A_HIDDEN, MinMax::new(1.0, 1.3), MinMax::new(0.0, 1.1), &mut rng).unwrap();
            p
        };
        let (a, b) = (build(), build());
        assert_eq!(a, b);
        assert_eq!(eval(&a, "g_a", 1.1, 0.4), eval(&b, "g_a", 1.1, 0.4));
        assert_eq!(a.trainable_count(), 2 * 32 + 32 * 3 + 32 * 64 + 64 * 3 + 64 * 32 + 32 * 3 + 33);
    }

    #[test]
    fn degenerate_range_is_config_error() {
        let mut p = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = init_mlp(&mut p, "g", &[2], MinMax::new(1.0, 1.0), MinMax::new(0.0, 1.0), &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn output_nonnegative_and_roundtrip(t in 0.5f64..2.0, x in 0.0f64..1.5) {
            let mut p = ParamSet::default();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let tn = MinMax::new(0.9, 1.4);
            let xn = MinMax::new(0.0, 1.1);
            init_mlp(&mut p, "g_p", &G_P_HIDDEN, tn, xn, &mut rng).unwrap();
            let y = eval(&p, "g_p", t, x);
            prop_assert!(y >= 0.0);
            let y2 = eval(&p, "g_p", tn.invert(tn.apply(t)), xn.invert(xn.apply(x)));
            prop_assert!((y - y2).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}
