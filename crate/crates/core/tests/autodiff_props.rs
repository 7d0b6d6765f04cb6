use reactor_grid::autodiff::{grad_check, grad_check_tensors, AutodiffError, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const POINTS: usize = 100;

type Res = Result<Var, AutodiffError>;

/// Draws values in `[lo, hi]` that stay at least `gap` away from `kink`.
fn draw(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, kink: Option<f64>) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let x = rng.random_range(lo..hi);
            if kink.is_none_or(|k| (x - k).abs() > 1e-3) {
                break x;
            }
        })
        .collect()
}

/// Weighted sum so every coordinate of a vector result reaches the scalar.
fn reduce(t: &mut Tape, y: Var) -> Res {
    let n = t.len_of(y);
    let w: Vec<f64> = (0..n).map(|i| 0.7 + 0.3 * i as f64).collect();
    let w = t.constant(&w);
    let p = t.mul(w, y)?;
    t.sum(p)
}

fn unary(name: &str, lo: f64, hi: f64, kink: Option<f64>, op: impl Fn(&mut Tape, Var) -> Res) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    for _ in 0..POINTS {
        let x = draw(&mut rng, 3, lo, hi, kink);
        let err = grad_check(|t, v| {
            let y = op(t, v)?;
            reduce(t, y)
        }, &x, H)
        .unwrap();
        assert!(err <= 1e-6, "{name} at {x:?}: {err:e}");
    }
}

fn binary(name: &str, lo: f64, hi: f64, op: impl Fn(&mut Tape, Var, Var) -> Res) {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + name.len() as u64);
    for _ in 0..POINTS {
        let a = draw(&mut rng, 3, lo, hi, None);
        let b: Vec<f64> = loop {
            let b = draw(&mut rng, 3, lo, hi, None);
            // Keep max/min away from ties.
            if a.iter().zip(&b).all(|(x, y)| (x - y).abs() > 1e-3) {
                break b;
            }
        };
        let err = grad_check_tensors(|t, v| {
            let y = op(t, v[0], v[1])?;
            reduce(t, y)
        }, &[a.clone(), b.clone()], H)
        .unwrap();
        assert!(err <= 1e-6, "{name} at {a:?},{b:?}: {err:e}");
    }
}

#[test]
fn elementwise_binary_primitives() {
    binary("add", -3.0, 3.0, |t, a, b| t.add(a, b));
    binary("sub", -3.0, 3.0, |t, a, b| t.sub(a, b));
    binary("mul", -3.0, 3.0, |t, a, b| t.mul(a, b));
    binary("div", 0.5, 3.0, |t, a, b| t.div(a, b));
    binary("max", -3.0, 3.0, |t, a, b| t.max(a, b));
    binary("min", -3.0, 3.0, |t, a, b| t.min(a, b));
}

#[test]
fn elementwise_unary_primitives() {
    unary("powf", 0.2, 3.0, None, |t, a| t.powf(a, 1.7));
    unary("exp", -3.0, 2.0, None, |t, a| t.exp(a));
    unary("log", 0.2, 5.0, None, |t, a| t.log(a));
    unary("tanh", -3.0, 3.0, None, |t, a| t.tanh(a));
    unary("sigmoid", -4.0, 4.0, None, |t, a| t.sigmoid(a));
    unary("relu", -3.0, 3.0, Some(0.0), |t, a| t.relu(a));
    unary("softplus", -4.0, 4.0, None, |t, a| t.softplus(a));
    unary("neg", -3.0, 3.0, None, |t, a| t.neg(a));
    unary("scale", -3.0, 3.0, None, |t, a| t.scale(a, -2.5));
    unary("shift", -3.0, 3.0, None, |t, a| t.shift(a, 0.75));
    unary("one_minus", -3.0, 3.0, None, |t, a| t.one_minus(a));
    unary("clamp_lo", -1.0, 0.5, Some(0.0), |t, a| t.clamp(a, 0.0, 1.0));
    unary("clamp_hi", 0.5, 2.0, Some(1.0), |t, a| t.clamp(a, 0.0, 1.0));
    unary("standardize", -3.0, 3.0, None, |t, a| t.standardize(a, 1e-5));
    unary("index", -3.0, 3.0, None, |t, a| {
        let e = t.index(a, 1)?;
        t.exp(e)
    });
}

#[test]
fn reductions() {
    unary("sum", -3.0, 3.0, None, |t, a| {
        let s = t.sum(a)?;
        t.tanh(s)
    });
    unary("mean", -3.0, 3.0, None, |t, a| {
        let s = t.mean(a)?;
        t.exp(s)
    });
}

#[test]
fn matvec_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..POINTS {
        let m = draw(&mut rng, 6, -2.0, 2.0, None);
        let v = draw(&mut rng, 3, -2.0, 2.0, None);
        let err = grad_check_tensors(|t, x| {
            let y = t.matvec(x[0], x[1], 2)?;
            let c = t.concat(&[y, x[1]])?;
            reduce(t, c)
        }, &[m.clone(), v.clone()], H)
        .unwrap();
        assert!(err <= 1e-6, "{err:e}");
    }
}

/// A small recurrent expression standing in for an unrolled grid.
fn composite(t: &mut Tape, x: Var) -> Res {
    let w = t.constant(&[0.3, -0.7, 0.2, 0.9, -0.4, 0.5, 0.1, 0.8, -0.6]);
    let mut h = x;
    for _ in 0..4 {
        let a = t.matvec(w, h, 3)?;
        let a = t.standardize(a, 1e-5)?;
        let s = t.sigmoid(a)?;
        let g = t.softplus(h)?;
        let m = t.mul(s, g)?;
        h = t.clamp(m, 0.0, 5.0)?;
    }
    let l = t.shift(h, 1.0)?;
    let l = t.log(l)?;
    t.sum(l)
}

#[test]
fn backward_is_deterministic() {
    let mut t = Tape::new();
    let x = t.param(&[0.4, -1.1, 0.9]);
    let y = composite(&mut t, x).unwrap();
    let a = t.backward(y).unwrap();
    let b = t.backward(y).unwrap();
    assert_eq!(a.wrt(x), b.wrt(x));
    let ga: Vec<_> = a.iter().map(|(i, g)| (i, g.to_vec())).collect();
    let gb: Vec<_> = b.iter().map(|(i, g)| (i, g.to_vec())).collect();
    assert_eq!(ga, gb);
}

#[test]
fn replay_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut t = Tape::new();
        let x = t.param(&draw(&mut rng, 3, -2.0, 2.0, None));
        composite(&mut t, x).unwrap();
        assert!(t.check_topology());
        let replayed = t.replay().unwrap();
        assert_eq!(replayed.len(), t.values().len());
        assert!(replayed.iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn composite_gradient() {
    let err = grad_check(composite, &[0.4, -1.1, 0.9], H).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}
