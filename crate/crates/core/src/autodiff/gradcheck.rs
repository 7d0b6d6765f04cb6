use super::{AutodiffError, Tape, Var};

/// Largest relative disagreement between the tape gradient of `f` and
/// central differences with step `h`, over all coordinates of all tensors.
///
/// The per-coordinate error is `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check_tensors<F>(f: F, point: &[Vec<f64>], h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    if h <= 0.0 {
        return Err(AutodiffError::Usage(format!("step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let eval = |tape: &mut Tape, pt: &[Vec<f64>]| -> Result<(Vec<Var>, Var), AutodiffError> {
        tape.clear();
        let leaves: Vec<Var> = pt.iter().map(|p| tape.param(p)).collect();
        let out = f(tape, &leaves)?;
        Ok((leaves, out))
    };
    let (leaves, out) = eval(&mut tape, point)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&v| grads.wrt(v).to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut pt = point.to_vec();
    for (k, tensor) in point.iter().enumerate() {
        for i in 0..tensor.len() {
            pt[k][i] = tensor[i] + h;
            let (_, up) = eval(&mut tape, &pt)?;
            let f_up = tape.scalar(up);
            pt[k][i] = tensor[i] - h;
            let (_, down) = eval(&mut tape, &pt)?;
            let f_down = tape.scalar(down);
            pt[k][i] = tensor[i];
            let numeric = (f_up - f_down) / (2.0 * h);
            let a = analytic[k][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// [`grad_check_tensors`] for a function of a single vector.
pub fn grad_check<F>(f: F, point: &[f64], h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    grad_check_tensors(|t, v| f(t, v[0]), &[point.to_vec()], h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let err = grad_check(
            |t, x| {
                let w = t.constant(&[1.5, -2.0, 0.25]);
                let p = t.mul(w, x)?;
                let s = t.sum(p)?;
                t.shift(s, 3.0)
            },
            &[0.3, 1.2, -4.0],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn exp_at_one() {
        let err = grad_check(|t, x| t.exp(x), &[1.0], 1e-6).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(grad_check(|t, x| t.exp(x), &[1.0], 0.0).is_err());
    }
}
