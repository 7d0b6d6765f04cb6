use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Moves each sensor level independently one level up (probability
/// `p_down`) or down the reactor (`p_up`). Levels at the grid edge that
/// would leave the grid stay put.
pub fn augment_sensor_shift<R: Rng + ?Sized>(
    levels: &[usize],
    n_z: usize,
    p_down: f64,
    p_up: f64,
    rng: &mut R,
) -> Vec<usize> {
    levels
        .iter()
        .map(|&z| {
            let u: f64 = rng.random();
            if u < p_down {
                z.checked_sub(1).unwrap_or(z)
            } else if u < p_down + p_up && z + 1 < n_z {
                z + 1
            } else {
                z
            }
        })
        .collect()
}

/// Adds zero-mean Gaussian noise with standard deviation `factor * |mean|`.
pub fn augment_gaussian_noise<R: Rng + ?Sized>(
    values: &[f64],
    mean: f64,
    factor: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sd = factor * mean.abs();
    if sd == 0.0 {
        return Ok(values.to_vec());
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Config(format!("noise: {e}")))?;
    Ok(values.iter().map(|&v| v + normal.sample(rng)).collect())
}
