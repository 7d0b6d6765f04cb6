use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// A named, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Frozen tensors (normalization statistics) enter the graph as
    /// constants.
    #[serde(default = "yes")]
    pub trainable: bool,
}

fn yes() -> bool {
    true
}

impl Tensor {
    pub fn new(name: &str, shape: &[usize], values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values,
            trainable: true,
        }
    }

    pub fn frozen(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![values.len()],
            values,
            trainable: false,
        }
    }
}

/// Ordered collection of tensors shared by every cell of a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Usage(format!("missing parameter tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Usage(format!("missing parameter tensor {name}")))
    }

    /// Number of learnable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.values.len())
            .sum()
    }

    /// Learnable scalars concatenated in tensor order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .filter(|t| t.trainable)
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.trainable_count() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.trainable_count(),
                flat.len()
            )));
        }
        let mut k = 0;
        for t in self.tensors.iter_mut().filter(|t| t.trainable) {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Places every tensor on the tape.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if t.trainable {
                    tape.param(&t.values)
                } else {
                    tape.constant(&t.values)
                }
            })
            .collect();
        Bound {
            names: self.tensors.iter().map(|t| t.name.clone()).collect(),
            vars,
            trainable: self.tensors.iter().map(|t| t.trainable).collect(),
        }
    }
}

/// Tape handles of a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
    trainable: Vec<bool>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Usage(format!("missing parameter tensor {name}")))
    }

    /// Learnable leaves in the order of [`ParamSet::flat`].
    pub fn trainable_vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(&v, _)| v)
    }
}
