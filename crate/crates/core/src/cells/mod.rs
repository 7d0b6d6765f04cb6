//! Trainable cells and their parameters.

pub mod checkpoint;
pub mod gru;
pub mod mlp;
mod normalize;
mod params;
pub mod pde;

pub use checkpoint::Checkpoint;
pub use gru::{gru_forward, gru_readout, init_gru, BoundGru, GruSpec};
pub use mlp::{init_mlp, mlp_forward, BoundMlp};
pub use normalize::MinMax;
pub use params::{Bound, ParamSet, Tensor};
pub use pde::{g_closed_form, pde_cell_forward, CellState, ClosedForm, PdeCellParams, PdeKs, RateTerms, Species};
