use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{Bound, Checkpoint, MinMax, ParamSet};
use crate::dataset::Dataset;
use crate::domain::{Grid, SensorLayout};
use crate::error::{Error, Result};
use crate::grid_model::{CellKind, GridModel, GridOutput};
use crate::training::{
    adam_step, augment_gaussian_noise, augment_sensor_shift, mse_loss_tape, mse_vector, penalty_c1_tape,
    penalty_c2_tape, AdamHyper, AdamState, LossConfig, SensorReadings, SequenceGru,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    PdeParam,
    Mlp,
    MlpReg,
    Gru,
    GridGru,
    GridGruAugm,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::PdeParam,
        Variant::Mlp,
        Variant::MlpReg,
        Variant::Gru,
        Variant::GridGru,
        Variant::GridGruAugm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PdeParam => "pde-param",
            Variant::Mlp => "mlp",
            Variant::MlpReg => "mlp-reg",
            Variant::Gru => "gru",
            Variant::GridGru => "grid-gru",
            Variant::GridGruAugm => "grid-gru-augm",
        }
    }

    /// Cell of the grid variants; `None` for the sequence baseline.
    pub fn cell_kind(self) -> Option<CellKind> {
        match self {
            Variant::PdeParam => Some(CellKind::PdeParam),
            Variant::Mlp | Variant::MlpReg => Some(CellKind::Mlp),
            Variant::GridGru | Variant::GridGruAugm => Some(CellKind::GridGru),
            Variant::Gru => None,
        }
    }

    pub fn default_phases(self) -> Vec<Phase> {
        let (a, b) = match self {
            Variant::PdeParam => ((1000, 1e-2), (200, 1e-3)),
            Variant::Mlp | Variant::MlpReg => ((1000, 1e-3), (200, 1e-4)),
            Variant::Gru | Variant::GridGru | Variant::GridGruAugm => ((3000, 1e-3), (3000, 1e-4)),
        };
        vec![Phase::new(a.0, a.1), Phase::new(b.0, b.1)]
    }

    pub fn default_loss(self) -> LossConfig {
        if self == Variant::MlpReg {
            LossConfig::with_penalties()
        } else {
            LossConfig::default()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub iterations: usize,
    pub lr: f64,
}

impl Phase {
    pub fn new(iterations: usize, lr: f64) -> Self {
        Self { iterations, lr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phases: Vec<Phase>,
    pub seed: u64,
    /// Probabilities of moving a sensor one level towards the inlet and
    /// towards the outlet; `None` disables the augmentation.
    pub sensor_shift: Option<[f64; 2]>,
    /// Gaussian noise standard deviation as a fraction of each channel mean;
    /// zero disables the augmentation.
    pub noise_factor: f64,
    /// Hidden size of the recurrent variants.
    pub hidden: usize,
}

impl TrainSchedule {
    pub fn for_variant(v: Variant, seed: u64) -> Self {
        Self {
            phases: v.default_phases(),
            seed,
            sensor_shift: (v == Variant::GridGruAugm).then_some([0.25, 0.25]),
            noise_factor: 0.0,
            hidden: 8,
        }
    }

    pub fn iterations(&self) -> usize {
        self.phases.iter().map(|p| p.iterations).sum()
    }

    pub fn validate(&self, v: Variant) -> Result<()> {
        for p in &self.phases {
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::Config(format!(
                    "schedule phases need a positive learning rate, got {}",
                    p.lr
                )));
            }
        }
        if let Some([a, b]) = self.sensor_shift {
            if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0) {
                return Err(Error::Config(format!("invalid sensor-shift probabilities {a}, {b}")));
            }
            if v == Variant::Gru {
                return Err(Error::Config("the sequence baseline has no spatial sensors to shift".into()));
            }
        }
        if !(self.noise_factor >= 0.0 && self.noise_factor.is_finite()) {
            return Err(Error::Config("noise factor must be >= 0".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        Ok(())
    }
}

/// What a training run may see: boundary conditions, the training sensors
/// and, for model selection, the second validation sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub grid: Grid,
    pub train: SensorReadings,
    pub val2: Option<SensorReadings>,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset, layout: &SensorLayout) -> Result<Self> {
        layout.validate(ds.meta.n_z)?;
        let n_t = ds.meta.n_t;
        let train = SensorReadings::new(layout.train.clone(), n_t, ds.temperatures(&layout.train)?)?;
        let val2 = if layout.val2.len() >= 2 {
            ds.temperatures(&layout.val2)
                .ok()
                .map(|v| SensorReadings::new(layout.val2.clone(), n_t, v))
                .transpose()?
        } else {
            None
        };
        Ok(Self {
            grid: ds.grid()?,
            train,
            val2,
        })
    }

    fn temperature_range(&self) -> MinMax {
        MinMax::of(self.train.values.iter().chain(&self.grid.inlet_t).copied())
    }
}

/// A trained or freshly initialized model of any variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Grid(GridModel),
    Sequence(SequenceGru),
}

impl Model {
    pub fn init(v: Variant, data: &TrainData, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = &data.grid;
        let upper = |s: &[f64]| MinMax::new(0.0, s.iter().copied().fold(0.0, f64::max));
        Ok(match v {
            Variant::PdeParam => Model::Grid(GridModel::pde_param()),
            Variant::Mlp | Variant::MlpReg => Model::Grid(GridModel::mlp(
                data.temperature_range(),
                (upper(&g.inlet_xa), upper(&g.inlet_xp)),
                &mut rng,
            )?),
            Variant::GridGru | Variant::GridGruAugm => {
                let norm = [
                    upper(&g.inlet_xa),
                    upper(&g.inlet_xp),
                    data.temperature_range(),
                    MinMax::of(g.velocity.iter().copied()),
                ];
                Model::Grid(GridModel::grid_gru(hidden, norm, &mut rng))
            }
            Variant::Gru => {
                let of = |s: &[f64]| MinMax::of(s.iter().copied());
                let inputs = [of(&g.inlet_xa), of(&g.inlet_xp), of(&g.inlet_t), of(&g.velocity)];
                let output = MinMax::of(data.train.values.iter().copied());
                Model::Sequence(SequenceGru::new(&data.train.levels, hidden, inputs, output, &mut rng)?)
            }
        })
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Grid(m) => &m.params,
            Model::Sequence(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Grid(m) => &mut m.params,
            Model::Sequence(m) => &mut m.params,
        }
    }

    pub fn predict(&self, grid: &Grid) -> Result<GridOutput> {
        match self {
            Model::Grid(m) => m.forward(grid),
            Model::Sequence(m) => m.predict(grid),
        }
    }

    pub fn as_grid(&self) -> Result<&GridModel> {
        match self {
            Model::Grid(m) => Ok(m),
            Model::Sequence(_) => Err(Error::Unsupported(
                "the sequence baseline only predicts temperatures at its training sensors".into(),
            )),
        }
    }

    pub fn to_checkpoint(&self, v: Variant) -> Checkpoint {
        Checkpoint::new(v.name(), self.params().clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Variant, Self)> {
        let v: Variant = ck.variant.parse()?;
        let params = ck.params.clone();
        let model = match v.cell_kind() {
            Some(kind) => Model::Grid(GridModel { kind, params }),
            None => Model::Sequence(SequenceGru { params }),
        };
        Ok((v, model))
    }

    /// Mean squared error of ΔT between successive sensors of `readings`;
    /// the data behind model selection.
    pub fn delta_t_mse(&self, grid: &Grid, readings: &SensorReadings) -> Result<f64> {
        let out = self.predict(grid)?;
        let lv = &readings.levels;
        if lv.len() < 2 {
            return Err(Error::Usage("ΔT needs at least two sensors".into()));
        }
        let nl = lv.len();
        let mut sum = 0.0;
        let mut n = 0usize;
        for j in 0..readings.n_t {
            for k in 1..nl {
                let p = out.t.get(j, lv[k]) - out.t.get(j, lv[k - 1]);
                let t = readings.values[j * nl + k] - readings.values[j * nl + k - 1];
                sum += (p - t) * (p - t);
                n += 1;
            }
        }
        let mse = sum / n as f64;
        if !mse.is_finite() {
            return Err(Error::UndefinedMetric("ΔT error is not finite".into()));
        }
        Ok(mse)
    }

    fn loss_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        grid: &Grid,
        readings: &SensorReadings,
        pred_levels: &[usize],
        targets: &[f64],
        cfg: &LossConfig,
    ) -> Result<Var> {
        match self {
            Model::Grid(m) => {
                let f = m.forward_tape(tape, bound, grid)?;
                let mut loss = mse_loss_tape(tape, &f.t, f.n_z, readings, pred_levels, targets)?;
                if cfg.enable_c1 {
                    let c1 = penalty_c1_tape(tape, &f.xa, &f.xp, cfg)?;
                    loss = tape.add(loss, c1)?;
                }
                if cfg.enable_c2 {
                    let c2 = penalty_c2_tape(tape, &f.xa, &f.xp, f.n_z, cfg)?;
                    loss = tape.add(loss, c2)?;
                }
                Ok(loss)
            }
            Model::Sequence(m) => {
                if m.levels()? != readings.levels {
                    return Err(Error::Usage("sequence GRU levels differ from the sensors".into()));
                }
                let rows = m.forward_tape(tape, bound, grid)?;
                let p = tape.concat(&rows[..readings.n_t])?;
                mse_vector(tape, p, targets)
            }
        }
    }

    /// Loss of the model on clean data.
    pub fn loss(&self, data: &TrainData, cfg: &LossConfig) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape);
        let r = &data.train;
        let l = self.loss_tape(&mut tape, &bound, &data.grid, r, &r.levels, &r.values, cfg)?;
        Ok(tape.scalar(l))
    }

    /// Loss and its gradient with respect to the learnable parameters, in
    /// [`ParamSet::flat`] order.
    pub fn loss_and_grad(&self, data: &TrainData, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let r = &data.train;
        self.loss_grad_on(&mut tape, &data.grid, r, &r.levels, &r.values, cfg)
    }

    fn loss_grad_on(
        &self,
        tape: &mut Tape,
        grid: &Grid,
        readings: &SensorReadings,
        pred_levels: &[usize],
        targets: &[f64],
        cfg: &LossConfig,
    ) -> Result<(f64, Vec<f64>)> {
        tape.clear();
        let bound = self.params().bind(tape);
        let loss = self.loss_tape(tape, &bound, grid, readings, pred_levels, targets, cfg)?;
        let grads = tape.backward(loss)?;
        let g = bound.trainable_vars().flat_map(|v| grads.wrt(v).iter().copied()).collect();
        Ok((tape.scalar(loss), g))
    }
}

/// Summary of a loss history used to check that training made progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrend {
    pub initial: f64,
    pub last: f64,
    pub min: f64,
    /// Loss at the end of each phase.
    pub phase_ends: Vec<f64>,
    pub decreased: bool,
}

impl LossTrend {
    pub fn of(history: &[f64], phases: &[Phase]) -> Option<Self> {
        let (&initial, &last) = (history.first()?, history.last()?);
        let mut end = 0;
        let phase_ends = phases
            .iter()
            .filter_map(|p| {
                end += p.iterations;
                history.get(end - 1).copied()
            })
            .collect();
        Some(Self {
            initial,
            last,
            min: history.iter().copied().fold(f64::INFINITY, f64::min),
            phase_ends,
            decreased: last < initial,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub variant: Variant,
    pub schedule: TrainSchedule,
    pub model: Model,
    /// Loss before each update.
    pub history: Vec<f64>,
    /// Clean-data loss after the last update.
    pub final_loss: f64,
    /// ΔT mean squared error used for model selection, if defined.
    pub selection_mse: Option<f64>,
}

impl TrainOutcome {
    pub fn trend(&self) -> Option<LossTrend> {
        LossTrend::of(&self.history, &self.schedule.phases)
    }
}

fn channel_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Full-batch Adam on the training sensors.
pub fn train(v: Variant, data: &TrainData, schedule: &TrainSchedule, cfg: &LossConfig) -> Result<TrainOutcome> {
    schedule.validate(v)?;
    let model = Model::init(v, data, schedule.hidden, schedule.seed)?;
    train_from(v, model, data, schedule, cfg)
}

/// [`train`] starting from a given model instead of the seeded
/// initialization; the seed still drives the augmentation streams.
pub fn train_from(
    v: Variant,
    mut model: Model,
    data: &TrainData,
    schedule: &TrainSchedule,
    cfg: &LossConfig,
) -> Result<TrainOutcome> {
    schedule.validate(v)?;
    cfg.validate(data.grid.n_t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut flat = model.params().flat();
    let mut adam = AdamState::new(flat.len());
    let mut history = Vec::with_capacity(schedule.iterations());
    let mut tape = Tape::new();
    let r = &data.train;
    let n_z = data.grid.n_z;
    let g = &data.grid;
    let means = [
        channel_mean(&g.inlet_xa),
        channel_mean(&g.inlet_xp),
        channel_mean(&g.inlet_t),
        channel_mean(&g.velocity),
        channel_mean(&r.values),
    ];
    let mut it = 0usize;
    for phase in &schedule.phases {
        let hyper = AdamHyper::new(phase.lr);
        for _ in 0..phase.iterations {
            let diverged = |detail: String, flat: &[f64]| Error::Diverged {
                iteration: it,
                detail: format!("{detail}; parameter norm {:.6e}", flat.iter().map(|x| x * x).sum::<f64>().sqrt()),
            };
            let noisy;
            let (grid, targets): (&Grid, Vec<f64>) = if schedule.noise_factor > 0.0 {
                let f = schedule.noise_factor;
                let mut ng = g.clone();
                ng.inlet_xa = augment_gaussian_noise(&g.inlet_xa, means[0], f, &mut rng)?;
                ng.inlet_xp = augment_gaussian_noise(&g.inlet_xp, means[1], f, &mut rng)?;
                ng.inlet_t = augment_gaussian_noise(&g.inlet_t, means[2], f, &mut rng)?;
                ng.velocity = augment_gaussian_noise(&g.velocity, means[3], f, &mut rng)?;
                noisy = ng;
                (&noisy, augment_gaussian_noise(&r.values, means[4], f, &mut rng)?)
            } else {
                (g, r.values.clone())
            };
            let levels = match schedule.sensor_shift {
                Some([down, up]) => augment_sensor_shift(&r.levels, n_z, down, up, &mut rng),
                None => r.levels.clone(),
            };
            let (loss, grads) = match model.loss_grad_on(&mut tape, grid, r, &levels, &targets, cfg) {
                Ok(x) => x,
                Err(e @ (Error::Numeric { .. } | Error::Autodiff(_))) => return Err(diverged(e.to_string(), &flat)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}"), &flat));
            }
            if grads.iter().any(|x| !x.is_finite()) {
                return Err(diverged("non-finite gradient".into(), &flat));
            }
            history.push(loss);
            adam_step(&mut flat, &grads, &mut adam, &hyper)?;
            model.params_mut().set_flat(&flat)?;
            it += 1;
        }
    }
    let final_loss = match model.loss(data, cfg) {
        Ok(l) if l.is_finite() => l,
        Ok(l) => return Err(Error::Diverged { iteration: it, detail: format!("final loss {l}") }),
        Err(e) => return Err(Error::Diverged { iteration: it, detail: e.to_string() }),
    };
    let selection = match (&model, &data.val2) {
        (Model::Sequence(_), _) => Some(&data.train),
        (Model::Grid(_), Some(val2)) => Some(val2),
        (Model::Grid(_), None) => None,
    };
    let selection_mse = selection.map(|s| model.delta_t_mse(&data.grid, s)).transpose().ok().flatten();
    Ok(TrainOutcome {
        variant: v,
        schedule: schedule.clone(),
        model,
        history,
        final_loss,
        selection_mse,
    })
}

/// Runs of one variant over several seeds plus the selected index.
#[derive(Debug, Clone)]
pub struct SeedSweep {
    pub runs: Vec<TrainOutcome>,
    pub selected: usize,
}

/// Index of the run with the smallest selection metric, falling back to
/// the training loss when no run has one. Ties keep the earliest run.
pub fn select_best(metrics: &[(Option<f64>, f64)]) -> Option<usize> {
    let key = |i: usize| -> f64 {
        let any_metric = metrics.iter().any(|m| m.0.is_some());
        if any_metric {
            metrics[i].0.unwrap_or(f64::INFINITY)
        } else {
            metrics[i].1
        }
    };
    (0..metrics.len()).fold(None, |best: Option<usize>, i| match best {
        Some(b) if key(b) <= key(i) => Some(b),
        _ => Some(i),
    })
}

pub fn train_seeds(
    v: Variant,
    data: &TrainData,
    base: &TrainSchedule,
    seeds: &[u64],
    cfg: &LossConfig,
) -> Result<SeedSweep> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let s = TrainSchedule { seed, ..base.clone() };
            train(v, data, &s, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<(Option<f64>, f64)> = runs.iter().map(|r| (r.selection_mse, r.final_loss)).collect();
    let selected = select_best(&metrics).expect("non-empty");
    Ok(SeedSweep { runs, selected })
}
