//! Tape gradients of every training loss against central differences on a
//! small grid.

use reactor_grid::autodiff::softplus_inv;
use reactor_grid::cells::PdeCellParams;
use reactor_grid::domain::Grid;
use reactor_grid::grid_model::GridModel;
use reactor_grid::training::*;

const H: f64 = 1e-6;

fn grid() -> Grid {
    let mut g = Grid::uniform(5, 5, 0.2, 1.0, (0.1, 1.0, 1.0), 1.0);
    for j in 0..5 {
        g.inlet_xa[j] = 0.1 * (1.0 + 0.03 * j as f64);
        g.inlet_xp[j] = 1.0 - 0.04 * j as f64;
        g.velocity[j] = 1.0 + 0.1 * (j % 2) as f64;
    }
    g
}

/// Readings from a physics grid with known constants, so the loss is neither
/// zero nor dominated by a blow-up.
fn data() -> TrainData {
    let g = grid();
    let k = [0.6, 0.5, 0.4, 0.3, 0.2, 0.4, 1.5, 1.0];
    let truth = GridModel::from_pde(&PdeCellParams {
        raw: k.iter().map(|&v| softplus_inv(v)).collect(),
    })
    .forward(&g)
    .unwrap();
    let levels = vec![0, 2, 4];
    let values = (0..5)
        .flat_map(|j| levels.iter().map(move |&z| (j, z)))
        .map(|(j, z)| truth.t.get(j, z))
        .collect();
    let train = SensorReadings::new(levels, 5, values).unwrap();
    let v2 = vec![1, 3];
    let values = (0..5)
        .flat_map(|j| v2.iter().map(move |&z| (j, z)))
        .map(|(j, z)| truth.t.get(j, z))
        .collect();
    TrainData {
        grid: g,
        train,
        val2: Some(SensorReadings::new(v2, 5, values).unwrap()),
    }
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over all parameters.
pub fn worst_gradient_error(model: &Model, data: &TrainData, cfg: &LossConfig) -> f64 {
    let (_, grad) = model.loss_and_grad(data, cfg).unwrap();
    let base = model.params().flat();
    assert_eq!(grad.len(), base.len());
    let mut probe = model.clone();
    let mut at = |x: &[f64]| {
        probe.params_mut().set_flat(x).unwrap();
        probe.loss(data, cfg).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut x = base.clone();
    for i in 0..base.len() {
        x[i] = base[i] + H;
        let up = at(&x);
        x[i] = base[i] - H;
        let down = at(&x);
        x[i] = base[i];
        let numeric = (up - down) / (2.0 * H);
        worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(1.0));
    }
    worst
}

fn check(v: Variant) {
    let d = data();
    let m = Model::init(v, &d, 8, 11).unwrap();
    let err = worst_gradient_error(&m, &d, &v.default_loss());
    assert!(err < 1e-4, "{v}: {err:e}");
}

#[test]
fn pde_param_gradient() {
    check(Variant::PdeParam);
}

#[test]
fn mlp_gradient() {
    check(Variant::Mlp);
}

#[test]
fn mlp_reg_gradient_includes_penalties() {
    let d = data();
    let cfg = Variant::MlpReg.default_loss();
    assert!(cfg.enable_c1 && cfg.enable_c2);
    let cfg = LossConfig { t_prime: 3, ..cfg };
    let m = Model::init(Variant::MlpReg, &d, 8, 11).unwrap();
    assert!(worst_gradient_error(&m, &d, &cfg) < 1e-4);
}

#[test]
fn gru_gradient() {
    check(Variant::Gru);
}

#[test]
fn grid_gru_gradient() {
    check(Variant::GridGru);
    check(Variant::GridGruAugm);
}

#[test]
fn two_by_two_grid_gradient_wrt_ka() {
    let mut g = Grid::uniform(2, 2, 0.5, 1.0, (0.1, 1.0, 1.0), 1.0);
    g.inlet_xa[1] = 0.12;
    let k = [0.6, 0.5, 0.4, 0.3, 0.2, 0.4, 1.5, 1.0];
    let model = |ka: f64| {
        let mut kk = k;
        kk[0] = ka;
        GridModel::from_pde(&PdeCellParams {
            raw: kk.iter().map(|&v| softplus_inv(v)).collect(),
        })
    };
    let targets = vec![1.0, 1.05, 1.0, 1.04];
    let d = TrainData {
        grid: g,
        train: SensorReadings::new(vec![0, 1], 2, targets).unwrap(),
        val2: None,
    };
    // Two levels leave the temperature independent of k_a; the outlet
    // penalty brings the reactant channel into the loss.
    let cfg = LossConfig {
        enable_c2: true,
        t_prime: 2,
        ..LossConfig::default()
    };
    let loss = |ka: f64| Model::Grid(model(ka)).loss(&d, &cfg).unwrap();
    let (_, grad) = Model::Grid(model(0.6)).loss_and_grad(&d, &cfg).unwrap();
    // The tape differentiates the softplus raw; chain back to k_a itself.
    let dk_draw = 1.0 - (-0.6f64).exp();
    let analytic = grad[0] / dk_draw;
    let numeric = (loss(0.6 + H) - loss(0.6 - H)) / (2.0 * H);
    assert!(numeric.abs() > 1e-6);
    assert!((analytic - numeric).abs() / numeric.abs() < 1e-4, "{analytic} vs {numeric}");
}
