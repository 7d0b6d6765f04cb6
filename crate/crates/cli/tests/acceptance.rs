//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every line is printed regardless of test
//! capture. The process fails if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reactor_grid::cells::PdeCellParams;
use reactor_grid::dataset::Dataset;
use reactor_grid::domain::*;
use reactor_grid::evaluation::*;
use reactor_grid::grid_model::{GridModel, GridOutput};
use reactor_grid::simulator::*;
use reactor_grid::training::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Shared synthetic study

struct Study {
    layout: SensorLayout,
    datasets: BTreeMap<String, Dataset>,
}

fn study() -> &'static Study {
    static CELL: OnceLock<Study> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = ReactorParams::canonical();
        let g = Grid::synthetic(&p);
        let datasets = Scenario::standard_set(1, 2)
            .into_iter()
            .map(|sc| {
                let sol = simulate_cycle(&g, &p, &sc).expect("canonical cycle simulates");
                (sc.name.clone(), Dataset::from_solution(&sol, &g, &p, &sc).unwrap())
            })
            .collect();
        Study {
            layout: make_default_layout(DEFAULT_N_Z).unwrap(),
            datasets,
        }
    })
}

fn train_data() -> TrainData {
    let s = study();
    TrainData::from_dataset(&s.datasets["train"], &s.layout).unwrap()
}

struct Selected {
    model: Model,
    elapsed: Duration,
}

fn sweep(v: Variant) -> Selected {
    let data = train_data();
    let start = Instant::now();
    let base = TrainSchedule::for_variant(v, 1);
    let sw = train_seeds(v, &data, &base, &[1, 2, 3, 4, 5], &v.default_loss()).unwrap();
    Selected {
        model: sw.runs[sw.selected].model.clone(),
        elapsed: start.elapsed(),
    }
}

fn pde_selected() -> &'static Selected {
    static CELL: OnceLock<Selected> = OnceLock::new();
    CELL.get_or_init(|| sweep(Variant::PdeParam))
}

fn gru_selected() -> &'static Selected {
    static CELL: OnceLock<Selected> = OnceLock::new();
    CELL.get_or_init(|| sweep(Variant::Gru))
}

fn report(v: Variant, m: &Model, ds: &Dataset, splits: &[Split]) -> MetricReport {
    let pred = m.predict(&ds.grid().unwrap()).unwrap();
    MetricReport::compute(v.name(), None, &ds.meta.name, &pred, &ds.truth().unwrap(), &study().layout, splits).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

fn toy_grid() -> Grid {
    let mut g = Grid::uniform(5, 5, 0.2, 1.0, (0.1, 1.0, 1.0), 1.0);
    for j in 0..5 {
        g.inlet_xa[j] = 0.1 * (1.0 + 0.03 * j as f64);
        g.inlet_xp[j] = 1.0 - 0.04 * j as f64;
        g.velocity[j] = 1.0 + 0.1 * (j % 2) as f64;
    }
    g
}

fn toy_data(g: Grid, k: &[f64; 8], levels: Vec<usize>) -> TrainData {
    let truth = GridModel::from_pde(&PdeCellParams::from_k(k).unwrap()).forward(&g).unwrap();
    let n_t = g.n_t;
    let values = (0..n_t)
        .flat_map(|j| levels.iter().map(move |&z| (j, z)))
        .map(|(j, z)| truth.t.get(j, z))
        .collect();
    let val2 = SensorReadings::new(levels.clone(), n_t, (0..n_t * levels.len()).map(|_| 0.0).collect()).ok();
    let mut d = TrainData {
        grid: g,
        train: SensorReadings::new(levels, n_t, values).unwrap(),
        val2,
    };
    d.val2 = Some(d.train.clone());
    d
}

fn gradient_error(model: &Model, data: &TrainData, cfg: &LossConfig) -> f64 {
    const H: f64 = 1e-6;
    let (_, grad) = model.loss_and_grad(data, cfg).unwrap();
    let base = model.params().flat();
    let mut probe = model.clone();
    let mut x = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut at = |v: f64| {
            x[i] = v;
            probe.params_mut().set_flat(&x).unwrap();
            probe.loss(data, cfg).unwrap()
        };
        let numeric = (at(base[i] + H) - at(base[i] - H)) / (2.0 * H);
        x[i] = base[i];
        worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(1.0));
    }
    worst
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let data = toy_data(toy_grid(), &[0.6, 0.5, 0.4, 0.3, 0.2, 0.4, 1.5, 1.0], vec![0, 2, 4]);
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for v in Variant::ALL {
        let m = Model::init(v, &data, 8, 11).unwrap();
        let cfg = LossConfig { t_prime: 3, ..v.default_loss() };
        let e = gradient_error(&m, &data, &cfg);
        worst = worst.max(e);
        parts.push(format!("{v} {e:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{}; {secs:.1}s", parts.join(", "));
    ensure(worst < 1e-4 && secs < 30.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 2. Simulator physics

fn criterion_2() -> Check {
    let truth = study().datasets["train"].truth().unwrap();
    let th = &truth.theta;
    for z in 0..th.n_z {
        ensure(th.get(0, z) == 1.0, || format!("theta(z={z}, t0) = {}", th.get(0, z)))?;
        let s = th.series(z);
        ensure(s.windows(2).all(|w| w[1] <= w[0]), || format!("theta increases at level {z}"))?;
    }

    let p = ReactorParams::canonical();
    let mut g = Grid::synthetic(&p);
    g.n_t = 10;
    for v in [&mut g.inlet_xa, &mut g.inlet_xp, &mut g.inlet_t, &mut g.velocity] {
        v.truncate(10);
    }
    g.theta0 = vec![0.0; g.n_z];
    let opts = SolverOptions {
        walk: InletWalk { step: 0.0, ..InletWalk::default() },
        ..SolverOptions::default()
    };
    let sol = simulate_cycle_with(&g, &p, &Scenario::training(1), &opts).map_err(|e| e.to_string())?;
    let last = sol.t.n_t - 1;
    let mut steady: f64 = 0.0;
    for z in 0..sol.t.n_z {
        steady = steady
            .max((sol.xa.get(last, z) - g.inlet_xa[0]).abs())
            .max((sol.xp.get(last, z) - g.inlet_xp[0]).abs())
            .max((sol.t.get(last, z) - g.inlet_t[0]).abs());
    }
    ensure(steady <= 1e-8, || format!("zero-rate steady state off by {steady:e}"))?;

    let end = study().datasets["train"].meta.cycle_end.unwrap_or(truth.t.n_t);
    let t = &truth.t;
    let front = |j: usize| {
        (0..t.n_z - 1)
            .max_by(|&a, &b| {
                let da = t.get(j, a + 1) - t.get(j, a);
                let db = t.get(j, b + 1) - t.get(j, b);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap()
    };
    let fronts: Vec<usize> = (0..end).map(front).collect();
    ensure(fronts.windows(2).all(|w| w[1] >= w[0]), || format!("front moves upstream: {fronts:?}"))?;
    Ok(format!(
        "theta monotone, steady-state error {steady:.1e}, front {} -> {} over {end} steps",
        fronts[0],
        fronts[end - 1]
    ))
}

// ---------------------------------------------------------------------------
// 3. Self-consistency recovery

fn criterion_3() -> Check {
    let start = Instant::now();
    let k_true = [0.63, 0.5, 0.4, 0.3, 0.2, 0.4, 1.5, 1.0];
    let mut g = Grid::uniform(5, 5, 0.2, 1.0, (0.1, 1.0, 1.0), 1.0);
    g.inlet_t = vec![1.0, 1.3, 0.9, 1.2, 1.1];
    g.inlet_xa = vec![0.1, 0.15, 0.08, 0.12, 0.1];
    g.inlet_xp = vec![1.0, 0.7, 1.2, 0.9, 1.1];
    let data = toy_data(g, &k_true, (0..5).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let k0: Vec<f64> = k_true.iter().map(|k| k * rng.random_range(-0.7f64..0.7).exp()).collect();
    let model = Model::Grid(GridModel::from_pde(&PdeCellParams::from_k(&k0).unwrap()));
    let schedule = TrainSchedule {
        phases: vec![Phase::new(30_000, 1e-2), Phase::new(30_000, 1e-3)],
        ..TrainSchedule::for_variant(Variant::PdeParam, 1)
    };
    let out = train_from(Variant::PdeParam, model, &data, &schedule, &LossConfig::default())
        .map_err(|e| e.to_string())?;
    let k = out.model.as_grid().unwrap().pde_params().unwrap().k();
    let secs = start.elapsed().as_secs_f64();
    let errs: Vec<f64> = k.iter().zip(&k_true).map(|(a, b)| (a - b).abs() / b).collect();
    let names = ["k_a", "k_p", "k_T", "k_theta", "k_1", "k_2", "k_3", "k_4"];
    let listing: Vec<String> = names.iter().zip(&errs).map(|(n, e)| format!("{n} {:.2}%", 100.0 * e)).collect();
    let detail = format!("mse {:.1e}; {}; {secs:.1}s", out.final_loss, listing.join(", "));
    let ok = out.final_loss < 1e-6 && errs.iter().all(|&e| e < 0.01) && secs < 120.0;
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 4. Synthetic end-to-end

fn criterion_4() -> Check {
    let sel = pde_selected();
    let r = report(Variant::PdeParam, &sel.model, &study().datasets["train"], &Split::ALL);
    let dt = r.nrmse_delta_t["val2"];
    let r2 = r.r2_avg.unwrap();
    let secs = sel.elapsed.as_secs_f64();
    let detail = format!("val2 dT NRMSE {dt:.3}, R2avg {r2:.3}, 5-seed sweep {secs:.0}s");
    ensure(dt <= 0.35 && r2 >= 0.90 && secs <= 600.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 5. Generalization ordering

fn criterion_5() -> Check {
    let (pde, gru) = (pde_selected(), gru_selected());
    let mut parts = Vec::new();
    let mut ok = true;
    for t in ["test2", "test3", "test4", "test5"] {
        let ds = &study().datasets[t];
        let a = report(Variant::PdeParam, &pde.model, ds, &[Split::Train]).nrmse_delta_t["train"];
        let b = report(Variant::Gru, &gru.model, ds, &[Split::Train]).nrmse_delta_t["train"];
        ok &= a < b;
        parts.push(format!("{t} {a:.2} vs {b:.2}"));
    }
    let detail = format!("pde-param vs gru dT NRMSE: {}", parts.join(", "));
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 6. Overfitting signature

fn criterion_6() -> Check {
    let data = train_data();
    let ds = &study().datasets["train"];
    let ratio = |v: Variant| {
        let out = train(v, &data, &TrainSchedule::for_variant(v, 1), &v.default_loss()).unwrap();
        let r = report(v, &out.model, ds, &Split::ALL);
        (r.nrmse_t["val1"], r.nrmse_t["val2"])
    };
    let (a1, a2) = ratio(Variant::GridGru);
    let (b1, b2) = ratio(Variant::GridGruAugm);
    let detail = format!(
        "grid-gru val1/val2 T NRMSE {a1:.3}/{a2:.3} = {:.2}x (need >= 5); with augmentation {b1:.3}/{b2:.3} = {:.2}x (need < 2)",
        a1 / a2,
        b1 / b2
    );
    ensure(a1 >= 5.0 * a2 && b1 < 2.0 * b2, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7. Metric and training examples

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn criterion_7() -> Check {
    let mut n = 0;
    let mut check = |name: &str, ok: bool| -> Result<(), String> {
        n += 1;
        ensure(ok, || format!("example failed: {name}"))
    };
    let target = [1.0, 2.0, 4.0, 7.0];
    let m = target.iter().sum::<f64>() / 4.0;
    check("nrmse perfect", close(nrmse(&target, &target).unwrap(), 0.0))?;
    check("nrmse mean predictor", close(nrmse(&[m; 4], &target).unwrap(), 1.0))?;
    check("nrmse constant target", nrmse(&[1.0, 2.0], &[3.0, 3.0]).is_err())?;
    let aff: Vec<f64> = target.iter().map(|v| 3.0 * v - 1.0).collect();
    check("pearson affine", close(pearson(&aff, &target).unwrap(), 1.0))?;
    let neg: Vec<f64> = target.iter().map(|v| -v).collect();
    check("pearson negated", close(pearson(&neg, &target).unwrap(), -1.0))?;

    let f = |k: FieldKind, c: f64| StateField::from_fn(k, 4, 3, move |j, z| c + (j as f64 * 0.7 + z as f64).sin());
    let truth = States {
        xa: f(FieldKind::Xa, 0.5),
        xp: f(FieldKind::Xp, 0.2),
        t: f(FieldKind::T, 1.0),
        theta: f(FieldKind::Theta, 0.4),
    };
    let perfect = GridOutput {
        xa: truth.xa.clone(),
        xp: truth.xp.clone(),
        t: truth.t.clone(),
        theta: Some(truth.theta.clone()),
    };
    check("r2 perfect", close(r2_avg(&perfect, &truth).unwrap(), 1.0))?;
    let mean_field = |s: &StateField| {
        let mu = s.values.iter().sum::<f64>() / s.values.len() as f64;
        StateField::from_fn(s.kind, s.n_t, s.n_z, |_, _| mu)
    };
    let flat = GridOutput {
        xa: mean_field(&truth.xa),
        xp: mean_field(&truth.xp),
        t: mean_field(&truth.t),
        theta: Some(mean_field(&truth.theta)),
    };
    check("r2 mean predictor", r2_avg(&flat, &truth).unwrap().abs() <= 1e-12)?;

    let level = StateField::from_fn(FieldKind::T, 3, 6, |j, _| j as f64);
    check("delta_t flat", delta_t(&level, &[0, 5]).unwrap()[0].iter().all(|&v| v == 0.0))?;
    let step = StateField::from_fn(FieldKind::T, 3, 6, |_, z| if z >= 3 { 1.0 } else { 0.0 });
    check("delta_t step", delta_t(&step, &[0, 5]).unwrap()[0].iter().all(|&v| close(v, 1.0)))?;

    let pred = StateField::from_fn(FieldKind::T, 2, 3, |j, z| (j * 3 + z) as f64);
    let errs = [1.0, 2.0, 3.0, 4.0];
    let vals: Vec<f64> = [0.0, 2.0, 3.0, 5.0].iter().zip(errs).map(|(v, e)| v - e).collect();
    let r = SensorReadings::new(vec![0, 2], 2, vals).unwrap();
    check("mse 7.5", close(mse_loss(&pred, &r).unwrap(), 7.5))?;

    let cfg = LossConfig::default();
    let mut xa = StateField::zeros(FieldKind::Xa, 50, 3);
    let xp = StateField::zeros(FieldKind::Xp, 50, 3);
    check("c1 zero", penalty_c1(&xa, &xp, &cfg) == 0.0)?;
    xa.set(4, 1, -2.0);
    check("c1 negative", close(penalty_c1(&xa, &xp, &cfg), 4.0))?;
    let mut out = StateField::zeros(FieldKind::Xa, 50, 3);
    out.set(0, 2, 0.1);
    out.set(46, 2, 5.0);
    check("c2 window", close(penalty_c2(&out, &xp, &cfg), 0.01))?;

    let h = AdamHyper::new(0.01);
    let mut p = vec![1.0];
    let mut s = AdamState::new(1);
    adam_step(&mut p, &[0.0], &mut s, &h).unwrap();
    check("adam zero gradient", p[0] == 1.0)?;
    let mut p = vec![0.0];
    let mut s = AdamState::new(1);
    adam_step(&mut p, &[0.3], &mut s, &h).unwrap();
    check("adam first step", (p[0] + 0.01).abs() < 1e-9)?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[augment_sensor_shift(&[20], 46, 0.25, 0.25, &mut rng)[0] + 1 - 20] += 1;
    }
    let freq = counts.map(|c| c as f64 / draws as f64);
    check(
        "shift frequencies",
        (freq[0] - 0.25).abs() < 0.01 && (freq[1] - 0.5).abs() < 0.01 && (freq[2] - 0.25).abs() < 0.01,
    )?;
    check("shift identity", augment_sensor_shift(&[0, 4, 8], 46, 0.0, 0.0, &mut rng) == vec![0, 4, 8])?;
    let clean = vec![2.0; draws];
    let noisy = augment_gaussian_noise(&clean, 2.0, 0.002, &mut rng).unwrap();
    let mu = noisy.iter().sum::<f64>() / draws as f64;
    let sd = (noisy.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / draws as f64).sqrt();
    check("noise std", (sd - 0.004).abs() < 0.02 * 0.004)?;
    check("noise off", augment_gaussian_noise(&clean[..5], 2.0, 0.0, &mut rng).unwrap() == clean[..5])?;
    Ok(format!("{n} examples"))
}

// ---------------------------------------------------------------------------
// 8. Reproducibility of the binary

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Check {
    let bin = env!("CARGO_BIN_EXE_reactor-grid");
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let cfg = root.join("config.json");
    fs::write(&cfg, r#"{"train": {"variant": "pde-param", "seeds": [1, 2]}}"#).unwrap();
    let dirs = [root.join("a"), root.join("b")];
    for d in &dirs {
        for cmd in ["simulate", "train"] {
            let o = Command::new(bin)
                .args([cmd, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(d)
                .env_remove("REACTOR_GRID_OUT")
                .output()
                .unwrap();
            ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        }
    }
    let files = files_under(&dirs[0]);
    ensure(files == files_under(&dirs[1]), || "different file sets".into())?;
    let csv = files.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")).count();
    for f in &files {
        let same = fs::read(dirs[0].join(f)).unwrap() == fs::read(dirs[1].join(f)).unwrap();
        ensure(same, || format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files ({csv} CSV) byte-identical", files.len()))
}

// ---------------------------------------------------------------------------
// 9. Sensitivity directions

fn criterion_9() -> Check {
    let model = pde_selected().model.as_grid().unwrap().clone();
    let grid = study().datasets["train"].grid().unwrap();
    let levels = &study().layout.train;
    let mut faster = BTreeMap::new();
    let mut parts = Vec::new();
    for p in Perturbation::defaults() {
        let r = sensitivity_sweep(&model, &grid, &p, levels).map_err(|e| e.to_string())?;
        let (b, q) = (r.baseline_crossing, r.perturbed_crossing);
        let f = match (b, q) {
            (Some(b), Some(q)) => q < b,
            (Some(_), None) => false,
            (None, Some(_)) => true,
            (None, None) => false,
        };
        faster.insert(p.name.clone(), f);
        let show = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or("none".into());
        parts.push(format!("{} {} -> {}", p.name, show(b), show(q)));
    }
    let detail = format!("outlet theta=0.5 crossing: {}", parts.join(", "));
    ensure(faster["xp_inlet_x1.25"] && faster["xa_inlet_x1.25"], || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("gradient correctness", criterion_1),
        ("simulator physics", criterion_2),
        ("self-consistency recovery", criterion_3),
        ("synthetic end-to-end", criterion_4),
        ("generalization ordering", criterion_5),
        ("overfitting signature", criterion_6),
        ("metric unit examples", criterion_7),
        ("reproducibility", criterion_8),
        ("sensitivity directions", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
