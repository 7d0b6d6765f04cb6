//! The five subcommands. Each reads its inputs below `out_dir`, writes its
//! outputs there and returns the files it wrote.

use std::path::{Path, PathBuf};

use reactor_grid::cells::Checkpoint;
use reactor_grid::dataset::Dataset;
use reactor_grid::domain::{FieldKind, Grid, SensorLayout, Split, StateField};
use reactor_grid::evaluation::{delta_t, min_max_scale, sensitivity_sweep, MetricReport};
use reactor_grid::simulator::{simulate_cycle_with, SolverOptions};
use reactor_grid::training::{select_best, train as fit, LossTrend, Model, TrainData, TrainOutcome, Variant};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::files::{csv_text, field_csv, num, opt, write, write_json};
use crate::{CliError, Result};

pub fn dataset_dir(out: &Path, name: &str) -> PathBuf {
    out.join("datasets").join(name)
}

pub fn model_dir(out: &Path, v: Variant) -> PathBuf {
    out.join("models").join(v.name())
}

pub fn selected_checkpoint(out: &Path, v: Variant) -> PathBuf {
    model_dir(out, v).join("selected.json")
}

fn load_dataset(out: &Path, name: &str) -> Result<Dataset> {
    let dir = dataset_dir(out, name);
    if !dir.join(reactor_grid::dataset::META_FILE).exists() {
        return Err(CliError::Missing(format!("dataset {name} not found in {}", dir.display())));
    }
    Ok(Dataset::read_dir(&dir)?)
}

fn load_model(out: &Path, v: Variant) -> Result<Model> {
    let path = selected_checkpoint(out, v);
    if !path.exists() {
        return Err(CliError::Missing(format!(
            "no selected checkpoint for {v} at {}; run `train` first",
            path.display()
        )));
    }
    let (stored, model) = Model::from_checkpoint(&Checkpoint::load(&path)?)?;
    if stored != v {
        return Err(CliError::Config(format!("{} holds a {stored} checkpoint, expected {v}", path.display())));
    }
    Ok(model)
}

/// Simulates every configured scenario into `datasets/<name>/`.
pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let p = cfg.reactor_params()?;
    let grid = Grid::synthetic(&p);
    let opts = SolverOptions {
        refinement: cfg.simulate.refinement,
        ..SolverOptions::default()
    };
    let mut written = Vec::new();
    for sc in cfg.simulate.scenarios() {
        let sol = simulate_cycle_with(&grid, &p, &sc, &opts)?;
        let ds = Dataset::from_solution(&sol, &grid, &p, &sc)?;
        let dir = dataset_dir(&cfg.out_dir, &sc.name);
        ds.write_dir(&dir)?;
        written.push(dir);
    }
    Ok(written)
}

/// Per-seed record written next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variant: Variant,
    pub seed: u64,
    pub dataset: String,
    pub layout: SensorLayout,
    pub schedule: reactor_grid::training::TrainSchedule,
    pub loss: reactor_grid::training::LossConfig,
    pub sensor_shift_enabled: bool,
    pub iterations: usize,
    /// `None` when the run diverged.
    pub final_loss: Option<f64>,
    /// ΔT mean squared error used for model selection.
    pub selection_mse: Option<f64>,
    pub selection_metric: String,
    pub diverged: Option<String>,
    pub checkpoint: Option<String>,
    pub trend: Option<LossTrend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub selected_seed: u64,
    pub selection_metric: String,
    pub selection_mse: Vec<Option<f64>>,
    pub final_loss: Vec<Option<f64>>,
}

fn seed_dir(out: &Path, v: Variant, seed: u64) -> PathBuf {
    model_dir(out, v).join(format!("seed-{seed}"))
}

fn history_csv(history: &[f64]) -> Result<String> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), num(*l)])
        .collect();
    csv_text(&["iteration".into(), "loss".into()], &rows)
}

/// Runs the seed sweep of one variant and keeps the best run.
pub fn train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let tc = &cfg.train;
    let v = tc.variant;
    let ds = load_dataset(&cfg.out_dir, &tc.dataset)?;
    let layout = tc.layout.resolve(ds.meta.n_z)?;
    let data = TrainData::from_dataset(&ds, &layout)?;
    let loss = tc.loss();
    let base = tc.schedule();
    let metric = if v == Variant::Gru { "train ΔT MSE" } else { "val2 ΔT MSE" };
    let mut written = Vec::new();
    let mut outcomes: Vec<Option<TrainOutcome>> = Vec::new();
    let mut failures = Vec::new();
    for &seed in &tc.seeds {
        let schedule = reactor_grid::training::TrainSchedule { seed, ..base.clone() };
        let dir = seed_dir(&cfg.out_dir, v, seed);
        let result = fit(v, &data, &schedule, &loss);
        let mut m = Manifest {
            variant: v,
            seed,
            dataset: tc.dataset.clone(),
            layout: layout.clone(),
            schedule: schedule.clone(),
            loss: loss.clone(),
            sensor_shift_enabled: schedule.sensor_shift.is_some(),
            iterations: schedule.iterations(),
            final_loss: None,
            selection_mse: None,
            selection_metric: metric.into(),
            diverged: None,
            checkpoint: None,
            trend: None,
        };
        match result {
            Ok(o) => {
                let ck = dir.join("checkpoint.json");
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                o.model.to_checkpoint(v).save(&ck)?;
                let hist = dir.join("loss_history.csv");
                write(&hist, &history_csv(&o.history)?)?;
                m.final_loss = Some(o.final_loss);
                m.selection_mse = o.selection_mse;
                m.checkpoint = Some("checkpoint.json".into());
                m.trend = o.trend();
                written.extend([ck, hist]);
                outcomes.push(Some(o));
            }
            Err(e @ (reactor_grid::Error::Diverged { .. } | reactor_grid::Error::Numeric { .. })) => {
                m.diverged = Some(e.to_string());
                failures.push(e);
                outcomes.push(None);
            }
            Err(e) => return Err(e.into()),
        }
        let path = dir.join("manifest.json");
        write_json(&path, &m)?;
        written.push(path);
    }
    let ok: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].is_some()).collect();
    if ok.is_empty() {
        return Err(failures.remove(0).into());
    }
    let keys: Vec<(Option<f64>, f64)> = ok
        .iter()
        .map(|&i| {
            let o = outcomes[i].as_ref().expect("filtered");
            (o.selection_mse, o.final_loss)
        })
        .collect();
    let best = ok[select_best(&keys).expect("non-empty")];
    let chosen = outcomes[best].as_ref().expect("filtered");
    let dir = model_dir(&cfg.out_dir, v);
    let ck = selected_checkpoint(&cfg.out_dir, v);
    chosen.model.to_checkpoint(v).save(&ck)?;
    let sel = Selection {
        variant: v,
        seeds: tc.seeds.clone(),
        selected_seed: tc.seeds[best],
        selection_metric: metric.into(),
        selection_mse: outcomes.iter().map(|o| o.as_ref().and_then(|o| o.selection_mse)).collect(),
        final_loss: outcomes.iter().map(|o| o.as_ref().map(|o| o.final_loss)).collect(),
    };
    let sel_path = dir.join("selection.json");
    write_json(&sel_path, &sel)?;
    let hist = dir.join("loss_history.csv");
    write(&hist, &history_csv(&chosen.history)?)?;
    let trend = dir.join("loss_trend.json");
    write_json(&trend, &chosen.trend())?;
    written.extend([ck, sel_path, hist, trend]);
    Ok(written)
}

fn splits_for(v: Variant) -> &'static [Split] {
    if v == Variant::Gru {
        &[Split::Train]
    } else {
        &Split::ALL
    }
}

/// Scores one model on one dataset.
pub fn report(v: Variant, model: &Model, ds: &Dataset, layout: &SensorLayout, splits: &[Split]) -> Result<MetricReport> {
    let pred = model.predict(&ds.grid()?)?;
    let truth = ds.truth()?;
    Ok(MetricReport::compute(v.name(), None, &ds.meta.name, &pred, &truth, layout, splits)?)
}

/// Writes the NRMSE, R̄² and Pearson tables plus every report in long form.
pub fn evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ec = &cfg.evaluate;
    let out = &cfg.out_dir;
    let train_ds = load_dataset(out, &ec.dataset)?;
    let layout = ec.layout.resolve(train_ds.meta.n_z)?;
    let tests = ec
        .tests
        .iter()
        .map(|t| load_dataset(out, t))
        .collect::<Result<Vec<_>>>()?;

    let mut header = vec!["variant".to_string()];
    for s in MetricReport::CSV_SPLITS {
        header.push(format!("T_{s}"));
    }
    for s in MetricReport::CSV_SPLITS {
        header.push(format!("dT_{s}"));
    }
    header.extend(ec.tests.iter().map(|t| format!("dT_{t}")));
    let mut r2_header = vec!["variant".to_string(), ec.dataset.clone()];
    r2_header.extend(ec.tests.iter().cloned());
    let mut p_header = vec!["variant".to_string()];
    p_header.extend(MetricReport::CSV_SPLITS.iter().map(|s| s.to_string()));

    let (mut nrmse_rows, mut r2_rows, mut p_rows, mut long) = (vec![], vec![], vec![], vec![]);
    for &v in &ec.variants {
        let model = load_model(out, v)?;
        let base = report(v, &model, &train_ds, &layout, splits_for(v))?;
        // Test cycles are scored at the training sensors, the only levels
        // every variant predicts.
        let test_reports = tests
            .iter()
            .map(|d| report(v, &model, d, &layout, &[Split::Train]))
            .collect::<Result<Vec<_>>>()?;
        let mut row = vec![v.name().to_string()];
        for map in [&base.nrmse_t, &base.nrmse_delta_t] {
            row.extend(MetricReport::CSV_SPLITS.iter().map(|s| opt(map.get(*s).copied())));
        }
        row.extend(test_reports.iter().map(|r| opt(r.nrmse_delta_t.get("train").copied())));
        nrmse_rows.push(row);
        if base.r2_avg.is_some() {
            let mut row = vec![v.name().to_string(), opt(base.r2_avg)];
            row.extend(test_reports.iter().map(|r| opt(r.r2_avg)));
            r2_rows.push(row);
        }
        let mut row = vec![v.name().to_string()];
        row.extend(MetricReport::CSV_SPLITS.iter().map(|s| opt(base.pearson_t.get(*s).copied())));
        p_rows.push(row);
        long.push(base.csv_row());
        long.extend(test_reports.iter().map(|r| r.csv_row()));
    }
    let dir = out.join("eval");
    let files = [
        (dir.join("nrmse.csv"), csv_text(&header, &nrmse_rows)?),
        (dir.join("r2.csv"), csv_text(&r2_header, &r2_rows)?),
        (dir.join("pearson.csv"), csv_text(&p_header, &p_rows)?),
        (dir.join("reports.csv"), format!("{}\n{}\n", MetricReport::csv_header(), long.join("\n"))),
    ];
    let mut written = Vec::new();
    for (path, text) in files {
        write(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

fn delta_columns(levels: &[usize], prefix: &str) -> Vec<String> {
    levels.windows(2).map(|w| format!("{prefix}dT_{}_{}", w[1], w[0])).collect()
}

fn series_csv(levels: &[usize], columns: &[(&str, &[Vec<f64>])], n_t: usize) -> Result<String> {
    let mut header = vec!["t_index".to_string()];
    for (prefix, _) in columns {
        header.extend(delta_columns(levels, prefix));
    }
    let rows: Vec<Vec<String>> = (0..n_t)
        .map(|j| {
            let mut row = vec![j.to_string()];
            for (_, series) in columns {
                row.extend(series.iter().map(|s| num(s[j])));
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

/// Exports the four reconstructed fields, the ΔT series at the training
/// sensors and their min-max scaled plot data.
pub fn reconstruct(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let rc = &cfg.reconstruct;
    let out = &cfg.out_dir;
    let ds = load_dataset(out, &rc.dataset)?;
    let layout = rc.layout.resolve(ds.meta.n_z)?;
    let model = load_model(out, rc.variant)?;
    let grid_model = model.as_grid()?;
    let pred = grid_model.reconstruct_states(&ds.grid()?)?;
    let dir = out.join("reconstruct").join(rc.variant.name()).join(&rc.dataset);
    let mut written = Vec::new();
    let mut fields: Vec<(&str, &StateField)> = vec![("xa", &pred.xa), ("xp", &pred.xp), ("T", &pred.t)];
    if let Some(th) = &pred.theta {
        fields.push(("theta", th));
    }
    for (name, f) in fields {
        let path = dir.join(format!("{name}.csv"));
        write(&path, &field_csv(f)?)?;
        written.push(path);
    }
    let levels = &layout.train;
    let pred_dt = delta_t(&pred.t, levels)?;
    let n_t = pred.t.n_t;
    let measured = measured_t(&ds);
    let mut columns: Vec<(&str, &[Vec<f64>])> = vec![("pred_", &pred_dt)];
    let meas_dt = match &measured {
        Some(t) => Some(delta_t(t, levels)?),
        None => None,
    };
    if let Some(m) = &meas_dt {
        columns.push(("meas_", m));
    }
    let path = dir.join("deltaT.csv");
    write(&path, &series_csv(levels, &columns, n_t)?)?;
    written.push(path);

    let scale = |s: &[Vec<f64>]| s.iter().map(|x| min_max_scale(x)).collect::<Vec<_>>();
    let pred_scaled = scale(&pred_dt);
    let meas_scaled = meas_dt.as_deref().map(scale);
    let mut columns: Vec<(&str, &[Vec<f64>])> = vec![("pred_", &pred_scaled)];
    if let Some(m) = &meas_scaled {
        columns.push(("meas_", m));
    }
    let path = dir.join("deltaT_scaled.csv");
    write(&path, &series_csv(levels, &columns, n_t)?)?;
    written.push(path);
    Ok(written)
}

/// Measured temperatures when the dataset has them at every node.
fn measured_t(ds: &Dataset) -> Option<StateField> {
    let (n_t, n_z) = (ds.meta.n_t, ds.meta.n_z);
    let vals: Vec<f64> = ds.t.iter().copied().collect::<Option<_>>()?;
    Some(StateField::from_fn(FieldKind::T, n_t, n_z, |j, z| vals[j * n_z + z]))
}

/// Paired baseline and perturbed ΔT responses plus outlet deactivation
/// times for every configured perturbation.
pub fn sensitivity(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let sc = &cfg.sensitivity;
    let out = &cfg.out_dir;
    let ds = load_dataset(out, &sc.dataset)?;
    let levels = match &sc.levels {
        Some(l) => l.clone(),
        None => sc.layout.resolve(ds.meta.n_z)?.train,
    };
    if levels.len() < 2 || levels.iter().any(|&z| z >= ds.meta.n_z) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(format!(
            "sensitivity.levels: need at least two increasing levels below {}",
            ds.meta.n_z
        )));
    }
    let model = load_model(out, sc.variant)?;
    let gm = model.as_grid()?;
    let grid = ds.grid()?;
    let dir = out.join("sensitivity").join(sc.variant.name());
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for p in &sc.perturbations {
        let r = sensitivity_sweep(gm, &grid, p, &levels)?;
        for (tag, series) in [("baseline", &r.baseline), ("perturbed", &r.perturbed)] {
            let path = dir.join(format!("{}.{tag}.csv", p.name));
            write(&path, &series_csv(&levels, &[("", series)], grid.n_t)?)?;
            written.push(path);
        }
        let faster = match (r.baseline_crossing, r.perturbed_crossing) {
            (Some(b), Some(q)) => (q < b).to_string(),
            (Some(_), None) => "false".into(),
            (None, Some(_)) => "true".into(),
            (None, None) => String::new(),
        };
        rows.push(vec![
            p.name.clone(),
            num(p.t_inlet),
            num(p.xa_inlet),
            num(p.xp_inlet),
            opt(r.baseline_crossing),
            opt(r.perturbed_crossing),
            faster,
        ]);
    }
    let header: Vec<String> = [
        "perturbation",
        "t_inlet",
        "xa_inlet",
        "xp_inlet",
        "baseline_crossing",
        "perturbed_crossing",
        "faster_deactivation",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let path = dir.join("crossings.csv");
    write(&path, &csv_text(&header, &rows)?)?;
    written.push(path);
    Ok(written)
}
