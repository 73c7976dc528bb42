//! The experiment pipeline: split → (optional) private synthesis →
//! (optional) fairness preprocessing → classifier → measurement, repeated
//! with independent seeds and summarized as mean (SD) per cell.
//!
//! The split is fixed per experiment (seeded by `base_seed` alone), matching
//! the zero-variance baseline columns of the result tables; every stochastic
//! stage inside a repeat draws from streams derived from
//! `(base_seed, cell, repeat)`, so summaries are bit-reproducible under any
//! parallel schedule and infeasible repeats are excluded from means but
//! counted.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use fairsynth::aim::{run_aim, AimParams, Workload};
use fairsynth::fairness::{
    apply_rw_weights, apply_tot, build_tot, compute_rw_weights, solve_and_extract_tot,
    DistortionSpec, TotConstraints, TotOutcome,
};
use fairsynth::learn::fit_logistic;
use fairsynth::metrics::{
    aod, cod, cumulative_tvd, fn_rate_balance, fp_rate_balance, ks_two_sample, ml_metrics, spd,
    MetricReport, ProtectedSpec,
};
use fairsynth::privacy::EpsDelta;
use fairsynth::rng::{derive_u64, stream};
use fairsynth::tabular::{train_test_split, Dataset};
use fairsynth::Error as LibError;

use crate::config::{FairnessMethod, PipelineConfig};
use crate::ingest;

/// Classifier settings used for every experiment.
const CLASSIFIER_L2: f64 = 1e-6;
const CLASSIFIER_MAX_ITER: usize = 200;
const CLASSIFIER_TOL: f64 = 1e-8;
const LP_TOL: f64 = 1e-8;
const LP_MAX_ITER: usize = 300;

/// Fairness treatment of one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub enum FairnessCell {
    None,
    Rw { protected: String },
    Tot { eta: f64, c: Vec<f64> },
}

impl FairnessCell {
    pub fn label(&self) -> String {
        match self {
            FairnessCell::None => "none".into(),
            FairnessCell::Rw { .. } => "rw".into(),
            FairnessCell::Tot { eta, .. } => format!("eta={eta}"),
        }
    }

    fn c_values(&self) -> Option<&[f64]> {
        match self {
            FairnessCell::Tot { c, .. } => Some(c),
            _ => None,
        }
    }
}

/// One (privacy, fairness) combination of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub epsilon: Option<f64>,
    pub fairness: FairnessCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// The transform's program was infeasible for this repeat's synthetic
    /// data; the repeat carries no metrics.
    TotInfeasible,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub cell: Cell,
    pub repeat: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub report: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct CellSummary {
    pub cell: Cell,
    pub n_ok: usize,
    pub n_infeasible: usize,
    /// metric → (mean, sd, count) over ok repeats carrying the metric
    pub stats: BTreeMap<String, (f64, f64, usize)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub cells: Vec<CellSummary>,
    pub records: Vec<RunRecord>,
    /// per-repeat hard errors (not infeasibility), as printable lines
    pub errors: Vec<String>,
}

/// Everything shared by the repeats of one experiment.
pub struct ExperimentContext {
    pub train: Dataset,
    pub test: Dataset,
    pub delta: f64,
    pub distortion_rules: crate::config::FairnessConfig,
    pub base_seed: u64,
    pub aim_params: AimParams,
}

impl ExperimentContext {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        let full = ingest::ingest(config.dataset, &config.csv_path)?;
        let (train, test) = train_test_split(&full, config.train_fraction, config.base_seed)?;
        Ok(ExperimentContext {
            train,
            test,
            delta: config.privacy.as_ref().map(|p| p.delta).unwrap_or(1e-9),
            distortion_rules: config.fairness.clone(),
            base_seed: config.base_seed,
            aim_params: AimParams::default(),
        })
    }

    fn protected_specs(&self, d: &Dataset) -> Result<Vec<ProtectedSpec>> {
        let schema = d.schema();
        let names: Vec<String> = schema
            .protected_indices()
            .into_iter()
            .map(|i| schema.attr(i).name.clone())
            .collect();
        let mut specs = Vec::new();
        for n in &names {
            specs.push(ProtectedSpec::new(d, &[n.as_str()]).map_err(anyhow::Error::from)?);
        }
        if names.len() >= 2 {
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            specs.push(ProtectedSpec::new(d, &refs).map_err(anyhow::Error::from)?);
        }
        Ok(specs)
    }
}

/// The experiment grid of a config: the cross product of privacy levels
/// (no-privacy plus each ε) and fairness levels (no-fairness plus each
/// treatment), so every summary contains its own baselines.
pub fn grid_of(config: &PipelineConfig) -> Vec<Cell> {
    let mut eps_options: Vec<Option<f64>> = vec![None];
    if let Some(p) = &config.privacy {
        eps_options.extend(p.epsilons.iter().map(|&e| Some(e)));
    }
    let mut fairness_options: Vec<FairnessCell> = vec![FairnessCell::None];
    match config.fairness.method {
        FairnessMethod::None => {}
        FairnessMethod::Rw => {
            let protected = config.fairness.rw_protected.clone().unwrap_or_default();
            fairness_options.push(FairnessCell::Rw { protected });
        }
        FairnessMethod::Tot => {
            for &eta in &config.fairness.etas {
                fairness_options.push(FairnessCell::Tot { eta, c: config.fairness.c.clone() });
            }
        }
    }
    let mut cells = Vec::new();
    for f in &fairness_options {
        for e in &eps_options {
            cells.push(Cell { epsilon: *e, fairness: f.clone() });
        }
    }
    cells
}

/// Run one repeat of one cell. `master` seeds every stochastic stage.
pub fn run_one(
    ctx: &ExperimentContext,
    cell: &Cell,
    master: u64,
) -> Result<(RunStatus, Option<MetricReport>)> {
    // 1. private synthesis (or the training data itself)
    let released = match cell.epsilon {
        Some(eps) => {
            let workload = Workload::all_k_way(ctx.train.schema(), 2).map_err(anyhow::Error::from)?;
            let budget = EpsDelta::new(eps, ctx.delta).map_err(anyhow::Error::from)?;
            run_aim(
                &ctx.train,
                &workload,
                budget,
                ctx.train.n_rows(),
                &ctx.aim_params,
                derive_u64(master, &[stream::REPEAT, 1]),
            )
            .map_err(anyhow::Error::from)?
        }
        None => ctx.train.clone(),
    };

    // 2. fairness preprocessing
    let (released, classifier_data) = match &cell.fairness {
        FairnessCell::None => (released.clone(), released),
        FairnessCell::Rw { protected } => {
            let name = if protected.is_empty() {
                let schema = released.schema();
                schema.attr(schema.protected_indices()[0]).name.clone()
            } else {
                protected.clone()
            };
            let rw = compute_rw_weights(&released, &name).map_err(anyhow::Error::from)?;
            let weighted = apply_rw_weights(&released, &rw).map_err(anyhow::Error::from)?;
            (released, weighted)
        }
        FairnessCell::Tot { eta, c } => {
            let distortion: DistortionSpec = ctx.distortion_rules.distortion_with_c(c);
            let constraints = TotConstraints::uniform(*eta).map_err(anyhow::Error::from)?;
            let (lp, problem) =
                build_tot(&released, &distortion, &constraints).map_err(anyhow::Error::from)?;
            match solve_and_extract_tot(&lp, &problem, LP_TOL, LP_MAX_ITER)
                .map_err(anyhow::Error::from)?
            {
                TotOutcome::Infeasible => return Ok((RunStatus::TotInfeasible, None)),
                TotOutcome::Feasible(map) => {
                    let transformed =
                        apply_tot(&released, &map, derive_u64(master, &[stream::REPEAT, 2]))
                            .map_err(anyhow::Error::from)?;
                    (transformed.clone(), transformed)
                }
            }
        }
    };

    // 3. measurement
    let mut report = MetricReport::default();
    for (k, key) in [(1usize, "tvd1"), (2, "tvd2"), (3, "tvd3")] {
        if k <= released.schema().len() {
            report
                .general
                .insert(key.into(), cumulative_tvd(&released, &ctx.train, k).map_err(anyhow::Error::from)?);
        }
    }
    let (ks_stat, ks_p) = ks_two_sample(&released, &ctx.train).map_err(anyhow::Error::from)?;
    report.general.insert("ks_stat".into(), ks_stat);
    report.general.insert("ks_p".into(), ks_p);

    let specs = ctx.protected_specs(&released)?;
    for spec in &specs {
        match cod(&released, spec) {
            Ok(v) => {
                report.fairness.insert(format!("cod({})", spec.label()), v);
            }
            Err(LibError::UndefinedMetric(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }

    let model = fit_logistic(&classifier_data, CLASSIFIER_L2, CLASSIFIER_MAX_ITER, CLASSIFIER_TOL)
        .map_err(anyhow::Error::from)?;
    let (labels, scores) = model.predict(&ctx.test, 0.5).map_err(anyhow::Error::from)?;
    let ml = ml_metrics(&ctx.test, &labels, &scores).map_err(anyhow::Error::from)?;
    report.ml.insert("accuracy".into(), ml.accuracy);
    report.ml.insert("f1".into(), ml.f1);
    report.ml.insert("tp_rate".into(), ml.tp_rate);
    report.ml.insert("tn_rate".into(), ml.tn_rate);
    report.ml.insert("fp_rate".into(), ml.fp_rate);
    report.ml.insert("fn_rate".into(), ml.fn_rate);
    if let Some(auc) = ml.auc {
        report.ml.insert("auc".into(), auc);
    }

    let test_specs = ctx.protected_specs(&ctx.test)?;
    for spec in &test_specs {
        let mut put = |name: &str, value: fairsynth::Result<f64>| -> Result<()> {
            match value {
                Ok(v) => {
                    report.fairness.insert(format!("{name}({})", spec.label()), v);
                    Ok(())
                }
                Err(LibError::UndefinedMetric(_)) => Ok(()),
                Err(e) => Err(e.into()),
            }
        };
        put("spd", spd(&ctx.test, &labels, spec))?;
        put("aod", aod(&ctx.test, &labels, spec))?;
        put("fn_balance", fn_rate_balance(&ctx.test, &labels, spec))?;
        put("fp_balance", fp_rate_balance(&ctx.test, &labels, spec))?;
    }
    Ok((RunStatus::Ok, Some(report)))
}

fn summarize(cell: &Cell, records: &[RunRecord]) -> CellSummary {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut n_ok = 0;
    let mut n_infeasible = 0;
    for r in records {
        match r.status {
            RunStatus::Ok => {
                n_ok += 1;
                if let Some(rep) = &r.report {
                    for (k, v) in rep.entries() {
                        values.entry(k).or_default().push(v);
                    }
                }
            }
            RunStatus::TotInfeasible => n_infeasible += 1,
        }
    }
    let stats = values
        .into_iter()
        .map(|(k, vs)| {
            let n = vs.len();
            let mean = vs.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
            } else {
                0.0
            };
            (k, (mean, sd, n))
        })
        .collect();
    CellSummary { cell: cell.clone(), n_ok, n_infeasible, stats }
}

/// Run a list of cells for `repeats` repeats each, in parallel.
pub fn run_cells(ctx: &ExperimentContext, cells: &[Cell], repeats: usize) -> ExperimentOutput {
    let mut jobs: Vec<(usize, usize, u64)> = Vec::new();
    for (ci, _) in cells.iter().enumerate() {
        for r in 0..repeats {
            // one master seed per (cell, repeat), independent of scheduling
            let master = derive_u64(ctx.base_seed, &[stream::REPEAT, ci as u64, r as u64]);
            jobs.push((ci, r, master));
        }
    }
    let results: Vec<(usize, usize, u64, Result<(RunStatus, Option<MetricReport>)>)> = jobs
        .par_iter()
        .map(|&(ci, r, master)| (ci, r, master, run_one(ctx, &cells[ci], master)))
        .collect();

    let mut records: Vec<RunRecord> = Vec::new();
    let mut errors = Vec::new();
    for (ci, r, master, result) in results {
        match result {
            Ok((status, report)) => records.push(RunRecord {
                cell: cells[ci].clone(),
                repeat: r,
                seed: master,
                status,
                report,
            }),
            Err(e) => errors.push(format!(
                "cell (epsilon={:?}, fairness={}) repeat {}: {e:#}",
                cells[ci].epsilon,
                cells[ci].fairness.label(),
                r
            )),
        }
    }
    records.sort_by_key(|r| (cell_index(cells, &r.cell), r.repeat));
    let summaries = cells
        .iter()
        .map(|cell| {
            let cell_records: Vec<RunRecord> =
                records.iter().filter(|r| &r.cell == cell).cloned().collect();
            summarize(cell, &cell_records)
        })
        .collect();
    ExperimentOutput { cells: summaries, records, errors }
}

fn cell_index(cells: &[Cell], cell: &Cell) -> usize {
    cells.iter().position(|c| c == cell).unwrap_or(usize::MAX)
}

/// The main experiment: the full grid of a config.
pub fn run_pipeline(config: &PipelineConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let ctx = ExperimentContext::from_config(config)?;
    let cells = grid_of(config);
    Ok(run_cells(&ctx, &cells, config.repeats))
}

/// The c-sensitivity sweep: ε fixed, grid over η and (c1, c2, c3).
pub fn run_sensitivity(config: &PipelineConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let Some(s) = &config.sensitivity else {
        bail!("config has no [sensitivity] section");
    };
    if config.fairness.method != FairnessMethod::Tot {
        bail!("the sensitivity sweep needs the transform fairness method");
    }
    let ctx = ExperimentContext::from_config(config)?;
    let mut cells = Vec::new();
    for &eta in &s.etas {
        for &c1 in &s.c1 {
            for &c2 in &s.c2 {
                for &c3 in &s.c3 {
                    cells.push(Cell {
                        epsilon: Some(s.epsilon),
                        fairness: FairnessCell::Tot { eta, c: vec![c1, c2, c3] },
                    });
                }
            }
        }
    }
    Ok(run_cells(&ctx, &cells, config.repeats))
}

#[derive(Debug, Clone)]
pub struct TimingRow {
    pub n: usize,
    pub features: String,
    pub n_attrs: usize,
    pub mean_seconds: f64,
    pub sd_seconds: f64,
}

/// Wall-clock scaling of synthetic data generation (synthesis plus
/// transform) across sample sizes and attribute subsets.
pub fn run_timing(config: &PipelineConfig) -> Result<Vec<TimingRow>> {
    config.validate()?;
    let Some(t) = &config.timing else {
        bail!("config has no [timing] section");
    };
    let full = ingest::ingest(config.dataset, &config.csv_path)?;
    let mut rows = Vec::new();
    for feature_set in &t.feature_sets {
        let mut keep = Vec::new();
        for name in feature_set {
            keep.push(full.schema().attr_index(name).map_err(anyhow::Error::from)?);
        }
        let projected = full.project(&keep).map_err(anyhow::Error::from)?;
        for &n in &t.sizes {
            if n > projected.n_rows() {
                bail!("timing size {n} exceeds the dataset ({} rows)", projected.n_rows());
            }
            let mut times = Vec::with_capacity(t.repeats);
            for r in 0..t.repeats {
                let master = derive_u64(config.base_seed, &[stream::TIMING, rows.len() as u64, r as u64]);
                // seeded subsample, original order
                let subset = seeded_subsample(&projected, n, master);
                let started = Instant::now();
                let workload =
                    Workload::all_k_way(subset.schema(), 2).map_err(anyhow::Error::from)?;
                let budget = EpsDelta::new(t.epsilon, 1e-9).map_err(anyhow::Error::from)?;
                let synthetic = run_aim(
                    &subset,
                    &workload,
                    budget,
                    subset.n_rows(),
                    &AimParams::default(),
                    derive_u64(master, &[1]),
                )
                .map_err(anyhow::Error::from)?;
                // keep only the distortion rules whose attribute survived
                // the projection
                let mut distortion = config.fairness.distortion();
                distortion.rules.retain(|r| subset.schema().attr_index(r.attr()).is_ok());
                let constraints =
                    TotConstraints::uniform(t.eta).map_err(anyhow::Error::from)?;
                let (lp, problem) =
                    build_tot(&synthetic, &distortion, &constraints).map_err(anyhow::Error::from)?;
                if let TotOutcome::Feasible(map) =
                    solve_and_extract_tot(&lp, &problem, LP_TOL, LP_MAX_ITER)
                        .map_err(anyhow::Error::from)?
                {
                    let _ = apply_tot(&synthetic, &map, derive_u64(master, &[2]))
                        .map_err(anyhow::Error::from)?;
                }
                times.push(started.elapsed().as_secs_f64());
            }
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            let sd = if times.len() > 1 {
                (times.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (times.len() as f64 - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            rows.push(TimingRow {
                n,
                features: feature_set.join("+"),
                n_attrs: feature_set.len(),
                mean_seconds: mean,
                sd_seconds: sd,
            });
        }
    }
    Ok(rows)
}

fn seeded_subsample(d: &Dataset, n: usize, seed: u64) -> Dataset {
    use rand::Rng;
    if n >= d.n_rows() {
        return d.clone();
    }
    let mut idx: Vec<usize> = (0..d.n_rows()).collect();
    let mut rng = fairsynth::rng::derive_rng(seed, &[stream::SAMPLE]);
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..n].to_vec();
    chosen.sort_unstable();
    d.select_rows(&chosen)
}

/// Write `summary.csv` (one row per cell, mean and SD columns per metric)
/// and `long.csv` (one row per repeat × metric) under `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    // union of metric keys, stable order
    let mut metric_keys: Vec<String> = Vec::new();
    for cell in &output.cells {
        for k in cell.stats.keys() {
            if !metric_keys.contains(k) {
                metric_keys.push(k.clone());
            }
        }
    }
    metric_keys.sort();

    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)
        .with_context(|| format!("creating {}", summary_path.display()))?;
    let mut header = vec![
        "epsilon".to_string(),
        "fairness".to_string(),
        "eta".to_string(),
        "c1".to_string(),
        "c2".to_string(),
        "c3".to_string(),
        "n_ok".to_string(),
        "n_infeasible".to_string(),
    ];
    for k in &metric_keys {
        header.push(format!("{k}_mean"));
        header.push(format!("{k}_sd"));
    }
    w.write_record(&header)?;
    for cell in &output.cells {
        let mut row = vec![
            cell.cell.epsilon.map(|e| e.to_string()).unwrap_or_default(),
            cell.cell.fairness.label(),
            match &cell.cell.fairness {
                FairnessCell::Tot { eta, .. } => eta.to_string(),
                _ => String::new(),
            },
        ];
        let cs = cell.cell.fairness.c_values();
        for i in 0..3 {
            row.push(cs.and_then(|c| c.get(i)).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(cell.n_ok.to_string());
        row.push(cell.n_infeasible.to_string());
        for k in &metric_keys {
            match cell.stats.get(k) {
                Some((mean, sd, _)) => {
                    row.push(format!("{mean}"));
                    row.push(format!("{sd}"));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let long_path = dir.join("long.csv");
    let mut w = csv::Writer::from_path(&long_path)
        .with_context(|| format!("creating {}", long_path.display()))?;
    w.write_record(["epsilon", "fairness", "repeat", "seed", "status", "metric", "value"])?;
    for r in &output.records {
        let eps = r.cell.epsilon.map(|e| e.to_string()).unwrap_or_default();
        let fairness = r.cell.fairness.label();
        match (&r.status, &r.report) {
            (RunStatus::Ok, Some(report)) => {
                for (k, v) in report.entries() {
                    w.write_record([
                        eps.as_str(),
                        fairness.as_str(),
                        &r.repeat.to_string(),
                        &r.seed.to_string(),
                        "ok",
                        &k,
                        &v.to_string(),
                    ])?;
                }
            }
            _ => {
                w.write_record([
                    eps.as_str(),
                    fairness.as_str(),
                    &r.repeat.to_string(),
                    &r.seed.to_string(),
                    "tot-infeasible",
                    "",
                    "",
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the timing table as CSV.
pub fn write_timing(rows: &[TimingRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("timing.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "features", "n_attrs", "mean_seconds", "sd_seconds"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.features.clone(),
            r.n_attrs.to_string(),
            r.mean_seconds.to_string(),
            r.sd_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
