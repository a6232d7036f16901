//! The five pipeline stages. Each reads from and writes to the output tree:
//!
//! ```text
//! <out>/raw/<well>.csv, <well>.truth.toml      synth
//! <out>/samples/<well>.csv, <out>/squash_report.csv   squash
//! <out>/models/<kind>/<well>.json, .history.csv, failures.csv
//! <out>/eval/metrics.csv, summary.csv, cdp_<kind>.csv, boxplot_<kind>.csv,
//!            missing.csv, predictions/<kind>/<well>.csv
//! <out>/report.txt
//! ```
//!
//! Work is parallel across wells (and kinds); results are gathered in a
//! fixed order, so the tree is byte-identical for a given config and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vfm_core::estimation::train_well;
use vfm_core::metrics::{MetricReport, WellMetrics};
use vfm_core::model::{ModelAssembly, ModelKind, ModelOptions};
use vfm_core::pipeline::{preprocess, RejectRule};
use vfm_core::synth::{synth_well, well_id, WellTruth};

use crate::artifact::ModelArtifact;
use crate::config::RunConfig;
use crate::csvio;
use crate::error::{AppError, Result};

/// Which wells a command touches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum WellSelection {
    #[default]
    All,
    /// Well ids such as `well_03`.
    Ids(Vec<String>),
}

impl WellSelection {
    /// `all`, or a comma list of 1-based numbers and/or well ids.
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(WellSelection::All);
        }
        let mut ids = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.parse::<usize>() {
                Ok(0) => return Err(AppError::Usage("well numbers start at 1".into())),
                Ok(n) => ids.push(well_id(n - 1)),
                Err(_) => ids.push(tok.to_string()),
            }
        }
        if ids.is_empty() {
            return Err(AppError::Usage(format!("empty well list `{s}`")));
        }
        ids.sort();
        ids.dedup();
        Ok(WellSelection::Ids(ids))
    }

    fn keeps(&self, id: &str) -> bool {
        match self {
            WellSelection::All => true,
            WellSelection::Ids(ids) => ids.iter().any(|i| i == id),
        }
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub wells: WellSelection,
    pub kinds: Vec<ModelKind>,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf, wells: WellSelection, kinds: Vec<ModelKind>) -> Self {
        Context {
            cfg,
            out,
            wells,
            kinds,
        }
    }

    fn raw_dir(&self) -> PathBuf {
        self.cfg.paths.raw.clone().unwrap_or_else(|| self.out.join("raw"))
    }

    fn dir(&self, parts: &[&str]) -> Result<PathBuf> {
        let mut p = self.out.clone();
        for part in parts {
            p.push(part);
        }
        fs::create_dir_all(&p).map_err(|e| AppError::io(&p, e))?;
        Ok(p)
    }
}

/// `(id, path)` of `<dir>/*<suffix>` in name order, restricted to the
/// selection.
fn well_files(dir: &Path, suffix: &str, sel: &WellSelection) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| AppError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name.strip_suffix(suffix) {
            if !id.contains('.') && sel.keeps(id) {
                out.push((id.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    if let WellSelection::Ids(ids) = sel {
        if let Some(missing) = ids.iter().find(|id| !out.iter().any(|(o, _)| o == *id)) {
            return Err(AppError::Usage(format!("no `{missing}{suffix}` in {}", dir.display())));
        }
    }
    Ok(out)
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Training seed of one (kind, well) unit.
pub fn unit_seed(run_seed: u64, kind: ModelKind, well: &str) -> u64 {
    run_seed ^ fnv(kind.tag()).rotate_left(17) ^ fnv(well)
}

/// Generate raw well files and ground-truth sidecars. Nothing is written
/// unless every selected well generates.
pub fn cmd_synth(ctx: &Context) -> Result<String> {
    let spec = &ctx.cfg.synth;
    spec.validate().map_err(|e| AppError::model("synth spec", e))?;
    let indices: Vec<usize> = match &ctx.wells {
        WellSelection::All => (0..spec.wells).collect(),
        WellSelection::Ids(ids) => ids
            .iter()
            .map(|id| {
                (0..spec.wells)
                    .find(|&i| well_id(i) == *id)
                    .ok_or_else(|| AppError::Usage(format!("`{id}` is not one of the {} synthetic wells", spec.wells)))
            })
            .collect::<Result<_>>()?,
    };
    let wells = indices
        .par_iter()
        .map(|&i| synth_well(spec, ctx.cfg.seed, i).map_err(|e| AppError::model(well_id(i), e)))
        .collect::<Result<Vec<_>>>()?;
    let truths = wells
        .iter()
        .map(|w| toml::to_string(&w.truth).map_err(|e| AppError::format(&w.truth.well_id, e)))
        .collect::<Result<Vec<_>>>()?;

    let dir = ctx.raw_dir();
    fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    let mut summary = String::new();
    for (w, truth) in wells.iter().zip(&truths) {
        let id = &w.truth.well_id;
        csvio::write_raw(&dir.join(format!("{id}.csv")), &w.records)?;
        csvio::write_text(&dir.join(format!("{id}.truth.toml")), truth)?;
        let _ = writeln!(summary, "{id}: {} operating points, {} records", w.truth.points, w.records.len());
    }
    Ok(summary)
}

pub fn read_truth(path: &Path) -> Result<WellTruth> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    toml::from_str(&text).map_err(|e| AppError::format(path, e))
}

/// Squash, clean, attach fractions and split every raw well file.
pub fn cmd_squash(ctx: &Context) -> Result<String> {
    let files = well_files(&ctx.raw_dir(), ".csv", &ctx.wells)?;
    if files.is_empty() {
        return Err(AppError::Usage(format!("no raw well files in {}", ctx.raw_dir().display())));
    }
    let out_dir = ctx.dir(&["samples"])?;
    let results: Vec<(String, Result<Vec<String>>)> = files
        .par_iter()
        .map(|(id, path)| {
            let run = || -> Result<Vec<String>> {
                let records = csvio::read_raw(path)?;
                let (data, report) = preprocess(id, &records, &ctx.cfg.pipeline, &ctx.cfg.physics)
                    .map_err(|e| AppError::model(id.clone(), e))?;
                csvio::write_samples(&out_dir.join(format!("{id}.csv")), &data)?;
                let mut row = vec![
                    id.clone(),
                    report.raw_records.to_string(),
                    report.transient_records.to_string(),
                    report.squashed.to_string(),
                    data.samples.len().to_string(),
                    report.rejections.clamped.to_string(),
                ];
                row.extend(RejectRule::ALL.iter().map(|r| report.rejections.count(*r).to_string()));
                row.push(format!("{}/{}/{}", data.fit().len(), data.validation().len(), data.test().len()));
                Ok(row)
            };
            (id.clone(), run())
        })
        .collect();

    let mut header = vec!["well", "raw_records", "transient_records", "squashed", "kept", "clamped"];
    header.extend(RejectRule::ALL.iter().map(|r| r.tag()));
    header.push("fit/validation/test");
    let mut rows = Vec::new();
    let mut summary = String::new();
    let mut failed = 0;
    for (id, res) in &results {
        match res {
            Ok(row) => {
                let _ = writeln!(summary, "{id}: {} samples kept, split {}", row[4], row[row.len() - 1]);
                rows.push(row.clone());
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(summary, "{id}: FAILED {e}");
            }
        }
    }
    csvio::write_table(&ctx.out.join("squash_report.csv"), &header, &rows)?;
    if failed > 0 {
        eprint!("{summary}");
        return Err(AppError::Partial {
            failed,
            total: results.len(),
            diverged: false,
        });
    }
    Ok(summary)
}

struct TrainOutcome {
    json: String,
    history: String,
    line: String,
}

fn train_unit(ctx: &Context, kind: ModelKind, id: &str, path: &Path) -> Result<TrainOutcome> {
    let data = csvio::read_samples(path, id)?;
    let mut tc = ctx.cfg.train_config(kind);
    tc.seed = unit_seed(ctx.cfg.seed, kind, id);
    let opts = ModelOptions {
        constants: ctx.cfg.physics.clone(),
        priors: ctx.cfg.model.priors,
        cv_points: ctx.cfg.model.cv_points.clone(),
        width: tc.width,
        depth: tc.depth,
        seed: tc.seed,
        fractions: ctx.cfg.model.fractions,
        ..ModelOptions::new(kind)
    };
    let ctx_err = |e| AppError::model(format!("{kind}/{id}"), e);
    let mut model = ModelAssembly::new(&opts, data.train()).map_err(ctx_err)?;
    let history = train_well(&mut model, &data, &tc).map_err(ctx_err)?;
    let mut artifact = ModelArtifact::new(id, tc, model);
    artifact.epochs_run = history.len();
    artifact.final_train_loss = history.epochs.last().map(|e| e.train_loss);
    artifact.final_val_rmse = history.epochs.last().map(|e| e.val_rmse);
    artifact.overfit_flag = history.overfit_flag();
    let mut line = format!("{kind}/{id}: {} epochs", history.len());
    if let Some(e) = history.epochs.last() {
        let _ = write!(line, ", validation RMSE {:.4}", e.val_rmse);
    }
    Ok(TrainOutcome {
        json: artifact.to_json()?,
        history: history.to_csv(),
        line,
    })
}

/// Train one model per selected (kind, well).
pub fn cmd_train(ctx: &Context) -> Result<String> {
    ctx.cfg.validate()?;
    let samples_dir = ctx.out.join("samples");
    let files = well_files(&samples_dir, ".csv", &ctx.wells)?;
    if files.is_empty() {
        return Err(AppError::Usage(format!("no sample files in {}; run squash first", samples_dir.display())));
    }
    let units: Vec<(ModelKind, &String, &PathBuf)> = ctx
        .kinds
        .iter()
        .flat_map(|&k| files.iter().map(move |(id, p)| (k, id, p)))
        .collect();
    let results: Vec<Result<TrainOutcome>> = units.par_iter().map(|&(k, id, p)| train_unit(ctx, k, id, p)).collect();

    let mut summary = String::new();
    let mut failures: BTreeMap<ModelKind, Vec<Vec<String>>> = BTreeMap::new();
    let (mut failed, mut diverged) = (0, false);
    for kind in &ctx.kinds {
        ctx.dir(&["models", kind.tag()])?;
        failures.entry(*kind).or_default();
    }
    for ((kind, id, _), res) in units.iter().zip(results) {
        let dir = ctx.out.join("models").join(kind.tag());
        match res {
            Ok(o) => {
                csvio::write_text(&dir.join(format!("{id}.json")), &o.json)?;
                csvio::write_text(&dir.join(format!("{id}.history.csv")), &o.history)?;
                let _ = writeln!(summary, "{}", o.line);
            }
            Err(e) => {
                failed += 1;
                diverged |= e.exit_code() == 3;
                let _ = writeln!(summary, "{kind}/{id}: FAILED {e}");
                failures.get_mut(kind).expect("kind registered").push(vec![id.to_string(), e.to_string()]);
            }
        }
    }
    for (kind, rows) in &failures {
        let path = ctx.out.join("models").join(kind.tag()).join("failures.csv");
        csvio::write_table(&path, &["well", "error"], rows)?;
    }
    if failed > 0 {
        eprint!("{summary}");
        return Err(AppError::Partial {
            failed,
            total: units.len(),
            diverged,
        });
    }
    Ok(summary)
}

/// Metrics, measured and estimated test rates, and sample start times.
type WellEval = (WellMetrics, Vec<f64>, Vec<f64>, Vec<i64>);
type KindResults = BTreeMap<ModelKind, Vec<(WellMetrics, Vec<f64>, Vec<f64>)>>;

fn eval_unit(ctx: &Context, kind: ModelKind, id: &str, samples: &Path) -> Result<WellEval> {
    let artifact_path = ctx.out.join("models").join(kind.tag()).join(format!("{id}.json"));
    if !artifact_path.exists() {
        return Err(AppError::Usage("missing artifact".into()));
    }
    let artifact = ModelArtifact::load(&artifact_path)?;
    let data = csvio::read_samples(samples, id)?;
    let test = data.test();
    let y: Vec<f64> = test.iter().map(|s| s.q_o).collect();
    let y_hat = artifact.model.predict(test).map_err(|e| AppError::model(format!("{kind}/{id}"), e))?;
    let m = WellMetrics::compute(id, "test", &y, &y_hat).map_err(|e| AppError::model(format!("{kind}/{id}"), e))?;
    Ok((m, y, y_hat, test.iter().map(|s| s.start).collect()))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Test-split metrics per (kind, well) and aggregate tables per kind.
pub fn cmd_eval(ctx: &Context) -> Result<String> {
    let samples_dir = ctx.out.join("samples");
    let files = well_files(&samples_dir, ".csv", &ctx.wells)?;
    let eval_dir = ctx.dir(&["eval"])?;
    let units: Vec<(ModelKind, &String, &PathBuf)> = ctx
        .kinds
        .iter()
        .flat_map(|&k| files.iter().map(move |(id, p)| (k, id, p)))
        .collect();
    let results: Vec<Result<WellEval>> = units.par_iter().map(|&(k, id, p)| eval_unit(ctx, k, id, p)).collect();

    let mut per_kind = KindResults::new();
    let mut metric_rows = Vec::new();
    let mut missing = Vec::new();
    for ((kind, id, _), res) in units.iter().zip(results) {
        match res {
            Ok((m, y, y_hat, starts)) => {
                let dir = ctx.dir(&["eval", "predictions", kind.tag()])?;
                let rows: Vec<Vec<String>> = starts
                    .iter()
                    .zip(&y)
                    .zip(&y_hat)
                    .map(|((t, a), b)| vec![t.to_string(), a.to_string(), b.to_string()])
                    .collect();
                csvio::write_table(&dir.join(format!("{id}.csv")), &["start", "measured", "estimated"], &rows)?;
                metric_rows.push(vec![
                    kind.tag().into(),
                    m.well.clone(),
                    m.split.clone(),
                    m.n.to_string(),
                    m.rmse.to_string(),
                    m.mae.to_string(),
                ]);
                per_kind.entry(*kind).or_default().push((m, y, y_hat));
            }
            Err(e) => missing.push(vec![kind.tag().into(), id.to_string(), e.to_string()]),
        }
    }
    csvio::write_table(&eval_dir.join("metrics.csv"), &["kind", "well", "split", "n", "rmse", "mae"], &metric_rows)?;
    csvio::write_table(&eval_dir.join("missing.csv"), &["kind", "well", "reason"], &missing)?;

    let mut summary_rows = Vec::new();
    let mut summary = String::new();
    for (kind, wells) in &per_kind {
        let report = MetricReport::aggregate(wells, ctx.cfg.evaluation.max_dev)
            .map_err(|e| AppError::model(format!("{kind} aggregate"), e))?;
        let cdp_rows: Vec<Vec<String>> = report.cdp.points.iter().map(|(d, p)| vec![d.to_string(), p.to_string()]).collect();
        csvio::write_table(&eval_dir.join(format!("cdp_{}.csv", kind.tag())), &["deviation", "percentage"], &cdp_rows)?;
        let box_rows: Vec<Vec<String>> = report
            .wells
            .iter()
            .flat_map(|w| {
                [
                    vec![w.well.clone(), "rmse".into(), w.rmse.to_string()],
                    vec![w.well.clone(), "mae".into(), w.mae.to_string()],
                ]
            })
            .collect();
        csvio::write_table(&eval_dir.join(format!("boxplot_{}.csv", kind.tag())), &["well", "stat", "value"], &box_rows)?;
        for (metric, b, mean) in [("rmse", &report.rmse_box, report.mean_rmse), ("mae", &report.mae_box, report.mean_mae)] {
            summary_rows.push(vec![
                kind.tag().into(),
                metric.into(),
                mean.to_string(),
                b.median.to_string(),
                b.q1.to_string(),
                b.q3.to_string(),
                b.whisker_low.to_string(),
                b.whisker_high.to_string(),
                fmt_list(&b.outliers),
            ]);
        }
        let _ = writeln!(
            summary,
            "{kind}: {} wells, mean test RMSE {:.4}, mean MAE {:.4}, within 20%: {:.2}%",
            report.wells.len(),
            report.mean_rmse,
            report.mean_mae,
            report.cdp.at(20).unwrap_or(f64::NAN)
        );
    }
    csvio::write_table(
        &eval_dir.join("summary.csv"),
        &["kind", "metric", "mean", "median", "q1", "q3", "whisker_low", "whisker_high", "outliers"],
        &summary_rows,
    )?;
    for m in &missing {
        let _ = writeln!(summary, "{}/{}: not evaluated ({})", m[0], m[1], m[2]);
    }
    Ok(summary)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| AppError::format(path, e))?;
    rdr.records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| AppError::format(path, e)))
        .collect()
}

/// Human-readable summary of the evaluated run, also written to
/// `<out>/report.txt`.
pub fn cmd_report(ctx: &Context) -> Result<String> {
    let eval_dir = ctx.out.join("eval");
    let summary = read_rows(&eval_dir.join("summary.csv"))?;
    let metrics = read_rows(&eval_dir.join("metrics.csv"))?;
    let missing = read_rows(&eval_dir.join("missing.csv"))?;
    let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);

    let mut r = String::new();
    let _ = writeln!(r, "Virtual flow meter run report");
    let _ = writeln!(r, "seed {}\n", ctx.cfg.seed);
    let _ = writeln!(r, "Test-split errors across wells [Sm3/h]");
    let _ = writeln!(r, "{:<5}{:<6}{:>10}{:>10}{:>10}{:>10}  outliers", "kind", "stat", "mean", "median", "q1", "q3");
    for row in &summary {
        let _ = writeln!(
            r,
            "{:<5}{:<6}{:>10.4}{:>10.4}{:>10.4}{:>10.4}  {}",
            row[0],
            row[1],
            num(&row[2]),
            num(&row[3]),
            num(&row[4]),
            num(&row[5]),
            if row[8].is_empty() { "-" } else { &row[8] }
        );
    }

    let _ = writeln!(r, "\nShare of test samples within a relative deviation [%]");
    let _ = writeln!(r, "{:<5}{:>8}{:>8}{:>8}{:>8}", "kind", "5%", "10%", "20%", "30%");
    for kind in ModelKind::ALL {
        let path = eval_dir.join(format!("cdp_{}.csv", kind.tag()));
        if !path.exists() {
            continue;
        }
        let rows = read_rows(&path)?;
        let at = |d: &str| rows.iter().find(|x| x[0] == d).map_or(f64::NAN, |x| num(&x[1]));
        let _ = writeln!(r, "{:<5}{:>8.2}{:>8.2}{:>8.2}{:>8.2}", kind.tag(), at("5"), at("10"), at("20"), at("30"));
    }

    let mut wells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for row in &metrics {
        wells.entry(row[1].clone()).or_default().insert(row[0].clone(), num(&row[4]));
    }
    let _ = writeln!(r, "\nTest RMSE per well");
    let _ = writeln!(r, "{:<10}{:>10}{:>10}{:>10}", "well", "m", "h", "dd");
    for (well, by_kind) in &wells {
        let cell = |k: &str| by_kind.get(k).map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(r, "{:<10}{:>10}{:>10}{:>10}", well, cell("m"), cell("h"), cell("dd"));
    }

    let _ = writeln!(r, "\nModels");
    for kind in ModelKind::ALL {
        let dir = ctx.out.join("models").join(kind.tag());
        if !dir.exists() {
            continue;
        }
        for (id, path) in well_files(&dir, ".json", &ctx.wells)? {
            let a = ModelArtifact::load(&path)?;
            let phys: Vec<String> = a
                .model
                .params
                .physical
                .iter()
                .map(|p| format!("{}={:.4}", p.name, p.value))
                .collect();
            let _ = write!(r, "{kind}/{id}: {} | {} epochs", a.hybridity, a.epochs_run);
            if !phys.is_empty() {
                let _ = write!(r, " | {}", phys.join(" "));
            }
            if a.overfit_flag {
                let _ = write!(r, " | overfitting trend");
            }
            for (name, v) in &a.bound_violations {
                let _ = write!(r, " | {name}={v:.4} outside bounds");
            }
            let truth = ctx.raw_dir().join(format!("{id}.truth.toml"));
            if kind == ModelKind::M && truth.exists() {
                let t = read_truth(&truth)?;
                let _ = write!(r, " | truth rho_o={} rho_w={} a={}", t.rho_o, t.rho_w, t.a);
            }
            let _ = writeln!(r);
        }
    }
    if !missing.is_empty() {
        let _ = writeln!(r, "\nNot evaluated");
        for m in &missing {
            let _ = writeln!(r, "{}/{}: {}", m[0], m[1], m[2]);
        }
    }
    csvio::write_text(&ctx.out.join("report.txt"), &r)?;
    Ok(r)
}

