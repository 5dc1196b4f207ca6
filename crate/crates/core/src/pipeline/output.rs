use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::PipelineRun;
use crate::report::{emit_to_path, format_sig6, Cell, Format, Table};
use crate::Result;

fn opt_float(v: Option<f64>) -> Cell {
    Cell::Float(v.unwrap_or(f64::NAN))
}

fn opt_int<N: Into<i64>>(v: Option<N>) -> Cell {
    v.map_or(Cell::Text(String::new()), |n| Cell::Int(n.into()))
}

fn joined<I: IntoIterator<Item = String>>(items: I) -> Cell {
    Cell::Text(items.into_iter().collect::<Vec<_>>().join(";"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_sig6)
}

/// Rounds to what the CSV files carry, so JSON and CSV agree.
fn sig6(x: f64) -> Value {
    format_sig6(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

fn config_cells(id: usize, run: &PipelineRun) -> Vec<Cell> {
    let c = &run.config;
    vec![
        id.into(),
        c.tau_minutes.into(),
        c.instances_per_identity.into(),
        c.epochs.into(),
        c.iterations.into(),
        c.memory.into(),
    ]
}

const CONFIG_COLUMNS: [&str; 6] = ["config_id", "tau_minutes", "K", "E", "I", "memory"];

/// One row per run.
pub fn experiments_table(runs: &[PipelineRun]) -> Table {
    let mut columns: Vec<&str> = CONFIG_COLUMNS.to_vec();
    columns.extend([
        "budget_mode",
        "metric",
        "eps",
        "min_pts",
        "num_identities",
        "k",
        "num_segments",
        "subset_sizes",
        "objectives",
        "purities",
        "deadline_ok",
        "mean_purity",
        "min_objective",
        "shortfall",
        "max_sds_s",
        "max_train_s",
        "disqualified",
        "latency_segments",
        "latency_minutes",
        "one_training_per_segment",
    ]);
    let mut t = Table::new(columns);
    for (id, run) in runs.iter().enumerate() {
        let c = &run.config;
        let segs = &run.segments;
        let purities: Vec<f64> = segs.iter().filter_map(|s| s.purity).collect();
        let mean_purity =
            (!purities.is_empty()).then(|| purities.iter().sum::<f64>() / purities.len() as f64);
        let min_objective = segs.iter().filter_map(|s| s.objective).reduce(f64::min);
        let shortfall: u64 = segs
            .iter()
            .flat_map(|s| &s.cameras)
            .map(|c| c.shortfall)
            .sum();
        let mut row = config_cells(id, run);
        row.extend([
            c.budget_mode.to_string().into(),
            c.metric.to_string().into(),
            c.dbscan.eps.into(),
            c.dbscan.min_pts.into(),
            c.num_identities.into(),
            c.k().into(),
            segs.len().into(),
            joined(segs.iter().map(|s| s.subset_size.to_string())),
            joined(segs.iter().map(|s| fmt_opt(s.objective))),
            joined(segs.iter().map(|s| fmt_opt(s.purity))),
            joined(
                run.verdict
                    .per_segment
                    .iter()
                    .map(|ok| u8::from(*ok).to_string()),
            ),
            opt_float(mean_purity),
            opt_float(min_objective),
            shortfall.into(),
            segs.iter().map(|s| s.sds_s).fold(0.0, f64::max).into(),
            segs.iter().map(|s| s.train_s).fold(0.0, f64::max).into(),
            run.disqualified().into(),
            opt_int(run.latency.map(|l| l.segments as i64)),
            run.latency
                .map_or(Cell::Text(String::new()), |l| l.minutes.into()),
            run.throughput.one_per_segment.into(),
        ]);
        t.push(row);
    }
    t
}

/// One row per (run, segment).
pub fn segments_table(runs: &[PipelineRun]) -> Table {
    let mut columns: Vec<&str> = CONFIG_COLUMNS.to_vec();
    columns.extend([
        "segment",
        "segment_end_min",
        "partial",
        "view_size",
        "subset_size",
        "objective",
        "purity",
        "num_clusters",
        "noise",
        "sds_s",
        "train_s",
        "deadline_ok",
        "disqualified",
    ]);
    let mut t = Table::new(columns);
    for (id, run) in runs.iter().enumerate() {
        for (s, ok) in run.segments.iter().zip(&run.verdict.per_segment) {
            let mut row = config_cells(id, run);
            row.extend([
                s.segment.into(),
                ((s.segment as u64 + 1) * run.config.tau_minutes as u64).into(),
                s.partial.into(),
                s.view_size.into(),
                s.subset_size.into(),
                opt_float(s.objective),
                opt_float(s.purity),
                s.num_clusters.into(),
                s.noise.into(),
                s.sds_s.into(),
                s.train_s.into(),
                (*ok).into(),
                run.disqualified().into(),
            ]);
            t.push(row);
        }
    }
    t
}

/// Three rows per segment: collect, sds and train.
pub fn schedule_table(run: &PipelineRun) -> Table {
    let mut t = Table::new([
        "segment",
        "stage",
        "start_s",
        "end_s",
        "duration_s",
        "deadline_ok",
    ]);
    for s in &run.schedule.segments {
        let stages = [
            ("collect", s.collect_start_s, s.collect_end_s, true),
            ("sds", s.sds_start_s, s.sds_end_s, s.sds_ok),
            ("train", s.train_start_s, s.train_end_s, s.train_ok),
        ];
        for (stage, start, end, ok) in stages {
            t.push(vec![
                s.segment.into(),
                stage.into(),
                start.into(),
                end.into(),
                (end - start).into(),
                ok.into(),
            ]);
        }
    }
    t
}

pub fn budgets_table(run: &PipelineRun) -> Table {
    let mut t = Table::new([
        "segment",
        "camera",
        "fractional",
        "integer",
        "available",
        "shortfall",
    ]);
    for s in &run.segments {
        for c in &s.cameras {
            t.push(vec![
                s.segment.into(),
                (c.camera as u32).into(),
                c.fractional.into(),
                c.integer.into(),
                c.available.into(),
                c.shortfall.into(),
            ]);
        }
    }
    t
}

pub fn subsets_table(run: &PipelineRun) -> Table {
    let mut t = Table::new([
        "segment",
        "camera",
        "seq",
        "frame",
        "ts_ms",
        "track",
        "gt",
        "pseudo_label",
    ]);
    for r in &run.subsets {
        t.push(vec![
            r.segment.into(),
            (r.camera as u32).into(),
            r.seq.into(),
            r.frame.into(),
            r.ts_ms.into(),
            opt_int(r.track),
            opt_int(r.gt.map(i64::from)),
            Cell::Int(r.pseudo_label.map_or(-1, |l| l as i64)),
        ]);
    }
    t
}

pub fn run_summary_json(run: &PipelineRun) -> Value {
    let purities: Vec<Value> = run
        .segments
        .iter()
        .map(|s| s.purity.map_or(Value::Null, sig6))
        .collect();
    json!({
        "config": run.config,
        "cost_model": run.cost,
        "stream": run.header,
        "k": run.config.k(),
        "num_segments": run.segments.len(),
        "pass": run.verdict.pass,
        "disqualified": run.disqualified(),
        "verdicts": run.verdict.per_segment,
        "latency": run.latency.map(|l| json!({ "segments": l.segments, "minutes": sig6(l.minutes) })),
        "throughput": run.throughput,
        "lineage": run.schedule.lineage,
        "subset_sizes": run.subset_sizes(),
        "shortfall": run.segments.iter().map(|s| s.cameras.iter().map(|c| c.shortfall).sum::<u64>()).collect::<Vec<_>>(),
        "purity": purities,
        "models": run.segments.iter().map(|s| s.model_token.clone()).collect::<Vec<_>>(),
        "global_reid": {
            "records": run.reid.records,
            "identities": run.reid.identities,
            "labeled": run.reid.labeled,
            "agreement": run.reid.agreement.map_or(Value::Null, sig6),
        },
    })
}

pub fn grid_summary_json(runs: &[PipelineRun]) -> Value {
    let mut groups: Vec<((u32, bool), (usize, usize))> = Vec::new();
    for r in runs {
        let key = (r.config.tau_minutes, r.config.memory);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, (n, passed))) => {
                *n += 1;
                *passed += usize::from(!r.disqualified());
            }
            None => groups.push((key, (1, usize::from(!r.disqualified())))),
        }
    }
    groups.sort_by_key(|(k, _)| *k);
    json!({
        "configurations": runs.len(),
        "disqualified": runs.iter().filter(|r| r.disqualified()).count(),
        "by_tau_and_memory": groups
            .iter()
            .map(|((tau, memory), (n, passed))| json!({ "tau_minutes": tau, "memory": memory, "configurations": n, "passed": passed }))
            .collect::<Vec<_>>(),
    })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes schedule, budgets, subsets, segments and experiments CSVs plus
/// `summary.json` into `dir`.
pub fn write_run_outputs(run: &PipelineRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let runs = std::slice::from_ref(run);
    emit_to_path(&schedule_table(run), Format::Csv, &dir.join("schedule.csv"))?;
    emit_to_path(&budgets_table(run), Format::Csv, &dir.join("budgets.csv"))?;
    emit_to_path(&subsets_table(run), Format::Csv, &dir.join("subsets.csv"))?;
    emit_to_path(
        &segments_table(runs),
        Format::Csv,
        &dir.join("segments.csv"),
    )?;
    emit_to_path(
        &experiments_table(runs),
        Format::Csv,
        &dir.join("experiments.csv"),
    )?;
    write_json(&dir.join("summary.json"), &run_summary_json(run))
}

pub fn write_grid_outputs(runs: &[PipelineRun], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    emit_to_path(
        &segments_table(runs),
        Format::Csv,
        &dir.join("segments.csv"),
    )?;
    emit_to_path(
        &experiments_table(runs),
        Format::Csv,
        &dir.join("experiments.csv"),
    )?;
    write_json(&dir.join("summary.json"), &grid_summary_json(runs))
}
