//! The collect, select and train stages on a simulated clock.
//!
//! Collection of segment `t` fills the slot `[t*tau, (t+1)*tau)`. Subset
//! selection for it runs in the next slot and training in the one after,
//! so three segments are in flight at any time and a model trained on
//! segment `t` is first used while collecting segment `t+3`.

mod config;
mod cost;
mod grid;
mod matcher;
mod output;
mod schedule;
mod stages;

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::{mpsc, Arc};
use std::thread;

use serde::Serialize;

pub use config::{config_keys, parse_override, ConstraintMode, Execution, Measure, PipelineConfig};
pub use cost::{CostModel, CostModelTrainer, ExternalTrainer, TrainJob, TrainOutcome, Trainer};
pub use grid::{grid_run, GridSpec};
pub use matcher::{global_match, GlobalMatcher};
pub use output::{
    budgets_table, experiments_table, grid_summary_json, run_summary_json, schedule_table,
    segments_table, subsets_table, write_grid_outputs, write_run_outputs,
};
pub use schedule::{
    build_schedule, check_time_constraint, inference_latency, throughput, Latency,
    PipelineSchedule, SegmentTiming, StageDurations, Throughput, Verdict,
};
pub use stages::{
    collect_stage, label_segment, stream_segments, subset_rows, train_segment, CameraBudget,
    Collected, Labeled, ReidSummary, SegmentBatch, SegmentReport, SelectedSegment, Selector,
    SubsetRow,
};

use crate::stream::{synth_iter, CropRecord, StreamHeader, StreamReader, SynthSpec};
use crate::{Error, Result, Scalar};

pub type RecordIter<'a, T> = Box<dyn Iterator<Item = Result<CropRecord<T>>> + Send + 'a>;

/// Somewhere a stream can be (re)opened from.
#[derive(Debug, Clone)]
pub enum StreamSource<T> {
    File(PathBuf),
    Synth(SynthSpec),
    Memory(StreamHeader, Arc<Vec<CropRecord<T>>>),
}

impl<T: Scalar> StreamSource<T> {
    pub fn open(&self) -> Result<(StreamHeader, RecordIter<'_, T>)> {
        match self {
            StreamSource::File(path) => {
                let reader = StreamReader::new(BufReader::new(File::open(path)?))?;
                Ok((reader.header(), Box::new(reader)))
            }
            StreamSource::Synth(spec) => {
                let it = synth_iter::<T>(spec)?;
                Ok((it.header(), Box::new(it.map(Ok))))
            }
            StreamSource::Memory(header, records) => {
                Ok((*header, Box::new(records.iter().cloned().map(Ok))))
            }
        }
    }
}

/// Everything one configuration produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub cost: CostModel,
    pub header: StreamHeader,
    pub segments: Vec<SegmentReport>,
    /// Selected records with their pseudo-labels (left empty by grid runs).
    pub subsets: Vec<SubsetRow>,
    pub schedule: PipelineSchedule,
    pub verdict: Verdict,
    /// `None` when the schedule fails or nothing was trained.
    pub latency: Option<Latency>,
    pub throughput: Throughput,
    pub reid: ReidSummary,
}

impl PipelineRun {
    pub fn disqualified(&self) -> bool {
        !self.verdict.pass
    }

    pub fn subset_sizes(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.subset_size).collect()
    }
}

pub(crate) fn assemble(
    cfg: &PipelineConfig,
    cost: &CostModel,
    header: StreamHeader,
    reid: ReidSummary,
    segments: Vec<SegmentReport>,
    subsets: Vec<SubsetRow>,
) -> PipelineRun {
    let durations: Vec<StageDurations> = segments
        .iter()
        .map(|s| StageDurations {
            sds_s: s.sds_s,
            train_s: s.train_s,
            skipped: s.skipped,
        })
        .collect();
    let partial: Vec<bool> = segments.iter().map(|s| s.partial).collect();
    let schedule = build_schedule(
        cfg.tau_minutes,
        &durations,
        &partial,
        cfg.constraint,
        cfg.max_in_flight,
    );
    let verdict = check_time_constraint(&schedule);
    let latency = inference_latency(&schedule).ok();
    let throughput = throughput(&schedule);
    PipelineRun {
        config: cfg.clone(),
        cost: *cost,
        header,
        segments,
        subsets,
        schedule,
        verdict,
        latency,
        throughput,
        reid,
    }
}

/// The training stage plus the report sink; the only place results are
/// accumulated.
struct Sink<'a, T> {
    cfg: &'a PipelineConfig,
    cost: &'a CostModel,
    trainer: &'a mut dyn Trainer<T>,
    reports: Vec<SegmentReport>,
    subsets: Vec<SubsetRow>,
}

impl<T: Scalar> Sink<'_, T> {
    fn accept(&mut self, sel: SelectedSegment<T>) -> Result<()> {
        let labeled = label_segment(&sel, self.cfg);
        self.reports.push(train_segment(
            &sel,
            &labeled,
            self.cfg,
            self.cost,
            self.trainer,
        )?);
        self.subsets.extend(subset_rows(&sel, &labeled));
        Ok(())
    }
}

/// Runs the whole pipeline with the cost-model trainer.
pub fn simulate_pipeline<T, I>(
    header: StreamHeader,
    records: I,
    cfg: &PipelineConfig,
    cost: &CostModel,
) -> Result<PipelineRun>
where
    T: Scalar,
    I: Iterator<Item = Result<CropRecord<T>>> + Send,
{
    simulate_with_trainer(
        header,
        records,
        cfg,
        cost,
        &mut CostModelTrainer { cost: *cost },
    )
}

/// Prefers the error that caused a shutdown over the hang-ups it triggered.
fn first_cause(results: [Result<()>; 3]) -> Result<()> {
    let errors: Vec<Error> = results.into_iter().filter_map(Result::err).collect();
    match errors
        .iter()
        .position(|e| !matches!(e, Error::Disconnected))
    {
        Some(i) => Err(errors.into_iter().nth(i).expect("index in range")),
        None => errors.into_iter().next().map_or(Ok(()), Err),
    }
}

pub fn simulate_with_trainer<T, I>(
    header: StreamHeader,
    records: I,
    cfg: &PipelineConfig,
    cost: &CostModel,
    trainer: &mut dyn Trainer<T>,
) -> Result<PipelineRun>
where
    T: Scalar,
    I: Iterator<Item = Result<CropRecord<T>>> + Send,
{
    header.validate()?;
    cfg.validate()?;
    cost.validate()?;
    let mut sink = Sink {
        cfg,
        cost,
        trainer,
        reports: Vec::new(),
        subsets: Vec::new(),
    };

    let reid = match cfg.execution {
        Execution::Sequential => {
            let mut selector = Selector::new(&header, cfg);
            let reid = collect_stage(&header, records, cfg, |batch| {
                for sel in selector.push(batch)? {
                    sink.accept(sel)?;
                }
                Ok(())
            })?;
            for sel in selector.finish()? {
                sink.accept(sel)?;
            }
            reid
        }
        Execution::Concurrent => thread::scope(|scope| {
            let (batch_tx, batch_rx) = mpsc::sync_channel::<SegmentBatch<T>>(2);
            let (sel_tx, sel_rx) = mpsc::sync_channel::<SelectedSegment<T>>(2);
            let header = &header;
            let collector = scope.spawn(move || {
                collect_stage(header, records, cfg, |batch| {
                    batch_tx.send(batch).map_err(|_| Error::Disconnected)
                })
            });
            let selector = scope.spawn(move || -> Result<()> {
                let mut selector = Selector::new(header, cfg);
                for batch in batch_rx {
                    for sel in selector.push(batch)? {
                        sel_tx.send(sel).map_err(|_| Error::Disconnected)?;
                    }
                }
                for sel in selector.finish()? {
                    sel_tx.send(sel).map_err(|_| Error::Disconnected)?;
                }
                Ok(())
            });
            let mut trained = Ok(());
            for sel in sel_rx {
                if let Err(e) = sink.accept(sel) {
                    trained = Err(e);
                    break;
                }
            }
            let collected = collector.join().expect("collector thread panicked");
            let selected = selector.join().expect("selector thread panicked");
            let reid = collected.as_ref().ok().cloned();
            first_cause([collected.map(|_| ()), selected, trained])?;
            Ok::<_, Error>(reid.expect("collector succeeded"))
        })?,
    };
    Ok(assemble(
        cfg,
        cost,
        header,
        reid,
        sink.reports,
        sink.subsets,
    ))
}

/// Opens `source` and runs [`simulate_with_trainer`] on it.
pub fn simulate_source<T: Scalar>(
    source: &StreamSource<T>,
    cfg: &PipelineConfig,
    cost: &CostModel,
    trainer: &mut dyn Trainer<T>,
) -> Result<PipelineRun> {
    let (header, records) = source.open()?;
    simulate_with_trainer(header, records, cfg, cost, trainer)
}
