//! The three pipeline stages as plain functions and state machines, so the
//! same code runs sequentially, on threads, or behind the grid cache.

use std::collections::HashMap;
use std::mem;

use serde::Serialize;

use super::config::{Measure, PipelineConfig};
use super::cost::{CostModel, TrainJob, Trainer};
use super::matcher::GlobalMatcher;
use crate::budget::{budget, clamp_to_available, CropCounts, Proportions};
use crate::cluster::{cluster_purity, dbscan, ClusterLabels};
use crate::filter::{screen_frame, FrameGroups};
use crate::sds::per_camera_sds;
use crate::segment::{assign_segment, segments, MemoryBuffer, TimeSegment, Timestamped};
use crate::stream::{CropRecord, StreamHeader};
use crate::{Error, Result, Scalar};

/// A record accepted for collection, tagged with its position among all
/// collected records and its segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Collected<T> {
    pub seq: u64,
    pub segment: usize,
    pub record: CropRecord<T>,
}

impl<T> Timestamped for Collected<T> {
    fn timestamp_ms(&self) -> u64 {
        self.record.timestamp_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch<T> {
    pub segment: usize,
    pub records: Vec<Collected<T>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReidSummary {
    /// Records that went through global matching.
    pub records: u64,
    pub identities: u64,
    /// Matched records carrying a ground-truth identity.
    pub labeled: u64,
    /// Share of labeled records whose global id agrees with the id's
    /// majority ground truth.
    pub agreement: Option<f64>,
}

/// Stream segments, never fewer than one.
pub fn stream_segments(header: &StreamHeader, tau_minutes: u32) -> Vec<TimeSegment> {
    let mut segs = segments(header.duration_ms, tau_minutes);
    if segs.is_empty() {
        segs = segments(1, tau_minutes);
    }
    segs
}

/// Screens the stream frame by frame, runs global matching on the
/// re-identification path and hands every completed segment to `emit`,
/// including empty ones.
pub fn collect_stage<T, I, F>(
    header: &StreamHeader,
    records: I,
    cfg: &PipelineConfig,
    mut emit: F,
) -> Result<ReidSummary>
where
    T: Scalar,
    I: Iterator<Item = Result<CropRecord<T>>>,
    F: FnMut(SegmentBatch<T>) -> Result<()>,
{
    let num_segments = stream_segments(header, cfg.tau_minutes).len();
    let mut matcher = cfg
        .global_reid
        .then(|| GlobalMatcher::<T>::new(cfg.reid_threshold, cfg.reid_momentum, cfg.metric));
    let mut votes: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
    let mut reid = ReidSummary::default();
    let (mut current, mut seq) = (0usize, 0u64);
    let mut batch = Vec::new();

    for frame in FrameGroups::new(records) {
        for screened in screen_frame(frame?, &cfg.filter)? {
            if screened.record.camera_id >= header.num_cameras {
                return Err(Error::Config(format!(
                    "camera {} outside the header's range",
                    screened.record.camera_id
                )));
            }
            if let Some(m) = matcher.as_mut().filter(|_| screened.reid(&cfg.filter)) {
                let id = m.assign(&screened.record.feature);
                reid.records += 1;
                if let Some(gt) = screened.record.gt_identity {
                    *votes.entry(id).or_default().entry(gt).or_default() += 1;
                    reid.labeled += 1;
                }
            }
            if !screened.collect() {
                continue;
            }
            let seg =
                assign_segment(screened.record.timestamp_ms, cfg.tau_minutes).min(num_segments - 1);
            if seg < current {
                return Err(Error::Config(
                    "stream is not time-ordered across cameras".into(),
                ));
            }
            while current < seg {
                emit(SegmentBatch {
                    segment: current,
                    records: mem::take(&mut batch),
                })?;
                current += 1;
            }
            batch.push(Collected {
                seq,
                segment: seg,
                record: screened.record,
            });
            seq += 1;
        }
    }
    while current < num_segments {
        emit(SegmentBatch {
            segment: current,
            records: mem::take(&mut batch),
        })?;
        current += 1;
    }
    if let Some(m) = &matcher {
        reid.identities = m.gallery().len() as u64;
    }
    if reid.labeled > 0 {
        let agree: u64 = votes
            .values()
            .map(|v| v.values().copied().max().unwrap_or(0))
            .sum();
        reid.agreement = Some(agree as f64 / reid.labeled as f64);
    }
    Ok(reid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraBudget {
    pub camera: u16,
    /// Unrounded budget.
    pub fractional: f64,
    /// Rounded budget before clamping.
    pub integer: u64,
    /// Crops of this camera in the selection input.
    pub available: u64,
    pub shortfall: u64,
    /// Budget after clamping (and redistribution, when enabled).
    pub granted: u64,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSegment<T> {
    pub segment: usize,
    pub partial: bool,
    /// Size of the selection input (the segment, or the memory view).
    pub view_size: usize,
    pub cameras: Vec<CameraBudget>,
    /// Shortfall that could not be moved to other cameras.
    pub unfilled: u64,
    /// Selected records, camera by camera in selection order.
    pub records: Vec<Collected<T>>,
    pub objective: Option<f64>,
    pub distance_evals: u64,
    pub sds_wall_s: f64,
}

/// Budgets and runs subset selection per segment. With oracle proportions
/// nothing can be selected before the whole stream has been counted, so
/// batches are held until [`Selector::finish`].
pub struct Selector<T> {
    cfg: PipelineConfig,
    segments: Vec<TimeSegment>,
    buffer: MemoryBuffer<Collected<T>>,
    counts: CropCounts,
    pending: Vec<SegmentBatch<T>>,
}

impl<T: Scalar> Selector<T> {
    pub fn new(header: &StreamHeader, cfg: &PipelineConfig) -> Self {
        let segments = stream_segments(header, cfg.tau_minutes);
        Self {
            cfg: cfg.clone(),
            buffer: MemoryBuffer::new(cfg.tau_minutes, cfg.effective_retention()),
            counts: CropCounts::zeros(header.num_cameras as usize, segments.len()),
            segments,
            pending: Vec::new(),
        }
    }

    pub fn push(&mut self, batch: SegmentBatch<T>) -> Result<Vec<SelectedSegment<T>>> {
        for r in &batch.records {
            self.counts
                .add(r.record.camera_id as usize, batch.segment, 1);
        }
        match self.cfg.budget_mode {
            Proportions::Oracle => {
                self.pending.push(batch);
                Ok(Vec::new())
            }
            Proportions::Causal => Ok(vec![self.select(batch)?]),
        }
    }

    pub fn finish(&mut self) -> Result<Vec<SelectedSegment<T>>> {
        mem::take(&mut self.pending)
            .into_iter()
            .map(|b| self.select(b))
            .collect()
    }

    fn select(&mut self, batch: SegmentBatch<T>) -> Result<SelectedSegment<T>> {
        let t = batch.segment;
        let cams = self.counts.num_cameras();
        let matrix = match budget(
            &self.counts,
            self.cfg.k(),
            self.cfg.budget_mode(),
            self.cfg.budget_mode,
        ) {
            Ok(m) => Some(m),
            Err(Error::EmptyCounts) => None,
            Err(e) => return Err(e),
        };
        self.buffer.push_segment(t, batch.records);
        self.buffer.evict(t);
        let view = if self.cfg.memory {
            self.buffer.memory_view(t)
        } else {
            self.buffer.standard_view(t)
        };

        let mut available = vec![vec![0u64]; cams];
        for c in &view {
            available[c.record.camera_id as usize][0] += 1;
        }
        let (integer, fractional): (Vec<Vec<u64>>, Vec<f64>) = match &matrix {
            Some(m) => (
                (0..cams).map(|i| vec![m.budgets[i][t]]).collect(),
                (0..cams).map(|i| m.fractional[i][t]).collect(),
            ),
            None => (vec![vec![0]; cams], vec![0.0; cams]),
        };
        let clamped = clamp_to_available(&integer, &available, self.cfg.redistribute);
        let granted: Vec<u64> = clamped.budgets.iter().map(|row| row[0]).collect();

        let recs: Vec<&CropRecord<T>> = view.iter().map(|c| &c.record).collect();
        let sel = per_camera_sds(&recs, &granted, self.cfg.metric);
        let cameras = sel
            .per_camera
            .iter()
            .map(|pc| {
                let i = pc.camera as usize;
                CameraBudget {
                    camera: pc.camera,
                    fractional: fractional[i],
                    integer: integer[i][0],
                    available: available[i][0],
                    shortfall: clamped.shortfall[i][0],
                    granted: granted[i],
                    objective: pc.objective.map(T::as_f64),
                }
            })
            .collect();
        Ok(SelectedSegment {
            segment: t,
            partial: self.segments[t].partial,
            view_size: view.len(),
            cameras,
            unfilled: clamped.unfilled[0],
            records: sel.indices.iter().map(|&i| view[i].clone()).collect(),
            objective: sel.objective.map(T::as_f64),
            distance_evals: sel.distance_evals,
            sds_wall_s: sel.elapsed.as_secs_f64(),
        })
    }
}

/// Pseudo-labels of a selected subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub labels: ClusterLabels,
    /// Purity against ground truth over clustered records that carry one.
    pub purity: Option<f64>,
}

pub fn label_segment<T: Scalar>(sel: &SelectedSegment<T>, cfg: &PipelineConfig) -> Labeled {
    let feats: Vec<&[T]> = sel
        .records
        .iter()
        .map(|c| c.record.feature.as_slice())
        .collect();
    let labels = dbscan(&feats, &cfg.dbscan, cfg.metric);
    let (lab, gt): (Vec<Option<usize>>, Vec<u32>) = labels
        .labels
        .iter()
        .zip(&sel.records)
        .filter_map(|(l, c)| c.record.gt_identity.map(|g| (*l, g)))
        .unzip();
    let purity = cluster_purity(&lab, &gt).ok();
    Labeled { labels, purity }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub partial: bool,
    pub view_size: usize,
    pub cameras: Vec<CameraBudget>,
    pub unfilled: u64,
    pub subset_size: usize,
    pub objective: Option<f64>,
    pub distance_evals: u64,
    pub num_clusters: usize,
    pub noise: usize,
    pub purity: Option<f64>,
    pub sds_s: f64,
    pub train_s: f64,
    pub skipped: bool,
    pub model_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubsetRow {
    pub segment: usize,
    pub camera: u16,
    pub seq: u64,
    pub frame: u64,
    pub ts_ms: u64,
    pub track: Option<i64>,
    pub gt: Option<u32>,
    pub pseudo_label: Option<usize>,
}

pub fn subset_rows<T>(sel: &SelectedSegment<T>, labeled: &Labeled) -> Vec<SubsetRow> {
    sel.records
        .iter()
        .zip(&labeled.labels.labels)
        .map(|(c, l)| SubsetRow {
            segment: sel.segment,
            camera: c.record.camera_id,
            seq: c.seq,
            frame: c.record.frame_index,
            ts_ms: c.record.timestamp_ms,
            track: c.record.track_id,
            gt: c.record.gt_identity,
            pseudo_label: *l,
        })
        .collect()
}

/// Charges the selection cost and runs the trainer on a labeled subset.
pub fn train_segment<T: Scalar>(
    sel: &SelectedSegment<T>,
    labeled: &Labeled,
    cfg: &PipelineConfig,
    cost: &CostModel,
    trainer: &mut dyn Trainer<T>,
) -> Result<SegmentReport> {
    let skipped = sel.records.is_empty();
    let sds_s = match (skipped, cfg.measure) {
        (true, _) => 0.0,
        (false, Measure::Model) => cost.sds_seconds(sel.distance_evals),
        (false, Measure::Real) => cost.sds_overhead_s + sel.sds_wall_s,
    };
    let (train_s, model_token) = if skipped {
        (0.0, None)
    } else {
        let job = TrainJob {
            segment: sel.segment,
            epochs: cfg.epochs,
            iterations: cfg.iterations,
            features: sel
                .records
                .iter()
                .map(|c| c.record.feature.as_slice())
                .collect(),
            pseudo_labels: &labeled.labels.labels,
            num_clusters: labeled.labels.num_clusters,
        };
        let out = trainer.train(&job)?;
        (out.duration_s, Some(out.model_token))
    };
    Ok(SegmentReport {
        segment: sel.segment,
        partial: sel.partial,
        view_size: sel.view_size,
        cameras: sel.cameras.clone(),
        unfilled: sel.unfilled,
        subset_size: sel.records.len(),
        objective: sel.objective,
        distance_evals: sel.distance_evals,
        num_clusters: labeled.labels.num_clusters,
        noise: labeled.labels.noise_count(),
        purity: labeled.purity,
        sds_s,
        train_s,
        skipped,
        model_token,
    })
}
