use serde::Serialize;

use super::config::ConstraintMode;
use crate::{Error, Result};

/// Durations of the two compute stages for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageDurations {
    pub sds_s: f64,
    pub train_s: f64,
    /// Nothing was selected, so no model is trained for this segment.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTiming {
    pub segment: usize,
    pub partial: bool,
    pub skipped: bool,
    pub collect_start_s: f64,
    pub collect_end_s: f64,
    pub sds_start_s: f64,
    pub sds_end_s: f64,
    pub train_start_s: f64,
    pub train_end_s: f64,
    pub sds_ok: bool,
    pub train_ok: bool,
    /// First segment whose collection runs with this segment's model.
    pub live_from_segment: Option<usize>,
}

impl SegmentTiming {
    pub fn ok(&self) -> bool {
        self.sds_ok && self.train_ok
    }

    pub fn sds_duration_s(&self) -> f64 {
        self.sds_end_s - self.sds_start_s
    }

    pub fn train_duration_s(&self) -> f64 {
        self.train_end_s - self.train_start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSchedule {
    pub tau_minutes: u32,
    pub constraint: ConstraintMode,
    pub max_in_flight: u32,
    pub segments: Vec<SegmentTiming>,
    /// For each collected segment, the segment whose model was live while
    /// collecting it (`None` for the initial model).
    pub lineage: Vec<Option<usize>>,
}

impl PipelineSchedule {
    pub fn tau_s(&self) -> f64 {
        self.tau_minutes as f64 * 60.0
    }
}

/// Lays the stages out on the simulated clock.
///
/// In strict mode every stage starts at its slot boundary: collection of
/// segment `t` fills `[t*tau, (t+1)*tau)`, selection starts at `(t+1)*tau`
/// and training at `(t+2)*tau`. In relaxed mode each stage is a single
/// FIFO server, so a late stage pushes back its successors.
pub fn build_schedule(
    tau_minutes: u32,
    durations: &[StageDurations],
    partial: &[bool],
    constraint: ConstraintMode,
    max_in_flight: u32,
) -> PipelineSchedule {
    assert_eq!(durations.len(), partial.len());
    let tau = tau_minutes as f64 * 60.0;
    let mut segments = Vec::with_capacity(durations.len());
    let (mut prev_sds_end, mut prev_train_end) = (0.0f64, 0.0f64);
    for (t, d) in durations.iter().enumerate() {
        let slot = |k: usize| (t + k) as f64 * tau;
        let (sds_start, train_start_floor) = match constraint {
            ConstraintMode::Strict => (slot(1), slot(2)),
            ConstraintMode::Relaxed => (slot(1).max(prev_sds_end), slot(2)),
        };
        let sds_end = sds_start + d.sds_s;
        let train_start = match constraint {
            ConstraintMode::Strict => train_start_floor,
            ConstraintMode::Relaxed => train_start_floor.max(sds_end).max(prev_train_end),
        };
        let train_end = train_start + d.train_s;
        if !d.skipped {
            prev_sds_end = sds_end;
            prev_train_end = train_end;
        }
        let (sds_ok, train_ok) = match constraint {
            ConstraintMode::Strict => (d.sds_s <= tau, d.train_s <= tau),
            ConstraintMode::Relaxed => {
                let depth = max_in_flight as usize;
                (sds_end <= slot(depth), train_end <= slot(depth))
            }
        };
        let live_from_segment = (!d.skipped).then(|| {
            let done = (train_end / tau).ceil() as usize;
            done.max(t + 3)
        });
        segments.push(SegmentTiming {
            segment: t,
            partial: partial[t],
            skipped: d.skipped,
            collect_start_s: slot(0),
            collect_end_s: slot(1),
            sds_start_s: sds_start,
            sds_end_s: sds_end,
            train_start_s: train_start,
            train_end_s: train_end,
            sds_ok,
            train_ok,
            live_from_segment,
        });
    }
    let lineage = (0..segments.len())
        .map(|s| {
            segments
                .iter()
                .filter(|g| g.live_from_segment.is_some_and(|l| l <= s))
                .map(|g| g.segment)
                .max()
        })
        .collect();
    PipelineSchedule {
        tau_minutes,
        constraint,
        max_in_flight,
        segments,
        lineage,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub per_segment: Vec<bool>,
    pub pass: bool,
}

impl Verdict {
    pub fn failures(&self) -> usize {
        self.per_segment.iter().filter(|ok| !**ok).count()
    }
}

pub fn check_time_constraint(schedule: &PipelineSchedule) -> Verdict {
    let per_segment: Vec<bool> = schedule.segments.iter().map(SegmentTiming::ok).collect();
    let pass = per_segment.iter().all(|&ok| ok);
    Verdict { per_segment, pass }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Latency {
    /// Whole segments between the end of collection and the first
    /// collection that uses the resulting model.
    pub segments: u64,
    pub minutes: f64,
}

/// Worst collection-to-inference delay over all trained segments.
pub fn inference_latency(schedule: &PipelineSchedule) -> Result<Latency> {
    if !check_time_constraint(schedule).pass {
        return Err(Error::ScheduleFailed);
    }
    let segments = schedule
        .segments
        .iter()
        .filter_map(|s| s.live_from_segment.map(|l| (l - (s.segment + 1)) as u64))
        .max()
        .ok_or(Error::Empty)?;
    Ok(Latency {
        segments,
        minutes: segments as f64 * schedule.tau_minutes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Throughput {
    /// Trainings completed during each slot `[s*tau, (s+1)*tau)`.
    pub completions_per_slot: Vec<usize>,
    pub trained_segments: usize,
    /// Every slot from the first completion to the last holds exactly one.
    pub one_per_segment: bool,
}

pub fn throughput(schedule: &PipelineSchedule) -> Throughput {
    let done: Vec<usize> = schedule
        .segments
        .iter()
        .filter_map(|s| s.live_from_segment.map(|l| l - 1))
        .collect();
    let slots = done.iter().max().map_or(0, |m| m + 1);
    let mut completions_per_slot = vec![0; slots];
    for s in &done {
        completions_per_slot[*s] += 1;
    }
    let first = done.iter().min().copied().unwrap_or(0);
    let one_per_segment = !done.is_empty() && completions_per_slot[first..].iter().all(|&c| c == 1);
    Throughput {
        completions_per_slot,
        trained_segments: done.len(),
        one_per_segment,
    }
}
