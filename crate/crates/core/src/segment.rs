//! Fixed-length time segments and the bounded memory of past segments.

use std::collections::VecDeque;

use crate::stream::CropRecord;

pub const MS_PER_MINUTE: u64 = 60_000;

/// Half-open interval `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSegment {
    pub index: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    /// The stream ends before `end_ms`.
    pub partial: bool,
}

pub fn segment_len_ms(tau_minutes: u32) -> u64 {
    tau_minutes as u64 * MS_PER_MINUTE
}

pub fn assign_segment(timestamp_ms: u64, tau_minutes: u32) -> usize {
    assert!(tau_minutes > 0, "segment length must be positive");
    (timestamp_ms / segment_len_ms(tau_minutes)) as usize
}

/// Segments tiling `[0, duration_ms)`. The last one is flagged partial when
/// the duration is not a multiple of the segment length.
pub fn segments(duration_ms: u64, tau_minutes: u32) -> Vec<TimeSegment> {
    let len = segment_len_ms(tau_minutes);
    let count = duration_ms.div_ceil(len) as usize;
    (0..count)
        .map(|index| {
            let start_ms = index as u64 * len;
            let end_ms = start_ms + len;
            TimeSegment {
                index,
                start_ms,
                end_ms,
                partial: end_ms > duration_ms,
            }
        })
        .collect()
}

pub trait Timestamped {
    fn timestamp_ms(&self) -> u64;
}

impl<T> Timestamped for CropRecord<T> {
    fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }
}

impl<R: Timestamped> Timestamped for &R {
    fn timestamp_ms(&self) -> u64 {
        (*self).timestamp_ms()
    }
}

/// Records of completed segments, retained for at most `retention_minutes`.
#[derive(Debug, Clone)]
pub struct MemoryBuffer<R> {
    tau_minutes: u32,
    retention_ms: u64,
    entries: VecDeque<(usize, R)>,
}

impl<R: Timestamped> MemoryBuffer<R> {
    pub fn new(tau_minutes: u32, retention_minutes: u32) -> Self {
        Self {
            tau_minutes,
            retention_ms: retention_minutes as u64 * MS_PER_MINUTE,
            entries: VecDeque::new(),
        }
    }

    /// Appends a completed segment's records (in time order).
    pub fn push_segment(&mut self, segment: usize, records: impl IntoIterator<Item = R>) {
        self.entries
            .extend(records.into_iter().map(|r| (segment, r)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Simulated clock at the close of segment `t`.
    pub fn segment_close_ms(&self, t: usize) -> u64 {
        (t as u64 + 1) * segment_len_ms(self.tau_minutes)
    }

    fn fresh(&self, ts: u64, now: u64) -> bool {
        now.saturating_sub(ts) <= self.retention_ms
    }

    /// Drops records older than the retention window as of the close of
    /// segment `t`. Returns how many were dropped.
    pub fn evict(&mut self, t: usize) -> usize {
        let now = self.segment_close_ms(t);
        let before = self.entries.len();
        self.entries
            .retain(|(_, r)| now.saturating_sub(r.timestamp_ms()) <= self.retention_ms);
        before - self.entries.len()
    }

    /// Records usable for training at segment `t`: every segment up to `t`
    /// whose records are still inside the retention window.
    pub fn memory_view(&self, t: usize) -> Vec<&R> {
        let now = self.segment_close_ms(t);
        self.entries
            .iter()
            .filter(|(seg, r)| *seg <= t && self.fresh(r.timestamp_ms(), now))
            .map(|(_, r)| r)
            .collect()
    }

    /// Records of segment `t` only.
    pub fn standard_view(&self, t: usize) -> Vec<&R> {
        self.entries
            .iter()
            .filter(|(seg, _)| *seg == t)
            .map(|(_, r)| r)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    struct Ts(u64);
    impl Timestamped for Ts {
        fn timestamp_ms(&self) -> u64 {
            self.0
        }
    }

    fn hour_buffer(tau: u32, retention: u32) -> MemoryBuffer<Ts> {
        let mut buf = MemoryBuffer::new(tau, retention);
        let len = segment_len_ms(tau);
        for t in 0..(60 / tau) as usize {
            let start = t as u64 * len;
            buf.push_segment(t, [Ts(start), Ts(start + len / 2), Ts(start + len - 1)]);
        }
        buf
    }

    #[test]
    fn assign_examples() {
        assert_eq!(assign_segment(0, 15), 0);
        assert_eq!(assign_segment(899_999, 15), 0);
        assert_eq!(assign_segment(900_000, 15), 1);
    }

    #[test]
    fn one_hour_tau20_has_three_segments() {
        let segs = segments(3_600_000, 20);
        assert_eq!(
            segs.iter().map(|s| s.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!(segs.iter().all(|s| !s.partial));
        for w in segs.windows(2) {
            assert_eq!(w[0].end_ms, w[1].start_ms);
        }
    }

    #[test]
    fn partial_tail_flagged() {
        let segs = segments(50 * MS_PER_MINUTE, 20);
        assert_eq!(segs.len(), 3);
        assert!(segs[2].partial && !segs[1].partial);
    }

    #[test]
    fn sixty_minute_memory_sees_all_three_segments() {
        let buf = hour_buffer(20, 60);
        assert_eq!(buf.memory_view(2).len(), 9);
    }

    #[test]
    fn retention_tau_is_standard_mode() {
        let buf = hour_buffer(20, 20);
        for t in 0..3 {
            assert_eq!(buf.memory_view(t), buf.standard_view(t));
        }
    }

    #[test]
    fn first_segment_views_agree() {
        let buf = hour_buffer(15, 60);
        assert_eq!(buf.memory_view(0), buf.standard_view(0));
    }

    #[test]
    fn eviction_drops_old_segments() {
        let mut buf = MemoryBuffer::new(15, 30);
        for t in 0..4usize {
            let start = t as u64 * segment_len_ms(15);
            buf.push_segment(t, [Ts(start), Ts(start + 1000)]);
        }
        // at the close of segment 3 (60 min) only segments 2 and 3 are young enough
        assert_eq!(buf.evict(3), 4);
        assert_eq!(buf.len(), 4);
        let now = buf.segment_close_ms(3);
        assert!(buf
            .memory_view(3)
            .iter()
            .all(|r| now - r.0 <= 30 * MS_PER_MINUTE));
    }

    #[test]
    fn memory_view_contains_standard_view() {
        let buf = hour_buffer(15, 60);
        for t in 0..4 {
            let mem = buf.memory_view(t);
            assert!(buf.standard_view(t).iter().all(|r| mem.contains(r)));
        }
    }
}
