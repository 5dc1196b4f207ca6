//! Crop screening on the local node: overlapping detections are rejected,
//! weak poses are gated out, and crops for collection are subsampled by
//! frame.

use std::iter::Peekable;

use serde::{Deserialize, Serialize};

use crate::stream::{BBox, CropRecord};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// Both members of an overlapping pair are rejected.
    #[default]
    DropBoth,
    /// Only the smaller box of a pair is rejected (equal areas drop both).
    KeepLarger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub iou_reject_threshold: f64,
    pub min_keypoints: usize,
    pub min_kp_confidence: f64,
    pub sample_every_n_frames: u64,
    pub overlap_policy: OverlapPolicy,
    /// Apply overlap rejection to the re-identification path as well.
    pub filter_reid_path: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            iou_reject_threshold: 0.3,
            min_keypoints: 15,
            min_kp_confidence: 0.5,
            sample_every_n_frames: 60,
            overlap_policy: OverlapPolicy::DropBoth,
            filter_reid_path: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_reject_threshold) {
            return Err(Error::Config(
                "iou_reject_threshold must lie in [0, 1]".into(),
            ));
        }
        if self.min_keypoints > crate::stream::NUM_KEYPOINTS {
            return Err(Error::Config(
                "min_keypoints exceeds the 17 pose keypoints".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_kp_confidence) {
            return Err(Error::Config("min_kp_confidence must lie in [0, 1]".into()));
        }
        if self.sample_every_n_frames == 0 {
            return Err(Error::Config(
                "sample_every_n_frames must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes with positive extent.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(T::zero());
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(T::zero());
    let inter = ix * iy;
    if inter == T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// Per-crop overlap verdicts for crops that share one frame of one camera.
pub fn overlap_mask<T: Scalar>(crops: &[&CropRecord<T>], cfg: &FilterConfig) -> Result<Vec<bool>> {
    if let Some(first) = crops.first() {
        if crops
            .iter()
            .any(|c| c.frame_index != first.frame_index || c.camera_id != first.camera_id)
        {
            return Err(Error::MixedFrame);
        }
    }
    let thr = T::of(cfg.iou_reject_threshold);
    let mut keep = vec![true; crops.len()];
    for i in 0..crops.len() {
        for j in (i + 1)..crops.len() {
            if iou(&crops[i].bbox, &crops[j].bbox) < thr {
                continue;
            }
            match cfg.overlap_policy {
                OverlapPolicy::DropBoth => {
                    keep[i] = false;
                    keep[j] = false;
                }
                OverlapPolicy::KeepLarger => {
                    let (ai, aj) = (crops[i].bbox.area(), crops[j].bbox.area());
                    if ai <= aj {
                        keep[i] = false;
                    }
                    if aj <= ai {
                        keep[j] = false;
                    }
                }
            }
        }
    }
    Ok(keep)
}

/// Crops of one camera frame that survive overlap rejection.
pub fn overlap_filter<'a, T: Scalar>(
    crops: &[&'a CropRecord<T>],
    cfg: &FilterConfig,
) -> Result<Vec<&'a CropRecord<T>>> {
    let keep = overlap_mask(crops, cfg)?;
    Ok(crops
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(c, _)| *c)
        .collect())
}

pub fn pose_pass<T: Scalar>(crop: &CropRecord<T>, cfg: &FilterConfig) -> bool {
    let min_conf = T::of(cfg.min_kp_confidence);
    crop.keypoints
        .iter()
        .filter(|k| k.confidence >= min_conf)
        .count()
        >= cfg.min_keypoints
}

pub fn is_sampled_frame(frame_index: u64, cfg: &FilterConfig) -> bool {
    frame_index.is_multiple_of(cfg.sample_every_n_frames)
}

/// Keeps records on every n-th frame.
pub fn sample_frames<'c, T: Scalar, I>(
    stream: I,
    cfg: &'c FilterConfig,
) -> impl Iterator<Item = CropRecord<T>> + 'c
where
    I: IntoIterator<Item = CropRecord<T>>,
    I::IntoIter: 'c,
{
    stream
        .into_iter()
        .filter(move |r| is_sampled_frame(r.frame_index, cfg))
}

/// A record together with its screening verdicts.
#[derive(Debug, Clone)]
pub struct Screened<T> {
    pub record: CropRecord<T>,
    pub overlap_ok: bool,
    pub pose_ok: bool,
    pub sampled: bool,
}

impl<T> Screened<T> {
    /// Eligible for crop collection and subset selection.
    pub fn collect(&self) -> bool {
        self.overlap_ok && self.pose_ok && self.sampled
    }

    /// Eligible for global re-identification (never subsampled).
    pub fn reid(&self, cfg: &FilterConfig) -> bool {
        self.pose_ok && (self.overlap_ok || !cfg.filter_reid_path)
    }
}

/// Screens a whole frame (any number of cameras). Overlap is evaluated per
/// camera; pose is only evaluated for crops that survive overlap.
pub fn screen_frame<T: Scalar>(
    frame: Vec<CropRecord<T>>,
    cfg: &FilterConfig,
) -> Result<Vec<Screened<T>>> {
    let mut overlap_ok = vec![true; frame.len()];
    let mut cams: Vec<u16> = frame.iter().map(|r| r.camera_id).collect();
    cams.sort_unstable();
    cams.dedup();
    for cam in cams {
        let idx: Vec<usize> = (0..frame.len())
            .filter(|&i| frame[i].camera_id == cam)
            .collect();
        let crops: Vec<&CropRecord<T>> = idx.iter().map(|&i| &frame[i]).collect();
        for (i, ok) in idx.into_iter().zip(overlap_mask(&crops, cfg)?) {
            overlap_ok[i] = ok;
        }
    }
    Ok(frame
        .into_iter()
        .zip(overlap_ok)
        .map(|(record, overlap_ok)| {
            // not evaluated (false) when no path can use the crop
            let pose_ok = (overlap_ok || !cfg.filter_reid_path) && pose_pass(&record, cfg);
            let sampled = is_sampled_frame(record.frame_index, cfg);
            Screened {
                record,
                overlap_ok,
                pose_ok,
                sampled,
            }
        })
        .collect())
}

/// Groups a time-sorted stream into runs of records that share a frame.
pub struct FrameGroups<I: Iterator> {
    inner: Peekable<I>,
}

impl<I: Iterator> FrameGroups<I> {
    pub fn new(inner: I) -> Self {
        Self {
            inner: inner.peekable(),
        }
    }
}

impl<T, I> Iterator for FrameGroups<I>
where
    I: Iterator<Item = Result<CropRecord<T>>>,
{
    type Item = Result<Vec<CropRecord<T>>>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        let key = (first.frame_index, first.timestamp_ms);
        let mut group = vec![first];
        while let Some(Ok(next)) = self.inner.peek() {
            if (next.frame_index, next.timestamp_ms) != key {
                break;
            }
            match self.inner.next() {
                Some(Ok(r)) => group.push(r),
                _ => unreachable!("peeked an Ok record"),
            }
        }
        Some(Ok(group))
    }
}
