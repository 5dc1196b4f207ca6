//! Crop stream records and the line-delimited ingestion format.
//!
//! The first line of a stream file is a header object, every following
//! line is one record:
//!
//! ```text
//! {"num_cameras":2,"feature_dim":4,"fps":30.0,"duration_ms":60000}
//! {"frame":0,"ts_ms":0,"cam":1,"track":7,"bbox":[10,20,40,100],"kp":[[x,y,c],...],"feat":[...],"gt":3}
//! ```

mod synth;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::marker::PhantomData;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

pub use synth::{synth_iter, synth_stream, Arrival, SynthIter, SynthSpec};

/// COCO pose layout.
pub const NUM_KEYPOINTS: usize = 17;

pub const DEFAULT_FEATURE_DIM: usize = 64;

/// Axis-aligned box in pixels, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > T::zero() && self.h > T::zero() && self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint<T> {
    pub x: T,
    pub y: T,
    pub confidence: T,
}

/// One detected person instance from one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CropRecord<T> {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub camera_id: u16,
    pub track_id: Option<i64>,
    pub bbox: BBox<T>,
    pub keypoints: [Keypoint<T>; NUM_KEYPOINTS],
    pub feature: Vec<T>,
    pub gt_identity: Option<u32>,
}

impl<T: Scalar> CropRecord<T> {
    /// Rescales the feature to unit L2 norm in place.
    pub fn normalize(&mut self) -> Result<()> {
        self.feature = normalize_feature(&self.feature)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub num_cameras: u16,
    pub feature_dim: usize,
    pub fps: f64,
    pub duration_ms: u64,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<()> {
        if self.num_cameras == 0 {
            return Err(Error::Config("num_cameras must be at least 1".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be at least 2".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config("fps must be positive".into()));
        }
        Ok(())
    }
}

/// `v / ‖v‖₂`.
pub fn normalize_feature<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

#[derive(Serialize, Deserialize)]
struct RecordLine<T> {
    frame: u64,
    ts_ms: u64,
    cam: u16,
    #[serde(default)]
    track: Option<i64>,
    bbox: [T; 4],
    kp: Vec<[T; 3]>,
    feat: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<u32>,
}

impl<T: Scalar> RecordLine<T> {
    fn from_record(r: &CropRecord<T>) -> Self {
        Self {
            frame: r.frame_index,
            ts_ms: r.timestamp_ms,
            cam: r.camera_id,
            track: r.track_id,
            bbox: [r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h],
            kp: r
                .keypoints
                .iter()
                .map(|k| [k.x, k.y, k.confidence])
                .collect(),
            feat: r.feature.clone(),
            gt: r.gt_identity,
        }
    }

    fn into_record(self, line: usize) -> Result<CropRecord<T>> {
        let schema = |msg: String| Error::Schema { line, msg };
        if self.kp.len() != NUM_KEYPOINTS {
            return Err(schema(format!(
                "expected {NUM_KEYPOINTS} keypoints, got {}",
                self.kp.len()
            )));
        }
        let mut keypoints = [Keypoint::default(); NUM_KEYPOINTS];
        for (slot, [x, y, c]) in keypoints.iter_mut().zip(self.kp) {
            if !(c >= T::zero() && c <= T::one()) {
                return Err(schema(format!("keypoint confidence {c} outside [0, 1]")));
            }
            *slot = Keypoint {
                x,
                y,
                confidence: c,
            };
        }
        let [x, y, w, h] = self.bbox;
        let bbox = BBox { x, y, w, h };
        if !bbox.is_valid() {
            return Err(schema("bounding box needs w > 0 and h > 0".into()));
        }
        Ok(CropRecord {
            frame_index: self.frame,
            timestamp_ms: self.ts_ms,
            camera_id: self.cam,
            track_id: self.track,
            bbox,
            keypoints,
            feature: self.feat,
            gt_identity: self.gt,
        })
    }
}

/// Incremental reader over the line-delimited format. Records come out in
/// file order and are checked against the header as they are read.
pub struct StreamReader<R, T> {
    lines: std::io::Lines<R>,
    header: StreamHeader,
    line_no: usize,
    last_ts: HashMap<u16, u64>,
    _scalar: PhantomData<T>,
}

impl<R: BufRead, T: Scalar> StreamReader<R, T> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut line_no = 0;
        let header = loop {
            line_no += 1;
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "missing header".into(),
                    })
                }
                Some(line) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let header: StreamHeader =
                        serde_json::from_str(&line).map_err(|e| Error::Parse {
                            line: line_no,
                            msg: e.to_string(),
                        })?;
                    header.validate().map_err(|e| Error::Schema {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                    break header;
                }
            }
        };
        Ok(Self {
            lines,
            header,
            line_no,
            last_ts: HashMap::new(),
            _scalar: PhantomData,
        })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn check(&mut self, r: &CropRecord<T>) -> Result<()> {
        let line = self.line_no;
        let schema = |msg: String| Error::Schema { line, msg };
        if r.feature.len() != self.header.feature_dim {
            return Err(schema(format!(
                "feature length {} does not match feature_dim {}",
                r.feature.len(),
                self.header.feature_dim
            )));
        }
        if r.camera_id >= self.header.num_cameras {
            return Err(schema(format!(
                "camera {} outside 0..{}",
                r.camera_id, self.header.num_cameras
            )));
        }
        if r.timestamp_ms > self.header.duration_ms {
            return Err(schema(format!(
                "timestamp {} beyond duration {}",
                r.timestamp_ms, self.header.duration_ms
            )));
        }
        let last = self.last_ts.entry(r.camera_id).or_insert(0);
        if r.timestamp_ms < *last {
            return Err(schema(format!(
                "timestamp decreases on camera {}",
                r.camera_id
            )));
        }
        *last = r.timestamp_ms;
        Ok(())
    }
}

impl<R: BufRead, T: Scalar> Iterator for StreamReader<R, T> {
    type Item = Result<CropRecord<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parsed = serde_json::from_str::<RecordLine<T>>(&line)
                .map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })
                .and_then(|l| l.into_record(line_no))
                .and_then(|r| self.check(&r).map(|_| r));
            return Some(parsed);
        }
    }
}

/// Reads a whole stream into memory.
pub fn parse_stream<T: Scalar, R: BufRead>(
    reader: R,
) -> Result<(StreamHeader, Vec<CropRecord<T>>)> {
    let reader = StreamReader::new(reader)?;
    let header = reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

pub fn write_stream<'a, T, W, I>(mut out: W, header: &StreamHeader, records: I) -> Result<()>
where
    T: Scalar,
    W: Write,
    I: IntoIterator<Item = &'a CropRecord<T>>,
{
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, &RecordLine::from_record(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Merges several timestamp-sorted streams (typically one per camera) into a
/// single stream sorted by `(timestamp, camera)`.
pub fn merge_streams<T: Scalar>(
    streams: Vec<(StreamHeader, Vec<CropRecord<T>>)>,
) -> Result<(StreamHeader, Vec<CropRecord<T>>)> {
    let mut iter = streams.iter().map(|(h, _)| *h);
    let mut header = iter.next().ok_or(Error::Empty)?;
    for h in iter {
        if h.feature_dim != header.feature_dim {
            return Err(Error::Config(
                "merged streams disagree on feature_dim".into(),
            ));
        }
        if (h.fps - header.fps).abs() > f64::EPSILON {
            return Err(Error::Config("merged streams disagree on fps".into()));
        }
        header.num_cameras = header.num_cameras.max(h.num_cameras);
        header.duration_ms = header.duration_ms.max(h.duration_ms);
    }
    let merged = streams
        .into_iter()
        .map(|(_, records)| records)
        .kmerge_by(|a, b| (a.timestamp_ms, a.camera_id) < (b.timestamp_ms, b.camera_id))
        .collect();
    Ok((header, merged))
}
