//! Seeded synthetic crop streams: identities are Gaussian clusters in
//! feature space, crops arrive per frame and are spread over cameras by
//! fixed arrival weights.

use std::collections::VecDeque;
use std::marker::PhantomData;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_feature, BBox, CropRecord, Keypoint, StreamHeader, NUM_KEYPOINTS};
use crate::{Error, Result, Scalar};

const FRAME_W: f64 = 1920.0;
const FRAME_H: f64 = 1080.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    /// Poisson number of crops per frame, cameras drawn by weight.
    #[default]
    Poisson,
    /// Every camera with non-zero weight emits exactly one crop per frame.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_cameras: u16,
    pub feature_dim: usize,
    pub fps: f64,
    pub duration_ms: u64,
    pub num_identities: u32,
    /// Expected crops per identity per second (Poisson arrivals).
    pub crops_per_identity_rate: f64,
    /// Per-dimension standard deviation around an identity centroid.
    pub cluster_spread: f64,
    /// Expected distance between identity centroids before normalization.
    pub separation: f64,
    /// One weight per camera; empty means uniform.
    pub camera_weights: Vec<f64>,
    pub noise_fraction: f64,
    pub arrival: Arrival,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_cameras: 8,
            feature_dim: super::DEFAULT_FEATURE_DIM,
            fps: 30.0,
            duration_ms: 3_600_000,
            num_identities: 10,
            crops_per_identity_rate: 1.0,
            cluster_spread: 0.02,
            separation: 1.0,
            camera_weights: Vec::new(),
            noise_fraction: 0.05,
            arrival: Arrival::Poisson,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn header(&self) -> StreamHeader {
        StreamHeader {
            num_cameras: self.num_cameras,
            feature_dim: self.feature_dim,
            fps: self.fps,
            duration_ms: self.duration_ms,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        if self.camera_weights.is_empty() {
            vec![1.0 / self.num_cameras as f64; self.num_cameras as usize]
        } else {
            self.camera_weights.clone()
        }
    }

    /// Number of frames with a timestamp strictly below `duration_ms`.
    pub fn num_frames(&self) -> u64 {
        let exact = self.duration_ms as f64 * self.fps / 1000.0;
        exact.ceil() as u64
    }

    pub fn frame_timestamp(&self, frame: u64) -> u64 {
        (frame as f64 * 1000.0 / self.fps).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.header().validate()?;
        let w = self.weights();
        if w.len() != self.num_cameras as usize {
            return Err(Error::Config(
                "one camera weight per camera required".into(),
            ));
        }
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "camera weights must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::Config("cluster_spread must be positive".into()));
        }
        if !(self.separation > 0.0) {
            return Err(Error::Config("separation must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(Error::Config("noise_fraction must lie in [0, 1]".into()));
        }
        if self.num_identities == 0 {
            return Err(Error::Config("num_identities must be at least 1".into()));
        }
        if !(self.crops_per_identity_rate >= 0.0) {
            return Err(Error::Config(
                "crops_per_identity_rate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Lazily generated synthetic stream, sorted by `(timestamp, camera)`.
pub struct SynthIter<T> {
    spec: SynthSpec,
    rng: ChaCha8Rng,
    centroids: Vec<Vec<f64>>,
    cameras: WeightedIndex<f64>,
    per_frame: Option<Poisson<f64>>,
    frame: u64,
    num_frames: u64,
    pending: VecDeque<CropRecord<T>>,
    _scalar: PhantomData<T>,
}

pub fn synth_iter<T: Scalar>(spec: &SynthSpec) -> Result<SynthIter<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    // random directions scaled so that centroid pairs sit ~`separation` apart
    let radius = spec.separation / std::f64::consts::SQRT_2;
    let centroids = (0..spec.num_identities)
        .map(|_| {
            let dir: Vec<f64> = (0..spec.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let dir = normalize_feature(&dir).expect("gaussian draw is non-zero");
            dir.into_iter().map(|x| x * radius).collect()
        })
        .collect();
    let cameras = WeightedIndex::new(spec.weights())
        .map_err(|e| Error::Config(format!("camera weights: {e}")))?;
    let lambda = spec.num_identities as f64 * spec.crops_per_identity_rate / spec.fps;
    let per_frame = if lambda > 0.0 {
        Some(Poisson::new(lambda).map_err(|e| Error::Config(format!("arrival rate: {e}")))?)
    } else {
        None
    };
    Ok(SynthIter {
        num_frames: spec.num_frames(),
        spec: spec.clone(),
        rng,
        centroids,
        cameras,
        per_frame,
        frame: 0,
        pending: VecDeque::new(),
        _scalar: PhantomData,
    })
}

/// Materialized form of [`synth_iter`].
pub fn synth_stream<T: Scalar>(spec: &SynthSpec) -> Result<(StreamHeader, Vec<CropRecord<T>>)> {
    Ok((spec.header(), synth_iter(spec)?.collect()))
}

impl<T: Scalar> SynthIter<T> {
    pub fn header(&self) -> StreamHeader {
        self.spec.header()
    }

    fn make_record(&mut self, frame: u64, camera: u16) -> CropRecord<T> {
        let rng = &mut self.rng;
        let noise = self.spec.noise_fraction > 0.0 && rng.random_bool(self.spec.noise_fraction);
        let identity = rng.random_range(0..self.spec.num_identities);

        let w = rng.random_range(40.0..120.0);
        let h = 2.4 * w;
        let x = rng.random_range(0.0..FRAME_W - w);
        let y = rng.random_range(0.0..FRAME_H - h);
        let conf_range = if noise { 0.0..0.45 } else { 0.6..1.0 };
        let mut keypoints = [Keypoint::default(); NUM_KEYPOINTS];
        for kp in keypoints.iter_mut() {
            *kp = Keypoint {
                x: T::of(x + rng.random_range(0.0..w)),
                y: T::of(y + rng.random_range(0.0..h)),
                confidence: T::of(rng.random_range(conf_range.clone())),
            };
        }

        let raw: Vec<f64> = if noise {
            (0..self.spec.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect()
        } else {
            let sigma = self.spec.cluster_spread;
            self.centroids[identity as usize]
                .iter()
                .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let feature = normalize_feature(&raw)
            .unwrap_or_else(|_| {
                let mut v = vec![0.0; raw.len()];
                v[0] = 1.0;
                v
            })
            .into_iter()
            .map(T::of)
            .collect();

        CropRecord {
            frame_index: frame,
            timestamp_ms: self.spec.frame_timestamp(frame),
            camera_id: camera,
            track_id: (!noise).then_some(identity as i64),
            bbox: BBox::new(T::of(x), T::of(y), T::of(w), T::of(h)),
            keypoints,
            feature,
            gt_identity: (!noise).then_some(identity),
        }
    }

    fn fill_frame(&mut self, frame: u64) {
        let mut cams: Vec<u16> = match self.spec.arrival {
            Arrival::Uniform => {
                let weights = self.spec.weights();
                (0..self.spec.num_cameras)
                    .filter(|&c| weights[c as usize] > 0.0)
                    .collect()
            }
            Arrival::Poisson => {
                let count = match &self.per_frame {
                    Some(p) => p.sample(&mut self.rng) as usize,
                    None => 0,
                };
                (0..count)
                    .map(|_| self.cameras.sample(&mut self.rng) as u16)
                    .collect()
            }
        };
        cams.sort_unstable();
        for cam in cams {
            let r = self.make_record(frame, cam);
            self.pending.push_back(r);
        }
    }
}

impl<T: Scalar> Iterator for SynthIter<T> {
    type Item = CropRecord<T>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.pending.is_empty() {
            if self.frame >= self.num_frames {
                return None;
            }
            let f = self.frame;
            self.frame += 1;
            self.fill_frame(f);
        }
        self.pending.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::write_stream;

    fn small() -> SynthSpec {
        SynthSpec {
            num_cameras: 3,
            feature_dim: 8,
            duration_ms: 120_000,
            num_identities: 4,
            crops_per_identity_rate: 2.0,
            camera_weights: vec![0.5, 0.3, 0.2],
            rng_seed: 42,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = small();
        let bytes = |s: &SynthSpec| {
            let (h, recs) = synth_stream::<f64>(s).unwrap();
            let mut buf = Vec::new();
            write_stream(&mut buf, &h, &recs).unwrap();
            buf
        };
        assert_eq!(bytes(&spec), bytes(&spec));
        let other = SynthSpec {
            rng_seed: 43,
            ..spec.clone()
        };
        assert_ne!(bytes(&spec), bytes(&other));
    }

    #[test]
    fn features_are_unit_and_timestamps_sorted() {
        let (_, recs) = synth_stream::<f32>(&small()).unwrap();
        assert!(!recs.is_empty());
        for r in &recs {
            let n: f64 = r
                .feature
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        for cam in 0..3 {
            let ts: Vec<_> = recs
                .iter()
                .filter(|r| r.camera_id == cam)
                .map(|r| r.timestamp_ms)
                .collect();
            assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn single_identity() {
        let spec = SynthSpec {
            num_identities: 1,
            noise_fraction: 0.0,
            ..small()
        };
        let (_, recs) = synth_stream::<f64>(&spec).unwrap();
        assert!(recs.iter().all(|r| r.gt_identity == Some(0)));
    }

    #[test]
    fn per_camera_counts_within_three_sigma() {
        let spec = small();
        let (_, recs) = synth_stream::<f64>(&spec).unwrap();
        let n = recs.len() as f64;
        for (cam, &p) in spec.weights().iter().enumerate() {
            let got = recs.iter().filter(|r| r.camera_id as usize == cam).count() as f64;
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!(
                (got - n * p).abs() <= 3.0 * sd,
                "camera {cam}: {got} vs {}",
                n * p
            );
        }
    }

    #[test]
    fn noise_records_have_weak_poses() {
        let spec = SynthSpec {
            noise_fraction: 1.0,
            ..small()
        };
        let (_, recs) = synth_stream::<f64>(&spec).unwrap();
        assert!(recs.iter().all(|r| r.gt_identity.is_none()));
        assert!(recs
            .iter()
            .all(|r| r.keypoints.iter().all(|k| k.confidence < 0.5)));
    }

    #[test]
    fn uniform_arrivals_one_per_camera_per_frame() {
        let spec = SynthSpec {
            arrival: Arrival::Uniform,
            duration_ms: 10_000,
            ..small()
        };
        let (_, recs) = synth_stream::<f64>(&spec).unwrap();
        assert_eq!(recs.len() as u64, 3 * spec.num_frames());
        assert_eq!(spec.num_frames(), 300);
    }

    #[test]
    fn rejects_bad_weights() {
        let spec = SynthSpec {
            camera_weights: vec![0.5, 0.5, 0.5],
            ..small()
        };
        assert!(spec.validate().is_err());
        let spec = SynthSpec {
            cluster_spread: 0.0,
            ..small()
        };
        assert!(spec.validate().is_err());
    }
}
