use crate::stream::normalize_feature;
use crate::{Metric, Scalar};

/// Minimal multi-camera identity assignment: each query takes the closest
/// gallery identity within `threshold`, or a fresh id. Matched gallery
/// features drift toward their queries by an exponential moving average.
#[derive(Debug, Clone)]
pub struct GlobalMatcher<T> {
    gallery: Vec<(u32, Vec<T>)>,
    next_id: u32,
    pub threshold: f64,
    pub momentum: f64,
    pub metric: Metric,
}

impl<T: Scalar> GlobalMatcher<T> {
    pub fn new(threshold: f64, momentum: f64, metric: Metric) -> Self {
        Self {
            gallery: Vec::new(),
            next_id: 0,
            threshold,
            momentum,
            metric,
        }
    }

    pub fn with_gallery(
        gallery: Vec<(u32, Vec<T>)>,
        threshold: f64,
        momentum: f64,
        metric: Metric,
    ) -> Self {
        let next_id = gallery.iter().map(|(id, _)| id + 1).max().unwrap_or(0);
        Self {
            gallery,
            next_id,
            threshold,
            momentum,
            metric,
        }
    }

    pub fn gallery(&self) -> &[(u32, Vec<T>)] {
        &self.gallery
    }

    pub fn assign(&mut self, query: &[T]) -> u32 {
        let best = self
            .gallery
            .iter()
            .enumerate()
            .map(|(slot, (_, g))| (self.metric.distance(query, g), slot))
            .min_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("finite distances")
                    .then(a.1.cmp(&b.1))
            });
        match best {
            Some((d, slot)) if d.as_f64() <= self.threshold => {
                let m = T::of(self.momentum);
                let entry = &mut self.gallery[slot];
                let blended: Vec<T> = entry
                    .1
                    .iter()
                    .zip(query)
                    .map(|(&g, &q)| m * g + (T::one() - m) * q)
                    .collect();
                // opposite vectors can cancel out; keep the old feature then
                if let Ok(unit) = normalize_feature(&blended) {
                    entry.1 = unit;
                }
                entry.0
            }
            _ => {
                let id = self.next_id;
                self.next_id += 1;
                self.gallery.push((id, query.to_vec()));
                id
            }
        }
    }
}

/// Assigns every query in order against `gallery`, growing it as needed.
pub fn global_match<T: Scalar>(
    queries: &[Vec<T>],
    gallery: Vec<(u32, Vec<T>)>,
    threshold: f64,
    momentum: f64,
    metric: Metric,
) -> Vec<u32> {
    let mut m = GlobalMatcher::with_gallery(gallery, threshold, momentum, metric);
    queries.iter().map(|q| m.assign(q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{synth_stream, SynthSpec};
    use std::collections::HashMap;

    #[test]
    fn empty_gallery_mints_zero() {
        assert_eq!(
            global_match(
                &[vec![1.0f64, 0.0]],
                Vec::new(),
                0.5,
                0.9,
                Metric::Euclidean
            ),
            vec![0]
        );
    }

    #[test]
    fn identical_query_matches_gallery_id() {
        let gallery = vec![(7u32, vec![0.0f64, 1.0]), (3, vec![1.0, 0.0])];
        let ids = global_match(
            &[vec![1.0, 0.0], vec![-1.0, 0.0]],
            gallery,
            0.1,
            0.9,
            Metric::Euclidean,
        );
        assert_eq!(ids, vec![3, 8]);
    }

    #[test]
    fn gallery_feature_moves_toward_query() {
        let mut m = GlobalMatcher::with_gallery(
            vec![(0u32, vec![1.0f64, 0.0])],
            1.0,
            0.5,
            Metric::Euclidean,
        );
        let q = [0.6, 0.8];
        assert_eq!(m.assign(&q), 0);
        let g = &m.gallery()[0].1;
        assert!((g[0] * g[0] + g[1] * g[1] - 1.0).abs() < 1e-12);
        assert!(
            Metric::Euclidean.distance(g.as_slice(), &q)
                < Metric::Euclidean.distance(&[1.0, 0.0], &q)
        );
    }

    #[test]
    fn two_well_separated_identities_are_recovered() {
        let spec = SynthSpec {
            num_identities: 2,
            noise_fraction: 0.0,
            duration_ms: 120_000,
            rng_seed: 11,
            ..SynthSpec::default()
        };
        let (_, recs) = synth_stream::<f64>(&spec).unwrap();
        let queries: Vec<Vec<f64>> = recs.iter().map(|r| r.feature.clone()).collect();
        let ids = global_match(&queries, Vec::new(), 0.4, 0.9, Metric::Euclidean);
        let mut votes: HashMap<(u32, u32), usize> = HashMap::new();
        for (id, r) in ids.iter().zip(&recs) {
            *votes.entry((*id, r.gt_identity.unwrap())).or_default() += 1;
        }
        let mut best: HashMap<u32, usize> = HashMap::new();
        for ((id, _), n) in votes {
            let e = best.entry(id).or_default();
            *e = (*e).max(n);
        }
        let agree: usize = best.values().sum();
        assert!(
            agree as f64 >= 0.99 * recs.len() as f64,
            "{agree} of {}",
            recs.len()
        );
        assert!(*ids.iter().max().unwrap() < 2 + (recs.len() as u32) / 100);
    }
}
