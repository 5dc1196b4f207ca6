//! Textbook DBSCAN kept as an independent oracle for [`super::dbscan`]:
//! region queries are recomputed on demand and nothing is cached.

use super::{ClusterLabels, DbscanConfig};
use crate::{Metric, Scalar};

#[derive(Clone, Copy, PartialEq)]
enum State {
    Unvisited,
    Noise,
    Member(usize),
}

fn region<T: Scalar, P: AsRef<[T]>>(points: &[P], p: usize, eps: T, metric: Metric) -> Vec<usize> {
    (0..points.len())
        .filter(|&q| metric.distance(points[p].as_ref(), points[q].as_ref()) <= eps)
        .collect()
}

pub fn naive_dbscan<T: Scalar, P: AsRef<[T]>>(
    points: &[P],
    cfg: &DbscanConfig,
    metric: Metric,
) -> ClusterLabels {
    let eps = T::of(cfg.eps);
    let n = points.len();
    let mut state = vec![State::Unvisited; n];
    let mut core = vec![false; n];
    let mut cluster = 0;
    for p in 0..n {
        if state[p] != State::Unvisited {
            continue;
        }
        let neighbours = region(points, p, eps, metric);
        if neighbours.len() < cfg.min_pts {
            state[p] = State::Noise;
            continue;
        }
        core[p] = true;
        state[p] = State::Member(cluster);
        let mut seeds: Vec<usize> = neighbours.into_iter().filter(|&q| q != p).collect();
        let mut i = 0;
        while i < seeds.len() {
            let q = seeds[i];
            i += 1;
            match state[q] {
                State::Noise => state[q] = State::Member(cluster),
                State::Member(_) => continue,
                State::Unvisited => {
                    state[q] = State::Member(cluster);
                    let nq = region(points, q, eps, metric);
                    if nq.len() >= cfg.min_pts {
                        core[q] = true;
                        seeds.extend(nq);
                    }
                }
            }
        }
        cluster += 1;
    }
    ClusterLabels {
        labels: state
            .into_iter()
            .map(|s| match s {
                State::Member(c) => Some(c),
                _ => None,
            })
            .collect(),
        core,
        num_clusters: cluster,
        eps: cfg.eps,
        min_pts: cfg.min_pts,
        metric,
    }
}
