//! Density-based pseudo-labeling of selected subsets.

pub mod reference;

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Metric, Result, Scalar};

const PAR_THRESHOLD: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: 0.6,
            min_pts: 4,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.min_pts == 0 {
            return Err(Error::Config("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    /// Cluster id per point, `None` for noise. Ids are contiguous from 0.
    pub labels: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub num_clusters: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub metric: Metric,
}

impl ClusterLabels {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Clusters as sorted member lists, ordered by smallest member; noise
    /// points form no group. Two labelings describe the same partition iff
    /// their canonical forms are equal.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        canonical_partition(&self.labels)
    }
}

pub fn canonical_partition(labels: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            groups.entry(*c).or_default().push(i);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

fn neighborhoods<T: Scalar, P: AsRef<[T]> + Sync>(
    points: &[P],
    eps: T,
    metric: Metric,
) -> Vec<Vec<usize>> {
    let n = points.len();
    if n >= PAR_THRESHOLD {
        return (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter(|&j| metric.distance(points[i].as_ref(), points[j].as_ref()) <= eps)
                    .collect()
            })
            .collect();
    }
    let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if metric.distance(points[i].as_ref(), points[j].as_ref()) <= eps {
                nb[i].push(j);
                nb[j].push(i);
            }
        }
    }
    nb
}

/// DBSCAN with an inclusive radius. A point is core when at least `min_pts`
/// points (itself included) lie within `eps`. Clusters are grown from core
/// points in index order, so a border point reachable from several clusters
/// belongs to the one whose lowest-index core point comes first.
pub fn dbscan<T: Scalar, P: AsRef<[T]> + Sync>(
    points: &[P],
    cfg: &DbscanConfig,
    metric: Metric,
) -> ClusterLabels {
    let nb = neighborhoods(points, T::of(cfg.eps), metric);
    let core: Vec<bool> = nb.iter().map(|v| v.len() >= cfg.min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut num_clusters = 0;
    let mut queue = VecDeque::new();
    for start in 0..points.len() {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        let c = num_clusters;
        num_clusters += 1;
        labels[start] = Some(c);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &nb[p] {
                if labels[q].is_none() {
                    labels[q] = Some(c);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    ClusterLabels {
        labels,
        core,
        num_clusters,
        eps: cfg.eps,
        min_pts: cfg.min_pts,
        metric,
    }
}

/// Fraction of clustered points that carry their cluster's majority identity.
pub fn cluster_purity(labels: &[Option<usize>], gt: &[u32]) -> Result<f64> {
    assert_eq!(labels.len(), gt.len(), "one identity per point");
    let mut tallies: HashMap<usize, HashMap<u32, usize>> = HashMap::new();
    let mut clustered = 0usize;
    for (l, &id) in labels.iter().zip(gt) {
        if let Some(c) = l {
            *tallies.entry(*c).or_default().entry(id).or_default() += 1;
            clustered += 1;
        }
    }
    if clustered == 0 {
        return Err(Error::NoClusteredPoints);
    }
    let majority: usize = tallies
        .values()
        .map(|t| t.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / clustered as f64)
}
