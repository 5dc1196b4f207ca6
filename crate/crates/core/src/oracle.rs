//! Randomized cross-checks of the fast algorithms against exhaustive or
//! textbook versions. Used by the `oracle` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::budget::{budget_memory, budget_standard, CropCounts, Proportions};
use crate::cluster::reference::naive_dbscan;
use crate::cluster::{dbscan, DbscanConfig};
use crate::sds::{brute_force_dispersion, greedy_kcenter};
use crate::Metric;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub instances: usize,
    pub violations: usize,
    /// Check-specific figure of merit (worst greedy/optimal ratio for the
    /// dispersion check, otherwise 1 when everything matched).
    pub worst: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Greedy dispersion must reach half of the exhaustive optimum.
pub fn check_sds_bound(instances: usize, seed: u64) -> OracleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut violations, mut worst) = (0, f64::INFINITY);
    for _ in 0..instances {
        let n = rng.random_range(2..=12);
        let k = rng.random_range(2..=5usize.min(n));
        let pts = random_points(&mut rng, n, 3);
        let greedy = greedy_kcenter(&pts, k, Metric::Euclidean)
            .objective
            .expect("k >= 2");
        let best = brute_force_dispersion(&pts, k, Metric::Euclidean)
            .expect("small instance")
            .objective
            .expect("k >= 2");
        let ratio = greedy / best;
        worst = worst.min(ratio);
        if ratio < 0.5 {
            violations += 1;
        }
    }
    OracleCheck {
        name: "sds_half_optimal",
        instances,
        violations,
        worst,
    }
}

/// Indexed DBSCAN must partition exactly like the textbook version.
pub fn check_dbscan(instances: usize, max_n: usize, seed: u64) -> OracleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=max_n);
        let blobs = rng.random_range(1..=6);
        let centres = random_points(&mut rng, blobs, 2);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = &centres[i % blobs];
                c.iter()
                    .map(|x| x * 10.0 + rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let cfg = DbscanConfig {
            eps: rng.random_range(0.1..1.5),
            min_pts: rng.random_range(1..=8),
        };
        let fast = dbscan(&pts, &cfg, Metric::Euclidean);
        let slow = naive_dbscan(&pts, &cfg, Metric::Euclidean);
        if fast.canonical() != slow.canonical() || fast.core != slow.core {
            violations += 1;
        }
    }
    OracleCheck {
        name: "dbscan_matches_reference",
        instances,
        violations,
        worst: if violations == 0 { 1.0 } else { 0.0 },
    }
}

/// Standard budgets sum to `k`; memory budgets end at `k` and never shrink.
pub fn check_budgets(instances: usize, seed: u64) -> OracleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..instances {
        let cams = rng.random_range(1..=10);
        let segs = rng.random_range(1..=6);
        let mut m: Vec<Vec<u64>> = (0..cams)
            .map(|_| (0..segs).map(|_| rng.random_range(0..200)).collect())
            .collect();
        m[0][segs - 1] += 1;
        let counts = CropCounts::new(m).expect("rectangular");
        let k = rng.random_range(1..=5000);
        let std = budget_standard(&counts, k, Proportions::Oracle).expect("non-empty");
        let mem = budget_memory(&counts, k, Proportions::Oracle).expect("non-empty");
        let monotone = mem
            .budgets
            .iter()
            .all(|row| row.windows(2).all(|w| w[0] <= w[1]));
        if std.total() != k || mem.segment_total(segs - 1) != k || !monotone {
            violations += 1;
        }
    }
    OracleCheck {
        name: "budget_conservation",
        instances,
        violations,
        worst: if violations == 0 { 1.0 } else { 0.0 },
    }
}

pub fn run_all(seed: u64) -> Vec<OracleCheck> {
    vec![
        check_sds_bound(1000, seed),
        check_dbscan(200, 300, seed),
        check_budgets(500, seed),
    ]
}
