//! Per-camera, per-segment crop budgets proportional to the number of crops
//! each camera delivered in each segment.
//!
//! With `n[i][t]` the filter-passing crops of camera `i` in segment `t` and
//! `N` their total, the standard budget is `k * n[i][t] / N` and the memory
//! budget is `k * (n[i][0] + ... + n[i][t]) / N`. Fractions are exact
//! rationals; integers come from largest-remainder rounding.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

type Frac = Ratio<u128>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    #[default]
    Standard,
    Memory,
}

/// Where the camera/segment proportions come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proportions {
    /// Full-stream totals, known only offline.
    #[default]
    Oracle,
    /// Running totals: segment `t` only sees counts up to `t`.
    Causal,
}

impl fmt::Display for Proportions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proportions::Oracle => "oracle",
            Proportions::Causal => "causal",
        })
    }
}

impl FromStr for Proportions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Proportions::Oracle),
            "causal" => Ok(Proportions::Causal),
            other => Err(Error::Config(format!("unknown budget mode `{other}`"))),
        }
    }
}

/// `n[camera][segment]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropCounts {
    counts: Vec<Vec<u64>>,
}

impl CropCounts {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let segs = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || segs == 0 || counts.iter().any(|row| row.len() != segs) {
            return Err(Error::Config(
                "crop counts must be a non-empty rectangular matrix".into(),
            ));
        }
        Ok(Self { counts })
    }

    pub fn zeros(num_cameras: usize, num_segments: usize) -> Self {
        Self {
            counts: vec![vec![0; num_segments]; num_cameras],
        }
    }

    pub fn num_cameras(&self) -> usize {
        self.counts.len()
    }

    pub fn num_segments(&self) -> usize {
        self.counts[0].len()
    }

    pub fn get(&self, camera: usize, segment: usize) -> u64 {
        self.counts[camera][segment]
    }

    pub fn add(&mut self, camera: usize, segment: usize, n: u64) {
        self.counts[camera][segment] += n;
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn segment_total(&self, segment: usize) -> u64 {
        self.counts.iter().map(|row| row[segment]).sum()
    }

    /// Share of all crops that came from `camera`.
    pub fn camera_share(&self, camera: usize) -> f64 {
        self.counts[camera].iter().sum::<u64>() as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetMatrix {
    pub mode: BudgetMode,
    pub proportions: Proportions,
    pub k: u64,
    /// Unrounded budgets.
    pub fractional: Vec<Vec<f64>>,
    /// `b[camera][segment]`.
    pub budgets: Vec<Vec<u64>>,
}

impl BudgetMatrix {
    pub fn segment_total(&self, segment: usize) -> u64 {
        self.budgets.iter().map(|row| row[segment]).sum()
    }

    pub fn total(&self) -> u64 {
        self.budgets.iter().flatten().sum()
    }
}

/// Total subset size from instances per identity.
pub fn subset_size(instances_per_identity: u64, num_identities: u64) -> u64 {
    instances_per_identity * num_identities
}

/// Values that can be split into an integer floor and a remainder for
/// largest-remainder apportionment.
pub trait Apportion: Copy {
    fn floor_u64(self) -> u64;
    /// Orders by the part above the floor.
    fn cmp_remainder(&self, other: &Self) -> Ordering;
}

macro_rules! apportion_float {
    ($($t:ty),*) => {$(
        impl Apportion for $t {
            fn floor_u64(self) -> u64 {
                self.max(0.0).floor() as u64
            }
            fn cmp_remainder(&self, other: &Self) -> Ordering {
                self.max(0.0).fract().total_cmp(&other.max(0.0).fract())
            }
        }
    )*};
}
apportion_float!(f32, f64);

macro_rules! apportion_ratio {
    ($($t:ty),*) => {$(
        impl Apportion for Ratio<$t> {
            fn floor_u64(self) -> u64 {
                self.to_integer() as u64
            }
            fn cmp_remainder(&self, other: &Self) -> Ordering {
                self.fract().cmp(&other.fract())
            }
        }
    )*};
}
apportion_ratio!(u64, u128);

/// Largest-remainder rounding of one group to an integer `target`. Ties on
/// the remainder go to the lowest index.
pub fn round_conserving<F: Apportion>(values: &[F], target: u64) -> Result<Vec<u64>> {
    let mut out: Vec<u64> = values.iter().map(|v| v.floor_u64()).collect();
    let floor_sum: u64 = out.iter().sum();
    let deficit = target
        .checked_sub(floor_sum)
        .filter(|&d| d as usize <= values.len())
        .ok_or(Error::Rounding {
            target,
            floor_sum,
            len: values.len(),
        })?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps lower indices first among equal remainders
    order.sort_by(|&a, &b| values[b].cmp_remainder(&values[a]));
    for &i in order.iter().take(deficit as usize) {
        out[i] += 1;
    }
    Ok(out)
}

fn to_f64(f: &Frac) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

/// Fractional standard budgets `f[i][t]`, exact.
fn standard_fractions(
    counts: &CropCounts,
    k: u64,
    proportions: Proportions,
) -> Result<(Vec<Vec<Frac>>, Vec<u64>)> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    let (cams, segs) = (counts.num_cameras(), counts.num_segments());
    let k = k as u128;
    match proportions {
        Proportions::Oracle => {
            let f = (0..cams)
                .map(|i| {
                    (0..segs)
                        .map(|t| Frac::new(k * counts.get(i, t) as u128, total as u128))
                        .collect()
                })
                .collect();
            Ok((f, Vec::new()))
        }
        Proportions::Causal => {
            // Segment targets extrapolate the running crop rate to the whole
            // stream; the final segment takes whatever is left of k.
            let mut f = vec![vec![Frac::from_integer(0); segs]; cams];
            let mut targets = Vec::with_capacity(segs);
            let mut remaining = k;
            let mut seen: u128 = 0;
            for t in 0..segs {
                let n_t = counts.segment_total(t) as u128;
                seen += n_t;
                let k_t = if n_t == 0 {
                    0
                } else if t + 1 == segs {
                    remaining
                } else {
                    // round(k * n_t * (t+1) / (seen * T)), half up
                    let num = k * n_t * (t as u128 + 1);
                    let den = seen * segs as u128;
                    ((2 * num + den) / (2 * den)).min(remaining)
                };
                remaining -= k_t;
                targets.push(k_t as u64);
                if n_t > 0 {
                    for (i, row) in f.iter_mut().enumerate() {
                        row[t] = Frac::new(k_t * counts.get(i, t) as u128, n_t);
                    }
                }
            }
            Ok((f, targets))
        }
    }
}

fn column(m: &[Vec<Frac>], t: usize) -> Vec<Frac> {
    m.iter().map(|row| row[t]).collect()
}

pub fn budget_standard(
    counts: &CropCounts,
    k: u64,
    proportions: Proportions,
) -> Result<BudgetMatrix> {
    let (f, targets) = standard_fractions(counts, k, proportions)?;
    let (cams, segs) = (counts.num_cameras(), counts.num_segments());
    let mut budgets = vec![vec![0u64; segs]; cams];
    match proportions {
        Proportions::Oracle => {
            // one group: the whole matrix, camera-major
            let flat: Vec<Frac> = f.iter().flatten().copied().collect();
            let rounded = round_conserving(&flat, k)?;
            for (cell, b) in rounded.into_iter().enumerate() {
                budgets[cell / segs][cell % segs] = b;
            }
        }
        Proportions::Causal => {
            for (t, &target) in targets.iter().enumerate() {
                for (i, b) in round_conserving(&column(&f, t), target)?
                    .into_iter()
                    .enumerate()
                {
                    budgets[i][t] = b;
                }
            }
        }
    }
    Ok(BudgetMatrix {
        mode: BudgetMode::Standard,
        proportions,
        k,
        fractional: f
            .iter()
            .map(|row| row.iter().map(to_f64).collect())
            .collect(),
        budgets,
    })
}

/// Memory-mode budgets: cumulative standard fractions. Intermediate segments
/// are floored and the final segment is apportioned to exactly `k`, which
/// keeps every camera's budget non-decreasing in time.
pub fn budget_memory(
    counts: &CropCounts,
    k: u64,
    proportions: Proportions,
) -> Result<BudgetMatrix> {
    let (f, _) = standard_fractions(counts, k, proportions)?;
    let segs = counts.num_segments();
    let cumulative: Vec<Vec<Frac>> = f
        .iter()
        .map(|row| {
            row.iter()
                .scan(Frac::from_integer(0), |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let mut budgets: Vec<Vec<u64>> = cumulative
        .iter()
        .map(|row| row.iter().map(|v| v.floor_u64()).collect())
        .collect();
    let last = segs - 1;
    let final_total: Frac = column(&cumulative, last).into_iter().sum();
    let target = final_total.to_integer() as u64;
    for (i, b) in round_conserving(&column(&cumulative, last), target)?
        .into_iter()
        .enumerate()
    {
        budgets[i][last] = b;
    }
    Ok(BudgetMatrix {
        mode: BudgetMode::Memory,
        proportions,
        k,
        fractional: cumulative
            .iter()
            .map(|row| row.iter().map(to_f64).collect())
            .collect(),
        budgets,
    })
}

pub fn budget(
    counts: &CropCounts,
    k: u64,
    mode: BudgetMode,
    proportions: Proportions,
) -> Result<BudgetMatrix> {
    match mode {
        BudgetMode::Standard => budget_standard(counts, k, proportions),
        BudgetMode::Memory => budget_memory(counts, k, proportions),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClampedBudget {
    /// Budgets after clamping (and redistribution when enabled).
    pub budgets: Vec<Vec<u64>>,
    /// Per-cell `max(0, budget - available)` before redistribution.
    pub shortfall: Vec<Vec<u64>>,
    /// Per-segment shortfall left after redistribution.
    pub unfilled: Vec<u64>,
}

/// Caps every cell at what is available. With `redistribute`, a segment's
/// shortfall is spread over the cameras with slack in that segment,
/// proportionally to their slack.
pub fn clamp_to_available(
    budgets: &[Vec<u64>],
    available: &[Vec<u64>],
    redistribute: bool,
) -> ClampedBudget {
    let cams = budgets.len();
    let segs = budgets.first().map_or(0, Vec::len);
    let mut out = vec![vec![0u64; segs]; cams];
    let mut shortfall = vec![vec![0u64; segs]; cams];
    let mut unfilled = vec![0u64; segs];
    for t in 0..segs {
        for i in 0..cams {
            out[i][t] = budgets[i][t].min(available[i][t]);
            shortfall[i][t] = budgets[i][t].saturating_sub(available[i][t]);
        }
        let short: u64 = (0..cams).map(|i| shortfall[i][t]).sum();
        unfilled[t] = short;
        if !redistribute || short == 0 {
            continue;
        }
        let slack: Vec<u64> = (0..cams).map(|i| available[i][t] - out[i][t]).collect();
        let total_slack: u64 = slack.iter().sum();
        let moved = short.min(total_slack);
        if moved == 0 {
            continue;
        }
        let shares: Vec<Frac> = slack
            .iter()
            .map(|&s| Frac::new(moved as u128 * s as u128, total_slack as u128))
            .collect();
        let extra = round_conserving(&shares, moved).expect("shares sum to the moved total");
        for i in 0..cams {
            out[i][t] += extra[i];
        }
        unfilled[t] = short - moved;
    }
    ClampedBudget {
        budgets: out,
        shortfall,
        unfilled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(m: &[&[u64]]) -> CropCounts {
        CropCounts::new(m.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn subset_size_examples() {
        assert_eq!(subset_size(20, 702), 14_040);
        assert_eq!(subset_size(1, 1), 1);
        assert_eq!(subset_size(25, 702), 17_550);
    }

    #[test]
    fn standard_uniform_2x2() {
        let b = budget_standard(&counts(&[&[25, 25], &[25, 25]]), 40, Proportions::Oracle).unwrap();
        assert_eq!(b.budgets, vec![vec![10, 10], vec![10, 10]]);
    }

    #[test]
    fn standard_single_cell_takes_all() {
        let b = budget_standard(&counts(&[&[17]]), 33, Proportions::Oracle).unwrap();
        assert_eq!(b.budgets, vec![vec![33]]);
    }

    #[test]
    fn standard_integral_case() {
        let b = budget_standard(&counts(&[&[30, 10], &[40, 20]]), 10, Proportions::Oracle).unwrap();
        assert_eq!(b.fractional, vec![vec![3.0, 1.0], vec![4.0, 2.0]]);
        assert_eq!(b.budgets, vec![vec![3, 1], vec![4, 2]]);
    }

    #[test]
    fn zero_total_is_error() {
        assert!(matches!(
            budget_standard(&CropCounts::zeros(2, 2), 5, Proportions::Oracle),
            Err(Error::EmptyCounts)
        ));
        assert!(matches!(
            budget_memory(&CropCounts::zeros(1, 3), 5, Proportions::Oracle),
            Err(Error::EmptyCounts)
        ));
    }

    #[test]
    fn memory_uniform_2x2() {
        let b = budget_memory(&counts(&[&[25, 25], &[25, 25]]), 40, Proportions::Oracle).unwrap();
        assert_eq!(b.budgets, vec![vec![10, 20], vec![10, 20]]);
    }

    #[test]
    fn memory_single_segment_matches_standard() {
        let c = counts(&[&[7], &[3], &[11]]);
        let s = budget_standard(&c, 10, Proportions::Oracle).unwrap();
        let m = budget_memory(&c, 10, Proportions::Oracle).unwrap();
        assert_eq!(s.budgets, m.budgets);
    }

    #[test]
    fn round_conserving_examples() {
        assert_eq!(round_conserving(&[3.0, 1.0], 4).unwrap(), vec![3, 1]);
        assert_eq!(
            round_conserving(&[1.5, 1.5, 1.0], 4).unwrap(),
            vec![2, 1, 1]
        );
        assert_eq!(
            round_conserving(
                &[
                    Ratio::new(3u64, 2),
                    Ratio::new(3, 2),
                    Ratio::from_integer(1)
                ],
                4
            )
            .unwrap(),
            vec![2, 1, 1]
        );
        assert!(round_conserving(&[1.0, 1.0], 7).is_err());
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_to_available(&[vec![10]], &[vec![4]], false);
        assert_eq!(c.budgets, vec![vec![4]]);
        assert_eq!(c.shortfall, vec![vec![6]]);
        assert_eq!(c.unfilled, vec![6]);

        let b = vec![vec![3, 4], vec![5, 6]];
        let c = clamp_to_available(&b, &[vec![9, 9], vec![9, 9]], true);
        assert_eq!(c.budgets, b);
        assert_eq!(c.unfilled, vec![0, 0]);
    }

    #[test]
    fn clamp_redistributes_by_slack() {
        // shortfall 6 from camera 0; slack 10 and 3 -> shares 60/13, 18/13 -> 5 and 1
        let c = clamp_to_available(
            &[vec![10], vec![10], vec![10]],
            &[vec![4], vec![20], vec![13]],
            true,
        );
        assert_eq!(c.budgets, vec![vec![4], vec![15], vec![11]]);
        assert_eq!(c.shortfall, vec![vec![6], vec![0], vec![0]]);
        assert_eq!(c.unfilled, vec![0]);
        // not enough slack anywhere
        let c = clamp_to_available(&[vec![10], vec![5]], &[vec![4], vec![7]], true);
        assert_eq!(c.budgets, vec![vec![4], vec![7]]);
        assert_eq!(c.unfilled, vec![4]);
    }

    #[test]
    fn causal_conserves_with_nonempty_last_segment() {
        let c = counts(&[&[10, 0, 30], &[5, 20, 1]]);
        let b = budget_standard(&c, 50, Proportions::Causal).unwrap();
        assert_eq!(b.total(), 50);
        assert_eq!(b.budgets[0][1], 0);
        let m = budget_memory(&c, 50, Proportions::Causal).unwrap();
        assert_eq!(m.segment_total(2), 50);
    }

    fn arb_counts() -> impl Strategy<Value = CropCounts> {
        (1usize..6, 1usize..5)
            .prop_flat_map(|(c, s)| prop::collection::vec(prop::collection::vec(0u64..500, s), c))
            .prop_filter("non-empty", |m| m.iter().flatten().sum::<u64>() > 0)
            .prop_map(|m| CropCounts::new(m).unwrap())
    }

    proptest! {
        #[test]
        fn standard_sums_to_k(c in arb_counts(), k in 0u64..5000) {
            for p in [Proportions::Oracle, Proportions::Causal] {
                let b = budget_standard(&c, k, p).unwrap();
                for (i, row) in b.budgets.iter().enumerate() {
                    for (t, &v) in row.iter().enumerate() {
                        prop_assert!((v as f64 - b.fractional[i][t]).abs() < 1.0 + 1e-9);
                        if c.get(i, t) == 0 { prop_assert_eq!(v, 0); }
                    }
                }
                if p == Proportions::Oracle || c.segment_total(c.num_segments() - 1) > 0 {
                    prop_assert_eq!(b.total(), k);
                }
            }
        }

        #[test]
        fn memory_monotone_and_final_is_k(c in arb_counts(), k in 0u64..5000) {
            let m = budget_memory(&c, k, Proportions::Oracle).unwrap();
            prop_assert_eq!(m.segment_total(c.num_segments() - 1), k);
            for row in &m.budgets {
                prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
            }
            // fractional memory budget = running sum of fractional standard budgets
            let s = budget_standard(&c, k, Proportions::Oracle).unwrap();
            for (mrow, srow) in m.fractional.iter().zip(&s.fractional) {
                let mut acc = 0.0;
                for (mv, sv) in mrow.iter().zip(srow) {
                    acc += sv;
                    prop_assert!((mv - acc).abs() < 1e-6 * (1.0 + acc));
                }
            }
        }

        #[test]
        fn scale_invariant(c in arb_counts(), k in 0u64..2000, scale in 1u64..7) {
            let scaled = CropCounts::new(c.rows().iter().map(|r| r.iter().map(|v| v * scale).collect()).collect()).unwrap();
            prop_assert_eq!(
                budget_standard(&c, k, Proportions::Oracle).unwrap().budgets,
                budget_standard(&scaled, k, Proportions::Oracle).unwrap().budgets
            );
        }

        #[test]
        fn round_conserving_hits_target(parts in prop::collection::vec(0u64..1000, 1..20), target in 0u64..10_000) {
            let total: u64 = parts.iter().sum::<u64>().max(1);
            let fr: Vec<Ratio<u128>> = parts.iter().map(|&p| Ratio::new(target as u128 * p as u128, total as u128)).collect();
            let parts_sum: u64 = parts.iter().sum();
            prop_assume!(parts_sum > 0);
            let out = round_conserving(&fr, target).unwrap();
            prop_assert_eq!(out.iter().sum::<u64>(), target);
        }
    }
}
