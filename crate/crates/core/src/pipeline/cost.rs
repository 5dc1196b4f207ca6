use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Simulated stage durations in seconds.
///
/// The defaults describe a small host working on desk-scale synthetic
/// hours (a few hundred sampled crops over eight cameras). With them, the
/// memory-mode selection stage at a 15-minute segment overruns its slot
/// for every subset size of the standard grid, while short segments in
/// standard mode stay well inside. Real deployments should calibrate their
/// own coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Seconds per feature-distance evaluation in subset selection.
    pub sds_cost_per_pair: f64,
    /// Seconds per training iteration (multiplied by epochs and iterations).
    pub train_cost_per_iteration: f64,
    /// Seconds per crop in the training subset.
    pub train_cost_per_crop: f64,
    pub sds_overhead_s: f64,
    pub train_overhead_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            sds_cost_per_pair: 0.09,
            train_cost_per_iteration: 0.4,
            train_cost_per_crop: 0.05,
            sds_overhead_s: 0.0,
            train_overhead_s: 0.0,
        }
    }
}

impl CostModel {
    pub fn zero() -> Self {
        Self {
            sds_cost_per_pair: 0.0,
            train_cost_per_iteration: 0.0,
            train_cost_per_crop: 0.0,
            sds_overhead_s: 0.0,
            train_overhead_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sds_cost_per_pair,
            self.train_cost_per_iteration,
            self.train_cost_per_crop,
            self.sds_overhead_s,
            self.train_overhead_s,
        ];
        if all.iter().all(|c| *c >= 0.0 && c.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(
                "cost coefficients must be finite and non-negative".into(),
            ))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cost: Self = toml::from_str(text)?;
        cost.validate()?;
        Ok(cost)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn sds_seconds(&self, distance_evals: u64) -> f64 {
        self.sds_overhead_s + self.sds_cost_per_pair * distance_evals as f64
    }

    pub fn train_seconds(&self, epochs: u64, iterations: u64, subset_size: usize) -> f64 {
        self.train_overhead_s
            + self.train_cost_per_iteration * (epochs * iterations) as f64
            + self.train_cost_per_crop * subset_size as f64
    }
}

/// What a trainer receives for one segment.
#[derive(Debug, Clone)]
pub struct TrainJob<'a, T> {
    pub segment: usize,
    pub epochs: u64,
    pub iterations: u64,
    pub features: Vec<&'a [T]>,
    pub pseudo_labels: &'a [Option<usize>],
    pub num_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub duration_s: f64,
    /// Opaque handle for the resulting model.
    pub model_token: String,
}

pub trait Trainer<T> {
    fn train(&mut self, job: &TrainJob<'_, T>) -> Result<TrainOutcome>;
}

/// Charges the cost model's training time and does no work.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostModelTrainer {
    pub cost: CostModel,
}

impl<T> Trainer<T> for CostModelTrainer {
    fn train(&mut self, job: &TrainJob<'_, T>) -> Result<TrainOutcome> {
        Ok(TrainOutcome {
            duration_s: self
                .cost
                .train_seconds(job.epochs, job.iterations, job.features.len()),
            model_token: format!(
                "seg{}-n{}-c{}",
                job.segment,
                job.features.len(),
                job.num_clusters
            ),
        })
    }
}

#[derive(Serialize)]
struct ExternalJob<'a> {
    segment: usize,
    epochs: u64,
    iterations: u64,
    num_clusters: usize,
    pseudo_labels: &'a [Option<usize>],
    features: Vec<Vec<f64>>,
}

/// Runs a program once per segment. The job is written to its stdin as one
/// JSON object; the program must print `{"duration_s": .., "model_token": ..}`.
#[derive(Debug, Clone)]
pub struct ExternalTrainer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl<T: Scalar> Trainer<T> for ExternalTrainer {
    fn train(&mut self, job: &TrainJob<'_, T>) -> Result<TrainOutcome> {
        let payload = serde_json::to_vec(&ExternalJob {
            segment: job.segment,
            epochs: job.epochs,
            iterations: job.iterations,
            num_clusters: job.num_clusters,
            pseudo_labels: job.pseudo_labels,
            features: job
                .features
                .iter()
                .map(|f| f.iter().map(|x| x.as_f64()).collect())
                .collect(),
        })?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(&payload)?;
        let output = child.wait_with_output()?;
        if !output.status.success() {
            return Err(Error::Trainer(format!(
                "{} exited with {}",
                self.program.display(),
                output.status
            )));
        }
        let outcome: TrainOutcome = serde_json::from_slice(&output.stdout)
            .map_err(|e| Error::Trainer(format!("unreadable reply: {e}")))?;
        if !(outcome.duration_s >= 0.0) {
            return Err(Error::Trainer("negative duration".into()));
        }
        Ok(outcome)
    }
}
