use std::collections::hash_map::Entry;
use std::collections::HashMap;

use super::config::PipelineConfig;
use super::cost::{CostModel, Trainer};
use super::stages::{
    collect_stage, label_segment, train_segment, Labeled, ReidSummary, SegmentBatch,
    SelectedSegment, Selector,
};
use super::{assemble, PipelineRun, StreamSource};
use crate::{Error, Result, Scalar};

const AXES: [&str; 5] = ["memory", "tau_minutes", "K", "E", "I"];

/// A cartesian product of configurations. Axes vary in the order memory,
/// `tau_minutes`, `K`, `E`, `I` (the last one fastest); every other key is
/// taken from `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: PipelineConfig,
    pub memory: Vec<bool>,
    pub tau_minutes: Vec<u32>,
    pub instances_per_identity: Vec<u64>,
    pub epochs: Vec<u64>,
    pub iterations: Vec<u64>,
}

impl GridSpec {
    pub fn single(cfg: PipelineConfig) -> Self {
        Self {
            memory: vec![cfg.memory],
            tau_minutes: vec![cfg.tau_minutes],
            instances_per_identity: vec![cfg.instances_per_identity],
            epochs: vec![cfg.epochs],
            iterations: vec![cfg.iterations],
            base: cfg,
        }
    }

    /// Standard and memory mode over K in {18,20,25,30,40,50},
    /// I in {100,250,500,750,1000,1500}, E in {1,2,3,5} and tau in {15,20,30}.
    pub fn standard(base: PipelineConfig) -> Self {
        Self {
            base,
            memory: vec![false, true],
            tau_minutes: vec![15, 20, 30],
            instances_per_identity: vec![18, 20, 25, 30, 40, 50],
            epochs: vec![1, 2, 3, 5],
            iterations: vec![100, 250, 500, 750, 1000, 1500],
        }
    }

    pub fn len(&self) -> usize {
        self.memory.len()
            * self.tau_minutes.len()
            * self.instances_per_identity.len()
            * self.epochs.len()
            * self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn configs(&self) -> Vec<PipelineConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &memory in &self.memory {
            for &tau in &self.tau_minutes {
                for &k in &self.instances_per_identity {
                    for &e in &self.epochs {
                        for &i in &self.iterations {
                            out.push(PipelineConfig {
                                memory,
                                tau_minutes: tau,
                                instances_per_identity: k,
                                epochs: e,
                                iterations: i,
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Parses a flat TOML table. Axis keys may hold an array or a single
    /// value; all other keys configure the base run.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let mut axes: HashMap<&str, Vec<toml::Value>> = HashMap::new();
        for axis in AXES {
            if let Some(v) = table.remove(axis) {
                let values = match v {
                    toml::Value::Array(a) if a.is_empty() => {
                        return Err(Error::Config(format!("grid axis `{axis}` is empty")))
                    }
                    toml::Value::Array(a) => a,
                    single => vec![single],
                };
                table.insert(axis.to_string(), values[0].clone());
                axes.insert(axis, values);
            }
        }
        let base = PipelineConfig::from_table(table)?;
        let mut spec = Self::single(base);
        let parse = |axis: &str| -> Option<&Vec<toml::Value>> { axes.get(axis) };
        fn ints<N: TryFrom<i64>>(axis: &str, vals: &[toml::Value]) -> Result<Vec<N>> {
            vals.iter()
                .map(|v| {
                    v.as_integer()
                        .filter(|&n| n > 0)
                        .and_then(|n| N::try_from(n).ok())
                        .ok_or_else(|| {
                            Error::Config(format!("grid axis `{axis}` needs positive integers"))
                        })
                })
                .collect()
        }
        if let Some(v) = parse("memory") {
            spec.memory = v
                .iter()
                .map(|x| {
                    x.as_bool()
                        .ok_or_else(|| Error::Config("grid axis `memory` needs booleans".into()))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = parse("tau_minutes") {
            spec.tau_minutes = ints("tau_minutes", v)?;
        }
        if let Some(v) = parse("K") {
            spec.instances_per_identity = ints("K", v)?;
        }
        if let Some(v) = parse("E") {
            spec.epochs = ints("E", v)?;
        }
        if let Some(v) = parse("I") {
            spec.iterations = ints("I", v)?;
        }
        for cfg in spec.configs() {
            cfg.validate()?;
        }
        Ok(spec)
    }
}

type SelectionKey = (u32, u64, bool);

/// Runs every configuration of `grid`, in [`GridSpec::configs`] order.
///
/// Screening depends only on the segment length, and selection plus
/// labeling only on (segment length, K, memory), so each is computed once
/// and shared; only the training stage runs per configuration. Runs come
/// back without their subset rows.
pub fn grid_run<T: Scalar>(
    grid: &GridSpec,
    source: &StreamSource<T>,
    cost: &CostModel,
    trainer: &mut dyn Trainer<T>,
) -> Result<Vec<PipelineRun>> {
    cost.validate()?;
    let mut screened: HashMap<u32, (Vec<SegmentBatch<T>>, ReidSummary)> = HashMap::new();
    let mut selected: HashMap<SelectionKey, Vec<(SelectedSegment<T>, Labeled)>> = HashMap::new();
    let mut runs = Vec::with_capacity(grid.len());
    let (header, _) = source.open()?;

    for cfg in grid.configs() {
        cfg.validate()?;
        let (batches, reid) = match screened.entry(cfg.tau_minutes) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let (header, records) = source.open()?;
                let mut batches = Vec::new();
                let reid = collect_stage(&header, records, &cfg, |b| {
                    batches.push(b);
                    Ok(())
                })?;
                e.insert((batches, reid))
            }
        };

        let key = (cfg.tau_minutes, cfg.instances_per_identity, cfg.memory);
        let labeled = match selected.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let mut selector = Selector::new(&header, &cfg);
                let mut sels = Vec::new();
                for b in batches.iter() {
                    sels.extend(selector.push(b.clone())?);
                }
                sels.extend(selector.finish()?);
                e.insert(
                    sels.into_iter()
                        .map(|s| {
                            let l = label_segment(&s, &cfg);
                            (s, l)
                        })
                        .collect(),
                )
            }
        };

        let reports = labeled
            .iter()
            .map(|(sel, lab)| train_segment(sel, lab, &cfg, cost, trainer))
            .collect::<Result<Vec<_>>>()?;
        runs.push(assemble(
            &cfg,
            cost,
            header,
            reid.clone(),
            reports,
            Vec::new(),
        ));
    }
    Ok(runs)
}
