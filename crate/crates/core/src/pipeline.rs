//! End-to-end training pipeline: dataset generation, model fitting, and
//! out-of-distribution calibration for all four primitives, producing a
//! [`ModelBundle`] ready for planning.

use std::time::Instant;

use thiserror::Error;

use crate::config::RunConfig;
use crate::models::checkpoint::{ModelBundle, SkillModel};
use crate::models::dataset::{generate_dataset, Dataset, DatasetError};
use crate::models::dynamics::{train_dynamics, DynamicsMetrics};
use crate::models::ood::{
    calibrate, generate_invalid_queries, generate_valid_queries, OodCalibration, OodError,
};
use crate::models::policy::fit_policy;
use crate::models::qfn::{train_q_ensemble, QMetrics};
use crate::models::TrainError;
use crate::world::{Primitive, SceneSampler};

/// Maximum fraction of in-distribution queries the calibrated threshold may
/// reject.
pub const MAX_FALSE_REJECT: f64 = 0.05;
/// Minimum fraction of precondition-violating queries that must be rejected.
pub const MIN_INVALID_REJECT: f64 = 0.95;
/// Queries per side used for calibration.
pub const CALIBRATION_QUERIES: usize = 1000;
/// Calibration aims slightly below [`MAX_FALSE_REJECT`] so that the held-out
/// false-reject rate stays under the bound despite quantile sampling noise.
const CALIBRATION_FALSE_REJECT: f64 = 0.04;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("training {primitive:?} {model}: {source}")]
    Train {
        primitive: Primitive,
        model: &'static str,
        source: TrainError,
    },
    #[error(transparent)]
    Ood(#[from] OodError),
}

/// Per-primitive quality numbers gathered during training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SkillMetrics {
    pub primitive: Primitive,
    pub dataset_size: usize,
    pub dataset_success_ratio: f64,
    pub q: QMetrics,
    pub dynamics: DynamicsMetrics,
    pub ood: OodCalibration,
    /// Wall time spent generating the dataset (zero when trained from a
    /// pre-existing dataset).
    pub generate_secs: f64,
    /// Wall time spent fitting models and calibrating the guard.
    pub train_secs: f64,
}

/// Train all models for one primitive from a freshly generated dataset.
pub fn train_skill(
    primitive: Primitive,
    n_records: usize,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(SkillModel, SkillMetrics), PipelineError> {
    let sampler = SceneSampler::new(cfg.world.clone());
    let t0 = Instant::now();
    let ds = generate_dataset(primitive, n_records, seed, &sampler, &cfg.features)?;
    let generate_secs = t0.elapsed().as_secs_f64();
    let (model, mut metrics) = train_skill_from_dataset(primitive, &ds, cfg, seed)?;
    metrics.generate_secs = generate_secs;
    Ok((model, metrics))
}

/// Train all models for one primitive from an existing dataset.
pub fn train_skill_from_dataset(
    primitive: Primitive,
    ds: &Dataset,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(SkillModel, SkillMetrics), PipelineError> {
    let wrap = |model: &'static str| move |source: TrainError| PipelineError::Train {
        primitive,
        model,
        source,
    };
    let t0 = Instant::now();
    let (q, q_metrics) = train_q_ensemble(ds, &cfg.train, seed).map_err(wrap("q"))?;
    let policy = fit_policy(ds, &cfg.train, seed ^ 0x1).map_err(wrap("policy"))?;
    let (dynamics, dyn_metrics) =
        train_dynamics(ds, &cfg.train, seed ^ 0x2).map_err(wrap("dynamics"))?;

    let sampler = SceneSampler::new(cfg.world.clone());
    let valid = generate_valid_queries(
        primitive,
        CALIBRATION_QUERIES,
        seed ^ 0x3,
        &sampler,
        &cfg.features,
    );
    let invalid = generate_invalid_queries(
        primitive,
        CALIBRATION_QUERIES,
        seed ^ 0x4,
        &sampler,
        &cfg.features,
    );
    let ood = calibrate(&q, &valid, &invalid, CALIBRATION_FALSE_REJECT, MIN_INVALID_REJECT)?;

    let metrics = SkillMetrics {
        primitive,
        dataset_size: ds.len(),
        dataset_success_ratio: ds.success_ratio(),
        q: q_metrics,
        dynamics: dyn_metrics,
        ood,
        generate_secs: 0.0,
        train_secs: t0.elapsed().as_secs_f64(),
    };
    let model = SkillModel {
        q,
        policy,
        dynamics,
        ood_epsilon: ood.epsilon,
    };
    Ok((model, metrics))
}

/// Train a complete bundle: all four primitives with `n_records` each.
pub fn train_bundle(
    n_records: usize,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(ModelBundle, Vec<SkillMetrics>), PipelineError> {
    let mut bundle = ModelBundle::new(&cfg.hash());
    let mut metrics = Vec::with_capacity(4);
    for (i, primitive) in Primitive::all().into_iter().enumerate() {
        let (model, m) = train_skill(
            primitive,
            n_records,
            cfg,
            seed ^ ((i as u64 + 1) << 32),
        )?;
        bundle.insert(model);
        metrics.push(m);
    }
    Ok((bundle, metrics))
}
