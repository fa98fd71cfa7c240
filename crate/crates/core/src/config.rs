//! Configuration types shared across the pipeline.
//!
//! Everything that tunes the world geometry, model training, CEM search, or
//! planner behavior lives here so that a single TOML file can reproduce a run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Geometry thresholds and fixed frames for the tabletop world.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct WorldConfig {
    /// Robot base position on the table plane (meters).
    pub robot_base: [f64; 2],
    /// Reachable region for grasping/placing: `[x_min, x_max, y_min, y_max]`.
    pub workspace: [f64; 4],
    /// Height of an object's center when held by the gripper (above table top).
    pub hold_height: f64,
    /// Objects whose center z exceeds this are classified as in-hand.
    pub inhand_z_threshold: f64,
    /// Max vertical gap between a's bottom and b's top for `on(a, b)`.
    pub on_z_gap: f64,
    /// Min vertical clearance between a's top and b's bottom for `under(a, b)`.
    pub under_clearance: f64,
    /// Minimum displacement toward the robot for a rewarded pull (meters).
    pub min_pull_displacement: f64,
    /// Minimum displacement away from the robot for a rewarded push (meters).
    pub min_push_displacement: f64,
    /// Arm reach from the robot base for tool contact during pull/push.
    pub arm_reach: f64,
    /// Tolerance band around an object footprint for tool contact.
    pub contact_tolerance: f64,
    /// Rejection-sampling attempt budget for scene instantiation.
    pub max_scene_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            robot_base: [-0.7, 0.0],
            workspace: [-0.4, 0.2, -0.45, 0.45],
            hold_height: 0.30,
            inhand_z_threshold: 0.20,
            on_z_gap: 0.05,
            under_clearance: 0.01,
            min_pull_displacement: 0.05,
            min_push_displacement: 0.05,
            arm_reach: 0.9,
            contact_tolerance: 0.03,
            max_scene_attempts: 10_000,
        }
    }
}

/// Feature layout constants for the learned models.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FeatureConfig {
    /// Fixed object-slot count; smaller scenes are zero-padded.
    pub max_objects: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { max_objects: 7 }
    }
}

impl FeatureConfig {
    pub const FEATS_PER_OBJECT: usize = 9;

    pub fn state_dim(&self) -> usize {
        self.max_objects * Self::FEATS_PER_OBJECT
    }
}

/// Training hyperparameters for the per-primitive models.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden layer widths for all approximators.
    pub hidden: Vec<usize>,
    /// Number of Q-ensemble members.
    pub ensemble_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Gradient steps for each Q member.
    pub q_iterations: usize,
    /// Gradient steps for the policy mean head.
    pub policy_iterations: usize,
    /// Gradient steps for the dynamics model.
    pub dynamics_iterations: usize,
    /// Fraction of records used for training (rest is validation).
    pub train_split: f64,
    /// Validation-loss checks between early-divergence probes.
    pub eval_interval: usize,
    /// Consecutive strictly-increasing validation checks before a divergence fault.
    pub divergence_patience: usize,
    /// Fixed per-dimension standard deviation of the stochastic policy.
    pub policy_spread: f64,
    /// Bootstrap-resample minibatches per ensemble member for extra diversity.
    pub bootstrap_members: bool,
    /// Weight of each Q member's frozen random prior network. Training
    /// cancels the prior on-distribution; off-distribution the uncancelled
    /// priors spread the members apart, giving the variance signal its
    /// contrast. Zero disables priors.
    pub prior_scale: f64,
    /// Init-scale multiplier for the prior networks; gains above one make
    /// the priors higher-frequency so nearby inputs decorrelate faster.
    pub prior_gain: f64,
    /// Restrict prior inputs to the near-discrete feature dims (z, extents,
    /// presence, held flags). Masked priors are cancellable at higher gain;
    /// unmasked priors also react to continuous pose violations.
    pub prior_mask: bool,
    /// Binary targets are squeezed to [s, 1-s] for Q training. This bounds
    /// the attainable logits, which keeps members out of sigmoid saturation
    /// so that off-distribution disagreement stays visible in the variance.
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            ensemble_size: 8,
            batch_size: 128,
            learning_rate: 1e-3,
            q_iterations: 4000,
            policy_iterations: 3000,
            dynamics_iterations: 6000,
            train_split: 0.8,
            eval_interval: 500,
            divergence_patience: 5,
            policy_spread: 0.3,
            bootstrap_members: false,
            prior_scale: 4.0,
            prior_gain: 2.0,
            prior_mask: true,
            label_smoothing: 0.1,
        }
    }
}

/// Cross-entropy-method settings for policy sequence optimization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CemConfig {
    pub iterations: usize,
    pub samples_per_iter: usize,
    pub elites: usize,
    /// Constant sampling standard deviation.
    pub spread: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        // Desk-scale default; the reference configuration uses 10K samples.
        Self {
            iterations: 10,
            samples_per_iter: 1000,
            elites: 10,
            spread: 0.3,
        }
    }
}

impl CemConfig {
    /// The configuration used by the original experiments.
    pub fn reference() -> Self {
        Self {
            iterations: 10,
            samples_per_iter: 10_000,
            elites: 10,
            spread: 0.3,
        }
    }
}

/// How the integrated planner decides a plan is complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Predict goal propositions once up front; terminate when satisfied.
    GoalPrediction,
    /// Score a literal `stop()` continuation at every step.
    StopScoring,
}

/// Planner search settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SearchConfig {
    /// Candidate skills requested from the backend per iteration.
    pub k_candidates: usize,
    /// Maximum plan length.
    pub d_max: usize,
    /// Softmax dampening coefficient for LLM likelihood scores.
    pub beta: f64,
    /// Minimum sequence objective for the hierarchical planner to keep a plan.
    pub q_floor: f64,
    /// Policy samples for the reactive baselines' value estimate.
    pub value_samples: usize,
    pub termination: Termination,
    pub cem: CemConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k_candidates: 5,
            d_max: 12,
            beta: 0.3,
            q_floor: 0.1,
            value_samples: 64,
            termination: Termination::GoalPrediction,
            cem: CemConfig::default(),
        }
    }
}

/// Top-level merged configuration, serialized into every result artifact.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub search: SearchConfig,
}

impl RunConfig {
    /// Reduced model widths and search budgets sized so that training plus
    /// the full evaluation suite fits on a single CPU core.
    pub fn small() -> Self {
        let mut cfg = Self::default();
        cfg.train.hidden = vec![64, 64];
        cfg.train.policy_iterations = 2000;
        cfg.train.dynamics_iterations = 4000;
        cfg.search.cem.samples_per_iter = 128;
        cfg.search.cem.iterations = 6;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable hash of the canonical TOML form, embedded in artifacts.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn hash_is_stable_and_input_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.search.beta = 0.5;
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
