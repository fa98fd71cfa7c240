//! Per-primitive stochastic policies: a regressed action mean with fixed
//! per-dimension spread, fit to the rewarded transitions only.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::nn::Mlp;
use crate::world::{ActionVector, Primitive};

use super::dataset::Dataset;
use super::qfn::gauss;
use super::train::{fit_mlp, split_indices, Loss, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub primitive: Primitive,
    pub net: Mlp,
    pub spread: f64,
}

impl Policy {
    /// Mean action for a state, clipped to the normalized cube.
    pub fn mean(&self, state: &Array1<f64>) -> ActionVector {
        let x = state.clone().insert_axis(Axis(0));
        let out = self.net.forward(&x);
        ActionVector::new(out.row(0).to_vec()).clipped()
    }

    /// Gaussian sample around the mean, clipped to the normalized cube.
    pub fn sample(&self, state: &Array1<f64>, rng: &mut ChaCha8Rng) -> ActionVector {
        let mean = self.mean(state);
        ActionVector::new(
            mean.0
                .iter()
                .map(|&m| m + self.spread * gauss(rng))
                .collect(),
        )
        .clipped()
    }
}

/// Fit the policy mean by regression on successful records.
pub fn fit_policy(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Policy, TrainError> {
    let success: Vec<usize> = ds
        .rewards
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.5)
        .map(|(i, _)| i)
        .collect();
    if success.len() < 10 {
        return Err(TrainError::Empty(format!(
            "{} successful records",
            success.len()
        )));
    }
    let x_all = Array2::from_shape_fn((success.len(), ds.states.ncols()), |(i, j)| {
        ds.states[[success[i], j]]
    });
    let y_all = Array2::from_shape_fn((success.len(), ds.actions.ncols()), |(i, j)| {
        ds.actions[[success[i], j]]
    });
    let (tr, va) = split_indices(success.len(), cfg.train_split, seed);
    let take = |idx: &[usize], m: &Array2<f64>| {
        Array2::from_shape_fn((idx.len(), m.ncols()), |(i, j)| m[[idx[i], j]])
    };
    let mut dims = vec![x_all.ncols()];
    dims.extend(&cfg.hidden);
    dims.push(y_all.ncols());
    let fit = fit_mlp(
        &take(&tr, &x_all),
        &take(&tr, &y_all),
        &take(&va, &x_all),
        &take(&va, &y_all),
        None,
        &dims,
        Loss::Mse,
        cfg.policy_iterations,
        cfg,
        seed,
        false,
    )?;
    Ok(Policy {
        primitive: ds.primitive,
        net: fit.net,
        spread: cfg.policy_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FeatureConfig, WorldConfig};
    use crate::models::dataset::generate_dataset;
    use crate::world::SceneSampler;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn policy_outputs_valid_actions() {
        let sampler = SceneSampler::new(WorldConfig::default());
        let ds = generate_dataset(Primitive::Pick, 600, 8, &sampler, &FeatureConfig::default())
            .unwrap();
        let cfg = TrainConfig {
            policy_iterations: 400,
            eval_interval: 200,
            ..TrainConfig::default()
        };
        let policy = fit_policy(&ds, &cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..20 {
            let state = ds.states.row(i).to_owned();
            let a = policy.sample(&state, &mut rng);
            assert_eq!(a.dim(), Primitive::Pick.action_dim());
            assert!(a.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn samples_scatter_around_mean() {
        let sampler = SceneSampler::new(WorldConfig::default());
        let ds = generate_dataset(Primitive::Pick, 400, 14, &sampler, &FeatureConfig::default())
            .unwrap();
        let cfg = TrainConfig {
            policy_iterations: 200,
            eval_interval: 100,
            ..TrainConfig::default()
        };
        let policy = fit_policy(&ds, &cfg, 6).unwrap();
        let state = ds.states.row(0).to_owned();
        let mean = policy.mean(&state);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<ActionVector> = (0..200).map(|_| policy.sample(&state, &mut rng)).collect();
        // Not all identical, but centered near the mean.
        assert!(samples.windows(2).any(|w| w[0] != w[1]));
        for d in 0..mean.dim() {
            let avg = samples.iter().map(|a| a.0[d]).sum::<f64>() / samples.len() as f64;
            assert!((avg - mean.0[d]).abs() < 0.15, "dim {d}: {avg} vs {}", mean.0[d]);
        }
    }

    #[test]
    fn too_few_successes_is_an_error() {
        let ds = Dataset {
            primitive: Primitive::Pick,
            states: Array2::zeros((20, 63)),
            actions: Array2::zeros((20, 4)),
            rewards: Array1::zeros(20),
            next_states: Array2::zeros((20, 63)),
        };
        assert!(matches!(
            fit_policy(&ds, &TrainConfig::default(), 0),
            Err(TrainError::Empty(_))
        ));
    }
}
