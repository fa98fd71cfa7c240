//! Learned transition models: per-primitive state-delta regressors fit to
//! rewarded transitions only (planning rolls forward through skills that are
//! assumed to succeed; failures contribute zero objective anyway).

use ndarray::{Array1, Array2, Axis};

use crate::config::{FeatureConfig, TrainConfig};
use crate::nn::Mlp;
use crate::world::Primitive;

use super::dataset::Dataset;
use super::train::{fit_mlp, split_indices, Loss, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub primitive: Primitive,
    /// Predicts the state delta for a (state, action) input.
    pub net: Mlp,
}

/// Held-out accuracy of the predicted next state.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DynamicsMetrics {
    /// Mean absolute error over position coordinates of present objects (m).
    pub mean_abs_pos_error: f64,
    /// 95th percentile of the same errors.
    pub p95_abs_pos_error: f64,
}

impl Dynamics {
    pub fn predict(&self, state: &Array1<f64>, action: &[f64]) -> Array1<f64> {
        let mut x = Array1::zeros(state.len() + action.len());
        x.slice_mut(ndarray::s![..state.len()]).assign(state);
        for (i, &a) in action.iter().enumerate() {
            x[state.len() + i] = a;
        }
        let delta = self.net.forward(&x.insert_axis(Axis(0)));
        state + &delta.row(0)
    }
}

/// Fit the dynamics regressor on rewarded transitions.
pub fn train_dynamics(
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Dynamics, DynamicsMetrics), TrainError> {
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
    let in_dim = ds.states.ncols() + ds.actions.ncols();
    let x_all = Array2::from_shape_fn((success.len(), in_dim), |(i, j)| {
        if j < ds.states.ncols() {
            ds.states[[success[i], j]]
        } else {
            ds.actions[[success[i], j - ds.states.ncols()]]
        }
    });
    let y_all = Array2::from_shape_fn((success.len(), ds.states.ncols()), |(i, j)| {
        ds.next_states[[success[i], j]] - ds.states[[success[i], j]]
    });
    let (tr, va) = split_indices(success.len(), cfg.train_split, seed);
    let take = |idx: &[usize], m: &Array2<f64>| {
        Array2::from_shape_fn((idx.len(), m.ncols()), |(i, j)| m[[idx[i], j]])
    };
    let mut dims = vec![in_dim];
    dims.extend(&cfg.hidden);
    dims.push(ds.states.ncols());
    let fit = fit_mlp(
        &take(&tr, &x_all),
        &take(&tr, &y_all),
        &take(&va, &x_all),
        &take(&va, &y_all),
        None,
        &dims,
        Loss::Mse,
        cfg.dynamics_iterations,
        cfg,
        seed,
        false,
    )?;
    let dynamics = Dynamics {
        primitive: ds.primitive,
        net: fit.net,
    };
    let metrics = position_metrics(&dynamics, &take(&va, &x_all), &take(&va, &y_all), ds);
    Ok((dynamics, metrics))
}

fn position_metrics(
    dynamics: &Dynamics,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    ds: &Dataset,
) -> DynamicsMetrics {
    let pred = dynamics.net.forward(x_val);
    let state_dim = ds.states.ncols();
    let mut errors = Vec::new();
    for (row, (p, t)) in pred.rows().into_iter().zip(y_val.rows()).enumerate() {
        for slot in 0..state_dim / FeatureConfig::FEATS_PER_OBJECT {
            let base = slot * FeatureConfig::FEATS_PER_OBJECT;
            // Presence flag lives in the input state portion of x_val.
            if x_val[[row, base + 7]] < 0.5 {
                continue;
            }
            for j in 0..3 {
                errors.push((p[base + j] - t[base + j]).abs());
            }
        }
    }
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let p95 = errors
        .get(((errors.len() as f64) * 0.95) as usize)
        .copied()
        .unwrap_or(0.0);
    DynamicsMetrics {
        mean_abs_pos_error: mean,
        p95_abs_pos_error: p95,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::models::dataset::generate_dataset;
    use crate::world::SceneSampler;

    #[test]
    fn dynamics_beats_identity_on_pick() {
        let sampler = SceneSampler::new(WorldConfig::default());
        let ds = generate_dataset(Primitive::Pick, 1200, 17, &sampler, &FeatureConfig::default())
            .unwrap();
        let cfg = TrainConfig {
            dynamics_iterations: 1200,
            eval_interval: 300,
            ..TrainConfig::default()
        };
        let (_dyn_model, metrics) = train_dynamics(&ds, &cfg, 4).unwrap();

        // Identity baseline: predicting "nothing moves" for a successful pick
        // is wrong by the lift height, so the trained model must do better.
        let success: Vec<usize> = ds
            .rewards
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.5)
            .map(|(i, _)| i)
            .collect();
        let mut identity_err = 0.0;
        let mut count = 0usize;
        for &i in &success {
            for j in 0..ds.states.ncols() {
                let slot = j / FeatureConfig::FEATS_PER_OBJECT;
                let within = j % FeatureConfig::FEATS_PER_OBJECT;
                if within < 3 && ds.states[[i, slot * FeatureConfig::FEATS_PER_OBJECT + 7]] > 0.5 {
                    identity_err += (ds.next_states[[i, j]] - ds.states[[i, j]]).abs();
                    count += 1;
                }
            }
        }
        identity_err /= count as f64;
        assert!(
            metrics.mean_abs_pos_error < identity_err * 0.5,
            "model {} vs identity {}",
            metrics.mean_abs_pos_error,
            identity_err
        );
    }

    #[test]
    fn predict_adds_delta_to_state() {
        let sampler = SceneSampler::new(WorldConfig::default());
        let ds = generate_dataset(Primitive::Place, 400, 6, &sampler, &FeatureConfig::default())
            .unwrap();
        let cfg = TrainConfig {
            dynamics_iterations: 200,
            eval_interval: 100,
            ..TrainConfig::default()
        };
        let (dyn_model, _) = train_dynamics(&ds, &cfg, 1).unwrap();
        let state = ds.states.row(0).to_owned();
        let action: Vec<f64> = ds.actions.row(0).to_vec();
        let next = dyn_model.predict(&state, &action);
        assert_eq!(next.len(), state.len());
        // Deterministic.
        assert_eq!(next, dyn_model.predict(&state, &action));
    }
}
