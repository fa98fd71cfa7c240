//! Feasibility classifiers: an ensemble of binary success predictors per
//! primitive. The ensemble minimum is the (conservative) feasibility value;
//! the across-member variance feeds the distribution guard.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{FeatureConfig, TrainConfig};
use crate::nn::{sigmoid, Mlp};
use crate::world::Primitive;

use super::dataset::Dataset;
use super::train::{fit_mlp, split_indices, Loss, TrainError};

/// Binary feasibility ensemble with randomized prior functions: member `m`
/// predicts `sigmoid(net_m(x) + prior_scale * prior_m(mask(x)))` where
/// `prior_m` is a frozen randomly initialized network. Training fits `net_m`
/// so the sum matches the labels; the uncancelled priors make members
/// disagree on inputs far from the training data, which is the
/// distribution-shift signal.
///
/// With `prior_mask` set, the priors see only the near-discrete feature dims
/// (z, extents, presence, held flags). Those dims take finitely many value
/// combinations in valid scenes, each densely covered by training data, so
/// the trainable nets can cancel the priors per combination; a
/// precondition-violating query lands on an unseen combination where the
/// members' random offsets survive. Unmasked priors also react to continuous
/// pose violations but need a lower gain to stay cancellable.
#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    pub primitive: Primitive,
    pub members: Vec<Mlp>,
    /// One frozen prior per member, same architecture.
    pub priors: Vec<Mlp>,
    pub prior_scale: f64,
    /// Whether priors see masked inputs (see type docs).
    pub prior_mask: bool,
}

/// Zero out the continuous pose dims (x, y, yaw) and the action tail,
/// keeping z plus the categorical-ish slot dims for the prior networks.
pub(crate) fn mask_for_prior(x: &Array2<f64>, action_dim: usize) -> Array2<f64> {
    let state_dim = x.ncols() - action_dim;
    debug_assert_eq!(state_dim % FeatureConfig::FEATS_PER_OBJECT, 0);
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            if j >= state_dim {
                *v = 0.0;
            } else {
                // Keep [z, hx, hy, hz, present, held]; drop [x, y, yaw].
                let within = j % FeatureConfig::FEATS_PER_OBJECT;
                if matches!(within, 0 | 1 | 3) {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

/// Held-out classification quality of the ensemble value at threshold 0.5.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct QMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl QEnsemble {
    /// Concatenate state and action into one input row.
    pub fn input(state: &Array1<f64>, action: &[f64]) -> Array1<f64> {
        let mut x = Array1::zeros(state.len() + action.len());
        x.slice_mut(ndarray::s![..state.len()]).assign(state);
        for (i, &a) in action.iter().enumerate() {
            x[state.len() + i] = a;
        }
        x
    }

    /// Per-member pre-sigmoid logits (trained net plus frozen prior), `n x members`.
    pub fn member_logits(&self, x: &Array2<f64>) -> Array2<f64> {
        let prior_input = if self.prior_scale == 0.0 {
            None
        } else if self.prior_mask {
            Some(mask_for_prior(x, self.primitive.action_dim()))
        } else {
            Some(x.clone())
        };
        let mut out = Array2::zeros((x.nrows(), self.members.len()));
        for (m, net) in self.members.iter().enumerate() {
            let mut logits = net.forward(x);
            if let Some(prior_input) = &prior_input {
                logits += &(self.priors[m].forward(prior_input) * self.prior_scale);
            }
            for (i, &z) in logits.column(0).iter().enumerate() {
                out[[i, m]] = z;
            }
        }
        out
    }

    /// Per-member success probabilities, `n x members`.
    pub fn member_probs(&self, x: &Array2<f64>) -> Array2<f64> {
        self.member_logits(x).mapv(sigmoid)
    }

    /// Conservative feasibility: the minimum member probability.
    pub fn value_batch(&self, x: &Array2<f64>) -> Array1<f64> {
        self.member_probs(x)
            .map_axis(Axis(1), |row| row.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn value(&self, state: &Array1<f64>, action: &[f64]) -> f64 {
        let x = Self::input(state, action).insert_axis(Axis(0));
        self.value_batch(&x)[0]
    }

    /// Unbiased variance of member logits, the distribution-shift signal:
    /// queries far from the training data disperse the ensemble. Measured
    /// before the sigmoid because label smoothing bounds in-distribution
    /// logits while uncancelled priors leave off-manifold logits unbounded;
    /// probability-space variance would saturate and hide that spread.
    pub fn variance_batch(&self, x: &Array2<f64>) -> Array1<f64> {
        Self::row_variance(&self.member_logits(x))
    }

    /// Minimum probability and logit variance from a single set of forwards.
    pub fn value_and_variance_batch(&self, x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let logits = self.member_logits(x);
        let mins = logits.map_axis(Axis(1), |row| {
            sigmoid(row.iter().copied().fold(f64::INFINITY, f64::min))
        });
        let vars = Self::row_variance(&logits);
        (mins, vars)
    }

    fn row_variance(logits: &Array2<f64>) -> Array1<f64> {
        let b = logits.ncols() as f64;
        logits.map_axis(Axis(1), |row| {
            let mean = row.sum() / b;
            row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (b - 1.0)
        })
    }

    pub fn variance(&self, state: &Array1<f64>, action: &[f64]) -> f64 {
        let x = Self::input(state, action).insert_axis(Axis(0));
        self.variance_batch(&x)[0]
    }
}

fn gather(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), m.ncols()), |(i, j)| m[[idx[i], j]])
}

/// Train the full ensemble on a dataset. Members differ by init seed and by
/// bootstrap-resampled minibatch pools.
pub fn train_q_ensemble(
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(QEnsemble, QMetrics), TrainError> {
    let n = ds.len();
    if n < 10 {
        return Err(TrainError::Empty(format!("{n} records")));
    }
    let x_all = {
        let mut x = Array2::zeros((n, ds.states.ncols() + ds.actions.ncols()));
        x.slice_mut(ndarray::s![.., ..ds.states.ncols()]).assign(&ds.states);
        x.slice_mut(ndarray::s![.., ds.states.ncols()..]).assign(&ds.actions);
        x
    };
    let y_all = ds.rewards.clone().insert_axis(Axis(1));
    let s = cfg.label_smoothing;
    let y_smooth = y_all.mapv(|v| v * (1.0 - 2.0 * s) + s);
    let (tr, va) = split_indices(n, cfg.train_split, seed);
    let (x_tr, y_tr) = (gather(&x_all, &tr), gather(&y_smooth, &tr));
    let (x_va, y_va) = (gather(&x_all, &va), gather(&y_smooth, &va));
    // Metrics are judged against the raw labels, not the smoothed targets.
    let y_va_raw = gather(&y_all, &va);

    let mut dims = vec![x_all.ncols()];
    dims.extend(&cfg.hidden);
    dims.push(1);

    let mut members = Vec::with_capacity(cfg.ensemble_size);
    let mut priors = Vec::with_capacity(cfg.ensemble_size);
    for m in 0..cfg.ensemble_size {
        let member_seed = seed ^ q_member_salt(m);
        let mut prior_rng = ChaCha8Rng::seed_from_u64(member_seed ^ 0x5eed_0f01);
        let prior = Mlp::new_with_gain(&dims, &mut prior_rng, cfg.prior_gain);
        let offsets = if cfg.prior_scale != 0.0 {
            let (p_tr, p_va) = if cfg.prior_mask {
                let action_dim = ds.primitive.action_dim();
                (
                    prior.forward(&mask_for_prior(&x_tr, action_dim)),
                    prior.forward(&mask_for_prior(&x_va, action_dim)),
                )
            } else {
                (prior.forward(&x_tr), prior.forward(&x_va))
            };
            Some((p_tr * cfg.prior_scale, p_va * cfg.prior_scale))
        } else {
            None
        };
        let fit = fit_mlp(
            &x_tr,
            &y_tr,
            &x_va,
            &y_va,
            offsets.as_ref().map(|(t, v)| (t, v)),
            &dims,
            Loss::Bce,
            cfg.q_iterations,
            cfg,
            member_seed,
            cfg.bootstrap_members,
        )?;
        members.push(fit.net);
        if cfg.prior_scale != 0.0 {
            priors.push(prior);
        }
    }
    let ensemble = QEnsemble {
        primitive: ds.primitive,
        members,
        priors,
        prior_scale: cfg.prior_scale,
        prior_mask: cfg.prior_mask,
    };
    let metrics = classification_metrics(&ensemble, &x_va, &y_va_raw);
    Ok((ensemble, metrics))
}

fn classification_metrics(q: &QEnsemble, x: &Array2<f64>, y: &Array2<f64>) -> QMetrics {
    let values = q.value_batch(x);
    let (mut tp, mut fp, mut fner, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&v, &label) in values.iter().zip(y.column(0).iter()) {
        let pred = v >= 0.5;
        let pos = label > 0.5;
        match (pred, pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fner += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fner).max(1) as f64;
    let accuracy = (tp + tn) as f64 / (tp + fp + fner + tn).max(1) as f64;
    QMetrics {
        precision,
        recall,
        accuracy,
    }
}

fn q_member_salt(m: usize) -> u64 {
    (m as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Gaussian draw via Box-Muller, shared by the stochastic policy and tests.
pub(crate) fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use crate::config::{FeatureConfig, WorldConfig};
    use crate::models::dataset::generate_dataset;
    use crate::world::SceneSampler;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            ensemble_size: 3,
            q_iterations: 600,
            eval_interval: 200,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn small_ensemble_learns_pick_feasibility() {
        let sampler = SceneSampler::new(WorldConfig::default());
        let ds = generate_dataset(Primitive::Pick, 1500, 21, &sampler, &FeatureConfig::default())
            .unwrap();
        let (q, metrics) = train_q_ensemble(&ds, &small_cfg(), 5).unwrap();
        assert_eq!(q.members.len(), 3);
        // Desk-scale sanity bound; the full-size run is held to 0.90.
        assert!(metrics.precision > 0.7, "precision {}", metrics.precision);
        assert!(metrics.recall > 0.7, "recall {}", metrics.recall);
    }

    #[test]
    fn members_disagree_more_off_distribution() {
        let sampler = SceneSampler::new(WorldConfig::default());
        let ds = generate_dataset(Primitive::Pick, 800, 3, &sampler, &FeatureConfig::default())
            .unwrap();
        let (q, _) = train_q_ensemble(&ds, &small_cfg(), 9).unwrap();
        let x_in = {
            let mut x = Array2::zeros((ds.len(), ds.states.ncols() + ds.actions.ncols()));
            x.slice_mut(ndarray::s![.., ..ds.states.ncols()]).assign(&ds.states);
            x.slice_mut(ndarray::s![.., ds.states.ncols()..]).assign(&ds.actions);
            x
        };
        let in_var = q.variance_batch(&x_in).mean().unwrap();
        // Invalid near-distribution queries: mark a second object as held, a
        // hand-state no pick training record can exhibit.
        let mut x_out = x_in.clone();
        for mut row in x_out.rows_mut() {
            // Slot 1 is the first non-argument object; claim it is in hand.
            let base = crate::config::FeatureConfig::FEATS_PER_OBJECT;
            row[base + 8] = 1.0;
            row[base + 2] = 0.30;
        }
        let out_var = q.variance_batch(&x_out).mean().unwrap();
        assert!(
            out_var > in_var,
            "variance in-dist {in_var} vs invalid {out_var}"
        );
    }

    #[test]
    fn variance_is_unbiased_sample_variance() {
        // Hand-check on a 2-member ensemble with constant outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = Mlp::new(&[2, 1], &mut rng);
        let mut b = Mlp::new(&[2, 1], &mut rng);
        let na = a.num_params();
        a.set_params_flat(&vec![0.0; na]);
        let nb = b.num_params();
        b.set_params_flat(&vec![0.0; nb]);
        // Bias the second member's output to logit 1.
        let mut p = b.params_flat();
        *p.last_mut().unwrap() = 1.0;
        b.set_params_flat(&p);
        let q = QEnsemble {
            primitive: Primitive::Pick,
            members: vec![a, b],
            priors: Vec::new(),
            prior_scale: 0.0,
        };
        let x = Array2::zeros((1, 2));
        // Logits 0 and 1: mean 0.5, unbiased sample variance 0.5.
        let expected = (0.25 + 0.25) / 1.0;
        let got = q.variance_batch(&x)[0];
        assert!((got - expected).abs() < 1e-12);
    }
}
