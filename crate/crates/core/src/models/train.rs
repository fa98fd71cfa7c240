//! Shared minibatch training loop with validation-based divergence detection.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::TrainConfig;
use crate::nn::{bce_with_logits_loss, cosine_lr, mse_loss, Adam, Mlp};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("validation loss rose {checks} checks in a row (step {step}); training diverged")]
    Diverged { step: usize, checks: usize },
    #[error("not enough records to train: {0}")]
    Empty(String),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Loss {
    Bce,
    Mse,
}

pub(crate) struct Fit {
    pub net: Mlp,
    /// Validation losses at each evaluation checkpoint; kept for diagnostics.
    #[allow(dead_code)]
    pub val_losses: Vec<f64>,
}

/// Deterministic train/validation index split.
pub(crate) fn split_indices(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let cut = ((n as f64) * train_frac).round() as usize;
    let cut = cut.clamp(1, n.saturating_sub(1).max(1));
    let train = idx[..cut].to_vec();
    let val = idx[cut..].to_vec();
    (train, val)
}

fn batch_loss(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>, off: Option<&Array2<f64>>, loss: Loss) -> f64 {
    let mut pred = net.forward(x);
    if let Some(off) = off {
        pred += off;
    }
    match loss {
        Loss::Bce => bce_with_logits_loss(&pred, y).0,
        Loss::Mse => mse_loss(&pred, y).0,
    }
}

/// Evaluate loss over a (possibly large) set in chunks to bound memory,
/// with an optional fixed additive output offset per row.
pub(crate) fn eval_loss_offset(
    net: &Mlp,
    x: &Array2<f64>,
    y: &Array2<f64>,
    off: Option<&Array2<f64>>,
    loss: Loss,
) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return 0.0;
    }
    let chunk = 4096;
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let xs = x.slice_axis(Axis(0), ndarray::Slice::from(start..end)).to_owned();
        let ys = y.slice_axis(Axis(0), ndarray::Slice::from(start..end)).to_owned();
        let os = off.map(|o| o.slice_axis(Axis(0), ndarray::Slice::from(start..end)).to_owned());
        total += batch_loss(net, &xs, &ys, os.as_ref(), loss) * (end - start) as f64;
        start = end;
    }
    total / n as f64
}

/// Fit one network with Adam, cosine-decayed learning rate, and early
/// divergence detection against a validation subset.
///
/// When `offsets` is given, the network is trained so that
/// `net(x) + offset(x)` fits the targets; the offsets are fixed per row.
/// This is how ensemble members carry their frozen random prior.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_mlp(
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    offsets: Option<(&Array2<f64>, &Array2<f64>)>,
    dims: &[usize],
    loss: Loss,
    iterations: usize,
    cfg: &TrainConfig,
    seed: u64,
    bootstrap: bool,
) -> Result<Fit, TrainError> {
    let n = x_train.nrows();
    if n == 0 {
        return Err(TrainError::Empty("no training rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(dims, &mut rng);
    let mut opt = Adam::new(&net);

    // Bootstrap members draw their minibatches from a resampled multiset of
    // the training rows, which decorrelates the ensemble.
    let pool: Vec<usize> = if bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };

    let batch = cfg.batch_size.min(n);
    let mut xb = Array2::zeros((batch, x_train.ncols()));
    let mut yb = Array2::zeros((batch, y_train.ncols()));
    let mut ob = offsets.map(|_| Array2::zeros((batch, y_train.ncols())));
    let mut val_losses = Vec::new();
    // Bound the per-check cost on big datasets; the subset is fixed, so
    // successive checks are comparable.
    let val_cap = 4096.min(x_val.nrows());
    let x_val_sub = x_val.slice_axis(Axis(0), ndarray::Slice::from(0..val_cap)).to_owned();
    let y_val_sub = y_val.slice_axis(Axis(0), ndarray::Slice::from(0..val_cap)).to_owned();
    let o_val_sub = offsets.map(|(_, ov)| {
        ov.slice_axis(Axis(0), ndarray::Slice::from(0..val_cap)).to_owned()
    });
    let mut prev_val = f64::INFINITY;
    let mut rising = 0usize;

    for step in 0..iterations {
        for row in 0..batch {
            let src = pool[rng.gen_range(0..pool.len())];
            xb.row_mut(row).assign(&x_train.row(src));
            yb.row_mut(row).assign(&y_train.row(src));
            if let (Some(ob), Some((ot, _))) = (ob.as_mut(), offsets) {
                ob.row_mut(row).assign(&ot.row(src));
            }
        }
        let (mut pred, cache) = net.forward_cached(&xb);
        if let Some(ob) = &ob {
            pred += ob;
        }
        let grad_out = match loss {
            Loss::Bce => bce_with_logits_loss(&pred, &yb).1,
            Loss::Mse => mse_loss(&pred, &yb).1,
        };
        let (grads, _) = net.backward(&cache, &grad_out);
        opt.step(&mut net, &grads, cosine_lr(cfg.learning_rate, step, iterations));

        if (step + 1) % cfg.eval_interval == 0 && val_cap > 0 {
            let v = eval_loss_offset(&net, &x_val_sub, &y_val_sub, o_val_sub.as_ref(), loss);
            if v > prev_val {
                rising += 1;
                if rising >= cfg.divergence_patience {
                    return Err(TrainError::Diverged {
                        step: step + 1,
                        checks: rising,
                    });
                }
            } else {
                rising = 0;
            }
            prev_val = v;
            val_losses.push(v);
        }
    }
    Ok(Fit { net, val_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (tr, va) = split_indices(100, 0.8, 7);
        assert_eq!((tr.len(), va.len()), (80, 20));
        let (tr2, va2) = split_indices(100, 0.8, 7);
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn fit_learns_simple_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::<f64>::from_shape_fn((512, 2), |_| rng.gen_range(-1.0..1.0));
        let mut y = Array2::zeros((512, 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            y[[i, 0]] = row[0] - 0.5 * row[1];
        }
        let (tr, va) = split_indices(512, 0.8, 1);
        let take = |idx: &[usize], m: &Array2<f64>| {
            Array2::from_shape_fn((idx.len(), m.ncols()), |(i, j)| m[[idx[i], j]])
        };
        let cfg = TrainConfig {
            eval_interval: 200,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let fit = fit_mlp(
            &take(&tr, &x),
            &take(&tr, &y),
            &take(&va, &x),
            &take(&va, &y),
            None,
            &[2, 32, 1],
            Loss::Mse,
            1500,
            &cfg,
            3,
            false,
        )
        .unwrap();
        let final_loss = eval_loss_offset(&fit.net, &take(&va, &x), &take(&va, &y), None, Loss::Mse);
        assert!(final_loss < 0.01, "val loss {final_loss}");
    }
}
