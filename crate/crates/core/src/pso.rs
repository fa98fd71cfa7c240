//! Cross-entropy optimization of action sequences under the learned models.
//!
//! The objective for a skill sequence is the product of per-step feasibility
//! values, with intermediate states imagined by the learned dynamics. The
//! optimizer is a plain cross-entropy method with constant sampling spread,
//! warm-started from policy rollouts so the result can only improve on the
//! reactive baseline's behavior.

use ndarray::{s, Array1, Array2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CemConfig, FeatureConfig};
use crate::models::checkpoint::SkillModel;
use crate::models::features::{slot_order, PlanState, FEATS_PER_OBJECT};
use crate::models::qfn::QEnsemble;
use crate::world::{ActionVector, PrimitiveCall};

/// One step of a candidate sequence: a grounded call plus its models.
#[derive(Clone, Copy)]
pub struct SkillStep<'a> {
    pub model: &'a SkillModel,
    pub call: &'a PrimitiveCall,
}

/// Anything the cross-entropy core can optimize: a batch evaluator over
/// flattened action vectors in `[0, 1]^total_dim`.
pub trait BatchObjective {
    fn total_dim(&self) -> usize;
    /// Score each row; higher is better.
    fn evaluate(&self, population: &Array2<f64>) -> Array1<f64>;
}

/// Outcome of one cross-entropy run.
#[derive(Debug, Clone)]
pub struct CemReport {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best-ever value after each iteration; non-decreasing by construction.
    pub best_per_iteration: Vec<f64>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generic cross-entropy method over `[0, 1]^d` with constant spread.
/// `warm_starts` rows join the first population, so the final best can never
/// fall below the best warm start.
pub fn cem_optimize(
    objective: &impl BatchObjective,
    cfg: &CemConfig,
    seed: u64,
    warm_starts: &[Vec<f64>],
) -> CemReport {
    let dim = objective.total_dim();
    if dim == 0 {
        let value = objective.evaluate(&Array2::zeros((1, 0)))[0];
        return CemReport {
            best: Vec::new(),
            best_value: value,
            best_per_iteration: vec![value; cfg.iterations],
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = Array1::from_elem(dim, 0.5);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut best_per_iteration = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let extra = if iter == 0 { warm_starts.len() } else { 0 };
        let rows = cfg.samples_per_iter + extra;
        let mut pop = Array2::zeros((rows, dim));
        for i in 0..cfg.samples_per_iter {
            for j in 0..dim {
                pop[[i, j]] = (mean[j] + cfg.spread * gauss(&mut rng)).clamp(0.0, 1.0);
            }
        }
        if iter == 0 {
            for (k, w) in warm_starts.iter().enumerate() {
                assert_eq!(w.len(), dim, "warm start dimensionality");
                for (j, &v) in w.iter().enumerate() {
                    pop[[cfg.samples_per_iter + k, j]] = v.clamp(0.0, 1.0);
                }
            }
        }
        let values = objective.evaluate(&pop);

        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
        let top = order[0];
        if best.as_ref().is_none_or(|(v, _)| values[top] > *v) {
            best = Some((values[top], pop.row(top).to_vec()));
        }
        best_per_iteration.push(best.as_ref().unwrap().0);

        let n_elite = cfg.elites.min(rows).max(1);
        mean.fill(0.0);
        for &idx in &order[..n_elite] {
            mean += &pop.row(idx);
        }
        mean /= n_elite as f64;
    }
    let (best_value, best) = best.expect("at least one iteration");
    CemReport {
        best,
        best_value,
        best_per_iteration,
    }
}

/// Product-of-feasibilities objective over a skill sequence, with states
/// propagated by the learned dynamics. Steps rejected by the distribution
/// guard contribute zero.
pub struct RolloutObjective<'a> {
    steps: &'a [SkillStep<'a>],
    start_encoded: Array1<f64>,
    /// For each step, slot index in the current encoding for each slot of the
    /// next encoding.
    perms: Vec<Vec<usize>>,
    /// Half-extents per slot of each step's encoding, for restoring static
    /// fields after a dynamics prediction.
    extents: Vec<Vec<[f64; 3]>>,
    features: FeatureConfig,
    apply_ood_guard: bool,
}

impl<'a> RolloutObjective<'a> {
    pub fn new(
        steps: &'a [SkillStep<'a>],
        start: &PlanState,
        features: &FeatureConfig,
        apply_ood_guard: bool,
    ) -> Self {
        let objects = start.objects();
        let orders: Vec<Vec<&str>> = steps
            .iter()
            .map(|s| slot_order(objects, s.call))
            .collect();
        let mut perms = Vec::new();
        let mut extents = Vec::new();
        for (t, order) in orders.iter().enumerate() {
            extents.push(
                order
                    .iter()
                    .map(|name| {
                        objects
                            .iter()
                            .find(|o| &o.name == name)
                            .expect("call argument in scene")
                            .extents
                    })
                    .collect(),
            );
            if t + 1 < orders.len() {
                let next = &orders[t + 1];
                perms.push(
                    next.iter()
                        .map(|name| order.iter().position(|c| c == name).unwrap())
                        .collect(),
                );
            }
        }
        let start_encoded = if let Some(first) = steps.first() {
            start.encode(first.call, features)
        } else {
            Array1::zeros(features.state_dim())
        };
        Self {
            steps,
            start_encoded,
            perms,
            extents,
            features: features.clone(),
            apply_ood_guard,
        }
    }

    fn action_dims(&self) -> Vec<usize> {
        self.steps
            .iter()
            .map(|s| s.call.primitive.action_dim())
            .collect()
    }
}

impl BatchObjective for RolloutObjective<'_> {
    fn total_dim(&self) -> usize {
        self.action_dims().iter().sum()
    }

    fn evaluate(&self, population: &Array2<f64>) -> Array1<f64> {
        let n = population.nrows();
        let state_dim = self.features.state_dim();
        let mut total = Array1::from_elem(n, 1.0);
        let mut state = Array2::zeros((n, state_dim));
        for mut row in state.rows_mut() {
            row.assign(&self.start_encoded);
        }
        let mut col = 0usize;
        for (t, step) in self.steps.iter().enumerate() {
            let adim = step.call.primitive.action_dim();
            let actions = population.slice(s![.., col..col + adim]);
            col += adim;

            let mut x = Array2::zeros((n, state_dim + adim));
            x.slice_mut(s![.., ..state_dim]).assign(&state);
            x.slice_mut(s![.., state_dim..]).assign(&actions);

            let (values, variances) = step.model.q.value_and_variance_batch(&x);
            for i in 0..n {
                let mut v = values[i].clamp(0.0, 1.0);
                if self.apply_ood_guard && variances[i] > step.model.ood_epsilon {
                    v = 0.0;
                }
                total[i] *= v;
            }

            if t + 1 < self.steps.len() {
                let delta = step.model.dynamics.net.forward(&x);
                let pred = &state + &delta;
                let perm = &self.perms[t];
                let mut next = Array2::zeros((n, state_dim));
                for (j, &i_slot) in perm.iter().enumerate() {
                    let src = i_slot * FEATS_PER_OBJECT;
                    let dst = j * FEATS_PER_OBJECT;
                    // Pose comes from the prediction.
                    next.slice_mut(s![.., dst..dst + 4])
                        .assign(&pred.slice(s![.., src..src + 4]));
                    // Static fields are restored, the held flag snaps binary.
                    let ext = self.extents[t][i_slot];
                    next.slice_mut(s![.., dst + 4]).fill(ext[0]);
                    next.slice_mut(s![.., dst + 5]).fill(ext[1]);
                    next.slice_mut(s![.., dst + 6]).fill(ext[2]);
                    next.slice_mut(s![.., dst + 7]).fill(1.0);
                    for i in 0..n {
                        next[[i, dst + 8]] = f64::from(pred[[i, src + 8]] > 0.5);
                    }
                }
                state = next;
            }
        }
        total
    }
}

/// The optimized sequence with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct OptimizedSequence {
    pub actions: Vec<ActionVector>,
    /// Feasibility value of each step at the optimum.
    pub step_values: Vec<f64>,
    /// Distribution-guard rejections at the optimum.
    pub ood: Vec<bool>,
    /// Product objective (guard-adjusted).
    pub objective: f64,
    /// Imagined state after each step.
    pub states: Vec<PlanState>,
    pub best_per_iteration: Vec<f64>,
}

impl OptimizedSequence {
    /// Feasibility of the final step alone, used to score how promising the
    /// sequence's frontier is.
    pub fn final_step_value(&self) -> f64 {
        self.step_values.last().copied().unwrap_or(1.0)
    }
}

/// Optimize a full skill sequence from `start`. Warm starts are policy
/// rollouts through the learned dynamics (plus the policy-mean rollout), so
/// the optimized objective is at least the policy's own.
pub fn optimize_sequence(
    steps: &[SkillStep],
    start: &PlanState,
    cem: &CemConfig,
    features: &FeatureConfig,
    seed: u64,
    policy_warm_starts: usize,
) -> OptimizedSequence {
    if steps.is_empty() {
        return OptimizedSequence {
            actions: Vec::new(),
            step_values: Vec::new(),
            ood: Vec::new(),
            objective: 1.0,
            states: Vec::new(),
            best_per_iteration: vec![1.0; cem.iterations],
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e90_a1b3);
    let mut warm = Vec::with_capacity(policy_warm_starts + 1);
    warm.push(policy_rollout(steps, start, features, None));
    for _ in 0..policy_warm_starts {
        warm.push(policy_rollout(steps, start, features, Some(&mut rng)));
    }

    let objective = RolloutObjective::new(steps, start, features, true);
    let report = cem_optimize(&objective, cem, seed, &warm);

    let mut actions = Vec::with_capacity(steps.len());
    let mut col = 0usize;
    for step in steps {
        let adim = step.call.primitive.action_dim();
        actions.push(ActionVector::new(report.best[col..col + adim].to_vec()));
        col += adim;
    }
    let (step_values, ood, states) = rollout_detail(steps, start, &actions, features);
    OptimizedSequence {
        actions,
        step_values,
        ood,
        objective: report.best_value,
        states,
        best_per_iteration: report.best_per_iteration,
    }
}

fn policy_rollout(
    steps: &[SkillStep],
    start: &PlanState,
    features: &FeatureConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Vec<f64> {
    let mut flat = Vec::new();
    let mut state = start.clone();
    for step in steps {
        let encoded = state.encode(step.call, features);
        let action = match rng.as_deref_mut() {
            Some(r) => step.model.policy.sample(&encoded, r),
            None => step.model.policy.mean(&encoded),
        };
        let predicted = step.model.dynamics.predict(&encoded, &action.0);
        state = state.decode_next(step.call, &predicted, features);
        flat.extend(action.0);
    }
    flat
}

/// Single-sequence rollout returning per-step feasibilities, guard flags, and
/// imagined states.
pub fn rollout_detail(
    steps: &[SkillStep],
    start: &PlanState,
    actions: &[ActionVector],
    features: &FeatureConfig,
) -> (Vec<f64>, Vec<bool>, Vec<PlanState>) {
    assert_eq!(steps.len(), actions.len());
    let mut values = Vec::with_capacity(steps.len());
    let mut oods = Vec::with_capacity(steps.len());
    let mut states = Vec::with_capacity(steps.len());
    let mut state = start.clone();
    for (step, action) in steps.iter().zip(actions) {
        let encoded = state.encode(step.call, features);
        let x = QEnsemble::input(&encoded, &action.0).insert_axis(ndarray::Axis(0));
        let (v, var) = step.model.q.value_and_variance_batch(&x);
        values.push(v[0].clamp(0.0, 1.0));
        oods.push(var[0] > step.model.ood_epsilon);
        let predicted = step.model.dynamics.predict(&encoded, &action.0);
        state = state.decode_next(step.call, &predicted, features);
        states.push(state.clone());
    }
    (values, oods, states)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Separable smooth toy objective with a known optimum.
    struct Quadratic {
        targets: Vec<f64>,
    }

    impl BatchObjective for Quadratic {
        fn total_dim(&self) -> usize {
            self.targets.len()
        }

        fn evaluate(&self, population: &Array2<f64>) -> Array1<f64> {
            population.map_axis(ndarray::Axis(1), |row| {
                let d: f64 = row
                    .iter()
                    .zip(&self.targets)
                    .map(|(x, t)| (x - t) * (x - t))
                    .sum();
                (-d).exp()
            })
        }
    }

    fn cfg() -> CemConfig {
        CemConfig {
            iterations: 10,
            samples_per_iter: 200,
            elites: 10,
            spread: 0.3,
        }
    }

    #[test]
    fn cem_finds_quadratic_optimum() {
        let obj = Quadratic {
            targets: vec![0.8, 0.2, 0.55],
        };
        let report = cem_optimize(&obj, &cfg(), 7, &[]);
        for (x, t) in report.best.iter().zip(&obj.targets) {
            assert!((x - t).abs() < 0.05, "found {x}, want {t}");
        }
        assert!(report.best_value > 0.99);
    }

    #[test]
    fn best_ever_is_monotone() {
        let obj = Quadratic {
            targets: vec![0.3, 0.9],
        };
        let report = cem_optimize(&obj, &cfg(), 3, &[]);
        for w in report.best_per_iteration.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(report.best_per_iteration.len(), 10);
    }

    #[test]
    fn warm_start_is_a_floor() {
        // A crippled configuration that cannot search at all still returns at
        // least the warm start.
        let obj = Quadratic {
            targets: vec![0.123, 0.456],
        };
        let crippled = CemConfig {
            iterations: 1,
            samples_per_iter: 1,
            elites: 1,
            spread: 1e-9,
        };
        let warm = vec![vec![0.123, 0.456]];
        let report = cem_optimize(&obj, &crippled, 0, &warm);
        assert!(report.best_value >= 0.999999);
        assert_eq!(report.best, vec![0.123, 0.456]);
    }

    #[test]
    fn cem_is_deterministic_per_seed() {
        let obj = Quadratic {
            targets: vec![0.5, 0.7, 0.1, 0.9],
        };
        let a = cem_optimize(&obj, &cfg(), 11, &[]);
        let b = cem_optimize(&obj, &cfg(), 11, &[]);
        assert_eq!(a.best, b.best);
        assert_eq!(a.best_per_iteration, b.best_per_iteration);
        let c = cem_optimize(&obj, &cfg(), 12, &[]);
        assert_ne!(a.best, c.best);
    }

    #[test]
    fn empty_sequence_has_unit_objective() {
        struct Empty;
        impl BatchObjective for Empty {
            fn total_dim(&self) -> usize {
                0
            }
            fn evaluate(&self, population: &Array2<f64>) -> Array1<f64> {
                Array1::from_elem(population.nrows(), 1.0)
            }
        }
        let report = cem_optimize(&Empty, &cfg(), 0, &[]);
        assert_eq!(report.best_value, 1.0);
        assert!(report.best.is_empty());
    }
}
