//! Distribution guard calibration.
//!
//! The feasibility ensembles are only trusted on queries resembling their
//! training data. We calibrate a per-primitive variance threshold so that at
//! most a target fraction of in-distribution queries is rejected, then verify
//! that symbolically invalid queries (wrong hand state, immovable targets,
//! wrong tool kinds, blocked objects) are rejected at a high rate.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::FeatureConfig;
use crate::symbolic::SymbolicDomain;
use crate::world::{Primitive, PrimitiveCall, SceneSampler};

use super::dataset::{draw_scene, guided_action, uniform_action, Draw};
use super::features::PlanState;
use super::qfn::QEnsemble;

/// Default rejection-rate requirements.
pub const MAX_IN_DIST_FALSE_REJECT: f64 = 0.05;
pub const MIN_INVALID_REJECT: f64 = 0.95;

#[derive(Debug, Error)]
pub enum OodError {
    #[error(
        "insufficient separation for {primitive:?}: rejected {invalid_reject:.3} of invalid \
         queries (need {required:.2}) at epsilon {epsilon:.5}\n{histogram}"
    )]
    Separation {
        primitive: Primitive,
        invalid_reject: f64,
        required: f64,
        epsilon: f64,
        histogram: String,
    },
}

/// Calibration result for one primitive.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OodCalibration {
    pub primitive: Primitive,
    /// Ensemble-variance threshold above which a query is rejected.
    pub epsilon: f64,
    pub in_dist_false_reject: f64,
    pub invalid_reject: f64,
}

/// Fresh in-distribution queries: precondition-satisfying scenes with the
/// same action mix used for dataset generation.
pub fn generate_valid_queries(
    primitive: Primitive,
    n: usize,
    seed: u64,
    sampler: &SceneSampler,
    features: &FeatureConfig,
) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_5eed);
    let mut out = Array2::zeros((n, features.state_dim() + primitive.action_dim()));
    for i in 0..n {
        let Draw { geo, call } = draw_scene(primitive, &mut rng, sampler);
        let action = if rng.gen_bool(0.5) {
            guided_action(&geo, &call, &mut rng, &sampler.world)
        } else {
            uniform_action(primitive, &mut rng)
        };
        let state = PlanState::from_geometric(&geo).encode(&call, features);
        out.row_mut(i).assign(&QEnsemble::input(&state, &action));
    }
    out
}

/// Queries whose symbolic preconditions fail: realistic scenes, but calls the
/// training distribution can never contain.
pub fn generate_invalid_queries(
    primitive: Primitive,
    n: usize,
    seed: u64,
    sampler: &SceneSampler,
    features: &FeatureConfig,
) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1bad_5eed);
    let mut out = Array2::zeros((n, features.state_dim() + primitive.action_dim()));
    for i in 0..n {
        loop {
            // Borrow a scene drawn for any primitive to vary hand states.
            let source = Primitive::all()[rng.gen_range(0..4)];
            let Draw { geo, .. } = draw_scene(source, &mut rng, sampler);
            let sym = crate::world::extract_symbolic(&geo, &sampler.world);
            let dom = SymbolicDomain::new(&geo.objects);
            let invalid = enumerate_calls(primitive, &geo.objects)
                .into_iter()
                .filter(|c| !dom.applicable(&sym, c))
                .collect::<Vec<_>>();
            if invalid.is_empty() {
                continue;
            }
            let call = invalid[rng.gen_range(0..invalid.len())].clone();
            let action = uniform_action(primitive, &mut rng);
            let state = PlanState::from_geometric(&geo).encode(&call, features);
            out.row_mut(i).assign(&QEnsemble::input(&state, &action));
            break;
        }
    }
    out
}

/// All argument tuples over the scene's non-table objects (the table appears
/// only as a place receptacle).
fn enumerate_calls(primitive: Primitive, objects: &[crate::world::ObjectSpec]) -> Vec<PrimitiveCall> {
    let names: Vec<&str> = objects
        .iter()
        .filter(|o| o.kind != crate::world::ObjectKind::Table)
        .map(|o| o.name.as_str())
        .collect();
    let mut out = Vec::new();
    match primitive {
        Primitive::Pick => {
            for o in &names {
                out.push(PrimitiveCall::new(Primitive::Pick, &[o]));
            }
        }
        Primitive::Place => {
            for o in &names {
                for r in names.iter().chain(std::iter::once(&"table")) {
                    if o != r {
                        out.push(PrimitiveCall::new(Primitive::Place, &[o, r]));
                    }
                }
            }
        }
        Primitive::Pull => {
            for o in &names {
                for t in &names {
                    if o != t {
                        out.push(PrimitiveCall::new(Primitive::Pull, &[o, t]));
                    }
                }
            }
        }
        Primitive::Push => {
            for o in &names {
                for t in &names {
                    for r in &names {
                        if o != t && o != r && t != r {
                            out.push(PrimitiveCall::new(Primitive::Push, &[o, t, r]));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Pick the variance threshold from in-distribution queries and verify the
/// rejection rate on invalid ones.
pub fn calibrate(
    q: &QEnsemble,
    valid: &Array2<f64>,
    invalid: &Array2<f64>,
    max_false_reject: f64,
    min_invalid_reject: f64,
) -> Result<OodCalibration, OodError> {
    let valid_var = q.variance_batch(valid);
    let invalid_var = q.variance_batch(invalid);
    let epsilon = quantile(&valid_var, 1.0 - max_false_reject);
    let false_reject =
        valid_var.iter().filter(|&&v| v > epsilon).count() as f64 / valid_var.len() as f64;
    let invalid_reject =
        invalid_var.iter().filter(|&&v| v > epsilon).count() as f64 / invalid_var.len() as f64;
    if invalid_reject < min_invalid_reject {
        return Err(OodError::Separation {
            primitive: q.primitive,
            invalid_reject,
            required: min_invalid_reject,
            epsilon,
            histogram: format!(
                "in-dist variance:\n{}\ninvalid variance:\n{}",
                histogram(&valid_var),
                histogram(&invalid_var)
            ),
        });
    }
    Ok(OodCalibration {
        primitive: q.primitive,
        epsilon,
        in_dist_false_reject: false_reject,
        invalid_reject,
    })
}

fn quantile(values: &Array1<f64>, frac: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return 0.0;
    }
    let idx = ((v.len() as f64 - 1.0) * frac).round() as usize;
    v[idx.min(v.len() - 1)]
}

/// Log-bucketed text histogram for diagnosing failed separations.
fn histogram(values: &Array1<f64>) -> String {
    let edges = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let mut counts = vec![0usize; edges.len() + 1];
    for &v in values {
        let bucket = edges.iter().position(|&e| v < e).unwrap_or(edges.len());
        counts[bucket] += 1;
    }
    let mut out = String::new();
    let mut lo = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let hi = edges.get(i).copied().unwrap_or(f64::INFINITY);
        out.push_str(&format!("  [{lo:>8.0e}, {hi:>8.0e}): {c}\n"));
        lo = hi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::world::ObjectSpec;

    fn sampler() -> SceneSampler {
        SceneSampler::new(WorldConfig::default())
    }

    #[test]
    fn invalid_queries_have_right_shape_and_differ_from_valid() {
        let features = FeatureConfig::default();
        let valid = generate_valid_queries(Primitive::Pick, 20, 3, &sampler(), &features);
        let invalid = generate_invalid_queries(Primitive::Pick, 20, 3, &sampler(), &features);
        assert_eq!(valid.ncols(), features.state_dim() + 4);
        assert_eq!(invalid.dim(), valid.dim());
        assert_ne!(valid, invalid);
    }

    #[test]
    fn call_enumeration_covers_push_arity() {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::rack("rack"),
            ObjectSpec::hook("hook"),
            ObjectSpec::small_box("red box"),
        ];
        let calls = enumerate_calls(Primitive::Push, &objects);
        // 3 choices for each of three distinct roles: 3! = 6 orderings.
        assert_eq!(calls.len(), 6);
        assert!(calls
            .iter()
            .all(|c| c.args.len() == 3 && !c.args.contains(&"table".to_string())));
    }

    #[test]
    fn quantile_and_histogram_basics() {
        let v = Array1::from_vec((0..100).map(|i| i as f64 / 1000.0).collect());
        let q95 = quantile(&v, 0.95);
        assert!((q95 - 0.094).abs() < 1e-12);
        let h = histogram(&v);
        assert!(h.contains("):"));
    }

    #[test]
    fn calibration_separates_synthetic_variances() {
        // A fabricated ensemble is overkill; test the threshold logic on
        // variance vectors directly by stubbing through a tiny ensemble.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets: Vec<crate::nn::Mlp> =
            (0..2).map(|_| crate::nn::Mlp::new(&[2, 1], &mut rng)).collect();
        let q = QEnsemble {
            primitive: Primitive::Pick,
            members: nets,
            priors: Vec::new(),
            prior_scale: 0.0,
        };
        // In-dist inputs: all zeros (members agree on bias-only output).
        let valid = Array2::zeros((50, 2));
        let mut invalid = Array2::zeros((50, 2));
        invalid.fill(10.0);
        match calibrate(&q, &valid, &invalid, 0.05, 0.95) {
            Ok(cal) => {
                assert!(cal.invalid_reject >= 0.95);
                assert!(cal.in_dist_false_reject <= 0.05);
            }
            Err(OodError::Separation { histogram, .. }) => {
                // Random tiny nets may not separate; the error must carry
                // the diagnostic histogram either way.
                assert!(histogram.contains("in-dist variance"));
            }
        }
    }
}
