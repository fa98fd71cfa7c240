//! Scratch sweep over ensemble-diversity settings to find a configuration
//! that separates invalid-query variance from in-distribution variance.

use ndarray::Array1;
use seqplan::config::{FeatureConfig, RunConfig, TrainConfig};
use seqplan::models::dataset::generate_dataset;
use seqplan::models::ood::{generate_invalid_queries, generate_valid_queries};
use seqplan::models::qfn::train_q_ensemble;
use seqplan::world::{Primitive, SceneSampler};

fn quantile(v: &Array1<f64>, frac: f64) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s[(((s.len() - 1) as f64) * frac).round() as usize]
}

fn main() {
    let run = RunConfig::default();
    let sampler = SceneSampler::new(run.world.clone());
    let features = FeatureConfig::default();
    // (records, q_iterations, hidden, batch)
    let sweep: &[(usize, usize, usize, usize)] = &[
        (10_000, 6_000, 64, 256),
        (10_000, 6_000, 128, 128),
        (10_000, 12_000, 64, 256),
        (30_000, 8_000, 64, 256),
    ];
    for &prim in &[Primitive::Place] {
        let valid = generate_valid_queries(prim, 1000, 5, &sampler, &features);
        let invalid = generate_invalid_queries(prim, 1000, 6, &sampler, &features);
        for &(records, iters, width, batch) in sweep {
            let ds = generate_dataset(prim, records, 21, &sampler, &features).unwrap();
            let cfg = TrainConfig {
                hidden: vec![width, width],
                q_iterations: iters,
                batch_size: batch,
                bootstrap_members: false,
                prior_scale: 3.0,
                prior_gain: 2.0,
                prior_mask: true,
                label_smoothing: 0.10,
                ..TrainConfig::default()
            };
            let (q, m) = train_q_ensemble(&ds, &cfg, 5).unwrap();
            let vv = q.variance_batch(&valid);
            let iv = q.variance_batch(&invalid);
            let eps = quantile(&vv, 0.95);
            let reject = iv.iter().filter(|&&v| v > eps).count() as f64 / iv.len() as f64;
            let false_rej = vv.iter().filter(|&&v| v > eps).count() as f64 / vv.len() as f64;
            println!(
                "{prim:?} n={records} iters={iters} width={width} batch={batch}: \
                 eps={eps:.5} inval_rej={reject:.3} false_rej={false_rej:.3} P={:.3} R={:.3}",
                m.precision, m.recall
            );
        }
    }
}
