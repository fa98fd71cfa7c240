//! Scratch end-to-end smoke run: train a small bundle, cache it, run tasks.

use std::path::Path;
use std::time::Instant;

use seqplan::config::RunConfig;
use seqplan::eval::{run_task, task_suite, Method};
use seqplan::llm::scripted::ScriptedBackend;
use seqplan::models::checkpoint::ModelBundle;
use seqplan::pipeline::train_bundle;

fn main() {
    let cfg = RunConfig::small();
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../target/acceptance-cache");
    std::fs::create_dir_all(dir).unwrap();
    let path_s = format!("{dir}/bundle-{}.bin", cfg.hash());
    let path = Path::new(&path_s);
    let bundle = if path.exists() {
        println!("loading cached bundle {path_s}");
        ModelBundle::load(path).unwrap()
    } else {
        let t0 = Instant::now();
        let (bundle, metrics) = train_bundle(10_000, &cfg, 7).unwrap();
        println!("trained in {:.1}s", t0.elapsed().as_secs_f64());
        for m in &metrics {
            println!(
                "{:?}: n={} succ={:.2} P={:.3} R={:.3} dynerr={:.4} ood_eps={:.5} fr={:.3} ir={:.3}",
                m.primitive,
                m.dataset_size,
                m.dataset_success_ratio,
                m.q.precision,
                m.q.recall,
                m.dynamics.mean_abs_pos_error,
                m.ood.epsilon,
                m.ood.in_dist_false_reject,
                m.ood.invalid_reject
            );
        }
        bundle.save(path).unwrap();
        bundle
    };

    let backend = ScriptedBackend;
    let args: Vec<String> = std::env::args().collect();
    let task_filter = args.get(1).cloned();
    let method = args
        .get(2)
        .and_then(|m| Method::parse(m))
        .unwrap_or(Method::Integrated);
    for task in task_suite() {
        if let Some(f) = &task_filter {
            if &task.id != f {
                continue;
            }
        }
        let t0 = Instant::now();
        let rec = run_task(method, &task, &bundle, &backend, &cfg, 0).unwrap();
        println!(
            "{} {} seed=0 outcome={:?} subgoal={:.2} len={} {:.1}s",
            rec.task,
            rec.method.name(),
            rec.outcome,
            rec.subgoal_completion,
            rec.plan_length,
            t0.elapsed().as_secs_f64()
        );
    }
}
