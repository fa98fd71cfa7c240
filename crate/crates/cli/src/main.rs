//! Command-line entry point orchestrating the pipeline: dataset generation,
//! model training, distribution-guard calibration, single-task planning,
//! suite evaluation, and report emission.
//!
//! Exit codes by fault class: 2 config/arguments, 3 dataset, 4 training,
//! 5 calibration, 6 checkpoint/artifact IO, 7 language-model backend,
//! 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use seqplan::config::RunConfig;
use seqplan::eval::{
    instantiate, records_to_csv, run_task, task_suite, Method, Outcome, Report, RunRecord,
    TaskDef,
};
use seqplan::llm::http::HttpBackend;
use seqplan::llm::scripted::ScriptedBackend;
use seqplan::llm::LlmBackend;
use seqplan::models::checkpoint::ModelBundle;
use seqplan::models::dataset::{generate_dataset, Dataset};
use seqplan::models::ood::{calibrate, generate_invalid_queries, generate_valid_queries};
use seqplan::pipeline::{
    train_skill_from_dataset, PipelineError, MAX_FALSE_REJECT, MIN_INVALID_REJECT,
};
use seqplan::planner::{hierarchical_plan, integrated_plan, PlanStatus};
use seqplan::world::{Primitive, SceneSampler};

#[derive(Parser)]
#[command(name = "seqplan", about = "Tabletop skill-sequence planning pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample per-primitive transition datasets into a directory.
    GenerateData(GenerateArgs),
    /// Train feasibility/policy/dynamics models from saved datasets.
    Train(TrainArgs),
    /// Re-derive the distribution-guard thresholds of a trained bundle.
    CalibrateOod(CalibrateArgs),
    /// Plan one task with one method and write the outcome as JSON.
    Plan(PlanArgs),
    /// Run the task suite across methods and seeds; write a CSV of records.
    Eval(EvalArgs),
    /// Aggregate evaluation CSVs into success/subgoal/failure tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for `<primitive>.ds` files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Transitions per primitive.
    #[arg(long, default_value_t = 10_000)]
    records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict to one primitive (default: all four).
    #[arg(long)]
    primitive: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding `<primitive>.ds` files from generate-data.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output path for the trained model bundle.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Model bundle to recalibrate (rewritten in place).
    #[arg(long)]
    models: PathBuf,
    /// Queries per side (valid / invalid).
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PlanArgs {
    /// Task id from the suite, e.g. `task5`.
    #[arg(long)]
    task: String,
    /// `integrated` or `hierarchical`.
    #[arg(long, default_value = "integrated")]
    method: String,
    /// `scripted` or `http` (http reads SEQPLAN_LLM_URL / _TOKEN / _LOG).
    #[arg(long, default_value = "scripted")]
    backend: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    models: PathBuf,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Comma-separated method list, or `all`.
    #[arg(long, default_value = "all")]
    methods: String,
    /// Comma-separated task ids, or `all`.
    #[arg(long, default_value = "all")]
    tasks: String,
    /// Number of seeds per (task, method) cell.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value = "scripted")]
    backend: String,
    #[arg(long)]
    models: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Run only every n-th cell: `i/n` with 0 <= i < n.
    #[arg(long)]
    shard: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more evaluation CSVs (shards are simply concatenated).
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// Optional output path for the rendered tables (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error wrapper carrying the process exit code for its fault class.
struct Fault {
    code: u8,
    message: String,
}

impl Fault {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

const CODE_CONFIG: u8 = 2;
const CODE_DATASET: u8 = 3;
const CODE_TRAIN: u8 = 4;
const CODE_CALIBRATE: u8 = 5;
const CODE_ARTIFACT: u8 = 6;
const CODE_BACKEND: u8 = 7;

impl From<PipelineError> for Fault {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Dataset(_) => CODE_DATASET,
            PipelineError::Train { .. } => CODE_TRAIN,
            PipelineError::Ood(_) => CODE_CALIBRATE,
        };
        Fault::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Fault> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Fault::new(CODE_CONFIG, format!("reading {}: {e}", p.display())))?;
            RunConfig::from_toml(&text)
                .map_err(|e| Fault::new(CODE_CONFIG, format!("parsing {}: {e}", p.display())))
        }
    }
}

fn parse_primitive(name: &str) -> Result<Primitive, Fault> {
    Primitive::parse(name)
        .ok_or_else(|| Fault::new(CODE_CONFIG, format!("unknown primitive `{name}`")))
}

fn make_backend(name: &str) -> Result<Box<dyn LlmBackend>, Fault> {
    match name {
        "scripted" => Ok(Box::new(ScriptedBackend)),
        "http" => HttpBackend::from_env()
            .map(|b| Box::new(b) as Box<dyn LlmBackend>)
            .map_err(|e| Fault::new(CODE_BACKEND, e.to_string())),
        other => Err(Fault::new(CODE_CONFIG, format!("unknown backend `{other}`"))),
    }
}

fn load_bundle(path: &Path, cfg: &RunConfig) -> Result<ModelBundle, Fault> {
    let bundle = ModelBundle::load(path)
        .map_err(|e| Fault::new(CODE_ARTIFACT, format!("loading {}: {e}", path.display())))?;
    if !bundle.is_complete() {
        return Err(Fault::new(
            CODE_ARTIFACT,
            format!("{} is missing primitives", path.display()),
        ));
    }
    if bundle.config_hash != cfg.hash() {
        eprintln!(
            "warning: bundle config hash {} differs from current config {}",
            bundle.config_hash,
            cfg.hash()
        );
    }
    Ok(bundle)
}

fn find_task(id: &str) -> Result<TaskDef, Fault> {
    task_suite()
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Fault::new(CODE_CONFIG, format!("unknown task `{id}`")))
}

fn dataset_path(dir: &Path, primitive: Primitive) -> PathBuf {
    dir.join(format!("{}.ds", primitive.name()))
}

fn run(cli: Cli) -> Result<(), Fault> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::GenerateData(args) => generate_data(&cfg, &args),
        Command::Train(args) => train(&cfg, &args),
        Command::CalibrateOod(args) => calibrate_ood(&cfg, &args),
        Command::Plan(args) => plan(&cfg, &args),
        Command::Eval(args) => eval(&cfg, &args),
        Command::Report(args) => report(&args),
    }
}

fn generate_data(cfg: &RunConfig, args: &GenerateArgs) -> Result<(), Fault> {
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| Fault::new(CODE_ARTIFACT, format!("creating out dir: {e}")))?;
    let primitives: Vec<Primitive> = match &args.primitive {
        Some(name) => vec![parse_primitive(name)?],
        None => Primitive::all().to_vec(),
    };
    let sampler = SceneSampler::new(cfg.world.clone());
    for p in primitives {
        let ds = generate_dataset(p, args.records, args.seed, &sampler, &cfg.features)
            .map_err(|e| Fault::new(CODE_DATASET, e.to_string()))?;
        let path = dataset_path(&args.out_dir, p);
        ds.save(&path, &cfg.hash())
            .map_err(|e| Fault::new(CODE_ARTIFACT, e.to_string()))?;
        println!(
            "{}: {} records, success ratio {:.3} -> {}",
            p.name(),
            ds.len(),
            ds.success_ratio(),
            path.display()
        );
    }
    Ok(())
}

fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<(), Fault> {
    let mut bundle = ModelBundle::new(&cfg.hash());
    for p in Primitive::all() {
        let path = dataset_path(&args.data_dir, p);
        let (ds, hash) = Dataset::load(&path)
            .map_err(|e| Fault::new(CODE_ARTIFACT, format!("loading {}: {e}", path.display())))?;
        if hash != cfg.hash() {
            eprintln!(
                "warning: dataset {} was generated under config {hash}, current is {}",
                path.display(),
                cfg.hash()
            );
        }
        let (model, metrics) = train_skill_from_dataset(p, &ds, cfg, args.seed)?;
        println!(
            "{}: precision {:.3} recall {:.3} dyn-err {:.4} m ood-eps {:.5} \
             (false-reject {:.3}, invalid-reject {:.3})",
            p.name(),
            metrics.q.precision,
            metrics.q.recall,
            metrics.dynamics.mean_abs_pos_error,
            metrics.ood.epsilon,
            metrics.ood.in_dist_false_reject,
            metrics.ood.invalid_reject
        );
        bundle.insert(model);
    }
    bundle
        .save(&args.out)
        .map_err(|e| Fault::new(CODE_ARTIFACT, e.to_string()))?;
    println!("bundle ({}) -> {}", cfg.hash(), args.out.display());
    Ok(())
}

fn calibrate_ood(cfg: &RunConfig, args: &CalibrateArgs) -> Result<(), Fault> {
    let bundle = load_bundle(&args.models, cfg)?;
    let sampler = SceneSampler::new(cfg.world.clone());
    let mut updated = ModelBundle::new(&bundle.config_hash);
    for p in Primitive::all() {
        let skill = bundle.skill(p).map_err(|e| Fault::new(CODE_ARTIFACT, e.to_string()))?;
        let valid = generate_valid_queries(p, args.queries, args.seed ^ 0x3, &sampler, &cfg.features);
        let invalid =
            generate_invalid_queries(p, args.queries, args.seed ^ 0x4, &sampler, &cfg.features);
        let cal = calibrate(&skill.q, &valid, &invalid, MAX_FALSE_REJECT, MIN_INVALID_REJECT)
            .map_err(|e| Fault::new(CODE_CALIBRATE, e.to_string()))?;
        println!(
            "{}: eps {:.5} false-reject {:.3} invalid-reject {:.3}",
            p.name(),
            cal.epsilon,
            cal.in_dist_false_reject,
            cal.invalid_reject
        );
        let mut skill = skill.clone();
        skill.ood_epsilon = cal.epsilon;
        updated.insert(skill);
    }
    updated
        .save(&args.models)
        .map_err(|e| Fault::new(CODE_ARTIFACT, e.to_string()))?;
    Ok(())
}

fn plan(cfg: &RunConfig, args: &PlanArgs) -> Result<(), Fault> {
    let task = find_task(&args.task)?;
    let bundle = load_bundle(&args.models, cfg)?;
    let backend = make_backend(&args.backend)?;
    let initial = instantiate(&task, args.seed, &cfg.world);
    let outcome = match args.method.as_str() {
        "integrated" => integrated_plan(&task.instruction, &initial, &bundle, &*backend, cfg, args.seed),
        "hierarchical" => {
            hierarchical_plan(&task.instruction, &initial, &bundle, &*backend, cfg, args.seed)
        }
        other => {
            return Err(Fault::new(
                CODE_CONFIG,
                format!("unknown planning method `{other}` (plan supports integrated, hierarchical)"),
            ))
        }
    }
    .map_err(|e| Fault::new(CODE_ARTIFACT, e.to_string()))?;

    let artifact = json!({
        "config_hash": cfg.hash(),
        "task": task.id,
        "instruction": task.instruction,
        "method": args.method,
        "backend": args.backend,
        "seed": args.seed,
        "status": match outcome.status {
            PlanStatus::PlanFound => "plan_found",
            PlanStatus::PlanningFailure => "planning_failure",
        },
        "failure_reason": outcome.failure_reason,
        "goal_calls": outcome.goal_calls,
        "stop_calls": outcome.stop_calls,
        "goals": outcome.goals.as_ref().map(|g| g.render()),
        "plan": outcome.plan.as_ref().map(|p| json!({
            "skills": p.skills.iter().map(|c| c.canonical()).collect::<Vec<_>>(),
            "actions": p.actions.iter().map(|a| a.0.clone()).collect::<Vec<_>>(),
            "step_scores": p.scores.iter().map(|s| json!({
                "s_llm": s.s_llm, "s_geo": s.s_geo, "s_skill": s.s_skill,
            })).collect::<Vec<_>>(),
            "terminal_symbolic": p.terminal_symbolic.render_strings(),
        })),
        "candidates": outcome.diagnostics.iter().map(|c| json!({
            "iteration": c.iteration,
            "skill": c.skill,
            "s_llm": c.s_llm,
            "s_geo": c.s_geo,
            "s_skill": c.s_skill,
            "ood": c.ood,
            "selected": c.selected,
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&artifact).expect("artifact serializes");
    match &args.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Fault::new(CODE_ARTIFACT, format!("writing {}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<Method>, Fault> {
    if spec == "all" {
        return Ok(Method::all().to_vec());
    }
    spec.split(',')
        .map(|name| {
            Method::parse(name.trim())
                .ok_or_else(|| Fault::new(CODE_CONFIG, format!("unknown method `{name}`")))
        })
        .collect()
}

fn parse_shard(spec: &Option<String>) -> Result<(u64, u64), Fault> {
    match spec {
        None => Ok((0, 1)),
        Some(s) => {
            let parts: Vec<&str> = s.split('/').collect();
            let parsed = if parts.len() == 2 {
                match (parts[0].parse::<u64>(), parts[1].parse::<u64>()) {
                    (Ok(i), Ok(n)) if n > 0 && i < n => Some((i, n)),
                    _ => None,
                }
            } else {
                None
            };
            parsed.ok_or_else(|| {
                Fault::new(CODE_CONFIG, format!("invalid shard `{s}`; expected `i/n` with i < n"))
            })
        }
    }
}

fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<(), Fault> {
    let methods = parse_methods(&args.methods)?;
    let all_tasks = task_suite();
    let tasks: Vec<TaskDef> = if args.tasks == "all" {
        all_tasks
    } else {
        args.tasks
            .split(',')
            .map(|id| find_task(id.trim()))
            .collect::<Result<_, _>>()?
    };
    let (shard_idx, shard_count) = parse_shard(&args.shard)?;
    let bundle = load_bundle(&args.models, cfg)?;
    let backend = make_backend(&args.backend)?;

    let mut records = Vec::new();
    let mut cell = 0u64;
    for task in &tasks {
        for &method in &methods {
            for seed in 0..args.seeds {
                let mine = cell % shard_count == shard_idx;
                cell += 1;
                if !mine {
                    continue;
                }
                let record = run_task(method, task, &bundle, &*backend, cfg, seed)
                    .map_err(|e| Fault::new(CODE_ARTIFACT, e.to_string()))?;
                println!(
                    "{} {} seed={} {} subgoal={:.2} {:.1}s",
                    record.task,
                    record.method.name(),
                    record.seed,
                    record.outcome.name(),
                    record.subgoal_completion,
                    record.wall_time_s
                );
                records.push(record);
            }
        }
    }
    let mut csv = format!("# config_hash={}\n", cfg.hash());
    csv.push_str(&records_to_csv(&records));
    fs::write(&args.out, csv)
        .map_err(|e| Fault::new(CODE_ARTIFACT, format!("writing {}: {e}", args.out.display())))?;
    println!("{} records -> {}", records.len(), args.out.display());
    Ok(())
}

fn parse_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>, Fault> {
    let mut records = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| Fault::new(CODE_ARTIFACT, format!("reading {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.starts_with("task,") || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parsed = (|| -> Option<RunRecord> {
                Some(RunRecord {
                    task: fields.first()?.to_string(),
                    method: Method::parse(fields.get(1)?)?,
                    seed: fields.get(2)?.parse().ok()?,
                    outcome: match *fields.get(3)? {
                        "success" => Outcome::Success,
                        "planning_failure" => Outcome::PlanningFailure,
                        "execution_failure" => Outcome::ExecutionFailure,
                        _ => return None,
                    },
                    subgoal_completion: fields.get(4)?.parse().ok()?,
                    wall_time_s: fields.get(5)?.parse().ok()?,
                    plan_length: fields.get(6)?.parse().ok()?,
                    goal_calls: fields.get(7)?.parse().ok()?,
                    stop_calls: fields.get(8)?.parse().ok()?,
                })
            })();
            match parsed {
                Some(r) => records.push(r),
                None => {
                    return Err(Fault::new(
                        CODE_ARTIFACT,
                        format!("{}:{}: malformed record", path.display(), lineno + 1),
                    ))
                }
            }
        }
    }
    Ok(records)
}

fn report(args: &ReportArgs) -> Result<(), Fault> {
    let records = parse_records(&args.records)?;
    if records.is_empty() {
        return Err(Fault::new(CODE_ARTIFACT, "no records to report"));
    }
    let summary = Report::from_records(&records).summary();
    match &args.out {
        Some(path) => fs::write(path, &summary)
            .map_err(|e| Fault::new(CODE_ARTIFACT, format!("writing {}: {e}", path.display())))?,
        None => print!("{summary}"),
    }
    Ok(())
}
