//! Planning algorithms over the learned skill models and a language backend:
//! an integrated search that interleaves candidate generation with sequence
//! optimization, a hierarchical planner that optimizes whole generated
//! sequences, and two reactive per-step baselines.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Termination};
use crate::llm::{
    generate_candidates, generate_full_plans, predict_goals, score_candidates, score_with_stop,
    GoalSpec, LlmBackend, LlmError, PromptContext, ScoredSkill,
};
use crate::models::checkpoint::{CheckpointError, ModelBundle};
use crate::models::features::PlanState;
use crate::models::qfn::QEnsemble;
use crate::pso::{optimize_sequence, OptimizedSequence, SkillStep};
use crate::symbolic::SymbolicDomain;
use crate::world::{
    extract_symbolic, ActionVector, GeometricState, PrimitiveCall, SymbolicState,
};

/// Warm starts sampled from the policies for every sequence optimization.
pub const POLICY_WARM_STARTS: usize = 4;

/// True iff some goal set is entirely contained in the state: conjunction
/// within a set, disjunction across sets.
pub fn f_sat(goals: &GoalSpec, state: &SymbolicState) -> bool {
    goals
        .sets
        .iter()
        .any(|set| SymbolicDomain::satisfies(state, set))
}

/// Per-step selection scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScore {
    pub s_llm: f64,
    pub s_geo: f64,
    pub s_skill: f64,
}

impl StepScore {
    fn new(s_llm: f64, s_geo: f64) -> Self {
        Self {
            s_llm,
            s_geo,
            s_skill: s_llm * s_geo,
        }
    }
}

/// A fully parameterized skill sequence with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Plan {
    pub skills: Vec<PrimitiveCall>,
    pub actions: Vec<ActionVector>,
    pub predicted_states: Vec<PlanState>,
    pub scores: Vec<StepScore>,
    /// Symbolic abstraction of the predicted terminal state.
    pub terminal_symbolic: SymbolicState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    PlanFound,
    PlanningFailure,
}

/// One row of the per-iteration candidate table.
#[derive(Debug, Clone)]
pub struct CandidateRecord {
    pub iteration: usize,
    pub skill: String,
    pub s_llm: f64,
    pub s_geo: f64,
    pub s_skill: f64,
    pub ood: bool,
    pub objective: f64,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub status: PlanStatus,
    pub plan: Option<Plan>,
    pub goals: Option<GoalSpec>,
    pub diagnostics: Vec<CandidateRecord>,
    pub failure_reason: Option<String>,
    /// Backend calls made for goal prediction / stop scoring, for the
    /// termination-efficiency comparison.
    pub goal_calls: usize,
    pub stop_calls: usize,
}

impl PlanOutcome {
    fn failure(reason: String, goals: Option<GoalSpec>) -> Self {
        Self {
            status: PlanStatus::PlanningFailure,
            plan: None,
            goals,
            diagnostics: Vec::new(),
            failure_reason: Some(reason),
            goal_calls: 0,
            stop_calls: 0,
        }
    }
}

/// Prompt context for a task: table first, then the scene objects in feature
/// order, with relationships rendered from the extracted symbolic state.
pub fn task_context(
    instruction: &str,
    initial: &GeometricState,
    cfg: &RunConfig,
) -> PromptContext {
    let start = PlanState::from_geometric(initial);
    let mut names: Vec<&str> = vec!["table"];
    names.extend(start.objects().iter().map(|o| o.name.as_str()));
    let relationships = extract_symbolic(initial, &cfg.world).render_strings();
    PromptContext::new(&names, &relationships, instruction)
}

fn retry_once<T>(
    mut attempt: impl FnMut() -> Result<T, LlmError>,
) -> Result<T, (LlmError, usize)> {
    match attempt() {
        Ok(v) => Ok(v),
        Err(_) => attempt().map_err(|e| (e, 2)),
    }
}

fn candidate_seed(seed: u64, iteration: usize, index: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (index as u64 + 1).wrapping_mul(0xd1b54a32d192ed03)
}

struct Evaluated {
    index: usize,
    call: PrimitiveCall,
    opt: OptimizedSequence,
    ood: bool,
}

/// Integrated task-and-motion search: each iteration asks the backend for k
/// candidate skills given the history and imagined states, optimizes the
/// whole prefix ending in each candidate, rejects out-of-distribution
/// candidates, and commits to the argmax of language likelihood times final
/// step feasibility. No environment actions are executed here.
pub fn integrated_plan(
    instruction: &str,
    initial: &GeometricState,
    bundle: &ModelBundle,
    backend: &dyn LlmBackend,
    cfg: &RunConfig,
    seed: u64,
) -> Result<PlanOutcome, CheckpointError> {
    let search = &cfg.search;
    let start = PlanState::from_geometric(initial);
    let sym0 = extract_symbolic(initial, &cfg.world);
    let mut ctx = task_context(instruction, initial, cfg);

    let mut goal_calls = 0usize;
    let mut stop_calls = 0usize;

    // Goal prediction happens exactly once, up front (with one retry on
    // backend trouble). The stop-scoring ablation skips it and instead pays
    // one scoring call per step.
    let goals = match search.termination {
        Termination::GoalPrediction => {
            goal_calls = 1;
            match retry_once(|| predict_goals(backend, &ctx)) {
                Ok(g) => Some(g),
                Err((e, calls)) => {
                    let mut out =
                        PlanOutcome::failure(format!("goal prediction failed: {e}"), None);
                    out.goal_calls = calls;
                    return Ok(out);
                }
            }
        }
        Termination::StopScoring => None,
    };
    if let Some(goals) = &goals {
        ctx.goal_sets = Some(goals.render());
        if f_sat(goals, &sym0) {
            return Ok(PlanOutcome {
                status: PlanStatus::PlanFound,
                plan: Some(Plan {
                    skills: Vec::new(),
                    actions: Vec::new(),
                    predicted_states: Vec::new(),
                    scores: Vec::new(),
                    terminal_symbolic: sym0,
                }),
                goals: Some(goals.clone()),
                diagnostics: Vec::new(),
                failure_reason: None,
                goal_calls,
                stop_calls,
            });
        }
    }

    let mut skills: Vec<PrimitiveCall> = Vec::new();
    let mut scores: Vec<StepScore> = Vec::new();
    let mut current: Option<OptimizedSequence> = None;
    let mut predicted_syms: Vec<SymbolicState> = Vec::new();
    let mut diagnostics: Vec<CandidateRecord> = Vec::new();
    let mut guard: BTreeSet<(Vec<String>, String)> = BTreeSet::new();

    for h in 1..=search.d_max {
        ctx.history = skills.iter().map(|c| c.canonical()).collect();
        ctx.state_history = predicted_syms.iter().map(|s| s.render_strings()).collect();

        let candidates =
            match retry_once(|| generate_candidates(backend, &ctx, search.k_candidates)) {
                Ok(c) => c,
                Err((e, _)) => {
                    let mut out = PlanOutcome::failure(
                        format!("candidate generation failed at step {h}: {e}"),
                        goals.clone(),
                    );
                    out.diagnostics = diagnostics;
                    out.goal_calls = goal_calls;
                    out.stop_calls = stop_calls;
                    return Ok(out);
                }
            };

        // Language likelihoods; the ablation scores a stop continuation in
        // the same softmax batch and terminates when it wins.
        let scored: Vec<ScoredSkill> = match search.termination {
            Termination::GoalPrediction => {
                match score_candidates(backend, &ctx, &candidates, search.beta) {
                    Ok(s) => s,
                    Err(e) => {
                        let mut out = PlanOutcome::failure(
                            format!("candidate scoring failed at step {h}: {e}"),
                            goals.clone(),
                        );
                        out.diagnostics = diagnostics;
                        out.goal_calls = goal_calls;
                        out.stop_calls = stop_calls;
                        return Ok(out);
                    }
                }
            }
            Termination::StopScoring => {
                stop_calls += 1;
                match score_with_stop(backend, &ctx, &candidates, search.beta) {
                    Ok(s) => s,
                    Err(e) => {
                        let mut out = PlanOutcome::failure(
                            format!("candidate scoring failed at step {h}: {e}"),
                            goals.clone(),
                        );
                        out.diagnostics = diagnostics;
                        out.goal_calls = goal_calls;
                        out.stop_calls = stop_calls;
                        return Ok(out);
                    }
                }
            }
        };
        if search.termination == Termination::StopScoring {
            let stop = scored.iter().find(|s| s.call.is_none());
            let best_action = scored
                .iter()
                .filter(|s| s.call.is_some())
                .map(|s| s.s_llm)
                .fold(f64::NEG_INFINITY, f64::max);
            if stop.is_some_and(|s| s.s_llm > best_action) {
                let terminal = predicted_syms.last().cloned().unwrap_or_else(|| sym0.clone());
                let (actions, predicted_states) = match &current {
                    Some(opt) => (opt.actions.clone(), opt.states.clone()),
                    None => (Vec::new(), Vec::new()),
                };
                return Ok(PlanOutcome {
                    status: PlanStatus::PlanFound,
                    plan: Some(Plan {
                        skills,
                        actions,
                        predicted_states,
                        scores,
                        terminal_symbolic: terminal,
                    }),
                    goals,
                    diagnostics,
                    failure_reason: None,
                    goal_calls,
                    stop_calls,
                });
            }
        }

        // Optimize the full prefix ending in each candidate.
        let mut evaluated: Vec<Evaluated> = Vec::new();
        for (i, cand) in candidates.iter().enumerate() {
            let mut calls = skills.clone();
            calls.push(cand.clone());
            let mut steps = Vec::with_capacity(calls.len());
            for call in &calls {
                steps.push(SkillStep {
                    model: bundle.skill(call.primitive)?,
                    call,
                });
            }
            let opt = optimize_sequence(
                &steps,
                &start,
                &search.cem,
                &cfg.features,
                candidate_seed(seed, h, i),
                POLICY_WARM_STARTS,
            );
            let ood = opt.ood.iter().any(|&b| b);
            evaluated.push(Evaluated {
                index: i,
                call: cand.clone(),
                opt,
                ood,
            });
        }

        let llm_of = |call: &PrimitiveCall| {
            scored
                .iter()
                .find(|s| s.call.as_ref() == Some(call))
                .map(|s| s.s_llm)
                .unwrap_or(0.0)
        };
        let mut best: Option<(f64, String, usize)> = None;
        for ev in &evaluated {
            let s_llm = llm_of(&ev.call);
            let s_geo = ev.opt.final_step_value();
            let s = StepScore::new(s_llm, s_geo);
            diagnostics.push(CandidateRecord {
                iteration: h,
                skill: ev.call.canonical(),
                s_llm: s.s_llm,
                s_geo: s.s_geo,
                s_skill: s.s_skill,
                ood: ev.ood,
                objective: ev.opt.objective,
                selected: false,
            });
            if ev.ood {
                continue;
            }
            let key = ev.call.canonical();
            let better = match &best {
                None => true,
                Some((bs, bk, _)) => {
                    s.s_skill > *bs || (s.s_skill == *bs && key < *bk)
                }
            };
            if better {
                best = Some((s.s_skill, key, ev.index));
            }
        }
        let Some((_, _, chosen)) = best else {
            let mut out = PlanOutcome::failure(
                format!("all candidates out-of-distribution at step {h}"),
                goals.clone(),
            );
            out.diagnostics = diagnostics;
            out.goal_calls = goal_calls;
            out.stop_calls = stop_calls;
            return Ok(out);
        };
        let ev = evaluated
            .into_iter()
            .find(|e| e.index == chosen)
            .expect("selected index present");
        let selected_llm = llm_of(&ev.call);
        if let Some(rec) = diagnostics
            .iter_mut()
            .rev()
            .find(|r| r.iteration == h && r.skill == ev.call.canonical())
        {
            rec.selected = true;
        }

        // Cycle guard: re-selecting the same skill in the same imagined
        // symbolic state means the search is looping.
        let guard_state = predicted_syms
            .last()
            .cloned()
            .unwrap_or_else(|| sym0.clone());
        if !guard.insert((guard_state.render_strings(), ev.call.canonical())) {
            let mut out = PlanOutcome::failure(
                format!("cycle detected at step {h} on {}", ev.call.canonical()),
                goals.clone(),
            );
            out.diagnostics = diagnostics;
            out.goal_calls = goal_calls;
            out.stop_calls = stop_calls;
            return Ok(out);
        }

        skills.push(ev.call.clone());
        scores.push(StepScore::new(selected_llm, ev.opt.final_step_value()));
        predicted_syms = ev
            .opt
            .states
            .iter()
            .map(|ps| extract_symbolic(&ps.to_geometric(), &cfg.world))
            .collect();
        current = Some(ev.opt);

        if let Some(goals) = &goals {
            if let Some(t) = predicted_syms.iter().position(|s| f_sat(goals, s)) {
                let opt = current.expect("sequence just committed");
                let plan = Plan {
                    skills: skills[..=t].to_vec(),
                    actions: opt.actions[..=t].to_vec(),
                    predicted_states: opt.states[..=t].to_vec(),
                    scores: scores[..=t].to_vec(),
                    terminal_symbolic: predicted_syms[t].clone(),
                };
                return Ok(PlanOutcome {
                    status: PlanStatus::PlanFound,
                    plan: Some(plan),
                    goals: Some(goals.clone()),
                    diagnostics,
                    failure_reason: None,
                    goal_calls,
                    stop_calls,
                });
            }
        }
    }

    let mut out = PlanOutcome::failure(
        format!("no satisfying plan within {} steps", search.d_max),
        goals,
    );
    out.diagnostics = diagnostics;
    out.goal_calls = goal_calls;
    out.stop_calls = stop_calls;
    Ok(out)
}

/// Hierarchical baseline: ask the backend for whole skill sequences, optimize
/// each, filter out sequences with any out-of-distribution step or a low
/// objective, truncate at the first imagined state satisfying the goals, and
/// return the highest-objective survivor.
pub fn hierarchical_plan(
    instruction: &str,
    initial: &GeometricState,
    bundle: &ModelBundle,
    backend: &dyn LlmBackend,
    cfg: &RunConfig,
    seed: u64,
) -> Result<PlanOutcome, CheckpointError> {
    let search = &cfg.search;
    let start = PlanState::from_geometric(initial);
    let sym0 = extract_symbolic(initial, &cfg.world);
    let mut ctx = task_context(instruction, initial, cfg);

    let goals = match retry_once(|| predict_goals(backend, &ctx)) {
        Ok(g) => g,
        Err((e, calls)) => {
            let mut out = PlanOutcome::failure(format!("goal prediction failed: {e}"), None);
            out.goal_calls = calls;
            return Ok(out);
        }
    };
    ctx.goal_sets = Some(goals.render());
    if f_sat(&goals, &sym0) {
        return Ok(PlanOutcome {
            status: PlanStatus::PlanFound,
            plan: Some(Plan {
                skills: Vec::new(),
                actions: Vec::new(),
                predicted_states: Vec::new(),
                scores: Vec::new(),
                terminal_symbolic: sym0,
            }),
            goals: Some(goals),
            diagnostics: Vec::new(),
            failure_reason: None,
            goal_calls: 1,
            stop_calls: 0,
        });
    }

    let sequences = match retry_once(|| generate_full_plans(backend, &ctx, search.k_candidates)) {
        Ok(s) => s,
        Err((e, _)) => {
            let mut out =
                PlanOutcome::failure(format!("sequence generation failed: {e}"), Some(goals));
            out.goal_calls = 1;
            return Ok(out);
        }
    };

    let mut diagnostics = Vec::new();
    let mut best: Option<(f64, Plan)> = None;
    for (i, calls) in sequences.iter().enumerate() {
        let mut steps = Vec::with_capacity(calls.len());
        for call in calls {
            steps.push(SkillStep {
                model: bundle.skill(call.primitive)?,
                call,
            });
        }
        let opt = optimize_sequence(
            &steps,
            &start,
            &search.cem,
            &cfg.features,
            candidate_seed(seed, 0, i),
            POLICY_WARM_STARTS,
        );
        let ood = opt.ood.iter().any(|&b| b);
        let skill_text = calls
            .iter()
            .map(|c| c.canonical())
            .collect::<Vec<_>>()
            .join("; ");
        let predicted_syms: Vec<SymbolicState> = opt
            .states
            .iter()
            .map(|ps| extract_symbolic(&ps.to_geometric(), &cfg.world))
            .collect();
        let sat_index = predicted_syms.iter().position(|s| f_sat(&goals, s));
        let keep = !ood && opt.objective >= search.q_floor && sat_index.is_some();
        diagnostics.push(CandidateRecord {
            iteration: i + 1,
            skill: skill_text,
            s_llm: 0.0,
            s_geo: opt.final_step_value(),
            s_skill: 0.0,
            ood,
            objective: opt.objective,
            selected: false,
        });
        if !keep {
            continue;
        }
        let t = sat_index.expect("kept plans satisfy");
        let objective: f64 = opt.step_values[..=t].iter().product();
        let plan = Plan {
            skills: calls[..=t].to_vec(),
            actions: opt.actions[..=t].to_vec(),
            predicted_states: opt.states[..=t].to_vec(),
            scores: opt.step_values[..=t]
                .iter()
                .map(|&v| StepScore::new(1.0, v))
                .collect(),
            terminal_symbolic: predicted_syms[t].clone(),
        };
        if best.as_ref().map_or(true, |(b, _)| objective > *b) {
            diagnostics
                .last_mut()
                .expect("record just pushed")
                .selected = true;
            best = Some((objective, plan));
        }
    }

    Ok(match best {
        Some((_, plan)) => PlanOutcome {
            status: PlanStatus::PlanFound,
            plan: Some(plan),
            goals: Some(goals),
            diagnostics,
            failure_reason: None,
            goal_calls: 1,
            stop_calls: 0,
        },
        None => {
            let mut out = PlanOutcome::failure(
                "no generated sequence survived feasibility filtering".to_string(),
                Some(goals),
            );
            out.diagnostics = diagnostics;
            out.goal_calls = 1;
            out
        }
    })
}

/// The decision a reactive planner takes at one step.
#[derive(Debug, Clone)]
pub enum StepDecision {
    Execute {
        call: PrimitiveCall,
        action: ActionVector,
        score: StepScore,
    },
    Stop,
    /// Nothing selectable this step (all candidates rejected).
    NoOp { reason: String },
}

#[derive(Debug, Clone)]
pub struct ReactiveOutcome {
    pub decision: StepDecision,
    pub diagnostics: Vec<CandidateRecord>,
    pub stop_calls: usize,
}

/// One step of the reactive generate-and-score baselines: candidates plus a
/// stop continuation are scored by the backend, each candidate's geometric
/// term is a sampled value estimate at the TRUE current state (no sequence
/// optimization), out-of-distribution candidates are dropped, and the argmax
/// is returned for the caller to execute. `state_history` present switches
/// the prompt to the history-conditioned variant.
pub fn reactive_step(
    instruction: &str,
    state: &GeometricState,
    history: &[String],
    state_history: Option<&[Vec<String>]>,
    bundle: &ModelBundle,
    backend: &dyn LlmBackend,
    cfg: &RunConfig,
    seed: u64,
) -> Result<ReactiveOutcome, CheckpointError> {
    let search = &cfg.search;
    let mut ctx = task_context(instruction, state, cfg);
    ctx.history = history.to_vec();
    if let Some(sh) = state_history {
        ctx.state_history = sh.to_vec();
    }

    let candidates = match retry_once(|| generate_candidates(backend, &ctx, search.k_candidates))
    {
        Ok(c) => c,
        Err((e, _)) => {
            return Ok(ReactiveOutcome {
                decision: StepDecision::NoOp {
                    reason: format!("candidate generation failed: {e}"),
                },
                diagnostics: Vec::new(),
                stop_calls: 0,
            })
        }
    };
    let scored = match score_with_stop(backend, &ctx, &candidates, search.beta) {
        Ok(s) => s,
        Err(e) => {
            return Ok(ReactiveOutcome {
                decision: StepDecision::NoOp {
                    reason: format!("scoring failed: {e}"),
                },
                diagnostics: Vec::new(),
                stop_calls: 1,
            })
        }
    };

    let plan_state = PlanState::from_geometric(state);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea0_51e9);
    let mut diagnostics = Vec::new();
    let mut best: Option<(f64, String, StepDecision)> = None;
    for entry in &scored {
        let (s_geo, ood, decision) = match &entry.call {
            None => {
                // The stop continuation has no geometric term.
                (1.0, false, StepDecision::Stop)
            }
            Some(call) => {
                let model = bundle.skill(call.primitive)?;
                let encoded = plan_state.encode(call, &cfg.features);
                let m = search.value_samples.max(1);
                let adim = call.primitive.action_dim();
                let mut x = Array2::zeros((m, encoded.len() + adim));
                let mut samples = Vec::with_capacity(m);
                for i in 0..m {
                    let action = model.policy.sample(&encoded, &mut rng);
                    let row = QEnsemble::input(&encoded, &action.0);
                    x.row_mut(i).assign(&row);
                    samples.push(action);
                }
                let (values, variances) = model.q.value_and_variance_batch(&x);
                let v_estimate = values.mean().unwrap_or(0.0).clamp(0.0, 1.0);
                let best_i = (0..m)
                    .max_by(|&a, &b| values[a].total_cmp(&values[b]))
                    .expect("nonempty samples");
                let ood = variances[best_i] > model.ood_epsilon;
                (
                    v_estimate,
                    ood,
                    StepDecision::Execute {
                        call: call.clone(),
                        action: samples[best_i].clone(),
                        score: StepScore::new(entry.s_llm, v_estimate),
                    },
                )
            }
        };
        let score = StepScore::new(entry.s_llm, s_geo);
        diagnostics.push(CandidateRecord {
            iteration: 1,
            skill: entry.text.clone(),
            s_llm: score.s_llm,
            s_geo: score.s_geo,
            s_skill: score.s_skill,
            ood,
            objective: s_geo,
            selected: false,
        });
        if ood {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bs, bk, _)) => {
                score.s_skill > *bs || (score.s_skill == *bs && entry.text < *bk)
            }
        };
        if better {
            best = Some((score.s_skill, entry.text.clone(), decision));
        }
    }

    let decision = match best {
        Some((_, key, decision)) => {
            if let Some(rec) = diagnostics.iter_mut().find(|r| r.skill == key) {
                rec.selected = true;
            }
            decision
        }
        None => StepDecision::NoOp {
            reason: "all candidates out-of-distribution".to_string(),
        },
    };
    Ok(ReactiveOutcome {
        decision,
        diagnostics,
        stop_calls: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::scripted::ScriptedBackend;
    use crate::world::{Predicate, Proposition};
    use rand::Rng;

    #[test]
    fn f_sat_conjunction_within_disjunction_across() {
        let goals = GoalSpec {
            sets: vec![
                vec![
                    Proposition::on("red box", "rack"),
                    Proposition::on("blue box", "rack"),
                ],
                vec![Proposition::under("cyan box", "rack")],
            ],
        };
        let only_first_half = SymbolicState::new(vec![Proposition::on("red box", "rack")]);
        assert!(!f_sat(&goals, &only_first_half));
        let second_set = SymbolicState::new(vec![
            Proposition::under("cyan box", "rack"),
            Proposition::on("red box", "rack"),
        ]);
        assert!(f_sat(&goals, &second_set));
        let first_set = SymbolicState::new(vec![
            Proposition::on("red box", "rack"),
            Proposition::on("blue box", "rack"),
            Proposition::on("hook", "table"),
        ]);
        assert!(f_sat(&goals, &first_set));
    }

    #[test]
    fn f_sat_agrees_with_brute_force_oracle() {
        // Random (goals, state) pairs over a small proposition universe,
        // checked against an exhaustive subset test.
        let objects = ["red box", "blue box", "hook"];
        let universe: Vec<Proposition> = objects
            .iter()
            .flat_map(|o| {
                [
                    Proposition::on(o, "table"),
                    Proposition::on(o, "rack"),
                    Proposition::under(o, "rack"),
                    Proposition::inhand(o),
                ]
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let state = SymbolicState::new(
                universe
                    .iter()
                    .filter(|_| rng.gen_bool(0.4))
                    .cloned()
                    .collect(),
            );
            let n_sets = rng.gen_range(1..4);
            let sets: Vec<Vec<Proposition>> = (0..n_sets)
                .map(|_| {
                    universe
                        .iter()
                        .filter(|_| rng.gen_bool(0.2))
                        .cloned()
                        .collect()
                })
                .collect();
            let goals = GoalSpec { sets: sets.clone() };
            let brute = sets.iter().any(|set: &Vec<Proposition>| {
                set.iter().all(|p| state.props().contains(p))
            });
            assert_eq!(f_sat(&goals, &state), brute);
        }
    }

    fn sample_fixture(cfg: &RunConfig) -> GeometricState {
        use crate::world::{sample_scene, ObjectSpec, SceneSampler};
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::rack("rack"),
            ObjectSpec::hook("hook"),
            ObjectSpec::small_box("red box"),
        ];
        let spec = SymbolicState::new(vec![
            Proposition::on("rack", "table"),
            Proposition::on("hook", "table"),
            Proposition::on("red box", "table"),
        ]);
        let sampler = SceneSampler::new(cfg.world.clone());
        sample_scene(&spec, &objects, 11, &sampler).unwrap()
    }

    #[test]
    fn task_context_renders_scene() {
        let cfg = RunConfig::default();
        let geo = sample_fixture(&cfg);
        let ctx = task_context("put the red box on the rack", &geo, &cfg);
        assert_eq!(ctx.scene_objects[0], "table");
        assert!(ctx.scene_objects.iter().any(|o| o == "red box"));
        assert!(ctx
            .object_relationships
            .iter()
            .any(|r| r.starts_with("on(")));
    }

    #[test]
    fn retry_once_counts_calls() {
        let mut calls = 0;
        let result: Result<(), _> = retry_once(|| {
            calls += 1;
            Err(LlmError::EmptyCandidates("x".to_string()))
        });
        assert!(result.is_err());
        assert_eq!(calls, 2);
        assert_eq!(result.unwrap_err().1, 2);

        let mut calls = 0;
        let result = retry_once(|| {
            calls += 1;
            if calls == 1 {
                Err(LlmError::EmptyCandidates("x".to_string()))
            } else {
                Ok(calls)
            }
        });
        assert_eq!(result.unwrap(), 2);
    }

    #[test]
    fn goal_prediction_uses_scripted_backend() {
        let cfg = RunConfig::default();
        let geo = sample_fixture(&cfg);
        let ctx = task_context("put the red box on the rack", &geo, &cfg);
        let goals = predict_goals(&ScriptedBackend::new(), &ctx).unwrap();
        assert!(goals
            .sets
            .iter()
            .any(|set| set.contains(&Proposition::on("red box", "rack"))));
        let _ = Predicate::On;
    }
}
