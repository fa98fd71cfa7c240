//! Language-model task guidance: prompt construction, goal proposition
//! prediction, candidate-skill generation, likelihood scoring, and full-plan
//! generation, over an exchangeable backend (scripted oracle or HTTP).

pub mod http;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Predicate, Primitive, PrimitiveCall, Proposition};

/// The eleven in-context example blocks included verbatim in every prompt.
pub fn in_context_examples() -> &'static str {
    include_str!("assets/in_context_examples.txt")
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("completion could not be parsed as {expected}: {text:?}")]
    ParseFailure { expected: &'static str, text: String },
    #[error("unknown object `{object}` in `{text}`")]
    UnknownObject { object: String, text: String },
    #[error("unknown predicate in `{0}`")]
    UnknownPredicate(String),
    #[error("no parseable candidates in completion: {0:?}")]
    EmptyCandidates(String),
    #[error("backend failure{}: {message}", candidate.map(|i| format!(" scoring candidate {i}")).unwrap_or_default())]
    Backend {
        message: String,
        candidate: Option<usize>,
    },
}

/// Everything needed to render a prompt for the current task state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    /// Ordered scene object names, including the table.
    pub scene_objects: Vec<String>,
    /// Ordered proposition strings for the initial state.
    pub object_relationships: Vec<String>,
    pub instruction: String,
    /// Canonical strings of already-executed (or hypothesized) skills.
    pub history: Vec<String>,
    /// Optional per-step relationship strings aligned with `history`; when
    /// present, each executed action is followed by the resulting state.
    pub state_history: Vec<Vec<String>>,
    /// Predicted goal proposition sets, rendered once available.
    pub goal_sets: Option<Vec<Vec<String>>>,
}

impl PromptContext {
    pub fn new(scene_objects: &[&str], relationships: &[String], instruction: &str) -> Self {
        Self {
            scene_objects: scene_objects.iter().map(|s| s.to_string()).collect(),
            object_relationships: relationships.to_vec(),
            instruction: instruction.to_string(),
            history: Vec::new(),
            state_history: Vec::new(),
            goal_sets: None,
        }
    }
}

/// What the prompt asks the model to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    /// Terminates at `Goal predicate set:` for completion.
    Goal,
    /// Asks for the top-k next skills.
    GenerateK(usize),
    /// Terminates at `Executed action: ` for likelihood scoring.
    ScoreOne,
    /// Asks for whole skill sequences.
    FullPlans,
}

fn render_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("'{s}'")).collect();
    format!("[{}]", quoted.join(", "))
}

fn render_nested_list(sets: &[Vec<String>]) -> String {
    let inner: Vec<String> = sets.iter().map(|s| render_list(s)).collect();
    format!("[{}]", inner.join(", "))
}

/// Assemble the full prompt: the in-context examples verbatim, then the query
/// block. Byte-stable for fixed inputs.
pub fn build_prompt(ctx: &PromptContext, mode: PromptMode) -> String {
    let mut out = String::from(in_context_examples());
    out.push('\n');
    out.push_str(&format!(
        "Available scene objects: {}\n",
        render_list(&ctx.scene_objects)
    ));
    out.push_str(&format!(
        "Object relationships: {}\n",
        render_list(&ctx.object_relationships)
    ));
    for (i, action) in ctx.history.iter().enumerate() {
        out.push_str(&format!("Executed action: {action}\n"));
        if let Some(state) = ctx.state_history.get(i) {
            out.push_str(&format!("Object relationships: {}\n", render_list(state)));
        }
    }
    out.push_str(&format!("Human instruction: {}\n", ctx.instruction));
    match mode {
        PromptMode::Goal => out.push_str("Goal predicate set:"),
        PromptMode::GenerateK(k) => {
            if let Some(goals) = &ctx.goal_sets {
                out.push_str(&format!("Goal predicate set: {}\n", render_nested_list(goals)));
            }
            out.push_str(&format!("Top {k} next valid robot actions (python list):"));
        }
        PromptMode::ScoreOne => {
            if let Some(goals) = &ctx.goal_sets {
                out.push_str(&format!("Goal predicate set: {}\n", render_nested_list(goals)));
            }
            out.push_str("Executed action: ");
        }
        PromptMode::FullPlans => {
            if let Some(goals) = &ctx.goal_sets {
                out.push_str(&format!("Goal predicate set: {}\n", render_nested_list(goals)));
            }
            out.push_str("Top 1 robot action sequences:");
        }
    }
    out
}

/// Predicted goal proposition sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub sets: Vec<Vec<Proposition>>,
}

impl GoalSpec {
    pub fn render(&self) -> Vec<Vec<String>> {
        self.sets
            .iter()
            .map(|set| set.iter().map(|p| p.to_string()).collect())
            .collect()
    }
}

/// A candidate skill with its likelihood weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSkill {
    pub call: Option<PrimitiveCall>,
    /// Canonical string form (`stop()` has no call).
    pub text: String,
    pub raw_logprob: f64,
    pub s_llm: f64,
}

/// Completion plus log-probability scoring. Implementations must be
/// order-stable: results correspond to the inputs by index.
pub trait LlmBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, LlmError>;
    fn score(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError>;
}

/// Extract the quoted strings of the first bracketed python-style list.
/// Returns `None` when no list is present.
pub(crate) fn parse_string_list(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let mut depth = 0usize;
    let mut out = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    for c in text[start..].chars() {
        match quote {
            Some(q) => {
                if c == q {
                    out.push(std::mem::take(&mut current));
                    quote = None;
                } else {
                    current.push(c);
                }
            }
            None => match c {
                '[' => depth += 1,
                ']' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        return Some(out);
                    }
                }
                '\'' | '"' => quote = Some(c),
                _ => {}
            },
        }
    }
    None
}

/// Extract a list of lists of quoted strings (e.g. goal predicate sets).
pub(crate) fn parse_nested_string_lists(text: &str) -> Option<Vec<Vec<String>>> {
    let start = text.find('[')?;
    let mut depth = 0usize;
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut inner: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    for c in text[start..].chars() {
        match quote {
            Some(q) => {
                if c == q {
                    inner.push(std::mem::take(&mut current));
                    quote = None;
                } else {
                    current.push(c);
                }
            }
            None => match c {
                '[' => {
                    depth += 1;
                    if depth == 2 {
                        inner = Vec::new();
                    }
                }
                ']' => {
                    if depth == 2 {
                        out.push(std::mem::take(&mut inner));
                    }
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        return Some(out);
                    }
                }
                '\'' | '"' => quote = Some(c),
                _ => {}
            },
        }
    }
    None
}

/// Parse `on(a, b)`-style proposition text, validating the predicate and that
/// every argument is a scene object.
pub fn parse_proposition(text: &str, scene_objects: &[String]) -> Result<Proposition, LlmError> {
    let text = text.trim();
    let open = text.find('(').ok_or_else(|| LlmError::ParseFailure {
        expected: "proposition",
        text: text.to_string(),
    })?;
    let close = text.rfind(')').ok_or_else(|| LlmError::ParseFailure {
        expected: "proposition",
        text: text.to_string(),
    })?;
    let name = text[..open].trim().to_ascii_lowercase();
    let predicate = match name.as_str() {
        "on" => Predicate::On,
        "under" => Predicate::Under,
        "inhand" => Predicate::Inhand,
        _ => return Err(LlmError::UnknownPredicate(text.to_string())),
    };
    let args: Vec<String> = text[open + 1..close]
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    if args.len() != predicate.arity() {
        return Err(LlmError::ParseFailure {
            expected: "proposition with matching arity",
            text: text.to_string(),
        });
    }
    for arg in &args {
        if !scene_objects.iter().any(|o| o == arg) {
            return Err(LlmError::UnknownObject {
                object: arg.clone(),
                text: text.to_string(),
            });
        }
    }
    Ok(Proposition { predicate, args })
}

/// Tolerant skill-call parser: case-insensitive primitive names, flexible
/// spacing, and the two-argument push shorthand (`push(obj, rack)`) expanded
/// with the scene's hook. Returns `None` for anything unusable.
pub fn parse_call(text: &str, scene_objects: &[String]) -> Option<PrimitiveCall> {
    let text = text.trim();
    let open = text.find('(')?;
    let close = text.rfind(')')?;
    let primitive = Primitive::parse(&text[..open])?;
    let mut args: Vec<String> = text[open + 1..close]
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    if primitive == Primitive::Push && args.len() == 2 {
        // Shorthand omits the tool; borrow the scene's hook.
        let hook = scene_objects.iter().find(|o| o.contains("hook"))?;
        args.insert(1, hook.clone());
    }
    if args.len() != primitive.arity() {
        return None;
    }
    for arg in &args {
        let known = scene_objects.iter().any(|o| o == arg);
        if !known {
            return None;
        }
    }
    Some(PrimitiveCall {
        primitive,
        args,
    })
}

/// Ask the backend for goal proposition sets and validate them.
pub fn predict_goals(backend: &dyn LlmBackend, ctx: &PromptContext) -> Result<GoalSpec, LlmError> {
    let prompt = build_prompt(ctx, PromptMode::Goal);
    let completion = backend.complete(&prompt, 256)?;
    let raw = parse_nested_string_lists(&completion).ok_or_else(|| LlmError::ParseFailure {
        expected: "list of proposition lists",
        text: completion.clone(),
    })?;
    if raw.is_empty() || raw.iter().all(|s| s.is_empty()) {
        return Err(LlmError::ParseFailure {
            expected: "at least one goal proposition set",
            text: completion,
        });
    }
    let mut sets = Vec::with_capacity(raw.len());
    for set in &raw {
        let mut props = Vec::with_capacity(set.len());
        for text in set {
            props.push(parse_proposition(text, &ctx.scene_objects)?);
        }
        props.sort();
        props.dedup();
        sets.push(props);
    }
    Ok(GoalSpec { sets })
}

/// Ask for the top-k next skills; unparseable entries are dropped, duplicates
/// removed, order preserved.
pub fn generate_candidates(
    backend: &dyn LlmBackend,
    ctx: &PromptContext,
    k: usize,
) -> Result<Vec<PrimitiveCall>, LlmError> {
    let prompt = build_prompt(ctx, PromptMode::GenerateK(k));
    let completion = backend.complete(&prompt, 256)?;
    let entries = parse_string_list(&completion).ok_or_else(|| LlmError::ParseFailure {
        expected: "python list of skills",
        text: completion.clone(),
    })?;
    let mut calls = Vec::new();
    for entry in &entries {
        if let Some(call) = parse_call(entry, &ctx.scene_objects) {
            if !calls.contains(&call) {
                calls.push(call);
            }
        }
    }
    if calls.is_empty() {
        return Err(LlmError::EmptyCandidates(completion));
    }
    calls.truncate(k);
    Ok(calls)
}

/// Dampened softmax over summed token log-probabilities (Appendix-style
/// β-dampening; β=0 degenerates to uniform).
pub fn softmax_weights(logprobs: &[f64], beta: f64) -> Vec<f64> {
    let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logprobs.iter().map(|&l| (beta * (l - max)).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Score each candidate's likelihood as the executed next action.
pub fn score_candidates(
    backend: &dyn LlmBackend,
    ctx: &PromptContext,
    candidates: &[PrimitiveCall],
    beta: f64,
) -> Result<Vec<ScoredSkill>, LlmError> {
    assert!(!candidates.is_empty(), "need candidates to score");
    let prompt = build_prompt(ctx, PromptMode::ScoreOne);
    let mut logprobs = Vec::with_capacity(candidates.len());
    for (i, call) in candidates.iter().enumerate() {
        let lp = backend
            .score(&prompt, &call.canonical())
            .map_err(|e| LlmError::Backend {
                message: e.to_string(),
                candidate: Some(i),
            })?;
        logprobs.push(lp);
    }
    let weights = softmax_weights(&logprobs, beta);
    Ok(candidates
        .iter()
        .zip(logprobs.iter().zip(&weights))
        .map(|(call, (&raw_logprob, &s_llm))| ScoredSkill {
            call: Some(call.clone()),
            text: call.canonical(),
            raw_logprob,
            s_llm,
        })
        .collect())
}

/// Score the literal `stop()` continuation alongside candidates; the combined
/// batch shares one softmax.
pub fn score_with_stop(
    backend: &dyn LlmBackend,
    ctx: &PromptContext,
    candidates: &[PrimitiveCall],
    beta: f64,
) -> Result<Vec<ScoredSkill>, LlmError> {
    let prompt = build_prompt(ctx, PromptMode::ScoreOne);
    let mut texts: Vec<String> = candidates.iter().map(|c| c.canonical()).collect();
    texts.push("stop()".to_string());
    let mut logprobs = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let lp = backend.score(&prompt, text).map_err(|e| LlmError::Backend {
            message: e.to_string(),
            candidate: Some(i),
        })?;
        logprobs.push(lp);
    }
    let weights = softmax_weights(&logprobs, beta);
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| ScoredSkill {
            call: candidates.get(i).cloned(),
            text,
            raw_logprob: logprobs[i],
            s_llm: weights[i],
        })
        .collect())
}

/// Ask for up to k whole skill sequences, one python list per line.
pub fn generate_full_plans(
    backend: &dyn LlmBackend,
    ctx: &PromptContext,
    k: usize,
) -> Result<Vec<Vec<PrimitiveCall>>, LlmError> {
    let prompt = build_prompt(ctx, PromptMode::FullPlans);
    let completion = backend.complete(&prompt, 1024)?;
    let mut plans = Vec::new();
    for line in completion.lines() {
        let Some(entries) = parse_string_list(line) else {
            continue;
        };
        let calls: Vec<PrimitiveCall> = entries
            .iter()
            .filter_map(|e| parse_call(e, &ctx.scene_objects))
            .collect();
        if calls.len() == entries.len() && !calls.is_empty() {
            plans.push(calls);
        }
        if plans.len() == k {
            break;
        }
    }
    if plans.is_empty() {
        return Err(LlmError::EmptyCandidates(completion));
    }
    Ok(plans)
}
