//! Deterministic scripted backend: an offline stand-in for a language model
//! that answers prompts by parsing the final query block and reasoning over
//! the symbolic transition model. Pure (no hidden state), byte-stable, and
//! deliberately geometry-blind — its suggestions ignore reach limits, exactly
//! like a text-only model's would.

use std::collections::BTreeSet;

use crate::symbolic::SymbolicDomain;
use crate::world::{ObjectKind, ObjectSpec, Primitive, PrimitiveCall, Proposition, SymbolicState};

use super::{parse_nested_string_lists, parse_proposition, parse_string_list, LlmBackend, LlmError};

const MAX_DEPTH: usize = 12;

/// What the final query block asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryMode {
    Goal,
    GenerateK(usize),
    Score,
    FullPlans,
}

#[derive(Debug)]
struct Query {
    scene_objects: Vec<String>,
    domain: SymbolicDomain,
    state: SymbolicState,
    instruction: String,
    goals: Option<Vec<Vec<Proposition>>>,
}

fn spec_for(name: &str) -> ObjectSpec {
    if name == "table" {
        ObjectSpec::table()
    } else if name.contains("hook") {
        ObjectSpec::hook(name)
    } else if name.contains("rack") {
        ObjectSpec::rack(name)
    } else {
        ObjectSpec::small_box(name)
    }
}

fn parse_failure(expected: &'static str, text: &str) -> LlmError {
    LlmError::ParseFailure {
        expected,
        text: text.to_string(),
    }
}

/// Parse the final query block of a prompt (everything after the last
/// `Available scene objects:` line), replaying executed actions to recover
/// the current symbolic state.
fn parse_query(prompt: &str) -> Result<(Query, QueryMode), LlmError> {
    let start = prompt
        .rfind("Available scene objects:")
        .ok_or_else(|| parse_failure("query block", prompt))?;
    let block = &prompt[start..];

    let mut scene_objects: Vec<String> = Vec::new();
    let mut instruction = String::new();
    let mut goals: Option<Vec<Vec<Proposition>>> = None;
    let mut state = SymbolicState::default();
    let mut domain = SymbolicDomain::new(&[]);
    let mut mode = None;

    for line in block.lines() {
        if let Some(rest) = line.strip_prefix("Available scene objects:") {
            scene_objects =
                parse_string_list(rest).ok_or_else(|| parse_failure("scene object list", line))?;
            let specs: Vec<ObjectSpec> = scene_objects.iter().map(|n| spec_for(n)).collect();
            domain = SymbolicDomain::new(&specs);
        } else if let Some(rest) = line.strip_prefix("Object relationships:") {
            let texts =
                parse_string_list(rest).ok_or_else(|| parse_failure("relationship list", line))?;
            let mut props = Vec::with_capacity(texts.len());
            for t in &texts {
                props.push(parse_proposition(t, &scene_objects)?);
            }
            state = SymbolicState::new(props);
        } else if let Some(rest) = line.strip_prefix("Executed action:") {
            let rest = rest.trim();
            if rest.is_empty() {
                mode = Some(QueryMode::Score);
            } else if let Some(call) = super::parse_call(rest, &scene_objects) {
                if let Some(next) = domain.apply(&state, &call) {
                    state = next;
                }
            }
        } else if let Some(rest) = line.strip_prefix("Human instruction:") {
            instruction = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("Goal predicate set:") {
            if rest.trim().is_empty() {
                mode = Some(QueryMode::Goal);
            } else {
                let raw = parse_nested_string_lists(rest)
                    .ok_or_else(|| parse_failure("goal predicate sets", line))?;
                let mut sets = Vec::with_capacity(raw.len());
                for set in &raw {
                    let mut props = Vec::with_capacity(set.len());
                    for t in set {
                        props.push(parse_proposition(t, &scene_objects)?);
                    }
                    sets.push(props);
                }
                goals = Some(sets);
            }
        } else if let Some(rest) = line.strip_prefix("Top ") {
            if rest.contains("robot action sequences") {
                mode = Some(QueryMode::FullPlans);
            } else if rest.contains("next valid robot actions") {
                let k: usize = rest
                    .split_whitespace()
                    .next()
                    .and_then(|w| w.parse().ok())
                    .unwrap_or(5);
                mode = Some(QueryMode::GenerateK(k));
            }
        }
    }
    let mode = mode.ok_or_else(|| parse_failure("query tail", block))?;
    if scene_objects.is_empty() {
        return Err(parse_failure("scene objects", block));
    }
    Ok((
        Query {
            scene_objects,
            domain,
            state,
            instruction,
            goals,
        },
        mode,
    ))
}

/// A group of scene objects an instruction clause refers to, plus how many of
/// them must satisfy the clause's relation.
fn clause_group(clause: &str, domain: &SymbolicDomain) -> (Vec<String>, usize) {
    // Only movable objects can be the subject of a goal relation; this also
    // keeps receptacle mentions ("...on the rack") out of the object group.
    let names: Vec<String> = domain
        .objects()
        .iter()
        .filter(|o| o.kind.movable())
        .map(|o| o.name.clone())
        .collect();
    // An object named as an instrument ("use the hook to ...") is not a goal
    // subject.
    let instrumental = |n: &str| {
        [format!("use the {n}"), format!("using the {n}"), format!("with the {n}")]
            .iter()
            .any(|phrase| clause.contains(phrase.as_str()))
    };
    let explicit: Vec<String> = names
        .iter()
        .filter(|n| clause.contains(n.as_str()) && !instrumental(n))
        .cloned()
        .collect();
    if !explicit.is_empty() {
        let count = explicit.len();
        return (explicit, count);
    }
    let boxes: Vec<String> = domain
        .objects()
        .iter()
        .filter(|o| o.kind == ObjectKind::Box)
        .map(|o| o.name.clone())
        .collect();
    let group: Vec<String> = if clause.contains("dairy") {
        names
            .iter()
            .filter(|n| ["milk", "yogurt", "cheese", "butter"].iter().any(|d| n.contains(d)))
            .cloned()
            .collect()
    } else if clause.contains("primary color") {
        boxes
            .iter()
            .filter(|n| ["red", "blue", "yellow"].iter().any(|c| n.contains(c)))
            .cloned()
            .collect()
    } else if clause.contains("warm color") {
        boxes
            .iter()
            .filter(|n| ["red", "orange", "yellow"].iter().any(|c| n.contains(c)))
            .cloned()
            .collect()
    } else if clause.contains("ocean color") || clause.contains("cool color") {
        boxes
            .iter()
            .filter(|n| ["blue", "cyan"].iter().any(|c| n.contains(c)))
            .cloned()
            .collect()
    } else if clause.contains("box") {
        boxes
    } else {
        // No recognizable object reference; the clause is skipped.
        Vec::new()
    };
    let words: Vec<&str> = clause
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let count = if words.contains(&"all") || words.contains(&"every") {
        group.len()
    } else if words.contains(&"one") || words.contains(&"a") || words.contains(&"any") {
        1
    } else if words.contains(&"two") || words.contains(&"both") {
        2
    } else if words.contains(&"three") {
        3
    } else if words.contains(&"four") {
        4
    } else if clause.contains("boxes") || clause.contains("products") {
        group.len()
    } else {
        1
    };
    let count = count.min(group.len()).max(1);
    (group, count)
}

fn combinations(items: &[String], k: usize) -> Vec<Vec<String>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    let head = &items[0];
    for mut rest in combinations(&items[1..], k - 1) {
        rest.insert(0, head.clone());
        out.push(rest);
    }
    out.extend(combinations(&items[1..], k));
    out
}

/// Infer goal proposition sets from the instruction text. Each disjunct set is
/// one way of satisfying the instruction; ambiguity over which objects to use
/// expands to one set per combination.
fn infer_goals(instruction: &str, domain: &SymbolicDomain) -> Vec<Vec<Proposition>> {
    // "pick and place X onto Y" is one clause about X's destination, not a
    // clause about holding X.
    let lower = instruction.to_lowercase().replace("pick and place", "place");
    let rack = domain
        .objects()
        .iter()
        .find(|o| o.kind == ObjectKind::Rack)
        .map(|o| o.name.clone());
    let mut per_clause: Vec<Vec<Vec<Proposition>>> = Vec::new();
    // Clauses are separated by "then"; plain "and" joins object lists inside
    // one clause, so it is not a separator.
    let clauses = lower.split(" then ").map(str::trim).filter(|c| !c.is_empty());
    for clause in clauses {
        // Relation for this clause, checked from most to least specific.
        let relation: Option<Box<dyn Fn(&str) -> Proposition>> = if (clause.contains("under")
            || clause.contains("beneath"))
            && rack.is_some()
        {
            let r = rack.clone().unwrap();
            Some(Box::new(move |o: &str| Proposition::under(o, &r)))
        } else if clause.contains("off the rack") || clause.contains("table") {
            Some(Box::new(|o: &str| Proposition::on(o, "table")))
        } else if clause.contains("rack") && rack.is_some() {
            let r = rack.clone().unwrap();
            Some(Box::new(move |o: &str| Proposition::on(o, &r)))
        } else if clause.contains("pick") || clause.contains("hold") || clause.contains("grab") {
            Some(Box::new(|o: &str| Proposition::inhand(o)))
        } else {
            None
        };
        let Some(relation) = relation else { continue };
        let (group, count) = clause_group(clause, domain);
        if group.is_empty() {
            continue;
        }
        let sets: Vec<Vec<Proposition>> = combinations(&group, count)
            .into_iter()
            .map(|combo| combo.iter().map(|o| relation(o)).collect())
            .collect();
        if !sets.is_empty() {
            per_clause.push(sets);
        }
    }
    // Cross product across clauses, capped to keep prompts bounded.
    let mut out: Vec<Vec<Proposition>> = vec![Vec::new()];
    for sets in per_clause {
        let mut next = Vec::new();
        for base in &out {
            for set in &sets {
                let mut merged = base.clone();
                merged.extend(set.iter().cloned());
                merged.sort();
                merged.dedup();
                next.push(merged);
                if next.len() >= 20 {
                    break;
                }
            }
            if next.len() >= 20 {
                break;
            }
        }
        out = next;
    }
    out.retain(|s| !s.is_empty());
    out
}

fn effective_goals(q: &Query) -> Vec<Vec<Proposition>> {
    match &q.goals {
        Some(g) if !g.is_empty() => g.clone(),
        _ => infer_goals(&q.instruction, &q.domain),
    }
}

/// All applicable skills ranked the way the backend would propose them: the
/// first step of a shortest plan to the nearest goal set, then useful
/// detours (acquiring the hook, pulling goal objects closer), then the rest
/// ordered by how much they shrink the distance to goal.
fn ranked_candidates(q: &Query, goals: &[Vec<Proposition>]) -> Vec<PrimitiveCall> {
    let mut ranked: Vec<PrimitiveCall> = Vec::new();
    let push = |call: PrimitiveCall, ranked: &mut Vec<PrimitiveCall>| {
        if !ranked.contains(&call) {
            ranked.push(call);
        }
    };

    let mut best_goal: Option<(&Vec<Proposition>, usize)> = None;
    for set in goals {
        if let Some(d) = q.domain.distance(&q.state, set, MAX_DEPTH) {
            if best_goal.map_or(true, |(_, bd)| d < bd) {
                best_goal = Some((set, d));
            }
        }
    }
    if let Some((set, _)) = best_goal {
        if let Some(plan) = q.domain.plan(&q.state, set, MAX_DEPTH) {
            if let Some(first) = plan.first() {
                push(first.clone(), &mut ranked);
            }
        }
    }

    // Useful detours the shortest symbolic plan may not need but a geometric
    // planner might: acquiring the hook, and dragging goal objects around
    // with it.
    let goal_objects: BTreeSet<&str> = goals
        .iter()
        .flatten()
        .map(|p| p.args[0].as_str())
        .collect();
    for obj in q.domain.objects() {
        if obj.kind == ObjectKind::Hook {
            let call = PrimitiveCall::new(Primitive::Pick, &[&obj.name]);
            if q.domain.applicable(&q.state, &call) {
                push(call, &mut ranked);
            }
            for target in &goal_objects {
                let call = PrimitiveCall::new(Primitive::Pull, &[target, &obj.name]);
                if q.domain.applicable(&q.state, &call) {
                    push(call, &mut ranked);
                }
            }
        }
    }

    // Everything else, most goal-reducing first, canonical order on ties.
    let base = best_goal.map(|(_, d)| d).unwrap_or(MAX_DEPTH);
    let depth = (base + 2).min(MAX_DEPTH);
    let mut rest: Vec<(usize, String, PrimitiveCall)> = Vec::new();
    for call in q.domain.actions(&q.state) {
        if ranked.contains(&call) {
            continue;
        }
        let next = q.domain.apply(&q.state, &call).expect("enumerated call applies");
        let d = goals
            .iter()
            .filter_map(|set| q.domain.distance(&next, set, depth))
            .min()
            .unwrap_or(MAX_DEPTH + 1);
        rest.push((d, call.canonical(), call));
    }
    rest.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (_, _, call) in rest {
        push(call, &mut ranked);
    }
    ranked
}

fn render_call_list(calls: &[PrimitiveCall]) -> String {
    let quoted: Vec<String> = calls.iter().map(|c| format!("'{}'", c.canonical())).collect();
    format!("[{}]", quoted.join(", "))
}

fn render_goal_sets(sets: &[Vec<Proposition>]) -> String {
    let inner: Vec<String> = sets
        .iter()
        .map(|set| {
            let quoted: Vec<String> = set.iter().map(|p| format!("'{p}'")).collect();
            format!("[{}]", quoted.join(", "))
        })
        .collect();
    format!("[{}]", inner.join(", "))
}

/// Deterministic scripted language-model stand-in.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend;

impl ScriptedBackend {
    pub fn new() -> Self {
        Self
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, _max_tokens: usize) -> Result<String, LlmError> {
        let (q, mode) = parse_query(prompt)?;
        match mode {
            QueryMode::Goal => {
                let goals = infer_goals(&q.instruction, &q.domain);
                if goals.is_empty() {
                    return Ok(" []".to_string());
                }
                Ok(format!(" {}", render_goal_sets(&goals)))
            }
            QueryMode::GenerateK(k) => {
                let goals = effective_goals(&q);
                let mut calls = ranked_candidates(&q, &goals);
                calls.truncate(k);
                Ok(format!(" {}", render_call_list(&calls)))
            }
            QueryMode::FullPlans => {
                let goals = effective_goals(&q);
                let mut scored: Vec<(usize, Vec<PrimitiveCall>)> = goals
                    .iter()
                    .filter_map(|set| {
                        q.domain
                            .plan(&q.state, set, MAX_DEPTH)
                            .map(|p| (p.len(), p))
                    })
                    .filter(|(len, _)| *len > 0)
                    .collect();
                scored.sort_by_key(|(len, _)| *len);
                let mut lines: Vec<String> = scored
                    .iter()
                    .map(|(_, plan)| format!(" {}", render_call_list(plan)))
                    .collect();
                // Pad with redundant-prefix variants so callers asking for
                // several sequences still get distinct options.
                if let Some((_, shortest)) = scored.first() {
                    if q.state.inhand().is_none() {
                        for obj in q.domain.objects() {
                            if lines.len() >= 5 {
                                break;
                            }
                            if obj.kind != ObjectKind::Box {
                                continue;
                            }
                            let pick = PrimitiveCall::new(Primitive::Pick, &[&obj.name]);
                            if !q.domain.applicable(&q.state, &pick)
                                || !q.state.contains(&Proposition::on(&obj.name, "table"))
                            {
                                continue;
                            }
                            let mut variant = vec![
                                pick,
                                PrimitiveCall::new(Primitive::Place, &[&obj.name, "table"]),
                            ];
                            variant.extend(shortest.iter().cloned());
                            lines.push(format!(" {}", render_call_list(&variant)));
                        }
                    }
                }
                if lines.is_empty() {
                    return Ok(" []".to_string());
                }
                Ok(lines.join("\n"))
            }
            QueryMode::Score => {
                let goals = effective_goals(&q);
                let ranked = ranked_candidates(&q, &goals);
                match ranked.first() {
                    Some(c) => Ok(c.canonical()),
                    None => Ok("stop()".to_string()),
                }
            }
        }
    }

    fn score(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError> {
        let (q, _) = parse_query(prompt)?;
        let goals = effective_goals(&q);
        let text = continuation.trim();
        if text == "stop()" {
            let satisfied = goals
                .iter()
                .any(|set| SymbolicDomain::satisfies(&q.state, set));
            return Ok(if satisfied { -0.5 } else { -10.0 });
        }
        let Some(call) = super::parse_call(text, &q.scene_objects) else {
            return Ok(-12.0);
        };
        if !q.domain.applicable(&q.state, &call) {
            return Ok(-9.0);
        }
        let ranked = ranked_candidates(&q, &goals);
        match ranked.iter().position(|c| *c == call) {
            Some(rank) => Ok(-1.0 - rank as f64),
            None => Ok(-8.0),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Wraps the scripted backend and deterministically corrupts some
/// completions (garbage entries, reordered or dropped candidates) keyed by a
/// seed and the prompt bytes. Used to exercise parser tolerance and planner
/// robustness without network flakiness.
#[derive(Debug, Clone)]
pub struct CorruptibleBackend {
    inner: ScriptedBackend,
    seed: u64,
}

impl CorruptibleBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ScriptedBackend::new(),
            seed,
        }
    }
}

impl LlmBackend for CorruptibleBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, LlmError> {
        let text = self.inner.complete(prompt, max_tokens)?;
        let h = fnv1a(prompt.as_bytes()) ^ self.seed;
        let Some(mut entries) = parse_string_list(&text) else {
            return Ok(text);
        };
        match h % 4 {
            0 => Ok(text),
            1 => {
                // Garbage entry in front; parsers must skip it.
                entries.insert(0, "teleport(red box, moon)".to_string());
                let quoted: Vec<String> = entries.iter().map(|e| format!("'{e}'")).collect();
                Ok(format!(" [{}]", quoted.join(", ")))
            }
            2 => {
                entries.reverse();
                let quoted: Vec<String> = entries.iter().map(|e| format!("'{e}'")).collect();
                Ok(format!(" [{}]", quoted.join(", ")))
            }
            _ => {
                if entries.len() > 1 {
                    entries.remove(entries.len() / 2);
                }
                let quoted: Vec<String> = entries.iter().map(|e| format!("'{e}'")).collect();
                Ok(format!(" [{}]", quoted.join(", ")))
            }
        }
    }

    fn score(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError> {
        self.inner.score(prompt, continuation)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{
        build_prompt, generate_candidates, generate_full_plans, predict_goals, score_with_stop,
        PromptContext, PromptMode,
    };
    use super::*;

    fn four_box_context() -> PromptContext {
        PromptContext::new(
            &["table", "hook", "rack", "blue box", "red box", "yellow box"],
            &[
                "on(blue box, table)".to_string(),
                "on(hook, table)".to_string(),
                "on(rack, table)".to_string(),
                "on(red box, table)".to_string(),
                "on(yellow box, table)".to_string(),
            ],
            "put all of the boxes on the rack",
        )
    }

    #[test]
    fn predicts_conjunctive_goal_for_all_boxes() {
        let backend = ScriptedBackend::new();
        let goals = predict_goals(&backend, &four_box_context()).unwrap();
        assert_eq!(goals.sets.len(), 1);
        let set = &goals.sets[0];
        assert!(set.contains(&Proposition::on("blue box", "rack")));
        assert!(set.contains(&Proposition::on("red box", "rack")));
        assert!(set.contains(&Proposition::on("yellow box", "rack")));
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn ambiguous_count_expands_to_combinations() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.instruction = "put two of the boxes on the rack".to_string();
        let goals = predict_goals(&backend, &ctx).unwrap();
        // C(3, 2) disjunct sets.
        assert_eq!(goals.sets.len(), 3);
        for set in &goals.sets {
            assert_eq!(set.len(), 2);
        }
    }

    #[test]
    fn dairy_products_resolve_to_named_objects() {
        let backend = ScriptedBackend::new();
        let mut ctx = PromptContext::new(
            &["table", "rack", "milk", "yogurt"],
            &[
                "on(milk, table)".to_string(),
                "on(rack, table)".to_string(),
                "on(yogurt, table)".to_string(),
            ],
            "put the dairy products on the rack",
        );
        let goals = predict_goals(&backend, &ctx).unwrap();
        assert_eq!(
            goals.sets,
            vec![vec![
                Proposition::on("milk", "rack"),
                Proposition::on("yogurt", "rack"),
            ]]
        );
        ctx.instruction = "put one dairy product on the rack".to_string();
        let goals = predict_goals(&backend, &ctx).unwrap();
        assert_eq!(goals.sets.len(), 2);
        assert!(goals.sets.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn sequential_instruction_with_instrument_clause() {
        let backend = ScriptedBackend::new();
        let ctx = PromptContext::new(
            &["table", "hook", "rack", "blue box", "cyan box", "yellow box"],
            &[
                "on(blue box, rack)".to_string(),
                "on(cyan box, table)".to_string(),
                "on(hook, table)".to_string(),
                "on(rack, table)".to_string(),
                "on(yellow box, rack)".to_string(),
            ],
            "How would you pick and place the yellow box and blue box onto the table, \
             then use the hook to push the cyan box under the rack?",
        );
        let goals = predict_goals(&backend, &ctx).unwrap();
        assert_eq!(goals.sets.len(), 1);
        assert_eq!(
            goals.sets[0],
            vec![
                Proposition::on("blue box", "table"),
                Proposition::on("yellow box", "table"),
                Proposition::under("cyan box", "rack"),
            ]
        );
    }

    #[test]
    fn compound_pick_and_place_is_one_clause() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.instruction = "How would you pick and place all of the boxes onto the rack?".to_string();
        let goals = predict_goals(&backend, &ctx).unwrap();
        assert_eq!(goals.sets.len(), 1);
        assert_eq!(goals.sets[0].len(), 3);
        assert!(goals.sets[0]
            .iter()
            .all(|p| p.predicate == crate::world::Predicate::On && p.args[1] == "rack"));
    }

    #[test]
    fn candidates_lead_with_plan_step_and_include_hook() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.goal_sets = Some(predict_goals(&backend, &ctx).unwrap().render());
        let calls = generate_candidates(&backend, &ctx, 5).unwrap();
        assert!(calls.len() <= 5 && !calls.is_empty());
        // First candidate starts a shortest plan: picking some box.
        assert_eq!(calls[0].primitive, Primitive::Pick);
        // The hook acquisition detour is offered.
        assert!(calls.contains(&PrimitiveCall::new(Primitive::Pick, &["hook"])));
    }

    #[test]
    fn pull_detours_offered_while_holding_hook() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.object_relationships = vec![
            "inhand(hook)".to_string(),
            "on(blue box, table)".to_string(),
            "on(rack, table)".to_string(),
            "on(red box, table)".to_string(),
            "on(yellow box, table)".to_string(),
        ];
        ctx.goal_sets = Some(vec![vec!["on(red box, rack)".to_string()]]);
        let calls = generate_candidates(&backend, &ctx, 5).unwrap();
        assert!(
            calls.contains(&PrimitiveCall::new(Primitive::Pull, &["red box", "hook"])),
            "{calls:?}"
        );
    }

    #[test]
    fn stop_outranks_actions_only_when_goal_satisfied() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.goal_sets = Some(vec![vec!["on(red box, rack)".to_string()]]);
        let candidates = vec![PrimitiveCall::new(Primitive::Pick, &["red box"])];
        let scored = score_with_stop(&backend, &ctx, &candidates, 0.3).unwrap();
        let stop = scored.iter().find(|s| s.text == "stop()").unwrap();
        let act = scored.iter().find(|s| s.text != "stop()").unwrap();
        assert!(stop.s_llm < act.s_llm);

        ctx.object_relationships = vec![
            "on(blue box, table)".to_string(),
            "on(hook, table)".to_string(),
            "on(rack, table)".to_string(),
            "on(red box, rack)".to_string(),
            "on(yellow box, table)".to_string(),
        ];
        let scored = score_with_stop(&backend, &ctx, &candidates, 0.3).unwrap();
        let stop = scored.iter().find(|s| s.text == "stop()").unwrap();
        let act = scored.iter().find(|s| s.text != "stop()").unwrap();
        assert!(stop.s_llm > act.s_llm);
        let total: f64 = scored.iter().map(|s| s.s_llm).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn replays_executed_actions_before_answering() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.goal_sets = Some(vec![vec!["on(red box, rack)".to_string()]]);
        ctx.history = vec!["pick(red box)".to_string()];
        let calls = generate_candidates(&backend, &ctx, 5).unwrap();
        assert_eq!(
            calls[0],
            PrimitiveCall::new(Primitive::Place, &["red box", "rack"])
        );
    }

    #[test]
    fn full_plans_reach_goal_symbolically() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.instruction = "push the red box under the rack".to_string();
        let goals = predict_goals(&backend, &ctx).unwrap();
        ctx.goal_sets = Some(goals.render());
        let plans = generate_full_plans(&backend, &ctx, 3).unwrap();
        assert!(!plans.is_empty());
        let specs: Vec<ObjectSpec> = ctx.scene_objects.iter().map(|n| spec_for(n)).collect();
        let dom = SymbolicDomain::new(&specs);
        let start = SymbolicState::new(
            ctx.object_relationships
                .iter()
                .map(|t| parse_proposition(t, &ctx.scene_objects).unwrap())
                .collect(),
        );
        for plan in &plans {
            let mut cur = start.clone();
            for step in plan {
                cur = dom.apply(&cur, step).expect("plan step applies");
            }
            assert!(goals
                .sets
                .iter()
                .any(|set| SymbolicDomain::satisfies(&cur, set)));
        }
    }

    #[test]
    fn in_context_example_replay_matches_labels() {
        // The scripted oracle should reproduce the goal structure of the
        // simplest labelled examples when given their prompts.
        let backend = ScriptedBackend::new();
        let ctx = PromptContext::new(
            &["table", "cyan box", "hook", "blue box", "rack", "red box"],
            &[
                "on(hook, table)".to_string(),
                "on(rack, table)".to_string(),
                "on(blue box, table)".to_string(),
                "on(cyan box, table)".to_string(),
                "on(red box, table)".to_string(),
            ],
            "How would you push all the boxes under the rack?",
        );
        let goals = predict_goals(&backend, &ctx).unwrap();
        assert_eq!(goals.sets.len(), 1);
        assert_eq!(
            goals.sets[0],
            vec![
                Proposition::under("blue box", "rack"),
                Proposition::under("cyan box", "rack"),
                Proposition::under("red box", "rack"),
            ]
        );
    }

    #[test]
    fn determinism_same_prompt_same_bytes() {
        let backend = ScriptedBackend::new();
        let mut ctx = four_box_context();
        ctx.goal_sets = Some(predict_goals(&backend, &ctx).unwrap().render());
        let prompt = build_prompt(&ctx, PromptMode::GenerateK(5));
        let a = backend.complete(&prompt, 256).unwrap();
        let b = backend.complete(&prompt, 256).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_completions_still_yield_candidates() {
        let mut ctx = four_box_context();
        let scripted = ScriptedBackend::new();
        ctx.goal_sets = Some(predict_goals(&scripted, &ctx).unwrap().render());
        for seed in 0..8u64 {
            let backend = CorruptibleBackend::new(seed);
            let calls = generate_candidates(&backend, &ctx, 5).unwrap();
            assert!(!calls.is_empty());
            for call in &calls {
                assert!(call.args.len() == call.primitive.arity());
            }
        }
    }
}
