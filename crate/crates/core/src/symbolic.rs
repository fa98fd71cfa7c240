//! Abstract transition model over symbolic states, plus breadth-first search
//! for shortest goal-reaching plans.
//!
//! This model is deliberately coarser than the geometric world: it knows
//! nothing about reach limits or grasp offsets, only predicate-level
//! preconditions and effects. Planners that trust it blindly will propose
//! geometrically infeasible steps (e.g. picking an object beyond the
//! workspace without pulling it closer first); that gap is the point.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::world::{
    ObjectKind, ObjectSpec, Predicate, Primitive, PrimitiveCall, Proposition, SymbolicState,
};

/// Symbolic action space and transition function for a fixed object set.
#[derive(Debug, Clone)]
pub struct SymbolicDomain {
    objects: Vec<ObjectSpec>,
}

impl SymbolicDomain {
    pub fn new(objects: &[ObjectSpec]) -> Self {
        let mut objects = objects.to_vec();
        objects.sort_by(|a, b| a.name.cmp(&b.name));
        Self { objects }
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    fn kind(&self, name: &str) -> Option<ObjectKind> {
        self.objects.iter().find(|o| o.name == name).map(|o| o.kind)
    }

    fn movables(&self) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(|o| o.kind.movable())
    }

    fn racks(&self) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Rack)
    }

    fn hooks(&self) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Hook)
    }

    fn under_anything(state: &SymbolicState, name: &str) -> bool {
        state
            .props()
            .iter()
            .any(|p| p.predicate == Predicate::Under && p.args[0] == name)
    }

    fn on_table(state: &SymbolicState, name: &str) -> bool {
        state.contains(&Proposition::on(name, "table"))
    }

    /// Whether `call`'s preconditions hold in `state`.
    pub fn applicable(&self, state: &SymbolicState, call: &PrimitiveCall) -> bool {
        let args = &call.args;
        if args.len() != call.primitive.arity() {
            return false;
        }
        if args.iter().any(|a| self.kind(a).is_none() && a != "table") {
            return false;
        }
        match call.primitive {
            Primitive::Pick => {
                let o = &args[0];
                state.inhand().is_none()
                    && self.kind(o).is_some_and(|k| k.movable())
                    && !Self::under_anything(state, o)
            }
            Primitive::Place => {
                let (o, r) = (&args[0], &args[1]);
                let rec_ok = r == "table"
                    || (self.kind(r) == Some(ObjectKind::Rack)
                        && self.kind(o) == Some(ObjectKind::Box));
                state.inhand() == Some(o.as_str()) && rec_ok
            }
            Primitive::Pull => {
                let (o, t) = (&args[0], &args[1]);
                state.inhand() == Some(t.as_str())
                    && self.kind(t) == Some(ObjectKind::Hook)
                    && self.kind(o).is_some_and(|k| k.movable())
                    && o != t
                    && Self::on_table(state, o)
            }
            Primitive::Push => {
                let (o, t, r) = (&args[0], &args[1], &args[2]);
                state.inhand() == Some(t.as_str())
                    && self.kind(t) == Some(ObjectKind::Hook)
                    && self.kind(o) == Some(ObjectKind::Box)
                    && self.kind(r) == Some(ObjectKind::Rack)
                    && o != t
                    && Self::on_table(state, o)
                    && !state.contains(&Proposition::under(o, r))
            }
        }
    }

    /// Apply a call, or `None` if its preconditions fail.
    pub fn apply(&self, state: &SymbolicState, call: &PrimitiveCall) -> Option<SymbolicState> {
        if !self.applicable(state, call) {
            return None;
        }
        let mut next = state.clone();
        match call.primitive {
            Primitive::Pick => {
                let o = &call.args[0];
                let stale: Vec<Proposition> = next
                    .props()
                    .iter()
                    .filter(|p| p.args[0] == *o)
                    .cloned()
                    .collect();
                for p in &stale {
                    next.remove(p);
                }
                next.insert(Proposition::inhand(o));
            }
            Primitive::Place => {
                let (o, r) = (&call.args[0], &call.args[1]);
                next.remove(&Proposition::inhand(o));
                next.insert(Proposition::on(o, r));
            }
            Primitive::Pull => {
                let o = &call.args[0];
                let stale: Vec<Proposition> = next
                    .props()
                    .iter()
                    .filter(|p| p.predicate == Predicate::Under && p.args[0] == *o)
                    .cloned()
                    .collect();
                for p in &stale {
                    next.remove(p);
                }
            }
            Primitive::Push => {
                let (o, r) = (&call.args[0], &call.args[2]);
                next.insert(Proposition::under(o, r));
            }
        }
        Some(next)
    }

    /// Every applicable call, in a deterministic order (primitives in their
    /// declaration order, object arguments alphabetical).
    pub fn actions(&self, state: &SymbolicState) -> Vec<PrimitiveCall> {
        let mut out = Vec::new();
        for obj in self.movables() {
            let call = PrimitiveCall::new(Primitive::Pick, &[&obj.name]);
            if self.applicable(state, &call) {
                out.push(call);
            }
        }
        for obj in self.movables() {
            let mut receptacles: Vec<&str> = vec!["table"];
            receptacles.extend(self.racks().map(|r| r.name.as_str()));
            for rec in receptacles {
                let call = PrimitiveCall::new(Primitive::Place, &[&obj.name, rec]);
                if self.applicable(state, &call) {
                    out.push(call);
                }
            }
        }
        for obj in self.movables() {
            for tool in self.hooks() {
                let call = PrimitiveCall::new(Primitive::Pull, &[&obj.name, &tool.name]);
                if self.applicable(state, &call) {
                    out.push(call);
                }
            }
        }
        for obj in self.movables() {
            for tool in self.hooks() {
                for rec in self.racks() {
                    let call =
                        PrimitiveCall::new(Primitive::Push, &[&obj.name, &tool.name, &rec.name]);
                    if self.applicable(state, &call) {
                        out.push(call);
                    }
                }
            }
        }
        out
    }

    pub fn satisfies(state: &SymbolicState, goal: &[Proposition]) -> bool {
        goal.iter().all(|p| state.contains(p))
    }

    /// Shortest number of symbolic steps to reach `goal`, or `None` if
    /// unreachable within `max_depth`.
    pub fn distance(
        &self,
        start: &SymbolicState,
        goal: &[Proposition],
        max_depth: usize,
    ) -> Option<usize> {
        self.search(start, goal, max_depth)
            .map(|(depth, _)| depth)
    }

    /// A shortest plan reaching `goal`, ties broken by action enumeration
    /// order, or `None` if unreachable within `max_depth`.
    pub fn plan(
        &self,
        start: &SymbolicState,
        goal: &[Proposition],
        max_depth: usize,
    ) -> Option<Vec<PrimitiveCall>> {
        self.search(start, goal, max_depth).map(|(_, plan)| plan)
    }

    fn search(
        &self,
        start: &SymbolicState,
        goal: &[Proposition],
        max_depth: usize,
    ) -> Option<(usize, Vec<PrimitiveCall>)> {
        if Self::satisfies(start, goal) {
            return Some((0, Vec::new()));
        }
        let mut parents: BTreeMap<SymbolicState, (SymbolicState, PrimitiveCall)> = BTreeMap::new();
        let mut visited: BTreeSet<SymbolicState> = BTreeSet::new();
        visited.insert(start.clone());
        let mut frontier = VecDeque::new();
        frontier.push_back((start.clone(), 0usize));
        while let Some((state, depth)) = frontier.pop_front() {
            if depth == max_depth {
                continue;
            }
            for call in self.actions(&state) {
                let next = self.apply(&state, &call).expect("enumerated call applies");
                if !visited.insert(next.clone()) {
                    continue;
                }
                parents.insert(next.clone(), (state.clone(), call.clone()));
                if Self::satisfies(&next, goal) {
                    let mut plan = Vec::new();
                    let mut cursor = next;
                    while let Some((prev, step)) = parents.get(&cursor) {
                        plan.push(step.clone());
                        cursor = prev.clone();
                    }
                    plan.reverse();
                    return Some((depth + 1, plan));
                }
                frontier.push_back((next, depth + 1));
            }
        }
        None
    }
}
