//! Deterministic 2.5D tabletop world: geometric state, symbolic predicate
//! extraction, scene sampling, and the four parameterized manipulation
//! primitives with binary rewards.
//!
//! The world is kinematic: transitions are closed-form geometric updates with
//! axis-aligned collision checks, which keeps every operation a pure function
//! of its inputs plus an explicit seed.

pub mod primitives;
mod scene;

pub use primitives::execute_primitive;
pub use scene::{enumerate_symbolic_states, sample_scene, SceneSampler};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::WorldConfig;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unknown object `{0}` in scene")]
    UnknownObject(String),
    #[error("scene spec unsatisfiable after {attempts} sampling attempts")]
    UnsatisfiableSpec { attempts: usize },
    #[error("inconsistent symbolic spec: {0}")]
    InconsistentSpec(String),
}

/// Object categories. Exactly one `Table` per scene; `Rack` is an elevated
/// slab that objects can sit on or slide under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Box,
    Hook,
    Rack,
    Table,
}

impl ObjectKind {
    /// Whether the robot can move this object at all.
    pub fn movable(self) -> bool {
        matches!(self, ObjectKind::Box | ObjectKind::Hook)
    }
}

/// Static description of a scene object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub kind: ObjectKind,
    /// Axis-aligned half-sizes in meters.
    pub extents: [f64; 3],
}

impl ObjectSpec {
    pub fn new(name: &str, kind: ObjectKind, extents: [f64; 3]) -> Self {
        assert!(
            extents.iter().all(|&e| e > 0.0),
            "extents must be strictly positive"
        );
        Self {
            name: name.to_string(),
            kind,
            extents,
        }
    }

    /// The fixed table: top surface at z = 0, pose at the origin.
    pub fn table() -> Self {
        Self::new("table", ObjectKind::Table, [0.5, 0.6, 0.02])
    }

    /// Default rack: an elevated slab whose top sits at z = 0.14.
    pub fn rack(name: &str) -> Self {
        Self::new(name, ObjectKind::Rack, [0.12, 0.16, 0.01])
    }

    pub fn small_box(name: &str) -> Self {
        Self::new(name, ObjectKind::Box, [0.03, 0.03, 0.03])
    }

    pub fn hook(name: &str) -> Self {
        Self::new(name, ObjectKind::Hook, [0.15, 0.015, 0.015])
    }
}

/// Pose of one object: position of its center plus yaw about z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
}

impl Pose {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: [x, y, z],
            yaw: 0.0,
        }
    }
}

/// Height of the rack slab's center above the table top.
pub const RACK_SLAB_Z: f64 = 0.13;

/// Continuous state of the scene.
///
/// When an object is held, its stored x/y are reinterpreted as the grasp
/// offset in the object's own frame (where along the object the gripper holds
/// it) and its z is the hold height. The grasp offset matters downstream: it
/// determines how far a held hook extends the arm's reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricState {
    pub objects: Vec<ObjectSpec>,
    pub poses: BTreeMap<String, Pose>,
    pub held: Option<String>,
}

impl GeometricState {
    pub fn spec(&self, name: &str) -> Result<&ObjectSpec, WorldError> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| WorldError::UnknownObject(name.to_string()))
    }

    pub fn pose(&self, name: &str) -> Result<&Pose, WorldError> {
        self.poses
            .get(name)
            .ok_or_else(|| WorldError::UnknownObject(name.to_string()))
    }

    pub fn is_held(&self, name: &str) -> bool {
        self.held.as_deref() == Some(name)
    }

    /// World-frame AABB of an object, accounting for yaw.
    pub fn aabb(&self, name: &str) -> Result<Aabb, WorldError> {
        let spec = self.spec(name)?;
        let pose = self.pose(name)?;
        Ok(Aabb::from_pose(pose, spec.extents))
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_pose(pose: &Pose, extents: [f64; 3]) -> Self {
        let (s, c) = pose.yaw.sin_cos();
        let hx = extents[0] * c.abs() + extents[1] * s.abs();
        let hy = extents[0] * s.abs() + extents[1] * c.abs();
        let hz = extents[2];
        let p = pose.position;
        Self {
            min: [p[0] - hx, p[1] - hy, p[2] - hz],
            max: [p[0] + hx, p[1] + hy, p[2] + hz],
        }
    }

    pub fn intersects_xy(&self, other: &Aabb) -> bool {
        self.min[0] < other.max[0]
            && self.max[0] > other.min[0]
            && self.min[1] < other.max[1]
            && self.max[1] > other.min[1]
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        self.intersects_xy(other) && self.min[2] < other.max[2] && self.max[2] > other.min[2]
    }
}

/// Spatial predicate vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    On,
    Under,
    Inhand,
}

impl Predicate {
    pub fn arity(self) -> usize {
        match self {
            Predicate::Inhand => 1,
            Predicate::On | Predicate::Under => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Predicate::On => "on",
            Predicate::Under => "under",
            Predicate::Inhand => "inhand",
        }
    }
}

/// A single grounded proposition like `on(red box, table)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Proposition {
    pub predicate: Predicate,
    pub args: Vec<String>,
}

impl Proposition {
    pub fn on(a: &str, b: &str) -> Self {
        Self {
            predicate: Predicate::On,
            args: vec![a.to_string(), b.to_string()],
        }
    }

    pub fn under(a: &str, b: &str) -> Self {
        Self {
            predicate: Predicate::Under,
            args: vec![a.to_string(), b.to_string()],
        }
    }

    pub fn inhand(a: &str) -> Self {
        Self {
            predicate: Predicate::Inhand,
            args: vec![a.to_string()],
        }
    }
}

impl fmt::Display for Proposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate.name(), self.args.join(", "))
    }
}

/// Set of propositions describing a scene symbolically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolicState {
    props: Vec<Proposition>,
}

impl SymbolicState {
    pub fn new(mut props: Vec<Proposition>) -> Self {
        props.sort();
        props.dedup();
        Self { props }
    }

    pub fn props(&self) -> &[Proposition] {
        &self.props
    }

    pub fn contains(&self, prop: &Proposition) -> bool {
        self.props.binary_search(prop).is_ok()
    }

    pub fn insert(&mut self, prop: Proposition) {
        if let Err(idx) = self.props.binary_search(&prop) {
            self.props.insert(idx, prop);
        }
    }

    pub fn remove(&mut self, prop: &Proposition) {
        if let Ok(idx) = self.props.binary_search(prop) {
            self.props.remove(idx);
        }
    }

    pub fn inhand(&self) -> Option<&str> {
        self.props
            .iter()
            .find(|p| p.predicate == Predicate::Inhand)
            .map(|p| p.args[0].as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    /// Deterministic prompt rendering order: inhand, then on, then under,
    /// alphabetical within each group.
    pub fn render_strings(&self) -> Vec<String> {
        let mut groups: [Vec<String>; 3] = Default::default();
        for p in &self.props {
            let idx = match p.predicate {
                Predicate::Inhand => 0,
                Predicate::On => 1,
                Predicate::Under => 2,
            };
            groups[idx].push(p.to_string());
        }
        groups.iter_mut().for_each(|g| g.sort());
        groups.concat()
    }
}

/// The four manipulation primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Pick,
    Place,
    Pull,
    Push,
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::Pick => 1,
            Primitive::Place | Primitive::Pull => 2,
            Primitive::Push => 3,
        }
    }

    /// Continuous parameter dimensionality.
    pub fn action_dim(self) -> usize {
        match self {
            Primitive::Place => 3,
            _ => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Pick => "pick",
            Primitive::Place => "place",
            Primitive::Pull => "pull",
            Primitive::Push => "push",
        }
    }

    pub fn all() -> [Primitive; 4] {
        [
            Primitive::Pick,
            Primitive::Place,
            Primitive::Pull,
            Primitive::Push,
        ]
    }

    pub fn parse(name: &str) -> Option<Primitive> {
        match name.trim().to_ascii_lowercase().as_str() {
            "pick" => Some(Primitive::Pick),
            "place" => Some(Primitive::Place),
            "pull" => Some(Primitive::Pull),
            "push" => Some(Primitive::Push),
            _ => None,
        }
    }
}

/// A primitive with its ordered object arguments.
///
/// Symbolic validity is deliberately not enforced here: invalid calls are
/// executable and simply fail, so the learned models can observe them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrimitiveCall {
    pub primitive: Primitive,
    pub args: Vec<String>,
}

impl PrimitiveCall {
    pub fn new(primitive: Primitive, args: &[&str]) -> Self {
        assert_eq!(args.len(), primitive.arity(), "arity mismatch");
        Self {
            primitive,
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Canonical string form: lowercase primitive, single space after commas.
    pub fn canonical(&self) -> String {
        format!("{}({})", self.primitive.name(), self.args.join(", "))
    }
}

impl fmt::Display for PrimitiveCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Continuous primitive parameters in the normalized cube `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn new(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn clipped(mut self) -> Self {
        for c in &mut self.0 {
            *c = c.clamp(0.0, 1.0);
        }
        self
    }
}

/// Why a primitive execution failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureTag {
    None,
    Collision,
    Unreachable,
    InvalidCall,
    Drop,
}

/// Outcome of executing one primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next: GeometricState,
    pub reward: u8,
    pub failure_tag: FailureTag,
}

impl StepResult {
    pub fn success(next: GeometricState) -> Self {
        Self {
            next,
            reward: 1,
            failure_tag: FailureTag::None,
        }
    }

    pub fn failure(state: GeometricState, tag: FailureTag) -> Self {
        Self {
            next: state,
            reward: 0,
            failure_tag: tag,
        }
    }
}

/// Convert a geometric state into its symbolic description.
///
/// Rules: `inhand(a)` when a's center z is above the configured threshold;
/// `on(a, b)` when a rests above b with intersecting footprints and a small
/// vertical gap; `under(a, b)` when footprints intersect and b's bottom clears
/// a's top. Held objects never participate in on/under relations.
pub fn extract_symbolic(geo: &GeometricState, cfg: &WorldConfig) -> SymbolicState {
    let mut props = Vec::new();
    let boxes: BTreeMap<&str, Aabb> = geo
        .objects
        .iter()
        .map(|o| {
            (
                o.name.as_str(),
                Aabb::from_pose(&geo.poses[&o.name], o.extents),
            )
        })
        .collect();
    let inhand = |name: &str| geo.poses[name].position[2] >= cfg.inhand_z_threshold;

    for a in &geo.objects {
        if a.kind == ObjectKind::Table {
            continue;
        }
        if inhand(&a.name) {
            props.push(Proposition::inhand(&a.name));
            continue;
        }
        let box_a = &boxes[a.name.as_str()];
        for b in &geo.objects {
            if a.name == b.name || (b.kind != ObjectKind::Table && inhand(&b.name)) {
                continue;
            }
            let box_b = &boxes[b.name.as_str()];
            if !box_a.intersects_xy(box_b) {
                continue;
            }
            // A rack's slab is elevated on implicit legs, so its support
            // contact is at the leg bottoms, not the slab underside.
            let support_z = if a.kind == ObjectKind::Rack {
                geo.poses[&a.name].position[2] - RACK_SLAB_Z
            } else {
                box_a.min[2]
            };
            let gap_on = support_z - box_b.max[2];
            if gap_on >= -1e-6 && gap_on <= cfg.on_z_gap {
                props.push(Proposition::on(&a.name, &b.name));
            }
            if box_b.min[2] - box_a.max[2] >= cfg.under_clearance {
                props.push(Proposition::under(&a.name, &b.name));
            }
        }
    }
    SymbolicState::new(props)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_scene() -> GeometricState {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::rack("rack"),
            ObjectSpec::small_box("cyan box"),
            ObjectSpec::small_box("red box"),
        ];
        let mut poses = BTreeMap::new();
        poses.insert("table".into(), Pose::at(0.0, 0.0, -0.02));
        poses.insert("rack".into(), Pose::at(-0.1, 0.2, RACK_SLAB_Z));
        // cyan box centered beneath the rack slab, resting on the table
        poses.insert("cyan box".into(), Pose::at(-0.1, 0.2, 0.03));
        poses.insert("red box".into(), Pose::at(0.1, -0.2, 0.03));
        GeometricState {
            objects,
            poses,
            held: None,
        }
    }

    #[test]
    fn box_resting_on_table() {
        let mut geo = simple_scene();
        geo.objects.retain(|o| o.name == "table" || o.name == "red box");
        geo.poses.retain(|n, _| n == "table" || n == "red box");
        let sym = extract_symbolic(&geo, &WorldConfig::default());
        assert_eq!(sym, SymbolicState::new(vec![Proposition::on("red box", "table")]));
    }

    #[test]
    fn held_box_is_inhand_only() {
        let cfg = WorldConfig::default();
        let mut geo = simple_scene();
        // z = table_top + 0.30, above the 0.20 inhand threshold
        geo.poses.insert("red box".into(), Pose::at(0.0, 0.0, 0.30));
        geo.held = Some("red box".into());
        let sym = extract_symbolic(&geo, &cfg);
        assert!(sym.contains(&Proposition::inhand("red box")));
        assert!(!sym.props().iter().any(|p| {
            p.predicate != Predicate::Inhand && p.args.contains(&"red box".to_string())
        }));
    }

    #[test]
    fn box_under_rack() {
        let sym = extract_symbolic(&simple_scene(), &WorldConfig::default());
        let expected = SymbolicState::new(vec![
            Proposition::on("cyan box", "table"),
            Proposition::under("cyan box", "rack"),
            Proposition::on("rack", "table"),
            Proposition::on("red box", "table"),
        ]);
        assert_eq!(sym, expected);
    }

    #[test]
    fn box_on_rack_has_no_reverse_under() {
        let cfg = WorldConfig::default();
        let mut geo = simple_scene();
        let rack_top = RACK_SLAB_Z + 0.01;
        geo.poses
            .insert("red box".into(), Pose::at(-0.1, 0.2, rack_top + 0.03));
        let sym = extract_symbolic(&geo, &cfg);
        assert!(sym.contains(&Proposition::on("red box", "rack")));
        assert!(!sym.contains(&Proposition::under("rack", "red box")));
    }

    #[test]
    fn yawed_aabb_expands() {
        let pose = Pose {
            position: [0.0, 0.0, 0.0],
            yaw: std::f64::consts::FRAC_PI_4,
        };
        let aabb = Aabb::from_pose(&pose, [0.1, 0.02, 0.01]);
        let expect = (0.1 + 0.02) * std::f64::consts::FRAC_1_SQRT_2;
        assert!((aabb.max[0] - expect).abs() < 1e-12);
        assert!((aabb.max[1] - expect).abs() < 1e-12);
    }
}
