//! Scene instantiation from symbolic specifications, and enumeration of all
//! valid symbolic states for a given object set.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::WorldConfig;

use super::{
    extract_symbolic, Aabb, GeometricState, ObjectKind, ObjectSpec, Pose, Predicate, Proposition,
    SymbolicState, WorldError, RACK_SLAB_Z,
};

/// Region (x0, x1, y0, y1) on the table plane used for pose sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region(pub [f64; 4]);

impl Region {
    fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        let [x0, x1, y0, y1] = self.0;
        [rng.gen_range(x0..=x1), rng.gen_range(y0..=y1)]
    }
}

/// Controls where objects land when instantiating a scene.
#[derive(Debug, Clone)]
pub struct SceneSampler {
    pub world: WorldConfig,
    /// Where free-standing objects may be placed.
    pub object_region: Region,
    /// Where the rack may be placed (kept inside the workspace).
    pub rack_region: Region,
}

impl SceneSampler {
    pub fn new(world: WorldConfig) -> Self {
        Self {
            world,
            // Covers the workspace plus a band beyond it that only the hook
            // can reach.
            object_region: Region([-0.35, 0.42, -0.4, 0.4]),
            rack_region: Region([-0.2, 0.05, -0.25, 0.25]),
        }
    }

    pub fn with_object_region(mut self, region: [f64; 4]) -> Self {
        self.object_region = Region(region);
        self
    }

    pub fn with_rack_region(mut self, region: [f64; 4]) -> Self {
        self.rack_region = Region(region);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Placement<'a> {
    OnTable,
    On(&'a str),
    Under(&'a str),
    Inhand,
}

/// Instantiate a collision-free geometric scene whose symbolic extraction
/// equals `spec`, deterministic per seed. Rejection-samples poses until the
/// round trip holds.
pub fn sample_scene(
    spec: &SymbolicState,
    objects: &[ObjectSpec],
    seed: u64,
    sampler: &SceneSampler,
) -> Result<GeometricState, WorldError> {
    validate_spec(spec, objects)?;
    let cfg = &sampler.world;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let assignments = placement_order(spec, objects)?;
    for _attempt in 0..cfg.max_scene_attempts {
        if let Some(geo) = try_instantiate(spec, objects, &assignments, sampler, &mut rng) {
            let extracted = extract_symbolic(&geo, cfg);
            if &extracted == spec {
                return Ok(geo);
            }
        }
    }
    Err(WorldError::UnsatisfiableSpec {
        attempts: cfg.max_scene_attempts,
    })
}

fn validate_spec(spec: &SymbolicState, objects: &[ObjectSpec]) -> Result<(), WorldError> {
    let names: BTreeSet<&str> = objects.iter().map(|o| o.name.as_str()).collect();
    if objects.iter().filter(|o| o.kind == ObjectKind::Table).count() != 1 {
        return Err(WorldError::InconsistentSpec(
            "exactly one table required".into(),
        ));
    }
    for prop in spec.props() {
        for arg in &prop.args {
            if !names.contains(arg.as_str()) {
                return Err(WorldError::UnknownObject(arg.clone()));
            }
        }
    }
    // Cycle check over on-relations.
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for prop in spec.props() {
        if prop.predicate == Predicate::On {
            edges
                .entry(prop.args[0].as_str())
                .or_default()
                .push(prop.args[1].as_str());
        }
    }
    let mut visiting = BTreeSet::new();
    let mut done = BTreeSet::new();
    fn dfs<'a>(
        node: &'a str,
        edges: &BTreeMap<&'a str, Vec<&'a str>>,
        visiting: &mut BTreeSet<&'a str>,
        done: &mut BTreeSet<&'a str>,
    ) -> bool {
        if done.contains(node) {
            return true;
        }
        if !visiting.insert(node) {
            return false;
        }
        for next in edges.get(node).into_iter().flatten() {
            if !dfs(next, edges, visiting, done) {
                return false;
            }
        }
        visiting.remove(node);
        done.insert(node);
        true
    }
    for node in edges.keys().copied().collect::<Vec<_>>() {
        if !dfs(node, &edges, &mut visiting, &mut done) {
            return Err(WorldError::InconsistentSpec(format!(
                "cycle in on-relations involving `{node}`"
            )));
        }
    }
    Ok(())
}

/// Resolve each movable object's placement and order them so supports are
/// placed before the objects that rest on them.
fn placement_order<'a>(
    spec: &'a SymbolicState,
    objects: &'a [ObjectSpec],
) -> Result<Vec<(&'a ObjectSpec, Placement<'a>)>, WorldError> {
    let mut placements: Vec<(&ObjectSpec, Placement)> = Vec::new();
    for obj in objects {
        if obj.kind == ObjectKind::Table {
            continue;
        }
        let mut placement = None;
        for prop in spec.props() {
            match prop.predicate {
                Predicate::Inhand if prop.args[0] == obj.name => placement = Some(Placement::Inhand),
                Predicate::On if prop.args[0] == obj.name => {
                    // on(x, table) is the weakest placement; prefer a stacked
                    // support if present.
                    let target = prop.args[1].as_str();
                    match placement {
                        None | Some(Placement::OnTable) => {
                            placement = Some(if target == "table" {
                                Placement::OnTable
                            } else {
                                Placement::On(target)
                            });
                        }
                        _ => {}
                    }
                }
                Predicate::Under if prop.args[0] == obj.name => {
                    if !matches!(placement, Some(Placement::On(_)) | Some(Placement::Inhand)) {
                        placement = Some(Placement::Under(prop.args[1].as_str()));
                    }
                }
                _ => {}
            }
        }
        let placement = placement.ok_or_else(|| {
            WorldError::InconsistentSpec(format!("no placement for `{}` in spec", obj.name))
        })?;
        placements.push((obj, placement));
    }
    // Topological order: supports first.
    let mut ordered: Vec<(&ObjectSpec, Placement)> = Vec::new();
    let mut remaining = placements;
    while !remaining.is_empty() {
        let placed: BTreeSet<&str> = ordered.iter().map(|(o, _)| o.name.as_str()).collect();
        let ready: Vec<usize> = remaining
            .iter()
            .enumerate()
            .filter(|(_, (_, p))| match p {
                Placement::On(t) | Placement::Under(t) => placed.contains(*t),
                _ => true,
            })
            .map(|(i, _)| i)
            .collect();
        if ready.is_empty() {
            return Err(WorldError::InconsistentSpec(
                "unresolvable support ordering".into(),
            ));
        }
        for idx in ready.into_iter().rev() {
            ordered.push(remaining.remove(idx));
        }
    }
    Ok(ordered)
}

fn try_instantiate(
    spec: &SymbolicState,
    objects: &[ObjectSpec],
    assignments: &[(&ObjectSpec, Placement)],
    sampler: &SceneSampler,
    rng: &mut ChaCha8Rng,
) -> Option<GeometricState> {
    let cfg = &sampler.world;
    let table = objects.iter().find(|o| o.kind == ObjectKind::Table)?;
    let mut poses: BTreeMap<String, Pose> = BTreeMap::new();
    poses.insert(
        table.name.clone(),
        Pose::at(0.0, 0.0, -table.extents[2]),
    );
    let mut held = None;

    let mut geo = GeometricState {
        objects: objects.to_vec(),
        poses: poses.clone(),
        held: None,
    };

    for (obj, placement) in assignments {
        let pose = match placement {
            Placement::Inhand => {
                let gx = rng.gen_range(-obj.extents[0]..=obj.extents[0]);
                let gy = rng.gen_range(-obj.extents[1]..=obj.extents[1]);
                held = Some(obj.name.clone());
                Pose::at(gx, gy, cfg.hold_height)
            }
            Placement::OnTable => {
                let region = if obj.kind == ObjectKind::Rack {
                    &sampler.rack_region
                } else {
                    &sampler.object_region
                };
                let [x, y] = region.sample(rng);
                let z = if obj.kind == ObjectKind::Rack {
                    RACK_SLAB_Z
                } else {
                    obj.extents[2]
                };
                Pose::at(x, y, z)
            }
            Placement::On(target) => {
                let t_spec = geo.spec(target).ok()?;
                let t_pose = *geo.pose(target).ok()?;
                let fx = (t_spec.extents[0] - obj.extents[0]).max(0.0);
                let fy = (t_spec.extents[1] - obj.extents[1]).max(0.0);
                let x = t_pose.position[0] + rng.gen_range(-fx..=fx);
                let y = t_pose.position[1] + rng.gen_range(-fy..=fy);
                let z = t_pose.position[2] + t_spec.extents[2] + obj.extents[2];
                Pose::at(x, y, z)
            }
            Placement::Under(target) => {
                let t_spec = geo.spec(target).ok()?;
                let t_pose = *geo.pose(target).ok()?;
                let fx = t_spec.extents[0] * 0.8;
                let fy = t_spec.extents[1] * 0.8;
                let x = t_pose.position[0] + rng.gen_range(-fx..=fx);
                let y = t_pose.position[1] + rng.gen_range(-fy..=fy);
                Pose::at(x, y, obj.extents[2])
            }
        };
        geo.poses.insert(obj.name.clone(), pose);
    }
    geo.held = held;

    // All placed objects complete; check collisions and table bounds.
    let table_aabb = geo.aabb(&table.name).ok()?;
    let mut aabbs: Vec<(&str, Aabb)> = Vec::new();
    for obj in objects {
        if obj.kind == ObjectKind::Table || geo.is_held(&obj.name) {
            continue;
        }
        let aabb = geo.aabb(&obj.name).ok()?;
        if aabb.min[0] < table_aabb.min[0]
            || aabb.max[0] > table_aabb.max[0]
            || aabb.min[1] < table_aabb.min[1]
            || aabb.max[1] > table_aabb.max[1]
        {
            return None;
        }
        aabbs.push((&obj.name, aabb));
    }
    for i in 0..aabbs.len() {
        for j in (i + 1)..aabbs.len() {
            if shrunk(&aabbs[i].1).intersects(&shrunk(&aabbs[j].1)) {
                return None;
            }
        }
    }
    let _ = spec;
    Some(geo)
}

fn shrunk(aabb: &Aabb) -> Aabb {
    const EPS: f64 = 1e-9;
    Aabb {
        min: [aabb.min[0] + EPS, aabb.min[1] + EPS, aabb.min[2] + EPS],
        max: [aabb.max[0] - EPS, aabb.max[1] - EPS, aabb.max[2] - EPS],
    }
}

/// Enumerate every consistent symbolic state: each movable object is on the
/// table, on the rack, under the rack, or in hand (at most one in hand).
/// Order is deterministic, with objects considered lexicographically.
pub fn enumerate_symbolic_states(objects: &[ObjectSpec]) -> Vec<SymbolicState> {
    assert!(objects.len() <= 8, "enumeration supports at most 8 objects");
    let rack = objects.iter().find(|o| o.kind == ObjectKind::Rack);
    let mut movables: Vec<&ObjectSpec> = objects.iter().filter(|o| o.kind.movable()).collect();
    movables.sort_by(|a, b| a.name.cmp(&b.name));

    #[derive(Clone, Copy)]
    enum Slot {
        OnTable,
        OnRack,
        UnderRack,
        Inhand,
    }
    let options: Vec<Slot> = if rack.is_some() {
        vec![Slot::OnTable, Slot::OnRack, Slot::UnderRack, Slot::Inhand]
    } else {
        vec![Slot::OnTable, Slot::Inhand]
    };

    let mut states = Vec::new();
    let total = (options.len() as u64).pow(movables.len() as u32);
    for code in 0..total {
        let mut props = Vec::new();
        if let Some(rack) = rack {
            props.push(Proposition::on(&rack.name, "table"));
        }
        let mut inhand_count = 0;
        let mut rem = code;
        let mut ok = true;
        for obj in &movables {
            let choice = options[(rem % options.len() as u64) as usize];
            rem /= options.len() as u64;
            match choice {
                Slot::OnTable => props.push(Proposition::on(&obj.name, "table")),
                Slot::OnRack => props.push(Proposition::on(&obj.name, &rack.unwrap().name)),
                Slot::UnderRack => {
                    props.push(Proposition::on(&obj.name, "table"));
                    props.push(Proposition::under(&obj.name, &rack.unwrap().name));
                }
                Slot::Inhand => {
                    inhand_count += 1;
                    if inhand_count > 1 {
                        ok = false;
                        break;
                    }
                    props.push(Proposition::inhand(&obj.name));
                }
            }
        }
        if ok {
            states.push(SymbolicState::new(props));
        }
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampler() -> SceneSampler {
        SceneSampler::new(WorldConfig::default())
    }

    #[test]
    fn round_trip_single_box() {
        let objects = vec![ObjectSpec::table(), ObjectSpec::small_box("red box")];
        let spec = SymbolicState::new(vec![Proposition::on("red box", "table")]);
        let geo = sample_scene(&spec, &objects, 7, &sampler()).unwrap();
        assert_eq!(extract_symbolic(&geo, &WorldConfig::default()), spec);
    }

    #[test]
    fn same_seed_same_scene() {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::rack("rack"),
            ObjectSpec::hook("hook"),
            ObjectSpec::small_box("red box"),
            ObjectSpec::small_box("blue box"),
        ];
        let spec = SymbolicState::new(vec![
            Proposition::on("rack", "table"),
            Proposition::on("hook", "table"),
            Proposition::on("red box", "table"),
            Proposition::under("red box", "rack"),
            Proposition::on("blue box", "rack"),
        ]);
        let a = sample_scene(&spec, &objects, 42, &sampler()).unwrap();
        let b = sample_scene(&spec, &objects, 42, &sampler()).unwrap();
        assert_eq!(a, b);
        let c = sample_scene(&spec, &objects, 43, &sampler()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cyclic_spec_is_rejected() {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::small_box("a"),
            ObjectSpec::small_box("b"),
        ];
        let spec = SymbolicState::new(vec![Proposition::on("a", "b"), Proposition::on("b", "a")]);
        let err = sample_scene(&spec, &objects, 0, &sampler()).unwrap_err();
        assert!(matches!(err, WorldError::InconsistentSpec(_)));
    }

    #[test]
    fn enumerate_one_box() {
        let objects = vec![ObjectSpec::table(), ObjectSpec::small_box("box")];
        let states = enumerate_symbolic_states(&objects);
        assert_eq!(
            states,
            vec![
                SymbolicState::new(vec![Proposition::on("box", "table")]),
                SymbolicState::new(vec![Proposition::inhand("box")]),
            ]
        );
    }

    #[test]
    fn enumerate_no_movables() {
        let objects = vec![ObjectSpec::table()];
        assert_eq!(enumerate_symbolic_states(&objects), vec![SymbolicState::default()]);
    }

    #[test]
    fn enumerate_box_and_rack() {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::rack("rack"),
            ObjectSpec::small_box("box"),
        ];
        let states = enumerate_symbolic_states(&objects);
        assert_eq!(states.len(), 4);
        assert!(states.contains(&SymbolicState::new(vec![
            Proposition::on("box", "rack"),
            Proposition::on("rack", "table"),
        ])));
        assert!(states.contains(&SymbolicState::new(vec![
            Proposition::under("box", "rack"),
            Proposition::on("box", "table"),
            Proposition::on("rack", "table"),
        ])));
    }

    #[test]
    fn inhand_scene_round_trips() {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::hook("hook"),
            ObjectSpec::small_box("red box"),
        ];
        let spec = SymbolicState::new(vec![
            Proposition::inhand("hook"),
            Proposition::on("red box", "table"),
        ]);
        let geo = sample_scene(&spec, &objects, 3, &sampler()).unwrap();
        assert_eq!(geo.held.as_deref(), Some("hook"));
        assert_eq!(extract_symbolic(&geo, &WorldConfig::default()), spec);
    }
}
