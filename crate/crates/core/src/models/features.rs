//! Fixed-width feature encoding of scenes for the learned models.
//!
//! Each non-table object occupies one 9-value slot:
//! `[x, y, z, yaw, hx, hy, hz, present, held]`. For a held object the x/y
//! values are its grasp offset in the object frame (mirroring
//! [`crate::world::GeometricState`]), which is what lets a feasibility model
//! learn that reach depends on where a tool was grasped. Slot order is
//! skill-relative: the call's arguments come first, remaining objects follow
//! alphabetically, and unused slots are zero.

use std::collections::BTreeMap;

use ndarray::Array1;

use crate::config::FeatureConfig;
use crate::world::{GeometricState, ObjectKind, ObjectSpec, Pose, PrimitiveCall};

pub const FEATS_PER_OBJECT: usize = FeatureConfig::FEATS_PER_OBJECT;

/// Slot order for a call over a sorted object list: non-table arguments in
/// call order, then the remaining objects alphabetically.
pub(crate) fn slot_order<'a>(objects: &'a [ObjectSpec], call: &'a PrimitiveCall) -> Vec<&'a str> {
    let mut names: Vec<&str> = call
        .args
        .iter()
        .map(String::as_str)
        .filter(|a| *a != "table")
        .collect();
    for obj in objects {
        if !names.contains(&obj.name.as_str()) {
            names.push(&obj.name);
        }
    }
    names
}

/// Scene snapshot in feature space, keyed by object name so that successive
/// skills with different argument orders can share one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanState {
    /// Non-table objects, sorted by name.
    objects: Vec<ObjectSpec>,
    rows: BTreeMap<String, [f64; FEATS_PER_OBJECT]>,
}

impl PlanState {
    pub fn from_geometric(geo: &GeometricState) -> Self {
        let mut objects: Vec<ObjectSpec> = geo
            .objects
            .iter()
            .filter(|o| o.kind != ObjectKind::Table)
            .cloned()
            .collect();
        objects.sort_by(|a, b| a.name.cmp(&b.name));
        let rows = objects
            .iter()
            .map(|o| {
                let pose = geo.poses[&o.name];
                let held = geo.is_held(&o.name);
                let row = [
                    pose.position[0],
                    pose.position[1],
                    pose.position[2],
                    pose.yaw,
                    o.extents[0],
                    o.extents[1],
                    o.extents[2],
                    1.0,
                    f64::from(held),
                ];
                (o.name.clone(), row)
            })
            .collect();
        Self { objects, rows }
    }

    /// Reconstruct a geometric state (adding the standard table) so symbolic
    /// predicates can be extracted from predicted feature vectors.
    pub fn to_geometric(&self) -> GeometricState {
        let table = ObjectSpec::table();
        let mut objects = vec![table.clone()];
        objects.extend(self.objects.iter().cloned());
        let mut poses = BTreeMap::new();
        poses.insert(table.name.clone(), Pose::at(0.0, 0.0, -table.extents[2]));
        let mut held: Option<(String, f64)> = None;
        for obj in &self.objects {
            let row = &self.rows[&obj.name];
            poses.insert(
                obj.name.clone(),
                Pose {
                    position: [row[0], row[1], row[2]],
                    yaw: row[3],
                },
            );
            if row[8] > 0.5 && held.as_ref().is_none_or(|(_, h)| row[8] > *h) {
                held = Some((obj.name.clone(), row[8]));
            }
        }
        GeometricState {
            objects,
            poses,
            held: held.map(|(name, _)| name),
        }
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    pub fn row(&self, name: &str) -> Option<&[f64; FEATS_PER_OBJECT]> {
        self.rows.get(name)
    }

    /// Slot assignment for a call: non-table arguments in order, then the
    /// remaining objects alphabetically.
    fn slot_names<'a>(&'a self, call: &'a PrimitiveCall) -> Vec<&'a str> {
        slot_order(&self.objects, call)
    }

    /// Encode for a specific skill call. Panics if the scene exceeds the slot
    /// budget or a call argument is missing from the scene.
    pub fn encode(&self, call: &PrimitiveCall, cfg: &FeatureConfig) -> Array1<f64> {
        let names = self.slot_names(call);
        assert!(
            names.len() <= cfg.max_objects,
            "scene has {} objects, budget is {}",
            names.len(),
            cfg.max_objects
        );
        let mut out = Array1::zeros(cfg.state_dim());
        for (slot, name) in names.iter().enumerate() {
            let row = self
                .rows
                .get(*name)
                .unwrap_or_else(|| panic!("call argument `{name}` not in scene"));
            for (j, &v) in row.iter().enumerate() {
                out[slot * FEATS_PER_OBJECT + j] = v;
            }
        }
        out
    }

    /// Interpret a predicted next-state vector produced under the same call's
    /// slot permutation. Slots past the scene's object count are ignored, and
    /// each object's static extents/presence are restored (the dynamics model
    /// only has authority over pose and held state).
    pub fn decode_next(
        &self,
        call: &PrimitiveCall,
        next: &Array1<f64>,
        cfg: &FeatureConfig,
    ) -> PlanState {
        assert_eq!(next.len(), cfg.state_dim());
        let names = self.slot_names(call);
        let mut rows = BTreeMap::new();
        for (slot, name) in names.iter().enumerate() {
            let base = slot * FEATS_PER_OBJECT;
            let old = &self.rows[*name];
            let row = [
                next[base],
                next[base + 1],
                next[base + 2],
                next[base + 3],
                old[4],
                old[5],
                old[6],
                1.0,
                f64::from(next[base + 8] > 0.5),
            ];
            rows.insert((*name).to_string(), row);
        }
        PlanState {
            objects: self.objects.clone(),
            rows,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::world::{extract_symbolic, Primitive};

    fn scene() -> GeometricState {
        let objects = vec![
            ObjectSpec::table(),
            ObjectSpec::rack("rack"),
            ObjectSpec::hook("hook"),
            ObjectSpec::small_box("red box"),
        ];
        let mut poses = BTreeMap::new();
        poses.insert("table".into(), Pose::at(0.0, 0.0, -0.02));
        poses.insert("rack".into(), Pose::at(-0.1, 0.3, crate::world::RACK_SLAB_Z));
        poses.insert("hook".into(), Pose::at(0.0, -0.2, 0.015));
        poses.insert("red box".into(), Pose::at(0.1, 0.1, 0.03));
        GeometricState {
            objects,
            poses,
            held: None,
        }
    }

    #[test]
    fn geometric_round_trip_preserves_symbols() {
        let cfg = WorldConfig::default();
        let geo = scene();
        let plan = PlanState::from_geometric(&geo);
        let back = plan.to_geometric();
        assert_eq!(extract_symbolic(&geo, &cfg), extract_symbolic(&back, &cfg));
        assert_eq!(back.held, None);
    }

    #[test]
    fn args_occupy_leading_slots() {
        let cfg = FeatureConfig::default();
        let plan = PlanState::from_geometric(&scene());
        let call = PrimitiveCall::new(Primitive::Pull, &["red box", "hook"]);
        let x = plan.encode(&call, &cfg);
        // Slot 0 = red box (position 0.1, 0.1), slot 1 = hook, slot 2 = rack.
        assert_eq!(x[0], 0.1);
        assert_eq!(x[FEATS_PER_OBJECT + 1], -0.2);
        assert_eq!(x[2 * FEATS_PER_OBJECT + 4], 0.12);
        // Padding slots are zero, including presence.
        assert_eq!(x[3 * FEATS_PER_OBJECT + 7], 0.0);
    }

    #[test]
    fn table_argument_is_skipped() {
        let cfg = FeatureConfig::default();
        let mut geo = scene();
        geo.poses.insert("red box".into(), Pose::at(0.02, -0.01, 0.30));
        geo.held = Some("red box".into());
        let plan = PlanState::from_geometric(&geo);
        let call = PrimitiveCall::new(Primitive::Place, &["red box", "table"]);
        let x = plan.encode(&call, &cfg);
        // Slot 0 is still the held box; its x/y are the grasp offset.
        assert_eq!(x[0], 0.02);
        assert_eq!(x[8], 1.0);
        // Slot 1 is the hook (alphabetical among non-args).
        assert_eq!(x[FEATS_PER_OBJECT + 4], 0.15);
    }

    #[test]
    fn decode_round_trips_encoding() {
        let cfg = FeatureConfig::default();
        let plan = PlanState::from_geometric(&scene());
        let call = PrimitiveCall::new(Primitive::Push, &["red box", "hook", "rack"]);
        let x = plan.encode(&call, &cfg);
        let decoded = plan.decode_next(&call, &x, &cfg);
        assert_eq!(decoded, plan);
    }

    #[test]
    fn decode_restores_static_fields() {
        let cfg = FeatureConfig::default();
        let plan = PlanState::from_geometric(&scene());
        let call = PrimitiveCall::new(Primitive::Pick, &["red box"]);
        let mut next = plan.encode(&call, &cfg);
        // Corrupt the box's extents and presence as a noisy model would.
        next[4] = 0.999;
        next[7] = 0.3;
        next[8] = 0.9; // noisy held flag snaps to 1
        let decoded = plan.decode_next(&call, &next, &cfg);
        let row = decoded.row("red box").unwrap();
        assert_eq!(row[4], 0.03);
        assert_eq!(row[7], 1.0);
        assert_eq!(row[8], 1.0);
        assert_eq!(decoded.to_geometric().held.as_deref(), Some("red box"));
    }
}
