//! Kinematic execution of the four manipulation primitives.
//!
//! Action vectors live in the normalized cube `[0, 1]^d` and decode to
//! frame-relative physical parameters:
//!
//! * Pick `(dx, dy, dz, yaw)` — grasp offset in the object frame,
//!   dx/dy in [-0.18, 0.18] m, dz in [0, 0.1] m, yaw in [-pi, pi].
//! * Place `(dx, dy, yaw)` — placement offset on the receptacle's top plane,
//!   dx/dy in [-0.45, 0.45] m (z implied by stacking).
//! * Pull/Push `(cx, cy, angle, dist)` — tool contact offset in the object
//!   frame (cx/cy in [-0.2, 0.2] m), slide direction in [-pi, pi], and slide
//!   distance in [0, 0.35] m.

use crate::config::WorldConfig;

use super::{
    Aabb, ActionVector, FailureTag, GeometricState, ObjectKind, Pose, Primitive, PrimitiveCall,
    StepResult,
};

pub const PICK_XY_RANGE: f64 = 0.18;
pub const PICK_DZ_RANGE: f64 = 0.1;
pub const PLACE_XY_RANGE: f64 = 0.45;
pub const CONTACT_XY_RANGE: f64 = 0.2;
pub const SLIDE_DIST_RANGE: f64 = 0.35;

fn lerp(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u.clamp(0.0, 1.0) * (hi - lo)
}

fn symmetric(u: f64, range: f64) -> f64 {
    lerp(u, -range, range)
}

/// Rotate a planar offset by yaw into the world frame.
fn rotate(offset: [f64; 2], yaw: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [
        offset[0] * c - offset[1] * s,
        offset[0] * s + offset[1] * c,
    ]
}

fn in_workspace(xy: [f64; 2], cfg: &WorldConfig) -> bool {
    let [x0, x1, y0, y1] = cfg.workspace;
    xy[0] >= x0 && xy[0] <= x1 && xy[1] >= y0 && xy[1] <= y1
}

fn on_table(aabb: &Aabb, table: &Aabb) -> bool {
    aabb.min[0] >= table.min[0]
        && aabb.max[0] <= table.max[0]
        && aabb.min[1] >= table.min[1]
        && aabb.max[1] <= table.max[1]
}

/// How far a held hook extends the arm's reach, based on where it was grasped.
/// Grasping the near end of the handle leaves the full hook length available.
pub fn hook_extension(grasp_x: f64, hook_half_length: f64) -> f64 {
    (hook_half_length - grasp_x).clamp(0.0, 2.0 * hook_half_length)
}

struct Ctx<'a> {
    geo: &'a GeometricState,
    cfg: &'a WorldConfig,
}

impl<'a> Ctx<'a> {
    fn aabbs_excluding(&self, skip: &[&str]) -> Vec<Aabb> {
        self.geo
            .objects
            .iter()
            .filter(|o| !skip.contains(&o.name.as_str()) && !self.geo.is_held(&o.name))
            .map(|o| Aabb::from_pose(&self.geo.poses[&o.name], o.extents))
            .collect()
    }
}

/// Execute one primitive. Total over its inputs: symbolically impossible
/// calls come back as failed `StepResult`s, never as faults.
pub fn execute_primitive(
    geo: &GeometricState,
    call: &PrimitiveCall,
    action: &ActionVector,
    cfg: &WorldConfig,
) -> StepResult {
    debug_assert_eq!(call.args.len(), call.primitive.arity());
    for arg in &call.args {
        if geo.spec(arg).is_err() {
            return StepResult::failure(geo.clone(), FailureTag::InvalidCall);
        }
    }
    let a = &action.0;
    if a.len() != call.primitive.action_dim() {
        return StepResult::failure(geo.clone(), FailureTag::InvalidCall);
    }
    let ctx = Ctx { geo, cfg };
    match call.primitive {
        Primitive::Pick => pick(&ctx, &call.args[0], a),
        Primitive::Place => place(&ctx, &call.args[0], &call.args[1], a),
        Primitive::Pull => slide(&ctx, &call.args[0], &call.args[1], None, a),
        Primitive::Push => slide(&ctx, &call.args[0], &call.args[1], Some(&call.args[2]), a),
    }
}

fn pick(ctx: &Ctx, obj: &str, a: &[f64]) -> StepResult {
    let geo = ctx.geo;
    let fail = |tag| StepResult::failure(geo.clone(), tag);
    let spec = geo.spec(obj).unwrap();
    if geo.held.is_some() || !spec.kind.movable() {
        return fail(FailureTag::InvalidCall);
    }
    let pose = geo.poses[obj];
    if !in_workspace([pose.position[0], pose.position[1]], ctx.cfg) {
        return fail(FailureTag::Unreachable);
    }
    let dx = symmetric(a[0], PICK_XY_RANGE);
    let dy = symmetric(a[1], PICK_XY_RANGE);
    if dx.abs() > spec.extents[0] || dy.abs() > spec.extents[1] {
        return fail(FailureTag::Drop);
    }
    // Vertical sweep from rest to hold height must be clear (e.g. a box
    // beneath the rack slab cannot be lifted straight up).
    let aabb = Aabb::from_pose(&pose, spec.extents);
    let sweep = Aabb {
        min: [aabb.min[0], aabb.min[1], aabb.min[2]],
        max: [
            aabb.max[0],
            aabb.max[1],
            ctx.cfg.hold_height + spec.extents[2],
        ],
    };
    if ctx
        .aabbs_excluding(&[obj, "table"])
        .iter()
        .any(|other| sweep.intersects(other))
    {
        return fail(FailureTag::Collision);
    }
    let mut next = geo.clone();
    // Held pose stores the grasp offset in the object frame.
    next.poses.insert(
        obj.to_string(),
        Pose {
            position: [dx, dy, ctx.cfg.hold_height],
            yaw: pose.yaw,
        },
    );
    next.held = Some(obj.to_string());
    StepResult::success(next)
}

fn place(ctx: &Ctx, obj: &str, rec: &str, a: &[f64]) -> StepResult {
    let geo = ctx.geo;
    let fail = |tag| StepResult::failure(geo.clone(), tag);
    if geo.held.as_deref() != Some(obj) || obj == rec {
        return fail(FailureTag::InvalidCall);
    }
    let obj_spec = geo.spec(obj).unwrap();
    let rec_spec = geo.spec(rec).unwrap();
    let rec_pose = geo.poses[rec];
    let dx = symmetric(a[0], PLACE_XY_RANGE);
    let dy = symmetric(a[1], PLACE_XY_RANGE);
    let offset = rotate([dx, dy], rec_pose.yaw);
    let target = [
        rec_pose.position[0] + offset[0],
        rec_pose.position[1] + offset[1],
    ];
    if !in_workspace(target, ctx.cfg) {
        return fail(FailureTag::Unreachable);
    }
    // Stability: the object's footprint must sit fully on the receptacle.
    if dx.abs() + obj_spec.extents[0] > rec_spec.extents[0]
        || dy.abs() + obj_spec.extents[1] > rec_spec.extents[1]
    {
        return fail(FailureTag::Drop);
    }
    let rec_top = rec_pose.position[2] + rec_spec.extents[2];
    let rest = Pose {
        position: [target[0], target[1], rec_top + obj_spec.extents[2]],
        yaw: 0.0,
    };
    let rest_aabb = Aabb::from_pose(&rest, obj_spec.extents);
    // Lowering sweep from hold height plus the final resting volume.
    let sweep = Aabb {
        min: rest_aabb.min,
        max: [
            rest_aabb.max[0],
            rest_aabb.max[1],
            ctx.cfg.hold_height + obj_spec.extents[2],
        ],
    };
    if ctx
        .aabbs_excluding(&[obj, rec, "table"])
        .iter()
        .any(|other| sweep.intersects(other))
    {
        return fail(FailureTag::Collision);
    }
    let mut next = geo.clone();
    next.poses.insert(obj.to_string(), rest);
    next.held = None;
    StepResult::success(next)
}

/// Shared pull/push sliding motion; `rec` is present for push only.
fn slide(ctx: &Ctx, obj: &str, tool: &str, rec: Option<&str>, a: &[f64]) -> StepResult {
    let geo = ctx.geo;
    let cfg = ctx.cfg;
    let fail = |tag| StepResult::failure(geo.clone(), tag);
    let tool_spec = geo.spec(tool).unwrap();
    let obj_spec = geo.spec(obj).unwrap();
    if geo.held.as_deref() != Some(tool)
        || tool_spec.kind != ObjectKind::Hook
        || !obj_spec.kind.movable()
        || obj == tool
    {
        return fail(FailureTag::InvalidCall);
    }
    if let Some(rec) = rec {
        if geo.spec(rec).unwrap().kind != ObjectKind::Rack || rec == obj {
            return fail(FailureTag::InvalidCall);
        }
    }
    let obj_pose = geo.poses[obj];
    let obj_xy = [obj_pose.position[0], obj_pose.position[1]];

    // Reach depends on how the hook was grasped.
    let grasp_x = geo.poses[tool].position[0];
    let extension = hook_extension(grasp_x, tool_spec.extents[0]);
    let base = cfg.robot_base;
    let to_obj = [obj_xy[0] - base[0], obj_xy[1] - base[1]];
    let obj_dist = (to_obj[0] * to_obj[0] + to_obj[1] * to_obj[1]).sqrt();
    if obj_dist > cfg.arm_reach + extension {
        return fail(FailureTag::Unreachable);
    }

    let cx = symmetric(a[0], CONTACT_XY_RANGE);
    let cy = symmetric(a[1], CONTACT_XY_RANGE);
    if cx.abs() > obj_spec.extents[0] + cfg.contact_tolerance
        || cy.abs() > obj_spec.extents[1] + cfg.contact_tolerance
    {
        // Tool swept past without touching the object.
        return fail(FailureTag::None);
    }

    let angle = symmetric(a[2], std::f64::consts::PI);
    let dist = lerp(a[3], 0.0, SLIDE_DIST_RANGE);
    let dir = [angle.cos(), angle.sin()];
    let end_xy = [obj_xy[0] + dir[0] * dist, obj_xy[1] + dir[1] * dist];

    let end_pose = Pose {
        position: [end_xy[0], end_xy[1], obj_pose.position[2]],
        yaw: obj_pose.yaw,
    };
    let start_aabb = Aabb::from_pose(&obj_pose, obj_spec.extents);
    let end_aabb = Aabb::from_pose(&end_pose, obj_spec.extents);
    let table_aabb = geo.aabb("table").unwrap();
    if !on_table(&end_aabb, &table_aabb) {
        return fail(FailureTag::Drop);
    }
    let sweep = Aabb {
        min: [
            start_aabb.min[0].min(end_aabb.min[0]),
            start_aabb.min[1].min(end_aabb.min[1]),
            start_aabb.min[2],
        ],
        max: [
            start_aabb.max[0].max(end_aabb.max[0]),
            start_aabb.max[1].max(end_aabb.max[1]),
            start_aabb.max[2],
        ],
    };
    let mut skip = vec![obj, tool, "table"];
    if let Some(rec) = rec {
        skip.push(rec);
    }
    if ctx
        .aabbs_excluding(&skip)
        .iter()
        .any(|other| sweep.intersects(other))
    {
        return fail(FailureTag::Collision);
    }

    let mut next = geo.clone();
    next.poses.insert(obj.to_string(), end_pose);

    let reward = match rec {
        None => {
            // Pull: displacement toward the robot base.
            let toward = [-to_obj[0] / obj_dist.max(1e-9), -to_obj[1] / obj_dist.max(1e-9)];
            let toward_disp = dist * (dir[0] * toward[0] + dir[1] * toward[1]);
            toward_disp >= cfg.min_pull_displacement
        }
        Some(rec) => {
            let away = [to_obj[0] / obj_dist.max(1e-9), to_obj[1] / obj_dist.max(1e-9)];
            let away_disp = dist * (dir[0] * away[0] + dir[1] * away[1]);
            let rec_aabb = next.aabb(rec).unwrap();
            let final_aabb = next.aabb(obj).unwrap();
            away_disp >= cfg.min_push_displacement
                && final_aabb.intersects_xy(&rec_aabb)
                && rec_aabb.min[2] - final_aabb.max[2] >= cfg.under_clearance
        }
    };
    if reward {
        StepResult::success(next)
    } else {
        StepResult {
            next,
            reward: 0,
            failure_tag: FailureTag::None,
        }
    }
}
