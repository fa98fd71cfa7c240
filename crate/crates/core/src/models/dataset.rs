//! Transition dataset generation for the four primitives.
//!
//! Records are `(state, action, reward, next_state)` tuples drawn from
//! randomized scenes whose symbolic preconditions for the primitive hold.
//! Actions mix uniform draws with guided draws aimed near success, and
//! generation tops up with guided attempts until a minimum success ratio is
//! met so the binary classifier sees both labels in quantity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{FeatureConfig, WorldConfig};
use crate::world::primitives::{CONTACT_XY_RANGE, PICK_XY_RANGE, PLACE_XY_RANGE, SLIDE_DIST_RANGE};
use crate::world::{
    execute_primitive, sample_scene, GeometricState, ObjectSpec, Primitive, PrimitiveCall,
    Proposition, SceneSampler, SymbolicState,
};

use super::features::PlanState;

/// The fraction of rewarded records every dataset must reach.
pub const MIN_SUCCESS_RATIO: f64 = 0.4;

const BOX_NAMES: [&str; 4] = ["blue box", "cyan box", "red box", "yellow box"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("could not reach success ratio {required} for {primitive:?}: got {achieved:.3}")]
    SuccessRatio {
        primitive: Primitive,
        achieved: f64,
        required: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset header: {0}")]
    Header(String),
}

/// In-memory transition dataset for one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub primitive: Primitive,
    /// `n x state_dim`, encoded under the record's own call.
    pub states: Array2<f64>,
    /// `n x action_dim`, normalized to `[0, 1]`.
    pub actions: Array2<f64>,
    /// Binary rewards as 0.0/1.0.
    pub rewards: Array1<f64>,
    /// `n x state_dim`, post-transition scene under the same slot order.
    pub next_states: Array2<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn success_ratio(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.rewards.sum() / self.len() as f64
    }
}

/// A sampled scene paired with a precondition-satisfying call.
pub(crate) struct Draw {
    pub geo: GeometricState,
    pub call: PrimitiveCall,
}

/// Draw a randomized scene in which `primitive`'s symbolic preconditions hold
/// for the returned call.
pub(crate) fn draw_scene(
    primitive: Primitive,
    rng: &mut ChaCha8Rng,
    sampler: &SceneSampler,
) -> Draw {
    loop {
        if let Some(draw) = try_draw(primitive, rng, sampler) {
            return draw;
        }
    }
}

fn try_draw(primitive: Primitive, rng: &mut ChaCha8Rng, sampler: &SceneSampler) -> Option<Draw> {
    let n_boxes = rng.gen_range(1..=4usize);
    let boxes: Vec<&str> = BOX_NAMES[..n_boxes].to_vec();
    let mut objects = vec![
        ObjectSpec::table(),
        ObjectSpec::rack("rack"),
        ObjectSpec::hook("hook"),
    ];
    objects.extend(boxes.iter().map(|b| ObjectSpec::small_box(b)));

    let mut props = vec![Proposition::on("rack", "table")];
    let mut on_table: Vec<&str> = Vec::new();
    let mut pickable: Vec<&str> = Vec::new();
    let mut held: Option<&str> = None;

    // Hand contents first.
    match primitive {
        Primitive::Pull | Primitive::Push => held = Some("hook"),
        Primitive::Place => {
            held = if rng.gen_bool(0.15) {
                Some("hook")
            } else {
                Some(boxes[rng.gen_range(0..boxes.len())])
            }
        }
        Primitive::Pick => {}
    }
    if let Some(h) = held {
        props.push(Proposition::inhand(h));
    }
    if held != Some("hook") {
        props.push(Proposition::on("hook", "table"));
        pickable.push("hook");
    }
    for &b in &boxes {
        if held == Some(b) {
            continue;
        }
        let r: f64 = rng.gen();
        if r < 0.70 {
            props.push(Proposition::on(b, "table"));
            on_table.push(b);
            pickable.push(b);
        } else if r < 0.85 {
            props.push(Proposition::on(b, "rack"));
            pickable.push(b);
        } else {
            props.push(Proposition::on(b, "table"));
            props.push(Proposition::under(b, "rack"));
        }
    }

    let call = match primitive {
        Primitive::Pick => {
            if pickable.is_empty() {
                return None;
            }
            let obj = pickable[rng.gen_range(0..pickable.len())];
            PrimitiveCall::new(Primitive::Pick, &[obj])
        }
        Primitive::Place => {
            let obj = held.unwrap();
            let rec = if obj != "hook" && rng.gen_bool(0.5) {
                "rack"
            } else {
                "table"
            };
            PrimitiveCall::new(Primitive::Place, &[obj, rec])
        }
        Primitive::Pull => {
            if on_table.is_empty() {
                return None;
            }
            let obj = on_table[rng.gen_range(0..on_table.len())];
            PrimitiveCall::new(Primitive::Pull, &[obj, "hook"])
        }
        Primitive::Push => {
            // The target must not already be under the rack.
            let candidates: Vec<&str> = on_table.clone();
            if candidates.is_empty() {
                return None;
            }
            let obj = candidates[rng.gen_range(0..candidates.len())];
            PrimitiveCall::new(Primitive::Push, &[obj, "hook", "rack"])
        }
    };

    let spec = SymbolicState::new(props);
    let seed = rng.gen::<u64>();
    let geo = sample_scene(&spec, &objects, seed, sampler).ok()?;
    Some(Draw { geo, call })
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0.0..=1.0)
}

/// Encode a symmetric physical value back into the normalized action space.
fn enc(v: f64, range: f64) -> f64 {
    ((v + range) / (2.0 * range)).clamp(0.0, 1.0)
}

pub(crate) fn uniform_action(primitive: Primitive, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..primitive.action_dim()).map(|_| unit(rng)).collect()
}

/// An action aimed near success for this scene; not guaranteed to succeed
/// (reach limits and collisions still apply), just biased hard toward it.
pub(crate) fn guided_action(
    geo: &GeometricState,
    call: &PrimitiveCall,
    rng: &mut ChaCha8Rng,
    world: &WorldConfig,
) -> Vec<f64> {
    let obj = geo.spec(&call.args[0]).expect("draw produced valid call");
    match call.primitive {
        Primitive::Pick => {
            let dx = rng.gen_range(-0.9..0.9) * obj.extents[0];
            let dy = rng.gen_range(-0.9..0.9) * obj.extents[1];
            vec![
                enc(dx, PICK_XY_RANGE),
                enc(dy, PICK_XY_RANGE),
                unit(rng),
                unit(rng),
            ]
        }
        Primitive::Place => {
            let rec = geo.spec(&call.args[1]).unwrap();
            let rec_pose = geo.poses[&call.args[1]];
            let fx = (rec.extents[0] - obj.extents[0]).max(0.0);
            let fy = (rec.extents[1] - obj.extents[1]).max(0.0);
            // Aim inside both the receptacle's footprint and the workspace.
            let [x0, x1, y0, y1] = world.workspace;
            let dx_lo = (x0 - rec_pose.position[0]).max(-fx);
            let dx_hi = (x1 - rec_pose.position[0]).min(fx);
            let dy_lo = (y0 - rec_pose.position[1]).max(-fy);
            let dy_hi = (y1 - rec_pose.position[1]).min(fy);
            let dx = if dx_lo < dx_hi {
                rng.gen_range(dx_lo..dx_hi)
            } else {
                rng.gen_range(-fx..=fx)
            };
            let dy = if dy_lo < dy_hi {
                rng.gen_range(dy_lo..dy_hi)
            } else {
                rng.gen_range(-fy..=fy)
            };
            vec![enc(dx, PLACE_XY_RANGE), enc(dy, PLACE_XY_RANGE), unit(rng)]
        }
        Primitive::Pull => {
            let pose = geo.poses[&call.args[0]];
            let to_base = [
                world.robot_base[0] - pose.position[0],
                world.robot_base[1] - pose.position[1],
            ];
            let angle = to_base[1].atan2(to_base[0]) + rng.gen_range(-0.25..0.25);
            let dist = rng.gen_range(0.07..0.25);
            vec![
                enc(rng.gen_range(-0.9..0.9) * obj.extents[0], CONTACT_XY_RANGE),
                enc(rng.gen_range(-0.9..0.9) * obj.extents[1], CONTACT_XY_RANGE),
                enc(wrap_angle(angle), std::f64::consts::PI),
                (dist / SLIDE_DIST_RANGE).clamp(0.0, 1.0),
            ]
        }
        Primitive::Push => {
            let pose = geo.poses[&call.args[0]];
            let rack_pose = geo.poses[&call.args[2]];
            let to_rack = [
                rack_pose.position[0] - pose.position[0],
                rack_pose.position[1] - pose.position[1],
            ];
            let angle = to_rack[1].atan2(to_rack[0]) + rng.gen_range(-0.1..0.1);
            let span = (to_rack[0] * to_rack[0] + to_rack[1] * to_rack[1]).sqrt();
            let dist = span + rng.gen_range(-0.04..0.04);
            vec![
                enc(rng.gen_range(-0.9..0.9) * obj.extents[0], CONTACT_XY_RANGE),
                enc(rng.gen_range(-0.9..0.9) * obj.extents[1], CONTACT_XY_RANGE),
                enc(wrap_angle(angle), std::f64::consts::PI),
                (dist / SLIDE_DIST_RANGE).clamp(0.0, 1.0),
            ]
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    while a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

struct Record {
    state: Array1<f64>,
    action: Vec<f64>,
    reward: f64,
    next_state: Array1<f64>,
}

fn sample_record(
    primitive: Primitive,
    guided_only: bool,
    rng: &mut ChaCha8Rng,
    sampler: &SceneSampler,
    features: &FeatureConfig,
) -> Record {
    let Draw { geo, call } = draw_scene(primitive, rng, sampler);
    let action = if guided_only || rng.gen_bool(0.5) {
        guided_action(&geo, &call, rng, &sampler.world)
    } else {
        uniform_action(primitive, rng)
    };
    let result = execute_primitive(
        &geo,
        &call,
        &crate::world::ActionVector::new(action.clone()),
        &sampler.world,
    );
    let state = PlanState::from_geometric(&geo).encode(&call, features);
    let next_state = PlanState::from_geometric(&result.next).encode(&call, features);
    Record {
        state,
        action,
        reward: f64::from(result.reward),
        next_state,
    }
}

/// Generate `n` records for `primitive`, deterministic per seed. Fails if the
/// minimum success ratio cannot be met within the attempt budget.
pub fn generate_dataset(
    primitive: Primitive,
    n: usize,
    seed: u64,
    sampler: &SceneSampler,
    features: &FeatureConfig,
) -> Result<Dataset, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (primitive as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        records.push(sample_record(primitive, false, &mut rng, sampler, features));
    }

    let target = (MIN_SUCCESS_RATIO * n as f64).ceil() as usize;
    let mut successes = records.iter().filter(|r| r.reward > 0.5).count();
    let mut failure_idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.reward < 0.5)
        .map(|(i, _)| i)
        .collect();
    let mut attempts = 0usize;
    let budget = 30 * n.max(100);
    while successes < target {
        attempts += 1;
        if attempts > budget {
            return Err(DatasetError::SuccessRatio {
                primitive,
                achieved: successes as f64 / n as f64,
                required: MIN_SUCCESS_RATIO,
            });
        }
        let rec = sample_record(primitive, true, &mut rng, sampler, features);
        if rec.reward > 0.5 {
            let slot = failure_idx.pop().expect("failures remain below target");
            records[slot] = rec;
            successes += 1;
        }
    }

    let state_dim = features.state_dim();
    let action_dim = primitive.action_dim();
    let mut states = Array2::zeros((n, state_dim));
    let mut actions = Array2::zeros((n, action_dim));
    let mut rewards = Array1::zeros(n);
    let mut next_states = Array2::zeros((n, state_dim));
    for (i, rec) in records.iter().enumerate() {
        states.row_mut(i).assign(&rec.state);
        for (j, &a) in rec.action.iter().enumerate() {
            actions[[i, j]] = a;
        }
        rewards[i] = rec.reward;
        next_states.row_mut(i).assign(&rec.next_state);
    }
    Ok(Dataset {
        primitive,
        states,
        actions,
        rewards,
        next_states,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    primitive: Primitive,
    records: usize,
    state_dim: usize,
    action_dim: usize,
    config_hash: String,
}

impl Dataset {
    /// Write as a JSON header line followed by little-endian `f32` payload
    /// (states, actions, rewards, next states, row-major).
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = Header {
            primitive: self.primitive,
            records: self.len(),
            state_dim: self.states.ncols(),
            action_dim: self.actions.ncols(),
            config_hash: config_hash.to_string(),
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| DatasetError::Header(e.to_string()))?;
        w.write_all(b"\n")?;
        for &v in self
            .states
            .iter()
            .chain(self.actions.iter())
            .chain(self.rewards.iter())
            .chain(self.next_states.iter())
        {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a dataset written by [`Dataset::save`]; returns the dataset and
    /// the config hash recorded at generation time.
    pub fn load(path: &Path) -> Result<(Dataset, String), DatasetError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header_bytes = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| DatasetError::Header(e.to_string()))?;
        let n = header.records;
        let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<f64>, DatasetError> {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from(r.read_f32::<LittleEndian>()?));
            }
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| DatasetError::Header(e.to_string()))
        };
        let states = read_matrix(n, header.state_dim)?;
        let actions = read_matrix(n, header.action_dim)?;
        let rewards = read_matrix(n, 1)?.column(0).to_owned();
        let next_states = read_matrix(n, header.state_dim)?;
        Ok((
            Dataset {
                primitive: header.primitive,
                states,
                actions,
                rewards,
                next_states,
            },
            header.config_hash,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampler() -> SceneSampler {
        SceneSampler::new(WorldConfig::default())
    }

    #[test]
    fn datasets_hit_success_ratio() {
        let features = FeatureConfig::default();
        for primitive in Primitive::all() {
            let ds = generate_dataset(primitive, 300, 9, &sampler(), &features).unwrap();
            assert_eq!(ds.len(), 300);
            assert!(
                ds.success_ratio() >= MIN_SUCCESS_RATIO,
                "{primitive:?}: ratio {}",
                ds.success_ratio()
            );
            // Both labels present.
            assert!(ds.success_ratio() < 1.0, "{primitive:?} has no failures");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let features = FeatureConfig::default();
        let a = generate_dataset(Primitive::Pick, 100, 4, &sampler(), &features).unwrap();
        let b = generate_dataset(Primitive::Pick, 100, 4, &sampler(), &features).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(Primitive::Pick, 100, 5, &sampler(), &features).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn actions_stay_normalized() {
        let features = FeatureConfig::default();
        let ds = generate_dataset(Primitive::Push, 150, 2, &sampler(), &features).unwrap();
        for &a in ds.actions.iter() {
            assert!((0.0..=1.0).contains(&a), "action component {a}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let features = FeatureConfig::default();
        let ds = generate_dataset(Primitive::Place, 60, 1, &sampler(), &features).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("place.bin");
        ds.save(&path, "deadbeef01234567").unwrap();
        let (back, hash) = Dataset::load(&path).unwrap();
        assert_eq!(hash, "deadbeef01234567");
        assert_eq!(back.primitive, Primitive::Place);
        assert_eq!(back.len(), ds.len());
        // f32 storage: equal to within single-precision rounding.
        for (a, b) in ds.states.iter().zip(back.states.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(ds.rewards, back.rewards);
    }
}
