//! On-disk format for trained model bundles: a JSON header line describing
//! shapes and thresholds, followed by all network parameters as
//! little-endian `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Mlp;
use crate::world::Primitive;

use super::dynamics::Dynamics;
use super::policy::Policy;
use super::qfn::QEnsemble;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("bundle is missing models for {0:?}")]
    MissingSkill(Primitive),
}

/// Everything the planner needs for one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillModel {
    pub q: QEnsemble,
    pub policy: Policy,
    pub dynamics: Dynamics,
    /// Calibrated ensemble-variance rejection threshold.
    pub ood_epsilon: f64,
}

impl SkillModel {
    pub fn primitive(&self) -> Primitive {
        self.q.primitive
    }

    /// Whether a query falls outside the models' trusted distribution.
    pub fn is_ood(&self, state: &Array1<f64>, action: &[f64]) -> bool {
        self.q.variance(state, action) > self.ood_epsilon
    }
}

/// The trained models for all four primitives plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config_hash: String,
    skills: BTreeMap<Primitive, SkillModel>,
}

#[derive(Serialize, Deserialize)]
struct SkillHeader {
    primitive: Primitive,
    q_dims: Vec<usize>,
    q_members: usize,
    q_prior_scale: f64,
    q_prior_mask: bool,
    policy_dims: Vec<usize>,
    policy_spread: f64,
    dynamics_dims: Vec<usize>,
    ood_epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    config_hash: String,
    skills: Vec<SkillHeader>,
}

impl ModelBundle {
    pub fn new(config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            skills: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, skill: SkillModel) {
        self.skills.insert(skill.primitive(), skill);
    }

    pub fn get(&self, primitive: Primitive) -> Option<&SkillModel> {
        self.skills.get(&primitive)
    }

    /// Like [`ModelBundle::get`] but returns an error for absent skills.
    pub fn skill(&self, primitive: Primitive) -> Result<&SkillModel, CheckpointError> {
        self.skills
            .get(&primitive)
            .ok_or(CheckpointError::MissingSkill(primitive))
    }

    pub fn primitives(&self) -> impl Iterator<Item = Primitive> + '_ {
        self.skills.keys().copied()
    }

    pub fn is_complete(&self) -> bool {
        Primitive::all().iter().all(|p| self.skills.contains_key(p))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = BundleHeader {
            config_hash: self.config_hash.clone(),
            skills: self
                .skills
                .values()
                .map(|s| SkillHeader {
                    primitive: s.primitive(),
                    q_dims: s.q.members[0].dims().to_vec(),
                    q_members: s.q.members.len(),
                    q_prior_scale: s.q.prior_scale,
                    q_prior_mask: s.q.prior_mask,
                    policy_dims: s.policy.net.dims().to_vec(),
                    policy_spread: s.policy.spread,
                    dynamics_dims: s.dynamics.net.dims().to_vec(),
                    ood_epsilon: s.ood_epsilon,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &header)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        w.write_all(b"\n")?;
        for skill in self.skills.values() {
            for member in &skill.q.members {
                write_net(&mut w, member)?;
            }
            for prior in &skill.q.priors {
                write_net(&mut w, prior)?;
            }
            write_net(&mut w, &skill.policy.net)?;
            write_net(&mut w, &skill.dynamics.net)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
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
        let header: BundleHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut skills = BTreeMap::new();
        for sh in &header.skills {
            let mut members = Vec::with_capacity(sh.q_members);
            for _ in 0..sh.q_members {
                members.push(read_net(&mut r, &sh.q_dims)?);
            }
            // Priors are stored only when active: their count matches the
            // member count iff the scale is nonzero.
            let n_priors = if sh.q_prior_scale != 0.0 { sh.q_members } else { 0 };
            let mut priors = Vec::with_capacity(n_priors);
            for _ in 0..n_priors {
                priors.push(read_net(&mut r, &sh.q_dims)?);
            }
            let policy_net = read_net(&mut r, &sh.policy_dims)?;
            let dynamics_net = read_net(&mut r, &sh.dynamics_dims)?;
            skills.insert(
                sh.primitive,
                SkillModel {
                    q: QEnsemble {
                        primitive: sh.primitive,
                        members,
                        priors,
                        prior_scale: sh.q_prior_scale,
                        prior_mask: sh.q_prior_mask,
                    },
                    policy: Policy {
                        primitive: sh.primitive,
                        net: policy_net,
                        spread: sh.policy_spread,
                    },
                    dynamics: Dynamics {
                        primitive: sh.primitive,
                        net: dynamics_net,
                    },
                    ood_epsilon: sh.ood_epsilon,
                },
            );
        }
        Ok(Self {
            config_hash: header.config_hash,
            skills,
        })
    }
}

fn write_net(w: &mut impl Write, net: &Mlp) -> Result<(), CheckpointError> {
    for v in net.params_flat() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_net(r: &mut impl Read, dims: &[usize]) -> Result<Mlp, CheckpointError> {
    let mut net = Mlp::zeros(dims);
    let mut flat = vec![0.0; net.num_params()];
    for v in &mut flat {
        *v = r.read_f64::<LittleEndian>()?;
    }
    net.set_params_flat(&flat);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_skill(primitive: Primitive, seed: u64) -> SkillModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_dim = 63 + primitive.action_dim();
        SkillModel {
            q: QEnsemble {
                primitive,
                members: (0..2).map(|_| Mlp::new(&[in_dim, 8, 1], &mut rng)).collect(),
                priors: (0..2).map(|_| Mlp::new(&[in_dim, 8, 1], &mut rng)).collect(),
                prior_scale: 4.0,
                prior_mask: true,
            },
            policy: Policy {
                primitive,
                net: Mlp::new(&[63, 8, primitive.action_dim()], &mut rng),
                spread: 0.3,
            },
            dynamics: Dynamics {
                primitive,
                net: Mlp::new(&[in_dim, 8, 63], &mut rng),
            },
            ood_epsilon: 0.07,
        }
    }

    #[test]
    fn bundle_round_trips_bit_exactly() {
        let mut bundle = ModelBundle::new("cafef00dcafef00d");
        for (i, p) in Primitive::all().into_iter().enumerate() {
            bundle.insert(tiny_skill(p, i as u64));
        }
        assert!(bundle.is_complete());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.bin");
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(bundle, back);
    }

    #[test]
    fn missing_skill_is_reported() {
        let mut bundle = ModelBundle::new("x");
        bundle.insert(tiny_skill(Primitive::Pick, 0));
        assert!(!bundle.is_complete());
        assert!(matches!(
            bundle.skill(Primitive::Push),
            Err(CheckpointError::MissingSkill(Primitive::Push))
        ));
    }

    #[test]
    fn corrupt_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.bin");
        std::fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(
            ModelBundle::load(&path),
            Err(CheckpointError::Header(_))
        ));
    }
}
