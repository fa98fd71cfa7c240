//! Skill-sequence planning on a kinematic tabletop: a deterministic 2.5D
//! world with four manipulation primitives, learned feasibility/policy/
//! dynamics models, cross-entropy sequence optimization, language-model task
//! guidance, and several planners built on top.

pub mod config;
pub mod eval;
pub mod llm;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod planner;
pub mod pso;
pub mod symbolic;
pub mod world;
