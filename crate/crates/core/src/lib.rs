//! Crowd-aware memory fusion and receding-horizon path planning.
//!
//! The crate models crowd density as Gaussian-mixture layers on a normalized
//! probability grid, fuses a live sensor layer with a periodic historical
//! prior through weighted Dempster-Shafer evidence combination, and plans
//! global paths with a receding-horizon sub-path optimizer that trades path
//! length against the fused crowd probability. A synthetic gate-flow crowd
//! simulator, grid A* baselines, and a travel-time evaluation harness round
//! out the toolkit.

pub mod baselines;
pub mod cases;
pub mod eval;
pub mod exec;
pub mod gridmap;
pub mod memory;
pub mod optim;
pub mod planner;
pub mod simulator;
pub mod tracking;
