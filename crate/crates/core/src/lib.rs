//! Business process simulation with learned and heuristic resource
//! allocation policies.

pub mod drl;
pub mod harness;
pub mod model;
pub mod policies;
pub mod sim;
pub mod svfa;
