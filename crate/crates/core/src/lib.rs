//! Deterministic simulator and library for negotiating, verifying and paying
//! for remote firewall rules deployed at a gateway on the attacker's side.

pub mod discovery;
pub mod learning;
pub mod lifecycle;
pub mod mechanism;
pub mod message;
pub mod model;
pub mod netsim;
pub mod scenario;
pub mod spoofcheck;
