//! Stochastic market equilibrium between a road network with EV charging
//! demand and a transmission network with renewable investment.

#![cfg_attr(not(test), no_std)]
// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod admm;
pub mod dispatch;
pub mod fixtures;
pub mod ldl;
pub mod network;
pub mod oracle;
pub mod qp;
pub mod scenario;
pub mod traffic;
