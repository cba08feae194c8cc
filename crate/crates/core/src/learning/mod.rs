//! Learned value and policy networks and their training loops.

pub mod adam;
pub mod dqn;
pub mod io;
pub mod mdp;
pub mod network;
pub mod ppo;
pub mod replay;
pub mod train;
