//! Layered control: an MPC planner on slow energy states, an explicit
//! reference governor (ERG) on the fast voltage loop, and an ISS tracking
//! controller, together with the offline certificates that tie the layers
//! together and runtime monitors for every assume-guarantee clause.
//!
//! The hybrid energy storage system (battery + supercapacitor on a DC bus)
//! is the worked instantiation; see [`hess`] and [`sim`].

pub mod cli;
pub mod contracts;
pub mod erg;
pub mod hess;
pub mod iss_cert;
pub mod mpc;
pub mod numkit;
pub mod qp;
pub mod sim;

pub use numkit::{Matrix, NumError, SpdMatrix};
