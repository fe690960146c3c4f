//! Decentralized plug-and-play voltage control for DC islanded microgrids.
//!
//! The crate builds the electrical models of a microgrid of distributed
//! generation units (DGUs), synthesizes local controllers through per-DGU
//! LMI problems, certifies the stability of the interconnected closed loop,
//! designs reference prefilters and load-current compensators, adjudicates
//! plug-in and unplugging requests and simulates the full closed loop with
//! scripted events.

// The system OpenBLAS library backs the dense factorizations of the SDP solver.
extern crate openblas_src;

pub mod analysis;
pub mod cli;
pub mod design;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod pnp;
pub mod sim;
pub mod synthesis;
pub mod units;

pub use error::{Error, Result};
pub use grid::{DguId, DguParams, GridGraph, LineParams};
