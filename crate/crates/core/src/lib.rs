//! Power-grid state reconstruction workbench.
//!
//! * [`case_io`]: MATPOWER-style case files and reduction to the
//!   series-impedance bus/branch model.
//! * [`grid`]: the graph and nodal power-flow kernels.
//! * [`pf`]: Newton-Raphson AC and DC power flow.
//! * [`scenario`]: load/topology perturbation, N-k enumeration, dataset shards.
//! * [`masker`]: random and power-flow-patterned node-feature masks.
//! * [`nn`]: masked graph autoencoder with reconstruction and physics losses.
//! * [`train_eval`]: training, evaluation, neural power flow, contingency
//!   screening and benchmarks.

pub mod case_io;
pub mod grid;
pub mod pf;
pub mod rng;
pub mod masker;
pub mod scenario;
pub mod nn;
pub mod train_eval;
