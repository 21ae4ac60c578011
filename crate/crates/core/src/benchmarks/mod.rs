//! Benchmark problem builders.

mod svm;
mod toy;
mod transport;

pub use svm::{build_svm, test_accuracy, validation_loss, SvmDataset};
pub use toy::{build_toy, toy_f, toy_g, toy_grid_minimizers, toy_hyper_objective, TOY_X_RANGE};
pub use transport::{
    build_transport, Link, OdPair, TransportLayout, TransportNetwork, TransportProblem,
};
