//! Low-rank decomposition of convolutional and fully-connected layers.
//!
//! The crate covers the whole path from a model description to verified
//! factor weights:
//!
//! * [`tensor`]: dense tensors, unfoldings, mode products and the SVD kernel;
//! * [`decompose`]: SVD and Tucker-2 factorizations of a single layer;
//! * [`planner`]: rank formulas, parameter/FLOP accounting, whole-model
//!   plans and profile-driven rank search;
//! * [`transforms`]: layer merging, factor freezing and branched Tucker;
//! * [`nn`]: reference forward passes used for equivalence checks and timing;
//! * [`bundle`] and [`commands`]: the on-disk factor bundle and the `lrd` CLI
//!   commands built on top of everything else.

pub mod bundle;
pub mod commands;
pub mod decompose;
pub mod fixtures;
pub mod model;
pub mod nn;
pub mod planner;
pub mod report;
pub mod tensor;
pub mod transforms;
pub mod weights;
