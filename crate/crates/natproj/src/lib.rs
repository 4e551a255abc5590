//! Learning multimodal naturalistic sets from trajectory data and projecting
//! arbitrary trajectories into them.
//!
//! The pipeline: slice a trajectory dataset per timestep, map states to hull
//! states (planar position), cluster each slice, wrap each cluster in a
//! convex hull, and assemble the time-indexed union-of-polytopes set. A
//! candidate trajectory is then projected into that set by a big-M
//! mixed-integer convex QP solved with exact branch-and-bound under linear
//! dynamics.

pub mod clustering;
pub mod dynamics;
pub mod geometry;
pub mod ingest;
pub mod natset;
pub mod projector;
pub mod qpsolver;
