//! Boosted-cascade object detection built on Haar-like features.

pub mod boost;
pub mod cascade;
pub mod cascadexml;
pub mod dataset;
pub mod detect;
pub mod eval;
pub mod haar;
pub mod imagecore;

#[cfg(test)]
mod testutil;
