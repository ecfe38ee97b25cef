//! Robust superhedging and supermartingale optimal transport on finite lattices.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod lp;
pub mod marginals;
pub mod paths;
pub mod payoffs;
pub mod pricing;
