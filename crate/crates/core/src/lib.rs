#![no_std]

extern crate alloc;

pub mod chain;
pub mod engine;
pub mod expost;
pub mod linalg;
pub mod market;
pub mod ordering;
pub mod pstrategy;
pub mod strategy;
