#![allow(dead_code)]

pub mod audit;
pub mod invariants;
pub mod oracles;
pub mod synthetic;
