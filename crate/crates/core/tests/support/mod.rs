#![allow(dead_code)]

#[path = "../../../autograd/tests/support/primitives.rs"]
pub mod primitives;

pub mod fixtures;
pub mod models;
pub mod oracles;
