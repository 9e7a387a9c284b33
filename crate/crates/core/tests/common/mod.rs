#![allow(dead_code)]

pub mod docs;
pub mod fixtures;
pub mod oracles;
pub mod stubs;
