#![allow(dead_code)]

pub mod mock;
pub mod oracles;
