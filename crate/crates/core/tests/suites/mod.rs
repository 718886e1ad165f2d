//! Check suites shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod gradient;
pub mod invariants;
pub mod oracles;
