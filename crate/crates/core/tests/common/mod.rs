//! Check suites shared by their own test targets and the acceptance run.
#![allow(dead_code)]

pub mod gradient_suite;
pub mod high_order_oracle;
