//! High-order network oracle; the checks live in `common::high_order_oracle`.

mod common;

use common::high_order_oracle as oracle;

#[test]
fn matches_brute_force_on_50_random_inputs() {
    oracle::matches_brute_force_on_50_random_inputs();
}

#[test]
fn documented_example() {
    oracle::documented_example();
}
