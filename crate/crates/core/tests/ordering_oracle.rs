//! Ordering probabilities against sampling and exact symmetry.

mod support;

use std::time::Duration;

use support::{factorial_symmetry, oracle_battery, oracle_queries};

#[test]
fn deterministic_values_match_sampling() {
    let b = oracle_battery();
    assert_eq!(b.z.len(), 50);
    for (i, (z, q)) in b.z.iter().zip(oracle_queries()).enumerate() {
        assert!(*z <= 3.0, "query {i}: exact {} off by {z:.2} standard errors ({:?})", q.exact, q.query);
    }
    assert!(b.elapsed < Duration::from_secs(60), "{:?}", b.elapsed);
}

#[test]
fn exchangeable_draws_give_inverse_factorial() {
    let worst = factorial_symmetry();
    assert!(worst <= 1e-9, "{worst:e}");
}
