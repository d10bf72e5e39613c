//! Equivalence against naive reference implementations.
//!
//! The oracles live in `common/` as direct loops over the mathematical
//! definitions, sharing no code with the library kernels. Each comparison
//! runs 100 randomized shapes in f64 and demands agreement to 1e-10.

mod common;

const CASES: usize = 100;
const TOL: f64 = 1e-10;

#[test]
fn lsa_forward_matches_naive_oracle() {
    let mut worst = 0.0f64;
    for (desc, diff) in common::lsa_oracle_cases(CASES) {
        assert!(diff <= TOL, "{desc}: diff {diff:e}");
        worst = worst.max(diff);
    }
    println!("lsa_forward worst deviation over {CASES} cases: {worst:e}");
}

#[test]
fn aggregation_matches_naive_oracle() {
    let mut worst = 0.0f64;
    for (desc, diff) in common::aggregate_oracle_cases(CASES) {
        assert!(diff <= TOL, "{desc}: diff {diff:e}");
        worst = worst.max(diff);
    }
    println!("aggregation worst deviation over {CASES} cases: {worst:e}");
}
