//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion.
//!
//! Criterion 6 contains the literal L^p decay bound, which the scheme cannot
//! satisfy: the diffusion step is an L^p contraction but the kinetic step
//! multiplies the L^p norm by (1 + alpha h)^(p-1) per step, so the norm grows.
//! The suite therefore expects exactly {6} to fail and reports the growth
//! bound that does hold alongside it.
//!
//! Runs without the libtest harness so the table is always printed.

use std::collections::BTreeSet;

use fkfpe::validate::criterion;

const EXPECTED_FAILURES: [u8; 1] = [6];

fn main() {
    let results: Vec<_> = (1..=10u8)
        .map(|id| criterion(id).unwrap_or_else(|e| panic!("criterion {id} errored: {e}")))
        .collect();
    for r in &results {
        println!("{} criterion {:>2}: {}", if r.passed() { "PASS" } else { "FAIL" }, r.id, r.title);
    }
    println!();
    for r in &results {
        print!("{r}");
    }
    let failed: BTreeSet<u8> = results.iter().filter(|r| !r.passed()).map(|r| r.id).collect();
    let expected: BTreeSet<u8> = EXPECTED_FAILURES.into_iter().collect();
    assert_eq!(failed, expected, "unexpected set of failing criteria");
    let c6 = &results[5];
    let lp_only = c6.checks.iter().filter(|c| !c.passed).all(|c| c.name.starts_with("L^p bound"));
    assert!(lp_only, "criterion 6 failed outside the L^p decay bound:\n{c6}");
}
