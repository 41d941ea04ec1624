//! Release gate: one test per acceptance criterion, each printing its
//! check table and failing loudly if any row lands outside its band.

use metastab_core::verify::{
    dog_exit_law_checks, dog_fdd_checks, dog_occupation_checks, dog_scaling_checks,
    dog_two_valley_checks, escape_bound_checks, identity_checks, polymer_checks, sandwich_checks,
    Check,
};

fn bound(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.3e}")
    }
}

fn gate(label: &str, checks: &[Check]) {
    let mut all = true;
    for c in checks {
        println!(
            "  {:<44} {:>13.6e}  in [{}, {}]  {}",
            c.name,
            c.observed,
            bound(c.low),
            bound(c.high),
            if c.pass { "pass" } else { "FAIL" }
        );
        all &= c.pass;
    }
    assert!(all, "{label}: failing rows above");
}

#[test]
fn c1_identities_on_random_chains() {
    gate("identities", &identity_checks(7, 200).unwrap());
}

#[test]
fn c2_sandwich_inequalities_on_random_chains() {
    gate("sandwich", &sandwich_checks(7, 200).unwrap());
}

#[test]
fn c3_two_valley_ratio_approaches_one_half() {
    gate("two-valley", &dog_two_valley_checks(&[4, 8, 16]).unwrap());
}

#[test]
fn c4_dog_scaling_laws() {
    gate("scaling", &dog_scaling_checks(&[4, 8, 16, 32]).unwrap());
}

#[test]
fn c5_order_marginals_converge() {
    gate("fdd", &dog_fdd_checks(8, 5000, 1).unwrap());
}

#[test]
fn c6_exponential_exit_law() {
    gate("exit law", &dog_exit_law_checks(8, 10_000, 7).unwrap());
}

#[test]
fn c7_polymer_family() {
    gate("polymer", &polymer_checks(&[3, 4, 5], 0.3).unwrap());
}

#[test]
fn c8_occupation_integrals_match_limit() {
    gate("occupation", &dog_occupation_checks(&[8, 16]).unwrap());
}

#[test]
fn c9_escape_bounds_on_random_chains() {
    gate("escape bounds", &escape_bound_checks(7, 50).unwrap());
}
