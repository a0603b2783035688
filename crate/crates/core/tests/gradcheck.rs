mod common;

use common::{grad_check, random_config, GRAD_CASES, MAX_PARAMS};
use tinymask::netgraph::param_count;

const SEEDS_PER_CASE: u64 = 4;

fn check_case(case: &str) {
    for seed in 0..SEEDS_PER_CASE {
        let cfg = random_config(case, seed);
        assert!(param_count(&cfg).unwrap() <= MAX_PARAMS, "{case}/{seed} too large");
        let r = grad_check(&cfg, seed, 3);
        assert!(r.checked * 2 > r.params, "{case}/{seed}: only {} of {} checked", r.checked, r.params);
        assert!(r.max_rel_err < 1e-3, "{case}/{seed}: max relative error {:e}", r.max_rel_err);
    }
}

#[test]
fn conv2d_gradients() {
    check_case("conv2d");
}

#[test]
fn max_pool_gradients() {
    check_case("max_pool");
}

#[test]
fn global_avg_pool_gradients() {
    check_case("global_avg_pool");
}

#[test]
fn dense_gradients() {
    check_case("dense");
}

#[test]
fn dropout_gradients() {
    check_case("dropout");
}

#[test]
fn fire_gradients() {
    check_case("fire");
}

#[test]
fn every_case_is_covered() {
    assert_eq!(GRAD_CASES.len(), 6);
    for case in GRAD_CASES {
        random_config(case, 0);
    }
}
