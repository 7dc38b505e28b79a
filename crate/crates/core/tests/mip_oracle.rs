//! Branch-and-bound against brute-force enumeration of every selection.

mod common;

#[test]
fn matches_enumeration_on_small_instances() {
    for seed in 0..200u64 {
        let n = 3 + (seed as usize % 7);
        common::mip_oracle::check(seed, n).unwrap();
    }
}

#[test]
fn matches_enumeration_on_twelve_candidates() {
    for seed in 1000..1004u64 {
        common::mip_oracle::check(seed, 12).unwrap();
    }
}
