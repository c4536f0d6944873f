use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfl_core::alignment::{
    digest_ids, intersect_hashed, intersect_plain, verify_cohort, AlignError, AlignedCohort, Salt,
};

fn random_ids(rng: &mut ChaCha8Rng, pool: usize, n: usize) -> Vec<String> {
    let mut all: Vec<String> = (0..pool).map(|i| format!("S{i:05}")).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn brute_force(a: &[String], b: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for x in a {
        for y in b {
            if x == y {
                out.push(x.clone());
            }
        }
    }
    out.sort();
    out
}

fn sorted(c: &AlignedCohort) -> Vec<String> {
    let mut v = c.ids.clone();
    v.sort();
    v
}

#[test]
fn thousand_random_cases_agree_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let pool = rng.gen_range(1..400);
        let (ng, nh) = (rng.gen_range(0..=pool), rng.gen_range(0..=pool));
        let guest = random_ids(&mut rng, pool, ng);
        let host = random_ids(&mut rng, pool, nh);
        let seed: u64 = rng.gen();
        let salt: Salt = rng.gen();
        let want = brute_force(&guest, &host);

        let plain_guest = intersect_plain(&guest, &host, seed).unwrap();
        let plain_host = intersect_plain(&host, &guest, seed).unwrap();
        // host answers the guest's digests, guest verifies
        let hashed = intersect_hashed(&host, &salt, &digest_ids(&salt, &guest).unwrap(), seed).unwrap();
        verify_cohort(&guest, &hashed).unwrap();

        assert_eq!(sorted(&plain_guest), want, "case {case}");
        assert_eq!(plain_guest.to_bytes(), plain_host.to_bytes(), "case {case}");
        assert_eq!(hashed.to_bytes(), plain_guest.to_bytes(), "case {case}");
    }
}

#[test]
fn two_hundred_vs_one_fifty() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_ids(&mut rng, 500, 200);
    let b = random_ids(&mut rng, 500, 150);
    assert_eq!(sorted(&intersect_plain(&a, &b, 0).unwrap()), brute_force(&a, &b));
}

#[test]
fn empty_local_set_sends_no_digests() {
    let salt = [7u8; 16];
    let digests = digest_ids(&salt, &[]).unwrap();
    assert!(digests.is_empty());
    let host: Vec<String> = (0..10).map(|i| i.to_string()).collect();
    assert!(intersect_hashed(&host, &salt, &digests, 1).unwrap().is_empty());
}

#[test]
fn no_collisions_among_ten_thousand_ids() {
    let ids: Vec<String> = (0..10_000).map(|i| format!("P{i:05}")).collect();
    let d = digest_ids(&[3u8; 16], &ids).unwrap();
    let unique: HashSet<&Vec<u8>> = d.iter().collect();
    assert_eq!(unique.len(), ids.len());
}

#[test]
fn order_is_fixed_by_seed() {
    let ids: Vec<String> = (0..50).map(|i| format!("x{i}")).collect();
    let a = AlignedCohort::canonical(ids.clone(), 5);
    let b = AlignedCohort::canonical(ids.iter().rev().cloned().collect(), 5);
    assert_eq!(a, b);
    assert_ne!(a.ids, AlignedCohort::canonical(ids, 6).ids);
}

#[test]
fn verification_rejects_tampered_cohorts() {
    let guest: Vec<String> = (0..20).map(|i| format!("g{i}")).collect();
    let mut c = AlignedCohort::canonical(guest[..10].to_vec(), 4);
    verify_cohort(&guest, &c).unwrap();
    c.ids.swap(0, 1);
    assert_eq!(verify_cohort(&guest, &c), Err(AlignError::OrderMismatch(4)));
    let stranger = AlignedCohort::canonical(vec!["zz".into()], 4);
    assert_eq!(verify_cohort(&guest, &stranger), Err(AlignError::UnknownId("zz".into())));
}

#[test]
fn duplicate_is_named() {
    let err = intersect_plain(&["a".into(), "b".into()], &["c".into(), "c".into()], 0).unwrap_err();
    assert_eq!(err.to_string(), "duplicate sample id `c`");
}

proptest! {
    #[test]
    fn hashed_equals_plain(
        a in prop::collection::hash_set("[a-z0-9]{1,6}", 0..60),
        b in prop::collection::hash_set("[a-z0-9]{1,6}", 0..60),
        seed in any::<u64>(),
        salt in any::<[u8; 16]>(),
    ) {
        let a: Vec<String> = a.into_iter().collect();
        let b: Vec<String> = b.into_iter().collect();
        let plain = intersect_plain(&a, &b, seed).unwrap();
        let hashed = intersect_hashed(&b, &salt, &digest_ids(&salt, &a).unwrap(), seed).unwrap();
        prop_assert_eq!(plain, hashed);
    }
}
