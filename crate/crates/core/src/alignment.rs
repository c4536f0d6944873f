//! Sample-id intersection between the two parties.
//!
//! Threat model for the hashed variant: honest-but-curious parties sharing a
//! salt out of band. Salted SHA-256 digests hide ids outside the
//! intersection from a party that cannot enumerate the id space; they are
//! not a cryptographic private set intersection.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub type Salt = [u8; 16];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("empty sample id at position {0}")]
    EmptyId(usize),
    #[error("digest {index} has {len} bytes, expected {DIGEST_LEN}")]
    DigestLength { index: usize, len: usize },
    #[error("duplicate digest at position {0}")]
    DuplicateDigest(usize),
    #[error("peer cohort names id `{0}` that this party does not hold")]
    UnknownId(String),
    #[error("peer cohort is not in the canonical order for seed {0}")]
    OrderMismatch(u64),
    #[error("malformed cohort bytes: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, AlignError>;

/// Ordered ids common to both parties; the row order of every batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedCohort {
    pub ids: Vec<String>,
    pub order_seed: u64,
}

impl AlignedCohort {
    /// Sorts `ids` lexicographically (by bytes) and shuffles them with
    /// `order_seed`.
    pub fn canonical(mut ids: Vec<String>, order_seed: u64) -> Self {
        ids.sort_unstable();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        Self { ids, order_seed }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `u64 seed ‖ u32 count ‖ (u32 len ‖ utf-8)*`, big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.ids.iter().map(|s| 4 + s.len()).sum::<usize>());
        out.extend_from_slice(&self.order_seed.to_be_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_be_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_be_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(at..at + n)
                .ok_or_else(|| AlignError::Malformed(format!("truncated at byte {at}")))?;
            at += n;
            Ok(s)
        };
        let order_seed = u64::from_be_bytes(take(8)?.try_into().expect("8 bytes"));
        let count = u32::from_be_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32::from_be_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let s = std::str::from_utf8(take(len)?).map_err(|e| AlignError::Malformed(e.to_string()))?;
            ids.push(s.to_string());
        }
        if at != bytes.len() {
            return Err(AlignError::Malformed(format!("{} trailing bytes", bytes.len() - at)));
        }
        Ok(Self { ids, order_seed })
    }
}

/// Rejects empty and repeated ids, naming the first offender.
pub fn check_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(AlignError::EmptyId(i));
        }
        if !seen.insert(id.as_str()) {
            return Err(AlignError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

pub fn intersect_plain(local: &[String], remote: &[String], order_seed: u64) -> Result<AlignedCohort> {
    check_ids(local)?;
    check_ids(remote)?;
    let remote: HashSet<&str> = remote.iter().map(String::as_str).collect();
    let common = local.iter().filter(|id| remote.contains(id.as_str())).cloned().collect();
    Ok(AlignedCohort::canonical(common, order_seed))
}

pub fn digest_id(salt: &Salt, id: &str) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Salted digests of `ids`, sorted so their order reveals nothing about the
/// local row order.
pub fn digest_ids(salt: &Salt, ids: &[String]) -> Result<Vec<Vec<u8>>> {
    check_ids(ids)?;
    let mut d: Vec<Vec<u8>> = ids.iter().map(|id| digest_id(salt, id).to_vec()).collect();
    d.sort_unstable();
    Ok(d)
}

/// Responder side: the local ids whose salted digest the peer also sent.
pub fn intersect_hashed(local: &[String], salt: &Salt, remote_digests: &[Vec<u8>], order_seed: u64) -> Result<AlignedCohort> {
    check_ids(local)?;
    let mut remote = HashSet::with_capacity(remote_digests.len());
    for (index, d) in remote_digests.iter().enumerate() {
        if d.len() != DIGEST_LEN {
            return Err(AlignError::DigestLength { index, len: d.len() });
        }
        if !remote.insert(d.as_slice()) {
            return Err(AlignError::DuplicateDigest(index));
        }
    }
    let common = local
        .iter()
        .filter(|id| remote.contains(digest_id(salt, id).as_slice()))
        .cloned()
        .collect();
    Ok(AlignedCohort::canonical(common, order_seed))
}

/// Requester side: accepts the responder's cohort only if every id is held
/// locally, none repeats, and the order is the canonical one for its seed.
pub fn verify_cohort(local: &[String], cohort: &AlignedCohort) -> Result<()> {
    check_ids(&cohort.ids)?;
    let mine: HashSet<&str> = local.iter().map(String::as_str).collect();
    if let Some(id) = cohort.ids.iter().find(|id| !mine.contains(id.as_str())) {
        return Err(AlignError::UnknownId(id.clone()));
    }
    if AlignedCohort::canonical(cohort.ids.clone(), cohort.order_seed) != *cohort {
        return Err(AlignError::OrderMismatch(cohort.order_seed));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn basic_cases() {
        let a = ids(&["b", "a", "c"]);
        let same = intersect_plain(&a, &a, 3).unwrap();
        let mut sorted = same.ids.clone();
        sorted.sort();
        assert_eq!(sorted, ids(&["a", "b", "c"]));
        assert!(intersect_plain(&a, &ids(&["x"]), 3).unwrap().is_empty());
        assert_eq!(
            intersect_plain(&ids(&["a", "a"]), &a, 0),
            Err(AlignError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn cohort_bytes_round_trip() {
        let c = AlignedCohort::canonical(ids(&["P1", "P2", "é"]), 9);
        assert_eq!(AlignedCohort::from_bytes(&c.to_bytes()).unwrap(), c);
        assert!(AlignedCohort::from_bytes(&c.to_bytes()[..5]).is_err());
    }

    #[test]
    fn wrong_digest_length() {
        let salt = [0u8; 16];
        assert_eq!(
            intersect_hashed(&ids(&["a"]), &salt, &[vec![0u8; 31]], 0),
            Err(AlignError::DigestLength { index: 0, len: 31 })
        );
    }
}
