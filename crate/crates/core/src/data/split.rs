use std::collections::{HashMap, HashSet};

use super::{DataError, Result};

/// Patients in the order they should be assigned, with split sizes counted
/// in patients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub patients: Vec<String>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Patient part of a sample id: everything before the first `delimiter`, or
/// the whole id when there is none.
pub fn patient_key(id: &str, delimiter: Option<char>) -> &str {
    match delimiter.and_then(|d| id.find(d)) {
        Some(i) => &id[..i],
        None => id,
    }
}

/// Distinct patients in order of first appearance.
pub fn patients_in_order(ids: &[String], delimiter: Option<char>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.iter()
        .map(|id| patient_key(id, delimiter))
        .filter(|p| seen.insert(*p))
        .map(str::to_string)
        .collect()
}

/// Assigns the first `train` patients to train, the next `val` to
/// validation and the next `test` to test; every sample follows its
/// patient. Samples of patients beyond those counts are left out.
pub fn split_by_patient(
    ids: &[String],
    spec: &SplitSpec,
    delimiter: Option<char>,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let wanted = spec.train + spec.val + spec.test;
    if wanted > spec.patients.len() {
        return Err(DataError::Split(format!(
            "{} + {} + {} patients requested, only {} available",
            spec.train,
            spec.val,
            spec.test,
            spec.patients.len()
        )));
    }
    let mut part = HashMap::with_capacity(spec.patients.len());
    for (i, p) in spec.patients.iter().enumerate() {
        let which = if i < spec.train {
            0
        } else if i < spec.train + spec.val {
            1
        } else if i < wanted {
            2
        } else {
            3
        };
        if part.insert(p.as_str(), which).is_some() {
            return Err(DataError::Split(format!("patient `{p}` listed twice")));
        }
    }
    let mut out: [Vec<String>; 3] = Default::default();
    for id in ids {
        let key = patient_key(id, delimiter);
        match part.get(key) {
            Some(&w) if w < 3 => out[w].push(id.clone()),
            Some(_) => {}
            None => return Err(DataError::Split(format!("sample `{id}` belongs to unlisted patient `{key}`"))),
        }
    }
    let [train, val, test] = out;
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys() {
        assert_eq!(patient_key("OAS2_0001_MR1", Some('_')), "OAS2");
        assert_eq!(patient_key("P0001-MR2", Some('-')), "P0001");
        assert_eq!(patient_key("P0001", Some('-')), "P0001");
        assert_eq!(patient_key("a-b", None), "a-b");
    }
}
