use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Patient-level train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitIndex {
    /// Fails with [`Error::SplitLeak`] if any patient is in two groups.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for &p in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(p) {
                return Err(Error::SplitLeak(p));
            }
        }
        Ok(())
    }
}

/// Shuffles the patients and cuts them into thirds whose sizes differ by at
/// most one. Each group is returned sorted.
pub fn split_by_patient(patient_ids: &[u32], seed: u64) -> Result<SplitIndex> {
    let n = patient_ids.len();
    if n < 3 {
        return Err(Error::TooFewPatients {
            required: 3,
            got: n,
        });
    }
    let mut ids = patient_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != n {
        return Err(Error::InconsistentInput("duplicate patient ids".into()));
    }
    ids.shuffle(&mut rng::stream(seed, domain::SPLIT, 0));
    let base = n / 3;
    let extra = n % 3;
    let sizes = [
        base + usize::from(extra > 0),
        base + usize::from(extra > 1),
        base,
    ];
    let mut groups = Vec::with_capacity(3);
    let mut start = 0;
    for s in sizes {
        let mut g = ids[start..start + s].to_vec();
        g.sort_unstable();
        groups.push(g);
        start += s;
    }
    let test = groups.pop().expect("three groups");
    let validation = groups.pop().expect("three groups");
    let train = groups.pop().expect("three groups");
    Ok(SplitIndex {
        train,
        validation,
        test,
    })
}

/// Errors if any evaluation patient was also used for training.
pub fn assert_no_overlap(train: &[u32], eval: &[u32]) -> Result<()> {
    let t: HashSet<u32> = train.iter().copied().collect();
    match eval.iter().find(|p| t.contains(p)) {
        Some(&p) => Err(Error::SplitLeak(p)),
        None => Ok(()),
    }
}
