use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{FmpnError, Result};

/// Subject-disjoint partition of a manifest into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Subject ids per fold, ascending.
    pub folds: Vec<Vec<String>>,
    /// Fold index of every manifest sample.
    pub assignment: Vec<usize>,
}

/// Sorts subjects ascending and cuts them into `k` contiguous groups whose
/// sizes differ by at most one; earlier folds take the extra subject.
pub fn plan_folds(manifest: &DatasetManifest, k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(FmpnError::Planning(format!("need at least 2 folds, got {k}")));
    }
    let subjects = manifest.subjects();
    if subjects.len() < k {
        return Err(FmpnError::Planning(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let base = subjects.len() / k;
    let extra = subjects.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(subjects[start..start + len].to_vec());
        start += len;
    }
    let fold_of: HashMap<&str, usize> = folds
        .iter()
        .enumerate()
        .flat_map(|(f, ids)| ids.iter().map(move |id| (id.as_str(), f)))
        .collect();
    let assignment = manifest
        .samples
        .iter()
        .map(|s| fold_of[s.subject_id.as_str()])
        .collect();
    Ok(FoldPlan { k, folds, assignment })
}

impl FoldPlan {
    /// Sample indices for training and testing with `fold` held out.
    ///
    /// Fails if any subject id occurs on both sides.
    pub fn split(&self, manifest: &DatasetManifest, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k || self.assignment.len() != manifest.samples.len() {
            return Err(FmpnError::Planning(format!("fold {fold} not in plan")));
        }
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignment.len()).partition(|&i| self.assignment[i] == fold);
        let test_subjects: HashSet<&str> = test.iter().map(|&i| manifest.samples[i].subject_id.as_str()).collect();
        if let Some(&i) = train
            .iter()
            .find(|&&i| test_subjects.contains(manifest.samples[i].subject_id.as_str()))
        {
            return Err(FmpnError::Leakage(manifest.samples[i].subject_id.clone()));
        }
        Ok((train, test))
    }
}
