//! Stratified k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub fold_count: usize,
    /// Fold index of each sample.
    pub assignment: Vec<usize>,
}

impl DatasetSplit {
    /// Indices held out in `fold`.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Indices used for training when `fold` is held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Shuffles each class with a seeded generator and deals its members to folds
/// round-robin. The dealing position carries over between classes so total
/// fold sizes also stay within one of each other.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<DatasetSplit> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count must be at least 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(Error::TooFewSamples("no samples to split".into()));
    }
    for (class, members) in &by_class {
        if members.len() < k {
            return Err(Error::TooFewSamples(format!(
                "class {class} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
    }

    let mut assignment = vec![0; labels.len()];
    let mut cursor = 0;
    for (class, mut members) in by_class {
        members.shuffle(&mut rng::generator(rng::derive(seed, class as u64)));
        for i in members {
            assignment[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(DatasetSplit {
        fold_count: k,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(split: &DatasetSplit, labels: &[usize], class: usize) -> Vec<usize> {
        let mut c = vec![0; split.fold_count];
        for (i, &f) in split.assignment.iter().enumerate() {
            if labels[i] == class {
                c[f] += 1;
            }
        }
        c
    }

    #[test]
    fn one_per_fold() {
        let labels = vec![0; 10];
        let s = stratified_kfold(&labels, 10, 1).unwrap();
        assert_eq!(counts(&s, &labels, 0), vec![1; 10]);
    }

    #[test]
    fn two_classes_two_folds() {
        let labels = [0, 0, 1, 1];
        let s = stratified_kfold(&labels, 2, 9).unwrap();
        assert_eq!(counts(&s, &labels, 0), vec![1, 1]);
        assert_eq!(counts(&s, &labels, 1), vec![1, 1]);
    }

    #[test]
    fn too_few() {
        assert!(matches!(stratified_kfold(&[0; 9], 10, 0), Err(Error::TooFewSamples(_))));
        assert!(matches!(stratified_kfold(&[0; 9], 1, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn train_and_test_partition() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let s = stratified_kfold(&labels, 5, 4).unwrap();
        for f in 0..5 {
            let mut all = s.train_indices(f);
            all.extend(s.test_indices(f));
            all.sort();
            assert_eq!(all, (0..30).collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn stratification_holds(
            sizes in proptest::collection::vec(3usize..40, 1..5),
            k in 2usize..4,
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
                .collect();
            let s = stratified_kfold(&labels, k, seed).unwrap();
            prop_assert!(s.assignment.iter().all(|&f| f < k));
            for c in 0..sizes.len() {
                let cs = counts(&s, &labels, c);
                let (lo, hi) = (cs.iter().min().unwrap(), cs.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
            prop_assert_eq!(s.clone(), stratified_kfold(&labels, k, seed).unwrap());
        }
    }
}
