use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Subject indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Subject-level stratified k-fold split. Each class is shuffled, then dealt
/// round-robin over the folds; the dealing position carries over from one
/// class to the next so fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, master: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = seed::rng(seed::derive(master, "kfold", 0));
    let mut fold_of = vec![0usize; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Partition(format!("class {c} has {} subjects, fewer than {k} folds", members.len())));
        }
        members.shuffle(&mut rng);
        for s in members {
            fold_of[s] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..labels.len()).filter(|&i| fold_of[i] != f).collect(),
            val: (0..labels.len()).filter(|&i| fold_of[i] == f).collect(),
        })
        .collect())
}

/// Checks the CV hygiene laws: every subject validated exactly once, and no
/// training frame belongs to a validation subject.
pub fn check_leakage(folds: &[Fold], n_subjects: usize, frame_subject: &[usize], train_frames: &[Vec<usize>]) -> Result<()> {
    let mut seen = vec![0usize; n_subjects];
    for f in folds {
        for &s in &f.val {
            seen[s] += 1;
        }
    }
    if let Some(s) = seen.iter().position(|&c| c != 1) {
        return Err(Error::Leakage(format!("subject {s} appears in {} validation folds", seen[s])));
    }
    for (fi, (f, frames)) in folds.iter().zip(train_frames).enumerate() {
        let mut is_val = vec![false; n_subjects];
        f.val.iter().for_each(|&s| is_val[s] = true);
        if let Some(&fr) = frames.iter().find(|&&fr| is_val[frame_subject[fr]]) {
            return Err(Error::Leakage(format!("fold {fi}: training frame {fr} belongs to validation subject {}", frame_subject[fr])));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_corpus_gives_five_plus_five() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let folds = stratified_kfold(&labels, 5, 1).unwrap();
        for f in &folds {
            assert_eq!(f.val.iter().filter(|&&s| labels[s] == 0).count(), 5);
            assert_eq!(f.val.iter().filter(|&&s| labels[s] == 1).count(), 5);
            assert_eq!(f.train.len() + f.val.len(), 50);
        }
    }

    #[test]
    fn severity_split_sizes() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i >= 28)).collect();
        for seed in 0..20 {
            for f in stratified_kfold(&labels, 5, seed).unwrap() {
                let low = f.val.iter().filter(|&&s| labels[s] == 0).count();
                let high = f.val.len() - low;
                assert!((5..=6).contains(&low) && (4..=5).contains(&high), "{low}/{high}");
            }
        }
    }

    #[test]
    fn too_few_subjects() {
        assert!(stratified_kfold(&[0, 0, 0, 1, 1, 1], 5, 0).is_err());
    }

    #[test]
    fn leakage_detected() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let folds = stratified_kfold(&labels, 5, 0).unwrap();
        let frame_subject: Vec<usize> = (0..10).flat_map(|s| [s, s]).collect();
        let good: Vec<Vec<usize>> = folds.iter().map(|f| f.train.iter().flat_map(|&s| [2 * s, 2 * s + 1]).collect()).collect();
        check_leakage(&folds, 10, &frame_subject, &good).unwrap();
        let mut bad = good.clone();
        bad[2].push(2 * folds[2].val[0]);
        assert!(matches!(check_leakage(&folds, 10, &frame_subject, &bad), Err(Error::Leakage(_))));
        let mut dup = folds.clone();
        dup[0].val.push(folds[1].val[0]);
        assert!(check_leakage(&dup, 10, &frame_subject, &good).is_err());
    }
}
