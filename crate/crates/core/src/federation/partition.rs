use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Partition {
    Iid,
    Dirichlet { alpha: f64 },
}

/// One simulated device: a set of subjects and all of their frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub subjects: Vec<usize>,
    pub frames: Vec<usize>,
}

impl ClientShard {
    pub fn n_k(&self) -> usize {
        self.frames.len()
    }
}

/// Proportions drawn from a symmetric Dirichlet(α) over `k` parts.
pub fn dirichlet_proportions(alpha: f64, k: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("dirichlet alpha {alpha}: {e}")))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        return Ok(vec![1.0 / k as f64; k]);
    }
    Ok(draws.into_iter().map(|d| d / total).collect())
}

/// Integer counts summing to `n` closest to `n · p` (largest remainder).
fn apportion(n: usize, p: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|&x| x * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Splits `subjects` (with per-subject `labels`, indexed by subject) over
/// `n_clients`. IID deals each shuffled class round-robin, continuing the
/// dealing position across classes; Dirichlet draws per-class client shares.
pub fn partition_subjects(subjects: &[usize], labels: &[usize], n_clients: usize, partition: Partition, master: u64) -> Result<Vec<Vec<usize>>> {
    if n_clients < 2 {
        return Err(Error::Config(format!("need at least 2 clients, got {n_clients}")));
    }
    if subjects.len() < n_clients {
        return Err(Error::Partition(format!("{} subjects cannot fill {n_clients} non-empty shards", subjects.len())));
    }
    let n_classes = subjects.iter().map(|&s| labels[s] + 1).max().unwrap_or(0);
    let mut rng = seed::rng(seed::derive(master, "partition", 0));
    let mut by_class: Vec<Vec<usize>> = (0..n_classes).map(|c| subjects.iter().copied().filter(|&s| labels[s] == c).collect()).collect();
    by_class.iter_mut().for_each(|m| m.shuffle(&mut rng));
    match partition {
        Partition::Iid => {
            let mut shards = vec![Vec::new(); n_clients];
            let mut next = 0;
            for members in &by_class {
                for &s in members {
                    shards[next].push(s);
                    next = (next + 1) % n_clients;
                }
            }
            Ok(shards)
        }
        Partition::Dirichlet { alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("dirichlet alpha must be positive, got {alpha}")));
            }
            for _ in 0..100 {
                let mut shards = vec![Vec::new(); n_clients];
                for members in &by_class {
                    let p = dirichlet_proportions(alpha, n_clients, &mut rng)?;
                    let mut it = members.iter();
                    for (k, c) in apportion(members.len(), &p).into_iter().enumerate() {
                        shards[k].extend(it.by_ref().take(c));
                    }
                }
                if shards.iter().all(|s| !s.is_empty()) {
                    return Ok(shards);
                }
            }
            Err(Error::Partition(format!("no non-empty {n_clients}-way Dirichlet({alpha}) split in 100 draws")))
        }
    }
}

/// Subject split plus the frames of each subject (`frame_subject[f]` is the
/// subject of frame `f`).
pub fn partition_dataset(
    subjects: &[usize],
    labels: &[usize],
    frame_subject: &[usize],
    n_clients: usize,
    partition: Partition,
    master: u64,
) -> Result<Vec<ClientShard>> {
    let split = partition_subjects(subjects, labels, n_clients, partition, master)?;
    let n_subjects = labels.len();
    let mut owner = vec![usize::MAX; n_subjects];
    for (k, s) in split.iter().enumerate() {
        for &subj in s {
            owner[subj] = k;
        }
    }
    let mut shards: Vec<ClientShard> = split
        .into_iter()
        .enumerate()
        .map(|(k, mut subjects)| {
            subjects.sort_unstable();
            ClientShard { client_id: k, subjects, frames: vec![] }
        })
        .collect();
    for (f, &s) in frame_subject.iter().enumerate() {
        if let Some(k) = owner.get(s).copied().filter(|&k| k != usize::MAX) {
            shards[k].frames.push(f);
        }
    }
    if let Some(s) = shards.iter().find(|s| s.frames.is_empty()) {
        return Err(Error::Partition(format!("client {} received subjects without frames", s.client_id)));
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_balanced_corpus() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let subjects: Vec<usize> = (0..50).collect();
        let shards = partition_subjects(&subjects, &labels, 5, Partition::Iid, 3).unwrap();
        for s in &shards {
            assert_eq!(s.iter().filter(|&&x| labels[x] == 0).count(), 5);
            assert_eq!(s.iter().filter(|&&x| labels[x] == 1).count(), 5);
        }
    }

    #[test]
    fn pigeonhole() {
        let labels = vec![0, 1, 0, 1];
        assert!(matches!(partition_subjects(&[0, 1, 2, 3], &labels, 5, Partition::Iid, 0), Err(Error::Partition(_))));
    }

    #[test]
    fn huge_alpha_is_uniform() {
        let mut rng = seed::rng(5);
        for _ in 0..50 {
            let p = dirichlet_proportions(1e6, 5, &mut rng).unwrap();
            assert!(p.iter().all(|&x| (x - 0.2).abs() < 0.02), "{p:?}");
        }
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(apportion(7, &[0.5, 0.5]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn dirichlet_shards_partition_subjects() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let subjects: Vec<usize> = (0..40).collect();
        let shards = partition_subjects(&subjects, &labels, 5, Partition::Dirichlet { alpha: 0.5 }, 11).unwrap();
        let mut all: Vec<usize> = shards.concat();
        all.sort_unstable();
        assert_eq!(all, subjects);
        assert!(shards.iter().all(|s| !s.is_empty()));
    }
}
