use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Better {
    Higher,
    Lower,
}

/// Per-task ranks (1 = best, ties share the mean of their positions) with
/// sums and two-decimal averages per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub names: Vec<String>,
    pub tasks: Vec<String>,
    /// `ranks[entry][task]`.
    pub ranks: Vec<Vec<f64>>,
    pub sums: Vec<f64>,
    pub averages: Vec<f64>,
}

/// Ranks `values[entry][task]` within each task.
pub fn rank_methods(names: &[String], tasks: &[String], values: &[Vec<f64>], better: Better) -> Result<RankTable> {
    if names.len() != values.len() || names.is_empty() || tasks.is_empty() {
        return Err(Error::Shape(format!("{} names for {} rows over {} tasks", names.len(), values.len(), tasks.len())));
    }
    for (n, row) in names.iter().zip(values) {
        if row.len() != tasks.len() {
            return Err(Error::Shape(format!("'{n}' has {} values for {} tasks", row.len(), tasks.len())));
        }
        if let Some(t) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("missing value for '{n}' in task '{}'", tasks[t])));
        }
    }
    let mut ranks = vec![vec![0.0; tasks.len()]; names.len()];
    for t in 0..tasks.len() {
        let key = |i: usize| if better == Better::Higher { -values[i][t] } else { values[i][t] };
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && key(order[end]) == key(order[start]) {
                end += 1;
            }
            let shared = (start + 1 + end) as f64 / 2.0;
            order[start..end].iter().for_each(|&i| ranks[i][t] = shared);
            start = end;
        }
    }
    let sums: Vec<f64> = ranks.iter().map(|r| r.iter().sum()).collect();
    let averages = sums.iter().map(|s| (s / tasks.len() as f64 * 100.0).round() / 100.0).collect();
    Ok(RankTable { names: names.to_vec(), tasks: tasks.to_vec(), ranks, sums, averages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ties_share_average_rank() {
        let t = rank_methods(&names(&["a", "b", "c"]), &names(&["t"]), &[vec![0.9], vec![0.8], vec![0.8]], Better::Higher).unwrap();
        assert_eq!(t.ranks, vec![vec![1.0], vec![2.5], vec![2.5]]);
    }

    #[test]
    fn lower_is_better_for_time() {
        let t = rank_methods(&names(&["a", "b"]), &names(&["t1", "t2"]), &[vec![10.0, 5.0], vec![20.0, 1.0]], Better::Lower).unwrap();
        assert_eq!(t.sums, vec![3.0, 3.0]);
        assert_eq!(t.ranks[0], vec![1.0, 2.0]);
    }

    #[test]
    fn missing_cell_rejected() {
        let r = rank_methods(&names(&["a", "b"]), &names(&["t"]), &[vec![1.0], vec![f64::NAN]], Better::Lower);
        assert!(r.is_err());
        assert!(rank_methods(&names(&["a"]), &names(&["t", "u"]), &[vec![1.0]], Better::Lower).is_err());
    }
}
