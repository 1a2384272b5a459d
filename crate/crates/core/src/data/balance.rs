use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceConfig {
    /// Users above `(1 + theta_t) · N_ave` are trimmed.
    pub theta_t: f64,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            theta_t: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BalanceRow {
    pub label: usize,
    pub before: usize,
    pub after: usize,
}

/// Training multiset after balancing. Duplicates keep their source `traj_id`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalancedTrainSet {
    /// `(traj_id, label)`, grouped by label.
    pub entries: Vec<(usize, usize)>,
    pub report: Vec<BalanceRow>,
}

impl BalancedTrainSet {
    /// The identity "balancing" used when balancing is disabled.
    pub fn unbalanced(train: &[(usize, usize)]) -> Self {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, label) in train {
            *counts.entry(label).or_default() += 1;
        }
        Self {
            entries: train.to_vec(),
            report: counts
                .into_iter()
                .map(|(label, n)| BalanceRow {
                    label,
                    before: n,
                    after: n,
                })
                .collect(),
        }
    }
}

/// Replication target `⌈N_ave⌉` and trim cap `⌊(1+θ)·N_ave⌋`.
pub(crate) fn balance_bounds(total: usize, users: usize, theta_t: f64) -> (usize, usize) {
    let target = total.div_ceil(users);
    let cap = ((1.0 + theta_t) * total as f64 / users as f64 + 1e-9).floor() as usize;
    (target, cap)
}

/// Oversamples users below the mean trajectory count and undersamples users
/// above `(1 + θ_t)` times the mean.
///
/// `train` holds `(traj_id, label)` pairs; the mean is taken over the labels
/// present in it.
pub fn balance_training_set(
    train: &[(usize, usize)],
    cfg: BalanceConfig,
) -> Result<BalancedTrainSet, DataError> {
    if !cfg.theta_t.is_finite() || cfg.theta_t < 0.0 {
        return Err(DataError::InvalidTheta(cfg.theta_t));
    }
    if train.is_empty() {
        return Err(DataError::EmptyTrain);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(traj, label) in train {
        groups.entry(label).or_default().push(traj);
    }
    let users = groups.len();
    let total = train.len();
    let (target, cap) = balance_bounds(total, users, cfg.theta_t);
    if cap < target {
        return Err(DataError::BalanceConfig { cap, target });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(total + users * target);
    let mut report = Vec::with_capacity(users);
    for (label, trajs) in groups {
        let n = trajs.len();
        let selected: Vec<usize> = if n * users < total {
            let mut out = trajs.clone();
            while out.len() < target {
                out.push(trajs[rng.gen_range(0..n)]);
            }
            out
        } else if n > cap {
            let mut positions: Vec<usize> = (0..n).collect();
            positions.shuffle(&mut rng);
            positions.truncate(cap);
            positions.sort_unstable();
            positions.into_iter().map(|p| trajs[p]).collect()
        } else {
            trajs
        };
        report.push(BalanceRow {
            label,
            before: n,
            after: selected.len(),
        });
        entries.extend(selected.into_iter().map(|t| (t, label)));
    }
    Ok(BalancedTrainSet { entries, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_from_counts(counts: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                out.push((out.len(), label));
            }
        }
        out
    }

    fn after_counts(b: &BalancedTrainSet) -> Vec<usize> {
        b.report.iter().map(|r| r.after).collect()
    }

    #[test]
    fn worked_example_eight_two() {
        // N_t = 10, Q = 2, N_ave = 5, cap = floor(7.5) = 7.
        let b =
            balance_training_set(&train_from_counts(&[8, 2]), BalanceConfig::default()).unwrap();
        assert_eq!(after_counts(&b), vec![7, 5]);
        assert_eq!(b.entries.len(), 12);
    }

    #[test]
    fn balanced_input_unchanged() {
        let train = train_from_counts(&[4, 4, 4]);
        let b = balance_training_set(&train, BalanceConfig::default()).unwrap();
        assert_eq!(b.entries, train);
    }

    #[test]
    fn single_user_is_already_balanced() {
        let train = train_from_counts(&[7]);
        let b = balance_training_set(
            &train,
            BalanceConfig {
                theta_t: 0.0,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(b.entries, train);
    }

    #[test]
    fn duplicates_reuse_source_ids() {
        let train = train_from_counts(&[8, 2]);
        let b = balance_training_set(&train, BalanceConfig::default()).unwrap();
        for &(traj, label) in &b.entries {
            assert!(train.contains(&(traj, label)));
        }
    }

    #[test]
    fn tiny_mean_with_zero_theta_rejected() {
        // N_ave = 1.5: target 2, cap floor(1.5) = 1
        let err = balance_training_set(
            &train_from_counts(&[2, 1]),
            BalanceConfig {
                theta_t: 0.0,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DataError::BalanceConfig { cap: 1, target: 2 }
        ));
    }

    #[test]
    fn negative_theta_rejected() {
        let err = balance_training_set(
            &train_from_counts(&[2]),
            BalanceConfig {
                theta_t: -0.1,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, DataError::InvalidTheta(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn post_counts_within_bounds(counts in prop::collection::vec(1usize..40, 1..15), seed in any::<u64>()) {
                let train = train_from_counts(&counts);
                let cfg = BalanceConfig { theta_t: 0.5, seed };
                let (target, cap) = balance_bounds(train.len(), counts.len(), 0.5);
                match balance_training_set(&train, cfg) {
                    Ok(b) => {
                        for r in &b.report {
                            prop_assert!(r.after >= target && r.after <= cap.max(target));
                        }
                        prop_assert!(b.entries.len() <= train.len() + counts.len() * target);
                        prop_assert_eq!(b, balance_training_set(&train, cfg).unwrap());
                    }
                    Err(DataError::BalanceConfig { .. }) => prop_assert!(cap < target),
                    Err(e) => prop_assert!(false, "unexpected {}", e),
                }
            }
        }
    }
}
