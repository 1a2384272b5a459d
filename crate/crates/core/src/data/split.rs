use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{by_user, Part, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 6,
            valid: 2,
            test: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Shuffle each user's trajectories with the split seed before cutting.
    #[default]
    Random,
    /// Cut each user's trajectories in week order (earliest go to train).
    Chronological,
}

impl FromStr for SplitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "chronological" => Ok(Self::Chronological),
            other => Err(format!("unknown split policy {other:?}")),
        }
    }
}

/// Per-trajectory split assignment plus the user → class-label mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Indexed by `traj_id`.
    pub parts: Vec<Part>,
    /// Indexed by `traj_id`: class label of the trajectory's user.
    pub labels: Vec<usize>,
    /// Class label → user id, in sorted user-id order.
    pub users: Vec<String>,
}

impl DatasetSplit {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_index(&self) -> BTreeMap<&str, usize> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i))
            .collect()
    }

    /// Trajectory ids of one part, ascending.
    pub fn ids(&self, part: Part) -> Vec<usize> {
        self.parts
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p == part)
            .map(|(i, _)| i)
            .collect()
    }

    /// `(traj_id, label)` pairs of one part, ascending by id.
    pub fn labelled(&self, part: Part) -> Vec<(usize, usize)> {
        self.ids(part)
            .into_iter()
            .map(|i| (i, self.labels[i]))
            .collect()
    }
}

/// Per-user cut sizes `(train, valid, test)` for `n` trajectories.
fn cut_sizes(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    if n < 5 {
        let rest = n.saturating_sub(1);
        let valid = rest.div_ceil(2);
        return (n.min(1), valid, rest - valid);
    }
    let total = (ratios.train + ratios.valid + ratios.test) as usize;
    let valid = n * ratios.valid as usize / total;
    let test = n * ratios.test as usize / total;
    (n - valid - test, valid, test)
}

/// Splits every user's trajectories into train/valid/test.
///
/// Users with fewer than 5 trajectories keep one in train and alternate the
/// rest between valid and test.
pub fn split_dataset(
    trajectories: &[Trajectory],
    ratios: SplitRatios,
    policy: SplitPolicy,
    seed: u64,
) -> DatasetSplit {
    let groups = by_user(trajectories);
    let users: Vec<String> = groups.keys().map(|u| u.to_string()).collect();
    let mut parts = vec![Part::Train; trajectories.len()];
    let mut labels = vec![0; trajectories.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for (label, (_, indices)) in groups.into_iter().enumerate() {
        let mut order = indices;
        match policy {
            SplitPolicy::Random => order.shuffle(&mut rng),
            SplitPolicy::Chronological => {
                order.sort_by(|&a, &b| trajectories[a].week_key.cmp(&trajectories[b].week_key))
            }
        }
        let n = order.len();
        let small = n < 5;
        let (train, valid, _) = cut_sizes(n, ratios);
        for (pos, &idx) in order.iter().enumerate() {
            labels[idx] = label;
            parts[idx] = if pos < train {
                Part::Train
            } else if small {
                if (pos - train) % 2 == 0 {
                    Part::Valid
                } else {
                    Part::Test
                }
            } else if pos < train + valid {
                Part::Valid
            } else {
                Part::Test
            };
        }
    }
    DatasetSplit {
        parts,
        labels,
        users,
    }
}
