//! Check-in ingestion and trajectory preparation.
//!
//! The stages run in a fixed order: [`parse_checkins`] → [`filter_sparse`] →
//! [`segment_trajectories`] → [`split_dataset`] → [`balance_training_set`].
//! Every stage is a pure function of its input (and seed, where it draws
//! random numbers).

mod balance;
mod filter;
mod ingest;
mod segment;
mod split;

use std::collections::BTreeMap;
use std::fmt;

pub use balance::{balance_training_set, BalanceConfig, BalanceRow, BalancedTrainSet};
pub use filter::{filter_sparse, FilterConfig};
pub use ingest::{parse_checkins, write_canonical, InputFormat, ParseOutcome};
pub use segment::{segment_trajectories, week_key};
pub use split::{split_dataset, DatasetSplit, SplitPolicy, SplitRatios};

/// One visit: a user at a POI at a point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckIn {
    pub user_id: String,
    /// UTC epoch seconds, strictly positive.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub poi_id: String,
}

impl CheckIn {
    pub fn coordinates_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A user's check-ins within one ISO week, in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub traj_id: usize,
    pub user_id: String,
    pub week_key: String,
    pub points: Vec<CheckIn>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Which part of the split a trajectory belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Valid => "valid",
            Part::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Part::Train),
            "valid" => Some(Part::Valid),
            "test" => Some(Part::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Groups trajectory indices by user id, in user-id order.
pub(crate) fn by_user(trajectories: &[Trajectory]) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, t) in trajectories.iter().enumerate() {
        map.entry(t.user_id.as_str()).or_default().push(idx);
    }
    map
}
