use std::collections::{BTreeMap, BTreeSet};

use super::CheckIn;
use crate::error::{DataError, EntityClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterConfig {
    pub min_user_checkins: usize,
    pub min_poi_visits: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_user_checkins: 10,
            min_poi_visits: 10,
        }
    }
}

fn sparse_keys<'a>(
    checkins: &'a [CheckIn],
    key: impl Fn(&'a CheckIn) -> &'a str,
    min: usize,
) -> BTreeSet<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in checkins {
        *counts.entry(key(c)).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, n)| n < min)
        .map(|(k, _)| k)
        .collect()
}

/// Drops sparse users, then sparse POIs, and repeats until a full pass
/// removes nothing. Input order is preserved among surviving check-ins.
pub fn filter_sparse(checkins: Vec<CheckIn>, cfg: FilterConfig) -> Result<Vec<CheckIn>, DataError> {
    if cfg.min_user_checkins == 0 || cfg.min_poi_visits == 0 {
        return Err(DataError::InvalidThreshold);
    }
    let mut current = checkins;
    let mut last_removed = EntityClass::User;
    loop {
        let mut changed = false;

        let users: BTreeSet<String> = sparse_keys(&current, |c| &c.user_id, cfg.min_user_checkins)
            .into_iter()
            .map(str::to_owned)
            .collect();
        if !users.is_empty() {
            current.retain(|c| !users.contains(&c.user_id));
            last_removed = EntityClass::User;
            changed = true;
        }

        let pois: BTreeSet<String> = sparse_keys(&current, |c| &c.poi_id, cfg.min_poi_visits)
            .into_iter()
            .map(str::to_owned)
            .collect();
        if !pois.is_empty() {
            current.retain(|c| !pois.contains(&c.poi_id));
            last_removed = EntityClass::Poi;
            changed = true;
        }

        if current.is_empty() {
            return Err(DataError::EmptyDataset { last_removed });
        }
        if !changed {
            return Ok(current);
        }
    }
}
