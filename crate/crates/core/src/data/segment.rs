use std::collections::BTreeMap;

use chrono::{DateTime, Datelike};

use super::{CheckIn, Trajectory};

/// ISO year-week label (`2012-W14`) of a UTC timestamp. Weeks start Monday 00:00 UTC.
pub fn week_key(timestamp: i64) -> String {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
    let week = dt.iso_week();
    format!("{:04}-W{:02}", week.year(), week.week())
}

/// Cuts each user's time-ordered check-ins at ISO week boundaries.
///
/// Trajectory ids are dense and follow `(user_id, week_key)` order.
pub fn segment_trajectories(checkins: &[CheckIn]) -> Vec<Trajectory> {
    let mut buckets: BTreeMap<(&str, String), Vec<&CheckIn>> = BTreeMap::new();
    for c in checkins {
        buckets
            .entry((c.user_id.as_str(), week_key(c.timestamp)))
            .or_default()
            .push(c);
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(traj_id, ((user, week), mut points))| {
            // stable: equal timestamps keep input order
            points.sort_by_key(|c| c.timestamp);
            Trajectory {
                traj_id,
                user_id: user.to_string(),
                week_key: week,
                points: points.into_iter().cloned().collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2012-04-02 is a Monday.
    const MONDAY: i64 = 1_333_324_800;
    const HOUR: i64 = 3600;
    const DAY: i64 = 24 * HOUR;

    fn ci(user: &str, t: i64) -> CheckIn {
        CheckIn {
            user_id: user.into(),
            timestamp: t,
            lat: 0.0,
            lon: 0.0,
            poi_id: "p".into(),
        }
    }

    #[test]
    fn eight_days_apart_split_into_two_weeks() {
        let trajs = segment_trajectories(&[
            ci("u", MONDAY + 9 * HOUR),
            ci("u", MONDAY + 8 * DAY + 9 * HOUR),
        ]);
        assert_eq!(trajs.len(), 2);
        assert!(trajs.iter().all(|t| t.len() == 1));
        assert_eq!(trajs[0].week_key, "2012-W14");
        assert_eq!(trajs[1].week_key, "2012-W15");
    }

    #[test]
    fn same_day_single_trajectory() {
        let tue = MONDAY + DAY;
        let trajs = segment_trajectories(&[
            ci("u", tue + 3 * HOUR),
            ci("u", tue + HOUR),
            ci("u", tue + 2 * HOUR),
        ]);
        assert_eq!(trajs.len(), 1);
        let ts: Vec<i64> = trajs[0].points.iter().map(|c| c.timestamp).collect();
        assert_eq!(ts, vec![tue + HOUR, tue + 2 * HOUR, tue + 3 * HOUR]);
    }

    #[test]
    fn monday_midnight_opens_new_week() {
        assert_eq!(week_key(MONDAY - 1), "2012-W13");
        assert_eq!(week_key(MONDAY), "2012-W14");
    }

    #[test]
    fn ids_follow_user_then_week_order() {
        let trajs =
            segment_trajectories(&[ci("b", MONDAY), ci("a", MONDAY + 7 * DAY), ci("a", MONDAY)]);
        let keys: Vec<(usize, &str, &str)> = trajs
            .iter()
            .map(|t| (t.traj_id, t.user_id.as_str(), t.week_key.as_str()))
            .collect();
        assert_eq!(
            keys,
            vec![
                (0, "a", "2012-W14"),
                (1, "a", "2012-W15"),
                (2, "b", "2012-W14")
            ]
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segmentation_preserves_checkins(raw in prop::collection::vec((0u8..4, 0i64..60 * DAY), 1..80)) {
                let checkins: Vec<CheckIn> = raw.iter().map(|&(u, off)| ci(&format!("u{u}"), MONDAY + off)).collect();
                let trajs = segment_trajectories(&checkins);
                let mut flat: Vec<(String, i64)> = trajs
                    .iter()
                    .flat_map(|t| t.points.iter().map(|c| (c.user_id.clone(), c.timestamp)))
                    .collect();
                let mut orig: Vec<(String, i64)> = checkins.iter().map(|c| (c.user_id.clone(), c.timestamp)).collect();
                flat.sort();
                orig.sort();
                prop_assert_eq!(flat, orig);
                for t in &trajs {
                    prop_assert!(!t.is_empty());
                    prop_assert!(t.points.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
                    prop_assert!(t.points.iter().all(|c| c.user_id == t.user_id && week_key(c.timestamp) == t.week_key));
                }
            }
        }
    }
}
