//! Seeded synthetic check-in corpora with known user-POI ownership.
//!
//! POI `p` belongs to user `p mod n_users`, so every user owns at least one
//! POI. A user spends `c / (1 + c)` of their visits on owned POIs, where `c`
//! is the preference concentration, and spreads the rest uniformly over
//! everyone else's. Users are ranked by index; user `u` is active in roughly
//! `weeks · r_u^(-α)` weeks with `r_u` rising linearly from 1 to 4, so
//! `α = 0` gives every user the same activity.

use std::io::{self, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::CheckIn;

/// 2012-04-02 00:00 UTC, a Monday.
pub const EPOCH_MONDAY: i64 = 1_333_324_800;
const WEEK_SECS: i64 = 7 * 86_400;

/// Grid origin and spacing. 0.005° of latitude is about 555 m, and the
/// longitude step is widened by `1/cos(lat)` to match; jitter stays within
/// ±0.0005°, so POIs remain at least ~440 m apart.
const ORIGIN: (f64, f64) = (40.70, -74.02);
const SPACING_DEG: f64 = 0.005;
const JITTER_DEG: f64 = 0.0005;

/// Minimum number of active weeks per user.
pub const MIN_ACTIVE_WEEKS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_pois: usize,
    pub weeks: usize,
    /// Inclusive range of check-ins per active week.
    pub checkins_per_week: (usize, usize),
    /// Odds of an owned POI over a foreign one; `f64::INFINITY` makes POI sets disjoint.
    pub preference_concentration: f64,
    pub imbalance_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 20,
            n_pois: 60,
            weeks: 12,
            checkins_per_week: (8, 16),
            preference_concentration: 20.0,
            imbalance_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_users < 4 {
            return Err("n_users must be at least 4".into());
        }
        if self.n_pois < self.n_users {
            return Err("n_pois must be at least n_users".into());
        }
        if self.weeks < MIN_ACTIVE_WEEKS {
            return Err(format!("weeks must be at least {MIN_ACTIVE_WEEKS}"));
        }
        let (lo, hi) = self.checkins_per_week;
        if lo == 0 || lo > hi {
            return Err("checkins_per_week must be a non-empty positive range".into());
        }
        if self.preference_concentration.is_nan() || self.preference_concentration < 0.0 {
            return Err("preference_concentration must be >= 0".into());
        }
        if !self.imbalance_exponent.is_finite() || self.imbalance_exponent < 0.0 {
            return Err("imbalance_exponent must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn user_id(u: usize) -> String {
        format!("u{u:03}")
    }

    pub fn poi_id(p: usize) -> String {
        format!("p{p:04}")
    }

    pub fn owner_of(&self, poi: usize) -> usize {
        poi % self.n_users
    }

    pub fn owned_pois(&self, user: usize) -> Vec<usize> {
        (user..self.n_pois).step_by(self.n_users).collect()
    }

    /// Number of weeks in which `user` checks in.
    pub fn active_weeks(&self, user: usize) -> usize {
        let rank = 1.0 + 3.0 * user as f64 / (self.n_users - 1) as f64;
        let share = rank.powf(-self.imbalance_exponent);
        ((self.weeks as f64 * share).round() as usize).clamp(MIN_ACTIVE_WEEKS, self.weeks)
    }
}

/// A generated corpus and its ownership truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub checkins: Vec<CheckIn>,
    /// `(user_id, owned POI ids)` in user order.
    pub truth: Vec<(String, Vec<String>)>,
}

impl SynthCorpus {
    /// One `user_id<TAB>poi,poi,...` line per user.
    pub fn write_truth<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (user, pois) in &self.truth {
            writeln!(out, "{user}\t{}", pois.join(","))?;
        }
        Ok(())
    }
}

fn poi_coordinates(n_pois: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let side = (n_pois as f64).sqrt().ceil() as usize;
    let lon_step = SPACING_DEG / ORIGIN.0.to_radians().cos();
    (0..n_pois)
        .map(|p| {
            let (row, col) = (p / side, p % side);
            let lat = ORIGIN.0 + row as f64 * SPACING_DEG + rng.gen_range(-JITTER_DEG..=JITTER_DEG);
            let lon = ORIGIN.1 + col as f64 * lon_step + rng.gen_range(-JITTER_DEG..=JITTER_DEG);
            // round to the canonical 6 decimals so parsing returns the same values
            ((lat * 1e6).round() / 1e6, (lon * 1e6).round() / 1e6)
        })
        .collect()
}

/// Cumulative visit distribution of one user over all POIs.
fn preference_cdf(cfg: &SynthConfig, user: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let c = cfg.preference_concentration;
    let owned_mass = if c.is_infinite() { 1.0 } else { c / (1.0 + c) };
    let owned = cfg.owned_pois(user);
    let foreign = cfg.n_pois - owned.len();
    let jitter: Vec<f64> = owned.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
    let jitter_sum: f64 = jitter.iter().sum();
    let mut weights = vec![0.0; cfg.n_pois];
    for (&p, &j) in owned.iter().zip(&jitter) {
        weights[p] = owned_mass * j / jitter_sum;
    }
    if foreign > 0 {
        for (p, w) in weights.iter_mut().enumerate() {
            if cfg.owner_of(p) != user {
                *w = (1.0 - owned_mass) / foreign as f64;
            }
        }
    }
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen();
    cdf.iter().position(|&c| x < c).unwrap_or(cdf.len() - 1)
}

/// Generates a corpus fully determined by `cfg.seed`, ordered by user then time.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords = poi_coordinates(cfg.n_pois, &mut rng);
    let mut checkins = Vec::new();
    let mut truth = Vec::new();
    for user in 0..cfg.n_users {
        let user_id = SynthConfig::user_id(user);
        let cdf = preference_cdf(cfg, user, &mut rng);
        let mut weeks = sample(&mut rng, cfg.weeks, cfg.active_weeks(user)).into_vec();
        weeks.sort_unstable();
        for week in weeks {
            let start = EPOCH_MONDAY + week as i64 * WEEK_SECS;
            let n = rng.gen_range(cfg.checkins_per_week.0..=cfg.checkins_per_week.1);
            let mut stamps: Vec<i64> = (0..n)
                .map(|_| start + rng.gen_range(0..WEEK_SECS))
                .collect();
            stamps.sort_unstable();
            for ts in stamps {
                let p = draw(&cdf, &mut rng);
                checkins.push(CheckIn {
                    user_id: user_id.clone(),
                    timestamp: ts,
                    lat: coords[p].0,
                    lon: coords[p].1,
                    poi_id: SynthConfig::poi_id(p),
                });
            }
        }
        truth.push((
            user_id,
            cfg.owned_pois(user)
                .into_iter()
                .map(SynthConfig::poi_id)
                .collect(),
        ));
    }
    Ok(SynthCorpus { checkins, truth })
}
