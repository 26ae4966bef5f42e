//! Seeded synthetic check-in corpora with planted events.
//!
//! Users get a home on a flat square grid, a category taste, a personal peak
//! hour, and friends chosen by proximity plus triadic closure. Background
//! check-ins follow those traits. Each planted event has one dominant factor
//! and recruits attendees by sampling without replacement with weights:
//!
//! | factor     | attendee weight                                              |
//! |------------|--------------------------------------------------------------|
//! | distance   | `exp(-d_home / distance_scale_km)`                           |
//! | category   | `pref(c)^2` for the event venue's category                   |
//! | temporal   | `exp(-h^2 / 2)`, `h` = hours between personal and event peak |
//! | social     | one host, then `0.02 + sum over attending friends (1 + their attending-friend count)`, one at a time |
//! | popularity | uniform, with heavy-tailed event sizes                        |
//! | niche      | `pref(r)^2` for a rare category `r`                           |
//!
//! Each rare category has a socially connected cluster of enthusiasts whose
//! remaining taste favours the least popular common categories.
//!
//! Attendance is then topped up until the venue's event-day count is at
//! least three times its mean over active days.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Exp1, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RawCheckIn, Venue};
use crate::error::{Error, Result};
use crate::eventmine::event_id;
use crate::rng::{substream, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Distance,
    Category,
    Temporal,
    Social,
    Popularity,
    Niche,
}

impl Factor {
    pub const ALL: [Factor; 6] = [
        Factor::Distance,
        Factor::Category,
        Factor::Temporal,
        Factor::Social,
        Factor::Popularity,
        Factor::Niche,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorMix {
    pub distance: f64,
    pub category: f64,
    pub temporal: f64,
    pub social: f64,
    pub popularity: f64,
    pub niche: f64,
}

impl Default for FactorMix {
    fn default() -> Self {
        FactorMix {
            distance: 0.2,
            category: 0.2,
            temporal: 0.1,
            social: 0.3,
            popularity: 0.2,
            niche: 0.0,
        }
    }
}

impl FactorMix {
    pub fn only(f: Factor) -> Self {
        let mut m = FactorMix {
            distance: 0.0,
            category: 0.0,
            temporal: 0.0,
            social: 0.0,
            popularity: 0.0,
            niche: 0.0,
        };
        *m.weight_mut(f) = 1.0;
        m
    }

    pub fn weight(&self, f: Factor) -> f64 {
        match f {
            Factor::Distance => self.distance,
            Factor::Category => self.category,
            Factor::Temporal => self.temporal,
            Factor::Social => self.social,
            Factor::Popularity => self.popularity,
            Factor::Niche => self.niche,
        }
    }

    fn weight_mut(&mut self, f: Factor) -> &mut f64 {
        match f {
            Factor::Distance => &mut self.distance,
            Factor::Category => &mut self.category,
            Factor::Temporal => &mut self.temporal,
            Factor::Social => &mut self.social,
            Factor::Popularity => &mut self.popularity,
            Factor::Niche => &mut self.niche,
        }
    }

    /// Splits `n` events across factors by largest remainder; remainder ties
    /// go to the earlier factor.
    pub fn allocate(&self, n: usize) -> Vec<(Factor, usize)> {
        let total: f64 = Factor::ALL.iter().map(|&f| self.weight(f)).sum();
        let quotas: Vec<f64> = Factor::ALL.iter().map(|&f| self.weight(f) / total * n as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
        let missing = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        Factor::ALL.into_iter().zip(counts).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_venues: usize,
    pub n_categories: usize,
    pub n_days: usize,
    pub n_events: usize,
    pub grid_extent_km: f64,
    pub factor_mix: FactorMix,
    /// Mean background check-ins per user per day.
    pub background_rate: f64,
    /// Mean number of friends.
    pub friendship_degree: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Planted events fall in the last `event_window` fraction of the days.
    pub event_window: f64,
    pub attendees_min: usize,
    pub attendees_max: usize,
    /// Upper bound on popularity-driven event sizes.
    pub popularity_attendees_max: usize,
    /// Number of globally rare categories, each with its own enthusiasts.
    pub n_rare_categories: usize,
    /// Share of users who are enthusiasts of each rare category.
    pub enthusiast_fraction: f64,
    pub distance_scale_km: f64,
    /// Share of background check-ins made at the home venue.
    pub home_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_venues: 300,
            n_categories: 40,
            n_days: 90,
            n_events: 20,
            grid_extent_km: 10.0,
            factor_mix: FactorMix::default(),
            background_rate: 0.6,
            friendship_degree: 8.0,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2011, 5, 2).expect("valid date"),
            event_window: 0.5,
            attendees_min: 35,
            attendees_max: 60,
            popularity_attendees_max: 500,
            n_rare_categories: 10,
            enthusiast_fraction: 0.03,
            distance_scale_km: 0.8,
            home_share: 0.35,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_owned()));
        if [self.n_users, self.n_venues, self.n_categories, self.n_days, self.n_events].contains(&0) {
            return bad("all counts must be >= 1");
        }
        let weights: Vec<f64> = Factor::ALL.iter().map(|&f| self.factor_mix.weight(f)).collect();
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("factor_mix weights must be >= 0 and sum to 1");
        }
        if !(self.grid_extent_km > 0.0) || !(self.distance_scale_km > 0.0) {
            return bad("grid_extent_km and distance_scale_km must be > 0");
        }
        if !(self.background_rate > 0.0) || !(self.friendship_degree >= 0.0) {
            return bad("background_rate must be > 0 and friendship_degree >= 0");
        }
        if !(self.event_window > 0.0 && self.event_window <= 1.0) {
            return bad("event_window must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.home_share) || !(0.0..=1.0).contains(&self.enthusiast_fraction) {
            return bad("home_share and enthusiast_fraction must be in [0, 1]");
        }
        if self.attendees_min < 1 || self.attendees_min > self.attendees_max || self.attendees_max > self.popularity_attendees_max {
            return bad("need 1 <= attendees_min <= attendees_max <= popularity_attendees_max");
        }
        if self.n_rare_categories >= self.n_categories {
            return bad("n_rare_categories must be < n_categories");
        }
        if self.n_events > self.n_days * self.n_venues {
            return Err(Error::Infeasible(format!(
                "{} events do not fit in {} days x {} venues",
                self.n_events, self.n_days, self.n_venues
            )));
        }
        if self.n_venues < self.n_categories {
            return Err(Error::Infeasible("every category needs at least one venue".into()));
        }
        if self.attendees_max > self.n_users {
            return Err(Error::Infeasible("attendees_max exceeds n_users".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub event_id: String,
    pub venue_id: String,
    pub day: NaiveDate,
    pub peak_hour: u8,
    pub factor: Factor,
    pub category: String,
    pub attendees: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub rare_categories: Vec<String>,
    pub events: Vec<PlantedEvent>,
}

impl GroundTruth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub ground_truth: GroundTruth,
}

impl SynthOutput {
    /// Writes `checkins.csv`, `venues.csv`, `social.csv` and `ground_truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus
            .write_files(&dir.join("checkins.csv"), &dir.join("venues.csv"), &dir.join("social.csv"))?;
        self.ground_truth.write_json(&dir.join("ground_truth.json"))
    }
}

const KM_PER_DEG_LAT: f64 = 111.194_926_644_558_73;
const ORIGIN: (f64, f64) = (51.45, -0.2);

/// Grid kilometres to coordinates rounded to 1e-6 degrees.
fn to_lat_lon(x_km: f64, y_km: f64) -> (f64, f64) {
    let round = |v: f64| (v * 1e6).round() / 1e6;
    let lat = ORIGIN.0 + y_km / KM_PER_DEG_LAT;
    let lon = ORIGIN.1 + x_km / (KM_PER_DEG_LAT * ORIGIN.0.to_radians().cos());
    (round(lat), round(lon))
}

fn grid_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn circular_hours(a: u8, b: u8) -> u8 {
    let d = a.abs_diff(b);
    d.min(24 - d)
}

struct SynthVenue {
    pos: (f64, f64),
    category: usize,
    popularity: f64,
}

struct SynthUser {
    home: (f64, f64),
    home_venue: usize,
    peak_hour: u8,
    activity: f64,
    /// Probability of each category for non-home check-ins.
    pref: Vec<f64>,
}

struct World {
    venues: Vec<SynthVenue>,
    venues_by_category: Vec<Vec<usize>>,
    users: Vec<SynthUser>,
    friends: Vec<Vec<usize>>,
    rare: Vec<usize>,
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

fn build_world(cfg: &SynthConfig) -> World {
    let n_cat = cfg.n_categories;
    let ext = cfg.grid_extent_km;
    // category k has weight 1 / (k + 1); the last n_rare are the rare ones
    let mut cat_weight: Vec<f64> = (0..n_cat).map(|k| 1.0 / (k + 1) as f64).collect();
    normalize(&mut cat_weight);
    let rare: Vec<usize> = (n_cat - cfg.n_rare_categories..n_cat).collect();

    let mut rng = substream(cfg.seed, "synth-venues", 0);
    let cat_dist = WeightedIndex::new(&cat_weight).expect("positive weights");
    let venues: Vec<SynthVenue> = (0..cfg.n_venues)
        .map(|i| {
            // the first venues cover every category twice when room allows
            let category = if i < 2 * n_cat && cfg.n_venues >= 2 * n_cat || i < n_cat {
                i % n_cat
            } else {
                cat_dist.sample(&mut rng)
            };
            let pos = (rng.random_range(0.0..ext), rng.random_range(0.0..ext));
            // Pareto(1.5) popularity, capped
            let u: f64 = rng.random_range(0.0..1.0);
            let popularity = (1.0 - u).powf(-1.0 / 1.5).min(20.0);
            SynthVenue { pos, category, popularity }
        })
        .collect();
    let mut venues_by_category = vec![Vec::new(); n_cat];
    for (i, v) in venues.iter().enumerate() {
        venues_by_category[v.category].push(i);
    }

    let mut rng = substream(cfg.seed, "synth-users", 0);
    let common: Vec<usize> = (0..n_cat).filter(|c| !rare.contains(c)).collect();
    let mut users: Vec<SynthUser> = (0..cfg.n_users)
        .map(|_| {
            let home = (rng.random_range(0.0..ext), rng.random_range(0.0..ext));
            let home_venue = (0..venues.len())
                .min_by(|&a, &b| grid_dist(home, venues[a].pos).total_cmp(&grid_dist(home, venues[b].pos)))
                .expect("at least one venue");
            let peak_hour = match rng.random_range(0..3) {
                0 => rng.random_range(7..=10),
                1 => rng.random_range(11..=14),
                _ => rng.random_range(18..=22),
            };
            let n_fav = rng.random_range(3..=6).min(common.len());
            let favs = sample_weighted(&mut rng, common.len(), |i| cat_weight[common[i]], n_fav).expect("positive weights");
            let mut taste = vec![0.0; n_cat];
            for i in favs.iter() {
                let g: f64 = rng.sample(Exp1);
                taste[common[i]] = g;
            }
            normalize(&mut taste);
            let pref: Vec<f64> = taste.iter().zip(&cat_weight).map(|(t, w)| 0.85 * t + 0.15 * w).collect();
            SynthUser {
                home,
                home_venue,
                peak_hour,
                activity: rng.random_range(0.5..1.5),
                pref,
            }
        })
        .collect();

    let friends = build_social_graph(cfg, &users);

    // each rare category gets a socially connected cluster of enthusiasts
    let mut rng = substream(cfg.seed, "synth-enthusiasts", 0);
    let cluster = ((cfg.enthusiast_fraction * cfg.n_users as f64).round() as usize).max(1);
    let mut taken = vec![false; cfg.n_users];
    for &r in &rare {
        let free: Vec<usize> = (0..cfg.n_users).filter(|&u| !taken[u]).collect();
        if free.is_empty() {
            break;
        }
        let seed_user = free[rng.random_range(0..free.len())];
        let mut members = Vec::new();
        let mut queue = VecDeque::from([seed_user]);
        let mut seen = BTreeSet::from([seed_user]);
        while members.len() < cluster {
            let Some(u) = queue.pop_front() else {
                // component exhausted: restart from another free user
                match (0..cfg.n_users).find(|&u| !taken[u] && !seen.contains(&u)) {
                    Some(u) => {
                        seen.insert(u);
                        queue.push_back(u);
                        continue;
                    }
                    None => break,
                }
            };
            if !taken[u] {
                taken[u] = true;
                members.push(u);
            }
            for &f in &friends[u] {
                if seen.insert(f) {
                    queue.push_back(f);
                }
            }
        }
        // enthusiasts also lean towards the least popular common categories
        for u in members {
            let n_fav = rng.random_range(3..=6).min(common.len());
            let favs = sample_weighted(&mut rng, common.len(), |i| 1.0 / cat_weight[common[i]], n_fav).expect("positive weights");
            let mut taste = vec![0.0; n_cat];
            for i in favs.iter() {
                let g: f64 = rng.sample(Exp1);
                taste[common[i]] = g;
            }
            normalize(&mut taste);
            let p = &mut users[u].pref;
            for (x, t) in p.iter_mut().zip(&taste) {
                *x = 0.5 * t;
            }
            p[r] += 0.5;
        }
    }

    World {
        venues,
        venues_by_category,
        users,
        friends,
        rare,
    }
}

/// Proximity-weighted random edges plus triadic closure.
fn build_social_graph(cfg: &SynthConfig, users: &[SynthUser]) -> Vec<Vec<usize>> {
    let n = users.len();
    let mut rng = substream(cfg.seed, "synth-social", 0);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let geo_half = cfg.friendship_degree * 0.7 / 2.0;
    let add = |edges: &mut BTreeSet<(usize, usize)>, a: usize, b: usize| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    if n > 1 && geo_half > 0.0 {
        let per_user = Poisson::new(geo_half).expect("positive mean");
        for u in 0..n {
            let k = (per_user.sample(&mut rng) as usize).min(n - 1);
            if k == 0 {
                continue;
            }
            let picked = sample_weighted(
                &mut rng,
                n,
                |v| {
                    if v == u {
                        0.0
                    } else {
                        (-grid_dist(users[u].home, users[v].home) / 1.0).exp() + 1e-9
                    }
                },
                k,
            )
            .expect("enough candidates");
            let mut picked = picked.into_vec();
            picked.sort_unstable();
            for v in picked {
                add(&mut edges, u, v);
            }
        }
    }
    let adjacency = |edges: &BTreeSet<(usize, usize)>| {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    };
    let adj = adjacency(&edges);
    let closures = (cfg.friendship_degree * 0.3 / 2.0).round() as usize;
    for fs in adj.iter() {
        if fs.len() < 2 {
            continue;
        }
        for _ in 0..closures {
            let a = fs[rng.random_range(0..fs.len())];
            let b = fs[rng.random_range(0..fs.len())];
            add(&mut edges, a, b);
        }
    }
    adjacency(&edges)
}

fn checkin_hour(rng: &mut StreamRng, user: &SynthUser, jitter: &Normal<f64>) -> u8 {
    if rng.random_bool(0.7) {
        let h = f64::from(user.peak_hour) + jitter.sample(rng);
        h.round().rem_euclid(24.0) as u8
    } else {
        rng.random_range(8..=23)
    }
}

fn timestamp(start: NaiveDate, day: usize, hour: u8, rng: &mut StreamRng) -> i64 {
    let d = start + Duration::days(day as i64);
    let midnight = d.and_hms_opt(0, 0, 0).expect("valid time").and_utc().timestamp();
    midnight + i64::from(hour) * 3600 + rng.random_range(0..3600)
}

/// Background check-ins as `(user, venue, day, hour, timestamp)`.
fn background(cfg: &SynthConfig, world: &World) -> Vec<(usize, usize, usize, i64)> {
    let jitter = Normal::new(0.0, 1.5).expect("valid sd");
    let mut out = Vec::new();
    for (u, user) in world.users.iter().enumerate() {
        let mut rng = substream(cfg.seed, "synth-background", u as u64);
        let per_day = Poisson::new(cfg.background_rate * user.activity).expect("positive mean");
        let cat_dist = WeightedIndex::new(&user.pref).expect("positive preferences");
        let venue_dists: Vec<Option<WeightedIndex<f64>>> = world
            .venues_by_category
            .iter()
            .map(|vs| {
                let w: Vec<f64> = vs
                    .iter()
                    .map(|&v| world.venues[v].popularity * (-grid_dist(user.home, world.venues[v].pos) / 3.0).exp())
                    .collect();
                WeightedIndex::new(&w).ok()
            })
            .collect();
        for day in 0..cfg.n_days {
            let k = per_day.sample(&mut rng) as usize;
            for _ in 0..k {
                let venue = if rng.random_bool(cfg.home_share) {
                    user.home_venue
                } else {
                    let c = cat_dist.sample(&mut rng);
                    match &venue_dists[c] {
                        Some(d) => world.venues_by_category[c][d.sample(&mut rng)],
                        None => user.home_venue,
                    }
                };
                let hour = checkin_hour(&mut rng, user, &jitter);
                out.push((u, venue, day, timestamp(cfg.start_date, day, hour, &mut rng)));
            }
        }
    }
    out
}

struct Plan {
    factor: Factor,
    venue: usize,
    day: usize,
    peak: u8,
    attendees: Vec<usize>,
}

fn sample_attendees(rng: &mut StreamRng, n_users: usize, k: usize, weight: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = sample_weighted(rng, n_users, |u| weight(u).max(1e-12), k.min(n_users))
        .expect("positive weights")
        .into_vec();
    v.sort_unstable();
    v
}

/// Grows an attendee set from `host`, adding one user at a time; users whose
/// attending friends are themselves well connected are favoured.
fn social_cascade(rng: &mut StreamRng, friends: &[Vec<usize>], host: usize, k: usize) -> Vec<usize> {
    let n = friends.len();
    let mut attending = vec![false; n];
    attending[host] = true;
    let mut members = vec![host];
    while members.len() < k.min(n) {
        let deg_in = |f: usize| friends[f].iter().filter(|&&g| attending[g]).count() as f64;
        let weights: Vec<f64> = (0..n)
            .map(|u| {
                if attending[u] {
                    0.0
                } else {
                    0.02 + friends[u].iter().filter(|&&f| attending[f]).map(|&f| 1.0 + deg_in(f)).sum::<f64>()
                }
            })
            .collect();
        let u = WeightedIndex::new(&weights).expect("someone left").sample(rng);
        attending[u] = true;
        members.push(u);
    }
    members.sort_unstable();
    members
}

fn plan_events(cfg: &SynthConfig, world: &World) -> Vec<Plan> {
    let mut rng = substream(cfg.seed, "synth-events", 0);
    let n_users = world.users.len();
    let first_day = ((cfg.n_days as f64) * (1.0 - cfg.event_window)).floor() as usize;
    let window: Vec<usize> = (first_day.min(cfg.n_days - 1)..cfg.n_days).collect();

    let mut factors: Vec<Factor> = Vec::new();
    for (f, k) in cfg.factor_mix.allocate(cfg.n_events) {
        factors.extend(std::iter::repeat_n(f, k));
    }
    // distinct days while they last, then distinct (venue, day) pairs
    let mut days: Vec<usize> = window.clone();
    days.shuffle(&mut rng);
    while days.len() < factors.len() {
        let more: Vec<usize> = (0..cfg.n_days).collect();
        days.extend(more);
    }
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();

    let rare = &world.rare;
    let mid: Vec<usize> = (3.min(cfg.n_categories)..cfg.n_categories)
        .filter(|c| !rare.contains(c) && !world.venues_by_category[*c].is_empty())
        .collect();
    let mid = if mid.is_empty() {
        (0..cfg.n_categories).filter(|&c| !world.venues_by_category[c].is_empty()).collect()
    } else {
        mid
    };
    let mut category_cycle = mid.clone();
    category_cycle.shuffle(&mut rng);
    let mut rare_cycle: Vec<usize> = rare.iter().copied().filter(|&c| !world.venues_by_category[c].is_empty()).collect();
    rare_cycle.shuffle(&mut rng);
    let (mut next_cat, mut next_rare) = (0usize, 0usize);

    let mut plans = Vec::new();
    for (i, &factor) in factors.iter().enumerate() {
        let mut erng = substream(cfg.seed, "synth-event", i as u64);
        let day = days[i];
        let size = erng.random_range(cfg.attendees_min..=cfg.attendees_max);
        let pick_venue = |rng: &mut StreamRng, pool: &[usize]| -> usize {
            let free: Vec<usize> = pool.iter().copied().filter(|&v| !used.contains(&(v, day))).collect();
            let pool = if free.is_empty() { pool.to_vec() } else { free };
            pool[rng.random_range(0..pool.len())]
        };
        let all_venues: Vec<usize> = (0..world.venues.len()).collect();
        let mut peak: u8 = erng.random_range(10..=22);
        let (venue, attendees) = match factor {
            Factor::Distance => {
                let v = pick_venue(&mut erng, &all_venues);
                let pos = world.venues[v].pos;
                let a = sample_attendees(&mut erng, n_users, size, |u| {
                    (-grid_dist(world.users[u].home, pos) / cfg.distance_scale_km).exp()
                });
                (v, a)
            }
            Factor::Category | Factor::Niche => {
                let c = if factor == Factor::Category || rare_cycle.is_empty() {
                    let c = category_cycle[next_cat % category_cycle.len()];
                    next_cat += 1;
                    c
                } else {
                    let c = rare_cycle[next_rare % rare_cycle.len()];
                    next_rare += 1;
                    c
                };
                let v = pick_venue(&mut erng, &world.venues_by_category[c]);
                let a = sample_attendees(&mut erng, n_users, size, |u| world.users[u].pref[c].powi(2));
                (v, a)
            }
            Factor::Temporal => {
                peak = [8u8, 9, 12, 13, 19, 20, 21][erng.random_range(0..7)];
                let v = pick_venue(&mut erng, &all_venues);
                let a = sample_attendees(&mut erng, n_users, size, |u| {
                    let h = f64::from(circular_hours(world.users[u].peak_hour, peak));
                    (-h * h / 2.0).exp()
                });
                (v, a)
            }
            Factor::Social => {
                let hosts: Vec<usize> = (0..n_users).filter(|&u| world.friends[u].len() >= 3).collect();
                let host = if hosts.is_empty() {
                    erng.random_range(0..n_users)
                } else {
                    hosts[erng.random_range(0..hosts.len())]
                };
                let v = pick_venue(&mut erng, &all_venues);
                (v, social_cascade(&mut erng, &world.friends, host, size))
            }
            Factor::Popularity => {
                let u: f64 = erng.random_range(0.0..1.0);
                let big = (cfg.attendees_min as f64 * (1.0 - u).powf(-1.0 / 0.8)).round() as usize;
                let big = big.clamp(cfg.attendees_min, cfg.popularity_attendees_max.min(n_users));
                let v = pick_venue(&mut erng, &all_venues);
                let mut a = rand::seq::index::sample(&mut erng, n_users, big).into_vec();
                a.sort_unstable();
                (v, a)
            }
        };
        used.insert((venue, day));
        plans.push(Plan {
            factor,
            venue,
            day,
            peak,
            attendees,
        });
    }
    plans
}

/// Adds users (nearest homes first among non-attendees) until the event-day
/// count is at least three times the venue's active-day mean.
fn top_up(plan: &mut Plan, world: &World, counts: &BTreeMap<(usize, usize), u32>) {
    let venue_days: Vec<u32> = counts.range((plan.venue, 0)..(plan.venue + 1, 0)).map(|(_, &n)| n).collect();
    let total: u32 = venue_days.iter().sum();
    let day_count = counts.get(&(plan.venue, plan.day)).copied().unwrap_or(0);
    let active = venue_days.len() as f64 + if day_count == 0 { 1.0 } else { 0.0 };
    let enough = |n: usize| {
        let observed = f64::from(day_count) + n as f64;
        let mean = (f64::from(total) + n as f64) / active;
        observed >= 3.0 * mean
    };
    if enough(plan.attendees.len()) {
        return;
    }
    let pos = world.venues[plan.venue].pos;
    let mut others: Vec<usize> = (0..world.users.len()).filter(|u| plan.attendees.binary_search(u).is_err()).collect();
    others.sort_by(|&a, &b| grid_dist(world.users[a].home, pos).total_cmp(&grid_dist(world.users[b].home, pos)).then(a.cmp(&b)));
    for u in others {
        if enough(plan.attendees.len()) {
            break;
        }
        let at = plan.attendees.binary_search(&u).unwrap_err();
        plan.attendees.insert(at, u);
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let world = build_world(cfg);
    let bg = background(cfg, &world);
    let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for &(_, v, d, _) in &bg {
        *counts.entry((v, d)).or_insert(0) += 1;
    }
    let mut plans = plan_events(cfg, &world);
    for p in &mut plans {
        top_up(p, &world, &counts);
        *counts.entry((p.venue, p.day)).or_insert(0) += p.attendees.len() as u32;
    }

    let uw = cfg.n_users.saturating_sub(1).to_string().len().max(4);
    let vw = cfg.n_venues.saturating_sub(1).to_string().len().max(3);
    let user_id = |u: usize| format!("u{u:0uw$}");
    let venue_id = |v: usize| format!("v{v:0vw$}");
    let cw = cfg.n_categories.saturating_sub(1).to_string().len().max(2);
    let category_name = |c: usize| format!("cat-{c:0cw$}");

    let venues: Vec<Venue> = world
        .venues
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (lat, lon) = to_lat_lon(v.pos.0, v.pos.1);
            Venue {
                id: venue_id(i),
                lat,
                lon,
                category: category_name(v.category),
            }
        })
        .collect();

    let mut raw: Vec<RawCheckIn> = bg
        .iter()
        .map(|&(u, v, _, ts)| RawCheckIn {
            user_id: user_id(u),
            venue_id: venue_id(v),
            timestamp: ts,
        })
        .collect();
    for (i, p) in plans.iter().enumerate() {
        let mut rng = substream(cfg.seed, "synth-attendance", i as u64);
        for &u in &p.attendees {
            let hour = match rng.random_range(0..10) {
                0 | 1 => (p.peak + 23) % 24,
                2 | 3 => (p.peak + 1) % 24,
                _ => p.peak,
            };
            raw.push(RawCheckIn {
                user_id: user_id(u),
                venue_id: venue_id(p.venue),
                timestamp: timestamp(cfg.start_date, p.day, hour, &mut rng),
            });
        }
    }
    let edges: Vec<(String, String)> = world
        .friends
        .iter()
        .enumerate()
        .flat_map(|(a, fs)| fs.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
        .map(|(a, b)| (user_id(a), user_id(b)))
        .collect();
    let corpus = Corpus::from_parts(venues, raw, edges, 0)?;

    let events = plans
        .iter()
        .map(|p| {
            let vid = venue_id(p.venue);
            let day = cfg.start_date + Duration::days(p.day as i64);
            let anchor = corpus.venue_idx(&vid).expect("generated venue");
            PlantedEvent {
                event_id: event_id(&corpus, anchor, day),
                venue_id: vid,
                day,
                peak_hour: p.peak,
                factor: p.factor,
                category: category_name(world.venues[p.venue].category),
                attendees: p.attendees.iter().map(|&u| user_id(u)).collect(),
            }
        })
        .collect();
    Ok(SynthOutput {
        corpus,
        ground_truth: GroundTruth {
            config: cfg.clone(),
            rare_categories: world.rare.iter().map(|&c| category_name(c)).collect(),
            events,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventmine::{active_day_averages, venue_day_counts};
    use crate::geo::haversine_m;

    fn small(mix: FactorMix, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 400,
            n_venues: 80,
            n_categories: 20,
            n_days: 40,
            n_events: 8,
            n_rare_categories: 4,
            enthusiast_fraction: 0.05,
            attendees_min: 20,
            attendees_max: 30,
            popularity_attendees_max: 120,
            factor_mix: mix,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn allocation_by_largest_remainder() {
        let a = FactorMix::default().allocate(20);
        let counts: Vec<usize> = a.iter().map(|&(_, k)| k).collect();
        assert_eq!(counts, vec![4, 4, 2, 6, 4, 0]);
        let odd = FactorMix { distance: 0.5, category: 0.5, temporal: 0.0, social: 0.0, popularity: 0.0, niche: 0.0 };
        assert_eq!(odd.allocate(3)[0].1 + odd.allocate(3)[1].1, 3);
        assert_eq!(odd.allocate(3)[0].1, 2);
    }

    #[test]
    fn grid_mapping_preserves_distances() {
        let a = to_lat_lon(1.0, 1.0);
        let b = to_lat_lon(4.0, 5.0);
        let d = haversine_m(a, b);
        assert!((d - 5000.0).abs() < 5.0, "{d}");
    }

    #[test]
    fn infeasible_and_invalid_configs() {
        let cfg = SynthConfig { n_days: 2, n_venues: 3, n_categories: 2, n_rare_categories: 1, n_events: 7, ..small(FactorMix::default(), 0) };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
        let cfg = SynthConfig { factor_mix: FactorMix { distance: 0.5, ..FactorMix::only(Factor::Social) }, ..small(FactorMix::default(), 0) };
        assert!(matches!(generate(&cfg), Err(Error::InvalidParameter(_))));
        assert!(generate(&SynthConfig { n_users: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn planted_events_clear_three_times_baseline() {
        let out = generate(&small(FactorMix::default(), 3)).unwrap();
        let c = &out.corpus;
        let counts = venue_day_counts(c);
        let avg = active_day_averages(c.venues().len(), &counts);
        assert_eq!(out.ground_truth.events.len(), 8);
        for e in &out.ground_truth.events {
            let v = c.venue_idx(&e.venue_id).unwrap();
            let observed = f64::from(counts[&(v, e.day)]);
            assert!(observed >= 3.0 * avg[v.index()], "{}: {observed} vs {}", e.event_id, avg[v.index()]);
        }
        let mut days: Vec<_> = out.ground_truth.events.iter().map(|e| e.day).collect();
        days.sort_unstable();
        days.dedup();
        assert_eq!(days.len(), 8);
    }

    fn density(c: &Corpus, users: &[usize]) -> f64 {
        let ids: Vec<_> = users.iter().map(|&u| crate::corpus::UserIdx(u as u32)).collect();
        let mut edges = 0;
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if c.are_friends(a, b) {
                    edges += 1;
                }
            }
        }
        let n = ids.len() as f64;
        edges as f64 / (n * (n - 1.0) / 2.0)
    }

    #[test]
    fn social_events_are_dense() {
        let out = generate(&small(FactorMix::only(Factor::Social), 4)).unwrap();
        let c = &out.corpus;
        let n = c.n_users() as f64;
        let total_edges: usize = c.users().map(|u| c.friends(u).len()).sum::<usize>() / 2;
        let background = total_edges as f64 / (n * (n - 1.0) / 2.0);
        let mean: f64 = out
            .ground_truth
            .events
            .iter()
            .map(|e| {
                let users: Vec<usize> = e.attendees.iter().map(|a| c.user_idx(a).unwrap().index()).collect();
                density(c, &users)
            })
            .sum::<f64>()
            / out.ground_truth.events.len() as f64;
        assert!(mean >= 3.0 * background, "{mean} vs {background}");
    }

    #[test]
    fn distance_events_recruit_nearby_users() {
        let out = generate(&small(FactorMix::only(Factor::Distance), 5)).unwrap();
        let c = &out.corpus;
        let gt = &out.ground_truth;
        let cutoff = gt.events.iter().map(|e| e.day).min().unwrap();
        let snap = crate::profiles::Snapshot::build(c, cutoff);
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for e in &gt.events {
            let anchor = c.venue(c.venue_idx(&e.venue_id).unwrap()).coords();
            for u in c.users() {
                let Some(home) = snap.user(u).home_venue else { continue };
                let d = haversine_m(c.venue(home).coords(), anchor);
                if e.attendees.iter().any(|a| a == c.user_id(u)) {
                    inside.push(d);
                } else {
                    outside.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&inside) < mean(&outside), "{} vs {}", mean(&inside), mean(&outside));
    }

    #[test]
    fn same_seed_same_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(FactorMix::default(), 7);
        generate(&cfg).unwrap().write(&dir.path().join("a")).unwrap();
        generate(&cfg).unwrap().write(&dir.path().join("b")).unwrap();
        for f in ["checkins.csv", "venues.csv", "social.csv", "ground_truth.json"] {
            let a = fs::read(dir.path().join("a").join(f)).unwrap();
            let b = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&small(FactorMix::only(Factor::Niche), 8)).unwrap();
        out.write(dir.path()).unwrap();
        let loaded = crate::corpus::load_corpus(
            &dir.path().join("checkins.csv"),
            &dir.path().join("venues.csv"),
            &dir.path().join("social.csv"),
            0,
        )
        .unwrap();
        assert_eq!(loaded, out.corpus);
        let gt = GroundTruth::read_json(&dir.path().join("ground_truth.json")).unwrap();
        assert_eq!(gt, out.ground_truth);
        assert!(gt.events.iter().all(|e| gt.rare_categories.contains(&e.category)));
    }
}
