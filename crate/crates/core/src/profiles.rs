//! User and event preference profiles.
//!
//! Everything here is built from check-ins strictly before a cutoff day, so a
//! profile for an event never sees the event itself or anything after it.
//!
//! The user vector weighs each visited category by its share of the user's
//! most-visited category times the category's inverse user frequency:
//!
//! ```text
//! r_u[i] = N_u[i] / max_j N_u[j] * ln(|U| / |{v : N_v[i] > 0}|)
//! ```
//!
//! The event vector multiplies the fraction of (training) attendees who visited
//! a category by the attendees' share of all city check-ins there:
//!
//! ```text
//! r_e[i] = |{u in A : N_u[i] > 0}| / |A| * sum_{u in A} N_u[i] / sum_{u in U} N_u[i]
//! ```

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CategoryIdx, CheckIn, Corpus, UserIdx, VenueIdx};
use crate::error::{Error, Result};
use crate::eventmine::EventRecord;

/// Sparse non-negative category vector, sorted by category.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CategoryVector(Vec<(CategoryIdx, f64)>);

impl CategoryVector {
    /// Builds from arbitrary entries; zero entries are dropped.
    pub fn from_entries(entries: impl IntoIterator<Item = (CategoryIdx, f64)>) -> Self {
        let mut v: Vec<_> = entries.into_iter().filter(|&(_, x)| x != 0.0).collect();
        v.sort_by_key(|&(c, _)| c);
        v.dedup_by_key(|&mut (c, _)| c);
        CategoryVector(v)
    }

    pub fn get(&self, c: CategoryIdx) -> f64 {
        self.0
            .binary_search_by_key(&c, |&(k, _)| k)
            .map_or(0.0, |i| self.0[i].1)
    }

    pub fn entries(&self) -> &[(CategoryIdx, f64)] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&(_, x)| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &CategoryVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.0[i].1 * other.0[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity; 0 when either side is all-zero.
    pub fn cosine(&self, other: &CategoryVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (self.dot(other) / denom).clamp(-1.0, 1.0)
        }
    }
}

pub type IdfTable = BTreeMap<CategoryIdx, f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user: UserIdx,
    /// `N_u[c]`, sorted by category, only non-zero counts.
    pub category_counts: Vec<(CategoryIdx, u32)>,
    pub category_vector: CategoryVector,
    pub hourly_counts: [u32; 24],
    pub home_venue: Option<VenueIdx>,
    pub cutoff_day: NaiveDate,
}

impl UserProfile {
    pub fn count(&self, c: CategoryIdx) -> u32 {
        self.category_counts
            .binary_search_by_key(&c, |&(k, _)| k)
            .map_or(0, |i| self.category_counts[i].1)
    }

    pub fn n_checkins(&self) -> u32 {
        self.hourly_counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventProfile {
    pub event_id: String,
    pub category_vector: CategoryVector,
    pub built_from: Vec<UserIdx>,
}

struct Tally {
    category_counts: Vec<(CategoryIdx, u32)>,
    hourly_counts: [u32; 24],
    home_venue: Option<VenueIdx>,
}

fn tally(corpus: &Corpus, history: &[CheckIn]) -> Tally {
    let mut hourly_counts = [0u32; 24];
    let mut cats: Vec<CategoryIdx> = Vec::with_capacity(history.len());
    let mut venues: Vec<VenueIdx> = Vec::with_capacity(history.len());
    for c in history {
        hourly_counts[c.local_hour as usize] += 1;
        cats.push(corpus.category_of(c.venue));
        venues.push(c.venue);
    }
    cats.sort_unstable();
    venues.sort_unstable();
    let category_counts = run_lengths(&cats);
    // first maximum in ascending venue order is the lexicographically smallest id
    let mut home: Option<(VenueIdx, u32)> = None;
    for (v, n) in run_lengths(&venues) {
        if home.is_none_or(|(_, best)| n > best) {
            home = Some((v, n));
        }
    }
    Tally {
        category_counts,
        hourly_counts,
        home_venue: home.map(|(v, _)| v),
    }
}

fn run_lengths<T: Copy + PartialEq>(sorted: &[T]) -> Vec<(T, u32)> {
    let mut out: Vec<(T, u32)> = Vec::new();
    for &x in sorted {
        match out.last_mut() {
            Some((y, n)) if *y == x => *n += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

fn user_vector(counts: &[(CategoryIdx, u32)], idf: &IdfTable) -> CategoryVector {
    let max = counts.iter().map(|&(_, n)| n).max().unwrap_or(0);
    if max == 0 {
        return CategoryVector::default();
    }
    CategoryVector::from_entries(
        counts
            .iter()
            .map(|&(c, n)| (c, f64::from(n) / f64::from(max) * idf.get(&c).copied().unwrap_or(0.0))),
    )
}

fn idf_from_visitors(n_users: usize, visitors: &[u32]) -> IdfTable {
    visitors
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, &n)| (CategoryIdx(c as u32), (n_users as f64 / f64::from(n)).ln()))
        .collect()
}

/// Inverse user frequency per category over the full corpus user set.
/// Categories nobody visited before the cutoff are absent.
pub fn compute_idf(corpus: &Corpus, cutoff_day: NaiveDate) -> IdfTable {
    let mut visitors = vec![0u32; corpus.n_categories()];
    for u in corpus.users() {
        let mut seen: Vec<CategoryIdx> = corpus
            .user_checkins_before(u, cutoff_day)
            .iter()
            .map(|c| corpus.category_of(c.venue))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        for c in seen {
            visitors[c.index()] += 1;
        }
    }
    idf_from_visitors(corpus.n_users(), &visitors)
}

pub fn build_user_profile(corpus: &Corpus, user: UserIdx, cutoff_day: NaiveDate, idf: &IdfTable) -> UserProfile {
    let t = tally(corpus, corpus.user_checkins_before(user, cutoff_day));
    UserProfile {
        user,
        category_vector: user_vector(&t.category_counts, idf),
        category_counts: t.category_counts,
        hourly_counts: t.hourly_counts,
        home_venue: t.home_venue,
        cutoff_day,
    }
}

fn event_vector(
    training: &[UserIdx],
    counts_of: impl Fn(UserIdx) -> Vec<(CategoryIdx, u32)>,
    city_totals: &[u64],
) -> Result<CategoryVector> {
    let mut users = training.to_vec();
    users.sort_unstable();
    users.dedup();
    if users.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let mut visitors: BTreeMap<CategoryIdx, (u32, u64)> = BTreeMap::new();
    for &u in &users {
        for (c, n) in counts_of(u) {
            let e = visitors.entry(c).or_insert((0, 0));
            e.0 += 1;
            e.1 += u64::from(n);
        }
    }
    let n = users.len() as f64;
    Ok(CategoryVector::from_entries(visitors.into_iter().filter_map(|(c, (k, sum))| {
        let total = city_totals[c.index()];
        (total > 0).then(|| (c, f64::from(k) / n * (sum as f64 / total as f64)))
    })))
}

/// Event category vector from the training attendees' pre-event check-ins.
pub fn build_event_profile(corpus: &Corpus, event: &EventRecord, training_attendees: &[UserIdx]) -> Result<EventProfile> {
    let mut totals = vec![0u64; corpus.n_categories()];
    for u in corpus.users() {
        for c in corpus.user_checkins_before(u, event.day) {
            totals[corpus.category_of(c.venue).index()] += 1;
        }
    }
    let vector = event_vector(
        training_attendees,
        |u| tally(corpus, corpus.user_checkins_before(u, event.day)).category_counts,
        &totals,
    )?;
    let mut built_from = training_attendees.to_vec();
    built_from.sort_unstable();
    built_from.dedup();
    Ok(EventProfile {
        event_id: event.event_id.clone(),
        category_vector: vector,
        built_from,
    })
}

/// The `k` highest-scoring categories, ties broken by category name.
pub fn top_k_categories(profile: &EventProfile, k: usize) -> Vec<(CategoryIdx, f64)> {
    let mut entries = profile.category_vector.entries().to_vec();
    // category index order is category name order
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(k);
    entries
}

/// All user profiles at one cutoff, plus the city-wide aggregates that event
/// profiles and the socio-spatial graph need.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub cutoff_day: NaiveDate,
    pub idf: IdfTable,
    users: Vec<UserProfile>,
    /// `sum_u N_u[c]`
    pub category_totals: Vec<u64>,
    /// `max_u N_u[c]`
    pub category_user_max: Vec<u32>,
}

impl Snapshot {
    pub fn build(corpus: &Corpus, cutoff_day: NaiveDate) -> Self {
        let tallies: Vec<Tally> = corpus
            .users()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&u| tally(corpus, corpus.user_checkins_before(u, cutoff_day)))
            .collect();
        let n_cat = corpus.n_categories();
        let mut visitors = vec![0u32; n_cat];
        let mut category_totals = vec![0u64; n_cat];
        let mut category_user_max = vec![0u32; n_cat];
        for t in &tallies {
            for &(c, n) in &t.category_counts {
                visitors[c.index()] += 1;
                category_totals[c.index()] += u64::from(n);
                category_user_max[c.index()] = category_user_max[c.index()].max(n);
            }
        }
        let idf = idf_from_visitors(corpus.n_users(), &visitors);
        let users = tallies
            .into_iter()
            .enumerate()
            .map(|(i, t)| UserProfile {
                user: UserIdx(i as u32),
                category_vector: user_vector(&t.category_counts, &idf),
                category_counts: t.category_counts,
                hourly_counts: t.hourly_counts,
                home_venue: t.home_venue,
                cutoff_day,
            })
            .collect();
        Snapshot {
            cutoff_day,
            idf,
            users,
            category_totals,
            category_user_max,
        }
    }

    pub fn user(&self, u: UserIdx) -> &UserProfile {
        &self.users[u.index()]
    }

    pub fn users(&self) -> &[UserProfile] {
        &self.users
    }

    pub fn event_profile(&self, event_id: &str, training_attendees: &[UserIdx]) -> Result<EventProfile> {
        let vector = event_vector(
            training_attendees,
            |u| self.users[u.index()].category_counts.clone(),
            &self.category_totals,
        )?;
        let mut built_from = training_attendees.to_vec();
        built_from.sort_unstable();
        built_from.dedup();
        Ok(EventProfile {
            event_id: event_id.to_owned(),
            category_vector: vector,
            built_from,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_timestamp, RawCheckIn, Venue};

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2011, 5, d).unwrap()
    }

    fn ci(user: &str, venue: &str, d: u32, hour: u32) -> RawCheckIn {
        RawCheckIn {
            user_id: user.into(),
            venue_id: venue.into(),
            timestamp: parse_timestamp(&format!("2011-05-{d:02}T{hour:02}:00:00Z")).unwrap(),
        }
    }

    fn venues() -> Vec<Venue> {
        ["Bar", "Gym", "Park", "Zoo"]
            .iter()
            .map(|c| Venue { id: format!("v{c}"), lat: 0.0, lon: 0.0, category: (*c).into() })
            .collect()
    }

    /// 10 users; "me" has Bar x4, Gym x2; Gym is visited by all 10, Bar by 5.
    fn tfidf_corpus() -> Corpus {
        let mut cs = vec![];
        for i in 0..4 {
            cs.push(ci("me", "vBar", 1 + i, 12));
        }
        cs.push(ci("me", "vGym", 5, 12));
        cs.push(ci("me", "vGym", 6, 12));
        for u in 1..10 {
            cs.push(ci(&format!("o{u}"), "vGym", 2, 8));
            if u < 5 {
                cs.push(ci(&format!("o{u}"), "vBar", 3, 20));
            }
        }
        // post-cutoff noise
        cs.push(ci("me", "vZoo", 20, 12));
        Corpus::from_parts(venues(), cs, vec![], 0).unwrap()
    }

    #[test]
    fn idf_matches_hand_values() {
        let c = tfidf_corpus();
        let idf = compute_idf(&c, day(10));
        let bar = c.category_idx("Bar").unwrap();
        let gym = c.category_idx("Gym").unwrap();
        assert!((idf[&bar] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(idf[&gym], 0.0);
        assert!(!idf.contains_key(&c.category_idx("Zoo").unwrap()));
        assert!(!idf.contains_key(&c.category_idx("Park").unwrap()));
    }

    #[test]
    fn user_vector_matches_hand_values() {
        let c = tfidf_corpus();
        let idf = compute_idf(&c, day(10));
        let me = c.user_idx("me").unwrap();
        let p = build_user_profile(&c, me, day(10), &idf);
        let bar = c.category_idx("Bar").unwrap();
        let gym = c.category_idx("Gym").unwrap();
        assert!((p.category_vector.get(bar) - 0.693_147_180_559_945_3).abs() < 1e-9);
        assert_eq!(p.category_vector.get(gym), 0.0);
        assert_eq!(p.count(bar), 4);
        assert_eq!(p.hourly_counts[12], 6);
        assert_eq!(p.home_venue, c.venue_idx("vBar"));
    }

    #[test]
    fn empty_history_profile() {
        let c = tfidf_corpus();
        let idf = compute_idf(&c, day(1));
        let p = build_user_profile(&c, c.user_idx("me").unwrap(), day(1), &idf);
        assert!(p.category_vector.is_zero());
        assert_eq!(p.hourly_counts, [0; 24]);
        assert_eq!(p.home_venue, None);
    }

    #[test]
    fn home_ties_go_to_smallest_venue_id() {
        let cs = vec![ci("u", "vZoo", 1, 9), ci("u", "vBar", 2, 9), ci("u", "vZoo", 3, 9), ci("u", "vBar", 4, 9)];
        let c = Corpus::from_parts(venues(), cs, vec![], 0).unwrap();
        let p = build_user_profile(&c, UserIdx(0), day(9), &compute_idf(&c, day(9)));
        assert_eq!(p.home_venue, c.venue_idx("vBar"));
    }

    #[test]
    fn snapshot_agrees_with_standalone_builders() {
        let c = tfidf_corpus();
        let snap = Snapshot::build(&c, day(10));
        let idf = compute_idf(&c, day(10));
        assert_eq!(snap.idf, idf);
        for u in c.users() {
            assert_eq!(snap.user(u), &build_user_profile(&c, u, day(10), &idf));
        }
    }

    /// a, b each have 3 pre-event Bar check-ins; city-wide Bar total is 10.
    fn event_corpus() -> (Corpus, EventRecord) {
        let mut cs = vec![];
        for d in 1..=3 {
            cs.push(ci("a", "vBar", d, 20));
            cs.push(ci("b", "vBar", d, 21));
        }
        for d in 1..=4 {
            cs.push(ci("c", "vBar", d, 22));
        }
        cs.push(ci("a", "vGym", 4, 7));
        cs.push(ci("a", "vPark", 12, 7)); // event day: excluded
        let c = Corpus::from_parts(venues(), cs, vec![], 0).unwrap();
        let ev = EventRecord {
            event_id: "e".into(),
            day: day(12),
            anchor_venue: c.venue_idx("vPark").unwrap(),
            places: vec![c.venue_idx("vPark").unwrap()],
            attendees: vec![c.user_idx("a").unwrap(), c.user_idx("b").unwrap()],
            peak_hour: 7,
            popularity: 1,
            anomaly_magnitude: 0.0,
        };
        (c, ev)
    }

    #[test]
    fn event_vector_matches_hand_values() {
        let (c, ev) = event_corpus();
        let p = build_event_profile(&c, &ev, &ev.attendees).unwrap();
        let bar = c.category_idx("Bar").unwrap();
        let gym = c.category_idx("Gym").unwrap();
        // a = 2/2, b = 6/10
        assert!((p.category_vector.get(bar) - 0.6).abs() < 1e-12);
        // Gym: a = 1/2, b = 1/1
        assert!((p.category_vector.get(gym) - 0.5).abs() < 1e-12);
        assert_eq!(p.category_vector.get(c.category_idx("Park").unwrap()), 0.0);
        assert_eq!(p.category_vector.get(c.category_idx("Zoo").unwrap()), 0.0);
        let snap = Snapshot::build(&c, ev.day);
        assert_eq!(snap.event_profile("e", &ev.attendees).unwrap(), p);
    }

    #[test]
    fn sole_visitor_scores_one() {
        let (c, ev) = event_corpus();
        let a = c.user_idx("a").unwrap();
        let p = build_event_profile(&c, &ev, &[a]).unwrap();
        assert!((p.category_vector.get(c.category_idx("Gym").unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_training_is_an_error() {
        let (c, ev) = event_corpus();
        assert!(matches!(build_event_profile(&c, &ev, &[]), Err(Error::EmptyTraining)));
    }

    fn profile_with(scores: &[(u32, f64)]) -> EventProfile {
        EventProfile {
            event_id: "e".into(),
            category_vector: CategoryVector::from_entries(scores.iter().map(|&(c, s)| (CategoryIdx(c), s))),
            built_from: vec![],
        }
    }

    #[test]
    fn top_k_truncates_and_breaks_ties_by_name() {
        let p = profile_with(&(0..12).map(|c| (c, 0.1 + c as f64 / 100.0)).collect::<Vec<_>>());
        assert_eq!(top_k_categories(&p, 10).len(), 10);
        assert_eq!(top_k_categories(&p, 10)[0].0, CategoryIdx(11));
        let p = profile_with(&[(0, 0.1), (1, 0.5), (2, 0.5), (3, 0.2)]);
        let top = top_k_categories(&p, 10);
        assert_eq!(top.len(), 4);
        assert_eq!(top[0].0, CategoryIdx(1));
        assert_eq!(top[1].0, CategoryIdx(2));
    }

    #[test]
    fn cosine_cases() {
        let v = |e: &[(u32, f64)]| CategoryVector::from_entries(e.iter().map(|&(c, x)| (CategoryIdx(c), x)));
        let a = v(&[(0, 1.0), (1, 1.0)]);
        assert!((a.cosine(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.cosine(&v(&[(2, 3.0)])), 0.0);
        assert!((a.cosine(&v(&[(0, 1.0)])) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(a.cosine(&CategoryVector::default()), 0.0);
    }
}
