//! The direct participation features.
//!
//! Every feature yields a raw value plus an `oriented` value where higher
//! means more likely to attend, so ranking and fusion never need to know a
//! feature's natural direction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, UserIdx};
use crate::error::{Error, Result};
use crate::eventmine::{EventIdx, EventRecord};
use crate::evalharness::PredictionList;
use crate::geo::haversine_m;
use crate::profiles::{EventProfile, UserProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    HomeDistance,
    CategoryScore,
    TemporalDistance,
    Popularity,
    SocialInfluence,
    RandomWalk,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::HomeDistance,
        FeatureKind::CategoryScore,
        FeatureKind::TemporalDistance,
        FeatureKind::Popularity,
        FeatureKind::SocialInfluence,
        FeatureKind::RandomWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::HomeDistance => "HomeDistance",
            FeatureKind::CategoryScore => "CategoryScore",
            FeatureKind::TemporalDistance => "TemporalDistance",
            FeatureKind::Popularity => "Popularity",
            FeatureKind::SocialInfluence => "SocialInfluence",
            FeatureKind::RandomWalk => "RandomWalk",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match norm.as_str() {
            "homedistance" | "home" | "distance" => FeatureKind::HomeDistance,
            "categoryscore" | "category" => FeatureKind::CategoryScore,
            "temporaldistance" | "temporal" => FeatureKind::TemporalDistance,
            "popularity" => FeatureKind::Popularity,
            "socialinfluence" | "social" => FeatureKind::SocialInfluence,
            "randomwalk" | "rwr" => FeatureKind::RandomWalk,
            _ => return Err(Error::InvalidParameter(format!("unknown feature {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeatureScore {
    pub feature: FeatureKind,
    pub user: UserIdx,
    pub event: EventIdx,
    /// `None` when the user lacks the data the feature needs.
    pub raw: Option<f64>,
    pub oriented: f64,
    pub tie_break: f64,
}

impl FeatureScore {
    fn plain(feature: FeatureKind, user: UserIdx, event: EventIdx, raw: Option<f64>, oriented: f64) -> Self {
        FeatureScore {
            feature,
            user,
            event,
            raw,
            oriented,
            tie_break: 0.0,
        }
    }
}

/// Distance from the user's home venue to the event's anchor venue.
/// Oriented as `1 / (1 + km)`; users without a home get 0.
pub fn home_distance(corpus: &Corpus, profile: &UserProfile, e: EventIdx, event: &EventRecord) -> FeatureScore {
    let kind = FeatureKind::HomeDistance;
    match profile.home_venue {
        Some(home) => {
            let d = haversine_m(corpus.venue(home).coords(), corpus.venue(event.anchor_venue).coords());
            FeatureScore::plain(kind, profile.user, e, Some(d), 1.0 / (1.0 + d / 1000.0))
        }
        None => FeatureScore::plain(kind, profile.user, e, None, 0.0),
    }
}

/// Cosine between the user's TF-IDF vector and the event's category vector.
pub fn category_score(user: &UserProfile, e: EventIdx, event: &EventProfile) -> FeatureScore {
    let cos = user.category_vector.cosine(&event.category_vector);
    FeatureScore::plain(FeatureKind::CategoryScore, user.user, e, Some(cos), cos)
}

/// Activity-weighted circular hour distance to the event's peak hour.
pub fn temporal_distance_raw(hourly: &[u32; 24], peak_hour: u8) -> Option<f64> {
    let max = *hourly.iter().max()?;
    if max == 0 {
        return None;
    }
    let p = i32::from(peak_hour);
    Some(
        hourly
            .iter()
            .enumerate()
            .map(|(h, &n)| {
                let diff = (h as i32 - p).abs();
                f64::from(n) / f64::from(max) * f64::from(diff.min(24 - diff))
            })
            .sum(),
    )
}

/// Oriented as the negated distance; an empty histogram ranks last.
pub fn temporal_distance(user: &UserProfile, e: EventIdx, event: &EventRecord) -> FeatureScore {
    let raw = temporal_distance_raw(&user.hourly_counts, event.peak_hour);
    let oriented = raw.map_or(f64::NEG_INFINITY, |d| -d);
    FeatureScore::plain(FeatureKind::TemporalDistance, user.user, e, raw, oriented)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityMode {
    /// Total check-ins at the event places that day.
    #[default]
    Checkins,
    /// Distinct attendees.
    Attendees,
}

pub fn popularity(user: UserIdx, e: EventIdx, event: &EventRecord, mode: PopularityMode) -> FeatureScore {
    let v = match mode {
        PopularityMode::Checkins => f64::from(event.popularity),
        PopularityMode::Attendees => event.attendees.len() as f64,
    };
    FeatureScore::plain(FeatureKind::Popularity, user, e, Some(v), v)
}

/// Number of the user's friends among `training_attendees` (sorted), tie-broken
/// by the best-connected such friend's degree within the attendee set.
pub fn social_influence(corpus: &Corpus, user: UserIdx, e: EventIdx, training_attendees: &[UserIdx]) -> FeatureScore {
    debug_assert!(training_attendees.windows(2).all(|w| w[0] < w[1]));
    let attends = |f: &UserIdx| training_attendees.binary_search(f).is_ok();
    let mut raw = 0u32;
    let mut best = 0usize;
    for f in corpus.friends(user).iter().filter(|&&f| f != user && attends(&f)) {
        raw += 1;
        best = best.max(corpus.friends(*f).iter().filter(|g| attends(g)).count());
    }
    FeatureScore {
        feature: FeatureKind::SocialInfluence,
        user,
        event: e,
        raw: Some(f64::from(raw)),
        oriented: f64::from(raw),
        tie_break: best as f64,
    }
}

/// Orders one user's candidate events by `(oriented, tie_break)` descending,
/// remaining ties by ascending event id. Relevance is left empty.
pub fn rank_events(user: UserIdx, scores: &[FeatureScore]) -> Result<PredictionList> {
    let mut order: Vec<&FeatureScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.oriented
            .total_cmp(&a.oriented)
            .then(b.tie_break.total_cmp(&a.tie_break))
            .then(a.event.cmp(&b.event))
    });
    let mut ids: Vec<EventIdx> = order.iter().map(|s| s.event).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateEvent(format!("event #{}", w[0].0)));
    }
    Ok(PredictionList::new(user, order.into_iter().map(|s| s.event).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CategoryIdx, RawCheckIn, Venue, VenueIdx};
    use crate::profiles::CategoryVector;
    use chrono::NaiveDate;

    fn profile(user: u32, hourly: [u32; 24], home: Option<VenueIdx>) -> UserProfile {
        UserProfile {
            user: UserIdx(user),
            category_counts: vec![],
            category_vector: CategoryVector::default(),
            hourly_counts: hourly,
            home_venue: home,
            cutoff_day: NaiveDate::from_ymd_opt(2011, 1, 1).unwrap(),
        }
    }

    fn event(anchor: VenueIdx, peak: u8, popularity: u32) -> EventRecord {
        EventRecord {
            event_id: "e".into(),
            day: NaiveDate::from_ymd_opt(2011, 1, 1).unwrap(),
            anchor_venue: anchor,
            places: vec![anchor],
            attendees: vec![UserIdx(0)],
            peak_hour: peak,
            popularity,
            anomaly_magnitude: 1.0,
        }
    }

    fn two_venue_corpus(d_km: f64) -> Corpus {
        // 1 degree of latitude is ~111.195 km on the 6371 km sphere
        let dlat = d_km / (6371.0 * std::f64::consts::PI / 180.0);
        Corpus::from_parts(
            vec![
                Venue { id: "a".into(), lat: 10.0, lon: 0.0, category: "X".into() },
                Venue { id: "b".into(), lat: 10.0 + dlat, lon: 0.0, category: "X".into() },
            ],
            vec![RawCheckIn { user_id: "u".into(), venue_id: "a".into(), timestamp: 0 }],
            vec![],
            0,
        )
        .unwrap()
    }

    #[test]
    fn home_distance_cases() {
        let c = two_venue_corpus(1.0);
        let (a, b) = (VenueIdx(0), VenueIdx(1));
        let at_anchor = home_distance(&c, &profile(0, [0; 24], Some(a)), EventIdx(0), &event(a, 0, 1));
        assert_eq!(at_anchor.raw, Some(0.0));
        assert_eq!(at_anchor.oriented, 1.0);
        let one_km = home_distance(&c, &profile(0, [0; 24], Some(b)), EventIdx(0), &event(a, 0, 1));
        assert!((one_km.oriented - 0.5).abs() < 1e-9, "{one_km:?}");
        let homeless = home_distance(&c, &profile(0, [0; 24], None), EventIdx(0), &event(a, 0, 1));
        assert_eq!((homeless.raw, homeless.oriented), (None, 0.0));
    }

    #[test]
    fn category_score_cases() {
        let mut u = profile(0, [0; 24], None);
        u.category_vector = CategoryVector::from_entries([(CategoryIdx(0), 1.0), (CategoryIdx(1), 1.0)]);
        let ev = |e: &[(u32, f64)]| EventProfile {
            event_id: "e".into(),
            category_vector: CategoryVector::from_entries(e.iter().map(|&(c, x)| (CategoryIdx(c), x))),
            built_from: vec![],
        };
        let s = category_score(&u, EventIdx(0), &ev(&[(0, 1.0)]));
        assert!((s.oriented - 0.707_106_781_186_547_6).abs() < 1e-9);
        assert_eq!(category_score(&u, EventIdx(0), &ev(&[(5, 1.0)])).oriented, 0.0);
        assert_eq!(category_score(&u, EventIdx(0), &ev(&[])).oriented, 0.0);
    }

    #[test]
    fn temporal_distance_cases() {
        let mut h = [0u32; 24];
        h[20] = 7;
        assert_eq!(temporal_distance_raw(&h, 20), Some(0.0));

        let mut h = [0u32; 24];
        h[23] = 1;
        assert_eq!(temporal_distance_raw(&h, 1), Some(2.0));

        // normalized 1.0 at p+3, 0.5 at p
        let mut h = [0u32; 24];
        h[13] = 4;
        h[10] = 2;
        assert_eq!(temporal_distance_raw(&h, 10), Some(3.0));

        let missing = temporal_distance(&profile(0, [0; 24], None), EventIdx(0), &event(VenueIdx(0), 3, 1));
        assert_eq!(missing.raw, None);
        assert_eq!(missing.oriented, f64::NEG_INFINITY);
    }

    #[test]
    fn temporal_distance_scale_invariant() {
        let mut h = [0u32; 24];
        h[3] = 2;
        h[9] = 5;
        h[17] = 1;
        let scaled = h.map(|x| x * 7);
        for p in 0..24 {
            let (a, b) = (temporal_distance_raw(&h, p).unwrap(), temporal_distance_raw(&scaled, p).unwrap());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn popularity_modes() {
        let mut ev = event(VenueIdx(0), 0, 120);
        ev.attendees = vec![UserIdx(0), UserIdx(1)];
        assert_eq!(popularity(UserIdx(5), EventIdx(0), &ev, PopularityMode::Checkins).oriented, 120.0);
        assert_eq!(popularity(UserIdx(5), EventIdx(0), &ev, PopularityMode::Attendees).oriented, 2.0);
    }

    #[test]
    fn rank_orders_by_score_tiebreak_then_id() {
        let s = |e: u32, o: f64, t: f64| FeatureScore {
            feature: FeatureKind::SocialInfluence,
            user: UserIdx(0),
            event: EventIdx(e),
            raw: Some(o),
            oriented: o,
            tie_break: t,
        };
        let l = rank_events(UserIdx(0), &[s(1, 0.1, 0.0), s(0, 0.9, 0.0)]).unwrap();
        assert_eq!(l.ranking(), [EventIdx(0), EventIdx(1)]);
        let l = rank_events(UserIdx(0), &[s(0, 1.0, 1.0), s(1, 1.0, 3.0)]).unwrap();
        assert_eq!(l.ranking(), [EventIdx(1), EventIdx(0)]);
        let l = rank_events(UserIdx(0), &[s(2, 0.0, 0.0), s(0, 0.0, 0.0), s(1, 0.0, 0.0)]).unwrap();
        assert_eq!(l.ranking(), [EventIdx(0), EventIdx(1), EventIdx(2)]);
        assert!(rank_events(UserIdx(0), &[s(1, 0.0, 0.0), s(1, 0.5, 0.0)]).is_err());
    }
}
