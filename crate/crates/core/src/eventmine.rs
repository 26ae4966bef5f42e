//! Event detection as venue-day check-in anomalies.
//!
//! A venue-day is anomalous when its check-in count exceeds `threshold_factor`
//! times the venue's mean over its active days (days with at least one
//! check-in). The strongest anomalies become events; each event's scope grows
//! to nearby venues that are also busier than usual that day.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, CheckIn, Corpus, UserIdx, VenueIdx};
use crate::error::{Error, Result};
use crate::geo::haversine_m;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventIdx(pub u32);

impl EventIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub event_id: String,
    pub day: NaiveDate,
    /// Most popular event place.
    pub anchor_venue: VenueIdx,
    /// Sorted; always contains the anchor.
    pub places: Vec<VenueIdx>,
    /// Sorted, unique.
    pub attendees: Vec<UserIdx>,
    pub peak_hour: u8,
    /// Total check-ins at the places on the event day.
    pub popularity: u32,
    /// Observed minus average count at the anchor.
    pub anomaly_magnitude: f64,
}

impl EventRecord {
    pub fn has_attendee(&self, u: UserIdx) -> bool {
        self.attendees.binary_search(&u).is_ok()
    }
}

pub fn event_id(corpus: &Corpus, anchor: VenueIdx, day: NaiveDate) -> String {
    format!("ev-{}-{}", day.format("%Y%m%d"), corpus.venue(anchor).id)
}

/// Events keyed by a dense index whose order matches `event_id` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Events {
    records: Vec<EventRecord>,
}

impl Events {
    pub fn new(mut records: Vec<EventRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.event_id.cmp(&b.event_id));
        for w in records.windows(2) {
            if w[0].event_id == w[1].event_id {
                return Err(Error::DuplicateEvent(w[0].event_id.clone()));
            }
        }
        Ok(Events { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, e: EventIdx) -> &EventRecord {
        &self.records[e.index()]
    }

    pub fn indices(&self) -> impl ExactSizeIterator<Item = EventIdx> {
        (0..self.records.len() as u32).map(EventIdx)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (EventIdx, &EventRecord)> {
        self.records.iter().enumerate().map(|(i, r)| (EventIdx(i as u32), r))
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn idx_of(&self, event_id: &str) -> Option<EventIdx> {
        self.records
            .binary_search_by(|r| r.event_id.as_str().cmp(event_id))
            .ok()
            .map(|i| EventIdx(i as u32))
    }

    /// Events attended by `u`, ascending.
    pub fn attended_by(&self, u: UserIdx) -> Vec<EventIdx> {
        self.iter().filter(|(_, r)| r.has_attendee(u)).map(|(e, _)| e).collect()
    }
}

pub type VenueDayCounts = BTreeMap<(VenueIdx, NaiveDate), u32>;

/// Check-ins per venue per local day; absent keys mean zero.
pub fn venue_day_counts(corpus: &Corpus) -> VenueDayCounts {
    let mut counts = VenueDayCounts::new();
    for c in corpus.checkins() {
        *counts.entry((c.venue, c.local_day)).or_insert(0) += 1;
    }
    counts
}

/// Mean daily count per venue over its active days; 0 for venues never visited.
pub fn active_day_averages(n_venues: usize, counts: &VenueDayCounts) -> Vec<f64> {
    let mut sum = vec![0u64; n_venues];
    let mut days = vec![0u64; n_venues];
    for (&(v, _), &n) in counts {
        sum[v.index()] += u64::from(n);
        days[v.index()] += 1;
    }
    sum.iter()
        .zip(&days)
        .map(|(&s, &d)| if d == 0 { 0.0 } else { s as f64 / d as f64 })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Anomaly {
    pub venue: VenueIdx,
    pub day: NaiveDate,
    pub observed: u32,
    pub average: f64,
    pub magnitude: f64,
}

fn anomalies_from_counts(counts: &VenueDayCounts, averages: &[f64], threshold_factor: f64) -> Vec<Anomaly> {
    let mut out: Vec<Anomaly> = counts
        .iter()
        .filter_map(|(&(venue, day), &observed)| {
            let average = averages[venue.index()];
            (f64::from(observed) > threshold_factor * average).then(|| Anomaly {
                venue,
                day,
                observed,
                average,
                magnitude: f64::from(observed) - average,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.magnitude
            .total_cmp(&a.magnitude)
            .then(a.day.cmp(&b.day))
            .then(a.venue.cmp(&b.venue))
    });
    out
}

/// Venue-days whose count strictly exceeds `threshold_factor` times the
/// venue's active-day average, strongest first. Ties order by `(day, venue)`.
pub fn detect_anomalies(corpus: &Corpus, threshold_factor: f64) -> Result<Vec<Anomaly>> {
    if !(threshold_factor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold_factor must be > 0, got {threshold_factor}"
        )));
    }
    let counts = venue_day_counts(corpus);
    let averages = active_day_averages(corpus.venues().len(), &counts);
    Ok(anomalies_from_counts(&counts, &averages, threshold_factor))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineParams {
    pub top_k: usize,
    pub radius_m: f64,
    pub threshold_factor: f64,
}

impl Default for MineParams {
    fn default() -> Self {
        MineParams {
            top_k: 60,
            radius_m: 300.0,
            threshold_factor: 2.0,
        }
    }
}

fn checkins_on_day(corpus: &Corpus, day: NaiveDate) -> &[CheckIn] {
    let all = corpus.checkins();
    let lo = all.partition_point(|c| c.local_day < day);
    let hi = all.partition_point(|c| c.local_day <= day);
    &all[lo..hi]
}

/// Selects up to `top_k` events from the anomaly list.
///
/// Candidates are taken in anomaly order. A candidate whose venue-day already
/// belongs to a selected event's scope is skipped. The scope is the anchor
/// plus every venue within `radius_m` whose count that day strictly exceeds
/// its own active-day average (one pass around the anchor only).
pub fn mine_events(corpus: &Corpus, params: &MineParams) -> Result<Vec<EventRecord>> {
    if params.top_k == 0 {
        return Err(Error::InvalidParameter("top_k must be >= 1".into()));
    }
    if !(params.radius_m >= 0.0) {
        return Err(Error::InvalidParameter("radius_m must be >= 0".into()));
    }
    if !(params.threshold_factor > 0.0) {
        return Err(Error::InvalidParameter("threshold_factor must be > 0".into()));
    }
    let counts = venue_day_counts(corpus);
    let averages = active_day_averages(corpus.venues().len(), &counts);
    let candidates = anomalies_from_counts(&counts, &averages, params.threshold_factor);

    let mut claimed: HashSet<(VenueIdx, NaiveDate)> = HashSet::new();
    let mut events = Vec::new();
    for cand in candidates {
        if events.len() >= params.top_k {
            break;
        }
        if claimed.contains(&(cand.venue, cand.day)) {
            continue;
        }
        let anchor = corpus.venue(cand.venue).coords();
        let mut places: Vec<VenueIdx> = counts
            .range((VenueIdx(0), cand.day)..)
            .filter(|(&(v, d), &n)| {
                d == cand.day
                    && (v == cand.venue
                        || (f64::from(n) > averages[v.index()]
                            && !claimed.contains(&(v, d))
                            && haversine_m(anchor, corpus.venue(v).coords()) <= params.radius_m))
            })
            .map(|(&(v, _), _)| v)
            .collect();
        places.sort();
        places.dedup();

        let mut hourly = [0u32; 24];
        let mut attendees = Vec::new();
        let mut popularity = 0u32;
        for c in checkins_on_day(corpus, cand.day) {
            if places.binary_search(&c.venue).is_ok() {
                hourly[c.local_hour as usize] += 1;
                attendees.push(c.user);
                popularity += 1;
            }
        }
        attendees.sort();
        attendees.dedup();
        let peak_hour = (0..24u8)
            .max_by(|&a, &b| hourly[a as usize].cmp(&hourly[b as usize]).then(b.cmp(&a)))
            .unwrap_or(0);

        for &v in &places {
            claimed.insert((v, cand.day));
        }
        events.push(EventRecord {
            event_id: event_id(corpus, cand.venue, cand.day),
            day: cand.day,
            anchor_venue: cand.venue,
            places,
            attendees,
            peak_hour,
            popularity,
            anomaly_magnitude: cand.magnitude,
        });
    }
    Ok(events)
}

/// One JSON-lines row of the events file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventJson {
    pub event_id: String,
    pub day: NaiveDate,
    pub anchor_venue: String,
    pub places: Vec<String>,
    pub attendees: Vec<String>,
    pub peak_hour: u8,
    pub popularity: u32,
    pub anomaly_magnitude: f64,
}

impl EventJson {
    pub fn from_record(corpus: &Corpus, r: &EventRecord) -> Self {
        EventJson {
            event_id: r.event_id.clone(),
            day: r.day,
            anchor_venue: corpus.venue(r.anchor_venue).id.clone(),
            places: r.places.iter().map(|&v| corpus.venue(v).id.clone()).collect(),
            attendees: r.attendees.iter().map(|&u| corpus.user_id(u).to_owned()).collect(),
            peak_hour: r.peak_hour,
            popularity: r.popularity,
            anomaly_magnitude: r.anomaly_magnitude,
        }
    }

    pub fn to_record(&self, corpus: &Corpus) -> Result<EventRecord> {
        let venue = |id: &str| {
            corpus.venue_idx(id).ok_or_else(|| Error::UnknownVenue {
                venue: id.to_owned(),
                line: 0,
            })
        };
        let mut places = self.places.iter().map(|v| venue(v)).collect::<Result<Vec<_>>>()?;
        places.sort();
        let mut attendees = self
            .attendees
            .iter()
            .map(|u| corpus.user_idx(u).ok_or_else(|| Error::UnknownUser(u.clone())))
            .collect::<Result<Vec<_>>>()?;
        attendees.sort();
        attendees.dedup();
        if self.peak_hour > 23 {
            return Err(Error::InvalidParameter(format!("peak_hour {} out of range", self.peak_hour)));
        }
        Ok(EventRecord {
            event_id: self.event_id.clone(),
            day: self.day,
            anchor_venue: venue(&self.anchor_venue)?,
            places,
            attendees,
            peak_hour: self.peak_hour,
            popularity: self.popularity,
            anomaly_magnitude: self.anomaly_magnitude,
        })
    }
}

pub fn write_events_jsonl(path: &Path, corpus: &Corpus, events: &[EventRecord]) -> Result<()> {
    write_jsonl(path, events.iter().map(|r| EventJson::from_record(corpus, r)))
}

pub fn read_events_jsonl(path: &Path, corpus: &Corpus) -> Result<Vec<EventRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EventJson = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(row.to_record(corpus)?);
    }
    Ok(out)
}
