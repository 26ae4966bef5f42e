//! Check-in corpora: venues, timestamped check-ins and the friendship graph.
//!
//! A [`Corpus`] is immutable once built. Users, venues and categories are
//! interned into dense indices whose order matches the lexicographic order of
//! their string ids, so index comparisons and id comparisons agree.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! index_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

index_type!(
    /// Dense user index; ordered like the user id strings.
    UserIdx
);
index_type!(
    /// Dense venue index; ordered like the venue id strings.
    VenueIdx
);
index_type!(
    /// Dense category index; ordered like the category names.
    CategoryIdx
);

pub const VENUES_HEADER: [&str; 4] = ["venue_id", "lat", "lon", "category"];
pub const CHECKINS_HEADER: [&str; 3] = ["user_id", "venue_id", "timestamp"];
pub const SOCIAL_HEADER: [&str; 2] = ["user_a", "user_b"];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Clone, Debug, PartialEq)]
pub struct Venue {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
}

impl Venue {
    pub fn coords(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckIn {
    pub user: UserIdx,
    pub venue: VenueIdx,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub local_day: NaiveDate,
    pub local_hour: u8,
}

/// A check-in before id resolution, as it appears in the checkins file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCheckIn {
    pub user_id: String,
    pub venue_id: String,
    pub timestamp: i64,
}

/// Local calendar day and hour of a UTC timestamp under a fixed offset.
pub fn local_day_hour(timestamp: i64, offset_minutes: i32) -> (NaiveDate, u8) {
    let local = timestamp + i64::from(offset_minutes) * 60;
    let days = local.div_euclid(86_400);
    let hour = (local.rem_euclid(86_400) / 3_600) as u8;
    let date = NaiveDate::from_num_days_from_ce_opt(719_163 + days as i32)
        .expect("timestamp within chrono's supported range");
    (date, hour)
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .expect("timestamp within chrono's supported range")
        .format(TIMESTAMP_FORMAT)
        .to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    users: Vec<String>,
    user_index: HashMap<String, UserIdx>,
    venues: Vec<Venue>,
    venue_index: HashMap<String, VenueIdx>,
    venue_category: Vec<CategoryIdx>,
    categories: Vec<String>,
    checkins: Vec<CheckIn>,
    by_user: Vec<Vec<CheckIn>>,
    friends: Vec<Vec<UserIdx>>,
    timezone_offset_minutes: i32,
}

impl Corpus {
    /// Validates and indexes already-parsed records.
    ///
    /// Social edges are symmetrized and self-loops dropped; check-ins are
    /// deduplicated on exact `(user, venue, timestamp)` triples.
    pub fn from_parts(
        venues: Vec<Venue>,
        checkins: Vec<RawCheckIn>,
        edges: Vec<(String, String)>,
        timezone_offset_minutes: i32,
    ) -> Result<Self> {
        let mut venues = venues;
        for v in &venues {
            validate_venue(v)?;
        }
        venues.sort_by(|a, b| a.id.cmp(&b.id));
        for w in venues.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::DuplicateVenue(w[0].id.clone()));
            }
        }
        let venue_index: HashMap<String, VenueIdx> = venues
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), VenueIdx(i as u32)))
            .collect();

        let categories: Vec<String> = venues
            .iter()
            .map(|v| v.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let category_index: HashMap<&str, CategoryIdx> = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), CategoryIdx(i as u32)))
            .collect();
        let venue_category = venues
            .iter()
            .map(|v| category_index[v.category.as_str()])
            .collect();

        for (i, c) in checkins.iter().enumerate() {
            if !venue_index.contains_key(&c.venue_id) {
                return Err(Error::UnknownVenue {
                    venue: c.venue_id.clone(),
                    line: i as u64 + 2,
                });
            }
        }

        let mut user_set: BTreeSet<&str> = checkins.iter().map(|c| c.user_id.as_str()).collect();
        for (a, b) in &edges {
            user_set.insert(a);
            user_set.insert(b);
        }
        let users: Vec<String> = user_set.into_iter().map(str::to_owned).collect();
        let user_index: HashMap<String, UserIdx> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), UserIdx(i as u32)))
            .collect();

        let mut resolved: Vec<CheckIn> = checkins
            .iter()
            .map(|c| {
                let (local_day, local_hour) = local_day_hour(c.timestamp, timezone_offset_minutes);
                CheckIn {
                    user: user_index[&c.user_id],
                    venue: venue_index[&c.venue_id],
                    timestamp: c.timestamp,
                    local_day,
                    local_hour,
                }
            })
            .collect();
        resolved.sort_by_key(|c| (c.timestamp, c.user, c.venue));
        resolved.dedup_by_key(|c| (c.timestamp, c.user, c.venue));

        let mut by_user = vec![Vec::new(); users.len()];
        for c in &resolved {
            by_user[c.user.index()].push(*c);
        }

        let mut friend_sets = vec![BTreeSet::new(); users.len()];
        for (a, b) in &edges {
            let (a, b) = (user_index[a], user_index[b]);
            if a != b {
                friend_sets[a.index()].insert(b);
                friend_sets[b.index()].insert(a);
            }
        }
        let friends = friend_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();

        Ok(Corpus {
            users,
            user_index,
            venues,
            venue_index,
            venue_category,
            categories,
            checkins: resolved,
            by_user,
            friends,
            timezone_offset_minutes,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> impl ExactSizeIterator<Item = UserIdx> {
        (0..self.users.len() as u32).map(UserIdx)
    }

    pub fn user_id(&self, u: UserIdx) -> &str {
        &self.users[u.index()]
    }

    pub fn user_idx(&self, id: &str) -> Option<UserIdx> {
        self.user_index.get(id).copied()
    }

    pub fn venues(&self) -> &[Venue] {
        &self.venues
    }

    pub fn venue(&self, v: VenueIdx) -> &Venue {
        &self.venues[v.index()]
    }

    pub fn venue_idx(&self, id: &str) -> Option<VenueIdx> {
        self.venue_index.get(id).copied()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_name(&self, c: CategoryIdx) -> &str {
        &self.categories[c.index()]
    }

    pub fn category_idx(&self, name: &str) -> Option<CategoryIdx> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(name))
            .ok()
            .map(|i| CategoryIdx(i as u32))
    }

    pub fn category_of(&self, v: VenueIdx) -> CategoryIdx {
        self.venue_category[v.index()]
    }

    /// All check-ins sorted by `(timestamp, user, venue)`.
    pub fn checkins(&self) -> &[CheckIn] {
        &self.checkins
    }

    pub fn user_checkins(&self, u: UserIdx) -> &[CheckIn] {
        &self.by_user[u.index()]
    }

    pub fn friends(&self, u: UserIdx) -> &[UserIdx] {
        &self.friends[u.index()]
    }

    pub fn are_friends(&self, a: UserIdx, b: UserIdx) -> bool {
        self.friends[a.index()].binary_search(&b).is_ok()
    }

    pub fn timezone_offset_minutes(&self) -> i32 {
        self.timezone_offset_minutes
    }

    /// The user's check-ins with `local_day < cutoff_day`, in timestamp order.
    ///
    /// Local days are non-decreasing in timestamp, so this is a prefix.
    pub fn user_checkins_before(&self, u: UserIdx, cutoff_day: NaiveDate) -> &[CheckIn] {
        let all = &self.by_user[u.index()];
        &all[..all.partition_point(|c| c.local_day < cutoff_day)]
    }

    /// Like [`Corpus::user_checkins_before`] but by id; unknown users yield
    /// an empty slice.
    pub fn checkins_before(&self, user: &str, cutoff_day: NaiveDate) -> &[CheckIn] {
        match self.user_idx(user) {
            Some(u) => self.user_checkins_before(u, cutoff_day),
            None => &[],
        }
    }

    /// Writes the three corpus files in their load formats.
    pub fn write_files(&self, checkins_path: &Path, venues_path: &Path, social_path: &Path) -> Result<()> {
        let mut w = csv_writer(venues_path)?;
        w.write_record(VENUES_HEADER).map_err(|e| csv_io(venues_path, e))?;
        for v in &self.venues {
            w.write_record([v.id.as_str(), &v.lat.to_string(), &v.lon.to_string(), &v.category])
                .map_err(|e| csv_io(venues_path, e))?;
        }
        w.flush().map_err(|e| Error::io(venues_path, e))?;

        let mut w = csv_writer(checkins_path)?;
        w.write_record(CHECKINS_HEADER).map_err(|e| csv_io(checkins_path, e))?;
        for c in &self.checkins {
            w.write_record([
                self.user_id(c.user),
                &self.venues[c.venue.index()].id,
                &format_timestamp(c.timestamp),
            ])
            .map_err(|e| csv_io(checkins_path, e))?;
        }
        w.flush().map_err(|e| Error::io(checkins_path, e))?;

        let mut w = csv_writer(social_path)?;
        w.write_record(SOCIAL_HEADER).map_err(|e| csv_io(social_path, e))?;
        for (a, fs) in self.friends.iter().enumerate() {
            for b in fs.iter().filter(|b| b.index() > a) {
                w.write_record([self.users[a].as_str(), self.user_id(*b)])
                    .map_err(|e| csv_io(social_path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(social_path, e))?;
        Ok(())
    }
}

fn validate_venue(v: &Venue) -> Result<()> {
    let in_range = (-90.0..=90.0).contains(&v.lat) && (-180.0..=180.0).contains(&v.lon);
    if !in_range {
        return Err(Error::Coordinate {
            venue: v.id.clone(),
            lat: v.lat,
            lon: v.lon,
        });
    }
    if v.category.is_empty() {
        return Err(Error::EmptyCategory(v.id.clone()));
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::io::BufWriter::new(f)))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn csv_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let found = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn parse_err(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn records(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv_reader(path, header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// Loads and validates a corpus from its three CSV files.
pub fn load_corpus(
    checkins_path: impl AsRef<Path>,
    venues_path: impl AsRef<Path>,
    social_path: impl AsRef<Path>,
    timezone_offset_minutes: i32,
) -> Result<Corpus> {
    let (checkins_path, venues_path, social_path) =
        (checkins_path.as_ref(), venues_path.as_ref(), social_path.as_ref());

    let mut venues = Vec::new();
    for (line, rec) in records(venues_path, &VENUES_HEADER)? {
        let num = |i: usize, what: &str| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(venues_path, line, format!("invalid {what} {:?}", &rec[i])))
        };
        let venue = Venue {
            id: rec[0].to_owned(),
            lat: num(1, "lat")?,
            lon: num(2, "lon")?,
            category: rec[3].to_owned(),
        };
        validate_venue(&venue)?;
        venues.push(venue);
    }
    let known: std::collections::HashSet<&str> = venues.iter().map(|v| v.id.as_str()).collect();

    let mut checkins = Vec::new();
    for (line, rec) in records(checkins_path, &CHECKINS_HEADER)? {
        if !known.contains(&rec[1]) {
            return Err(Error::UnknownVenue {
                venue: rec[1].to_owned(),
                line,
            });
        }
        let timestamp = parse_timestamp(rec[2].trim())
            .ok_or_else(|| parse_err(checkins_path, line, format!("invalid timestamp {:?}", &rec[2])))?;
        checkins.push(RawCheckIn {
            user_id: rec[0].to_owned(),
            venue_id: rec[1].to_owned(),
            timestamp,
        });
    }

    let edges = records(social_path, &SOCIAL_HEADER)?
        .into_iter()
        .map(|(_, rec)| (rec[0].to_owned(), rec[1].to_owned()))
        .collect();

    Corpus::from_parts(venues, checkins, edges, timezone_offset_minutes)
}

/// Writes any serializable rows as JSON lines.
pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn small(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let v = write(dir, "v.csv", "venue_id,lat,lon,category\nv1,51.5,-0.1,Bar\nv2,51.51,-0.11,Gym\n");
        let c = write(
            dir,
            "c.csv",
            "user_id,venue_id,timestamp\nalice,v1,2011-05-28T20:00:00Z\nbob,v2,2011-05-27T09:15:00Z\nalice,v2,2011-05-26T23:59:59Z\n",
        );
        let s = write(dir, "s.csv", "user_a,user_b\nalice,bob\n");
        (c, v, s)
    }

    #[test]
    fn loads_small_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let (c, v, s) = small(dir.path());
        let corpus = load_corpus(&c, &v, &s, 0).unwrap();
        assert_eq!(corpus.n_users(), 2);
        assert_eq!(corpus.venues().len(), 2);
        assert_eq!(corpus.checkins().len(), 3);
        assert_eq!(corpus.categories(), ["Bar", "Gym"]);
    }

    #[test]
    fn social_edges_are_symmetrized() {
        let dir = tempfile::tempdir().unwrap();
        let (c, v, s) = small(dir.path());
        let corpus = load_corpus(&c, &v, &s, 0).unwrap();
        let a = corpus.user_idx("alice").unwrap();
        let b = corpus.user_idx("bob").unwrap();
        assert_eq!(corpus.friends(a), [b]);
        assert_eq!(corpus.friends(b), [a]);
    }

    #[test]
    fn self_loops_dropped_and_social_only_users_kept() {
        let corpus = Corpus::from_parts(
            vec![Venue { id: "v".into(), lat: 0.0, lon: 0.0, category: "Bar".into() }],
            vec![],
            vec![("x".into(), "x".into()), ("y".into(), "z".into()), ("z".into(), "y".into())],
            0,
        )
        .unwrap();
        assert_eq!(corpus.n_users(), 3);
        let x = corpus.user_idx("x").unwrap();
        assert!(corpus.friends(x).is_empty());
        assert_eq!(corpus.friends(corpus.user_idx("y").unwrap()).len(), 1);
    }

    #[test]
    fn unknown_venue_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (_, v, s) = small(dir.path());
        let c = write(dir.path(), "bad.csv", "user_id,venue_id,timestamp\nalice,v1,2011-05-28T20:00:00Z\nalice,vX,2011-05-28T20:00:00Z\n");
        match load_corpus(&c, &v, &s, 0) {
            Err(Error::UnknownVenue { venue, line }) => {
                assert_eq!(venue, "vX");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (c, _, s) = small(dir.path());
        let v = write(dir.path(), "v2.csv", "venue_id,lat,lon,category\nv1,91.0,0,Bar\nv2,0,0,Gym\n");
        assert!(matches!(load_corpus(&c, &v, &s, 0), Err(Error::Coordinate { .. })));
    }

    #[test]
    fn parse_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let (_, v, s) = small(dir.path());
        let c = write(dir.path(), "c2.csv", "user_id,venue_id,timestamp\nalice,v1,2011-05-28T20:00:00Z\nbob,v1,yesterday\n");
        match load_corpus(&c, &v, &s, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_header = write(dir.path(), "c3.csv", "user,venue,ts\n");
        assert!(matches!(load_corpus(&bad_header, &v, &s, 0), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_triples_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let (_, v, s) = small(dir.path());
        let c = write(
            dir.path(),
            "dup.csv",
            "user_id,venue_id,timestamp\nalice,v1,2011-05-28T20:00:00Z\nalice,v1,2011-05-28T20:00:00Z\nalice,v1,2011-05-28T20:00:01Z\n",
        );
        assert_eq!(load_corpus(&c, &v, &s, 0).unwrap().checkins().len(), 2);
    }

    #[test]
    fn timezone_offset_shifts_day_and_hour() {
        let ts = parse_timestamp("2011-05-28T23:30:00Z").unwrap();
        let (d, h) = local_day_hour(ts, 0);
        assert_eq!((d, h), (NaiveDate::from_ymd_opt(2011, 5, 28).unwrap(), 23));
        let (d, h) = local_day_hour(ts, 60);
        assert_eq!((d, h), (NaiveDate::from_ymd_opt(2011, 5, 29).unwrap(), 0));
        let (d, h) = local_day_hour(ts, -300);
        assert_eq!((d, h), (NaiveDate::from_ymd_opt(2011, 5, 28).unwrap(), 18));
    }

    #[test]
    fn checkins_before_is_strict() {
        let day = |d| NaiveDate::from_ymd_opt(2011, 5, d).unwrap();
        let ts = |d: u32| parse_timestamp(&format!("2011-05-{d:02}T12:00:00Z")).unwrap();
        let corpus = Corpus::from_parts(
            vec![Venue { id: "v".into(), lat: 0.0, lon: 0.0, category: "Bar".into() }],
            [8, 9, 10]
                .into_iter()
                .map(|d| RawCheckIn { user_id: "u".into(), venue_id: "v".into(), timestamp: ts(d) })
                .collect(),
            vec![("w".into(), "x".into())],
            0,
        )
        .unwrap();
        let before = corpus.checkins_before("u", day(10));
        assert_eq!(before.len(), 2);
        assert!(before.iter().all(|c| c.local_day < day(10)));
        assert!(corpus.checkins_before("w", day(10)).is_empty());
        assert!(corpus.checkins_before("u", day(1)).is_empty());
        assert!(corpus.checkins_before("nobody", day(10)).is_empty());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (c, v, s) = small(dir.path());
        let corpus = load_corpus(&c, &v, &s, 90).unwrap();
        let (c2, v2, s2) = (dir.path().join("c2"), dir.path().join("v2"), dir.path().join("s2"));
        corpus.write_files(&c2, &v2, &s2).unwrap();
        assert_eq!(load_corpus(&c2, &v2, &s2, 90).unwrap(), corpus);
    }
}
