//! Mining organized events from check-in corpora and ranking which events a
//! user is likely to attend.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`corpus`]: load and index check-ins, venues and the friendship graph.
//! - [`eventmine`]: detect venue-day anomalies and expand them into events.
//! - [`profiles`]: category TF-IDF vectors, hourly histograms and homes, built
//!   strictly from check-ins before an event's day.
//! - [`scorers`]: the five direct participation features and per-user ranking.
//! - [`rwrgraph`]: the user/category/event graph and random walk with restart.
//! - [`evalharness`]: stratified cross-validation, NDCG and accuracy metrics,
//!   niche-event correlation analysis.
//! - [`fusion`]: ridge regression and model trees over the feature scores.
//! - [`synthgen`]: seeded synthetic corpora with planted events.

pub mod corpus;
pub mod error;
pub mod evalharness;
pub mod eventmine;
pub mod fusion;
pub mod geo;
pub mod profiles;
pub mod rng;
pub mod rwrgraph;
pub mod scorers;
pub mod synthgen;

pub use corpus::{CategoryIdx, CheckIn, Corpus, UserIdx, Venue, VenueIdx};
pub use error::{Error, Result};
pub use eventmine::{EventIdx, EventRecord, Events};
