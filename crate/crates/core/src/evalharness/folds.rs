//! Per-event stratified fold assignment of attendees.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::corpus::UserIdx;
use crate::error::{Error, Result};
use crate::eventmine::{EventIdx, Events};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub fold_index: usize,
    /// Held-out attendees per event, indexed by [`EventIdx`], sorted.
    pub test: Vec<Vec<UserIdx>>,
    /// Remaining attendees per event, sorted.
    pub training: Vec<Vec<UserIdx>>,
    /// Every user held out for at least one event in this fold, sorted.
    pub test_users: Vec<UserIdx>,
}

impl FoldPlan {
    pub fn is_test_user(&self, u: UserIdx) -> bool {
        self.test_users.binary_search(&u).is_ok()
    }

    /// Attendees of `e` whose history may shape event-side inputs in this fold:
    /// the training attendees minus anyone held out for any event.
    pub fn profile_inputs(&self, e: EventIdx) -> Vec<UserIdx> {
        self.training[e.index()]
            .iter()
            .copied()
            .filter(|&u| !self.is_test_user(u))
            .collect()
    }

    /// Users not held out in this fold who attended at least one event.
    pub fn training_users(&self) -> Vec<UserIdx> {
        let mut users: Vec<UserIdx> = self.training.iter().flatten().copied().filter(|&u| !self.is_test_user(u)).collect();
        users.sort_unstable();
        users.dedup();
        users
    }
}

/// Shuffles each event's attendees with a seeded stream and deals them into
/// `n_folds` blocks whose sizes differ by at most one. The starting block is
/// rotated by event index so small events do not all test in fold 0.
pub fn make_folds(events: &Events, n_folds: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    if n_folds < 2 {
        return Err(Error::InvalidParameter(format!("n_folds must be >= 2, got {n_folds}")));
    }
    let n_events = events.len();
    let mut plans: Vec<FoldPlan> = (0..n_folds)
        .map(|f| FoldPlan {
            fold_index: f,
            test: vec![Vec::new(); n_events],
            training: vec![Vec::new(); n_events],
            test_users: Vec::new(),
        })
        .collect();
    for (e, rec) in events.iter() {
        let mut order = rec.attendees.clone();
        order.shuffle(&mut substream(seed, "folds", e.index() as u64));
        let offset = e.index() % n_folds;
        for (i, &u) in order.iter().enumerate() {
            let fold = (i + offset) % n_folds;
            for (f, plan) in plans.iter_mut().enumerate() {
                if f == fold {
                    plan.test[e.index()].push(u);
                } else {
                    plan.training[e.index()].push(u);
                }
            }
        }
    }
    for plan in &mut plans {
        for v in plan.test.iter_mut().chain(plan.training.iter_mut()) {
            v.sort_unstable();
        }
        let mut users: Vec<UserIdx> = plan.test.iter().flatten().copied().collect();
        users.sort_unstable();
        users.dedup();
        plan.test_users = users;
    }
    Ok(plans)
}
