//! Ranked prediction lists and the ranking metrics computed on them.

use serde::Serialize;

use crate::corpus::UserIdx;
use crate::eventmine::EventIdx;

/// One user's events in predicted order, with the events they truly attended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PredictionList {
    user: UserIdx,
    ranking: Vec<EventIdx>,
    /// Sorted; always a subset of `ranking`.
    relevant: Vec<EventIdx>,
}

impl PredictionList {
    /// `ranking` must not repeat an event.
    pub fn new(user: UserIdx, ranking: Vec<EventIdx>) -> Self {
        debug_assert!({
            let mut s = ranking.clone();
            s.sort_unstable();
            s.windows(2).all(|w| w[0] != w[1])
        });
        PredictionList {
            user,
            ranking,
            relevant: Vec::new(),
        }
    }

    /// Marks the given events relevant; events not in the ranking are ignored.
    pub fn with_relevance(mut self, relevant: impl IntoIterator<Item = EventIdx>) -> Self {
        let mut rel: Vec<EventIdx> = relevant.into_iter().filter(|e| self.ranking.contains(e)).collect();
        rel.sort_unstable();
        rel.dedup();
        self.relevant = rel;
        self
    }

    pub fn user(&self) -> UserIdx {
        self.user
    }

    pub fn ranking(&self) -> &[EventIdx] {
        &self.ranking
    }

    pub fn len(&self) -> usize {
        self.ranking.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }

    /// 1-based rank of `e`.
    pub fn rank_of(&self, e: EventIdx) -> Option<usize> {
        self.ranking.iter().position(|&x| x == e).map(|i| i + 1)
    }

    pub fn is_relevant(&self, e: EventIdx) -> bool {
        self.relevant.binary_search(&e).is_ok()
    }

    pub fn relevant(&self) -> &[EventIdx] {
        &self.relevant
    }

    /// 1-based rank of the best-ranked relevant event.
    pub fn first_relevant_rank(&self) -> Option<usize> {
        self.ranking.iter().position(|e| self.is_relevant(*e)).map(|i| i + 1)
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((1 + rank) as f64).log2()
}

/// Discounted cumulative gain over the top `n`, normalized by the gain of the
/// ideal ordering. Lists with no relevant event score 0.
pub fn ndcg_at(list: &PredictionList, n: usize) -> f64 {
    let ideal: f64 = (1..=n.min(list.relevant.len())).map(discount).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = list
        .ranking
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, e)| list.is_relevant(**e))
        .map(|(i, _)| discount(i + 1))
        .sum();
    dcg / ideal
}

/// Whether some relevant event is ranked within the top `n`.
pub fn accuracy_at(list: &PredictionList, n: usize) -> bool {
    list.first_relevant_rank().is_some_and(|r| r <= n)
}

/// `ceil(pct / 100 * n_items)`, at least 1.
///
/// The small slack absorbs products like `0.05 * 60 = 3.0000000000000004`.
pub fn pct_cutoff(n_items: usize, pct: f64) -> usize {
    ((pct / 100.0 * n_items as f64 - 1e-9).ceil() as usize).max(1)
}

pub fn accuracy_at_pct(list: &PredictionList, pct: f64) -> bool {
    accuracy_at(list, pct_cutoff(list.len(), pct))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(n: u32, relevant: &[u32]) -> PredictionList {
        PredictionList::new(UserIdx(0), (0..n).map(EventIdx).collect())
            .with_relevance(relevant.iter().map(|&e| EventIdx(e)))
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at(&list(10, &[0]), 10), 1.0);
        assert!((ndcg_at(&list(10, &[1]), 10) - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(ndcg_at(&list(20, &[15]), 10), 0.0);
        assert_eq!(ndcg_at(&list(20, &[]), 10), 0.0);
    }

    #[test]
    fn ndcg_with_two_relevant() {
        // relevant at ranks 1 and 3: (1 + 1/2) / (1 + 1/log2 3)
        let got = ndcg_at(&list(10, &[0, 2]), 10);
        let want = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert!(accuracy_at(&list(10, &[2]), 5));
        assert!(!accuracy_at(&list(10, &[6]), 5));
        assert!(!accuracy_at(&list(10, &[]), 10));
    }

    #[test]
    fn pct_cutoff_uses_ceiling() {
        assert_eq!(pct_cutoff(60, 5.0), 3);
        assert_eq!(pct_cutoff(41, 5.0), 3);
        assert_eq!(pct_cutoff(20, 5.0), 1);
        assert_eq!(pct_cutoff(7, 100.0), 7);
        assert!(accuracy_at_pct(&list(7, &[6]), 100.0));
    }

    #[test]
    fn relevance_ignores_unranked_events() {
        let l = list(3, &[1, 9]);
        assert_eq!(l.relevant(), [EventIdx(1)]);
        assert_eq!(l.rank_of(EventIdx(2)), Some(3));
        assert_eq!(l.first_relevant_rank(), Some(2));
    }
}
