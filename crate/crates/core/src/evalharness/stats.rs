//! Rank correlations and the niche-event analysis.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::CategoryIdx;
use crate::error::{Error, Result};
use crate::profiles::EventProfile;
use crate::rng::substream;

/// Kendall's tau between two strict orderings of the same items.
pub fn kendall_tau<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<f64> {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb || sa.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::ItemSetMismatch);
    }
    let m = a.len();
    if m < 2 {
        return Err(Error::InsufficientData);
    }
    // position in b of each item, listed in a's order
    let pos: Vec<usize> = a.iter().map(|x| b.iter().position(|y| y == x).unwrap()).collect();
    let mut score = 0i64;
    for i in 0..m {
        for j in i + 1..m {
            score += if pos[i] < pos[j] { 1 } else { -1 };
        }
    }
    Ok(score as f64 / (m * (m - 1) / 2) as f64)
}

/// 1-based ranks, tied values sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman's rho with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InsufficientData);
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::InsufficientData)
}

/// Two-sided permutation p-value for Spearman's rho, `(1 + hits) / (1 + n)`.
pub fn spearman_permutation_p(x: &[f64], y: &[f64], n_permutations: usize, seed: u64) -> Result<f64> {
    let observed = spearman(x, y)?.abs();
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let mut rng = substream(seed, "spearman-permutation", 0);
    let mut hits = 0usize;
    for _ in 0..n_permutations {
        ry.shuffle(&mut rng);
        let rho = pearson(&rx, &ry).unwrap_or(0.0);
        if rho.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_permutations) as f64)
}

/// Kendall's tau between an event's category ranking and the ranking of the
/// same categories by city-wide check-in totals. Low tau marks a niche event.
pub fn niche_tau(profile: &EventProfile, category_totals: &[u64]) -> Result<f64> {
    let mut by_event: Vec<(CategoryIdx, f64)> = profile.category_vector.entries().to_vec();
    by_event.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let a: Vec<CategoryIdx> = by_event.iter().map(|&(c, _)| c).collect();
    let mut b = a.clone();
    b.sort_by(|x, y| category_totals[y.index()].cmp(&category_totals[x.index()]).then(x.cmp(y)));
    kendall_tau(&a, &b)
}

pub struct NicheInput<'a> {
    pub event_id: &'a str,
    pub profile: &'a EventProfile,
    /// City-wide check-ins per category before the event day.
    pub category_totals: &'a [u64],
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NicheEntry {
    pub event_id: String,
    pub tau: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NicheReport {
    pub events: Vec<NicheEntry>,
    pub rho: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

/// Spearman correlation between per-event tau and per-event accuracy. Events
/// whose profile has fewer than two categories are left out.
pub fn niche_analysis(inputs: &[NicheInput<'_>], n_permutations: usize, seed: u64) -> Result<NicheReport> {
    let mut entries = Vec::new();
    for input in inputs {
        match niche_tau(input.profile, input.category_totals) {
            Ok(tau) => entries.push(NicheEntry {
                event_id: input.event_id.to_owned(),
                tau,
                accuracy: input.accuracy,
            }),
            Err(Error::InsufficientData) => continue,
            Err(err) => return Err(err),
        }
    }
    let tau: Vec<f64> = entries.iter().map(|x| x.tau).collect();
    let acc: Vec<f64> = entries.iter().map(|x| x.accuracy).collect();
    let rho = spearman(&tau, &acc)?;
    let p_value = spearman_permutation_p(&tau, &acc, n_permutations, seed)?;
    Ok(NicheReport {
        events: entries,
        rho,
        p_value,
        n_permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::CategoryVector;

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1, 2, 3], &[3, 2, 1]).unwrap(), -1.0);
        assert!((kendall_tau(&[1, 2, 3], &[1, 3, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_errors() {
        assert!(matches!(kendall_tau(&[1, 2], &[1, 3]), Err(Error::ItemSetMismatch)));
        assert!(matches!(kendall_tau(&[1, 1], &[1, 1]), Err(Error::ItemSetMismatch)));
        assert!(matches!(kendall_tau(&[1], &[1]), Err(Error::InsufficientData)));
    }

    #[test]
    fn average_ranks_for_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // no ties: 1 - 6 * sum d^2 / (n (n^2 - 1)) with d = (0, 1, -1, 0)
        assert!((spearman(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(spearman(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn permutation_p_bounds() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let p = spearman_permutation_p(&x, &y, 2000, 1).unwrap();
        assert!(p < 0.01, "{p}");
        let noise = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0, 8.0];
        let p2 = spearman_permutation_p(&x, &noise, 2000, 1).unwrap();
        assert!(p2 > p && p2 <= 1.0);
        assert_eq!(p, spearman_permutation_p(&x, &y, 2000, 1).unwrap());
    }

    fn profile(entries: &[(u32, f64)]) -> EventProfile {
        EventProfile {
            event_id: "e".into(),
            category_vector: CategoryVector::from_entries(entries.iter().map(|&(c, w)| (CategoryIdx(c), w))),
            built_from: vec![],
        }
    }

    #[test]
    fn niche_tau_against_global_popularity() {
        let totals = [100, 50, 10];
        assert_eq!(niche_tau(&profile(&[(0, 0.9), (1, 0.5), (2, 0.1)]), &totals).unwrap(), 1.0);
        assert_eq!(niche_tau(&profile(&[(0, 0.1), (1, 0.5), (2, 0.9)]), &totals).unwrap(), -1.0);
        assert!(niche_tau(&profile(&[(0, 0.1)]), &totals).is_err());
    }

    #[test]
    fn niche_analysis_needs_three_events() {
        let p = profile(&[(0, 0.9), (1, 0.5)]);
        let totals = [10, 5];
        let one = NicheInput {
            event_id: "e",
            profile: &p,
            category_totals: &totals,
            accuracy: 0.5,
        };
        let err = niche_analysis(&[one], 100, 0).unwrap_err();
        assert_eq!(err.to_string(), "insufficient data for correlation");
    }
}
