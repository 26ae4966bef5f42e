//! Anomaly detection and event mining on generated corpora.

use proptest::prelude::*;

use eventlens::corpus::RawCheckIn;
use eventlens::eventmine::{detect_anomalies, mine_events, MineParams};
use eventlens::synthgen::{generate, SynthConfig};
use eventlens::Corpus;

fn corpus(seed: u64) -> Corpus {
    let cfg = SynthConfig {
        n_users: 250,
        n_venues: 50,
        n_categories: 10,
        n_days: 30,
        n_events: 5,
        attendees_min: 15,
        attendees_max: 25,
        popularity_attendees_max: 50,
        n_rare_categories: 2,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).unwrap().corpus
}

fn parts(c: &Corpus) -> (Vec<eventlens::Venue>, Vec<RawCheckIn>, Vec<(String, String)>) {
    let checkins = c
        .checkins()
        .iter()
        .map(|x| RawCheckIn {
            user_id: c.user_id(x.user).to_owned(),
            venue_id: c.venue(x.venue).id.clone(),
            timestamp: x.timestamp,
        })
        .collect();
    let edges = c
        .users()
        .flat_map(|u| c.friends(u).iter().filter(move |&&f| u < f).map(move |&f| (u, f)))
        .map(|(u, f)| (c.user_id(u).to_owned(), c.user_id(f).to_owned()))
        .collect();
    (c.venues().to_vec(), checkins, edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn detection_ignores_input_order(seed in 0u64..500, order in any::<u64>()) {
        let base = corpus(seed);
        let (mut venues, mut checkins, mut edges) = parts(&base);
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(order);
        venues.shuffle(&mut rng);
        checkins.shuffle(&mut rng);
        edges.shuffle(&mut rng);
        let shuffled = Corpus::from_parts(venues, checkins, edges, 0).unwrap();
        prop_assert_eq!(detect_anomalies(&base, 2.0).unwrap(), detect_anomalies(&shuffled, 2.0).unwrap());
        let p = MineParams::default();
        prop_assert_eq!(mine_events(&base, &p).unwrap(), mine_events(&shuffled, &p).unwrap());
    }
}

#[test]
fn mined_events_respect_limits_and_scope() {
    let c = corpus(2);
    let p = MineParams { top_k: 7, ..MineParams::default() };
    let events = mine_events(&c, &p).unwrap();
    assert!(events.len() <= 7);
    for e in &events {
        assert!(e.places.contains(&e.anchor_venue));
        assert!(e.attendees.windows(2).all(|w| w[0] < w[1]));
        for &v in &e.places {
            let d = eventlens::geo::haversine_m(c.venue(v).coords(), c.venue(e.anchor_venue).coords());
            assert!(d <= p.radius_m + 1e-6);
        }
        // every attendee checked in at one of the places that day
        for &u in &e.attendees {
            assert!(c
                .user_checkins(u)
                .iter()
                .any(|x| x.local_day == e.day && e.places.contains(&x.venue)));
        }
    }
    let mut keys: Vec<_> = events.iter().map(|e| (e.anchor_venue, e.day)).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), events.len());
}
