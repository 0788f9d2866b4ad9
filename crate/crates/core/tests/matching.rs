//! Database and matcher properties.

use contrafp_core::fingerprint::{Fingerprint, SubFingerprint};
use contrafp_core::matchdb::FingerprintDb;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

const DIM: usize = 16;

fn unit(r: &mut impl Rng) -> Vec<f32> {
    let v: Vec<f64> = (0..DIM).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn fp(r: &mut impl Rng, subs: usize) -> Fingerprint {
    Fingerprint {
        track_ref: String::new(),
        subs: (0..subs)
            .map(|i| SubFingerprint {
                vector: unit(r),
                offset_s: i as f64 * 2.125,
            })
            .collect(),
    }
}

fn db(seed: u64, tracks: usize, subs: usize) -> FingerprintDb {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut db = FingerprintDb::new(DIM);
    for t in 0..tracks {
        db.add_track(&fp(&mut r, subs), &format!("t{t}")).unwrap();
    }
    db
}

/// Brute force in f64 with the same lowest-row tie rule.
fn oracle(db: &FingerprintDb, q: &[f32]) -> (usize, f64) {
    let qn = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let mut best = (0, f64::NEG_INFINITY);
    for r in 0..db.num_rows() {
        let row = db.row(r);
        let dot: f64 = row.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
        let rn = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let s = dot / (qn * rn);
        if s > best.1 {
            best = (r, s);
        }
    }
    best
}

#[test]
fn empty_database_rules() {
    let mut d = FingerprintDb::new(DIM);
    assert!(d.nearest(&[1.0; DIM]).is_err());
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    assert!(d.add_track(&fp(&mut r, 0), "empty").is_err());
    let id = d.add_track(&fp(&mut r, 4), "a").unwrap();
    assert_eq!((d.tracks().len(), d.num_rows()), (1, 4));
    // the same fingerprint twice is fine: no deduplication
    let twice = fp(&mut r, 3);
    let b = d.add_track(&twice, "b").unwrap();
    let c = d.add_track(&twice, "c").unwrap();
    assert!(id < b && b < c);
    assert_eq!(d.num_rows(), 10);
}

#[test]
fn fifty_by_four_gives_two_hundred_rows() {
    assert_eq!(db(1, 50, 4).num_rows(), 200);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nearest_matches_the_oracle(seed in any::<u64>()) {
        let d = db(seed, 20, 5);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..20 {
            let q = unit(&mut r);
            let (row, sim) = d.nearest(&q).unwrap();
            let (orow, osim) = oracle(&d, &q);
            prop_assert!((sim - osim).abs() < 1e-9);
            prop_assert!(row == orow || (d.row(row).to_vec() == d.row(orow).to_vec()));
        }
    }

    #[test]
    fn identify_ignores_query_order(seed in any::<u64>(), subs in 1usize..8) {
        let d = db(seed, 6, 4);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let mut q = fp(&mut r, subs);
        let a = d.identify(&q).unwrap();
        q.subs.reverse();
        let b = d.identify(&q).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.track_id, x.votes), (y.track_id, y.votes));
            prop_assert!((x.total_similarity - y.total_similarity).abs() < 1e-9);
        }
        prop_assert_eq!(a.iter().map(|m| m.votes).sum::<usize>(), subs);
        for w in a.windows(2) {
            prop_assert!(w[0].votes >= w[1].votes);
        }
    }

    #[test]
    fn adding_a_track_only_steals_beaten_winners(seed in any::<u64>()) {
        let mut d = db(seed, 8, 3);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xABC);
        let queries: Vec<Vec<f32>> = (0..30).map(|_| unit(&mut r)).collect();
        let before: Vec<_> = queries.iter().map(|q| d.nearest(q).unwrap()).collect();
        let old_rows = d.num_rows();
        d.add_track(&fp(&mut r, 3), "late").unwrap();
        for (q, (row, sim)) in queries.iter().zip(before) {
            let (row2, sim2) = d.nearest(q).unwrap();
            if row2 < old_rows {
                prop_assert_eq!((row2, sim2), (row, sim));
            } else {
                prop_assert!(sim2 > sim);
            }
        }
    }
}
