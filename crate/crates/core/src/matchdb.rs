//! Reference database and vote-based identification.
//!
//! Search is an exact linear scan: every stored row is scored by cosine
//! similarity with the query sub-fingerprint. Each query sub-fingerprint
//! votes for the track owning its nearest row and the track with the most
//! votes wins.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::fingerprint::Fingerprint;
use crate::{Error, Result};

/// Rows must have unit norm within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-4;
const BLOCK_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackEntry {
    pub id: u32,
    pub name: String,
    pub sub_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    dim: usize,
    tracks: Vec<TrackEntry>,
    matrix: Vec<f32>,
    row_owner: Vec<u32>,
    row_norm2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub track_id: u32,
    pub votes: usize,
    /// Sum of the nearest-neighbour similarities that voted for this track.
    pub total_similarity: f64,
    /// (row, similarity) of each query sub-fingerprint that voted for it.
    pub per_query_nn: Vec<(usize, f64)>,
}

fn norm2(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            acc[j] += x[j] as f64 * y[j] as f64;
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl FingerprintDb {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tracks: Vec::new(),
            matrix: Vec::new(),
            row_owner: Vec::new(),
            row_norm2: Vec::new(),
        }
    }

    /// Rebuilds a database from stored parts, checking every invariant.
    pub fn from_parts(
        dim: usize,
        tracks: Vec<TrackEntry>,
        matrix: Vec<f32>,
        row_owner: Vec<u32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        if matrix.len() != row_owner.len() * dim {
            return Err(Error::Input(format!(
                "{} matrix values for {} rows of {dim}",
                matrix.len(),
                row_owner.len()
            )));
        }
        let total: u64 = tracks.iter().map(|t| t.sub_count as u64).sum();
        if total != row_owner.len() as u64 {
            return Err(Error::Input(format!(
                "track table lists {total} rows, matrix has {}",
                row_owner.len()
            )));
        }
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for &o in &row_owner {
            *counts.entry(o).or_default() += 1;
        }
        for t in &tracks {
            if counts.remove(&t.id) != Some(t.sub_count).filter(|&c| c > 0) {
                return Err(Error::Input(format!(
                    "row ownership disagrees with track {}",
                    t.id
                )));
            }
        }
        if !counts.is_empty() {
            return Err(Error::Input("rows owned by unknown tracks".into()));
        }
        let row_norm2: Vec<f64> = matrix.chunks_exact(dim).map(norm2).collect();
        if let Some(i) = row_norm2
            .iter()
            .position(|n| !((n.sqrt() - 1.0).abs() <= ROW_TOLERANCE))
        {
            return Err(Error::Input(format!("row {i} is not unit norm")));
        }
        Ok(Self {
            dim,
            tracks,
            matrix,
            row_owner,
            row_norm2,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tracks(&self) -> &[TrackEntry] {
        &self.tracks
    }

    pub fn track(&self, id: u32) -> Option<&TrackEntry> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_owner(&self) -> &[u32] {
        &self.row_owner
    }

    pub fn num_rows(&self) -> usize {
        self.row_owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_owner.is_empty()
    }

    /// Appends a track's sub-fingerprints and returns its new id.
    pub fn add_track(&mut self, fp: &Fingerprint, name: &str) -> Result<u32> {
        if fp.subs.is_empty() {
            return Err(Error::Input(format!("fingerprint for {name:?} is empty")));
        }
        let mut norms = Vec::with_capacity(fp.subs.len());
        for (i, s) in fp.subs.iter().enumerate() {
            if s.vector.len() != self.dim {
                return Err(Error::Input(format!(
                    "sub {i} has dim {}, db has {}",
                    s.vector.len(),
                    self.dim
                )));
            }
            let n = norm2(&s.vector);
            if !((n.sqrt() - 1.0).abs() <= ROW_TOLERANCE) {
                return Err(Error::Input(format!(
                    "sub {i} is not unit norm ({})",
                    n.sqrt()
                )));
            }
            norms.push(n);
        }
        let id = self.tracks.last().map_or(0, |t| t.id + 1);
        self.tracks.push(TrackEntry {
            id,
            name: name.into(),
            sub_count: fp.subs.len() as u32,
        });
        for s in &fp.subs {
            self.matrix.extend_from_slice(&s.vector);
            self.row_owner.push(id);
        }
        self.row_norm2.extend(norms);
        Ok(id)
    }

    /// Exact nearest row by cosine similarity; ties go to the lowest row.
    pub fn nearest(&self, q: &[f32]) -> Result<(usize, f64)> {
        if self.is_empty() {
            return Err(Error::State(
                "nearest-neighbour search on an empty database".into(),
            ));
        }
        if q.len() != self.dim {
            return Err(Error::Input(format!(
                "query dim {} does not match db dim {}",
                q.len(),
                self.dim
            )));
        }
        let qn = norm2(q);
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut sims = [0.0f64; BLOCK_ROWS];
        for (b, block) in self.matrix.chunks(BLOCK_ROWS * self.dim).enumerate() {
            let base = b * BLOCK_ROWS;
            let rows = block.len() / self.dim;
            for (r, row) in block.chunks_exact(self.dim).enumerate() {
                // sqrt(x * x) == |x|, so a row matched with itself scores exactly 1
                sims[r] = dot(q, row) / (qn * self.row_norm2[base + r]).sqrt();
            }
            for (r, &s) in sims[..rows].iter().enumerate() {
                if s > best.1 {
                    best = (base + r, s);
                }
            }
        }
        if !best.1.is_finite() {
            return Err(Error::Numeric(
                "query has no finite similarity (zero vector?)".into(),
            ));
        }
        Ok(best)
    }

    /// Ranks tracks by nearest-neighbour votes of the query's
    /// sub-fingerprints: votes desc, then total similarity desc, then id asc.
    pub fn identify(&self, query: &Fingerprint) -> Result<Vec<MatchResult>> {
        if query.subs.is_empty() {
            return Err(Error::Input("query fingerprint is empty".into()));
        }
        let mut by_track: BTreeMap<u32, MatchResult> = BTreeMap::new();
        for s in &query.subs {
            let (row, sim) = self.nearest(&s.vector)?;
            let owner = self.row_owner[row];
            let entry = by_track.entry(owner).or_insert_with(|| MatchResult {
                track_id: owner,
                votes: 0,
                total_similarity: 0.0,
                per_query_nn: Vec::new(),
            });
            entry.votes += 1;
            entry.total_similarity += sim;
            entry.per_query_nn.push((row, sim));
        }
        let mut ranked: Vec<MatchResult> = by_track.into_values().collect();
        ranked.sort_by(rank_order);
        Ok(ranked)
    }
}

fn rank_order(a: &MatchResult, b: &MatchResult) -> Ordering {
    b.votes
        .cmp(&a.votes)
        .then_with(|| b.total_similarity.total_cmp(&a.total_similarity))
        .then_with(|| a.track_id.cmp(&b.track_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::SubFingerprint;
    use alloc::vec;

    fn fp(vectors: &[Vec<f32>]) -> Fingerprint {
        Fingerprint {
            track_ref: String::new(),
            subs: vectors
                .iter()
                .enumerate()
                .map(|(i, v)| SubFingerprint {
                    vector: v.clone(),
                    offset_s: i as f64 * 2.125,
                })
                .collect(),
        }
    }

    fn basis(i: usize, dim: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn add_and_count() {
        let mut db = FingerprintDb::new(4);
        let f = fp(&[basis(0, 4), basis(1, 4), basis(2, 4), basis(3, 4)]);
        assert_eq!(db.add_track(&f, "a").unwrap(), 0);
        assert_eq!((db.tracks().len(), db.num_rows()), (1, 4));
        assert_eq!(db.add_track(&f, "b").unwrap(), 1);
        assert_eq!((db.tracks().len(), db.num_rows()), (2, 8));
        assert!(db.add_track(&fp(&[]), "c").is_err());
        assert!(db.add_track(&fp(&[vec![2.0, 0.0, 0.0, 0.0]]), "d").is_err());
    }

    #[test]
    fn self_match_and_tie_break() {
        let mut db = FingerprintDb::new(4);
        db.add_track(&fp(&[basis(1, 4), basis(2, 4), basis(3, 4)]), "a")
            .unwrap();
        let (row, sim) = db.nearest(&basis(2, 4)).unwrap();
        assert_eq!((row, sim), (1, 1.0));
        let (row, sim) = db.nearest(&basis(0, 4)).unwrap();
        assert_eq!((row, sim), (0, 0.0));
        assert!(matches!(
            FingerprintDb::new(4).nearest(&basis(0, 4)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn majority_vote() {
        let mut db = FingerprintDb::new(2);
        db.add_track(&fp(&[vec![1.0, 0.0]]), "A").unwrap();
        db.add_track(&fp(&[vec![0.0, 1.0]]), "B").unwrap();
        let q = fp(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let r = db.identify(&q).unwrap();
        assert_eq!((r[0].track_id, r[0].votes, r[1].votes), (0, 3, 2));
    }

    #[test]
    fn similarity_breaks_vote_ties() {
        let mut db = FingerprintDb::new(2);
        db.add_track(&fp(&[vec![1.0, 0.0]]), "A").unwrap();
        db.add_track(&fp(&[vec![0.0, 1.0]]), "B").unwrap();
        let unit = |a: f32| vec![a.cos(), a.sin()];
        // A at similarity cos(0.1), B at cos(0.3)
        let q = fp(&[unit(0.1), unit(core::f32::consts::FRAC_PI_2 - 0.3)]);
        let r = db.identify(&q).unwrap();
        assert_eq!(r[0].track_id, 0);
        let q = fp(&[unit(0.3), unit(core::f32::consts::FRAC_PI_2 - 0.1)]);
        assert_eq!(db.identify(&q).unwrap()[0].track_id, 1);
    }

    #[test]
    fn parts_are_validated() {
        let t = vec![TrackEntry {
            id: 0,
            name: "a".into(),
            sub_count: 1,
        }];
        assert!(FingerprintDb::from_parts(2, t.clone(), vec![1.0, 0.0], vec![0]).is_ok());
        assert!(FingerprintDb::from_parts(2, t.clone(), vec![1.0, 0.0], vec![1]).is_err());
        assert!(FingerprintDb::from_parts(2, t.clone(), vec![3.0, 0.0], vec![0]).is_err());
        assert!(FingerprintDb::from_parts(2, t, vec![1.0], vec![0]).is_err());
        assert!(FingerprintDb::from_parts(2, vec![], vec![], vec![])
            .unwrap()
            .is_empty());
    }
}
