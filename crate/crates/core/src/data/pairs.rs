use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::ranker::check_label;

/// A pair of manifest entries by index with its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub left: usize,
    pub right: usize,
    /// Label times two (0, 1 or 2) so the type stays `Eq`.
    half_y: u8,
}

impl PairIndex {
    pub fn new(left: usize, right: usize, y: f64) -> Result<Self> {
        check_label(y)?;
        Ok(PairIndex {
            left,
            right,
            half_y: (y * 2.0) as u8,
        })
    }

    pub fn y(&self) -> f64 {
        f64::from(self.half_y) / 2.0
    }

    pub fn swapped(&self) -> Self {
        PairIndex {
            left: self.right,
            right: self.left,
            half_y: 2 - self.half_y,
        }
    }
}

/// 1 when `left > right`, 0 when less, 0.5 on equality.
pub fn pair_label(left: f64, right: f64) -> f64 {
    if left > right {
        1.0
    } else if left < right {
        0.0
    } else {
        0.5
    }
}

/// Decodes `k ∈ [0, n(n−1)/2)` into the `k`-th unordered pair `(i, j)`, `i < j`,
/// in row-major order of the strict upper triangle.
fn unrank(k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    let mut rest = k;
    loop {
        let row = n - 1 - i;
        if rest < row {
            return (i, i + 1 + rest);
        }
        rest -= row;
        i += 1;
    }
}

/// Samples up to `max_pairs` distinct unordered pairs uniformly without
/// replacement, with random order inside each pair and labels from scores.
pub fn make_pairs(manifest: &Manifest, max_pairs: usize, rng: &mut Rng) -> Result<Vec<PairIndex>> {
    let n = manifest.len();
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 images to form pairs, got {n}")));
    }
    let total = n * (n - 1) / 2;
    let k = max_pairs.min(total);
    let mut picked = rand::seq::index::sample(rng.raw(), total, k).into_vec();
    // Unranking is linear in n, so walk the sorted ranks once.
    picked.sort_unstable();
    let mut pairs = Vec::with_capacity(k);
    let (mut row, mut row_start) = (0usize, 0usize);
    for r in picked {
        while r >= row_start + (n - 1 - row) {
            row_start += n - 1 - row;
            row += 1;
        }
        let (i, j) = (row, row + 1 + (r - row_start));
        debug_assert_eq!((i, j), unrank(r, n));
        let (l, rr) = if rng.coin() { (j, i) } else { (i, j) };
        let y = pair_label(manifest.entries[l].score, manifest.entries[rr].score);
        pairs.push(PairIndex::new(l, rr, y)?);
    }
    rng.shuffle(&mut pairs);
    Ok(pairs)
}

/// Exported pair: image paths and label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub left: PathBuf,
    pub right: PathBuf,
    pub y: f64,
}

pub fn pair_records(manifest: &Manifest, pairs: &[PairIndex]) -> Vec<PairRecord> {
    pairs
        .iter()
        .map(|p| PairRecord {
            left: manifest.entries[p.left].path.clone(),
            right: manifest.entries[p.right].path.clone(),
            y: p.y(),
        })
        .collect()
}

pub fn save_pairs(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("pair serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines pair list; relative paths resolve against the
/// file's directory.
pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut r: PairRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        check_label(r.y).map_err(|e| parse_err(e.to_string()))?;
        for p in [&mut r.left, &mut r.right] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManifestEntry;
    use std::collections::HashSet;

    fn manifest(scores: &[f64]) -> Manifest {
        Manifest::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ManifestEntry {
                    path: PathBuf::from(format!("{i}.png")),
                    score: s,
                    category: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn labels_follow_scores() {
        assert_eq!(pair_label(3.0, 1.0), 1.0);
        assert_eq!(pair_label(1.0, 3.0), 0.0);
        assert_eq!(pair_label(2.0, 2.0), 0.5);
        let p = PairIndex::new(0, 1, 1.0).unwrap();
        assert_eq!(p.swapped(), PairIndex::new(1, 0, 0.0).unwrap());
        assert!(PairIndex::new(0, 1, 0.2).is_err());
    }

    #[test]
    fn all_pairs_when_budget_exceeds() {
        let m = manifest(&[0.1, 0.5, 0.3, 0.3, 0.9]);
        let pairs = make_pairs(&m, 100, &mut Rng::new(1)).unwrap();
        assert_eq!(pairs.len(), 10);
        let unordered: HashSet<_> = pairs.iter().map(|p| (p.left.min(p.right), p.left.max(p.right))).collect();
        assert_eq!(unordered.len(), 10);
        for p in &pairs {
            let (a, b) = (m.entries[p.left].score, m.entries[p.right].score);
            assert_eq!(p.y(), pair_label(a, b));
        }
        assert!(pairs.iter().any(|p| p.y() == 0.5));
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let m = manifest(&(0..50).map(f64::from).collect::<Vec<_>>());
        let a = make_pairs(&m, 300, &mut Rng::new(7)).unwrap();
        let b = make_pairs(&m, 300, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        let set: HashSet<_> = a.iter().map(|p| (p.left.min(p.right), p.left.max(p.right))).collect();
        assert_eq!(set.len(), 300);
        // Both orders occur.
        let ones = a.iter().filter(|p| p.y() == 1.0).count();
        assert!(ones > 100 && ones < 200, "{ones}");
    }

    #[test]
    fn unrank_enumerates_upper_triangle() {
        let n = 6;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(unrank(k, n), (i, j));
                k += 1;
            }
        }
    }

    #[test]
    fn pair_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            PairRecord { left: "x.png".into(), right: dir.path().join("y.png"), y: 0.5 },
            PairRecord { left: dir.path().join("z.png"), right: "x.png".into(), y: 1.0 },
        ];
        let p = dir.path().join("pairs.jsonl");
        save_pairs(&p, &recs).unwrap();
        let back = load_pairs(&p).unwrap();
        assert_eq!(back[0].left, dir.path().join("x.png"));
        assert_eq!(back[1].right, dir.path().join("x.png"));
        assert_eq!(back[1].left, recs[1].left);
        fs::write(&p, "{\"left\":\"a\",\"right\":\"b\",\"y\":0.3}\n").unwrap();
        assert!(matches!(load_pairs(&p), Err(Error::Parse { line: 1, .. })));
    }
}
