use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::load_image;
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<u32>,
}

/// Scored images. Paths are resolved (relative manifest paths are joined
/// onto the manifest's directory at load time).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    path: String,
    score: serde_json::Value,
    #[serde(default)]
    category: Option<u32>,
}

fn parse_score(v: &serde_json::Value) -> std::result::Result<f64, String> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| format!("score {n} is not representable")),
        // Non-finite values cannot be JSON numbers; accept their spellings
        // so they are rejected as invalid scores rather than as syntax.
        serde_json::Value::String(s) => s.trim().parse::<f64>().map_err(|_| format!("score {s:?} is not a number")),
        other => Err(format!("score must be a number, got {other}")),
    }
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Manifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_categories(&self) -> bool {
        self.entries.first().is_some_and(|e| e.category.is_some())
    }

    /// Number of distinct category ids (`max + 1`), 0 without categories.
    pub fn n_categories(&self) -> usize {
        self.entries
            .iter()
            .filter_map(|e| e.category)
            .max()
            .map_or(0, |m| m as usize + 1)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Validation(format!("duplicate path {}", e.path.display())));
            }
            if !e.score.is_finite() {
                return Err(Error::Validation(format!(
                    "score of {} is not finite ({})",
                    e.path.display(),
                    e.score
                )));
            }
        }
        let with = self.entries.iter().filter(|e| e.category.is_some()).count();
        if with != 0 && with != self.entries.len() {
            return Err(Error::Validation(format!(
                "{with} of {} entries have a category; either all or none must",
                self.entries.len()
            )));
        }
        Ok(())
    }

    /// Reads a JSON-lines manifest. Blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let raw: RawEntry = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let score = parse_score(&raw.score).map_err(parse_err)?;
            let p = PathBuf::from(&raw.path);
            let resolved = if p.is_absolute() { p } else { base.join(p) };
            entries.push(ManifestEntry {
                path: resolved,
                score,
                category: raw.category,
            });
        }
        let m = Manifest::new(entries)?;
        for e in &m.entries {
            if !e.path.is_file() {
                return Err(Error::io(&e.path, "image file not found"));
            }
        }
        Ok(m)
    }

    /// Writes the manifest as JSON lines, with paths relative to `path`'s
    /// directory when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = String::new();
        for e in &self.entries {
            let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
            let entry = ManifestEntry {
                path: rel.to_path_buf(),
                ..e.clone()
            };
            out.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_images(&self) -> Result<Vec<Tensor>> {
        self.entries.iter().map(|e| load_image(&e.path)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Seeded partition into train and test; `|train| = round(fraction · n)`.
pub fn split(manifest: &Manifest, spec: &SplitSpec) -> Result<(Manifest, Manifest)> {
    let n = manifest.len();
    if n < 2 {
        return Err(Error::Validation(format!("cannot split {n} entries")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(spec.seed).shuffle(&mut order);
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let (a, b) = order.split_at(n_train);
    Ok((manifest.subset(a), manifest.subset(b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images(dir: &Path, names: &[&str]) {
        for n in names {
            crate::data::save_image(&Tensor::zeros(&[1, 2, 2]), &dir.join(n)).unwrap();
        }
    }

    fn entries(n: usize) -> Manifest {
        Manifest::new(
            (0..n)
                .map(|i| ManifestEntry {
                    path: PathBuf::from(format!("{i}.png")),
                    score: i as f64,
                    category: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png", "c.png"]);
        let m = dir.path().join("m.jsonl");
        fs::write(
            &m,
            "{\"path\":\"a.png\",\"score\":1.5}\n\n{\"path\":\"b.png\",\"score\":-2}\n{\"path\":\"c.png\",\"score\":0}\n",
        )
        .unwrap();
        let man = Manifest::load(&m).unwrap();
        assert_eq!(man.len(), 3);
        assert_eq!(man.entries[1].score, -2.0);
        assert_eq!(man.entries[0].path, dir.path().join("a.png"));
        assert!(!man.has_categories());
    }

    #[test]
    fn rejections() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png"]);
        let m = dir.path().join("m.jsonl");
        let load = |text: &str| {
            fs::write(&m, text).unwrap();
            Manifest::load(&m)
        };
        let err = load("{\"path\":\"a.png\",\"score\":1}\n{\"path\":\"a.png\",\"score\":2}\n").unwrap_err();
        assert!(matches!(&err, Error::Validation(msg) if msg.contains("a.png")), "{err}");

        let err = load("{\"path\":\"a.png\",\"score\":1,\"category\":0}\n{\"path\":\"b.png\",\"score\":2}\n")
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));

        let err = load("{\"path\":\"a.png\",\"score\":1}\n{\"path\":\"b.png\",\"score\":\"NaN\"}\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");

        let err = load("{\"path\":\"a.png\",\"score\":1}\n{\"path\":\"b.png\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let err = load("{\"path\":\"missing.png\",\"score\":1}\n").unwrap_err();
        assert!(matches!(&err, Error::Io { path, .. } if path.ends_with("missing.png")), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png"]);
        let m = Manifest::new(vec![
            ManifestEntry { path: dir.path().join("a.png"), score: 0.25, category: Some(1) },
            ManifestEntry { path: dir.path().join("b.png"), score: 0.75, category: Some(0) },
        ])
        .unwrap();
        let p = dir.path().join("m.jsonl");
        m.save(&p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("{\"path\":\"a.png\""));
        assert_eq!(Manifest::load(&p).unwrap(), m);
        assert_eq!(m.n_categories(), 2);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = entries(10);
        let (a, b) = split(&m, &SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&m, &SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert!(split(&entries(1), &SplitSpec::default()).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let m = entries(37);
        let (a, b) = split(&m, &SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        assert_eq!(a.len(), 30);
        let mut all: Vec<_> = a.entries.iter().chain(&b.entries).map(|e| e.path.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 37);
    }

    #[test]
    fn seeds_give_distinct_partitions() {
        let m = entries(100);
        let mut seen = HashSet::new();
        for seed in 0..10 {
            let (a, _) = split(&m, &SplitSpec { train_fraction: 0.8, seed }).unwrap();
            let mut paths: Vec<_> = a.entries.iter().map(|e| e.path.clone()).collect();
            paths.sort();
            seen.insert(paths);
        }
        assert!(seen.len() >= 9);
    }
}
