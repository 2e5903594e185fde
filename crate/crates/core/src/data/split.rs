use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Uniformly random test rows; `floor(n * test_fraction)` of them.
    Random { test_fraction: f64, seed: u64 },
    /// Test rows read from an index file; everything else is training.
    IndexFile { path: PathBuf },
}

/// Disjoint train/validation/test row sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: Option<u64>,
    pub policy: String,
}

impl SplitIndices {
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Random draw of `floor(len * fraction)` rows out of `rows`, returning
/// `(rest, drawn)`, both sorted.
pub fn draw_fraction(rows: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("split fraction {fraction} outside [0, 1)")));
    }
    let take = (rows.len() as f64 * fraction).floor() as usize;
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut rng_from_seed(seed));
    let mut drawn = shuffled[..take].to_vec();
    let mut rest = shuffled[take..].to_vec();
    drawn.sort_unstable();
    rest.sort_unstable();
    Ok((rest, drawn))
}

pub fn split(n: usize, policy: &SplitPolicy) -> Result<SplitIndices> {
    match policy {
        SplitPolicy::Random {
            test_fraction,
            seed,
        } => {
            let all: Vec<usize> = (0..n).collect();
            let (train, test) = draw_fraction(&all, *test_fraction, *seed)?;
            Ok(SplitIndices {
                train,
                validation: vec![],
                test,
                seed: Some(*seed),
                policy: "random".into(),
            })
        }
        SplitPolicy::IndexFile { path } => {
            let (_, mut test) = read_index_file(path)?;
            test.sort_unstable();
            if let Some(&bad) = test.iter().find(|&&i| i >= n) {
                return Err(Error::Config(format!(
                    "index file {} references row {bad} of {n}",
                    path.display()
                )));
            }
            let before = test.len();
            test.dedup();
            if test.len() != before {
                return Err(Error::Config(format!("index file {} repeats rows", path.display())));
            }
            let mut is_test = vec![false; n];
            test.iter().for_each(|&i| is_test[i] = true);
            Ok(SplitIndices {
                train: (0..n).filter(|&i| !is_test[i]).collect(),
                validation: vec![],
                test,
                seed: None,
                policy: "index_file".into(),
            })
        }
    }
}

/// Carves a validation set out of `split.train` for one model seed.
pub fn with_validation(split: &SplitIndices, fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let pool: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
    let mut pool = pool;
    pool.sort_unstable();
    let (train, validation) = draw_fraction(&pool, fraction, seed)?;
    Ok(SplitIndices {
        train,
        validation,
        test: split.test.clone(),
        seed: Some(seed),
        policy: split.policy.clone(),
    })
}

/// Header line with the partition name, then one 0-based row index per line.
pub fn write_index_file(path: impl AsRef<Path>, partition: &str, rows: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{partition}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index_file(path: impl AsRef<Path>) -> Result<(String, Vec<usize>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Empty(format!("index file {}", path.display())))?
        .trim()
        .to_string();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        rows.push(t.parse::<usize>().map_err(|_| Error::Parse {
            row: i + 1,
            column: header.clone(),
            message: format!("`{t}` is not a row index"),
        })?);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_split_is_a_deterministic_partition() {
        let p = SplitPolicy::Random {
            test_fraction: 0.1,
            seed: 11,
        };
        let a = split(1234, &p).unwrap();
        let b = split(1234, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.is_partition_of(1234));
        assert_eq!(a.test.len(), 123);
    }

    #[test]
    fn full_portfolio_sized_fallback_split() {
        let p = SplitPolicy::Random {
            test_fraction: 0.1,
            seed: 0,
        };
        let s = split(678_013, &p).unwrap();
        assert_eq!(s.test.len(), 67_801);
        assert_eq!(s.train.len(), 610_212);
    }

    #[test]
    fn validation_floor_rule() {
        let base = SplitIndices {
            train: (0..610_206).collect(),
            validation: vec![],
            test: vec![],
            seed: None,
            policy: "index_file".into(),
        };
        let s = with_validation(&base, 0.1, 5).unwrap();
        assert_eq!(s.validation.len(), 61_020);
        assert_eq!(s.train.len(), 610_206 - 61_020);
        assert!(s.is_partition_of(610_206));
    }

    #[test]
    fn index_file_round_trip_and_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.idx");
        write_index_file(&path, "test", &[4, 1, 7]).unwrap();
        let s = split(10, &SplitPolicy::IndexFile { path: path.clone() }).unwrap();
        assert_eq!(s.test, vec![1, 4, 7]);
        assert_eq!(s.train.len(), 7);
        assert!(s.is_partition_of(10));
        assert!(matches!(
            split(5, &SplitPolicy::IndexFile { path }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_fractions() {
        assert!(split(10, &SplitPolicy::Random { test_fraction: 1.2, seed: 0 }).is_err());
        let s = split(10, &SplitPolicy::Random { test_fraction: 0.2, seed: 0 }).unwrap();
        assert!(with_validation(&s, 0.0, 1).is_err());
    }
}
