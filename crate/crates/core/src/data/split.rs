use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mnist::Dataset;
use crate::error::{Error, Result};

/// Number of MNIST classes, the upper bound on label-split sources.
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitStrategy {
    Random,
    ByLabel,
}

impl SplitStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitStrategy::Random => "random",
            SplitStrategy::ByLabel => "by_label",
        }
    }
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitStrategy::Random),
            "by_label" | "by-label" | "label" => Ok(SplitStrategy::ByLabel),
            other => Err(Error::InvalidArgument(format!(
                "unknown split strategy {other:?} (expected random or by_label)"
            ))),
        }
    }
}

/// Assignment of dataset images to `m` sources. `None` marks images left
/// out (labels `>= m` under [`SplitStrategy::ByLabel`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceSplit {
    pub m: usize,
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub assignment: Vec<Option<usize>>,
    pub labels: Vec<u8>,
}

/// Seeded permutation cut into `m` contiguous parts whose sizes differ by at
/// most one.
pub fn split_random(dataset: &Dataset, m: usize, seed: u64) -> Result<SourceSplit> {
    let n = dataset.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} images into {m} random sources"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![None; n];
    for s in 0..m {
        for &i in &perm[s * n / m..(s + 1) * n / m] {
            assignment[i] = Some(s);
        }
    }
    Ok(SourceSplit {
        m,
        strategy: SplitStrategy::Random,
        seed,
        assignment,
        labels: dataset.labels.clone(),
    })
}

/// Source `s` holds exactly the images labelled `s`; labels `>= m` are
/// excluded.
pub fn split_by_label(dataset: &Dataset, m: usize) -> Result<SourceSplit> {
    if m == 0 || m > NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "label split needs 1 <= m <= {NUM_CLASSES}, got {m}"
        )));
    }
    Ok(SourceSplit {
        m,
        strategy: SplitStrategy::ByLabel,
        seed: 0,
        assignment: dataset
            .labels
            .iter()
            .map(|&l| ((l as usize) < m).then_some(l as usize))
            .collect(),
        labels: dataset.labels.clone(),
    })
}

pub fn make_split(
    dataset: &Dataset,
    strategy: SplitStrategy,
    m: usize,
    seed: u64,
) -> Result<SourceSplit> {
    match strategy {
        SplitStrategy::Random => split_random(dataset, m, seed),
        SplitStrategy::ByLabel => split_by_label(dataset, m),
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    index: usize,
    label: u8,
    source_id: Option<usize>,
    strategy: String,
    seed: u64,
}

impl SourceSplit {
    /// Ascending dataset indices of every source.
    pub fn source_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, s) in self.assignment.iter().enumerate() {
            if let Some(s) = s {
                out[*s].push(i);
            }
        }
        out
    }

    pub fn source_sizes(&self) -> Vec<usize> {
        self.source_indices().iter().map(Vec::len).collect()
    }

    /// Fails unless this split was made for `dataset` (same size and labels).
    pub fn check_matches(&self, dataset: &Dataset) -> Result<()> {
        if self.labels != dataset.labels {
            return Err(Error::Data(format!(
                "split covers {} images whose labels do not match the {} {} images",
                self.labels.len(),
                dataset.len(),
                dataset.split
            )));
        }
        Ok(())
    }

    /// Per-source image batches, in [`Self::source_indices`] order.
    pub fn gather(&self, dataset: &Dataset) -> Result<Vec<crate::autodiff::Tensor<f32>>> {
        self.check_matches(dataset)?;
        self.source_indices()
            .iter()
            .enumerate()
            .map(|(s, idx)| {
                if idx.is_empty() {
                    Err(Error::Data(format!("source {s} is empty")))
                } else {
                    dataset.gather(idx)
                }
            })
            .collect()
    }

    /// CSV with columns `index,label,source_id,strategy,seed`; excluded
    /// images have an empty `source_id`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (i, (&s, &label)) in self.assignment.iter().zip(&self.labels).enumerate() {
            w.serialize(Row {
                index: i,
                label,
                source_id: s,
                strategy: self.strategy.as_str().into(),
                seed: self.seed,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut assignment = Vec::new();
        let mut labels = Vec::new();
        let mut meta: Option<(String, u64)> = None;
        for (line, row) in r.deserialize::<Row>().enumerate() {
            let row = row?;
            if row.index != line {
                return Err(Error::Format(format!(
                    "{}: row {} has index {}, rows must be in index order",
                    path.display(),
                    line + 1,
                    row.index
                )));
            }
            match &meta {
                None => meta = Some((row.strategy.clone(), row.seed)),
                Some((s, seed)) if *s != row.strategy || *seed != row.seed => {
                    return Err(Error::Format(format!(
                        "{}: row {} changes strategy/seed",
                        path.display(),
                        line + 1
                    )))
                }
                _ => {}
            }
            assignment.push(row.source_id);
            labels.push(row.label);
        }
        let (strategy, seed) =
            meta.ok_or_else(|| Error::Format(format!("{}: split file is empty", path.display())))?;
        let m = assignment.iter().flatten().max().map_or(0, |&s| s + 1);
        let split = SourceSplit {
            m,
            strategy: strategy.parse()?,
            seed,
            assignment,
            labels,
        };
        if split.source_sizes().contains(&0) {
            return Err(Error::Format(format!(
                "{}: some source ids are unused",
                path.display()
            )));
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::DataSplit;

    pub(crate) fn toy(n: usize) -> Dataset {
        Dataset::new(
            "toy",
            DataSplit::Train,
            Tensor::from_fn(&[n, 1, 2, 2], |i| (i % 5) as f32 / 4.0),
            (0..n).map(|i| (i * 7 % 10) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn random_parts_near_equal_and_seeded() {
        let ds = toy(103);
        let a = split_random(&ds, 4, 7).unwrap();
        let sizes = a.source_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(a, split_random(&ds, 4, 7).unwrap());
        assert_ne!(a, split_random(&ds, 4, 8).unwrap());
        assert_eq!(split_random(&ds, 1, 0).unwrap().source_sizes(), vec![103]);
        assert!(split_random(&ds, 104, 0).is_err());
        assert!(split_random(&ds, 0, 0).is_err());
    }

    #[test]
    fn label_split_pure_and_excludes() {
        let ds = toy(50);
        let s = split_by_label(&ds, 2).unwrap();
        for (src, idx) in s.source_indices().iter().enumerate() {
            assert!(idx.iter().all(|&i| ds.labels[i] as usize == src));
        }
        let covered: usize = s.source_sizes().iter().sum();
        assert_eq!(covered, ds.labels.iter().filter(|&&l| l < 2).count());
        assert_eq!(
            split_by_label(&ds, 10)
                .unwrap()
                .source_sizes()
                .iter()
                .sum::<usize>(),
            50
        );
        assert!(split_by_label(&ds, 11).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = toy(30);
        let dir = tempfile::tempdir().unwrap();
        for split in [
            split_by_label(&ds, 3).unwrap(),
            split_random(&ds, 4, 3).unwrap(),
        ] {
            let p = dir.path().join("split.csv");
            split.write_csv(&p).unwrap();
            assert_eq!(SourceSplit::read_csv(&p).unwrap(), split);
        }
    }

    #[test]
    fn gather_checks_dataset() {
        let s = split_by_label(&toy(30), 3).unwrap();
        assert!(s.gather(&toy(31)).is_err());
        let parts = s.gather(&toy(30)).unwrap();
        assert_eq!(parts.len(), 3);
    }
}
