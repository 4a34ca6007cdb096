use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{subseed, Label, Manifest};
use crate::error::{Error, Result};

const FOLD_STREAM: u64 = 21;

/// One cross-validation split. `train` excludes both the test and dev
/// speakers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub train: BTreeSet<String>,
}

/// Stratified speaker-independent partition into `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub labels: BTreeMap<String, Label>,
    /// Speaker sets, one per fold.
    pub partition: Vec<BTreeSet<String>>,
}

impl FoldPlan {
    /// The dev set of fold `i` is fold `(i + 1) mod k`.
    pub fn fold(&self, i: usize) -> Fold {
        let test = self.partition[i].clone();
        let dev = self.partition[(i + 1) % self.k].clone();
        let train = self
            .labels
            .keys()
            .filter(|s| !test.contains(*s) && !dev.contains(*s))
            .cloned()
            .collect();
        Fold {
            index: i,
            test,
            dev,
            train,
        }
    }

    pub fn folds(&self) -> impl Iterator<Item = Fold> + '_ {
        (0..self.k).map(|i| self.fold(i))
    }

    /// Per-fold (healthy, dysarthric) counts.
    pub fn class_counts(&self) -> Vec<(usize, usize)> {
        self.partition
            .iter()
            .map(|f| {
                let d = f.iter().filter(|s| self.labels[*s] == Label::Dysarthric).count();
                (f.len() - d, d)
            })
            .collect()
    }
}

impl Fold {
    /// Healthy training speakers: the reference set for every pair built in
    /// this fold.
    pub fn references(&self, labels: &BTreeMap<String, Label>) -> BTreeSet<String> {
        self.train
            .iter()
            .filter(|s| labels[*s] == Label::Healthy)
            .cloned()
            .collect()
    }
}

/// Shuffles each class with its own seeded stream and deals speakers
/// round-robin. The dysarthric deal continues where the healthy one
/// stopped so fold sizes differ by at most one.
pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let labels = manifest.speakers();
    if k < 3 {
        return Err(Error::Config(format!(
            "need at least 3 folds (test, dev and training), got {k}"
        )));
    }
    let mut partition = vec![BTreeSet::new(); k];
    let mut next = 0;
    for (class, label) in [Label::Healthy, Label::Dysarthric].into_iter().enumerate() {
        let mut speakers: Vec<&String> = labels
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(s, _)| s)
            .collect();
        if speakers.len() < k {
            return Err(Error::Config(format!(
                "{k} folds need at least {k} {label:?} speakers, found {}",
                speakers.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, FOLD_STREAM, class as u64, 0));
        speakers.shuffle(&mut rng);
        for s in speakers {
            partition[next].insert(s.clone());
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        labels,
        partition,
    })
}
