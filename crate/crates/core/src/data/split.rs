use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fixture::{FeatureRecord, Fixture};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Train/val/test assignment for every record id.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub fixtures: Vec<PathBuf>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Split>,
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| r.is_nan() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

impl DatasetManifest {
    /// Deterministic split: ids are sorted, shuffled with `seed`, then cut
    /// by `ratios` (rounded; the test split takes the remainder).
    pub fn assign<'a>(
        ids: impl IntoIterator<Item = &'a str>,
        seed: u64,
        ratios: [f64; 3],
    ) -> Result<Self> {
        check_ratios(ratios)?;
        let mut ids: Vec<&str> = ids.into_iter().collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return Err(Error::Usage("duplicate record ids".into()));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = ids.len();
        let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
        let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
        let assignment = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                let split = if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
                (id.to_owned(), split)
            })
            .collect();
        Ok(Self {
            fixtures: Vec::new(),
            seed,
            ratios,
            assignment,
        })
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }

    /// Plain-text form: `#` header lines with `key=value`, then `id<TAB>split`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# mvir-manifest v1\n");
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(
            out,
            "# ratios={},{},{}",
            self.ratios[0], self.ratios[1], self.ratios[2]
        );
        for f in &self.fixtures {
            let _ = writeln!(out, "# fixture={}", f.display());
        }
        for (id, split) in &self.assignment {
            let _ = writeln!(out, "{id}\t{}", split.name());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Config(format!("manifest line {line}: {msg}"));
        let mut seed = None;
        let mut ratios = None;
        let mut fixtures = Vec::new();
        let mut assignment = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let header = header.trim();
                let Some((key, value)) = header.split_once('=') else {
                    continue;
                };
                match key.trim() {
                    "seed" => {
                        seed = Some(
                            value
                                .trim()
                                .parse::<u64>()
                                .map_err(|e| bad(n, format!("seed: {e}")))?,
                        )
                    }
                    "ratios" => {
                        let parts: Vec<f64> = value
                            .split(',')
                            .map(|p| p.trim().parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| bad(n, format!("ratios: {e}")))?;
                        let arr: [f64; 3] = parts
                            .try_into()
                            .map_err(|_| bad(n, "ratios needs exactly three values".into()))?;
                        ratios = Some(arr);
                    }
                    "fixture" => fixtures.push(PathBuf::from(value.trim())),
                    other => return Err(bad(n, format!("unknown header key {other:?}"))),
                }
                continue;
            }
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| bad(n, "expected id<TAB>split".into()))?;
            let split = Split::parse(split.trim_end())
                .ok_or_else(|| bad(n, format!("unknown split {split:?}")))?;
            if assignment.insert(id.to_owned(), split).is_some() {
                return Err(bad(n, format!("duplicate id {id:?}")));
            }
        }
        let ratios =
            ratios.ok_or_else(|| Error::Config("manifest: missing ratios header".into()))?;
        check_ratios(ratios)?;
        Ok(Self {
            fixtures,
            seed: seed.ok_or_else(|| Error::Config("manifest: missing seed header".into()))?,
            ratios,
            assignment,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Records partitioned by split, each list in fixture order.
#[derive(Clone, Debug, Default)]
pub struct SplitDataset {
    pub train: Vec<FeatureRecord>,
    pub val: Vec<FeatureRecord>,
    pub test: Vec<FeatureRecord>,
}

impl SplitDataset {
    pub fn from_manifest(fixture: &Fixture, manifest: &DatasetManifest) -> Result<Self> {
        let ids: HashSet<&str> = fixture.records.iter().map(|r| r.id.as_str()).collect();
        if let Some(extra) = manifest
            .assignment
            .keys()
            .find(|id| !ids.contains(id.as_str()))
        {
            return Err(Error::Config(format!(
                "manifest id {extra:?} not present in fixture"
            )));
        }
        let mut out = Self::default();
        for rec in &fixture.records {
            let split = manifest.assignment.get(&rec.id).ok_or_else(|| {
                Error::Config(format!("record {:?} missing from manifest", rec.id))
            })?;
            match split {
                Split::Train => out.train.push(rec.clone()),
                Split::Val => out.val.push(rec.clone()),
                Split::Test => out.test.push(rec.clone()),
            }
        }
        Ok(out)
    }

    pub fn split(fixture: &Fixture, seed: u64, ratios: [f64; 3]) -> Result<Self> {
        let manifest =
            DatasetManifest::assign(fixture.records.iter().map(|r| r.id.as_str()), seed, ratios)?;
        Self::from_manifest(fixture, &manifest)
    }
}

/// Shuffled mini-batches of indices `0..len`, keyed by `(seed, epoch)`.
/// The last batch may be partial.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
