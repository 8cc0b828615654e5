//! Image-level train/dev/test partition with optional test-entity uniqueness.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mention::{save_mentions, ImageMentions, MentionDataset, SplitTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, dev and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
    pub test_unique_entities: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
            test_unique_entities: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("split ratios must be positive, got {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Sidecar written next to the three split manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub test_unique: bool,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: MentionDataset,
    pub dev: MentionDataset,
    pub test: MentionDataset,
}

pub fn split(dataset: &MentionDataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let images = dataset.images();
    let golds: Vec<Vec<&str>> = images
        .iter()
        .map(|im| {
            im.mentions
                .iter()
                .map(|m| {
                    m.gold_entity_id
                        .as_deref()
                        .ok_or_else(|| Error::MissingGold(m.mention_id.clone()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n = images.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let test_quota = (n as f64 * spec.ratios[2]).round() as usize;
    let mut test = Vec::with_capacity(test_quota);
    let mut rest = Vec::with_capacity(n);
    if spec.test_unique_entities {
        let mut seen: HashSet<&str> = HashSet::new();
        for &i in &order {
            let own: HashSet<&str> = golds[i].iter().copied().collect();
            let fits = own.len() == golds[i].len() && own.is_disjoint(&seen);
            if test.len() < test_quota && fits {
                seen.extend(own);
                test.push(i);
            } else {
                rest.push(i);
            }
        }
        if test.len() < test_quota {
            return Err(Error::SplitInfeasible {
                requested: test_quota,
                max_feasible: test.len(),
            });
        }
    } else {
        test.extend_from_slice(&order[..test_quota]);
        rest.extend_from_slice(&order[test_quota..]);
    }
    let dev_quota = ((n as f64 * spec.ratios[1]).round() as usize).min(rest.len());
    let (dev, train) = rest.split_at(dev_quota);

    let subset = |idx: &[usize], tag: SplitTag| -> Result<MentionDataset> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        let ims: Vec<ImageMentions> = idx.into_iter().map(|i| images[i].clone()).collect();
        MentionDataset::new(ims, tag)
    };
    Ok(Splits {
        train: subset(train, SplitTag::Train)?,
        dev: subset(dev, SplitTag::Dev)?,
        test: subset(&test, SplitTag::Test)?,
    })
}

impl Splits {
    pub const TRAIN_FILE: &'static str = "train.jsonl";
    pub const DEV_FILE: &'static str = "dev.jsonl";
    pub const TEST_FILE: &'static str = "test.jsonl";
    pub const SIDECAR_FILE: &'static str = "split.json";

    /// Writes the three manifests and the sidecar into `dir`.
    pub fn save(&self, spec: &SplitSpec, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_mentions(&self.train, dir.join(Self::TRAIN_FILE))?;
        save_mentions(&self.dev, dir.join(Self::DEV_FILE))?;
        save_mentions(&self.test, dir.join(Self::TEST_FILE))?;
        let sidecar = SplitSidecar {
            seed: spec.seed,
            ratios: spec.ratios,
            test_unique: spec.test_unique_entities,
        };
        let path = dir.join(Self::SIDECAR_FILE);
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}
