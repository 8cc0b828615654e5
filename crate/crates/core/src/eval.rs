//! Retrieval metrics, cascade and overlap analyses, dataset statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::UnitVector;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::linker::{cascade_rank, EntityIndex, RankedCandidates};
use crate::mention::MentionDataset;

pub const RECALL_KS: [usize; 4] = [1, 3, 5, 10];
pub const MRR_KS: [usize; 3] = [3, 5, 10];

/// 1-based rank of the gold entity for each result, `None` when absent.
pub fn gold_ranks(results: &[RankedCandidates], gold: &BTreeMap<String, String>) -> Result<Vec<Option<usize>>> {
    results
        .iter()
        .map(|r| {
            let g = gold
                .get(&r.mention_id)
                .ok_or_else(|| Error::MissingGold(r.mention_id.clone()))?;
            Ok(r.rank_of(g))
        })
        .collect()
}

fn check_k(k: usize, q: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if q == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn recall_from_ranks(ranks: &[Option<usize>], k: usize) -> Result<f64> {
    check_k(k, ranks.len())?;
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Reciprocal ranks are grouped by rank, so the value does not depend on
/// query order. The sum is exact integer arithmetic over the lcm of the hit
/// ranks whenever that fits in 53 bits, which makes the result the correctly
/// rounded mean; otherwise it falls back to a float sum in rank order.
pub fn mrr_from_ranks(ranks: &[Option<usize>], k: usize) -> Result<f64> {
    check_k(k, ranks.len())?;
    let mut counts = vec![0usize; k + 1];
    for r in ranks.iter().flatten() {
        if *r <= k {
            counts[*r] += 1;
        }
    }
    let q = ranks.len() as f64;
    if let Some((num, den)) = exact_rr_sum(&counts, ranks.len()) {
        return Ok(num as f64 / den as f64);
    }
    let total: f64 = counts
        .iter()
        .enumerate()
        .skip(1)
        .map(|(r, c)| *c as f64 / r as f64)
        .sum();
    Ok(total / q)
}

/// `(sum_r c_r / r) / q` as an integer fraction with both parts below 2^53.
fn exact_rr_sum(counts: &[usize], q: usize) -> Option<(u64, u64)> {
    const LIMIT: u128 = 1 << 53;
    fn gcd(mut a: u128, mut b: u128) -> u128 {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    }
    let mut lcm: u128 = 1;
    for (r, _) in counts.iter().enumerate().skip(1).filter(|(_, c)| **c > 0) {
        let r = r as u128;
        lcm = (lcm / gcd(lcm, r)).checked_mul(r)?;
        if lcm >= LIMIT {
            return None;
        }
    }
    let mut num: u128 = 0;
    for (r, c) in counts.iter().enumerate().skip(1) {
        num = num.checked_add((*c as u128).checked_mul(lcm / r as u128)?)?;
    }
    let den = lcm.checked_mul(q as u128)?;
    (den < LIMIT).then_some((num as u64, den as u64))
}

/// Fraction of queries whose gold entity is in the top `k`.
pub fn recall_at_k(results: &[RankedCandidates], gold: &BTreeMap<String, String>, k: usize) -> Result<f64> {
    recall_from_ranks(&gold_ranks(results, gold)?, k)
}

/// Mean reciprocal gold rank, counting ranks beyond `k` as zero.
pub fn mrr_at_k(results: &[RankedCandidates], gold: &BTreeMap<String, String>, k: usize) -> Result<f64> {
    mrr_from_ranks(&gold_ranks(results, gold)?, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    #[serde(rename = "1")]
    pub r1: f64,
    #[serde(rename = "3")]
    pub r3: f64,
    #[serde(rename = "5")]
    pub r5: f64,
    #[serde(rename = "10")]
    pub r10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrrAt {
    #[serde(rename = "3")]
    pub m3: f64,
    #[serde(rename = "5")]
    pub m5: f64,
    #[serde(rename = "10")]
    pub m10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: RecallAt,
    pub mrr: MrrAt,
    pub q: usize,
    /// Queries whose gold entity was not indexed; they count as misses.
    pub excluded_gold: usize,
    #[serde(skip)]
    pub ranks: Vec<Option<usize>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Full report; `excluded` lists entity ids absent from the index.
pub fn evaluate(results: &[RankedCandidates], gold: &BTreeMap<String, String>, excluded: &[String]) -> Result<EvalReport> {
    let ranks = gold_ranks(results, gold)?;
    let excluded: HashSet<&str> = excluded.iter().map(String::as_str).collect();
    let excluded_gold = results
        .iter()
        .filter(|r| excluded.contains(gold[&r.mention_id].as_str()))
        .count();
    let r = |k| recall_from_ranks(&ranks, k);
    let m = |k| mrr_from_ranks(&ranks, k);
    Ok(EvalReport {
        recall: RecallAt {
            r1: r(1)?,
            r3: r(3)?,
            r5: r(5)?,
            r10: r(10)?,
        },
        mrr: MrrAt {
            m3: m(3)?,
            m5: m(5)?,
            m10: m(10)?,
        },
        q: ranks.len(),
        excluded_gold,
        ranks,
    })
}

/// Mean over queries of `|top_k(a) ∩ top_k(b)| / k`.
pub fn overlap_at_k(a: &[RankedCandidates], b: &[RankedCandidates], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let by_id: BTreeMap<&str, &RankedCandidates> = b.iter().map(|r| (r.mention_id.as_str(), r)).collect();
    let ids_a: BTreeSet<&str> = a.iter().map(|r| r.mention_id.as_str()).collect();
    if ids_a.len() != a.len() || by_id.len() != b.len() || !ids_a.iter().eq(by_id.keys()) {
        return Err(Error::Contract("result sets cover different mentions".into()));
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for ra in a {
        let rb = by_id[ra.mention_id.as_str()];
        for r in [ra, rb] {
            if r.candidates.len() < k {
                return Err(Error::Config(format!(
                    "mention {} has {} candidates, fewer than k={k}",
                    r.mention_id,
                    r.candidates.len()
                )));
            }
        }
        let top_a: HashSet<&str> = ra.ids().take(k).collect();
        let shared = rb.ids().take(k).filter(|id| top_a.contains(id)).count();
        total += shared as f64 / k as f64;
    }
    Ok(total / a.len() as f64)
}

/// Precomputed queries for both cascade stages.
pub struct SweepInput<'a> {
    pub recall_index: &'a EntityIndex,
    pub rerank_index: &'a EntityIndex,
    pub recall_queries: &'a BTreeMap<String, UnitVector>,
    pub rerank_queries: &'a BTreeMap<String, UnitVector>,
    pub gold: &'a BTreeMap<String, String>,
}

/// Cascade results for every query at one rerank length.
pub fn cascade_results(input: &SweepInput<'_>, rerank_length: usize, k: usize) -> Result<Vec<RankedCandidates>> {
    input
        .recall_queries
        .iter()
        .map(|(id, rq)| {
            let sq = input
                .rerank_queries
                .get(id)
                .ok_or_else(|| Error::Contract(format!("no rerank query for {id}")))?;
            Ok(RankedCandidates {
                mention_id: id.clone(),
                candidates: cascade_rank(input.recall_index, rq, input.rerank_index, sq, rerank_length, k)?,
            })
        })
        .collect()
}

/// R@1 of the cascade at each rerank length.
pub fn rerank_sweep(input: &SweepInput<'_>, k_values: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n = input.recall_index.len();
    if !k_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("rerank lengths must be strictly ascending".into()));
    }
    k_values
        .iter()
        .map(|&big_k| {
            if big_k == 0 || big_k > n {
                return Err(Error::Config(format!("rerank length {big_k} outside 1..={n}")));
            }
            let results = cascade_results(input, big_k, 1)?;
            Ok((big_k, recall_at_k(&results, input.gold, 1)?))
        })
        .collect()
}

pub fn write_curve_csv(points: &[(usize, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("k,value\n");
    for (k, v) in points {
        out.push_str(&format!("{k},{v}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Entities whose gold frequency falls in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityBin {
    pub lo: usize,
    pub hi: usize,
    pub entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub image_count: usize,
    pub mention_count: usize,
    pub covered_entities: usize,
    pub mentions_per_image: f64,
    pub kb_entities: usize,
    /// Power-of-two frequency bins.
    pub popularity: Vec<PopularityBin>,
}

pub fn dataset_stats(dataset: &MentionDataset, kb: &KnowledgeBase) -> Result<DatasetStats> {
    if dataset.is_empty() || dataset.mention_count() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for m in dataset.mentions() {
        let g = m
            .gold_entity_id
            .as_deref()
            .ok_or_else(|| Error::MissingGold(m.mention_id.clone()))?;
        *freq.entry(g).or_default() += 1;
    }
    let mut bins: BTreeMap<u32, usize> = BTreeMap::new();
    for f in freq.values() {
        *bins.entry(f.ilog2()).or_default() += 1;
    }
    Ok(DatasetStats {
        image_count: dataset.image_count(),
        mention_count: dataset.mention_count(),
        covered_entities: freq.len(),
        mentions_per_image: dataset.mention_count() as f64 / dataset.image_count() as f64,
        kb_entities: kb.len(),
        popularity: bins
            .into_iter()
            .map(|(b, n)| PopularityBin {
                lo: 1 << b,
                hi: 1 << (b + 1),
                entities: n,
            })
            .collect(),
    })
}
