//! Entity indices, top-k search and the three sub-task linkers.
//!
//! Every ranking sorts by score descending and breaks ties by ascending
//! entity id, so outputs are fully deterministic even when stub encoders
//! produce exactly equal scores.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::encoder::adapter::dot;
use crate::encoder::{has_modality, UnitVector};
use crate::error::{Error, Modality, Result};
use crate::image_store::ImageStore;
use crate::kb::KnowledgeBase;
use crate::mention::VisualMention;
use crate::pipeline::Pipeline;

/// Default rerank length of the cascade.
pub const DEFAULT_RERANK_LENGTH: usize = 600;

/// Scores of pool members missing from the rerank index are shifted by this
/// much, which puts them below every reranked score (those lie in [-1, 1])
/// while keeping their recall order.
const UNRERANKED_OFFSET: f32 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub score: f32,
}

/// The ranked output of a linker for one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub mention_id: String,
    pub candidates: Vec<Candidate>,
}

impl RankedCandidates {
    /// 1-based rank of `entity_id`, if present.
    pub fn rank_of(&self, entity_id: &str) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| c.entity_id == entity_id)
            .map(|p| p + 1)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.entity_id.as_str())
    }
}

/// Score descending, then entity id ascending.
pub fn rank_order(a: (&str, f32), b: (&str, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    Exact,
    /// Inverted-file index over k-means cells; `probes` cells are scanned
    /// per query.
    Approx { lists: usize, probes: usize, seed: u64 },
}

impl Backend {
    /// An approximate backend sized for `n` rows.
    pub fn approx_for(n: usize) -> Self {
        let lists = ((n as f64).sqrt().round() as usize).max(1);
        Backend::Approx {
            lists,
            probes: (lists / 8).max(1),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Ivf {
    centroids: Vec<Vec<f32>>,
    lists: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct EntityIndex {
    embeddings: EmbeddingMatrix,
    modality: Modality,
    backend: Backend,
    excluded: Vec<String>,
    positions: HashMap<String, usize>,
    ivf: Option<Ivf>,
}

impl EntityIndex {
    /// Wraps normalized rows. Rows are reordered by ascending key.
    pub fn from_embeddings(
        embeddings: EmbeddingMatrix,
        modality: Modality,
        excluded: Vec<String>,
        backend: Backend,
    ) -> Result<Self> {
        if embeddings.row_count() == 0 {
            return Err(Error::EmptyIndex(modality));
        }
        let mut embeddings = sort_rows(embeddings)?;
        if !embeddings.is_normalized() {
            embeddings.certify_normalized()?;
        }
        let positions: HashMap<String, usize> = embeddings
            .keys()
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        if positions.len() != embeddings.row_count() {
            return Err(Error::Contract("index keys must be unique".into()));
        }
        let ivf = match backend {
            Backend::Exact => None,
            Backend::Approx { lists, seed, .. } => {
                if lists == 0 {
                    return Err(Error::Config("approximate index needs at least one list".into()));
                }
                Some(build_ivf(&embeddings, lists, seed))
            }
        };
        let mut excluded = excluded;
        excluded.sort();
        Ok(Self {
            embeddings,
            modality,
            backend,
            excluded,
            positions,
            ivf,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.row_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Entities left out because they lack the index modality.
    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.positions.contains_key(entity_id)
    }

    /// Score of one entity, if indexed.
    pub fn score_of(&self, q: &UnitVector, entity_id: &str) -> Option<f32> {
        self.positions
            .get(entity_id)
            .map(|&i| dot(q.as_slice(), self.embeddings.row(i)))
    }

    fn check_query(&self, q: &UnitVector, k: usize) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    fn rank_rows(&self, q: &UnitVector, rows: impl Iterator<Item = usize>, k: usize) -> Vec<Candidate> {
        let keys = self.embeddings.keys();
        let mut scored: Vec<(usize, f32)> = rows
            .map(|i| (i, dot(q.as_slice(), self.embeddings.row(i))))
            .collect();
        // rows are sorted by key, so row index order is entity id order
        let cmp = |a: &(usize, f32), b: &(usize, f32)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored
            .into_iter()
            .map(|(i, s)| Candidate {
                entity_id: keys[i].clone(),
                score: s,
            })
            .collect()
    }

    /// Top-`k` entities for a unit query; `k` larger than the index returns
    /// the full ranking.
    pub fn search(&self, q: &UnitVector, k: usize) -> Result<Vec<Candidate>> {
        self.check_query(q, k)?;
        match (&self.ivf, self.backend) {
            (Some(ivf), Backend::Approx { probes, .. }) => {
                let mut cells: Vec<(usize, f32)> = ivf
                    .centroids
                    .iter()
                    .enumerate()
                    .map(|(c, cen)| (c, dot(q.as_slice(), cen)))
                    .collect();
                cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let rows = cells
                    .iter()
                    .take(probes.max(1))
                    .flat_map(|(c, _)| ivf.lists[*c].iter().copied());
                Ok(self.rank_rows(q, rows, k))
            }
            _ => Ok(self.rank_rows(q, 0..self.len(), k)),
        }
    }

    /// Exact search regardless of backend.
    pub fn search_exact(&self, q: &UnitVector, k: usize) -> Result<Vec<Candidate>> {
        self.check_query(q, k)?;
        Ok(self.rank_rows(q, 0..self.len(), k))
    }

    /// Mean fraction of the exact top-`k` that this index's search returns.
    pub fn measured_recall(&self, queries: &[UnitVector], k: usize) -> Result<f64> {
        if queries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for q in queries {
            let exact = self.search_exact(q, k)?;
            let got = self.search(q, k)?;
            let hits = exact
                .iter()
                .filter(|c| got.iter().any(|g| g.entity_id == c.entity_id))
                .count();
            total += hits as f64 / exact.len() as f64;
        }
        Ok(total / queries.len() as f64)
    }
}

fn sort_rows(m: EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.keys().windows(2).all(|w| w[0] < w[1]) {
        return Ok(m);
    }
    let mut order: Vec<usize> = (0..m.row_count()).collect();
    order.sort_by(|&a, &b| m.keys()[a].cmp(&m.keys()[b]));
    let normalized = m.is_normalized();
    let mut out = EmbeddingMatrix::from_rows(
        m.dim(),
        order.iter().map(|&i| (m.keys()[i].clone(), m.row(i).to_vec())),
    )?;
    if normalized {
        out.certify_normalized()?;
    }
    Ok(out)
}

/// Spherical k-means with seeded initial centroids and a fixed number of
/// rounds; empty cells keep their previous centroid.
fn build_ivf(m: &EmbeddingMatrix, lists: usize, seed: u64) -> Ivf {
    let n = m.row_count();
    let lists = lists.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f32>> = sample(&mut rng, n, lists)
        .into_iter()
        .map(|i| m.row(i).to_vec())
        .collect();
    let assign = |centroids: &[Vec<f32>]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let row = m.row(i);
                let mut best = (0, f32::NEG_INFINITY);
                for (c, cen) in centroids.iter().enumerate() {
                    let s = dot(row, cen);
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut owner = assign(&centroids);
    for _ in 0..8 {
        let mut sums = vec![vec![0.0f64; m.dim()]; lists];
        for (i, &c) in owner.iter().enumerate() {
            for (s, v) in sums[c].iter_mut().zip(m.row(i)) {
                *s += f64::from(*v);
            }
        }
        for (cen, sum) in centroids.iter_mut().zip(sums) {
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                *cen = sum.iter().map(|v| (v / norm) as f32).collect();
            }
        }
        owner = assign(&centroids);
    }
    let mut cells = vec![Vec::new(); lists];
    for (i, c) in owner.into_iter().enumerate() {
        cells[c].push(i);
    }
    Ivf {
        centroids,
        lists: cells,
    }
}

/// Embeds every entity that has the pipeline's entity modality.
pub fn build_index(kb: &KnowledgeBase, pipeline: &Pipeline, store: &dyn ImageStore, backend: Backend) -> Result<EntityIndex> {
    let raw = embed_entities(kb, pipeline, store)?;
    index_from_raw(&raw, pipeline, backend)
}

/// Raw (pre-head) entity embeddings plus the ids lacking the modality.
#[derive(Debug, Clone)]
pub struct RawEntities {
    pub matrix: EmbeddingMatrix,
    pub modality: Modality,
    pub excluded: Vec<String>,
}

pub fn embed_entities(kb: &KnowledgeBase, pipeline: &Pipeline, store: &dyn ImageStore) -> Result<RawEntities> {
    if kb.is_empty() {
        return Err(Error::Contract("knowledge base is empty".into()));
    }
    let modality = pipeline.modality();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for e in kb {
        if has_modality(e, modality) {
            rows.push((e.entity_id.clone(), pipeline.raw_entity(e, store)?));
        } else {
            excluded.push(e.entity_id.clone());
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyIndex(modality));
    }
    Ok(RawEntities {
        matrix: EmbeddingMatrix::from_rows(pipeline.spec.output_dim, rows)?,
        modality,
        excluded,
    })
}

/// Applies the pipeline's entity head and normalization to raw rows.
pub fn index_from_raw(raw: &RawEntities, pipeline: &Pipeline, backend: Backend) -> Result<EntityIndex> {
    let rows = raw
        .matrix
        .rows()
        .map(|(k, r)| Ok((k.to_string(), pipeline.finish_entity(r)?.into_vec())))
        .collect::<Result<Vec<_>>>()?;
    let m = EmbeddingMatrix::from_rows(raw.matrix.dim(), rows)?;
    EntityIndex::from_embeddings(m, raw.modality, raw.excluded.clone(), backend)
}

/// A pipeline together with the index its entity side produced.
#[derive(Debug, Clone)]
pub struct Linker {
    pub pipeline: Pipeline,
    pub index: EntityIndex,
}

impl Linker {
    pub fn new(pipeline: Pipeline, index: EntityIndex) -> Result<Self> {
        if pipeline.modality() != index.modality() {
            return Err(Error::Config(format!(
                "pipeline links against {} entities but the index is {}",
                pipeline.modality(),
                index.modality()
            )));
        }
        if pipeline.spec.output_dim != index.dim() {
            return Err(Error::DimMismatch {
                expected: index.dim(),
                actual: pipeline.spec.output_dim,
            });
        }
        Ok(Self { pipeline, index })
    }

    pub fn build(kb: &KnowledgeBase, pipeline: Pipeline, store: &dyn ImageStore, backend: Backend) -> Result<Self> {
        let index = build_index(kb, &pipeline, store, backend)?;
        Self::new(pipeline, index)
    }

    pub fn embed(&self, mention: &VisualMention, store: &dyn ImageStore) -> Result<UnitVector> {
        self.pipeline.embed_mention(mention, store)
    }

    pub fn link(&self, mention: &VisualMention, store: &dyn ImageStore, k: usize) -> Result<RankedCandidates> {
        let q = self.embed(mention, store)?;
        Ok(RankedCandidates {
            mention_id: mention.mention_id.clone(),
            candidates: self.index.search(&q, k)?,
        })
    }
}

fn require_modality(linker: &Linker, modality: Modality) -> Result<()> {
    if linker.index.modality() != modality {
        return Err(Error::Config(format!(
            "expected a {modality} index, got {}",
            linker.index.modality()
        )));
    }
    Ok(())
}

/// Visual mention against entity images.
pub fn link_v2v(mention: &VisualMention, linker: &Linker, store: &dyn ImageStore, k: usize) -> Result<RankedCandidates> {
    require_modality(linker, Modality::Visual)?;
    linker.link(mention, store, k)
}

/// Visual mention against entity names and descriptions.
pub fn link_v2t(mention: &VisualMention, linker: &Linker, store: &dyn ImageStore, k: usize) -> Result<RankedCandidates> {
    require_modality(linker, Modality::Textual)?;
    linker.link(mention, store, k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub recall_model: String,
    pub rerank_model: String,
    pub rerank_length: usize,
}

impl CascadeConfig {
    pub fn new(recall_model: impl Into<String>, rerank_model: impl Into<String>, rerank_length: usize) -> Self {
        Self {
            recall_model: recall_model.into(),
            rerank_model: rerank_model.into(),
            rerank_length,
        }
    }

    /// Checks `1 <= K <= |E|` for a recall index of `index_size` rows and
    /// that `k` results fit in the pool.
    pub fn validate(&self, index_size: usize, k: usize) -> Result<()> {
        if self.rerank_length == 0 {
            return Err(Error::Config("rerank length must be at least 1".into()));
        }
        if self.rerank_length > index_size {
            return Err(Error::Config(format!(
                "rerank length {} exceeds the {index_size} indexed entities",
                self.rerank_length
            )));
        }
        if self.rerank_length < k {
            return Err(Error::Config(format!(
                "cannot return {k} results from a pool of {}",
                self.rerank_length
            )));
        }
        Ok(())
    }
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self::new("v2v", "v2t", DEFAULT_RERANK_LENGTH)
    }
}

/// The cascade on precomputed queries: recall the top `K` with one index,
/// rescore that pool with the other and keep the first `k`.
pub fn cascade_rank(
    recall_index: &EntityIndex,
    recall_query: &UnitVector,
    rerank_index: &EntityIndex,
    rerank_query: &UnitVector,
    rerank_length: usize,
    k: usize,
) -> Result<Vec<Candidate>> {
    let pool = recall_index.search(recall_query, rerank_length)?;
    if rerank_query.len() != rerank_index.dim() {
        return Err(Error::DimMismatch {
            expected: rerank_index.dim(),
            actual: rerank_query.len(),
        });
    }
    let mut reranked = Vec::with_capacity(pool.len());
    let mut tail = Vec::new();
    for c in pool {
        match rerank_index.score_of(rerank_query, &c.entity_id) {
            Some(s) => reranked.push(Candidate {
                entity_id: c.entity_id,
                score: s,
            }),
            None => tail.push(Candidate {
                entity_id: c.entity_id,
                score: c.score - UNRERANKED_OFFSET,
            }),
        }
    }
    reranked.sort_by(|a, b| rank_order((&a.entity_id, a.score), (&b.entity_id, b.score)));
    reranked.extend(tail);
    reranked.truncate(k);
    Ok(reranked)
}

/// Visual mention against both descriptions via recall then rerank.
pub fn link_v2vt(
    mention: &VisualMention,
    cascade: &CascadeConfig,
    recall: &Linker,
    rerank: &Linker,
    store: &dyn ImageStore,
    k: usize,
) -> Result<RankedCandidates> {
    cascade.validate(recall.index.len(), k)?;
    let rq = recall.embed(mention, store)?;
    let sq = rerank.embed(mention, store)?;
    Ok(RankedCandidates {
        mention_id: mention.mention_id.clone(),
        candidates: cascade_rank(&recall.index, &rq, &rerank.index, &sq, cascade.rerank_length, k)?,
    })
}

/// Mention embeddings under one linker, keyed by mention id.
pub fn embed_mentions<'a>(
    linker: &Linker,
    mentions: impl IntoIterator<Item = &'a VisualMention>,
    store: &dyn ImageStore,
) -> Result<BTreeMap<String, UnitVector>> {
    mentions
        .into_iter()
        .map(|m| Ok((m.mention_id.clone(), linker.embed(m, store)?)))
        .collect()
}

pub fn write_results(results: &[RankedCandidates], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in results {
        let line = serde_json::to_string(r).expect("results serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<RankedCandidates>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RankedCandidates = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::normalize;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&v).unwrap().into_vec()
    }

    fn random_index(n: usize, dim: usize, seed: u64, backend: Backend) -> EntityIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n).map(|i| (format!("E{i:05}"), unit(&mut rng, dim)));
        let m = EmbeddingMatrix::from_rows(dim, rows).unwrap();
        EntityIndex::from_embeddings(m, Modality::Visual, vec![], backend).unwrap()
    }

    #[test]
    fn query_equal_to_row_ranks_first() {
        let idx = random_index(50, 16, 1, Backend::Exact);
        let q = UnitVector::new(idx.embeddings().row(7).to_vec()).unwrap();
        let top = idx.search(&q, 3).unwrap();
        assert_eq!(top[0].entity_id, "E00007");
        assert!((top[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn large_k_is_a_full_permutation() {
        let idx = random_index(20, 8, 2, Backend::Exact);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = UnitVector::new(unit(&mut rng, 8)).unwrap();
        let mut ids: Vec<String> = idx.search(&q, 100).unwrap().into_iter().map(|c| c.entity_id).collect();
        ids.sort();
        assert_eq!(ids, idx.embeddings().keys());
    }

    #[test]
    fn ties_break_by_entity_id() {
        let rows = vec![
            ("c".to_string(), vec![1.0f32, 0.0]),
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
        ];
        let m = EmbeddingMatrix::from_rows(2, rows).unwrap();
        let idx = EntityIndex::from_embeddings(m, Modality::Visual, vec![], Backend::Exact).unwrap();
        let q = UnitVector::new(vec![1.0, 0.0]).unwrap();
        let ids: Vec<String> = idx.search(&q, 3).unwrap().into_iter().map(|c| c.entity_id).collect();
        assert_eq!(ids, ["a", "c", "b"]);
    }

    #[test]
    fn rejects_dim_mismatch_and_zero_k() {
        let idx = random_index(5, 4, 3, Backend::Exact);
        let q = UnitVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(idx.search(&q, 1), Err(Error::DimMismatch { .. })));
        let q = UnitVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(idx.search(&q, 0), Err(Error::Config(_))));
    }

    #[test]
    fn empty_index_is_an_error() {
        let m = EmbeddingMatrix::from_rows(4, Vec::new()).unwrap();
        assert!(matches!(
            EntityIndex::from_embeddings(m, Modality::Textual, vec!["x".into()], Backend::Exact),
            Err(Error::EmptyIndex(Modality::Textual))
        ));
    }

    #[test]
    fn approx_recall_is_measured() {
        let idx = random_index(400, 16, 4, Backend::Approx { lists: 20, probes: 20, seed: 1 });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qs: Vec<UnitVector> = (0..20).map(|_| UnitVector::new(unit(&mut rng, 16)).unwrap()).collect();
        // probing every cell is exhaustive
        assert_eq!(idx.measured_recall(&qs, 10).unwrap(), 1.0);
        let partial = random_index(400, 16, 4, Backend::Approx { lists: 20, probes: 2, seed: 1 });
        let r = partial.measured_recall(&qs, 10).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn cascade_appends_unrerankable_entities_last() {
        let rec = EmbeddingMatrix::from_rows(
            2,
            vec![
                ("a".into(), vec![1.0f32, 0.0]),
                ("b".into(), vec![0.6, 0.8]),
                ("c".into(), vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let rer = EmbeddingMatrix::from_rows(2, vec![("b".into(), vec![1.0f32, 0.0]), ("c".into(), vec![0.0, 1.0])]).unwrap();
        let recall = EntityIndex::from_embeddings(rec, Modality::Visual, vec![], Backend::Exact).unwrap();
        let rerank = EntityIndex::from_embeddings(rer, Modality::Textual, vec!["a".into()], Backend::Exact).unwrap();
        let q = UnitVector::new(vec![1.0, 0.0]).unwrap();
        let q2 = UnitVector::new(vec![0.0, 1.0]).unwrap();
        let out = cascade_rank(&recall, &q, &rerank, &q2, 3, 3).unwrap();
        let ids: Vec<&str> = out.iter().map(|c| c.entity_id.as_str()).collect();
        assert_eq!(ids, ["c", "b", "a"]);
        assert!(out[2].score < -1.0);
    }

    #[test]
    fn cascade_config_bounds() {
        let c = CascadeConfig::new("v2v", "v2t", 5);
        assert!(c.validate(10, 5).is_ok());
        assert!(c.validate(10, 6).is_err());
        assert!(c.validate(4, 1).is_err());
        assert!(CascadeConfig::new("v2v", "v2t", 0).validate(10, 1).is_err());
        assert_eq!(CascadeConfig::default().rerank_length, 600);
    }

    #[test]
    fn results_round_trip_with_shortest_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let r = vec![RankedCandidates {
            mention_id: "m1".into(),
            candidates: vec![Candidate { entity_id: "Q1".into(), score: 0.1 }],
        }];
        write_results(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "{\"mention_id\":\"m1\",\"candidates\":[{\"entity_id\":\"Q1\",\"score\":0.1}]}\n");
        assert_eq!(read_results(&path).unwrap(), r);
    }
}
