use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vnel::dataset::{generate_synthetic, SynthConfig, SynthData};
use vnel::embedding::EmbeddingMatrix;
use vnel::encoder::{normalize, score, HeadPair, MentionMode, UnitVector};
use vnel::image_store::MemImageStore;
use vnel::kb::{Entity, KnowledgeBase};
use vnel::linker::*;
use vnel::pipeline::Pipeline;
use vnel::{Error, Modality};

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&v).unwrap().into_vec()
}

/// Full sort of every row by the public scoring function.
fn brute_force(m: &EmbeddingMatrix, q: &UnitVector) -> Vec<(String, f32)> {
    let mut all: Vec<(String, f32)> = m
        .rows()
        .map(|(k, r)| (k.to_string(), score(q, &UnitVector::new(r.to_vec()).unwrap()).unwrap()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all
}

fn as_pairs(c: &[Candidate]) -> Vec<(String, f32)> {
    c.iter().map(|c| (c.entity_id.clone(), c.score)).collect()
}

#[test]
fn exact_search_matches_brute_force_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<(String, Vec<f32>)> = (0..100).map(|i| (format!("E{:03}", (i * 37) % 100), unit(&mut rng, 24))).collect();
    let m = EmbeddingMatrix::from_rows(24, rows).unwrap();
    let idx = EntityIndex::from_embeddings(m.clone(), Modality::Visual, vec![], Backend::Exact).unwrap();
    for _ in 0..50 {
        let q = UnitVector::new(unit(&mut rng, 24)).unwrap();
        let oracle = brute_force(&m, &q);
        for k in [1, 7, 100, 150] {
            let got = idx.search(&q, k).unwrap();
            assert_eq!(as_pairs(&got), oracle[..k.min(100)].to_vec(), "k={k}");
        }
    }
}

#[test]
fn exact_search_breaks_many_ties_by_id() {
    // one-hot rows produce exact ties for every query
    let rows: Vec<(String, Vec<f32>)> = (0..30)
        .map(|i| {
            let mut v = vec![0.0f32; 4];
            v[i % 4] = 1.0;
            (format!("e{:02}", 29 - i), v)
        })
        .collect();
    let m = EmbeddingMatrix::from_rows(4, rows).unwrap();
    let idx = EntityIndex::from_embeddings(m.clone(), Modality::Visual, vec![], Backend::Exact).unwrap();
    let q = UnitVector::new(vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    assert_eq!(as_pairs(&idx.search(&q, 30).unwrap()), brute_force(&m, &q));
    let top: Vec<String> = idx.search(&q, 3).unwrap().into_iter().map(|c| c.entity_id).collect();
    assert_eq!(top, ["e00", "e01", "e02"]);
}

fn entity(id: &str, image: Option<&str>, desc: &str) -> Entity {
    Entity {
        entity_id: id.into(),
        name: format!("Name {id}"),
        description: desc.into(),
        image_ref: image.map(str::to_string),
    }
}

#[test]
fn build_index_records_exclusions() {
    let data = generate_synthetic(&SynthConfig {
        n_entities: 3,
        n_images: 0,
        dim: 32,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut ents: Vec<Entity> = data.kb.iter().cloned().collect();
    ents[1].image_ref = None;
    let kb = KnowledgeBase::new(ents).unwrap();
    let visual = build_index(&kb, &data.v2v_pipeline(), &data.store, Backend::Exact).unwrap();
    assert_eq!(visual.len(), 2);
    assert_eq!(visual.excluded(), [kb.entities()[1].entity_id.clone()]);
    let textual = build_index(&kb, &data.v2t_pipeline(), &data.store, Backend::Exact).unwrap();
    assert_eq!(textual.len(), 3);
    assert!(textual.excluded().is_empty());
}

#[test]
fn index_without_any_image_is_empty_error() {
    let kb = KnowledgeBase::new(vec![entity("a", None, "x y"), entity("b", None, "z")]).unwrap();
    let p = Pipeline::stub_v2v(vnel::encoder::EncoderSpec::stub(16), 1);
    let err = build_index(&kb, &p, &MemImageStore::new(), Backend::Exact).unwrap_err();
    assert!(matches!(err, Error::EmptyIndex(Modality::Visual)));
}

struct Setup {
    data: SynthData,
    visual: Linker,
    textual: Linker,
}

fn setup(n_entities: usize, n_images: usize, seed: u64) -> Setup {
    let data = generate_synthetic(&SynthConfig {
        n_entities,
        n_images,
        dim: 64,
        seed,
        separability: 0.5,
        noise_sigma: 0.2,
        ..SynthConfig::default()
    })
    .unwrap();
    let visual = Linker::build(&data.kb, data.v2v_pipeline(), &data.store, Backend::Exact).unwrap();
    let textual = Linker::build(&data.kb, data.v2t_pipeline().with_mode(MentionMode::Crop), &data.store, Backend::Exact).unwrap();
    Setup { data, visual, textual }
}

#[test]
fn cascade_matches_two_pass_oracle() {
    let s = setup(50, 30, 5);
    let cascade = CascadeConfig::new("v2v", "v2t", 10);
    let entity_vec = |p: &Pipeline, id: &str| p.embed_entity(s.data.kb.get(id).unwrap(), &s.data.store).unwrap();
    for m in s.data.dataset.mentions() {
        let got = link_v2vt(m, &cascade, &s.visual, &s.textual, &s.data.store, 10).unwrap();
        let qv = s.visual.pipeline.embed_mention(m, &s.data.store).unwrap();
        let qt = s.textual.pipeline.embed_mention(m, &s.data.store).unwrap();
        let mut recall: Vec<(String, f32)> = s
            .data
            .kb
            .iter()
            .map(|e| (e.entity_id.clone(), score(&qv, &entity_vec(&s.visual.pipeline, &e.entity_id)).unwrap()))
            .collect();
        recall.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let mut rerank: Vec<(String, f32)> = recall[..10]
            .iter()
            .map(|(id, _)| (id.clone(), score(&qt, &entity_vec(&s.textual.pipeline, id)).unwrap()))
            .collect();
        rerank.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        assert_eq!(as_pairs(&got.candidates), rerank);
    }
}

#[test]
fn cascade_endpoints() {
    let s = setup(40, 20, 6);
    let n = s.visual.index.len();
    for m in s.data.dataset.mentions() {
        let full = link_v2vt(m, &CascadeConfig::new("v2v", "v2t", n), &s.visual, &s.textual, &s.data.store, n).unwrap();
        let alone = link_v2t(m, &s.textual, &s.data.store, n).unwrap();
        assert_eq!(full, alone);
        let one = link_v2vt(m, &CascadeConfig::new("v2v", "v2t", 1), &s.visual, &s.textual, &s.data.store, 1).unwrap();
        let recall_top = link_v2v(m, &s.visual, &s.data.store, 1).unwrap();
        assert_eq!(one.candidates[0].entity_id, recall_top.candidates[0].entity_id);
    }
}

#[test]
fn cascade_pool_grows_with_rerank_length() {
    let s = setup(40, 10, 7);
    for m in s.data.dataset.mentions() {
        let mut prev: Option<Vec<String>> = None;
        for big_k in [1, 3, 8, 20, 40] {
            let got = link_v2vt(m, &CascadeConfig::new("v2v", "v2t", big_k), &s.visual, &s.textual, &s.data.store, big_k).unwrap();
            let mut ids: Vec<String> = got.ids().map(str::to_string).collect();
            ids.sort();
            if let Some(p) = &prev {
                assert!(p.iter().all(|id| ids.contains(id)));
            }
            prev = Some(ids);
        }
    }
}

#[test]
fn cascade_rejects_small_pools_and_wrong_modalities() {
    let s = setup(10, 2, 8);
    let m = s.data.dataset.mentions().next().unwrap();
    let err = link_v2vt(m, &CascadeConfig::new("v2v", "v2t", 3), &s.visual, &s.textual, &s.data.store, 5).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(link_v2v(m, &s.textual, &s.data.store, 1).is_err());
    assert!(link_v2t(m, &s.visual, &s.data.store, 1).is_err());
}

#[test]
fn rankings_are_invariant_to_entity_scale() {
    let s = setup(30, 10, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let heads = HeadPair::init(64, 32, 0.05, &mut rng);
    let mut heads = heads;
    heads.entity.w2.mapv_inplace(|_| rng.random_range(-0.05f32..0.05));
    heads.mention.w2.mapv_inplace(|_| rng.random_range(-0.05f32..0.05));
    let pipeline = s.data.v2v_pipeline().with_heads(heads);
    let raw = embed_entities(&s.data.kb, &pipeline, &s.data.store).unwrap();
    let base = Linker::new(pipeline.clone(), index_from_raw(&raw, &pipeline, Backend::Exact).unwrap()).unwrap();
    for c in [0.5f32, 4.0, 1024.0, 3.0] {
        let scaled = RawEntities {
            matrix: EmbeddingMatrix::from_rows(
                64,
                raw.matrix.rows().map(|(k, r)| (k.to_string(), r.iter().map(|v| v * c).collect())),
            )
            .unwrap(),
            ..raw.clone()
        };
        let other = Linker::new(pipeline.clone(), index_from_raw(&scaled, &pipeline, Backend::Exact).unwrap()).unwrap();
        for m in s.data.dataset.mentions() {
            let a = base.link(m, &s.data.store, 30).unwrap();
            let b = other.link(m, &s.data.store, 30).unwrap();
            if c.log2().fract() == 0.0 {
                assert_eq!(a, b, "scale {c}");
            } else {
                assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>(), "scale {c}");
            }
        }
    }
}

#[test]
fn linking_is_deterministic() {
    let a = setup(20, 8, 10);
    let b = setup(20, 8, 10);
    let run = |s: &Setup| -> Vec<RankedCandidates> {
        s.data
            .dataset
            .mentions()
            .map(|m| link_v2vt(m, &CascadeConfig::new("v2v", "v2t", 5), &s.visual, &s.textual, &s.data.store, 5).unwrap())
            .collect()
    };
    assert_eq!(run(&a), run(&b));
}

#[test]
fn approximate_backend_reports_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<(String, Vec<f32>)> = (0..2000).map(|i| (format!("E{i:04}"), unit(&mut rng, 32))).collect();
    let m = EmbeddingMatrix::from_rows(32, rows).unwrap();
    let idx = EntityIndex::from_embeddings(m, Modality::Visual, vec![], Backend::approx_for(2000)).unwrap();
    let queries: Vec<UnitVector> = (0..30).map(|_| UnitVector::new(unit(&mut rng, 32)).unwrap()).collect();
    let r = idx.measured_recall(&queries, 10).unwrap();
    assert!(r > 0.0 && r <= 1.0, "{r}");
    for q in &queries {
        let got = idx.search(q, 10).unwrap();
        let scores: Vec<f32> = got.iter().map(|c| c.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn link_results_file_round_trip() {
    let s = setup(10, 4, 11);
    let results: Vec<RankedCandidates> = s.data.dataset.mentions().map(|m| s.visual.link(m, &s.data.store, 5).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("links.jsonl");
    write_results(&results, &p).unwrap();
    assert_eq!(read_results(&p).unwrap(), results);
    let by_id: BTreeMap<_, _> = results.iter().map(|r| (r.mention_id.clone(), r.candidates.len())).collect();
    assert!(by_id.values().all(|n| *n == 5));
}
