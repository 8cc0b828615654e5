use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnel::dataset::{generate_synthetic, split, SplitSpec, SynthConfig};
use vnel::encoder::{AdapterHead, HeadPair};
use vnel::eval::evaluate;
use vnel::linker::{Backend, Linker, RankedCandidates};
use vnel::mention::{ImageMentions, MentionDataset, SplitTag};
use vnel::trainer::*;
use vnel::Error;

#[test]
fn uniform_scores_give_log_n() {
    for n in [2usize, 4, 8, 64] {
        for v in [-1.0f32, 0.0, 0.37, 1.0] {
            let s = Array2::from_elem((n, n), v);
            let l = contrastive_loss(s.view(), 0.07).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-6, "n={n}");
        }
    }
}

#[test]
fn loss_depends_only_on_scores_over_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [2usize, 3, 8, 16] {
        let s = Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0f32..1.0));
        for (c, tau) in [(2.0f32, 0.1), (0.5, 0.3), (4.0, 0.07)] {
            let a = contrastive_loss(s.view(), tau).unwrap();
            let b = contrastive_loss(s.mapv(|v| v * c).view(), tau * f64::from(c)).unwrap();
            assert!((a - b).abs() < 1e-6, "n={n} c={c}");
        }
    }
}

fn small_setup(seed: u64) -> (vnel::dataset::SynthData, vnel::dataset::Splits) {
    let data = generate_synthetic(&SynthConfig {
        n_entities: 16,
        n_images: 80,
        dim: 32,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let splits = split(
        &data.dataset,
        &SplitSpec {
            seed,
            test_unique_entities: false,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    (data, splits)
}

fn link_all(l: &Linker, ds: &MentionDataset, store: &dyn vnel::image_store::ImageStore) -> Vec<RankedCandidates> {
    ds.mentions().map(|m| l.link(m, store, 10).unwrap()).collect()
}

#[test]
fn zero_second_layer_reproduces_zero_shot_exactly() {
    let (data, splits) = small_setup(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let heads = HeadPair::init(32, 64, 0.5, &mut rng);
    assert!(heads.mention.w2.iter().all(|v| *v == 0.0));
    let zero = data.v2v_pipeline();
    let tuned = zero.clone().with_heads(heads);
    let gold = splits.dev.gold();
    let a = Linker::build(&data.kb, zero, &data.store, Backend::Exact).unwrap();
    let b = Linker::build(&data.kb, tuned, &data.store, Backend::Exact).unwrap();
    let ra = link_all(&a, &splits.dev, &data.store);
    let rb = link_all(&b, &splits.dev, &data.store);
    assert_eq!(ra, rb);
    let ea = evaluate(&ra, &gold, a.index.excluded()).unwrap();
    let eb = evaluate(&rb, &gold, b.index.excluded()).unwrap();
    assert_eq!(ea.to_json(), eb.to_json());
}

#[test]
fn training_is_deterministic_and_writes_a_log() {
    let (data, splits) = small_setup(2);
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 3,
        hidden: 32,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train(&splits.train, &data.kb, &data.v2v_pipeline(), &data.store, &cfg).unwrap();
    let b = train(&splits.train, &data.kb, &data.v2v_pipeline(), &data.store, &cfg).unwrap();
    assert_eq!(a.heads, b.heads);
    assert_eq!(a.losses(), b.losses());
    assert_eq!(a.history.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("train_log.jsonl");
    a.write_log(&log).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["epoch", "lr", "mean_loss", "tau", "wall_seconds"]);
    assert_eq!(first["lr"]["mention"], 2e-4);
    assert_eq!(first["tau"], 0.07);
    a.heads.checkpoint(dir.path().join("heads")).unwrap();
    assert_eq!(HeadPair::restore(dir.path().join("heads")).unwrap(), a.heads);
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let (data, splits) = small_setup(3);
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 4,
        hidden: 16,
        lr_mention: 0.0,
        lr_entity: 0.0,
        w1_init_std: 0.3,
        ..TrainConfig::default()
    };
    let out = train(&splits.train, &data.kb, &data.v2v_pipeline(), &data.store, &cfg).unwrap();
    let l = out.losses();
    assert!(l.iter().all(|v| *v == l[0]), "{l:?}");
}

#[test]
fn unlabeled_mentions_are_rejected() {
    let (data, splits) = small_setup(4);
    let images: Vec<ImageMentions> = splits
        .train
        .images()
        .iter()
        .cloned()
        .map(|mut im| {
            im.mentions[0].gold_entity_id = None;
            im
        })
        .collect();
    let unlabeled = MentionDataset::new(images, SplitTag::Train).unwrap();
    let err = train(&unlabeled, &data.kb, &data.v2v_pipeline(), &data.store, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingGold(_)));
}

#[test]
fn bad_temperature_and_batch_are_config_errors() {
    let (data, splits) = small_setup(5);
    for cfg in [
        TrainConfig { temperature: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 1, ..TrainConfig::default() },
    ] {
        let err = train(&splits.train, &data.kb, &data.v2v_pipeline(), &data.store, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

#[test]
fn dead_hidden_layer_gives_no_second_layer_gradient() {
    // with W1 = 0 the hidden layer is dead and W2 gets no gradient
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let heads = HeadPair {
        mention: AdapterHead::identity(8, 4),
        entity: AdapterHead::identity(8, 4),
    };
    let m = Array2::from_shape_simple_fn((4, 8), || rng.random_range(-1.0f32..1.0));
    let e = Array2::from_shape_simple_fn((4, 8), || rng.random_range(-1.0f32..1.0));
    let (loss, g) = batch_loss_and_grads(&heads, m.view(), e.view(), 0.1).unwrap();
    assert!(loss > 0.0);
    assert!(g.mention.1.iter().all(|v| *v == 0.0));
    assert!(g.entity.1.iter().all(|v| *v == 0.0));
}
