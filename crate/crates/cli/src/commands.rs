use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use vnel::dataset::{
    construction_filter, generate_synthetic, read_records, split, write_records, write_rejections,
    BlobFaceDetector, CapitalizedBigramNer, GazetteerNer, PersonNer, SplitSpec, SynthConfig,
};
use vnel::embedding::EmbeddingMatrix;
use vnel::encoder::{HeadPair, TextMode};
use vnel::eval::{dataset_stats, evaluate, overlap_at_k, rerank_sweep, write_curve_csv, SweepInput};
use vnel::kb::{load_kb, save_kb};
use vnel::linker::{
    embed_entities, embed_mentions, index_from_raw, link_v2vt, read_results, write_results, Backend,
    CascadeConfig, Linker, RawEntities,
};
use vnel::mention::{parse_manifest, save_mentions};
use vnel::trainer::{train, TrainConfig};

use crate::args::*;
use crate::model::*;
use crate::CliError;

pub const RUN_CONFIG: &str = "run_config.json";
const EMBED_META: &str = "embed.json";

pub fn run(cmd: Command) -> Result<(), CliError> {
    let out = cmd.common().out.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    match &cmd {
        Command::Synth(a) => synth(&cmd, a, &out),
        Command::Split(a) => split_cmd(&cmd, a, &out),
        Command::Filter(a) => filter(&cmd, a, &out),
        Command::Embed(a) => embed(&cmd, a, &out),
        Command::Index(a) => index(&cmd, a, &out),
        Command::Train(a) => train_cmd(&cmd, a, &out),
        Command::Link(a) => link(&cmd, a, &out),
        Command::Eval(a) => eval(&cmd, a, &out),
        Command::Sweep(a) => sweep(&cmd, a, &out),
        Command::Overlap(a) => overlap(&cmd, a, &out),
        Command::Stats(a) => stats(&cmd, a, &out),
    }
}

/// Persists the flags plus whatever was derived from them.
fn run_config(out: &Path, cmd: &Command, resolved: impl Serialize) -> Result<(), CliError> {
    write_json(
        &out.join(RUN_CONFIG),
        &json!({ "args": cmd, "resolved": resolved }),
    )
}

fn parse_list<T>(flag: &str, s: &str, mut item: impl FnMut(&str) -> Option<T>) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| item(p.trim()).ok_or_else(|| CliError::Usage(format!("--{flag}: cannot parse `{p}`"))))
        .collect()
}

fn text_mode(a: TextModeArg) -> TextMode {
    match a {
        TextModeArg::Name => TextMode::Name,
        TextModeArg::NameDesc => TextMode::NameDesc,
    }
}

fn synth(cmd: &Command, a: &SynthArgs, out: &Path) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_entities: a.entities,
        n_images: a.images,
        dim: a.dim,
        seed: a.seed,
        separability: a.separability,
        text_separability: a.text_separability,
        complementary: a.complementary,
        multi_mention_rate: a.multi_mention_rate,
        zipf_exponent: a.zipf_exponent,
        entity_images: !a.no_entity_images,
        text_mode: text_mode(a.text_mode),
        noise_sigma: a.noise_sigma,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    run_config(out, cmd, &cfg)?;
    let data = generate_synthetic(&cfg)?;
    data.store.write_to_dir(out)?;
    save_kb(&data.kb, out.join("kb.jsonl"))?;
    save_mentions(&data.dataset, out.join("mentions.jsonl"))?;
    write_json(&out.join("synth.json"), &json!({ "config": cfg, "stub_seeds": data.seeds }))
}

fn split_cmd(cmd: &Command, a: &SplitArgs, out: &Path) -> Result<(), CliError> {
    let r = parse_list("ratios", &a.ratios, |p| p.parse::<f64>().ok())?;
    let ratios: [f64; 3] = r
        .try_into()
        .map_err(|_| CliError::Usage("--ratios needs three values".into()))?;
    let spec = SplitSpec {
        ratios,
        seed: a.seed,
        test_unique_entities: !a.no_test_unique,
    };
    spec.validate()?;
    run_config(out, cmd, &spec)?;
    let ds = load_manifest_abs(&a.mentions)?;
    split(&ds, &spec)?.save(&spec, out)?;
    Ok(())
}

fn filter(cmd: &Command, a: &FilterArgs, out: &Path) -> Result<(), CliError> {
    let faces = BlobFaceDetector {
        threshold: a.face_threshold,
        min_area: a.face_min_area,
    };
    run_config(out, cmd, json!({ "face_threshold": faces.threshold, "face_min_area": faces.min_area }))?;
    let ner: Box<dyn PersonNer> = match (a.ner, &a.kb) {
        (NerArg::Bigram, _) => Box::new(CapitalizedBigramNer),
        (NerArg::Gazetteer, Some(kb)) => Box::new(GazetteerNer::from_kb(&load_kb(kb)?)),
        (NerArg::Gazetteer, None) => return Err(CliError::Usage("--ner gazetteer needs --kb".into())),
    };
    let mut records = read_records(&a.records)?;
    for r in &mut records {
        r.image = absolutize(&a.records, &r.image)?;
    }
    let outcome = construction_filter(&records, &abs_store(), &faces, ner.as_ref());
    write_records(&outcome.kept, out.join("kept.jsonl"))?;
    write_rejections(&outcome.rejected, out.join("rejected.jsonl"))?;
    Ok(())
}

fn embed(cmd: &Command, a: &EmbedArgs, out: &Path) -> Result<(), CliError> {
    let spec = PipelineSpec::from_args(&a.encoder)?;
    run_config(out, cmd, &spec)?;
    let pipeline = spec.build(None)?;
    let kb = load_kb_abs(&a.kb)?;
    let store = abs_store();
    let raw = embed_entities(&kb, &pipeline, &store)?;
    raw.matrix.save(out.join("entities.emb"))?;
    if let Some(path) = &a.mentions {
        let ds = load_mentions_checked(path)?;
        let rows = ds
            .mentions()
            .map(|m| Ok((m.mention_id.clone(), pipeline.raw_mention(m, &store)?)))
            .collect::<Result<Vec<_>, vnel::Error>>()?;
        EmbeddingMatrix::from_rows(spec.dim, rows)?.save(out.join("mentions.emb"))?;
    }
    write_json(
        &out.join(EMBED_META),
        &json!({ "pipeline": spec, "modality": raw.modality, "excluded": raw.excluded }),
    )
}

fn index(cmd: &Command, a: &IndexArgs, out: &Path) -> Result<(), CliError> {
    let spec = PipelineSpec::from_args(&a.encoder)?;
    run_config(out, cmd, &spec)?;
    let heads = a.heads.as_ref().map(HeadPair::restore).transpose()?;
    let pipeline = spec.build(heads)?;
    let raw = match &a.entity_embeddings {
        Some(path) => reuse_raw(path, &spec, &pipeline)?,
        None => embed_entities(&load_kb_abs(&a.kb)?, &pipeline, &abs_store())?,
    };
    let backend = match a.backend {
        BackendArg::Exact => Backend::Exact,
        BackendArg::Approx => Backend::approx_for(raw.matrix.row_count()),
    };
    let index = index_from_raw(&raw, &pipeline, backend)?;
    save_model(out, &spec, &Linker::new(pipeline, index)?)
}

/// Loads `embed` output, insisting it came from the same encoder setup.
fn reuse_raw(path: &Path, spec: &PipelineSpec, pipeline: &vnel::pipeline::Pipeline) -> Result<RawEntities, CliError> {
    let meta_path = path.with_file_name(EMBED_META);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| CliError::Io(format!("{}: {e}", meta_path.display())))?;
    let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| vnel::Error::Parse {
        location: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let theirs: PipelineSpec = serde_json::from_value(meta["pipeline"].clone()).map_err(|e| vnel::Error::Parse {
        location: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    if theirs.encoder != spec.encoder || theirs.seed != spec.seed || theirs.dim != spec.dim || theirs.subtask != spec.subtask {
        return Err(vnel::Error::Config(format!("{} was embedded with a different encoder setup", path.display())).into());
    }
    if spec.subtask == "v2t" && theirs.text_mode != spec.text_mode {
        return Err(vnel::Error::Config(format!("{} was embedded with another text mode", path.display())).into());
    }
    let excluded = serde_json::from_value(meta["excluded"].clone()).unwrap_or_default();
    Ok(RawEntities {
        matrix: EmbeddingMatrix::load(path)?,
        modality: pipeline.modality(),
        excluded,
    })
}

fn train_cmd(cmd: &Command, a: &TrainArgs, out: &Path) -> Result<(), CliError> {
    let spec = PipelineSpec::from_args(&a.encoder)?;
    let base = if spec.subtask == "v2v" {
        TrainConfig::visual_pretrained()
    } else {
        TrainConfig::image_text_pretrained()
    };
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        lr_mention: a.lr_mention.unwrap_or(base.lr_mention),
        lr_entity: a.lr_entity.unwrap_or(base.lr_entity),
        temperature: a.temperature,
        weight_decay: a.weight_decay,
        hidden: a.hidden,
        w1_init_std: a.w1_std,
        seed: spec.seed,
        ..base
    };
    cfg.validate()?;
    run_config(out, cmd, json!({ "pipeline": spec, "train": cfg }))?;
    let pipeline = spec.build(None)?;
    let kb = load_kb_abs(&a.kb)?;
    let ds = load_mentions_checked(&a.mentions)?;
    ds.validate_gold(&kb)?;
    let outcome = train(&ds, &kb, &pipeline, &abs_store(), &cfg)?;
    outcome.heads.checkpoint(out)?;
    outcome.write_log(out.join("train_log.jsonl"))?;
    Ok(())
}

fn require<'a>(flag: &str, v: &'a Option<std::path::PathBuf>, subtask: &str) -> Result<&'a Path, CliError> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("--subtask {subtask} needs --{flag}")))
}

fn check_subtask(meta: &ModelMeta, want: &str, dir: &Path) -> Result<(), CliError> {
    if meta.pipeline.subtask != want {
        return Err(CliError::Usage(format!(
            "{} is a {} model, expected {want}",
            dir.display(),
            meta.pipeline.subtask
        )));
    }
    Ok(())
}

fn link(cmd: &Command, a: &LinkArgs, out: &Path) -> Result<(), CliError> {
    let store = abs_store();
    let results = match a.subtask {
        Subtask::V2v | Subtask::V2t => {
            let name = if a.subtask == Subtask::V2v { "v2v" } else { "v2t" };
            let dir = require("model", &a.model, name)?;
            run_config(out, cmd, json!({ "subtask": name }))?;
            let (meta, linker) = load_model(dir)?;
            check_subtask(&meta, name, dir)?;
            let ds = load_mentions_checked(&a.mentions)?;
            ds.mentions()
                .map(|m| linker.link(m, &store, a.k))
                .collect::<Result<Vec<_>, _>>()?
        }
        Subtask::V2vt => {
            let rdir = require("recall-model", &a.recall_model, "v2vt")?;
            let sdir = require("rerank-model", &a.rerank_model, "v2vt")?;
            let cascade = CascadeConfig::new(rdir.display().to_string(), sdir.display().to_string(), a.rerank_k);
            run_config(out, cmd, &cascade)?;
            let (_, recall) = load_model(rdir)?;
            let (_, rerank) = load_model(sdir)?;
            cascade.validate(recall.index.len(), a.k)?;
            let ds = load_mentions_checked(&a.mentions)?;
            ds.mentions()
                .map(|m| link_v2vt(m, &cascade, &recall, &rerank, &store, a.k))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    write_results(&results, out.join("links.jsonl"))?;
    Ok(())
}

fn eval(cmd: &Command, a: &EvalArgs, out: &Path) -> Result<(), CliError> {
    run_config(out, cmd, json!({}))?;
    let excluded = match &a.model {
        Some(dir) => load_meta(dir)?.excluded,
        None => Vec::new(),
    };
    let results = read_results(&a.links)?;
    let gold = parse_manifest(&a.mentions)?.gold();
    evaluate(&results, &gold, &excluded)?.save(out.join("eval.json"))?;
    Ok(())
}

fn sweep(cmd: &Command, a: &SweepArgs, out: &Path) -> Result<(), CliError> {
    let (_, recall) = load_model(&a.recall_model)?;
    let (_, rerank) = load_model(&a.rerank_model)?;
    let n = recall.index.len();
    let ks = parse_list("k", &a.k, |p| if p == "full" { Some(n) } else { p.parse().ok() })?;
    run_config(out, cmd, json!({ "k": ks }))?;
    let ds = load_mentions_checked(&a.mentions)?;
    if !ds.is_fully_labeled() {
        let m = ds.mentions().find(|m| m.gold_entity_id.is_none()).expect("an unlabeled mention");
        return Err(vnel::Error::MissingGold(m.mention_id.clone()).into());
    }
    let store = abs_store();
    let gold = ds.gold();
    let rq = embed_mentions(&recall, ds.mentions(), &store)?;
    let sq = embed_mentions(&rerank, ds.mentions(), &store)?;
    let curve = rerank_sweep(
        &SweepInput {
            recall_index: &recall.index,
            rerank_index: &rerank.index,
            recall_queries: &rq,
            rerank_queries: &sq,
            gold: &gold,
        },
        &ks,
    )?;
    write_curve_csv(&curve, out.join("sweep.csv"))?;
    Ok(())
}

fn overlap(cmd: &Command, a: &OverlapArgs, out: &Path) -> Result<(), CliError> {
    let ks = parse_list("k", &a.k, |p| p.parse::<usize>().ok())?;
    if ks.iter().collect::<BTreeSet<_>>().len() != ks.len() {
        return Err(CliError::Usage("--k values must be distinct".into()));
    }
    run_config(out, cmd, json!({ "k": ks }))?;
    let ra = read_results(&a.links_a)?;
    let rb = read_results(&a.links_b)?;
    let points = ks
        .iter()
        .map(|&k| Ok((k, overlap_at_k(&ra, &rb, k)?)))
        .collect::<Result<Vec<_>, vnel::Error>>()?;
    write_curve_csv(&points, out.join("overlap.csv"))?;
    Ok(())
}

fn stats(cmd: &Command, a: &StatsArgs, out: &Path) -> Result<(), CliError> {
    run_config(out, cmd, json!({}))?;
    let ds = parse_manifest(&a.mentions)?;
    let kb = load_kb(&a.kb)?;
    write_json(&out.join("stats.json"), &dataset_stats(&ds, &kb)?)
}
