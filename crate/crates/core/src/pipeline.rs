//! Model construction and baseline training from a [`RunConfig`].

use std::path::Path;

use crate::analysis::{generator_nll, perplexity, DomainLabel, TrajectoryLog, TrajectoryPoint};
use crate::augmentation::{build_synthetic, AdaptConfig, Direction, SyntheticExample, Task};
use crate::config::{GeneratorBackend, RetrieverBackend, RunConfig};
use crate::corpus::{sample, AlignedPair, CorpusBundle};
use crate::error::{Error, Result};
use crate::models::plugin::{self, PluginGenerator, PluginRetriever, Role};
use crate::models::{
    load_generator, load_retriever, mine_negatives, Bm25Retriever, DualEncoder, DualEncoderConfig,
    Generator, NgramCopyGenerator, RetrievalExample, Retriever, TextPair,
};
use crate::rng::derive_seed;

pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";
pub const RETRIEVER_CHECKPOINT: &str = "retriever.ckpt";

/// Untrained models for the configured backends. Plugins are started here.
pub fn build_generator(cfg: &RunConfig) -> Result<Box<dyn Generator>> {
    Ok(match &cfg.models.generator {
        GeneratorBackend::Native => Box::new(NgramCopyGenerator::new(cfg.ngram.clone())?),
        GeneratorBackend::Plugin(cmd) => {
            Box::new(PluginGenerator::new(plugin::attach(cmd, Role::Generator)?)?)
        }
    })
}

pub fn dual_encoder_config(cfg: &RunConfig) -> DualEncoderConfig {
    DualEncoderConfig {
        dim: cfg.encoder_dim,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch,
        learning_rate: cfg.native_learning_rate(),
        in_batch_negatives: true,
        seed: derive_seed(cfg.seed, "dual-encoder"),
    }
}

pub fn build_retriever(cfg: &RunConfig) -> Result<Box<dyn Retriever>> {
    Ok(match &cfg.models.retriever {
        RetrieverBackend::NativeBm25 => Box::new(Bm25Retriever::new(cfg.bm25.clone())),
        RetrieverBackend::NativeDual => Box::new(DualEncoder::new(dual_encoder_config(cfg))?),
        RetrieverBackend::Plugin(cmd) => {
            Box::new(PluginRetriever::new(plugin::attach(cmd, Role::Retriever)?)?)
        }
    })
}

/// Retrieval training data: each pair with BM25 hard negatives mined from the
/// pairs' own passages.
pub fn retrieval_examples(pairs: &[AlignedPair], cfg: &RunConfig) -> Result<Vec<RetrievalExample>> {
    let mut passages: Vec<_> = pairs.iter().map(|p| p.passage.clone()).collect();
    passages.sort_by(|a, b| a.id.cmp(&b.id));
    passages.dedup_by(|a, b| a.id == b.id);
    let text: std::collections::HashMap<&str, &str> = passages
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let bm25 = Bm25Retriever::over(&passages, cfg.bm25.clone());
    pairs
        .iter()
        .map(|p| {
            let set = mine_negatives(
                &p.question.id,
                &p.question.text,
                &p.passage.id,
                &bm25,
                cfg.negatives_k,
            )?;
            Ok(RetrievalExample {
                question: p.question.text.clone(),
                positive: p.passage.text.clone(),
                negatives: set
                    .negative_passage_ids
                    .iter()
                    .map(|id| text[id.as_str()].to_string())
                    .collect(),
            })
        })
        .collect()
}

/// Trains both models on the source pairs.
pub fn train_baseline(
    bundle: &CorpusBundle,
    cfg: &RunConfig,
) -> Result<(Box<dyn Generator>, Box<dyn Retriever>)> {
    let mut generator = build_generator(cfg)?;
    generator.train(&text_pairs(&bundle.source_pairs))?;
    let mut retriever = build_retriever(cfg)?;
    retriever.train(&retrieval_examples(&bundle.source_pairs, cfg)?)?;
    Ok((generator, retriever))
}

/// The native dual encoder trained on the source pairs, as `train_baseline`
/// trains it for the `native-dual` backend.
pub fn baseline_dual_encoder(bundle: &CorpusBundle, cfg: &RunConfig) -> Result<DualEncoder> {
    let mut enc = DualEncoder::new(dual_encoder_config(cfg))?;
    enc.train(&retrieval_examples(&bundle.source_pairs, cfg)?)?;
    Ok(enc)
}

/// Loads models from a directory of checkpoints; plugin backends are started
/// fresh instead, since their state lives outside this process.
pub fn load_models(
    dir: &Path,
    cfg: &RunConfig,
) -> Result<(Box<dyn Generator>, Box<dyn Retriever>)> {
    let generator = match cfg.models.generator {
        GeneratorBackend::Native => load_generator(&dir.join(GENERATOR_CHECKPOINT))?,
        GeneratorBackend::Plugin(_) => build_generator(cfg)?,
    };
    let retriever = match cfg.models.retriever {
        RetrieverBackend::Plugin(_) => build_retriever(cfg)?,
        _ => load_retriever(&dir.join(RETRIEVER_CHECKPOINT))?,
    };
    Ok((generator, retriever))
}

pub fn adapt_config(cfg: &RunConfig) -> AdaptConfig {
    let mut a = AdaptConfig::new(cfg.mode, cfg.task);
    a.adapt_both = cfg.adapt_both;
    a.max_iters = cfg.max_iters;
    a.decode = cfg.decode.clone();
    a.filter = cfg.filter.clone();
    a.negatives_k = cfg.negatives_k;
    a.bm25 = cfg.bm25.clone();
    a.dev_k = cfg.dev_k;
    a
}

/// The four direction × task cells built with the same pair of models.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticCells {
    pub qg_self: Vec<SyntheticExample>,
    pub qg_back: Vec<SyntheticExample>,
    pub ir_self: Vec<SyntheticExample>,
    pub ir_back: Vec<SyntheticExample>,
}

pub fn synthetic_cells(
    generator: &dyn Generator,
    retriever: &mut dyn Retriever,
    bundle: &CorpusBundle,
    cfg: &RunConfig,
) -> Result<SyntheticCells> {
    let mut cell = |d, t| {
        build_synthetic(
            d,
            t,
            generator,
            retriever,
            &bundle.target_passages,
            &bundle.target_questions,
            &cfg.decode,
        )
    };
    Ok(SyntheticCells {
        qg_self: cell(Direction::SelfTraining, Task::Qg)?,
        qg_back: cell(Direction::Back, Task::Qg)?,
        ir_self: cell(Direction::SelfTraining, Task::Ir)?,
        ir_back: cell(Direction::Back, Task::Ir)?,
    })
}

/// Self-scored and back-scored confidences for both critics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfidenceSamples {
    /// Generator log-likelihood of its own questions for target passages.
    pub qg_self: Vec<f64>,
    /// Generator log-likelihood of target questions for retrieved passages.
    pub qg_back: Vec<f64>,
    /// Retriever similarity of its own top passage for target questions.
    pub ir_self: Vec<f64>,
    /// Retriever similarity of target passages for generated questions.
    pub ir_back: Vec<f64>,
}

impl ConfidenceSamples {
    /// The confidence each cell's producing model attached to its records.
    pub fn from_cells(cells: &SyntheticCells) -> Self {
        let gen = |v: &[SyntheticExample]| v.iter().filter_map(|e| e.gen_loglik).collect();
        let ret = |v: &[SyntheticExample]| v.iter().filter_map(|e| e.ret_sim).collect();
        ConfidenceSamples {
            qg_self: gen(&cells.qg_self),
            qg_back: gen(&cells.qg_back),
            ir_self: ret(&cells.ir_self),
            ir_back: ret(&cells.ir_back),
        }
    }
}

/// Builds all four synthetic cells with baseline models and collects the
/// confidence each producing task's model assigns to its data.
pub fn confidence_samples(
    generator: &dyn Generator,
    retriever: &mut dyn Retriever,
    bundle: &CorpusBundle,
    cfg: &RunConfig,
) -> Result<ConfidenceSamples> {
    Ok(ConfidenceSamples::from_cells(&synthetic_cells(
        generator, retriever, bundle, cfg,
    )?))
}

/// Saves native checkpoints into `dir`. Plugin models keep their own state and
/// are skipped; the returned flags say which files were written.
pub fn save_models(
    dir: &Path,
    generator: &dyn Generator,
    retriever: &dyn Retriever,
) -> Result<(bool, bool)> {
    let mut written = (false, false);
    match generator.save_checkpoint(&dir.join(GENERATOR_CHECKPOINT)) {
        Ok(()) => written.0 = true,
        Err(Error::Unsupported(msg)) => log::info!("generator checkpoint skipped: {msg}"),
        Err(e) => return Err(e),
    }
    match retriever.save_checkpoint(&dir.join(RETRIEVER_CHECKPOINT)) {
        Ok(()) => written.1 = true,
        Err(Error::Unsupported(msg)) => log::info!("retriever checkpoint skipped: {msg}"),
        Err(e) => return Err(e),
    }
    Ok(written)
}

fn text_pairs(pairs: &[AlignedPair]) -> Vec<TextPair> {
    pairs
        .iter()
        .map(|p| TextPair {
            passage: p.passage.text.clone(),
            question: p.question.text.clone(),
        })
        .collect()
}

fn per_token(generator: &dyn Generator, pairs: &[TextPair]) -> Result<f64> {
    let (nll, tokens) = generator_nll(generator, pairs)?;
    Ok(nll / tokens.max(1) as f64)
}

/// Generator fine-tuned on `synthetic` in `steps` equal slices. Step 0 is the
/// starting model; each later step reports the per-token NLL on the whole
/// synthetic set and on the dev pairs, and the dev perplexity.
pub fn qg_trajectory(
    base: &dyn Generator,
    synthetic: &[TextPair],
    dev: &[AlignedPair],
    steps: usize,
) -> Result<TrajectoryLog> {
    if steps == 0 || synthetic.is_empty() {
        return Err(Error::InvalidArgument(
            "trajectory needs at least one step and one example".into(),
        ));
    }
    let dev = text_pairs(dev);
    let mut g = base.snapshot()?;
    let mut log = TrajectoryLog::default();
    let mut record = |step, g: &dyn Generator| -> Result<()> {
        let (nll, tokens) = generator_nll(g, &dev)?;
        log.push(TrajectoryPoint {
            step,
            train_loss: per_token(g, synthetic)?,
            eval_loss: Some(nll / tokens.max(1) as f64),
            ppl: Some(perplexity(nll, tokens)?),
        })
    };
    record(0, g.as_ref())?;
    let size = synthetic.len().div_ceil(steps);
    for (i, chunk) in synthetic.chunks(size).enumerate() {
        g.fine_tune(chunk)?;
        record(i + 1, g.as_ref())?;
    }
    Ok(log)
}

/// Mean objective over consecutive mini-batches.
pub fn batched_objective(encoder: &DualEncoder, examples: &[RetrievalExample]) -> f64 {
    let size = encoder.config().batch_size;
    let total: f64 = examples
        .chunks(size)
        .map(|c| encoder.objective(c) * c.len() as f64)
        .sum();
    total / examples.len().max(1) as f64
}

/// Dual encoder trained on `examples` for `epochs` epochs. Step 0 is the
/// starting model; later steps report the mean mini-batch loss of the epoch
/// and the batched dev objective.
pub fn ir_trajectory(
    base: &DualEncoder,
    examples: &[RetrievalExample],
    dev: &[RetrievalExample],
    epochs: usize,
) -> Result<TrajectoryLog> {
    let mut enc = base.clone();
    let mut log = TrajectoryLog::default();
    log.push(TrajectoryPoint {
        step: 0,
        train_loss: batched_objective(&enc, examples),
        eval_loss: Some(batched_objective(&enc, dev)),
        ppl: None,
    })?;
    for epoch in 1..=epochs {
        let (mut sum, mut n) = (0.0, 0usize);
        enc.fit(examples, 1, |_, loss| {
            sum += loss;
            n += 1;
        })?;
        log.push(TrajectoryPoint {
            step: epoch,
            train_loss: sum / n.max(1) as f64,
            eval_loss: Some(batched_objective(&enc, dev)),
            ppl: None,
        })?;
    }
    Ok(log)
}

/// Retrieval examples from IR synthetic records, with BM25 hard negatives
/// mined over the target passages.
pub fn synthetic_retrieval_examples(
    records: &[SyntheticExample],
    bundle: &CorpusBundle,
    cfg: &RunConfig,
) -> Result<Vec<RetrievalExample>> {
    let bm25 = Bm25Retriever::over(&bundle.target_passages, cfg.bm25.clone());
    let text: std::collections::HashMap<&str, &str> = bundle
        .target_passages
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    records
        .iter()
        .filter(|r| r.task == Task::Ir && r.kept)
        .enumerate()
        .map(|(i, r)| {
            let gold = r.source_passage_id.as_deref().unwrap_or_default();
            let qid = r
                .source_question_id
                .clone()
                .unwrap_or_else(|| format!("synthetic-{i}"));
            let set = mine_negatives(&qid, &r.input_text, gold, &bm25, cfg.negatives_k)?;
            Ok(RetrievalExample {
                question: r.input_text.clone(),
                positive: r.output_text.clone(),
                negatives: set
                    .negative_passage_ids
                    .iter()
                    .filter_map(|id| text.get(id.as_str()).map(|t| t.to_string()))
                    .collect(),
            })
        })
        .collect()
}

/// Target questions labeled in-domain and source questions labeled
/// out-of-domain, shuffled with `seed` and split into training and held-out
/// parts (`holdout` is the held-out fraction).
pub fn domain_filter_split(
    bundle: &CorpusBundle,
    holdout: f64,
    seed: u64,
) -> Result<(Vec<(String, DomainLabel)>, Vec<(String, DomainLabel)>)> {
    let mut all: Vec<(String, DomainLabel)> = bundle
        .target_questions
        .iter()
        .map(|q| (q.text.clone(), DomainLabel::InDomain))
        .chain(
            bundle
                .source_pairs
                .iter()
                .map(|p| (p.question.text.clone(), DomainLabel::Ood)),
        )
        .collect();
    all = sample(&all, all.len(), derive_seed(seed, "domain-filter"))?;
    let n_held = ((all.len() as f64) * holdout).round() as usize;
    let train = all.split_off(n_held.min(all.len()));
    Ok((train, all))
}
