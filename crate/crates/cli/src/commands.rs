use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dualtrain_core::analysis::{
    apply_domain_filter, compare_self_vs_back, taxonomy_confusion, train_domain_filter,
    DomainFilterConfig, DomainLabel, OrderingReport, PrPoint,
};
use dualtrain_core::augmentation::{
    adapt, export_synthetic, import_synthetic, MetricDevEvaluator, Task,
};
use dualtrain_core::config::{RetrieverBackend, RunConfig};
use dualtrain_core::corpus::{load_corpus, CorpusBundle, Manifest};
use dualtrain_core::evaluation::{evaluate, generate_for_pairs, EvalReport, EvalSplit, CSV_HEADER};
use dualtrain_core::filters::apply_filter;
use dualtrain_core::models::{DualEncoder, Generator, Retriever};
use dualtrain_core::pipeline::{
    adapt_config, baseline_dual_encoder, build_generator, domain_filter_split, ir_trajectory,
    load_models, qg_trajectory, retrieval_examples, save_models, synthetic_cells,
    synthetic_retrieval_examples, train_baseline, ConfidenceSamples, RETRIEVER_CHECKPOINT,
};
use dualtrain_core::synth::{desk_corpus, DeskCorpusConfig};
use serde::Serialize;

use crate::rundir::{RunDir, RUN_META};
use crate::{Command, Common};

/// A usage or input problem; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 1 for validation failures, 2 for runtime errors.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<dualtrain_core::Error>() {
            if e.is_validation() || matches!(e, dualtrain_core::Error::InvalidArgument(_)) {
                return 1;
            }
        }
    }
    2
}

/// Reads the config file (or a run_meta.json), applies flag overrides and validates.
pub fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Usage(format!("config {}: invalid JSON: {e}", path.display())))?;
            let inner = match value.get("config") {
                Some(c) if value.get("command").is_some() => c.to_string(),
                _ => text,
            };
            RunConfig::from_json(&inner).with_context(|| format!("config {}", path.display()))?
        }
    };
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.mode {
        cfg.mode = v.into();
    }
    if let Some(v) = common.task {
        cfg.task = v.into();
    }
    if let Some(v) = common.filter {
        cfg.filter.kind = v.into();
    }
    if let Some(v) = common.accept_fraction {
        cfg.filter.accept_fraction = v;
    }
    if let Some(v) = common.iters {
        cfg.max_iters = v;
    }
    if let Some(v) = &common.corpus {
        cfg.corpus = Some(v.clone());
    }
    if let Some(v) = &common.generator {
        cfg.models.generator = v.parse().context("--generator")?;
    }
    if let Some(v) = &common.retriever {
        cfg.models.retriever = v.parse().context("--retriever")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(command: Command, common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| Usage("--out <DIR> is required".into()))?;
    let name = command.name();
    let mut dir = RunDir::create(out, common.force)?;
    log::info!("{name}: writing to {}", out.display());
    let result = execute(command, common, &cfg, &mut dir);
    dir.finish(name, &cfg, result.as_ref().err())?;
    result
}

fn execute(command: Command, common: &Common, cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    match command {
        Command::Ingest { desk, desk_seed } => ingest(cfg, dir, desk.then_some(desk_seed)),
        Command::Validate => validate(cfg, dir),
        Command::TrainBaseline => train(cfg, dir),
        Command::Adapt => run_adapt(common, cfg, dir),
        Command::Filter { synthetic } => filter(common, cfg, dir, &synthetic),
        Command::Eval { split } => eval(common, cfg, dir, split.into()),
        Command::Analyze { alpha, steps } => analyze(common, cfg, dir, alpha, steps),
        Command::Report { runs } => report(dir, &runs),
    }
}

fn load_bundle(cfg: &RunConfig) -> Result<CorpusBundle> {
    let manifest_path = cfg.corpus.as_deref().ok_or_else(|| {
        Usage("no corpus: pass --corpus <manifest.json> or set `corpus` in the config".into())
    })?;
    let manifest = Manifest::from_file(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let bundle = load_corpus(root, &manifest)
        .with_context(|| format!("loading {}", manifest_path.display()))?;
    log::info!(
        "corpus: {} source pairs, {} target passages, {} target questions, {} dev, {} test",
        bundle.source_pairs.len(),
        bundle.target_passages.len(),
        bundle.target_questions.len(),
        bundle.dev_pairs.len(),
        bundle.test_pairs.len()
    );
    Ok(bundle)
}

fn models_dir(common: &Common) -> Result<&Path> {
    common.models.as_deref().ok_or_else(|| {
        Usage("--models <DIR> is required (a train-baseline or adapt run directory)".into()).into()
    })
}

/// Models from --models when given, otherwise freshly trained baselines.
fn starting_models(
    common: &Common,
    bundle: &CorpusBundle,
    cfg: &RunConfig,
) -> Result<(Box<dyn Generator>, Box<dyn Retriever>)> {
    match &common.models {
        Some(dir) => Ok(load_models(dir, cfg)?),
        None => {
            log::info!("training baseline models on the source pairs");
            Ok(train_baseline(bundle, cfg)?)
        }
    }
}

fn write_checkpoints(
    dir: &mut RunDir,
    generator: &dyn Generator,
    retriever: &dyn Retriever,
) -> Result<()> {
    let (g, r) = save_models(dir.path(), generator, retriever)?;
    if g {
        dir.file(dualtrain_core::pipeline::GENERATOR_CHECKPOINT);
    }
    if r {
        dir.file(RETRIEVER_CHECKPOINT);
    }
    Ok(())
}

fn write_report(dir: &mut RunDir, report: &EvalReport) -> Result<()> {
    dir.write_json("report.json", report)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn ingest(cfg: &RunConfig, dir: &mut RunDir, desk_seed: Option<u64>) -> Result<()> {
    let bundle = match desk_seed {
        Some(seed) => desk_corpus(&DeskCorpusConfig {
            seed,
            ..DeskCorpusConfig::default()
        })?,
        None => load_bundle(cfg)?,
    };
    let manifest = bundle.write_to_dir(&dir.path().join("corpus"))?;
    for rel in [
        &manifest.source_pairs,
        &manifest.target_passages,
        &manifest.target_questions,
        &manifest.dev_pairs,
        &manifest.test_pairs,
    ]
    .into_iter()
    .chain(manifest.candidate_passages.as_ref())
    {
        dir.file(&format!("corpus/{}", rel.display()));
    }
    dir.file("corpus/manifest.json");
    dir.write_json("validation.json", &bundle.validate()?)
}

fn validate(cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let report = bundle.validate()?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    dir.write_json("validation.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn train(cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let (generator, mut retriever) = train_baseline(&bundle, cfg)?;
    write_checkpoints(dir, generator.as_ref(), retriever.as_ref())?;
    if bundle.test_pairs.is_empty() {
        log::warn!("the test split is empty; no report.json written");
        return Ok(());
    }
    let report = evaluate(
        generator.as_ref(),
        retriever.as_mut(),
        &bundle,
        EvalSplit::Test,
        &cfg.decode,
    )?;
    write_report(dir, &report)
}

fn run_adapt(common: &Common, cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let (generator, retriever) = starting_models(common, &bundle, cfg)?;
    let mut evaluator = MetricDevEvaluator {
        decode: cfg.decode.clone(),
        k: cfg.dev_k,
    };
    let mut outcome = adapt(
        &bundle,
        generator,
        retriever,
        &adapt_config(cfg),
        &mut evaluator,
    )?;
    if let (Some(best), Some(gain)) = (outcome.history.best(), outcome.history.net_gain()) {
        log::info!(
            "best iteration {} (dev metric {:.4}, net gain {gain:.4})",
            best.t,
            best.dev_metric
        );
    }
    export_synthetic(&outcome.best_synthetic, &dir.file("synthetic.jsonl"))?;
    dir.write_json("history.json", &outcome.history)?;
    dir.write_json("filter_report.json", &outcome.filter_reports)?;
    write_checkpoints(dir, outcome.generator.as_ref(), outcome.retriever.as_ref())?;
    let report = evaluate(
        outcome.generator.as_ref(),
        outcome.retriever.as_mut(),
        &bundle,
        EvalSplit::Test,
        &cfg.decode,
    )?;
    write_report(dir, &report)
}

fn filter(common: &Common, cfg: &RunConfig, dir: &mut RunDir, synthetic: &Path) -> Result<()> {
    let records = import_synthetic(synthetic)?;
    let (mut s_g, mut s_r): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| r.task == Task::Qg);
    let (generator, retriever) = load_models(models_dir(common)?, cfg)?;
    let outcome = apply_filter(
        &cfg.filter,
        &mut s_g,
        &mut s_r,
        generator.as_ref(),
        retriever.as_ref(),
    )?;
    s_g.append(&mut s_r);
    export_synthetic(&s_g, &dir.file("synthetic.jsonl"))?;
    dir.write_json(
        "filter_report.json",
        &[outcome.generator_set, outcome.retriever_set],
    )
}

fn eval(common: &Common, cfg: &RunConfig, dir: &mut RunDir, split: EvalSplit) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let (generator, mut retriever) = load_models(models_dir(common)?, cfg)?;
    let report = evaluate(
        generator.as_ref(),
        retriever.as_mut(),
        &bundle,
        split,
        &cfg.decode,
    )?;
    write_report(dir, &report)
}

#[derive(Serialize)]
struct Distributions {
    qg: OrderingReport,
    ir: OrderingReport,
}

#[derive(Serialize)]
struct DomainFilterSummary {
    alpha: f64,
    n_train: usize,
    n_heldout: usize,
    accepted: usize,
    rejected: usize,
    at_alpha: PrPoint,
}

fn analyze(
    common: &Common,
    cfg: &RunConfig,
    dir: &mut RunDir,
    alpha: f64,
    steps: usize,
) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Usage(format!("--alpha must lie in [0, 1], got {alpha}")).into());
    }
    let bundle = load_bundle(cfg)?;
    // The IR trajectories need the concrete native encoder.
    let encoder: Option<DualEncoder> = match (&cfg.models.retriever, &common.models) {
        (RetrieverBackend::NativeDual, Some(d)) => {
            Some(DualEncoder::load(&d.join(RETRIEVER_CHECKPOINT))?)
        }
        (RetrieverBackend::NativeDual, None) => Some(baseline_dual_encoder(&bundle, cfg)?),
        _ => None,
    };
    let (generator, mut retriever): (Box<dyn Generator>, Box<dyn Retriever>) = match &encoder {
        Some(enc) => {
            let generator = match &common.models {
                Some(d) => load_models(d, cfg)?.0,
                None => {
                    let mut g = build_generator(cfg)?;
                    g.train(&text_pairs(&bundle.source_pairs))?;
                    g
                }
            };
            (generator, Box::new(enc.clone()))
        }
        None => starting_models(common, &bundle, cfg)?,
    };

    let cells = synthetic_cells(generator.as_ref(), retriever.as_mut(), &bundle, cfg)?;
    let samples = ConfidenceSamples::from_cells(&cells);
    let distributions = Distributions {
        qg: compare_self_vs_back(&samples.qg_self, &samples.qg_back)?,
        ir: compare_self_vs_back(&samples.ir_self, &samples.ir_back)?,
    };
    for (task, r) in [("QG", &distributions.qg), ("IR", &distributions.ir)] {
        log::info!(
            "{task}: self mean {:.4} var {:.4}, back mean {:.4} var {:.4}",
            r.self_summary.mean,
            r.self_summary.variance,
            r.back_summary.mean,
            r.back_summary.variance
        );
    }
    dir.write_json("distributions.json", &distributions)?;

    let as_pairs = |v: &[dualtrain_core::augmentation::SyntheticExample]| -> Vec<_> {
        v.iter().map(|e| e.as_text_pair()).collect()
    };
    let dev_examples = retrieval_examples(&bundle.dev_pairs, cfg)?;
    for (label, qg_cell, ir_cell) in [
        ("self", &cells.qg_self, &cells.ir_self),
        ("back", &cells.qg_back, &cells.ir_back),
    ] {
        let log = qg_trajectory(
            generator.as_ref(),
            &as_pairs(qg_cell),
            &bundle.dev_pairs,
            steps,
        )?;
        dir.write(&format!("{label}/trajectory.csv"), log.to_csv())?;
        if let Some(enc) = &encoder {
            let examples = synthetic_retrieval_examples(ir_cell, &bundle, cfg)?;
            let log = ir_trajectory(enc, &examples, &dev_examples, cfg.train.epochs)?;
            dir.write(&format!("{label}/ir_trajectory.csv"), log.to_csv())?;
        }
    }
    if encoder.is_none() {
        log::info!("IR trajectories need the native-dual retriever; skipped");
    }

    let generated = generate_for_pairs(generator.as_ref(), &bundle.dev_pairs, &cfg.decode)?;
    let gold: Vec<&str> = bundle
        .dev_pairs
        .iter()
        .map(|p| p.question.text.as_str())
        .collect();
    let confusion = taxonomy_confusion(&gold, &generated)?;
    dir.write("confusion.csv", confusion.to_csv())?;
    dir.write_json("confusion.json", &confusion)?;

    let (train_set, heldout) = domain_filter_split(&bundle, 0.2, cfg.seed)?;
    let model = train_domain_filter(
        &train_set,
        &DomainFilterConfig {
            threshold: alpha,
            ..DomainFilterConfig::default()
        },
    )?;
    let questions: Vec<String> = heldout.iter().map(|(q, _)| q.clone()).collect();
    let labels: Vec<bool> = heldout
        .iter()
        .map(|(_, l)| *l == DomainLabel::InDomain)
        .collect();
    let result = apply_domain_filter(&model, &questions, alpha, Some(&labels))?;
    let curve = result.pr_curve.clone().unwrap_or_default();
    let mut csv = String::from("threshold,precision,recall\n");
    for p in &curve {
        csv.push_str(&format!(
            "{:.2},{},{}\n",
            p.threshold, p.precision, p.recall
        ));
    }
    dir.write("pr_curve.csv", csv)?;
    let at_alpha = dualtrain_core::analysis::precision_recall_curve(&result.probabilities, &labels)
        .into_iter()
        .min_by(|a, b| {
            (a.threshold - alpha)
                .abs()
                .total_cmp(&(b.threshold - alpha).abs())
        })
        .expect("grid is nonempty");
    dir.write_json(
        "domain_filter.json",
        &DomainFilterSummary {
            alpha,
            n_train: train_set.len(),
            n_heldout: heldout.len(),
            accepted: result.accepted.len(),
            rejected: result.rejected.len(),
            at_alpha,
        },
    )
}

fn text_pairs(
    pairs: &[dualtrain_core::corpus::AlignedPair],
) -> Vec<dualtrain_core::models::TextPair> {
    pairs
        .iter()
        .map(|p| dualtrain_core::models::TextPair {
            passage: p.passage.text.clone(),
            question: p.question.text.clone(),
        })
        .collect()
}

fn report(dir: &mut RunDir, runs: &[PathBuf]) -> Result<()> {
    let mut csv = format!("run,{CSV_HEADER}\n");
    for run in runs {
        let path = run.join("report.json");
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Usage(format!("{}: not an evaluation report: {e}", path.display())))?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        let row = report
            .to_csv()
            .lines()
            .nth(1)
            .unwrap_or_default()
            .to_string();
        csv.push_str(&format!("{name},{row}\n"));
        if !run.join(RUN_META).is_file() {
            log::warn!("{} has no {RUN_META}", run.display());
        }
    }
    print!("{csv}");
    dir.write("report.csv", csv)
}
