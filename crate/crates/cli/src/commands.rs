use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use vlf_core::localizer::{
    train_localizer, FusionConfig, LocalizerTrainConfig, Prediction, RcConfig, RcModel,
};
use vlf_core::metrics::{
    agreement_table, bleu, localization_report, rouge, windowed_f1_corpus, EvalReport, Judgment,
    RougeVariant, WindowRadius,
};
use vlf_core::pipeline::*;
use vlf_core::qg::{
    answer_window, format_question, QgConfig, QgModel, QgSource, QgTrainConfig, Vocab,
};
use vlf_core::subtitle::DEFAULT_WORD_BUDGET;
use vlf_core::tagger::{
    table_template, CrfConfig, CrfModel, CrfTrainConfig, PromptConfig, PromptTagger,
    PromptTrainConfig, TaggedSequence,
};
use vlf_core::text::tokenize;

use crate::{Cli, Command, Metric, TaggerMode};

const CLASSIFIER_FILE: &str = "classifier.json";
const TAGGER_FILE: &str = "tagger.vlfk";
const QG_FILE: &str = "qg.vlfk";
const LOCALIZER_FILE: &str = "localizer.vlfk";
const DATASET_DIR: &str = "dataset";
const REVIEW_DIR: &str = "review";

struct Ctx {
    data_dir: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, explicit: Option<PathBuf>, default: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.data_dir.join(default))
    }

    /// Output path; creates the data directory when the default is used.
    fn out(&self, explicit: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = self.path(explicit, default);
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        data_dir: cli.data_dir,
        seed: cli.seed,
    };
    match cli.command {
        Command::Ingest {
            manifest,
            classifier,
        } => ingest(&ctx, &manifest, classifier),
        Command::TrainTagger {
            manifest,
            gold,
            mode,
            template,
            epochs,
            out,
        } => train_tagger(&ctx, &manifest, &gold, mode, template, epochs, out),
        Command::Tag {
            manifest,
            tagger,
            gold,
            out,
        } => tag(&ctx, &manifest, tagger, gold, out),
        Command::TrainQg {
            manifest,
            gold,
            qg,
            epochs,
            out,
        } => train_qg(&ctx, &manifest, &gold, qg.into(), epochs, out),
        Command::Qgen {
            model,
            text,
            manifest,
            dataset,
            beam,
            out,
        } => qgen(&ctx, model, text, manifest.zip(dataset), beam, out),
        Command::BuildDataset {
            manifest,
            tagger,
            qg,
            classifier,
            beam,
            out,
        } => build(&ctx, &manifest, tagger, qg, classifier, beam, out),
        Command::Stats {
            manifest,
            dataset,
            json,
        } => stats(&ctx, &manifest, dataset, json),
        Command::TrainLocalizer {
            manifest,
            dataset,
            ccal,
            lambda,
            fusion,
            per_word,
            qg,
            dim,
            epochs,
            out,
        } => {
            let opts = LocalizerOpts {
                ccal,
                lambda,
                fusion,
                per_word,
                profile: qg.into(),
                dim,
                epochs,
            };
            train_loc(&ctx, &manifest, &dataset, &opts, out)
        }
        Command::Localize {
            model,
            manifest,
            dataset,
            out,
        } => localize(&ctx, model, &manifest, &dataset, out),
        Command::Eval {
            metric,
            pred,
            gold,
            judgments,
            samples,
            thresholds,
            window,
            full_radius,
            n,
            rouge,
            json,
        } => {
            let report = match metric {
                Metric::Iou => eval_iou(need(pred, "--pred")?, need(gold, "--gold")?, &thresholds)?,
                Metric::Wf1 => {
                    let rule = if full_radius {
                        WindowRadius::W
                    } else {
                        WindowRadius::WMinusOne
                    };
                    eval_wf1(need(pred, "--pred")?, need(gold, "--gold")?, window, rule)?
                }
                Metric::Bleu => eval_text(need(pred, "--pred")?, TextMetric::Bleu(n))?,
                Metric::Rouge => {
                    eval_text(need(pred, "--pred")?, TextMetric::Rouge(rouge.parse()?))?
                }
                Metric::Agreement => {
                    let judgments: Vec<Judgment> = read_jsonl(need(judgments, "--judgments")?)?;
                    let table = agreement_table(&judgments, samples)?;
                    if json {
                        println!("{}", serde_json::to_string_pretty(&table)?);
                    } else {
                        print!("{}", table.to_table());
                    }
                    return Ok(());
                }
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
        Command::SampleReview {
            manifest,
            dataset,
            n,
            state_dir,
        } => sample_review(&ctx, &manifest, &dataset, n, state_dir),
        Command::Serve {
            port,
            host,
            state_dir,
            static_dir,
        } => {
            let store = ReviewStore::open(ctx.path(state_dir, REVIEW_DIR))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(vlf_cli::server::serve(
                Arc::new(store),
                static_dir,
                std::net::SocketAddr::new(host, port),
            ))
        }
    }
}

fn need(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.ok_or_else(|| anyhow!("this metric needs {flag}"))
}

fn ingest_all(corpus: &Corpus) -> Vec<IngestedVideo> {
    corpus
        .videos
        .iter()
        .filter_map(|r| match corpus.ingest(r) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("skipping video `{}`: {e}", r.video_id);
                None
            }
        })
        .collect()
}

/// Loads `explicit` or the data-dir classifier, training and saving one
/// from the manifest labels when neither exists.
fn classifier(ctx: &Ctx, corpus: &Corpus, explicit: Option<PathBuf>) -> Result<BowClassifier> {
    let path = ctx.path(explicit.clone(), CLASSIFIER_FILE);
    if path.exists() {
        return Ok(BowClassifier::load(&path)?);
    }
    ensure!(
        explicit.is_none(),
        "classifier {} not found",
        path.display()
    );
    let docs: Vec<(String, VideoClass)> = ingest_all(corpus)
        .into_iter()
        .filter_map(|v| v.record.category.map(|c| (v.text(), c)))
        .collect();
    ensure!(
        !docs.is_empty(),
        "no saved classifier and no labeled videos to train one"
    );
    log::info!("training video classifier on {} labeled videos", docs.len());
    let clf = BowClassifier::train(&docs, &BowTrainConfig::default())?;
    clf.save(ctx.out(None, CLASSIFIER_FILE)?)?;
    Ok(clf)
}

fn ingest(ctx: &Ctx, manifest: &Path, clf: Option<PathBuf>) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let clf = classifier(ctx, &corpus, clf)?;
    println!(
        "{:<24} {:>5} {:>6} {:>9}  class",
        "video", "cues", "words", "duration"
    );
    for r in &corpus.videos {
        match corpus.ingest(r) {
            Ok(v) => println!(
                "{:<24} {:>5} {:>6} {:>9.1}  {}",
                r.video_id,
                v.cues.len(),
                v.timeline.len(),
                r.duration_s,
                clf.classify(&v.text())
            ),
            Err(e) => println!("{:<24} failed: {e}", r.video_id),
        }
    }
    let (selected, failures) = select_instructional(&corpus, &corpus.videos, &clf);
    println!(
        "selected {} of {} videos, {} failed",
        selected.len(),
        corpus.videos.len(),
        failures.len()
    );
    Ok(())
}

fn train_tagger(
    ctx: &Ctx,
    manifest: &Path,
    gold: &Path,
    mode: TaggerMode,
    template: usize,
    epochs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let gold: Vec<VqaTriplet> = read_jsonl(gold)?;
    let seqs = tagging_corpus(&ingest_all(&corpus), &gold, DEFAULT_WORD_BUDGET)?;
    let (tagger, report) = match mode {
        TaggerMode::Crf => {
            let mut m = CrfModel::new(CrfConfig {
                seed: ctx.seed,
                ..CrfConfig::default()
            })?;
            let d = CrfTrainConfig::default();
            let r = m.train(
                &seqs,
                &CrfTrainConfig {
                    epochs: epochs.unwrap_or(d.epochs),
                    seed: ctx.seed,
                    ..d
                },
            )?;
            (Tagger::Crf(m), r)
        }
        TaggerMode::Prompt => {
            let mut m = PromptTagger::new(PromptConfig {
                seed: ctx.seed,
                ..PromptConfig::with_template(table_template(template)?)
            })?;
            let d = PromptTrainConfig::default();
            let r = m.train(
                &seqs,
                &PromptTrainConfig {
                    epochs: epochs.unwrap_or(d.epochs),
                    seed: ctx.seed,
                    ..d
                },
            )?;
            (Tagger::Prompt(m), r)
        }
    };
    let pairs = seqs
        .iter()
        .map(|s| {
            Ok((
                tagger.tag(&s.segments.iter().map(String::as_str).collect::<Vec<_>>())?,
                s.tags.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let f1 = windowed_f1_corpus(&pairs, 1, WindowRadius::WMinusOne)?;
    let path = ctx.out(out, TAGGER_FILE)?;
    tagger.save(&path)?;
    println!(
        "trained on {} videos; final loss {:.4}; training F1 (w=1) {:.4}; saved {}",
        seqs.len(),
        report.loss_trace.last().copied().unwrap_or(f64::NAN),
        f1.f1,
        path.display()
    );
    Ok(())
}

fn tag(
    ctx: &Ctx,
    manifest: &Path,
    tagger: Option<PathBuf>,
    gold: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let videos = ingest_all(&corpus);
    let seqs: Vec<TaggedSequence> = match gold {
        Some(g) => tagging_corpus(&videos, &read_jsonl(g)?, DEFAULT_WORD_BUDGET)?,
        None => {
            let tagger = Tagger::load(ctx.path(tagger, TAGGER_FILE))?;
            videos
                .iter()
                .map(|v| {
                    let segs = segment_video(v, DEFAULT_WORD_BUDGET)?;
                    let texts: Vec<&str> = segs.iter().map(|s| s.text.as_str()).collect();
                    Ok(TaggedSequence::from_segments(
                        &v.record.video_id,
                        &segs,
                        tagger.tag(&texts)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
    };
    emit_jsonl(out, &seqs)
}

fn emit_jsonl<T: Serialize>(out: Option<PathBuf>, items: &[T]) -> Result<()> {
    match out {
        Some(p) => Ok(write_jsonl(p, items)?),
        None => {
            let mut stdout = std::io::stdout().lock();
            for item in items {
                serde_json::to_writer(&mut stdout, item)?;
                writeln!(stdout)?;
            }
            Ok(())
        }
    }
}

fn qg_vocab(pairs: &[vlf_core::qg::QgPair]) -> Vocab {
    Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.window.as_slice(), p.question.as_slice()]),
        1,
    )
}

fn train_qg(
    ctx: &Ctx,
    manifest: &Path,
    gold: &Path,
    profile: vlf_core::qg::QgProfile,
    epochs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let gold: Vec<VqaTriplet> = read_jsonl(gold)?;
    let pairs = qg_pairs(&ingest_referenced(&corpus, &gold)?, &gold)?;
    let mut qg = QgModel::new(
        QgConfig {
            profile,
            seed: ctx.seed,
            ..QgConfig::default()
        },
        qg_vocab(&pairs),
    )?;
    let d = QgTrainConfig::default();
    let report = qg.train(
        &pairs,
        &QgTrainConfig {
            epochs: epochs.unwrap_or(d.epochs),
            seed: ctx.seed,
            ..d
        },
    )?;
    let path = ctx.out(out, QG_FILE)?;
    qg.save(&path)?;
    println!(
        "trained on {} pairs; final loss {:.4}; saved {}",
        pairs.len(),
        report.loss_trace.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

/// One generated question with the reference it was generated for.
#[derive(Debug, Serialize, Deserialize)]
struct QgenRecord {
    id: String,
    reference: String,
    candidate: String,
}

fn qgen(
    ctx: &Ctx,
    model: Option<PathBuf>,
    text: Option<String>,
    corpus: Option<(PathBuf, PathBuf)>,
    beam: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let qg = QgModel::load(ctx.path(model, QG_FILE))?;
    if let Some(text) = text {
        let g = qg.generate(QgSource::Tokens(&tokenize(&text)), beam)?;
        println!("{}", format_question(&g.tokens));
        return Ok(());
    }
    let (manifest, dataset) =
        corpus.ok_or_else(|| anyhow!("give --text or --manifest with --dataset"))?;
    let corpus = Corpus::load(manifest)?;
    let triplets: Vec<VqaTriplet> = read_jsonl(dataset_file(&dataset))?;
    let videos = ingest_referenced(&corpus, &triplets)?;
    let records = triplets
        .iter()
        .zip(triplet_ids(&triplets))
        .map(|(t, id)| {
            let v = videos
                .iter()
                .find(|v| v.record.video_id == t.video_id)
                .expect("ingested above");
            let g = qg.generate(
                QgSource::Tokens(&answer_window(&v.timeline, &t.answer())),
                beam,
            )?;
            Ok(QgenRecord {
                id,
                reference: t.question.clone(),
                candidate: format_question(&g.tokens),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit_jsonl(out, &records)
}

fn build(
    ctx: &Ctx,
    manifest: &Path,
    tagger: Option<PathBuf>,
    qg: Option<PathBuf>,
    clf: Option<PathBuf>,
    beam: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let clf = classifier(ctx, &corpus, clf)?;
    let tagger = Tagger::load(ctx.path(tagger, TAGGER_FILE)).context("loading tagger")?;
    let qg = QgModel::load(ctx.path(qg, QG_FILE)).context("loading question generator")?;
    let (selected, failures) = select_instructional(&corpus, &corpus.videos, &clf);
    let cfg = GenerateConfig {
        beam,
        ..GenerateConfig::default()
    };
    let dir = ctx.path(out, DATASET_DIR);
    let s = build_dataset(&selected, failures, &tagger, &qg, &cfg, ctx.seed, &dir)?;
    println!(
        "{} videos selected; {} candidate answers; {} triplets; filtered: {} question length, {} answer length, {} out of bounds; {} failures",
        s.selected_videos,
        s.filtered.candidates,
        s.stats.as_ref().map_or(0, |st| st.triplets),
        s.filtered.question_length,
        s.filtered.answer_length,
        s.filtered.out_of_bounds,
        s.failures
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn dataset_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

fn stats(ctx: &Ctx, manifest: &Path, dataset: Option<PathBuf>, json: bool) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let file = dataset_file(&ctx.path(dataset, DATASET_DIR));
    let triplets: Vec<VqaTriplet> = read_jsonl(&file)?;
    let stats = dataset_stats(&triplets, &ingest_referenced(&corpus, &triplets)?)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", stats.to_report().to_table());
    }
    let emitted = file.with_file_name(STATS_FILE);
    if emitted.exists() {
        let saved: DatasetStats = read_json(&emitted)?;
        if saved != stats {
            bail!("recomputed statistics differ from {}", emitted.display());
        }
        println!("matches {}", emitted.display());
    }
    Ok(())
}

struct LocalizerOpts {
    ccal: bool,
    lambda: f64,
    fusion: bool,
    per_word: bool,
    profile: vlf_core::qg::QgProfile,
    dim: usize,
    epochs: Option<usize>,
}

fn train_loc(
    ctx: &Ctx,
    manifest: &Path,
    dataset: &Path,
    o: &LocalizerOpts,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let triplets: Vec<VqaTriplet> = read_jsonl(dataset_file(dataset))?;
    let videos = ingest_referenced(&corpus, &triplets)?;
    let items = localizer_items(&corpus, &videos, &triplets, o.fusion)?;
    let fusion = if o.fusion {
        let dim = items
            .iter()
            .find_map(|i| i.video.track.as_ref().map(|t| t.feature_dim()))
            .ok_or_else(|| anyhow!("--fusion needs feature tracks in the manifest"))?;
        Some(FusionConfig {
            per_word: o.per_word,
            ..FusionConfig::new(dim, o.dim)
        })
    } else {
        None
    };
    let mut rc = RcModel::new(RcConfig {
        dim: o.dim,
        fusion,
        seed: ctx.seed,
        ..RcConfig::default()
    })?;
    let mut qg = if o.ccal {
        let pairs = qg_pairs(&videos, &triplets)?;
        Some(QgModel::new(
            QgConfig {
                dim: o.dim,
                profile: o.profile,
                seed: ctx.seed,
                ..QgConfig::default()
            },
            qg_vocab(&pairs),
        )?)
    } else {
        None
    };
    let d = LocalizerTrainConfig::default();
    let cfg = LocalizerTrainConfig {
        epochs: o.epochs.unwrap_or(d.epochs),
        lambda: if o.ccal { o.lambda } else { 0.0 },
        seed: ctx.seed,
        ..d
    };
    let report = train_localizer(&mut rc, qg.as_mut(), &items, &cfg)?;
    let path = ctx.out(out, LOCALIZER_FILE)?;
    rc.save(&path)?;
    for (epoch, loss) in report.loss_trace.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.4}", epoch + 1);
    }
    println!(
        "{} items ({} skipped); saved {}",
        items.len(),
        report.skipped,
        path.display()
    );
    Ok(())
}

fn localize(
    ctx: &Ctx,
    model: Option<PathBuf>,
    manifest: &Path,
    dataset: &Path,
    out: Option<PathBuf>,
) -> Result<()> {
    let rc = RcModel::load(ctx.path(model, LOCALIZER_FILE))?;
    let corpus = Corpus::load(manifest)?;
    let triplets: Vec<VqaTriplet> = read_jsonl(dataset_file(dataset))?;
    let videos = ingest_referenced(&corpus, &triplets)?;
    let items = localizer_items(&corpus, &videos, &triplets, rc.config().fusion.is_some())?;
    let preds = items
        .iter()
        .map(|i| rc.predict_item(i))
        .collect::<vlf_core::Result<Vec<_>>>()?;
    emit_jsonl(out, &preds)
}

fn eval_iou(pred: PathBuf, gold: PathBuf, thresholds: &[f64]) -> Result<EvalReport> {
    let preds: Vec<Prediction> = read_jsonl(pred)?;
    let triplets: Vec<VqaTriplet> = read_jsonl(dataset_file(&gold))?;
    let golds: Vec<Prediction> = triplets
        .iter()
        .zip(triplet_ids(&triplets))
        .map(|(t, id)| Prediction {
            video_id: t.video_id.clone(),
            question_id: id,
            start_s: t.answer_start_s,
            end_s: t.answer_end_s,
        })
        .collect();
    Ok(localization_report(&preds, &golds, thresholds)?)
}

fn eval_wf1(pred: PathBuf, gold: PathBuf, w: usize, rule: WindowRadius) -> Result<EvalReport> {
    let preds: Vec<TaggedSequence> = read_jsonl(pred)?;
    let golds: Vec<TaggedSequence> = read_jsonl(gold)?;
    let pairs = golds
        .iter()
        .map(|g| {
            let p = preds
                .iter()
                .find(|p| p.video_id == g.video_id)
                .ok_or_else(|| anyhow!("no predicted tags for video `{}`", g.video_id))?;
            Ok((p.tags.clone(), g.tags.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let prf = windowed_f1_corpus(&pairs, w, rule)?;
    let mut r = EvalReport::new("windowed segment F1");
    r.metric("P", prf.precision)
        .metric("R", prf.recall)
        .metric("F1", prf.f1);
    r.config("window", w).config("radius", format!("{rule:?}"));
    Ok(r)
}

enum TextMetric {
    Bleu(usize),
    Rouge(RougeVariant),
}

fn eval_text(pred: PathBuf, metric: TextMetric) -> Result<EvalReport> {
    let records: Vec<QgenRecord> = read_jsonl(pred)?;
    ensure!(!records.is_empty(), "no generated questions to score");
    let mut r = EvalReport::new("question generation");
    let mut total = 0.0;
    for rec in &records {
        let cand = tokenize(&rec.candidate);
        let reference = tokenize(&rec.reference);
        let v = match &metric {
            TextMetric::Bleu(n) => bleu(&cand, &[reference], *n)?,
            TextMetric::Rouge(variant) => rouge(&cand, &reference, *variant)?.f1,
        };
        total += v;
        r.items.push(vlf_core::metrics::ItemScore {
            id: rec.id.clone(),
            value: v,
        });
    }
    let name = match metric {
        TextMetric::Bleu(n) => format!("BLEU-{n}"),
        TextMetric::Rouge(v) => format!("ROUGE-{v:?}"),
    };
    r.metric(name, total / records.len() as f64);
    Ok(r)
}

fn sample_review(
    ctx: &Ctx,
    manifest: &Path,
    dataset: &Path,
    n: usize,
    state_dir: Option<PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(manifest)?;
    let triplets: Vec<VqaTriplet> = read_jsonl(dataset_file(dataset))?;
    let videos = ingest_referenced(&corpus, &triplets)?;
    let samples = sample_for_review(&triplets, &videos, n, ctx.seed)?;
    let dir = ctx.path(state_dir, REVIEW_DIR);
    ReviewStore::create(&dir, &samples)?;
    println!(
        "wrote {} review samples to {}",
        samples.len(),
        dir.display()
    );
    Ok(())
}
