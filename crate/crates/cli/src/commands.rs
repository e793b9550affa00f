use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use hallueval::annotations::{
    build_stats, load_class_split, parse_coco_instances, CooccurrenceAggregation, Corpus,
    ImageId, COCO_SYNONYMS_TSV,
};
use hallueval::chair::{score_chair, CaptionRecord};
use hallueval::chair_men::{self, ChairMenConfig};
use hallueval::faithscore::{score_faith, PromptTemplate};
use hallueval::grounded_text::parse_grounded;
use hallueval::pope::{self, Strategy};
use hallueval::providers::{
    build_chat, build_embedder, build_noun_phrases, build_vqa, mean_clip_score, read_jsonl,
    ProviderCache,
};
use hallueval::refexp::{self, Extraction};
use hallueval::report::{diff_reports, digest_bytes, digest_file, GroundingStats, MetricReport};
use hallueval::Error;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::settings::{parse_grid, provider, FileConfig};
use crate::{Cli, Command, CorpusArgs, MenArgs};

struct Ctx {
    file: FileConfig,
    out: PathBuf,
    md: bool,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn need(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::validation(format!("missing --{what}")).into())
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let p = self.out.join(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// report.json, optional report.md, and report.meta.json with the
    /// wall-clock data kept out of the report itself.
    fn emit(&self, report: &MetricReport) -> Result<()> {
        let p = self.write("report.json", &report.to_json())?;
        if self.md {
            self.write("report.md", &report.to_markdown())?;
        }
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = json!({
            "generated_at_unix": secs,
            "tool_version": report.tool_version,
            "report_sha256": digest_bytes(report.to_json().as_bytes()),
        });
        self.write("report.meta.json", &format!("{:#}\n", meta))?;
        println!("{}", p.display());
        Ok(())
    }

    fn corpus(&self, args: &CorpusArgs) -> Result<(Corpus, Value)> {
        let path = need(args.corpus.clone().or(self.file.corpus.clone()), "corpus")?;
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
        let classes = args.classes.clone().or(self.file.classes.clone());
        let filter = match &classes {
            Some(split) => {
                let full = parse_coco_instances(&text, None)?;
                Some(load_class_split(split, full.registry())?)
            }
            None => None,
        };
        let mut corpus = parse_coco_instances(&text, filter.as_ref())?;
        let no_syn = args.no_synonyms || self.file.no_synonyms.unwrap_or(false);
        if !no_syn {
            corpus.registry_mut().apply_synonyms_tsv(COCO_SYNONYMS_TSV, false)?;
        }
        let synonyms = args.synonyms.clone().or(self.file.synonyms.clone());
        if let Some(s) = &synonyms {
            let tsv = std::fs::read_to_string(s)
                .map_err(|e| Error::validation(format!("cannot read {}: {e}", s.display())))?;
            corpus.registry_mut().apply_synonyms_tsv(&tsv, true)?;
        }
        let snap = json!({
            "corpus": file_name(&path),
            "classes": classes.as_deref().map(file_name),
            "bundled_synonyms": !no_syn,
            "synonyms": synonyms.as_deref().map(file_name),
            "images": corpus.len(),
            "class_count": corpus.registry().len(),
        });
        Ok((corpus, snap))
    }
}

struct Preds {
    records: Vec<CaptionRecord>,
    grounding: Option<GroundingStats>,
    digest: String,
}

/// Reads captions; if any carries well-formed box groups the whole file is
/// treated as grounded and box-stripped.
fn load_preds(path: &Path) -> Result<Preds> {
    let digest = digest_file(path)?;
    let raw: Vec<CaptionRecord> = read_jsonl(path)?;
    let parsed: Vec<_> = raw.iter().map(|r| parse_grounded(&r.caption)).collect();
    if parsed.iter().any(|p| p.well_formed_groups() > 0) {
        let stats = GroundingStats::from_captions(&parsed);
        let records = raw
            .iter()
            .zip(parsed)
            .map(|(r, p)| CaptionRecord {
                image_id: r.image_id,
                caption: p.plain,
            })
            .collect();
        log::info!("{}: grounded captions detected, boxes stripped", path.display());
        return Ok(Preds {
            records,
            grounding: Some(stats),
            digest,
        });
    }
    Ok(Preds {
        records: raw,
        grounding: None,
        digest,
    })
}

#[derive(Deserialize)]
struct ClipRow {
    #[allow(dead_code)]
    image_id: ImageId,
    image: Vec<f64>,
    caption: Vec<f64>,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        out: cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        md: cli.md || file.md.unwrap_or(false),
        file,
    };
    match cli.command {
        Command::Chair { corpus, preds, clip } => chair(&ctx, &corpus, preds, clip),
        Command::ChairMen {
            corpus,
            men,
            t1,
            t2,
            checkpoint,
        } => chair_men_cmd(&ctx, &corpus, &men, t1, t2, checkpoint),
        Command::Faithscore {
            preds,
            chat,
            vqa,
            prompt,
            checkpoint,
        } => faith(&ctx, preds, chat, vqa, prompt, checkpoint),
        Command::PopeGen {
            corpus,
            strategy,
            n,
            seed,
            aggregation,
        } => pope_gen(&ctx, &corpus, strategy, n, seed, aggregation),
        Command::PopeScore { set, answers } => pope_score(&ctx, &set, &answers),
        Command::Refexp {
            examples,
            k,
            extraction,
        } => refexp_cmd(&ctx, &examples, k, extraction),
        Command::Stats { corpus } => stats(&ctx, &corpus),
        Command::Calibrate {
            corpus,
            men,
            t1_grid,
            t2_grid,
        } => calibrate(&ctx, &corpus, &men, t1_grid, t2_grid),
        Command::Diff { a, b } => diff(&ctx, &a, &b),
    }
}

fn chair(ctx: &Ctx, args: &CorpusArgs, preds: Option<PathBuf>, clip: Option<PathBuf>) -> Result<()> {
    let (corpus, snap) = ctx.corpus(args)?;
    let preds_path = need(preds.or(ctx.file.preds.clone()), "preds")?;
    let preds = load_preds(&preds_path)?;
    let mut report = MetricReport::new("chair", json!({"corpus": snap, "preds": file_name(&preds_path)}));
    report.dataset_digest = Some(corpus.digest());
    report.predictions_digest = Some(preds.digest);
    report.grounding = preds.grounding;
    report.metrics.chair = Some(score_chair(&preds.records, &corpus)?);
    if let Some(clip) = clip {
        let rows: Vec<ClipRow> = read_jsonl(&clip)?;
        report.metrics.clip_score = Some(mean_clip_score(
            rows.iter().map(|r| (r.image.as_slice(), r.caption.as_slice())),
        )?);
    }
    ctx.emit(&report)
}

fn men_config(ctx: &Ctx, men: &MenArgs, t1: Option<f64>, t2: Option<f64>) -> ChairMenConfig {
    let d = ChairMenConfig::default();
    ChairMenConfig {
        t1: t1.or(ctx.file.t1).unwrap_or(d.t1),
        t2: t2.or(ctx.file.t2).unwrap_or(d.t2),
        class_template: men
            .class_template
            .clone()
            .or(ctx.file.class_template.clone())
            .unwrap_or(d.class_template),
    }
}

fn analyze(
    ctx: &Ctx,
    corpus: &Corpus,
    men: &MenArgs,
    cfg: &ChairMenConfig,
    checkpoint: Option<&Path>,
) -> Result<(Vec<chair_men::AnalyzedCaption>, Preds, Value)> {
    let preds_path = need(men.preds.clone().or(ctx.file.preds.clone()), "preds")?;
    let preds = load_preds(&preds_path)?;
    let cache = ProviderCache::new();
    let embed_cfg = provider(men.embed.as_deref(), ctx.file.providers.embed.as_ref(), "embed")?;
    let np_cfg = provider(men.np.as_deref(), ctx.file.providers.np.as_ref(), "np")?;
    let embedder = build_embedder(&embed_cfg, &cache)?;
    let np = build_noun_phrases(&np_cfg, &cache)?;
    let analyzed = chair_men::analyze(&preds.records, corpus, cfg, &*embedder, &*np, checkpoint)?;
    let snap = json!({
        "preds": file_name(&preds_path),
        "class_template": cfg.class_template,
        "providers": {"embed": embed_cfg.describe(), "np": np_cfg.describe()},
    });
    Ok((analyzed, preds, snap))
}

fn chair_men_cmd(
    ctx: &Ctx,
    args: &CorpusArgs,
    men: &MenArgs,
    t1: Option<f64>,
    t2: Option<f64>,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let (corpus, corpus_snap) = ctx.corpus(args)?;
    let cfg = men_config(ctx, men, t1, t2);
    let checkpoint = checkpoint.or(ctx.file.checkpoint.clone());
    let (analyzed, preds, snap) = analyze(ctx, &corpus, men, &cfg, checkpoint.as_deref())?;
    let mut config = snap;
    config["corpus"] = corpus_snap;
    config["t1"] = json!(cfg.t1);
    config["t2"] = json!(cfg.t2);
    let mut report = MetricReport::new("chair-men", config);
    report.dataset_digest = Some(corpus.digest());
    report.predictions_digest = Some(preds.digest);
    report.grounding = preds.grounding;
    report.metrics.chair_men = Some(chair_men::score_analyzed(&analyzed, cfg.t1, cfg.t2)?);
    ctx.emit(&report)
}

fn faith(
    ctx: &Ctx,
    preds: Option<PathBuf>,
    chat: Option<String>,
    vqa: Option<String>,
    prompt: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let preds_path = need(preds.or(ctx.file.preds.clone()), "preds")?;
    let preds = load_preds(&preds_path)?;
    let template = match prompt.or(ctx.file.prompt.clone()) {
        Some(p) => PromptTemplate::load(&p)?,
        None => PromptTemplate::builtin(),
    };
    let cache = ProviderCache::new();
    let chat_cfg = provider(chat.as_deref(), ctx.file.providers.chat.as_ref(), "chat")?;
    let vqa_cfg = provider(vqa.as_deref(), ctx.file.providers.vqa.as_ref(), "vqa")?;
    let chat = build_chat(&chat_cfg, &cache)?;
    let vqa = build_vqa(&vqa_cfg, &cache)?;
    let checkpoint = checkpoint.or(ctx.file.checkpoint.clone());
    let result = score_faith(&preds.records, &*chat, &*vqa, &template, checkpoint.as_deref())?;
    let incomplete = result.incomplete.then(|| Error::Partial {
        completed: result.captions,
        total: result.captions + result.failed_captions,
        checkpoint: checkpoint.clone(),
        cause: Box::new(Error::Transport(result.first_error.clone().unwrap_or_default())),
    });
    let mut report = MetricReport::new(
        "faithscore",
        json!({
            "preds": file_name(&preds_path),
            "prompt_sha256": template.sha256(),
            "providers": {"chat": chat_cfg.describe(), "vqa": vqa_cfg.describe()},
        }),
    );
    report.predictions_digest = Some(preds.digest);
    report.grounding = preds.grounding;
    report.metrics.faithscore = Some(result);
    ctx.emit(&report)?;
    match incomplete {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn parse_aggregation(s: &str) -> Result<CooccurrenceAggregation> {
    match s {
        "sum" => Ok(CooccurrenceAggregation::Sum),
        "max" => Ok(CooccurrenceAggregation::Max),
        _ => bail!(Error::validation(format!("aggregation must be sum or max, got {s:?}"))),
    }
}

fn pope_gen(
    ctx: &Ctx,
    args: &CorpusArgs,
    strategy: Option<String>,
    n: Option<usize>,
    seed: Option<u64>,
    aggregation: Option<String>,
) -> Result<()> {
    let (corpus, snap) = ctx.corpus(args)?;
    let strategy: Strategy = strategy
        .or(ctx.file.strategy.clone())
        .unwrap_or_else(|| "random".into())
        .parse()?;
    let n = n.or(ctx.file.n).unwrap_or(pope::DEFAULT_SET_SIZE);
    let seed = seed.or(ctx.file.seed).unwrap_or(0);
    let agg = parse_aggregation(
        aggregation
            .or(ctx.file.aggregation.clone())
            .as_deref()
            .unwrap_or("sum"),
    )?;
    let stats = build_stats(&corpus)?;
    let set = pope::generate(&corpus, &stats, strategy, n, seed, agg)?;
    let jsonl = set.to_jsonl();
    ctx.write("pope_set.jsonl", &jsonl)?;
    let yes = set.questions.iter().filter(|q| q.label == pope::Label::Yes).count();
    let mut report = MetricReport::new(
        "pope-gen",
        json!({
            "corpus": snap,
            "strategy": strategy,
            "n": n,
            "seed": seed,
            "aggregation": agg,
            "set": {"file": "pope_set.jsonl", "questions": set.questions.len(), "yes": yes, "no": set.questions.len() - yes},
        }),
    );
    report.dataset_digest = Some(set.corpus_digest.clone());
    report.predictions_digest = Some(digest_bytes(jsonl.as_bytes()));
    ctx.emit(&report)
}

fn pope_score(ctx: &Ctx, set: &Path, answers: &Path) -> Result<()> {
    let questions = pope::read_questions(set)?;
    let ans = pope::read_answers(answers)?;
    let mut report = MetricReport::new(
        "pope-score",
        json!({"set": file_name(set), "answers": file_name(answers)}),
    );
    report.dataset_digest = Some(digest_file(set)?);
    report.predictions_digest = Some(digest_file(answers)?);
    report.metrics.pope = Some(pope::score(&ans, &questions)?);
    ctx.emit(&report)
}

fn refexp_cmd(ctx: &Ctx, examples: &Path, k: Option<f64>, extraction: Option<String>) -> Result<()> {
    let k = k.or(ctx.file.k).unwrap_or(refexp::DEFAULT_K);
    let extraction = match extraction
        .or(ctx.file.extraction.clone())
        .as_deref()
        .unwrap_or("first-merged")
    {
        "first-merged" => Extraction::FirstMerged,
        "best-of-all" => Extraction::BestOfAll,
        other => bail!(Error::validation(format!(
            "extraction must be first-merged or best-of-all, got {other:?}"
        ))),
    };
    let ex = refexp::read_examples(examples)?;
    let mut report = MetricReport::new(
        "refexp",
        json!({"examples": file_name(examples), "k": k, "extraction": extraction}),
    );
    report.dataset_digest = Some(digest_file(examples)?);
    report.metrics.refexp = Some(refexp::precision_at(&ex, k, extraction)?);
    ctx.emit(&report)
}

fn stats(ctx: &Ctx, args: &CorpusArgs) -> Result<()> {
    let (corpus, snap) = ctx.corpus(args)?;
    let table = build_stats(&corpus)?;
    let summary = table.summary(corpus.registry());
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    ctx.write("stats.json", &text)?;
    let mut report = MetricReport::new("stats", json!({"corpus": snap, "stats": "stats.json"}));
    report.dataset_digest = Some(corpus.digest());
    ctx.emit(&report)
}

fn calibrate(
    ctx: &Ctx,
    args: &CorpusArgs,
    men: &MenArgs,
    t1_grid: Option<String>,
    t2_grid: Option<String>,
) -> Result<()> {
    const DEFAULT_GRID: &str = "0.60:0.90:0.01";
    let (corpus, corpus_snap) = ctx.corpus(args)?;
    let cfg = men_config(ctx, men, None, None);
    let g1 = parse_grid(&t1_grid.or(ctx.file.t1_grid.clone()).unwrap_or_else(|| DEFAULT_GRID.into()))?;
    let g2 = parse_grid(&t2_grid.or(ctx.file.t2_grid.clone()).unwrap_or_else(|| DEFAULT_GRID.into()))?;
    let (analyzed, preds, snap) = analyze(ctx, &corpus, men, &cfg, None)?;
    let reference = score_chair(&preds.records, &corpus)?;
    let cal = chair_men::calibrate(&analyzed, &reference, &g1, &g2)?;
    let mut text = serde_json::to_string_pretty(&cal)?;
    text.push('\n');
    ctx.write("calibration.json", &text)?;

    let mut config = snap;
    config["corpus"] = corpus_snap;
    config["grid_points"] = json!(cal.points.len());
    let mut report = MetricReport::new("calibrate", config);
    report.dataset_digest = Some(corpus.digest());
    report.predictions_digest = Some(preds.digest);
    if let Some(best) = &cal.best {
        report.config["best"] = json!({"t1": best.t1, "t2": best.t2, "chair_i_gap": best.chair_i_gap});
        report.metrics.chair_men = Some(chair_men::score_analyzed(&analyzed, best.t1, best.t2)?);
    }
    report.metrics.chair = Some(reference);
    ctx.emit(&report)
}

fn diff(ctx: &Ctx, a: &Path, b: &Path) -> Result<()> {
    let ra = MetricReport::load(a)?;
    let rb = MetricReport::load(b)?;
    let d = diff_reports(&ra, &rb)?;
    let mut text = serde_json::to_string_pretty(&d)?;
    text.push('\n');
    ctx.write("diff.json", &text)?;
    let md = d.to_markdown();
    if ctx.md {
        ctx.write("diff.md", &md)?;
    }
    print!("{md}");
    Ok(())
}
