use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sgrec::config::RunConfig;
use sgrec::dataset::{filter_inactive, ingest as read_log, prepare, DatasetStats};
use sgrec::encoder::Tokenizer;
use sgrec::eval::{evaluate as rank_all, MetricReport, ModelScorer, SbrScorer, Scorer};
use sgrec::model::Llmgr;
use sgrec::params::{Group, ParameterStore};
use sgrec::pca::pca;
use sgrec::pretrain::pretrain as train_sbr;
use sgrec::prompt::{build_tuning_corpus, render_behavior, PromptInstance, Stage};
use sgrec::sbr::Sbr;
use sgrec::synthetic::{grouped, markov, GroupedSpec, MarkovSpec};
use sgrec::tuning::run_pipeline;
use sgrec::Error;
use sgrec_tensor::{rng, Checkpoint};

use crate::artifacts::*;
use crate::failure::{Category, Failure};
use crate::{Corpus, ModelKind, PromptStage};

pub struct Context {
    pub cfg: RunConfig,
    pub run_dir: PathBuf,
}

impl Context {
    fn dir(&self) -> RunDir<'_> {
        RunDir(&self.run_dir)
    }
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::new(Category::Config, format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text, &p.display().to_string()).map_err(|e| Failure::new(Category::Config, e))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::new(Category::Config, format!("--set {o}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| Failure::new(Category::Config, format!("--set {o}: {e}")))?;
    }
    cfg.validate().map_err(|e| Failure::new(Category::Config, e))?;
    Ok(cfg)
}

fn log_path(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.interactions
        .as_deref()
        .ok_or_else(|| Failure::new(Category::Config, "data.interactions is not set"))
}

pub fn ingest(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (records, catalog) = read_log(log_path(cfg)?, cfg.catalog.as_deref())?;
    let data = prepare(&records, &catalog, cfg.min_count, cfg.max_seq_len)?;
    let dir = ctx.dir();
    dir.write_vocab(&data.vocab, &data.titles)?;
    dir.write_splits(&data.split)?;
    print!("{}", data.stats.render());
    println!(
        "train {} valid {} test {} (skipped users {})",
        data.split.train.len(),
        data.split.valid.len(),
        data.split.test.len(),
        data.split.skipped_users
    );
    Ok(())
}

pub fn pretrain(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let dir = ctx.dir();
    let split = dir.read_splits()?;
    let result = train_sbr(&split, cfg.sbr(), cfg.pretrain, cfg.seed)?;
    let mut log = String::from("epoch\tloss\tvalid_mrr10\n");
    for r in &result.history {
        writeln!(log, "{}\t{:.6}\t{:.6}", r.epoch, r.mean_loss, r.valid_mrr10).unwrap();
    }
    dir.write("pretrain.log", &log)?;
    print!("{log}");
    result.check()?;
    let mut ck = Checkpoint::new();
    result.store.write_to(&mut ck, None);
    ck.save(dir.path(SBR_CHECKPOINT)).map_err(Error::from)?;
    if let Some(best) = result.best_epoch {
        println!("kept epoch {best}");
    }
    Ok(())
}

fn build_model(ctx: &Context, num_items: usize, tokenizer: Tokenizer) -> Result<(Llmgr, ParameterStore<f32>), Failure> {
    let mut store = ParameterStore::new();
    let model = Llmgr::new(&mut store, num_items, tokenizer, ctx.cfg.model, ctx.cfg.seed)?;
    Ok((model, store))
}

fn load_params(store: &mut ParameterStore<f32>, ck: &Checkpoint, groups: Option<&sgrec::params::GroupSet>, name: &str) -> Result<(), Failure> {
    let expected = match groups {
        Some(g) => g.iter().map(|&grp| store.ids_in(grp).count()).sum(),
        None => store.len(),
    };
    let loaded = store.read_from(ck, groups)?;
    if loaded != expected {
        return Err(Failure::artifact(format!(
            "{name} holds {loaded} of {expected} expected tensors; was it written with a different model configuration?"
        )));
    }
    Ok(())
}

pub fn tune(ctx: &Context) -> Result<(), Failure> {
    let dir = ctx.dir();
    let split = dir.read_splits()?;
    let (_, titles) = dir.read_vocab()?;
    let sbr_ck = dir.checkpoint(SBR_CHECKPOINT, "pretrain")?;
    let (model, mut store) = build_model(ctx, split.num_items, Tokenizer::for_corpus(&titles))?;
    load_params(&mut store, &sbr_ck, Some(&[Group::Sbr].into()), SBR_CHECKPOINT)?;

    let log = run_pipeline(&model, &mut store, &split, &titles, &ctx.cfg.tune, ctx.cfg.seed)?;
    let mut text = String::new();
    for s in &log.steps {
        writeln!(text, "{s}").unwrap();
    }
    for (phase, epoch, loss) in &log.epochs {
        writeln!(text, "# {phase} epoch {epoch} mean loss {loss:.6}").unwrap();
    }
    dir.write("tune.log", &text)?;
    for (phase, epoch, loss) in &log.epochs {
        println!("{phase} epoch {epoch} mean loss {loss:.6}");
    }
    log.check()?;
    let mut ck = Checkpoint::new();
    store.write_to(&mut ck, None);
    model.write_tokenizer(&mut ck);
    ck.save(dir.path(FULL_CHECKPOINT)).map_err(Error::from)?;
    Ok(())
}

pub fn evaluate(ctx: &Context, kind: ModelKind, valid: bool) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let dir = ctx.dir();
    let split = dir.read_splits()?;
    let examples = if valid { &split.valid } else { &split.test };
    let label = if valid { "eval.valid" } else { "eval.test" };
    let seed = rng::derive_seed(cfg.seed, label);
    let outcomes = match kind {
        ModelKind::Full => {
            let ck = dir.checkpoint(FULL_CHECKPOINT, "tune")?;
            let tokenizer = Llmgr::read_tokenizer(&ck)?;
            let (model, mut store) = build_model(ctx, split.num_items, tokenizer)?;
            load_params(&mut store, &ck, None, FULL_CHECKPOINT)?;
            score(&ModelScorer { model: &model, store: &store }, examples, cfg, seed)?
        }
        ModelKind::Sbr => {
            let ck = dir.checkpoint(SBR_CHECKPOINT, "pretrain")?;
            let mut store = ParameterStore::<f32>::new();
            let sbr = Sbr::new(&mut store, split.num_items, cfg.sbr(), &mut rng::stream(cfg.seed, 1))?;
            load_params(&mut store, &ck, None, SBR_CHECKPOINT)?;
            score(&SbrScorer { sbr: &sbr, store: &store }, examples, cfg, seed)?
        }
    };
    let report = MetricReport::build(&outcomes, &cfg.ks, &split.item_train_counts, cfg.cold_threshold)?;
    let name = match (kind, valid) {
        (ModelKind::Full, false) => "metrics.csv".to_string(),
        (ModelKind::Full, true) => "metrics.valid.csv".to_string(),
        (ModelKind::Sbr, false) => "metrics.sbr.csv".to_string(),
        (ModelKind::Sbr, true) => "metrics.sbr.valid.csv".to_string(),
    };
    let path = dir.write(&name, report.to_csv())?;
    print!("{}", report.to_text());
    println!("wrote {}", path.display());
    Ok(())
}

fn score(
    scorer: &dyn Scorer,
    examples: &[sgrec::dataset::Example],
    cfg: &RunConfig,
    seed: u64,
) -> Result<Vec<sgrec::eval::RankedOutcome>, Failure> {
    if examples.is_empty() {
        return Err(Failure::new(Category::Data, "no held-out examples to evaluate"));
    }
    Ok(rank_all(scorer, examples, cfg.negatives, seed)?)
}

fn describe_target(p: &PromptInstance, ids: &[String]) -> String {
    p.target
        .entries()
        .iter()
        .map(|&(v, _)| ids[v].as_str())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn render_prompts(ctx: &Context, stage: PromptStage, limit: usize, session: Option<Vec<String>>) -> Result<(), Failure> {
    let dir = ctx.dir();
    let (vocab, titles) = dir.read_vocab()?;
    let mut out = String::new();
    if let Some(ids) = session {
        let items = ids
            .iter()
            .map(|id| {
                vocab
                    .index(id)
                    .ok_or_else(|| Failure::new(Category::Data, format!("unknown item `{id}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = render_behavior(&items, 0, ctx.cfg.corpus.graph_free)?;
        writeln!(out, "### BEHAVIOR").unwrap();
        writeln!(out, "{}", p.display()).unwrap();
    } else {
        let split = dir.read_splits()?;
        let stage = match stage {
            PromptStage::Aux => Stage::Aux,
            PromptStage::Major => Stage::Major,
        };
        let corpus = build_tuning_corpus(&split, &titles, ctx.cfg.seed, stage, ctx.cfg.corpus)?;
        for (i, p) in corpus.iter().take(limit).enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "### {i} {} target={}", p.task, describe_target(p, vocab.ids())).unwrap();
            writeln!(out, "{}", p.display()).unwrap();
        }
    }
    print!("{out}");
    Ok(())
}

pub fn export_embeddings(ctx: &Context, kind: ModelKind, table: &str) -> Result<(), Failure> {
    let dir = ctx.dir();
    let ck = match kind {
        ModelKind::Sbr => dir.checkpoint(SBR_CHECKPOINT, "pretrain")?,
        ModelKind::Full => dir.checkpoint(FULL_CHECKPOINT, "tune")?,
    };
    if !ck.contains(table) {
        return Err(Failure::artifact(format!("checkpoint has no table `{table}`")));
    }
    let t = ck.get::<f64>(table).map_err(Error::from)?;
    if t.rank() != 2 {
        return Err(Failure::new(Category::Data, format!("`{table}` is not a matrix")));
    }
    let rows: Vec<Vec<f64>> = (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
    let p = pca(&rows, 2)?;
    for w in &p.warnings {
        eprintln!("warning: {w}");
    }
    let (vocab, _) = dir.read_vocab()?;
    let ids: Vec<String> = if vocab.len() == rows.len() {
        vocab.ids().to_vec()
    } else {
        (0..rows.len()).map(|i| i.to_string()).collect()
    };
    let path = dir.write(PCA, p.to_csv(&ids))?;
    let explained: Vec<String> = p
        .variances
        .iter()
        .map(|v| format!("{:.2}%", 100.0 * v / p.total_variance.max(f64::MIN_POSITIVE)))
        .collect();
    println!("explained variance {}; wrote {}", explained.join(" "), path.display());
    Ok(())
}

pub fn stats(ctx: &Context, raw: bool) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (records, _) = read_log(log_path(cfg)?, cfg.catalog.as_deref())?;
    let records = if raw { records } else { filter_inactive(&records, cfg.min_count)? };
    print!("{}", DatasetStats::of(&records).render());
    Ok(())
}

pub fn synth(ctx: &Context, kind: Corpus, users: Option<usize>, out: &Path) -> Result<(), Failure> {
    let seed = ctx.cfg.seed;
    let log = match kind {
        Corpus::Markov => {
            let d = MarkovSpec::default();
            markov(MarkovSpec { users: users.unwrap_or(d.users), ..d }, seed).0
        }
        Corpus::Grouped => {
            let d = GroupedSpec::default();
            grouped(GroupedSpec { users: users.unwrap_or(d.users), ..d }, seed)
        }
    };
    let dir = RunDir(out);
    let a = dir.write("interactions.tsv", log.interactions_tsv())?;
    let b = dir.write("catalog.tsv", log.catalog_tsv())?;
    println!("wrote {} and {}", a.display(), b.display());
    Ok(())
}
