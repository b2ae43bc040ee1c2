use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::info;

use zeta_core::embed::{EmbeddingProvider, EmbeddingStore, FileProvider, ProviderConfig};
use zeta_core::eval::{
    evaluate_scores, load_labels, map_labels, run_benchmark, EvalReport, LabelAliasMap, LabeledSet,
};
use zeta_core::infer::{read_score_table, write_score_table, InferenceConfig, ScoreRecord, Scorer};
use zeta_core::kb::{
    build_pool, export_candidates, export_reviewed, read_review_log, replay, AliasMap,
    CandidatePool, ConditionId, KnowledgeBase, PoolKind,
};
use zeta_core::llmgen::{
    generate_condition, load_model_configs, successful_candidates, ChatClient, FixtureChatClient,
    GenArchive, HttpChatClient, RetryPolicy,
};
use zeta_core::study::{
    build_study_plan, read_answer_log, study_report, AnswerBook, ScoredSample, StudySession,
};
use zeta_service::ServiceConfig;

use crate::args::*;
use crate::config::{load_provider, CliConfig};
use crate::error::{CliError, CliResult};

/// Flag value, else config value, else a usage error naming the flag.
fn pick(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.clone().or_else(|| cfg.clone()).ok_or_else(|| {
        CliError::usage(format!(
            "--{name} is required (or set it in the config file)"
        ))
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::from(e).context(path.display()))
}

fn load_pool(path: &Path) -> CliResult<CandidatePool> {
    CandidatePool::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn load_kb(path: &Path) -> CliResult<KnowledgeBase> {
    KnowledgeBase::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn load_store(path: &Path) -> CliResult<EmbeddingStore> {
    EmbeddingStore::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn provider_config(flag: &Option<PathBuf>, cfg: &CliConfig) -> CliResult<ProviderConfig> {
    match (flag, &cfg.provider) {
        (Some(path), _) => load_provider(path),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => Err(CliError::usage(
            "--provider is required (or set provider in the config file)",
        )),
    }
}

fn inference(args: &InferenceArgs, cfg: &CliConfig) -> CliResult<InferenceConfig> {
    let mut out = cfg.inference;
    if let Some(m) = args.mode {
        out.mode = m.into();
    }
    if let Some(t) = args.tau {
        out.tau = t;
    }
    if let Some(t) = args.threshold {
        out.threshold = t;
    }
    out.validate()?;
    Ok(out)
}

fn labeled_set(args: &LabelArgs, cfg: &CliConfig) -> CliResult<LabeledSet> {
    let path = pick(&args.labels, &cfg.labels, "labels")?;
    let raw = load_labels(&path).map_err(|e| CliError::from(e).context(path.display()))?;
    let alias = args
        .alias
        .as_deref()
        .map(|p| LabelAliasMap::load(p).map_err(|e| CliError::from(e).context(p.display())))
        .transpose()?;
    let set = map_labels(&raw, alias.as_ref(), args.strict)?;
    if set.dropped > 0 {
        info!(dropped = set.dropped, "samples without any kept label");
    }
    Ok(set)
}

fn read_ids(path: &Path) -> CliResult<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn write_report(report: &EvalReport, output: &Option<PathBuf>) -> CliResult<()> {
    if let Some(path) = output {
        std::fs::write(path, report.to_json()?)?;
    }
    Ok(())
}

fn print_report(report: &EvalReport, method: &str) {
    print!("{}", report.render(method));
    // shortest round-trip repr, so the printed value is exact
    println!("macro AUC {}", report.macro_auc);
}

pub fn generate(a: &GenerateArgs, cfg: &CliConfig) -> CliResult<()> {
    let conditions: Vec<ConditionId> =
        read_json(&pick(&a.conditions, &cfg.conditions, "conditions")?)?;
    let models_path = pick(&a.models, &cfg.models, "models")?;
    let models = load_model_configs(&models_path)
        .map_err(|e| CliError::from(e).context(models_path.display()))?;
    let client: Box<dyn ChatClient> = match &a.fixtures {
        Some(dir) => Box::new(FixtureChatClient::new(dir)),
        None => {
            let policy = RetryPolicy {
                max_attempts: a.max_attempts,
                ..RetryPolicy::default()
            };
            Box::new(HttpChatClient::new(Duration::from_secs(a.timeout), policy))
        }
    };
    let archive = a.archive.as_deref().map(GenArchive::open).transpose()?;
    let mut lists = Vec::new();
    for condition in &conditions {
        let records = generate_condition(condition, &models, client.as_ref(), a.concurrency)?;
        if let Some(archive) = &archive {
            archive.append(&records)?;
        }
        let ok = records.iter().filter(|r| r.is_success()).count();
        for r in records.iter().filter(|r| !r.is_success()) {
            eprintln!(
                "warning: {} / {}: {}",
                condition.code,
                r.model,
                r.error.as_deref().unwrap_or("failed")
            );
        }
        let found = successful_candidates(&condition.code, &records)?;
        eprintln!(
            "{}: {ok}/{} models, {} candidates",
            condition.code,
            models.len(),
            found.iter().map(Vec::len).sum::<usize>()
        );
        lists.extend(found);
    }
    let pool = build_pool(&lists, PoolKind::dscp(&a.dataset), &AliasMap::new())?;
    pool.save(&a.output)?;
    println!(
        "wrote {} candidates for {} conditions to {}",
        pool.candidates.len(),
        pool.condition_codes().len(),
        a.output.display()
    );
    Ok(())
}

pub fn preprocess(a: &PreprocessArgs) -> CliResult<()> {
    let mut lists = Vec::new();
    for p in &a.pools {
        lists.push(load_pool(p)?.candidates);
    }
    let alias: AliasMap = match &a.alias {
        Some(p) => read_json(p)?,
        None => AliasMap::new(),
    };
    let kind = match a.mode {
        PoolMode::Cdcp => PoolKind::Cdcp,
        PoolMode::Dscp => PoolKind::dscp(a.dataset.clone().expect("clap enforces --dataset")),
    };
    let pool = build_pool(&lists, kind, &alias)?;
    pool.save(&a.output)?;
    println!(
        "wrote {} {} candidates for {} conditions to {}",
        pool.candidates.len(),
        pool.pool_kind,
        pool.condition_codes().len(),
        a.output.display()
    );
    Ok(())
}

fn reviewed_pool(
    pool: &Option<PathBuf>,
    log: &Option<PathBuf>,
    cfg: &CliConfig,
) -> CliResult<CandidatePool> {
    let pool = load_pool(&pick(pool, &cfg.pool, "pool")?)?;
    match log.clone().or_else(|| cfg.review_log.clone()) {
        Some(path) => {
            let events =
                read_review_log(&path).map_err(|e| CliError::from(e).context(path.display()))?;
            info!(events = events.len(), "replaying review log");
            Ok(replay(&pool, &events).map_err(|e| CliError::from(e).context(path.display()))?)
        }
        None => Ok(pool),
    }
}

pub fn review_replay(a: &ReplayArgs, cfg: &CliConfig) -> CliResult<()> {
    let pool = reviewed_pool(&a.pool, &a.log, cfg)?;
    pool.save(&a.output)?;
    println!("wrote reviewed pool to {}", a.output.display());
    Ok(())
}

pub fn review_serve(a: &ServeArgs, cfg: &CliConfig) -> CliResult<()> {
    let pool = pick(&a.pool, &cfg.pool, "pool")?;
    let data_dir = a
        .data_dir
        .clone()
        .or_else(|| cfg.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from("zeta-data"));
    let kb =
        a.kb.clone()
            .or_else(|| cfg.kb.clone())
            .unwrap_or_else(|| data_dir.join("kb.json"));
    let mut svc = ServiceConfig::new(data_dir, pool, kb);
    svc.apply_env();
    svc.listen = format!("{}:{}", a.host, a.port);
    svc.inference = cfg.inference;
    svc.provider = match (&a.provider, &cfg.provider) {
        (Some(p), _) => Some(load_provider(p)?),
        (None, p) => p.clone(),
    };
    svc.static_dir = a.static_dir.clone();
    svc.waveform_base_url = a.waveform_base_url.clone();
    svc.token_env = a.token_env.clone();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    eprintln!("serving on http://{}", svc.listen);
    rt.block_on(zeta_service::serve(svc))?;
    Ok(())
}

pub fn kb_export(a: &ExportArgs, cfg: &CliConfig) -> CliResult<()> {
    let pool = reviewed_pool(&a.pool, &a.log, cfg)?;
    let kb = if a.include_unreviewed {
        export_candidates(&pool, a.limit)?
    } else {
        export_reviewed(&pool)?
    };
    kb.save(&a.output)?;
    println!(
        "wrote knowledge base {} ({} conditions, {} distinct texts) to {}",
        kb.version,
        kb.conditions.len(),
        kb.all_texts().len(),
        a.output.display()
    );
    Ok(())
}

pub fn embed_texts(a: &EmbedTextsArgs, cfg: &CliConfig) -> CliResult<()> {
    let kb = Arc::new(load_kb(&pick(&a.kb, &cfg.kb, "kb")?)?);
    let provider = provider_config(&a.provider, cfg)?.build(Some(kb.clone()))?;
    let texts = kb.all_texts();
    let vectors = provider.get_texts(&texts)?;
    let mut store = EmbeddingStore::new(provider.dim())?;
    for (t, v) in texts.iter().zip(vectors) {
        store.insert(*t, v)?;
    }
    store.save(&a.output)?;
    println!(
        "wrote {} text embeddings (dim {}) to {}",
        store.len(),
        store.dim(),
        a.output.display()
    );
    Ok(())
}

pub fn embed_ecgs(a: &EmbedEcgsArgs, cfg: &CliConfig) -> CliResult<()> {
    let ids = match (&a.ids, &a.labels) {
        (Some(p), _) => read_ids(p)?,
        (None, Some(p)) => load_labels(p)
            .map_err(|e| CliError::from(e).context(p.display()))?
            .into_keys()
            .collect(),
        (None, None) => return Err(CliError::usage("one of --ids or --labels is required")),
    };
    let kb =
        a.kb.clone()
            .or_else(|| cfg.kb.clone())
            .map(|p| load_kb(&p).map(Arc::new))
            .transpose()?;
    let provider = provider_config(&a.provider, cfg)?.build(kb)?;
    let mut store = EmbeddingStore::new(provider.dim())?;
    for id in &ids {
        let v = provider.get_ecg(id)?;
        store.insert(id.clone(), v)?;
    }
    store.save(&a.output)?;
    println!(
        "wrote {} ECG embeddings (dim {}) to {}",
        store.len(),
        store.dim(),
        a.output.display()
    );
    Ok(())
}

fn score_all(
    provider: &dyn EmbeddingProvider,
    kb: &KnowledgeBase,
    ids: &[String],
    icfg: InferenceConfig,
    jobs: usize,
) -> CliResult<Vec<ScoreRecord>> {
    let scorer = Scorer::new(kb, provider, icfg)?;
    let started = Instant::now();
    let out: Vec<ScoreRecord> = scorer
        .classify_many(ids, jobs)?
        .iter()
        .flat_map(|c| c.records().collect::<Vec<_>>())
        .collect();
    info!(
        ecgs = ids.len(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        "scored"
    );
    Ok(out)
}

pub fn score(a: &ScoreArgs, cfg: &CliConfig) -> CliResult<()> {
    let ecg_path = pick(&a.ecg_store, &cfg.ecg_store, "ecg-store")?;
    let text_path = pick(&a.text_store, &cfg.text_store, "text-store")?;
    let ecg = load_store(&ecg_path)?;
    let text = load_store(&text_path)?;
    if ecg.dim() != text.dim() {
        return Err(CliError::validation(format!(
            "dimension mismatch: ECG store {} has dim {}, text store {} has dim {}",
            ecg_path.display(),
            ecg.dim(),
            text_path.display(),
            text.dim()
        )));
    }
    let kb = load_kb(&pick(&a.kb, &cfg.kb, "kb")?)?;
    let icfg = inference(&a.inference, cfg)?;
    let ids = match &a.ids {
        Some(p) => read_ids(p)?,
        None => {
            let mut ids: Vec<String> = ecg.iter().map(|(id, _)| id.to_string()).collect();
            ids.sort();
            ids
        }
    };
    let mut provider = FileProvider::new(Some(ecg), Some(text))?;
    if a.no_text_norm {
        provider = provider.without_text_norm();
    }
    let records = score_all(&provider, &kb, &ids, icfg, cfg.jobs)?;
    std::fs::write(&a.output, write_score_table(&records)?)?;
    println!(
        "scored {} ECGs against {} conditions ({} mode, tau {}) into {}",
        ids.len(),
        kb.conditions.len(),
        icfg.mode,
        icfg.tau,
        a.output.display()
    );
    Ok(())
}

fn read_scores(path: &Path) -> CliResult<Vec<ScoreRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    read_score_table(&text).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn evaluate(a: &EvaluateArgs, cfg: &CliConfig) -> CliResult<()> {
    let records = read_scores(&a.scores)?;
    let labels = labeled_set(&a.labels, cfg)?;
    let mut report = evaluate_scores(&records, &labels, a.threshold)?;
    report.mode = records.first().map(|r| r.mode);
    write_report(&report, &a.output)?;
    print_report(&report, &a.method);
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs, cfg: &CliConfig) -> CliResult<()> {
    let labels = labeled_set(&a.labels, cfg)?;
    let kb = Arc::new(load_kb(&pick(&a.kb, &cfg.kb, "kb")?)?);
    let provider = provider_config(&a.provider, cfg)?.build(Some(kb.clone()))?;
    let icfg = inference(&a.inference, cfg)?;
    let out = run_benchmark(
        provider.as_ref(),
        &labels,
        &kb,
        &icfg,
        cfg.jobs,
        a.confusion,
    )?;
    let mut report = out.report;
    report.dataset_id = a.dataset.clone();
    if let Some(path) = &a.scores_out {
        std::fs::write(path, write_score_table(&out.records)?)?;
    }
    write_report(&report, &a.output)?;
    print_report(&report, &a.method);
    Ok(())
}

pub fn study_plan(a: &PlanArgs, cfg: &CliConfig) -> CliResult<()> {
    let records = read_scores(&a.scores)?;
    let labels = labeled_set(&a.labels, cfg)?;
    let codes: Vec<String> = if a.conditions.is_empty() {
        labels.conditions().into_iter().map(String::from).collect()
    } else {
        a.conditions.clone()
    };
    let mut by_condition: BTreeMap<&str, Vec<ScoredSample>> = BTreeMap::new();
    for r in &records {
        if let Some(set) = labels.samples.get(&r.ecg_id) {
            by_condition
                .entry(r.condition.as_str())
                .or_default()
                .push(ScoredSample {
                    sample_id: r.ecg_id.clone(),
                    possibility: r.possibility,
                    label: set.contains(&r.condition),
                });
        }
    }
    let mut plans = Vec::new();
    for code in &codes {
        let scored = by_condition
            .get(code.as_str())
            .ok_or_else(|| CliError::validation(format!("no scores for condition {code}")))?;
        plans.push(build_study_plan(code, scored, a.k, cfg.seed)?);
    }
    let threshold = a.threshold.unwrap_or(cfg.inference.threshold);
    let session = StudySession::new(&a.session_id, &plans, threshold, cfg.seed);
    session.save(&a.output)?;
    println!(
        "wrote session {} with {} cards over {} conditions to {}",
        session.session_id,
        session.cards.len(),
        plans.len(),
        a.output.display()
    );
    Ok(())
}

pub fn study_report_cmd(a: &ReportArgs) -> CliResult<()> {
    let session = StudySession::load(&a.session)
        .map_err(|e| CliError::from(e).context(a.session.display()))?;
    let log =
        read_answer_log(&a.answers).map_err(|e| CliError::from(e).context(a.answers.display()))?;
    let answers = AnswerBook::replay(&session, &log)?;
    let report = study_report(&session, &answers)?;
    if let Some(path) = &a.output {
        let mut s = serde_json::to_string_pretty(&report)?;
        s.push('\n');
        std::fs::write(path, s)?;
    }
    println!("{} answers on {} cards", report.n_answers, report.n_cards);
    print!("{}", report.render());
    Ok(())
}
