use crate::config::{format_name, QgenKind, RunConfig};
use crate::runlog::RunLog;
use crate::{UsageError, EXIT_OK, EXIT_PARTIAL};
use anyhow::{bail, Context};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use t2i_eval_core::backends::{
    BackendError, BackendOptions, BackendSpec, CallStats, DiskCache, IqaClient, LlmClient, VqaClient,
};
use t2i_eval_core::degrade::{build_degraded_corpus, manifest_digest, plan_by_name, SourceImage, PLAN_NAMES};
use t2i_eval_core::harness::{
    attribute_table, build_cases, emit_report, ingest_captions, load_dictionary, render_comparison, run_eval,
    with_perturbations, CaptionFormat, DatasetRecord, EvalConfig, EvalRun, QgenMode,
};
use t2i_eval_core::qgen::{generate_llm, generate_rule_based};
use t2i_eval_core::Caption;

fn usage(e: BackendError) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn spec(s: &str) -> anyhow::Result<BackendSpec> {
    s.parse().map_err(usage)
}

fn options(cfg: &RunConfig, records: &[DatasetRecord]) -> BackendOptions {
    let table = attribute_table(records);
    BackendOptions {
        timeout: Some(Duration::from_secs(cfg.timeout_secs)),
        bearer_token: cfg.token.clone(),
        attributes: (!table.is_empty()).then(|| Arc::new(table)),
    }
}

fn open_cache(cfg: &RunConfig) -> anyhow::Result<Option<Arc<DiskCache>>> {
    cfg.cache_dir
        .as_ref()
        .map(|dir| DiskCache::open(dir).map(Arc::new).context("opening cache"))
        .transpose()
}

fn llm_client(cfg: &RunConfig, opts: &BackendOptions, cache: &Option<Arc<DiskCache>>) -> anyhow::Result<Arc<LlmClient>> {
    let url = cfg
        .llm
        .as_deref()
        .ok_or_else(|| UsageError("--qgen llm needs an --llm endpoint".into()))?;
    let backend = spec(url)?.llm_backend(opts).map_err(usage)?;
    Ok(Arc::new(
        LlmClient::new(backend)
            .with_cache(cache.clone())
            .with_max_in_flight(cfg.parallelism),
    ))
}

struct Clients {
    config: EvalConfig,
    llm: Option<Arc<LlmClient>>,
}

impl Clients {
    fn build(cfg: &RunConfig, records: &[DatasetRecord]) -> anyhow::Result<Self> {
        let weights = cfg.validate()?;
        let opts = options(cfg, records);
        let cache = open_cache(cfg)?;
        let vqa = VqaClient::new(spec(&cfg.vqa)?.vqa_backend(&opts).map_err(usage)?)
            .with_cache(cache.clone())
            .with_max_in_flight(cfg.parallelism);
        let iqa = IqaClient::new(spec(&cfg.iqa)?.iqa_backend(&opts).map_err(usage)?)
            .with_cache(cache.clone())
            .with_max_in_flight(cfg.parallelism);
        let mut baselines = Vec::new();
        for (name, s) in &cfg.baselines {
            let client = IqaClient::new(spec(s)?.iqa_backend(&opts).map_err(usage)?)
                .with_cache(cache.clone())
                .with_max_in_flight(cfg.parallelism);
            baselines.push((name.clone(), Arc::new(client)));
        }
        let (qgen, llm) = match cfg.qgen {
            QgenKind::Rule => (QgenMode::Rule, None),
            QgenKind::Llm => {
                let client = llm_client(cfg, &opts, &cache)?;
                (
                    QgenMode::Llm {
                        client: client.clone(),
                        retries: cfg.llm_retries,
                    },
                    Some(client),
                )
            }
        };
        Ok(Self {
            config: EvalConfig {
                qgen,
                vqa: Arc::new(vqa),
                iqa: Arc::new(iqa),
                baselines,
                weights,
                parallelism: cfg.parallelism,
            },
            llm,
        })
    }

    fn stats(&self) -> Vec<(String, String, CallStats)> {
        let c = &self.config;
        let mut out = vec![
            ("vqa".to_string(), c.vqa.backend_id().to_string(), c.vqa.stats()),
            ("iqa".to_string(), c.iqa.backend_id().to_string(), c.iqa.stats()),
        ];
        if let Some(llm) = &self.llm {
            out.push(("llm".into(), llm.backend_id().to_string(), llm.stats()));
        }
        for (name, b) in &c.baselines {
            out.push((format!("baseline:{name}"), b.backend_id().to_string(), b.stats()));
        }
        out
    }
}

fn load_records(cfg: &RunConfig, dataset: &Path, log: &mut RunLog) -> anyhow::Result<Vec<DatasetRecord>> {
    let ingested = ingest_captions(dataset, CaptionFormat::from_path(dataset))?;
    log.line(format!(
        "dataset {}: {} records, {} skipped (image missing)",
        dataset.display(),
        ingested.records.len(),
        ingested.skipped_missing
    ));
    if ingested.skipped_missing > 0 {
        eprintln!("warning: {} records skipped because their image is missing", ingested.skipped_missing);
    }
    let mut records = ingested.records;
    if let Some(path) = &cfg.perturb_dict {
        let dict = load_dictionary(path)?;
        records = with_perturbations(&records, &dict, cfg.perturb_max_k, cfg.seed);
        log.line(format!("perturbation: {} records after expansion", records.len()));
    }
    Ok(records)
}

/// Shared by `eval` and `compare`: ingest, score, log.
async fn evaluate(cfg: &RunConfig, dataset: &Path, command: &str) -> anyhow::Result<(EvalRun, RunLog)> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let log_path = cfg.out.join("run.log");
    let mut log = RunLog::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    log.line(format!("{command} started"));
    log.line(format!("effective config:\n{}", cfg.to_text(true)));
    let records = load_records(cfg, dataset, &mut log)?;
    let clients = Clients::build(cfg, &records)?;
    let run = run_eval(&records, &clients.config).await;

    for t in &run.timings {
        log.line(format!(
            "record {}: qgen {:.3} ms, vqa {:.3} ms, total {:.3} ms",
            t.caption_id,
            t.qgen.as_secs_f64() * 1e3,
            t.vqa.as_secs_f64() * 1e3,
            t.total.as_secs_f64() * 1e3
        ));
    }
    for (role, id, s) in clients.stats() {
        log.line(format!(
            "backend {role} {id}: backend_calls={} cache_hits={}",
            s.backend_calls, s.cache_hits
        ));
    }
    for r in run.records() {
        if let Err(e) = r.verify() {
            bail!("record {} failed its self-consistency check: {e}", r.caption.id());
        }
    }
    for f in run.failures() {
        log.line(format!("failed {}: {}", f.caption_id, f.error));
    }
    log.line(format!(
        "{} records scored, {} failed",
        run.outcomes.len() - run.failed_count(),
        run.failed_count()
    ));
    Ok((run, log))
}

fn print_failures(run: &EvalRun) {
    let failed: Vec<_> = run.failures().collect();
    if !failed.is_empty() {
        eprintln!("{} of {} records failed:", failed.len(), run.outcomes.len());
        for f in failed {
            eprintln!("  {}: {}", f.caption_id, f.error);
        }
    }
}

pub async fn eval(cfg: &RunConfig, dataset: &Path) -> anyhow::Result<u8> {
    let (run, mut log) = evaluate(cfg, dataset, "eval").await?;
    let report = cfg.out.join(format!("report.{}", cfg.format.extension()));
    emit_report(&run, cfg.format, &report)?;
    log.line(format!("report written to {} ({})", report.display(), format_name(cfg.format)));
    println!("{}", report.display());
    print_failures(&run);
    Ok(if run.failed_count() > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

pub async fn compare(cfg: &RunConfig, dataset: &Path) -> anyhow::Result<u8> {
    let (run, mut log) = evaluate(cfg, dataset, "compare").await?;
    let cases = build_cases(&run);
    let table = render_comparison(&cases);
    let path = cfg.out.join("comparison.md");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    log.line(format!("comparison of {} cases written to {}", cases.len(), path.display()));
    print!("{table}");
    print_failures(&run);
    let invalid: Vec<_> = cases.iter().filter(|c| c.invalid.is_some()).collect();
    for c in &invalid {
        eprintln!("case {} is invalid: {}", c.case_id, c.invalid.as_deref().unwrap_or_default());
    }
    Ok(if run.failed_count() > 0 || !invalid.is_empty() {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    })
}

fn list_sources(src: &Path) -> anyhow::Result<Vec<SourceImage>> {
    let entries = std::fs::read_dir(src).with_context(|| format!("reading {}", src.display()))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|path| SourceImage {
            image_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            path,
        })
        .collect())
}

pub fn degrade(cfg: &RunConfig, src: &Path, plan_name: &str) -> anyhow::Result<u8> {
    let plan = plan_by_name(plan_name, cfg.seed).ok_or_else(|| {
        UsageError(format!(
            "unknown plan {plan_name:?}; available plans: {}",
            PLAN_NAMES.join(", ")
        ))
    })?;
    let sources = list_sources(src)?;
    if sources.is_empty() {
        bail!("no images in {}", src.display());
    }
    let entries = build_degraded_corpus(&sources, &plan, &cfg.out)?;
    let digest = manifest_digest(&cfg.out)?;
    eprintln!(
        "{} entries from {} images written to {}",
        entries.len(),
        sources.len(),
        cfg.out.display()
    );
    println!("{digest}");
    Ok(EXIT_OK)
}

pub async fn qgen(cfg: &RunConfig, caption: Option<&str>, dataset: Option<&Path>) -> anyhow::Result<u8> {
    let captions: Vec<Caption> = match (caption, dataset) {
        (Some(text), _) => vec![Caption::new("caption", text).map_err(|e| UsageError(e.to_string()))?],
        (None, Some(path)) => ingest_captions(path, CaptionFormat::from_path(path))?
            .records
            .into_iter()
            .map(|r| r.caption)
            .collect(),
        (None, None) => return Err(UsageError("qgen needs --caption or --dataset".into()).into()),
    };
    let llm = match cfg.qgen {
        QgenKind::Rule => None,
        QgenKind::Llm => {
            let opts = BackendOptions {
                timeout: Some(Duration::from_secs(cfg.timeout_secs)),
                bearer_token: cfg.token.clone(),
                attributes: None,
            };
            Some(llm_client(cfg, &opts, &open_cache(cfg)?)?)
        }
    };
    let many = captions.len() > 1;
    let mut failed = 0;
    for c in &captions {
        let qs = match &llm {
            None => generate_rule_based(c),
            Some(client) => match generate_llm(c, client, cfg.llm_retries).await {
                Ok(qs) => qs,
                Err(e) => {
                    eprintln!("{}: {e}", c.id());
                    failed += 1;
                    continue;
                }
            },
        };
        if many {
            println!("# {}: {}", c.id(), c.text());
        }
        for q in &qs.questions {
            println!("{}", q.text());
        }
    }
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}
