//! Run configuration: built-in defaults, overlaid by a flat `key = value`
//! file, overlaid by command-line flags.

use crate::UsageError;
use std::fmt::Write as _;
use std::path::PathBuf;
use t2i_eval_core::harness::ReportFormat;
use t2i_eval_core::qgen::DEFAULT_LLM_RETRIES;
use t2i_eval_core::Weights;

pub const TOKEN_ENV: &str = "T2I_EVAL_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum QgenKind {
    Rule,
    Llm,
}

impl QgenKind {
    fn as_str(self) -> &'static str {
        match self {
            QgenKind::Rule => "rule",
            QgenKind::Llm => "llm",
        }
    }
}

pub fn format_name(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Jsonl => "jsonl",
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "markdown",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub w_tia: f64,
    pub w_iqa: f64,
    pub qgen: QgenKind,
    pub vqa: String,
    pub iqa: String,
    pub llm: Option<String>,
    /// `(name, backend spec)` pairs, reported next to ours.
    pub baselines: Vec<(String, String)>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub format: ReportFormat,
    pub perturb_dict: Option<PathBuf>,
    pub perturb_max_k: usize,
    pub llm_retries: usize,
    pub timeout_secs: u64,
    pub token: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            w_tia: 0.5,
            w_iqa: 0.5,
            qgen: QgenKind::Rule,
            vqa: "mock:oracle".into(),
            iqa: "mock:sidecar".into(),
            llm: None,
            baselines: Vec::new(),
            cache_dir: None,
            parallelism: 4,
            seed: 0,
            out: PathBuf::from("t2i-eval-out"),
            format: ReportFormat::Jsonl,
            perturb_dict: None,
            perturb_max_k: 1,
            llm_retries: DEFAULT_LLM_RETRIES,
            timeout_secs: 60,
            token: None,
        }
    }
}

/// Flag values; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Weight of the alignment score
    #[arg(long)]
    pub w_tia: Option<f64>,
    /// Weight of the quality score
    #[arg(long)]
    pub w_iqa: Option<f64>,
    /// Question generator
    #[arg(long, value_enum)]
    pub qgen: Option<QgenKind>,
    /// VQA backend: http(s) URL, mock:oracle or mock:fixed=<answer>
    #[arg(long)]
    pub vqa: Option<String>,
    /// IQA backend: http(s) URL, mock:sidecar or mock:fixed=<score>
    #[arg(long)]
    pub iqa: Option<String>,
    /// LLM backend URL for --qgen llm
    #[arg(long)]
    pub llm: Option<String>,
    /// Baseline scorer as name=<backend>; repeatable
    #[arg(long = "baseline", value_name = "NAME=BACKEND")]
    pub baselines: Vec<String>,
    /// Content-addressed response cache shared across runs
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Maximum in-flight requests per backend
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Seed for caption perturbation
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: jsonl, csv or markdown
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ReportFormat>,
    /// JSON word -> replacement map; adds perturbed captions as ranking cases
    #[arg(long)]
    pub perturb_dict: Option<PathBuf>,
    /// Largest number of replaced words per perturbed caption
    #[arg(long)]
    pub perturb_max_k: Option<usize>,
    /// Extra LLM attempts when a reply fails validation
    #[arg(long)]
    pub llm_retries: Option<usize>,
    /// Per-request timeout in seconds
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_baseline(s: &str) -> Result<(String, String), UsageError> {
    match s.split_once('=') {
        Some((name, spec)) if !name.trim().is_empty() && !spec.trim().is_empty() => {
            Ok((name.trim().to_string(), spec.trim().to_string()))
        }
        _ => Err(UsageError(format!("baseline must look like name=<backend>, got {s:?}"))),
    }
}

impl RunConfig {
    /// Parses a config file on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored; `baseline` may repeat.
    pub fn from_text(text: &str) -> Result<Self, UsageError> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| UsageError(format!("config line {}: {}", i + 1, e.0)))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
            v.parse()
                .map_err(|_| UsageError(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "w_tia" => self.w_tia = num(key, value)?,
            "w_iqa" => self.w_iqa = num(key, value)?,
            "qgen" => {
                self.qgen = <QgenKind as clap::ValueEnum>::from_str(value, false)
                    .map_err(|_| UsageError(format!("qgen must be rule or llm, got {value:?}")))?
            }
            "vqa" => self.vqa = value.into(),
            "iqa" => self.iqa = value.into(),
            "llm" => self.llm = Some(value.into()),
            "baseline" => self.baselines.push(parse_baseline(value)?),
            "cache_dir" => self.cache_dir = Some(value.into()),
            "parallelism" => self.parallelism = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = value.into(),
            "format" => self.format = value.parse().map_err(UsageError)?,
            "perturb_dict" => self.perturb_dict = Some(value.into()),
            "perturb_max_k" => self.perturb_max_k = num(key, value)?,
            "llm_retries" => self.llm_retries = num(key, value)?,
            "timeout_secs" => self.timeout_secs = num(key, value)?,
            "token" => self.token = Some(value.into()),
            other => return Err(UsageError(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Serializes to the config file format; `from_text` reads it back to an
    /// equal config. With `redact`, the token is masked.
    pub fn to_text(&self, redact: bool) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("w_tia", &self.w_tia);
        line("w_iqa", &self.w_iqa);
        line("qgen", &self.qgen.as_str());
        line("vqa", &self.vqa);
        line("iqa", &self.iqa);
        if let Some(v) = &self.llm {
            line("llm", v);
        }
        for (name, spec) in &self.baselines {
            line("baseline", &format!("{name}={spec}"));
        }
        if let Some(v) = &self.cache_dir {
            line("cache_dir", &v.display());
        }
        line("parallelism", &self.parallelism);
        line("seed", &self.seed);
        line("out", &self.out.display());
        line("format", &format_name(self.format));
        if let Some(v) = &self.perturb_dict {
            line("perturb_dict", &v.display());
        }
        line("perturb_max_k", &self.perturb_max_k);
        line("llm_retries", &self.llm_retries);
        line("timeout_secs", &self.timeout_secs);
        if let Some(v) = &self.token {
            line("token", if redact { &"<redacted>" } else { v });
        }
        out
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), UsageError> {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { self.$f = v.clone(); } )* };
        }
        take!(w_tia, w_iqa, qgen, vqa, iqa, parallelism, seed, out, format, perturb_max_k, llm_retries, timeout_secs);
        if let Some(v) = &o.llm {
            self.llm = Some(v.clone());
        }
        if let Some(v) = &o.cache_dir {
            self.cache_dir = Some(v.clone());
        }
        if let Some(v) = &o.perturb_dict {
            self.perturb_dict = Some(v.clone());
        }
        if !o.baselines.is_empty() {
            self.baselines = o
                .baselines
                .iter()
                .map(|b| parse_baseline(b))
                .collect::<Result<_, _>>()?;
        }
        Ok(())
    }

    /// Checks everything that can be rejected before any work starts.
    pub fn validate(&self) -> Result<Weights, UsageError> {
        let weights = Weights::new(self.w_tia, self.w_iqa).map_err(|e| UsageError(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(UsageError("parallelism must be at least 1".into()));
        }
        if self.perturb_max_k == 0 {
            return Err(UsageError("perturb_max_k must be at least 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(UsageError("timeout_secs must be at least 1".into()));
        }
        if self.qgen == QgenKind::Llm && self.llm.is_none() {
            return Err(UsageError("--qgen llm needs an --llm endpoint".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for (name, _) in &self.baselines {
            if !names.insert(name) {
                return Err(UsageError(format!("baseline {name:?} given twice")));
            }
        }
        Ok(weights)
    }
}
