//! Offline evaluation of MAP and the flat-history baseline.
//!
//! Single-domain: for each user and each `r` in the history range, predict
//! record `r + 1` from records `1..=r`. Cross-domain: predict one fixed book
//! rating from the first `i` movie ratings, once in stored order and once per
//! shuffle seed. `history_size` is always the number of records available to
//! the recommender.

mod compare;
mod output;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use compare::{compare_reports, improvement_pct, Comparison, ComparisonRow};
pub use output::{read_report, render_svg, write_report, write_trace_csv, PlotSeries};

use crate::datasets::PreparedUser;
use crate::embedding::fnv1a64;
use crate::gateway::{
    ledger_cost_per_10_history, CompletionRequest, Gateway, GatewayError, LedgerSummary, StubHints,
};
use crate::prompting::{parse_rating_reply, BaselineMode, PromptBuilder, RETRY_INSTRUCTION};
use crate::retrieval::{retrieve_memory, RetrievalConfig};
use crate::similarity::{SimilarityError, SimilarityStrategy, StrategyKind};
use crate::types::{InteractionRecord, TargetItem};

/// Longest history either protocol uses.
pub const MAX_HISTORY: usize = 18;
/// Rating used when a reply cannot be parsed even after the retry.
pub const IMPUTED_RATING: f64 = 3.0;
pub const UNSHUFFLED: &str = "unshuffled";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no values to average")]
    EmptyInput,
    #[error("reports are not comparable: {0}")]
    ConfigMismatch(String),
    #[error("invalid history range {0}..={1}")]
    HistoryRange(usize, usize),
    #[error("user `{user_id}`: {reason}")]
    BadUser { user_id: String, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path}: {reason}")]
    Report { path: PathBuf, reason: String },
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let total: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Centered 3-point moving average. The first and last points average
/// over the two values available.
pub fn smooth3(series: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let points: Vec<(usize, f64)> = series.iter().map(|(k, v)| (*k, *v)).collect();
    points
        .iter()
        .enumerate()
        .map(|(i, (size, _))| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(points.len() - 1);
            let window = &points[lo..=hi];
            (*size, window.iter().map(|p| p.1).sum::<f64>() / window.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SingleDomain,
    CrossDomain,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::SingleDomain => "single_domain",
            Protocol::CrossDomain => "cross_domain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommender {
    Map,
    Baseline,
}

impl Recommender {
    pub fn as_str(self) -> &'static str {
        match self {
            Recommender::Map => "map",
            Recommender::Baseline => "baseline",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Recommender::Map => "MAP",
            Recommender::Baseline => "Vanilla GPT",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub recommender: Recommender,
    pub retrieval: RetrievalConfig,
    /// Identifies the model or stub behind the gateway; part of the config hash.
    pub gateway_label: String,
    /// Inclusive.
    pub history_range: (usize, usize),
    /// Cross-domain only; the unshuffled pass always runs as well.
    pub shuffle_seeds: Vec<u64>,
    pub user_limit: Option<usize>,
    /// Completed users are appended here and skipped on the next run with
    /// the same config hash.
    pub checkpoint_dir: Option<PathBuf>,
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol, recommender: Recommender) -> Self {
        Self {
            protocol,
            recommender,
            retrieval: RetrievalConfig::default(),
            gateway_label: String::new(),
            history_range: (1, MAX_HISTORY),
            shuffle_seeds: match protocol {
                Protocol::SingleDomain => Vec::new(),
                Protocol::CrossDomain => vec![1],
            },
            user_limit: None,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let (lo, hi) = self.history_range;
        if lo == 0 || lo > hi || hi > MAX_HISTORY {
            return Err(EvalError::HistoryRange(lo, hi));
        }
        Ok(())
    }

    fn passes(&self) -> Vec<Option<u64>> {
        let mut passes = vec![None];
        if self.protocol == Protocol::CrossDomain {
            passes.extend(self.shuffle_seeds.iter().map(|s| Some(*s)));
        }
        passes
    }
}

fn pass_label(pass: Option<u64>) -> String {
    match pass {
        None => UNSHUFFLED.to_string(),
        Some(seed) => format!("seed-{seed}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub user_id: String,
    pub pass: String,
    pub iteration: usize,
    pub history_size: usize,
    pub target_item_id: String,
    pub predicted: f64,
    pub truth: f64,
    /// The first reply did not parse and the request was repeated.
    pub parse_retried: bool,
    /// Neither reply parsed; `predicted` is the imputed midpoint.
    pub imputed: bool,
    /// Records whose ratings the prompt exposed, in prompt order.
    pub shown_record_ids: Vec<String>,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_id: String,
    pub protocol: Protocol,
    pub recommender: Recommender,
    pub strategy: StrategyKind,
    pub k: usize,
    pub gateway: String,
    pub history_range: (usize, usize),
    pub shuffle_seeds: Vec<u64>,
    pub users: usize,
    /// Keyed by history size. Imputed traces count as ordinary values.
    pub mae_by_size: BTreeMap<usize, f64>,
    /// Same, leaving imputed traces out. Sizes where every trace was
    /// imputed are absent.
    pub mae_by_size_excluding_imputed: BTreeMap<usize, f64>,
    /// 3-point moving average of `mae_by_size`.
    pub smoothed_mae_by_size: BTreeMap<usize, f64>,
    /// Per pass (`unshuffled`, `seed-N`); `mae_by_size` is their average.
    pub pass_mae_by_size: BTreeMap<String, BTreeMap<usize, f64>>,
    pub retried_traces: usize,
    pub imputed_traces: usize,
    pub ledger: LedgerSummary,
    /// Dollars per user for every ten history entries, per pass.
    pub cost_per_10_history: f64,
    pub config_hash: String,
    pub template_hashes: BTreeMap<String, String>,
    pub traces: Vec<PredictionTrace>,
}

impl EvalReport {
    /// A report holding only an MAE series, e.g. published numbers to
    /// compare against.
    pub fn from_series(
        protocol: Protocol,
        recommender: Recommender,
        mae_by_size: BTreeMap<usize, f64>,
    ) -> Self {
        let lo = mae_by_size.keys().next().copied().unwrap_or(1);
        let hi = mae_by_size.keys().last().copied().unwrap_or(MAX_HISTORY);
        Self {
            report_id: format!("{}-{}-series", protocol.as_str(), recommender.as_str()),
            protocol,
            recommender,
            strategy: StrategyKind::GenreOverlap,
            k: 0,
            gateway: String::new(),
            history_range: (lo, hi),
            shuffle_seeds: Vec::new(),
            users: 0,
            smoothed_mae_by_size: smooth3(&mae_by_size),
            mae_by_size_excluding_imputed: mae_by_size.clone(),
            mae_by_size,
            pass_mae_by_size: BTreeMap::new(),
            retried_traces: 0,
            imputed_traces: 0,
            ledger: LedgerSummary::default(),
            cost_per_10_history: 0.0,
            config_hash: String::new(),
            template_hashes: BTreeMap::new(),
            traces: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct Fingerprint<'a> {
    protocol: Protocol,
    recommender: Recommender,
    k: usize,
    strategy: StrategyKind,
    embedding: Option<(&'a str, usize, crate::similarity::EmbedFields)>,
    domain_filter: Option<&'a str>,
    min_score: Option<f64>,
    history_range: (usize, usize),
    shuffle_seeds: &'a [u64],
    user_limit: Option<usize>,
    gateway: &'a str,
    templates: BTreeMap<String, String>,
    audit_ids: bool,
    data: String,
}

/// SHA-256 over everything that affects the traces, input data included.
pub fn config_hash(config: &ProtocolConfig, prompts: &PromptBuilder, gateway_label: &str, users: &[PreparedUser]) -> String {
    let data = {
        let mut h = Sha256::new();
        for u in users {
            h.update(serde_json::to_vec(u).expect("prepared users serialize"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    };
    let embedding = match &config.retrieval.strategy {
        SimilarityStrategy::GenreOverlap => None,
        SimilarityStrategy::EmbeddingCosine { provider, fields } => {
            Some((provider.name(), provider.dimension(), *fields))
        }
    };
    let fp = Fingerprint {
        protocol: config.protocol,
        recommender: config.recommender,
        k: config.retrieval.k,
        strategy: config.retrieval.strategy.kind(),
        embedding,
        domain_filter: config.retrieval.domain_filter.as_ref().map(|d| d.as_str()),
        min_score: config.retrieval.min_score,
        history_range: config.history_range,
        shuffle_seeds: if config.protocol == Protocol::CrossDomain {
            &config.shuffle_seeds
        } else {
            &[]
        },
        user_limit: config.user_limit,
        gateway: gateway_label,
        templates: prompts.templates().hashes(),
        audit_ids: prompts.audit_ids(),
        data,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&fp).expect("fingerprint serializes")))
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    unit: String,
    traces: Vec<PredictionTrace>,
}

/// Append-only store of finished work units.
struct Checkpoint {
    file: Mutex<File>,
    done: BTreeMap<String, Vec<PredictionTrace>>,
}

impl Checkpoint {
    fn open(dir: &Path, hash: &str) -> Result<Self, EvalError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{hash}.jsonl"));
        let mut done = BTreeMap::new();
        let mut valid = Vec::new();
        let mut torn = false;
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                match serde_json::from_str::<CheckpointLine>(&line) {
                    Ok(c) => {
                        valid.push(line);
                        done.insert(c.unit, c.traces);
                    }
                    Err(_) => torn = true,
                }
            }
        }
        if torn {
            tracing::warn!(path = %path.display(), "dropping unreadable checkpoint lines");
            let mut text = valid.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            fs::write(&path, text)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            file: Mutex::new(file),
            done,
        })
    }

    fn append(&self, unit: &str, traces: &[PredictionTrace]) -> Result<(), EvalError> {
        let mut line = serde_json::to_string(&CheckpointLine {
            unit: unit.to_string(),
            traces: traces.to_vec(),
        })
        .map_err(io::Error::other)?;
        line.push('\n');
        let mut f = self.file.lock();
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

struct Unit<'a> {
    id: String,
    user: &'a PreparedUser,
    pass: Option<u64>,
}

/// Runs protocols against one gateway and prompt set.
#[derive(Debug, Clone)]
pub struct Harness {
    gateway: Arc<Gateway>,
    prompts: PromptBuilder,
}

impl Harness {
    pub fn new(gateway: Arc<Gateway>, prompts: PromptBuilder) -> Self {
        Self { gateway, prompts }
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn run(&self, config: &ProtocolConfig, users: &[PreparedUser]) -> Result<EvalReport, EvalError> {
        config.validate()?;
        let users = &users[..config.user_limit.map_or(users.len(), |n| n.min(users.len()))];
        let (_, hi) = config.history_range;
        for u in users {
            let (needed, have) = match config.protocol {
                Protocol::SingleDomain => (hi + 1, u.history.len()),
                Protocol::CrossDomain => (hi, u.history.len()),
            };
            if have < needed {
                return Err(EvalError::BadUser {
                    user_id: u.user_id.clone(),
                    reason: format!("needs {needed} history records, has {have}"),
                });
            }
            if config.protocol == Protocol::CrossDomain && u.cross_target.is_none() {
                return Err(EvalError::BadUser {
                    user_id: u.user_id.clone(),
                    reason: "no cross-domain target".into(),
                });
            }
        }

        let gateway_label = if config.gateway_label.is_empty() {
            self.gateway.provider().to_string()
        } else {
            config.gateway_label.clone()
        };
        let hash = config_hash(config, &self.prompts, &gateway_label, users);
        let checkpoint = match &config.checkpoint_dir {
            Some(dir) => Some(Checkpoint::open(dir, &hash)?),
            None => None,
        };

        let passes = config.passes();
        let units: Vec<Unit> = users
            .iter()
            .flat_map(|u| {
                passes.iter().map(move |p| Unit {
                    id: format!("{}/{}", u.user_id, pass_label(*p)),
                    user: u,
                    pass: *p,
                })
            })
            .collect();

        let results: Vec<Mutex<Option<Vec<PredictionTrace>>>> = units
            .iter()
            .map(|u| Mutex::new(checkpoint.as_ref().and_then(|c| c.done.get(&u.id).cloned())))
            .collect();
        let resumed = results.iter().filter(|r| r.lock().is_some()).count();
        if resumed > 0 {
            tracing::info!(resumed, total = units.len(), "resuming from checkpoint");
        }

        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let first_error: Mutex<Option<(usize, EvalError)>> = Mutex::new(None);
        let workers = self.gateway.max_in_flight().min(units.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(unit) = units.get(i) else { break };
                    if results[i].lock().is_some() {
                        continue;
                    }
                    let outcome = self.eval_unit(config, unit).and_then(|traces| {
                        if let Some(c) = &checkpoint {
                            c.append(&unit.id, &traces)?;
                        }
                        Ok(traces)
                    });
                    match outcome {
                        Ok(traces) => *results[i].lock() = Some(traces),
                        Err(e) => {
                            failed.store(true, Ordering::SeqCst);
                            let mut slot = first_error.lock();
                            if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                                *slot = Some((i, e));
                            }
                            break;
                        }
                    }
                });
            }
        });
        if let Some((_, e)) = first_error.into_inner() {
            return Err(e);
        }

        let traces: Vec<PredictionTrace> = results
            .into_iter()
            .flat_map(|r| r.into_inner().unwrap_or_default())
            .collect();
        Ok(self.assemble(config, users.len(), gateway_label, hash, &passes, traces))
    }

    pub fn run_single_domain(&self, config: &ProtocolConfig, users: &[PreparedUser]) -> Result<EvalReport, EvalError> {
        if config.protocol != Protocol::SingleDomain {
            return Err(EvalError::ConfigMismatch("expected a single-domain config".into()));
        }
        self.run(config, users)
    }

    pub fn run_cross_domain(&self, config: &ProtocolConfig, users: &[PreparedUser]) -> Result<EvalReport, EvalError> {
        if config.protocol != Protocol::CrossDomain {
            return Err(EvalError::ConfigMismatch("expected a cross-domain config".into()));
        }
        self.run(config, users)
    }

    fn eval_unit(&self, config: &ProtocolConfig, unit: &Unit) -> Result<Vec<PredictionTrace>, EvalError> {
        let user = unit.user;
        let mut history: Vec<InteractionRecord> = user.history.clone();
        if let Some(seed) = unit.pass {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(user.user_id.as_bytes()));
            history.shuffle(&mut rng);
        }
        let (lo, hi) = config.history_range;
        let pass = pass_label(unit.pass);
        let mut traces = Vec::with_capacity(hi + 1 - lo);
        for r in lo..=hi {
            let shown = &history[..r];
            let (target, truth) = match config.protocol {
                Protocol::SingleDomain => (history[r].as_target(), history[r].rating),
                Protocol::CrossDomain => {
                    let t = user.cross_target.as_ref().expect("checked before the run");
                    (t.as_target(), t.rating)
                }
            };
            let tag = format!("{}/r{r:02}", unit.id);
            traces.push(self.predict(config, shown, &target, truth, &tag, &user.user_id, &pass, r)?);
        }
        Ok(traces)
    }

    #[allow(clippy::too_many_arguments)]
    fn predict(
        &self,
        config: &ProtocolConfig,
        shown: &[InteractionRecord],
        target: &TargetItem,
        truth: f64,
        tag: &str,
        user_id: &str,
        pass: &str,
        r: usize,
    ) -> Result<PredictionTrace, EvalError> {
        let (bundle, exposed): (_, Vec<&InteractionRecord>) = match config.recommender {
            Recommender::Map => {
                let memory = retrieve_memory(shown, target, &config.retrieval)?;
                let bundle = self.prompts.recommendation(target, &memory);
                let exposed = memory
                    .iter()
                    .filter_map(|m| shown.iter().find(|r| r.record_id == m.record.record_id))
                    .collect();
                (bundle, exposed)
            }
            Recommender::Baseline => {
                let mode = match config.protocol {
                    Protocol::SingleDomain => BaselineMode::SingleDomain,
                    Protocol::CrossDomain => BaselineMode::CrossDomain,
                };
                (self.prompts.baseline(shown, target, mode), shown.iter().collect())
            }
        };
        let hints = StubHints {
            memory_ratings: exposed.iter().map(|r| r.rating).collect(),
            target_genres: target.genres.clone(),
        };
        let request = CompletionRequest::new(bundle, tag).with_hints(hints.clone());
        let first = self.gateway.complete(&request)?;
        let mut prompt_tokens = first.prompt_tokens;
        let mut reply_tokens = first.reply_tokens;
        let mut calls = 1;
        let mut parse_retried = false;
        let mut imputed = false;
        let predicted = match parse_rating_reply(&first.text) {
            Ok(v) => v,
            Err(_) => {
                parse_retried = true;
                let retry = CompletionRequest::new(request.bundle.with_suffix(RETRY_INSTRUCTION), format!("{tag}/retry"))
                    .with_hints(hints);
                let second = self.gateway.complete(&retry)?;
                prompt_tokens += second.prompt_tokens;
                reply_tokens += second.reply_tokens;
                calls += 1;
                parse_rating_reply(&second.text).unwrap_or_else(|_| {
                    imputed = true;
                    IMPUTED_RATING
                })
            }
        };
        Ok(PredictionTrace {
            user_id: user_id.to_string(),
            pass: pass.to_string(),
            iteration: r,
            history_size: r,
            target_item_id: target.item_id.clone(),
            predicted,
            truth,
            parse_retried,
            imputed,
            shown_record_ids: exposed.iter().map(|r| r.record_id.clone()).collect(),
            prompt_tokens,
            reply_tokens,
            calls,
        })
    }

    fn assemble(
        &self,
        config: &ProtocolConfig,
        users: usize,
        gateway_label: String,
        config_hash: String,
        passes: &[Option<u64>],
        traces: Vec<PredictionTrace>,
    ) -> EvalReport {
        let mut by_size: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut by_size_clean: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut by_pass: BTreeMap<String, BTreeMap<usize, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
        let mut ledger = LedgerSummary::default();
        for t in &traces {
            let push = |m: &mut BTreeMap<usize, (Vec<f64>, Vec<f64>)>| {
                let e = m.entry(t.history_size).or_default();
                e.0.push(t.predicted);
                e.1.push(t.truth);
            };
            push(&mut by_size);
            if !t.imputed {
                push(&mut by_size_clean);
            }
            push(by_pass.entry(t.pass.clone()).or_default());
            ledger.calls += u64::from(t.calls);
            ledger.prompt_tokens += t.prompt_tokens;
            ledger.reply_tokens += t.reply_tokens;
        }
        let series = |m: &BTreeMap<usize, (Vec<f64>, Vec<f64>)>| -> BTreeMap<usize, f64> {
            m.iter()
                .filter_map(|(s, (p, t))| mae(p, t).ok().map(|v| (*s, v)))
                .collect()
        };
        ledger.dollars = self
            .gateway
            .ledger()
            .price_table()
            .dollars(ledger.prompt_tokens, ledger.reply_tokens);
        let (lo, hi) = config.history_range;
        let cost_per_10_history =
            ledger_cost_per_10_history(ledger.dollars / passes.len() as f64, users, hi + 1 - lo);
        let mae_by_size = series(&by_size);
        EvalReport {
            report_id: format!("{}-{}-{}", config.protocol.as_str(), config.recommender.as_str(), &config_hash[..12]),
            protocol: config.protocol,
            recommender: config.recommender,
            strategy: config.retrieval.strategy.kind(),
            k: config.retrieval.k,
            gateway: gateway_label,
            history_range: config.history_range,
            shuffle_seeds: passes.iter().flatten().copied().collect(),
            users,
            smoothed_mae_by_size: smooth3(&mae_by_size),
            mae_by_size,
            mae_by_size_excluding_imputed: series(&by_size_clean),
            pass_mae_by_size: by_pass.iter().map(|(p, m)| (p.clone(), series(m))).collect(),
            retried_traces: traces.iter().filter(|t| t.parse_retried).count(),
            imputed_traces: traces.iter().filter(|t| t.imputed).count(),
            ledger,
            cost_per_10_history,
            config_hash,
            template_hashes: self.prompts.templates().hashes(),
            traces,
        }
    }
}
