//! TOML application config.
//!
//! Every section and key is optional; see `AppConfig::default` for the
//! values used when the file is absent.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use map_core::datasets::ItemCatalog;
use map_core::embedding::{RemoteEmbeddingConfig, RemoteEmbeddingProvider};
use map_core::gateway::{RemoteChatBackend, RemoteChatConfig, ReplayTable, DEFAULT_MAX_IN_FLIGHT};
use map_core::prompting::TemplateSet;
use map_core::retry::RetryPolicy;
use map_core::session::{SessionConfig, SessionEngine};
use map_core::{
    EmbeddingProvider, Gateway, PriceTable, ProfileStore, PromptBuilder, RetrievalConfig,
    SimilarityStrategy, StubPolicy, TrigramProvider,
};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub store: StoreSection,
    pub gateway: GatewaySection,
    pub embedding: EmbeddingSection,
    pub retrieval: RetrievalSection,
    pub prompts: PromptSection,
    pub service: ServiceSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    /// Profile directory; profiles stay in memory when unset.
    pub profiles_dir: Option<PathBuf>,
    pub prepared_dir: PathBuf,
    pub reports_dir: PathBuf,
    /// Item catalog written by `prepare`, used to resolve titles in sessions.
    pub catalog: Option<PathBuf>,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self {
            profiles_dir: None,
            prepared_dir: PathBuf::from("data/prepared"),
            reports_dir: PathBuf::from("reports"),
            catalog: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayProvider {
    Stub,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub provider: GatewayProvider,
    /// Stub policy, same syntax as `--stub`.
    pub stub: String,
    pub model: String,
    pub url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub prices: PriceTable,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            provider: GatewayProvider::Stub,
            stub: "echo-mean".into(),
            model: "gpt-3.5-turbo".into(),
            url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "MAP_API_KEY".into(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 60,
            max_attempts: 3,
            prices: PriceTable::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    Trigram,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: EmbeddingProviderKind,
    pub dimension: usize,
    pub model: String,
    pub url: String,
    pub api_key_env: String,
    pub cache_path: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: EmbeddingProviderKind::Trigram,
            dimension: map_core::embedding::FALLBACK_DIMENSION,
            model: "text-embedding-3-small".into(),
            url: "https://api.openai.com/v1/embeddings".into(),
            api_key_env: "MAP_API_KEY".into(),
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    GenreOverlap,
    EmbeddingCosine,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
    /// Used by sessions and the single-domain protocol.
    pub strategy: StrategyName,
    pub cross_strategy: StrategyName,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            k: map_core::retrieval::DEFAULT_K,
            strategy: StrategyName::GenreOverlap,
            cross_strategy: StrategyName::EmbeddingCosine,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub template_dir: Option<PathBuf>,
    pub audit_ids: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    /// Static files served at `/` when set.
    pub console_dir: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            console_dir: None,
        }
    }
}

/// A config problem pointing at a line of the file.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path.display(), line, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line where `section.key` is assigned, if it appears in the file.
fn line_of_key(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        if lhs.trim() == key && (current == section || section.is_empty()) {
            return Some(i + 1);
        }
    }
    None
}

impl AppConfig {
    pub fn parse(source: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: AppConfig = toml::from_str(source).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().trim().to_string(),
        })?;
        config.validate().map_err(|(section, key, message)| ConfigError {
            path: path.to_path_buf(),
            line: line_of_key(source, section, key),
            message,
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: e.to_string(),
        })?;
        Self::parse(&source, path)
    }

    fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        let g = &self.gateway;
        if g.max_in_flight == 0 {
            return Err(("gateway", "max_in_flight", "max_in_flight must be at least 1".into()));
        }
        if g.max_attempts == 0 {
            return Err(("gateway", "max_attempts", "max_attempts must be at least 1".into()));
        }
        if !(g.prices.prompt_per_million >= 0.0 && g.prices.reply_per_million >= 0.0) {
            return Err(("gateway.prices", "prompt_per_million", "prices must be non-negative".into()));
        }
        if g.provider == GatewayProvider::Stub {
            parse_stub_name(&g.stub).map_err(|e| ("gateway", "stub", e))?;
        }
        if g.provider == GatewayProvider::Remote && g.url.is_empty() {
            return Err(("gateway", "url", "remote gateway needs a url".into()));
        }
        if self.embedding.dimension == 0 {
            return Err(("embedding", "dimension", "dimension must be positive".into()));
        }
        if self.service.bind.parse::<std::net::SocketAddr>().is_err() {
            return Err(("service", "bind", format!("`{}` is not a socket address", self.service.bind)));
        }
        Ok(())
    }

    fn token(env: &str) -> Option<String> {
        std::env::var(env).ok().filter(|v| !v.is_empty())
    }

    /// Builds the gateway; `stub` overrides the configured provider.
    pub fn gateway(&self, stub: Option<&str>) -> anyhow::Result<(Gateway, String)> {
        let g = &self.gateway;
        if let Some(spec) = stub.or((g.provider == GatewayProvider::Stub).then_some(g.stub.as_str())) {
            let policy = parse_stub(spec)?;
            let backend = Arc::new(map_core::gateway::StubBackend::new(policy));
            return Ok((Gateway::new(backend, g.prices, g.max_in_flight), format!("stub:{spec}")));
        }
        let config = RemoteChatConfig {
            url: g.url.clone(),
            model: g.model.clone(),
            auth_token: Self::token(&g.api_key_env),
            timeout_secs: g.timeout_secs,
            retry: RetryPolicy {
                max_attempts: g.max_attempts,
                ..RetryPolicy::default()
            },
        };
        let backend = RemoteChatBackend::new(config).map_err(|e| anyhow!("{e}"))?;
        Ok((Gateway::new(Arc::new(backend), g.prices, g.max_in_flight), g.model.clone()))
    }

    pub fn embedding_provider(&self) -> anyhow::Result<Arc<dyn EmbeddingProvider>> {
        let e = &self.embedding;
        Ok(match e.provider {
            EmbeddingProviderKind::Trigram => Arc::new(TrigramProvider::new(e.dimension)),
            EmbeddingProviderKind::Remote => Arc::new(
                RemoteEmbeddingProvider::new(RemoteEmbeddingConfig {
                    url: e.url.clone(),
                    model: e.model.clone(),
                    auth_token: Self::token(&e.api_key_env),
                    dimension: e.dimension,
                    cache_path: e.cache_path.clone(),
                    timeout_secs: 30,
                    retry: RetryPolicy {
                        initial_backoff: Duration::from_millis(500),
                        ..RetryPolicy::default()
                    },
                })
                .map_err(|e| anyhow!("{e}"))?,
            ),
        })
    }

    pub fn strategy(&self, name: StrategyName) -> anyhow::Result<SimilarityStrategy> {
        Ok(match name {
            StrategyName::GenreOverlap => SimilarityStrategy::GenreOverlap,
            StrategyName::EmbeddingCosine => SimilarityStrategy::embedding(self.embedding_provider()?),
        })
    }

    pub fn prompts(&self) -> anyhow::Result<PromptBuilder> {
        let templates = match &self.prompts.template_dir {
            Some(dir) => TemplateSet::load_dir(dir).map_err(|e| anyhow!("{e}"))?,
            None => TemplateSet::builtin(),
        };
        Ok(PromptBuilder::new(Arc::new(templates)).with_audit_ids(self.prompts.audit_ids))
    }

    pub fn store(&self) -> anyhow::Result<ProfileStore> {
        match &self.store.profiles_dir {
            Some(dir) => ProfileStore::open(dir).with_context(|| format!("opening {}", dir.display())),
            None => Ok(ProfileStore::in_memory()),
        }
    }

    pub fn catalog(&self) -> anyhow::Result<Option<ItemCatalog>> {
        let Some(path) = &self.store.catalog else { return Ok(None) };
        Ok(Some(read_catalog(path)?))
    }

    /// A session engine wired from this config.
    pub fn engine(&self, stub: Option<&str>) -> anyhow::Result<SessionEngine> {
        let (gateway, _) = self.gateway(stub)?;
        let config = SessionConfig {
            retrieval: RetrievalConfig::with_k(self.retrieval.k, self.strategy(self.retrieval.strategy)?),
        };
        let mut engine = SessionEngine::new(Arc::new(self.store()?), Arc::new(gateway), self.prompts()?, config);
        if let Some(catalog) = self.catalog()? {
            engine = engine.with_catalog(Arc::new(catalog));
        }
        Ok(engine)
    }
}

pub fn write_catalog(path: &Path, catalog: &ItemCatalog) -> anyhow::Result<()> {
    let entries: Vec<_> = catalog.iter().collect();
    fs::write(path, serde_json::to_vec_pretty(&entries)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_catalog(path: &Path) -> anyhow::Result<ItemCatalog> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<map_core::datasets::ItemCatalogEntry> =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let mut catalog = ItemCatalog::new();
    for e in entries {
        catalog.insert(e);
    }
    Ok(catalog)
}

/// Checks the shape of a stub spec without touching any files.
fn parse_stub_name(spec: &str) -> Result<(), String> {
    let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match name {
        "constant" => match arg.parse::<f64>() {
            Ok(v) if (1.0..=5.0).contains(&v) => Ok(()),
            _ => Err(format!("constant stub needs a rating in 1..=5, got `{arg}`")),
        },
        "echo-mean" if arg.is_empty() => Ok(()),
        "genre-oracle" | "scripted" if !arg.is_empty() => Ok(()),
        _ => Err(format!(
            "unknown stub `{spec}` (expected constant:R, echo-mean, genre-oracle:FILE or scripted:FILE)"
        )),
    }
}

/// `constant:R`, `echo-mean`, `genre-oracle:FILE` (JSON object of genre to
/// rating) or `scripted:FILE` (replay table).
pub fn parse_stub(spec: &str) -> anyhow::Result<StubPolicy> {
    parse_stub_name(spec).map_err(|e| anyhow!(e))?;
    let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match name {
        "constant" => StubPolicy::Constant(arg.parse()?),
        "echo-mean" => StubPolicy::EchoMeanOfMemory,
        "genre-oracle" => {
            let text = fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
            let prefs: HashMap<String, f64> = serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))?;
            StubPolicy::genre_oracle(prefs)
        }
        "scripted" => StubPolicy::Scripted(ReplayTable::load(arg).with_context(|| format!("reading {arg}"))?),
        _ => bail!("unknown stub `{spec}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<AppConfig, ConfigError> {
        AppConfig::parse(s, Path::new("map.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.retrieval.k, 5);
        assert_eq!(c.gateway.provider, GatewayProvider::Stub);
        assert_eq!(c.service.bind, "127.0.0.1:8080");
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let e = parse("[retrieval]\nk = 3\n\n[gateway]\nmax_in_flight = \"four\"\n").unwrap_err();
        assert_eq!(e.line, Some(5));
        assert!(e.to_string().starts_with("map.toml:5:"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse("[service]\nbind = \"127.0.0.1:1\"\nport = 3\n").unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let e = parse("[gateway]\nmodel = \"m\"\nmax_in_flight = 0\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = parse("[gateway]\nstub = \"random\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = parse("[service]\nbind = \"nowhere\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn full_file_round_trips() {
        let c = parse(
            r#"
[store]
profiles_dir = "profiles"
reports_dir = "out"

[gateway]
provider = "remote"
model = "gpt-4o-mini"
max_in_flight = 8

[gateway.prices]
prompt_per_million = 0.15
reply_per_million = 0.6

[retrieval]
k = 3
strategy = "embedding_cosine"
"#,
        )
        .unwrap();
        assert_eq!(c.gateway.provider, GatewayProvider::Remote);
        assert_eq!(c.gateway.prices.reply_per_million, 0.6);
        assert_eq!(c.retrieval.strategy, StrategyName::EmbeddingCosine);
        assert_eq!(c.store.reports_dir, PathBuf::from("out"));
    }

    #[test]
    fn stub_specs() {
        assert_eq!(parse_stub("constant:3").unwrap(), StubPolicy::Constant(3.0));
        assert_eq!(parse_stub("echo-mean").unwrap(), StubPolicy::EchoMeanOfMemory);
        assert!(parse_stub("constant:9").is_err());
        assert!(parse_stub("scripted").is_err());
        assert!(parse_stub("genre-oracle:/no/such/file.json").is_err());
    }
}
