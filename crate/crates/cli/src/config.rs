//! The resolved configuration: defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use trajaudit::gateway::{GatewayConfig, GatewayMode};
use trajaudit::scriptenv::OnRejection;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Scripted,
    Replay,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Oracle,
    Rule,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RejectionMode {
    SkipFaultyAction,
    ReplayGolden,
    Persist,
}

impl From<RejectionMode> for OnRejection {
    fn from(m: RejectionMode) -> Self {
        match m {
            RejectionMode::SkipFaultyAction => OnRejection::SkipFaultyAction,
            RejectionMode::ReplayGolden => OnRejection::ReplayGolden,
            RejectionMode::Persist => OnRejection::Persist,
        }
    }
}

/// Endpoint settings shared by the LLM generator and the remote verifier. A recording path
/// means replay unless `record` is set, in which case live exchanges are appended to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySection {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env_var: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub concurrency_budget: usize,
    pub record: bool,
    pub generator_recording: Option<PathBuf>,
    pub verifier_recording: Option<PathBuf>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let d = GatewayConfig::default();
        GatewaySection {
            base_url: d.base_url,
            model_name: d.model_name,
            auth_token_env_var: d.auth_token_env_var,
            timeout_ms: d.timeout_ms,
            max_retries: d.max_retries,
            backoff_base_ms: d.backoff_base_ms,
            concurrency_budget: d.concurrency_budget,
            record: false,
            generator_recording: None,
            verifier_recording: None,
        }
    }
}

impl GatewaySection {
    fn with_mode(&self, mode: GatewayMode) -> GatewayConfig {
        GatewayConfig {
            base_url: self.base_url.clone(),
            model_name: self.model_name.clone(),
            auth_token_env_var: self.auth_token_env_var.clone(),
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
            concurrency_budget: self.concurrency_budget,
            mode,
        }
    }

    fn mode_for(&self, recording: Option<&PathBuf>) -> GatewayMode {
        match (recording, self.record) {
            (Some(path), true) => GatewayMode::Record { recording: path.clone() },
            (Some(path), false) => GatewayMode::Replay { recording: path.clone() },
            (None, _) => GatewayMode::Live,
        }
    }

    pub fn generator(&self, kind: GeneratorKind) -> Result<GatewayConfig, CliError> {
        let recording = self.generator_recording.as_ref();
        let mode = match kind {
            GeneratorKind::Scripted => unreachable!("the scripted generator has no gateway"),
            GeneratorKind::Replay => GatewayMode::Replay {
                recording: recording
                    .cloned()
                    .ok_or_else(|| CliError::Usage("--generator replay needs gateway.generator_recording".into()))?,
            },
            GeneratorKind::Live if self.record => self.mode_for(recording),
            GeneratorKind::Live => GatewayMode::Live,
        };
        Ok(self.with_mode(mode))
    }

    pub fn verifier(&self) -> GatewayConfig {
        self.with_mode(self.mode_for(self.verifier_recording.as_ref()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewSection {
    pub addr: String,
    /// Name of the environment variable holding the shared access token.
    pub token_env_var: String,
    /// Verdict log; defaults to `<out>/verdicts.jsonl`.
    pub log: Option<PathBuf>,
}

impl Default for ReviewSection {
    fn default() -> Self {
        ReviewSection {
            addr: "127.0.0.1:8080".into(),
            token_env_var: "TRAJAUDIT_REVIEW_TOKEN".into(),
            log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub tau: f64,
    pub interval: usize,
    pub retry_budget: usize,
    pub max_steps: usize,
    pub test_fraction: f64,
    pub generator: GeneratorKind,
    pub verifier: VerifierKind,
    pub on_rejection: RejectionMode,
    /// Seeds with an observation matching this are rejected.
    pub reject_pattern: String,
    /// Audit prompt template; the bundled one when unset.
    pub template: Option<PathBuf>,
    pub gateway: GatewaySection,
    pub review: ReviewSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            seed: 42,
            out: PathBuf::from("trajaudit-out"),
            tau: trajaudit::metrics::DEFAULT_TAU,
            interval: 1,
            retry_budget: 3,
            max_steps: 200,
            test_fraction: 0.1,
            generator: GeneratorKind::Scripted,
            verifier: VerifierKind::Oracle,
            on_rejection: RejectionMode::ReplayGolden,
            reject_pattern: r"^(?:Error|Exception|Traceback)\b".into(),
            template: None,
            gateway: GatewaySection::default(),
            review: ReviewSection::default(),
        }
    }
}

/// Flag values; `None` leaves the file or default value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tau: Option<f64>,
    pub interval: Option<usize>,
    pub retry_budget: Option<usize>,
    pub test_fraction: Option<f64>,
    pub generator: Option<GeneratorKind>,
    pub verifier: Option<VerifierKind>,
    pub on_rejection: Option<RejectionMode>,
}

impl CliConfig {
    pub fn from_toml(source: &str) -> Result<Self, CliError> {
        toml::from_str(source).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(CliConfig::default()),
            Some(p) => {
                let source = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&source)
            }
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = o.$field.clone() {
                    self.$field = v;
                }
            )*};
        }
        set!(seed, out, tau, interval, retry_budget, test_fraction, generator, verifier, on_rejection);
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "test fraction must lie strictly between 0 and 1, got {}",
                self.test_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CliError::Usage(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.interval == 0 || self.max_steps == 0 {
            return Err(CliError::Usage("interval and max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = CliConfig::from_toml("seed = 7\n[gateway]\nmodel_name = \"m\"\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.gateway.model_name, "m");
        assert_eq!(c.gateway.max_retries, 3);
        assert_eq!(c.tau, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(CliConfig::from_toml("sede = 7"), Err(CliError::Usage(_))));
        assert!(matches!(CliConfig::from_toml("[gateway]\nurl = \"x\""), Err(CliError::Usage(_))));
    }

    #[test]
    fn flags_win() {
        let c = CliConfig::from_toml("seed = 7\ntest_fraction = 0.2").unwrap().apply(&Overrides {
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!((c.seed, c.test_fraction), (9, 0.2));
    }

    #[test]
    fn fraction_bounds() {
        let c = CliConfig {
            test_fraction: 1.5,
            ..CliConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Usage(_))));
    }

    #[test]
    fn recording_means_replay_unless_recording_live() {
        let mut g = GatewaySection {
            verifier_recording: Some("v.jsonl".into()),
            ..GatewaySection::default()
        };
        assert!(matches!(g.verifier().mode, GatewayMode::Replay { .. }));
        g.record = true;
        assert!(matches!(g.verifier().mode, GatewayMode::Record { .. }));
        assert!(matches!(g.generator(GeneratorKind::Replay), Err(CliError::Usage(_))));
        assert_eq!(g.generator(GeneratorKind::Live).unwrap().mode, GatewayMode::Live);
    }
}
