//! Single JSON configuration document covering corpus generation, model
//! training, attack, score-matching fine-tuning, transcription endpoints,
//! and the experiment layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asm::AsmConfig;
use crate::attack::{AttackConfig, AttackType, MethodVariant};
use crate::error::{Error, Result};
use crate::eval::transcribe::{
    RemoteTranscriber, ReqwestTransport, RetryPolicy, StubTranscriber, Transcriber,
};
use crate::model::{ModelParams, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub n_train: usize,
    pub n_eval: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub vocab: Vec<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_eval: 50,
            words_min: 3,
            words_max: 6,
            vocab: crate::synth::default_vocab()
                .words()
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub surrogate_arch: String,
    pub target_arch: String,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            surrogate_arch: "convnet-a".into(),
            target_arch: "recurrent-b".into(),
            lambda: 0.3,
            epochs: 30,
            lr: 0.02,
            momentum: 0.9,
            clip_norm: 5.0,
        }
    }
}

impl ModelSection {
    pub fn train_config(&self, seed: u64) -> crate::model::TrainConfig {
        crate::model::TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            lambda: self.lambda,
            seed,
        }
    }
}

/// A transcription endpoint as configured on disk. Credentials are only
/// ever named here (environment variable), never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSection {
    pub name: String,
    pub kind: EndpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default = "default_rate")]
    pub rate_limit_rps: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Canned transcripts for the stub kind.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stub_transcripts: Vec<String>,
}

fn default_rate() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    LocalModel,
    RemoteApi,
    Stub,
}

impl EndpointSection {
    /// Instantiates the endpoint. Local weights load from `base_dir`
    /// unless the path is absolute.
    pub fn build(&self, base_dir: &Path) -> Result<Transcriber> {
        match self.kind {
            EndpointKind::LocalModel => {
                let rel = self.weights_path.as_deref().ok_or_else(|| {
                    Error::Configuration(format!("endpoint {} needs weights_path", self.name))
                })?;
                let path = if Path::new(rel).is_absolute() {
                    Path::new(rel).to_path_buf()
                } else {
                    base_dir.join(rel)
                };
                Ok(Transcriber::local(ModelParams::load(&path)?))
            }
            EndpointKind::RemoteApi => {
                let url = self.base_url.as_deref().ok_or_else(|| {
                    Error::Configuration(format!("endpoint {} needs base_url", self.name))
                })?;
                let cred = self.credential_env.as_deref().ok_or_else(|| {
                    Error::Configuration(format!("endpoint {} needs credential_env", self.name))
                })?;
                Ok(Transcriber::Remote(RemoteTranscriber::new(
                    url,
                    cred,
                    self.rate_limit_rps,
                    self.retry.clone(),
                    Box::new(ReqwestTransport::new()?),
                )?))
            }
            EndpointKind::Stub => {
                let script = if self.stub_transcripts.is_empty() {
                    vec![Transcript::empty()]
                } else {
                    self.stub_transcripts.iter().map(|s| Transcript::parse(s)).collect()
                };
                Ok(Transcriber::Stub(StubTranscriber::new(script)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    /// Attack types to run, in report order.
    pub attack_types: Vec<AttackType>,
    /// Method variants to run against the baseline surrogate.
    pub variants: Vec<MethodVariant>,
    /// Also run the score-matching fine-tuned surrogate (two-stage).
    pub include_asm_surrogate: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            attack_types: vec![AttackType::Delete, AttackType::Insert, AttackType::Substitute],
            variants: vec![MethodVariant::TwoStage],
            include_asm_surrogate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub attack: AttackConfig,
    pub asm: AsmConfig,
    pub endpoints: Vec<EndpointSection>,
    pub experiment: ExperimentSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn vocab(&self) -> Result<crate::model::Vocab> {
        crate::model::Vocab::new(self.corpus.vocab.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_hyperparameters() {
        let cfg = Config::default();
        assert_eq!(cfg.attack.delta, 0.06);
        assert_eq!(cfg.attack.iters, 50);
        assert_eq!(cfg.attack.mu, 0.5);
        assert_eq!(cfg.asm.lambda_asm, 0.01);
        assert_eq!(cfg.asm.n_probes, 4);
        assert_eq!(cfg.asm.fd_epsilon, 1e-3);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = Config::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        cfg.save(&path).unwrap();
        let back = Config::load(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let json = r#"{"attack": {"iters": 10}}"#;
        let cfg: Config = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.attack.iters, 10);
        assert_eq!(cfg.attack.delta, 0.06);
        assert_eq!(cfg.corpus.n_train, 100);
    }

    #[test]
    fn stub_endpoint_builds() {
        let section = EndpointSection {
            name: "stub".into(),
            kind: EndpointKind::Stub,
            weights_path: None,
            base_url: None,
            credential_env: None,
            rate_limit_rps: 5.0,
            retry: RetryPolicy::default(),
            stub_transcripts: vec!["arc bay".into()],
        };
        let t = section.build(Path::new(".")).unwrap();
        let w = crate::audio::Waveform::silence(600);
        let out = t.transcribe(&w).unwrap();
        assert_eq!(out.transcript, Transcript::parse("arc bay"));
    }
}
