//! Run configuration: defaults, overlaid by a JSON file, overlaid by flags.

use std::fs;
use std::path::{Path, PathBuf};

use gdaflow::cnf::{FlowConfig, DEFAULT_GAMMA, DEFAULT_PENALTY_POINTS};
use gdaflow::interpolate::GdaConfig;
use gdaflow::rng::SeedTree;
use gdaflow::selftrain::DEFAULT_ALPHA_GRID;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    /// Sequence manifest; defaults to `<out-dir>/manifest.json`.
    pub data: Option<PathBuf>,
    /// Flow checkpoint; defaults to `<out-dir>/flow.ckpt`.
    pub flow_checkpoint: Option<PathBuf>,
    pub gamma: f64,
    pub penalty_points: usize,
    /// Its `seed` field is ignored; the trainer seed is derived from `seed`.
    pub flow: FlowConfig,
    pub gda: GdaConfig,
    /// Fixed α for `ours`; when absent α is selected over `alpha_grid`.
    pub alpha: Option<f64>,
    pub alpha_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            flow_checkpoint: None,
            gamma: DEFAULT_GAMMA,
            penalty_points: DEFAULT_PENALTY_POINTS,
            flow: FlowConfig::default(),
            gda: GdaConfig::default(),
            alpha: None,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Defaults when `path` is absent.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(CliError::Usage(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.penalty_points < 2 {
            return Err(CliError::Usage(format!("penalty_points must be >= 2, got {}", self.penalty_points)));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) {
                return Err(CliError::Usage(format!("alpha must be positive, got {a}")));
            }
        }
        if self.alpha_grid.is_empty() {
            return Err(CliError::Usage("alpha grid is empty".into()));
        }
        self.gda.classifier.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        for p in [&self.data, &self.flow_checkpoint].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Usage(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn root(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    /// Flow settings with the derived trainer seed.
    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            seed: self.root().child("flow").seed(),
            ..self.flow.clone()
        }
    }

    pub fn data_path(&self, out_dir: &Path) -> PathBuf {
        self.data.clone().unwrap_or_else(|| out_dir.join("manifest.json"))
    }

    pub fn flow_path(&self, out_dir: &Path) -> PathBuf {
        self.flow_checkpoint.clone().unwrap_or_else(|| out_dir.join("flow.ckpt"))
    }

    /// SHA-256 of the canonical JSON form, first 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "gda": {"n_generate": 50}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.gda.n_generate, Some(50));
        assert_eq!(cfg.gamma, DEFAULT_GAMMA);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig { gamma: -1.0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { penalty_points: 1, ..RunConfig::default() }.validate().is_err());
        let missing = RunConfig {
            data: Some(PathBuf::from("/definitely/not/here.json")),
            ..RunConfig::default()
        };
        assert!(missing.validate().is_err());
    }
}
