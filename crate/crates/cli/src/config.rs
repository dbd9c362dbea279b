//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use schmidt_tns::lattice::{
    build_hamiltonian, build_zpaf, build_zpaf_fragment, load_lattice, Bipartition, Boundary, Hamiltonian, Lattice, ModelKind,
    ModelParams,
};
use schmidt_tns::optimizer::TrainConfig;
use schmidt_tns::schmidt::{Architecture, DEFAULT_INIT_NOISE};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_x: Option<f64>,
}

/// Exactly one of `file`, `sites` (a ZPAF fragment) or `cells` selects the
/// lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

fn default_boundary() -> Boundary {
    Boundary::Open
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    pub layers: usize,
    pub chi: usize,
    /// Overrides the default `min(χ, 2^m, 2^(R−m))` bond dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bond_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub infinite: bool,
    /// Standard deviation of the noise added to identity gates at
    /// initialization; `0` starts from exact identities.
    #[serde(default = "default_noise")]
    pub init_noise: f64,
}

fn default_noise() -> f64 {
    DEFAULT_INIT_NOISE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub model: ModelSection,
    pub lattice: LatticeSection,
    pub architecture: ArchitectureSection,
    #[serde(default)]
    pub optimizer: TrainConfig,
}

/// Everything a run needs, built from a validated config.
pub struct Problem {
    pub lattice: Lattice,
    pub bipartition: Bipartition,
    pub hamiltonian: Hamiltonian,
    pub architecture: Architecture,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // lattice files are resolved relative to the config
        if let (Some(file), Some(dir)) = (&cfg.lattice.file, path.parent()) {
            if file.is_relative() {
                cfg.lattice.file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn lattice(&self) -> Result<(Lattice, Bipartition), CliError> {
        let l = &self.lattice;
        let chosen = [l.cells.is_some(), l.sites.is_some(), l.file.is_some()].iter().filter(|&&x| x).count();
        if chosen != 1 {
            return Err(CliError::Config("lattice needs exactly one of `cells`, `sites`, `file`".into()));
        }
        let built = if let Some(cells) = l.cells {
            build_zpaf(cells, l.boundary)
        } else if let Some(n) = l.sites {
            build_zpaf_fragment(n)
        } else {
            let path = l.file.as_ref().expect("checked above");
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            load_lattice(&text)
        };
        built.map_err(CliError::config)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        self.optimizer.validate().map_err(CliError::config)?;
        let noise = self.architecture.init_noise;
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(CliError::Config("architecture.init_noise must be finite and non-negative".into()));
        }
        let (lattice, bipartition) = self.lattice()?;
        if lattice.is_infinite() != self.architecture.infinite {
            return Err(CliError::Config("architecture.infinite must match an infinite lattice boundary".into()));
        }
        let hamiltonian =
            build_hamiltonian(&lattice, self.model.kind, ModelParams { h_x: self.model.h_x }).map_err(CliError::config)?;
        let a = &self.architecture;
        let mut architecture = if a.infinite {
            Architecture::translational(&lattice, &bipartition, a.layers, a.chi)
        } else {
            Architecture::brick_wall(&lattice, &bipartition, a.layers, a.chi)
        }
        .map_err(CliError::config)?;
        if let Some(dims) = &a.bond_dims {
            architecture.bond_dims = dims.clone();
            architecture.validate().map_err(CliError::config)?;
        }
        Ok(Problem {
            lattice,
            bipartition,
            hamiltonian,
            architecture,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3
[model]
kind = "tim"
h_x = 0.2
[lattice]
cells = 1
[architecture]
layers = 2
chi = 4
[optimizer]
eta = 0.1
"#;

    #[test]
    fn parses_and_builds() {
        let c = RunConfig::parse(BASIC).unwrap();
        assert_eq!(c.optimizer.eta, 0.1);
        assert_eq!(c.optimizer.max_steps, TrainConfig::default().max_steps);
        let p = c.problem().unwrap();
        assert_eq!(p.lattice.n_sites, 9);
        assert_eq!(p.architecture.r, 4);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse(&format!("{BASIC}\nextra = 1\n")).is_err());
        assert!(RunConfig::parse(&BASIC.replace("eta = 0.1", "etta = 0.1")).is_err());
        let c = RunConfig::parse(&BASIC.replace("eta = 0.1", "eta = -1.0")).unwrap();
        assert!(c.problem().is_err());
        let c = RunConfig::parse(&BASIC.replace("cells = 1", "cells = 1\nsites = 9")).unwrap();
        assert!(c.problem().is_err());
        let c = RunConfig::parse(&BASIC.replace("h_x = 0.2", "")).unwrap();
        assert!(c.problem().is_err());
    }

    #[test]
    fn hash_depends_on_content_only() {
        let a = RunConfig::parse(BASIC).unwrap();
        let b = RunConfig::parse(&BASIC.replace("seed = 3", "seed = 3 # same")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse(&BASIC.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
