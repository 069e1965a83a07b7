use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::femcore::{Diffusion, Reaction};
use crate::msbasis::BasisConfig;
use crate::schemes::SolverSettings;
use crate::stability::CurvatureSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    ImplicitFine,
    ImplicitCem,
    ImplicitCemPlus,
    PartiallyExplicit,
    Explicit,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::ImplicitFine => "implicit-fine",
            SchemeKind::ImplicitCem => "implicit-cem",
            SchemeKind::ImplicitCemPlus => "implicit-cem-plus",
            SchemeKind::PartiallyExplicit => "partially-explicit",
            SchemeKind::Explicit => "explicit",
        }
    }

    pub fn parse(s: &str) -> Result<SchemeKind> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }

    pub fn needs_basis(self) -> bool {
        matches!(
            self,
            SchemeKind::ImplicitCem | SchemeKind::ImplicitCemPlus | SchemeKind::PartiallyExplicit
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub n_coarse: usize,
    pub refinement: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { n_coarse: 5, refinement: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub diffusion: Diffusion,
    pub reaction: Reaction,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            diffusion: Diffusion::Linear,
            reaction: Reaction::Cubic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Singular,
    Smooth,
    Zero,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub magnitude: f64,
    pub path: Option<PathBuf>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            kind: SourceKind::Singular,
            magnitude: 10.0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaKind {
    Generated,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KappaConfig {
    pub kind: KappaKind,
    pub contrast: f64,
    pub strikes: usize,
    pub seed: u64,
    pub min_length: usize,
    pub max_length: usize,
    pub path: Option<PathBuf>,
}

impl Default for KappaConfig {
    fn default() -> Self {
        KappaConfig {
            kind: KappaKind::Generated,
            contrast: 1e4,
            strikes: 8,
            seed: 7,
            min_length: 10,
            max_length: 40,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Zero,
    /// `amplitude sin(pi x) sin(pi y)`.
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub amplitude: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            kind: InitialKind::Zero,
            amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a snapshot every this many steps (0: final step only).
    pub snapshot_stride: usize,
    /// Directory of a previously exported basis to reuse.
    pub basis_dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            snapshot_stride: 0,
            basis_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub final_time: f64,
    pub steps: usize,
    pub mesh: MeshConfig,
    pub physics: PhysicsConfig,
    pub source: SourceConfig,
    pub kappa: KappaConfig,
    pub initial: InitialConfig,
    pub basis: BasisConfig,
    pub schemes: Vec<SchemeKind>,
    pub solver: SolverSettings,
    pub curvature: CurvatureSettings,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 0.8,
            final_time: 0.05,
            steps: 200,
            mesh: MeshConfig::default(),
            physics: PhysicsConfig::default(),
            source: SourceConfig::default(),
            kappa: KappaConfig::default(),
            initial: InitialConfig::default(),
            basis: BasisConfig::default(),
            schemes: vec![
                SchemeKind::ImplicitCem,
                SchemeKind::ImplicitCemPlus,
                SchemeKind::PartiallyExplicit,
            ],
            solver: SolverSettings::default(),
            curvature: CurvatureSettings::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Full-size setting: 10 x 10 coarse blocks of 10 x 10 cells, 4000 steps
    /// (8000 for the quadratic law), 20 strikes.
    pub fn paper_scale(mut self) -> ExperimentConfig {
        self.mesh = MeshConfig { n_coarse: 10, refinement: 10 };
        self.steps = if self.physics.diffusion == Diffusion::Quadratic { 8000 } else { 4000 };
        self.kappa.strikes = 20;
        self
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad(format!("final_time must be positive, got {}", self.final_time));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.mesh.n_coarse == 0 || self.mesh.refinement == 0 {
            return bad("mesh sizes must be positive".into());
        }
        if self.kappa.contrast < 1.0 {
            return bad(format!("contrast must be at least 1, got {}", self.kappa.contrast));
        }
        if self.kappa.min_length == 0 || self.kappa.min_length > self.kappa.max_length {
            return bad("strike lengths must satisfy 1 <= min_length <= max_length".into());
        }
        if self.kappa.kind == KappaKind::File && self.kappa.path.is_none() {
            return bad("kappa kind 'file' needs a path".into());
        }
        if self.source.kind == SourceKind::File && self.source.path.is_none() {
            return bad("source kind 'file' needs a path".into());
        }
        if self.solver.max_iter == 0 || !(self.solver.tol > 0.0) {
            return bad("solver needs max_iter >= 1 and tol > 0".into());
        }
        if self.curvature.range.0 >= self.curvature.range.1 || self.curvature.safety < 1.0 {
            return bad("curvature range must be increasing and safety at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!((c.dt() - 0.05 / 200.0).abs() < 1e-18);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"steps": 10, "physics": {"reaction": "rational"}, "schemes": ["explicit", "implicit-fine"]}"#,
        )
        .unwrap();
        assert_eq!(c.steps, 10);
        assert_eq!(c.physics.reaction, Reaction::Rational);
        assert_eq!(c.physics.diffusion, Diffusion::Linear);
        assert_eq!(c.schemes, vec![SchemeKind::Explicit, SchemeKind::ImplicitFine]);
    }

    #[test]
    fn rejects_invalid() {
        assert!(ExperimentConfig::from_json(r#"{"steps": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"alpha": 1.5}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"physics": {"reaction": "quartic"}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown_field": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kappa": {"kind": "file"}}"#).is_err());
    }

    #[test]
    fn paper_scale_steps() {
        let c = ExperimentConfig::default().paper_scale();
        assert_eq!((c.mesh.n_coarse, c.mesh.refinement, c.steps), (10, 10, 4000));
        let mut q = ExperimentConfig::default();
        q.physics.diffusion = Diffusion::Quadratic;
        assert_eq!(q.paper_scale().steps, 8000);
        assert_eq!(SchemeKind::parse("implicit-cem-plus").unwrap(), SchemeKind::ImplicitCemPlus);
        assert!(SchemeKind::parse("leapfrog").is_err());
    }
}
