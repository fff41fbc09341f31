use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{PropagationConfig, PropagationVariant};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    #[default]
    Off,
    Balanced,
}

impl FromStr for ClassWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "balanced" => Ok(Self::Balanced),
            other => Err(Error::Config(format!("unknown class weighting `{other}`"))),
        }
    }
}

/// What feeds the averaging slot ahead of propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// `(l_spe + l_com) / 2`
    #[default]
    Both,
    /// `l_com` in both slots.
    SharedOnly,
    /// `l_spe` in both slots.
    SpecificOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationChoice {
    #[default]
    Adaptive,
    GcnStyle,
    GatStyle,
    /// Skip propagation: the classifier sees the averaged latents directly.
    None,
}

impl PropagationChoice {
    pub fn variant(self) -> Option<PropagationVariant> {
        match self {
            Self::Adaptive => Some(PropagationVariant::Adaptive),
            Self::GcnStyle => Some(PropagationVariant::GcnStyle),
            Self::GatStyle => Some(PropagationVariant::GatStyle),
            Self::None => None,
        }
    }
}

fn default_lambda() -> f64 {
    0.2
}
fn default_lr() -> f64 {
    1e-3
}
fn default_patience() -> usize {
    300
}
fn default_max_epochs() -> usize {
    2000
}
fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    64
}
fn default_mu() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// Every training hyperparameter. `seed` has no default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Propagation depth L.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Latent width h.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Gradient reversal coefficient.
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub seed: u64,
    /// `false` drops the domain loss (the no-dd ablation).
    #[serde(default = "default_true")]
    pub domain_loss: bool,
    #[serde(default)]
    pub propagation: PropagationChoice,
    #[serde(default)]
    pub features: FeatureMode,
    #[serde(default)]
    pub class_weighting: ClassWeighting,
    #[serde(default)]
    pub recompute_edge_weights: bool,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            lambda: default_lambda(),
            lr: default_lr(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            layers: default_layers(),
            hidden: default_hidden(),
            mu: default_mu(),
            seed,
            domain_loss: true,
            propagation: PropagationChoice::default(),
            features: FeatureMode::default(),
            class_weighting: ClassWeighting::default(),
            recompute_edge_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.patience == 0 {
            return bad("patience must be ≥ 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be ≥ 1".into());
        }
        if self.layers == 0 {
            return bad("layers must be ≥ 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be ≥ 1".into());
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return bad(format!("mu must be > 0, got {}", self.mu));
        }
        Ok(())
    }

    pub fn propagation_config(&self) -> Option<PropagationConfig> {
        self.propagation.variant().map(|variant| PropagationConfig {
            layers: self.layers,
            variant,
            recompute_per_layer: self.recompute_edge_weights,
        })
    }
}

/// Named model variants compared in ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    Full,
    NoDd,
    NoAp,
    GcnStyle,
    GatStyle,
    SharedOnly,
    SpecificOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::Full,
        AblationMode::NoDd,
        AblationMode::NoAp,
        AblationMode::GcnStyle,
        AblationMode::GatStyle,
        AblationMode::SharedOnly,
        AblationMode::SpecificOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoDd => "no-dd",
            AblationMode::NoAp => "no-ap",
            AblationMode::GcnStyle => "gcn-style",
            AblationMode::GatStyle => "gat-style",
            AblationMode::SharedOnly => "shared-only",
            AblationMode::SpecificOnly => "specific-only",
        }
    }

    /// `base` with this mode's switch flipped; everything else untouched.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            AblationMode::Full => {}
            AblationMode::NoDd => c.domain_loss = false,
            AblationMode::NoAp => c.propagation = PropagationChoice::None,
            AblationMode::GcnStyle => c.propagation = PropagationChoice::GcnStyle,
            AblationMode::GatStyle => c.propagation = PropagationChoice::GatStyle,
            AblationMode::SharedOnly => c.features = FeatureMode::SharedOnly,
            AblationMode::SpecificOnly => c.features = FeatureMode::SpecificOnly,
        }
        c
    }

    pub fn parse_list(s: &str) -> Result<Vec<AblationMode>> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}`")))
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_defaults_and_required_seed() {
        let c: TrainConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(c, TrainConfig::with_seed(9));
        assert_eq!(
            (c.lambda, c.lr, c.patience, c.layers, c.hidden, c.mu),
            (0.2, 1e-3, 300, 2, 64, 1.0)
        );
        assert!(serde_json::from_str::<TrainConfig>("{}").is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"seed": 1, "lamda": 0.3}"#).is_err());
        let c: TrainConfig = serde_json::from_str(
            r#"{"seed": 1, "propagation": "gat-style", "class_weighting": "balanced"}"#,
        )
        .unwrap();
        assert_eq!(c.propagation, PropagationChoice::GatStyle);
        assert_eq!(c.class_weighting, ClassWeighting::Balanced);
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::with_seed(0);
        c.validate().unwrap();
        c.lambda = -0.1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::with_seed(0);
        c.patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_modes_round_trip() {
        let modes = AblationMode::parse_list("full,no-dd, no-ap").unwrap();
        assert_eq!(
            modes,
            vec![AblationMode::Full, AblationMode::NoDd, AblationMode::NoAp]
        );
        assert!(AblationMode::parse_list("full,bogus").is_err());
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
        }
        let base = TrainConfig::with_seed(3);
        assert!(!AblationMode::NoDd.apply(&base).domain_loss);
        assert_eq!(
            AblationMode::NoAp.apply(&base).propagation,
            PropagationChoice::None
        );
        assert_eq!(AblationMode::Full.apply(&base), base);
    }
}
