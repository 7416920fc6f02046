use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How context from several modalities is combined into one latent prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// One inference network on the aggregated encoding.
    BaselineSum,
    /// One expert network per modality, combined by a product of Gaussians.
    Poe,
    /// One shared expert network selected by a modality mask.
    Apoe,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::BaselineSum, FusionMode::Poe, FusionMode::Apoe];
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::BaselineSum => "baseline",
            FusionMode::Poe => "poe",
            FusionMode::Apoe => "apoe",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "baseline_sum" | "sum" => Ok(FusionMode::BaselineSum),
            "poe" => Ok(FusionMode::Poe),
            "apoe" => Ok(FusionMode::Apoe),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

/// When the standard normal joins a product of experts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UniversalExpert {
    Never,
    /// Only as a fallback when no modality takes part.
    WhenEmpty,
    Always,
}

impl fmt::Display for UniversalExpert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UniversalExpert::Never => "never",
            UniversalExpert::WhenEmpty => "when_empty",
            UniversalExpert::Always => "always",
        })
    }
}

impl FromStr for UniversalExpert {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "never" | "off" | "false" => Ok(UniversalExpert::Never),
            "when_empty" => Ok(UniversalExpert::WhenEmpty),
            "always" | "on" | "true" => Ok(UniversalExpert::Always),
            _ => Err(Error::Config(format!("unknown universal expert setting {s:?}"))),
        }
    }
}

/// Baseline aggregation across modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Sum,
    Mean,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Sum => "sum",
            Aggregate::Mean => "mean",
        })
    }
}

impl FromStr for Aggregate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregate::Sum),
            "mean" => Ok(Aggregate::Mean),
            _ => Err(Error::Config(format!("unknown aggregate {s:?}"))),
        }
    }
}

/// Flat `key=value` access, shared by config files and checkpoint headers.
pub trait KeyValues {
    /// Sets `key`; returns `Ok(false)` when the key is not one of ours.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
    fn entries(&self) -> Vec<(&'static str, String)>;
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub r_dim: usize,
    pub latent_dim: usize,
    pub draw_steps: usize,
    /// Width of encoder and renderer hidden layers.
    pub hidden: usize,
    /// Width of the recurrent expert state.
    pub cell_width: usize,
    pub fusion: FusionMode,
    pub sigma_image: f64,
    pub sigma_haptic: f64,
    pub universal_expert: UniversalExpert,
    pub aggregate: Aggregate,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            r_dim: 64,
            latent_dim: 16,
            draw_steps: 4,
            hidden: 128,
            cell_width: 256,
            fusion: FusionMode::Apoe,
            sigma_image: 0.1,
            sigma_haptic: 0.1,
            universal_expert: UniversalExpert::WhenEmpty,
            aggregate: Aggregate::Sum,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_dim == 0 || self.latent_dim == 0 || self.hidden == 0 || self.cell_width == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.draw_steps == 0 {
            return Err(Error::Config("draw_steps must be at least 1".into()));
        }
        if !(self.sigma_image > 0.0 && self.sigma_haptic > 0.0) {
            return Err(Error::Config("observation sigma must be positive".into()));
        }
        Ok(())
    }

    /// A small configuration for gradient checks and fast tests.
    pub fn tiny(fusion: FusionMode) -> Self {
        Self { r_dim: 8, latent_dim: 4, draw_steps: 2, hidden: 8, cell_width: 8, fusion, ..Self::default() }
    }
}

impl KeyValues for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "r_dim" => self.r_dim = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "draw_steps" => self.draw_steps = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "cell_width" => self.cell_width = parse(key, value)?,
            "fusion_mode" => self.fusion = value.trim().parse()?,
            "sigma_image" => self.sigma_image = parse(key, value)?,
            "sigma_haptic" => self.sigma_haptic = parse(key, value)?,
            "universal_expert" => self.universal_expert = value.trim().parse()?,
            "aggregate" => self.aggregate = value.trim().parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("r_dim", self.r_dim.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("draw_steps", self.draw_steps.to_string()),
            ("hidden", self.hidden.to_string()),
            ("cell_width", self.cell_width.to_string()),
            ("fusion_mode", self.fusion.to_string()),
            ("sigma_image", self.sigma_image.to_string()),
            ("sigma_haptic", self.sigma_haptic.to_string()),
            ("universal_expert", self.universal_expert.to_string()),
            ("aggregate", self.aggregate.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut a = ModelConfig { fusion: FusionMode::Poe, sigma_image: 0.25, ..Default::default() };
        a.aggregate = Aggregate::Mean;
        let mut b = ModelConfig::default();
        for (k, v) in a.entries() {
            assert!(b.set(k, &v).unwrap());
        }
        assert_eq!(a, b);
        assert!(!b.set("nope", "1").unwrap());
        assert!(b.set("r_dim", "x").is_err());
    }
}
