//! Evaluation protocols over trained models.

mod classify;
mod curve;
mod dump;
mod iwae;
mod missing;
mod scaling;

use std::fs;
use std::path::Path;

pub use classify::{classification_trials, classify, ClassifySpec, ClassifyTrial};
pub use curve::{crossmodal_curve, CurvePoint, CurveSpec};
pub use dump::{crossmodal_dump, quantile, DumpReport, DumpSpec};
pub use iwae::{iwae_loglik, log_mean_exp, log_weights, scored_dims, TargetView};
pub use missing::{eval_loss, missing_modality_protocol, MatrixRow, MissingSpec, Split};
pub use scaling::{scaling_report, ScalingRow, ScalingSpec};

use crate::error::{Error, Result};
use crate::model::config_parse;
use crate::model::KeyValues;
use crate::scene::{ModalityTable, SceneRecord};
use crate::tensor::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Latent samples per importance-weighted estimate.
    pub samples: usize,
    pub sweep_max: usize,
    /// Comma-separated modality names.
    pub source: String,
    pub target: String,
    /// Target-modality context pairs held fixed along a curve.
    pub target_context: usize,
    pub observations: usize,
    pub scenes: usize,
    pub seed: u64,
    pub candidates: usize,
    pub trials: usize,
    pub classify_context: usize,
    pub dump_samples: usize,
    pub dump_scene: usize,
    pub bootstrap: usize,
    pub gray: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            sweep_max: 15,
            source: "haptic".into(),
            target: "image".into(),
            target_context: 0,
            observations: 2,
            scenes: 100,
            seed: 0,
            candidates: 10,
            trials: 100,
            classify_context: 10,
            dump_samples: 20,
            dump_scene: 0,
            bootstrap: 1000,
            gray: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.observations == 0 || self.scenes == 0 || self.candidates == 0 || self.trials == 0 {
            return Err(Error::Config("observations, scenes, candidates and trials must be positive".into()));
        }
        Ok(())
    }

    pub fn view(&self) -> TargetView {
        if self.gray {
            TargetView::Gray
        } else {
            TargetView::Native
        }
    }
}

impl KeyValues for EvalConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "samples" => self.samples = config_parse(key, value)?,
            "sweep_max" => self.sweep_max = config_parse(key, value)?,
            "source" => self.source = value.trim().to_string(),
            "target" => self.target = value.trim().to_string(),
            "target_context" => self.target_context = config_parse(key, value)?,
            "eval_observations" => self.observations = config_parse(key, value)?,
            "scenes" => self.scenes = config_parse(key, value)?,
            "eval_seed" => self.seed = config_parse(key, value)?,
            "candidates" => self.candidates = config_parse(key, value)?,
            "trials" => self.trials = config_parse(key, value)?,
            "classify_context" => self.classify_context = config_parse(key, value)?,
            "dump_samples" => self.dump_samples = config_parse(key, value)?,
            "dump_scene" => self.dump_scene = config_parse(key, value)?,
            "bootstrap" => self.bootstrap = config_parse(key, value)?,
            "gray" => self.gray = config_parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("samples", self.samples.to_string()),
            ("sweep_max", self.sweep_max.to_string()),
            ("source", self.source.clone()),
            ("target", self.target.clone()),
            ("target_context", self.target_context.to_string()),
            ("eval_observations", self.observations.to_string()),
            ("scenes", self.scenes.to_string()),
            ("eval_seed", self.seed.to_string()),
            ("candidates", self.candidates.to_string()),
            ("trials", self.trials.to_string()),
            ("classify_context", self.classify_context.to_string()),
            ("dump_samples", self.dump_samples.to_string()),
            ("dump_scene", self.dump_scene.to_string()),
            ("bootstrap", self.bootstrap.to_string()),
            ("gray", self.gray.to_string()),
        ]
    }
}

/// Resolves comma-separated modality names (or `all`) against `table`.
pub fn resolve_modalities(table: &ModalityTable, names: &str) -> Result<Vec<usize>> {
    if names.trim() == "all" {
        return Ok((0..table.len()).collect());
    }
    let mut out = Vec::new();
    for n in names.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let i = table.index_of(n).ok_or_else(|| Error::Config(format!("unknown modality {n:?}")))?;
        if !out.contains(&i) {
            out.push(i);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no modalities in {names:?}")));
    }
    out.sort_unstable();
    Ok(out)
}

/// Content hash of a scene, so per-scene randomness follows the scene rather
/// than its position in a list.
pub fn scene_key(scene: &SceneRecord) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for b in &scene.object.blocks {
        b.iter().for_each(|v| eat(*v as u8));
    }
    for c in scene.object.colors.iter().flatten() {
        c.to_le_bytes().into_iter().for_each(&mut eat);
    }
    for pool in &scene.pairs {
        if let Some(p) = pool.first() {
            p.query.iter().flat_map(|v| v.to_le_bytes()).for_each(&mut eat);
        }
    }
    h
}

/// Standard error of the mean by resampling `values` with replacement.
pub fn bootstrap_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = SeededRng::for_keys(seed, &[0xb007]);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.below(n)]).sum::<f64>() / n as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Writes a header line and comma-joined rows.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_matches_analytic_se() {
        let mut rng = SeededRng::new(3);
        let v: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
        let sd = (v.iter().map(|x| (x - mean(&v)).powi(2)).sum::<f64>() / 399.0).sqrt();
        let se = bootstrap_se(&v, 1000, 1);
        assert!((se / (sd / 20.0) - 1.0).abs() < 0.1, "{se}");
    }

    #[test]
    fn modality_names_resolve() {
        let t = ModalityTable::for_config(5, 4, 4).unwrap();
        assert_eq!(resolve_modalities(&t, "haptic, upper_left_rgb").unwrap(), vec![0, 4]);
        assert_eq!(resolve_modalities(&t, "all").unwrap().len(), 5);
        assert!(resolve_modalities(&t, "image").is_err());
    }
}
