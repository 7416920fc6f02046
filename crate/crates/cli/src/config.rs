use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gmn::eval::EvalConfig;
use gmn::model::{FusionMode, KeyValues, ModelConfig, TrainConfig};
use gmn::scene::GenParams;
use gmn::{Error, Result};

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Dataset recipe and split sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub params: GenParams,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { params: GenParams::default(), train_scenes: 2000, val_scenes: 200, test_scenes: 100, seed: 0 }
    }
}

impl KeyValues for GenConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let p = &mut self.params;
        match key {
            "modalities" => p.modalities = parse(key, value)?,
            "height" => p.height = parse(key, value)?,
            "width" => p.width = parse(key, value)?,
            "parts" => p.parts = parse_list(key, value)?,
            "min_pairs" => p.min_pairs = parse(key, value)?,
            "max_pairs" => p.max_pairs = parse(key, value)?,
            "train_scenes" => self.train_scenes = parse(key, value)?,
            "val_scenes" => self.val_scenes = parse(key, value)?,
            "test_scenes" => self.test_scenes = parse(key, value)?,
            "gen_seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.params;
        vec![
            ("modalities", p.modalities.to_string()),
            ("height", p.height.to_string()),
            ("width", p.width.to_string()),
            ("parts", join(&p.parts)),
            ("min_pairs", p.min_pairs.to_string()),
            ("max_pairs", p.max_pairs.to_string()),
            ("train_scenes", self.train_scenes.to_string()),
            ("val_scenes", self.val_scenes.to_string()),
            ("test_scenes", self.test_scenes.to_string()),
            ("gen_seed", self.seed.to_string()),
        ]
    }
}

/// Paths and protocol knobs that belong to the command line rather than a module.
#[derive(Clone, Debug, PartialEq)]
pub struct RunKeys {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint for `eval`; empty picks the newest one under `out_dir`.
    pub checkpoint: String,
    /// Checkpoint to continue training from; empty starts fresh.
    pub resume: String,
    pub fusion_modes: Vec<FusionMode>,
    pub missing_subset: usize,
    pub train_eval_scenes: usize,
    pub scaling_modalities: Vec<usize>,
    pub scaling_warmup: usize,
    pub scaling_iterations: usize,
    pub dump_context: usize,
    pub dump_targets: usize,
}

impl Default for RunKeys {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "run".into(),
            checkpoint: String::new(),
            resume: String::new(),
            fusion_modes: vec![FusionMode::Apoe, FusionMode::BaselineSum],
            missing_subset: 2,
            train_eval_scenes: 200,
            scaling_modalities: vec![2, 5, 8, 14],
            scaling_warmup: 2,
            scaling_iterations: 10,
            dump_context: 15,
            dump_targets: 4,
        }
    }
}

impl KeyValues for RunKeys {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "data_dir" => self.data_dir = value.trim().into(),
            "out_dir" => self.out_dir = value.trim().into(),
            "checkpoint" => self.checkpoint = value.trim().into(),
            "resume" => self.resume = value.trim().into(),
            "fusion_modes" => self.fusion_modes = parse_list(key, value)?,
            "missing_subset" => self.missing_subset = parse(key, value)?,
            "train_eval_scenes" => self.train_eval_scenes = parse(key, value)?,
            "scaling_modalities" => self.scaling_modalities = parse_list(key, value)?,
            "scaling_warmup" => self.scaling_warmup = parse(key, value)?,
            "scaling_iterations" => self.scaling_iterations = parse(key, value)?,
            "dump_context" => self.dump_context = parse(key, value)?,
            "dump_targets" => self.dump_targets = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint", self.checkpoint.clone()),
            ("resume", self.resume.clone()),
            ("fusion_modes", join(&self.fusion_modes)),
            ("missing_subset", self.missing_subset.to_string()),
            ("train_eval_scenes", self.train_eval_scenes.to_string()),
            ("scaling_modalities", join(&self.scaling_modalities)),
            ("scaling_warmup", self.scaling_warmup.to_string()),
            ("scaling_iterations", self.scaling_iterations.to_string()),
            ("dump_context", self.dump_context.to_string()),
            ("dump_targets", self.dump_targets.to_string()),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub run: RunKeys,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Every key with its current value, grouped by owner.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = self.run.entries();
        e.extend(self.gen.entries());
        e.extend(self.model.entries());
        e.extend(self.train.entries());
        e.extend(self.eval.entries());
        e
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|e| e.0).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = self.run.set(key, value)?
            || self.gen.set(key, value)?
            || self.model.set(key, value)?
            || self.train.set(key, value)?
            || self.eval.set(key, value)?;
        if known {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key {key:?}")))
        }
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.gen.params.table()?;
        Ok(())
    }

    pub fn echo(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
