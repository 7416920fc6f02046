use rayon::prelude::*;

use super::checkpoint::{config_text, Checkpoint, TrainState};
use super::config::{parse, KeyValues};
use super::episode::{random_subset, Episode};
use super::gmn::Gmn;
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::scene::SceneRecord;
use crate::tensor::{adam_step, AdamConfig, AdamState, SeededRng};

// stream tags for the per-purpose random streams
const ORDER: u64 = 1;
const EPISODE: u64 = 2;
const SUBSET: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub epochs: usize,
    /// Scenes per update; 0 picks 14 for two modalities and 24 otherwise.
    pub batch: usize,
    /// Starting KL weight, raised linearly to 1 over the first epoch.
    pub beta_start: f64,
    pub seed: u64,
    pub context_min: usize,
    pub context_max: usize,
    /// Observation pairs per modality and scene.
    pub observations: usize,
    /// Modalities per training scene; 0 uses all of them.
    pub subset_size: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            clip_lo: -0.25,
            clip_hi: 0.25,
            epochs: 10,
            batch: 0,
            beta_start: 0.1,
            seed: 0,
            context_min: 0,
            context_max: 15,
            observations: 2,
            subset_size: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::Config("clip_lo must be below clip_hi".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= 1.0) {
            return Err(Error::Config("beta_start must lie in (0, 1]".into()));
        }
        if self.context_min > self.context_max {
            return Err(Error::Config("context_min exceeds context_max".into()));
        }
        if self.observations == 0 {
            return Err(Error::Config("observations must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, clip: Some((self.clip_lo, self.clip_hi)), ..AdamConfig::default() }
    }

    pub fn batch_for(&self, modalities: usize) -> usize {
        match self.batch {
            0 if modalities == 2 => 14,
            0 => 24,
            b => b,
        }
    }
}

impl KeyValues for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "clip_lo" => self.clip_lo = parse(key, value)?,
            "clip_hi" => self.clip_hi = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "beta_start" => self.beta_start = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "context_min" => self.context_min = parse(key, value)?,
            "context_max" => self.context_max = parse(key, value)?,
            "observations" => self.observations = parse(key, value)?,
            "subset_size" => self.subset_size = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("clip_lo", self.clip_lo.to_string()),
            ("clip_hi", self.clip_hi.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("seed", self.seed.to_string()),
            ("context_min", self.context_min.to_string()),
            ("context_max", self.context_max.to_string()),
            ("observations", self.observations.to_string()),
            ("subset_size", self.subset_size.to_string()),
            ("workers", self.workers.to_string()),
        ]
    }
}

/// KL weight at `step` of `steps` in `epoch` (0-based).
pub fn beta_at(epoch: usize, step: usize, steps: usize, start: f64) -> f64 {
    if epoch > 0 || steps == 0 {
        return 1.0;
    }
    start + (1.0 - start) * step as f64 / steps as f64
}

/// Modalities scene `index` exposes during training: all of them, or a
/// seeded subset of `size` that is the same for every fusion mode.
pub fn scene_subset(seed: u64, index: usize, count: usize, size: usize) -> Vec<usize> {
    if size == 0 || size >= count {
        return (0..count).collect();
    }
    random_subset(count, size, &mut SeededRng::for_keys(seed, &[SUBSET, index as u64]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Minibatch Adam over per-scene tapes with an ordered gradient reduction,
/// so results do not depend on the worker count.
pub struct Trainer {
    pub config: TrainConfig,
    pub store: ParameterStore<f32>,
    pub adam: AdamState<f32>,
    pub epochs_done: usize,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pool: rayon::ThreadPool,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

impl Trainer {
    pub fn new(store: ParameterStore<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&store.tensors);
        Ok(Self {
            pool: pool(config.workers)?,
            config,
            store,
            adam,
            epochs_done: 0,
            step_losses: Vec::new(),
            epoch_losses: Vec::new(),
        })
    }

    /// Continues from a checkpoint that carries trainer state.
    pub fn resume(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ts = ck.train.ok_or_else(|| Error::Data("checkpoint has no trainer state".into()))?;
        Ok(Self {
            pool: pool(config.workers)?,
            config,
            store: ck.store,
            adam: ts.adam,
            epochs_done: ts.epochs_done,
            step_losses: ts.step_losses,
            epoch_losses: ts.epoch_losses,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            store: self.store.clone(),
            train: Some(TrainState {
                train_config: config_text(&self.config.entries()),
                epochs_done: self.epochs_done,
                adam: self.adam.clone(),
                step_losses: self.step_losses.clone(),
                epoch_losses: self.epoch_losses.clone(),
            }),
        }
    }

    pub fn report(&self) -> TrainReport {
        TrainReport { step_losses: self.step_losses.clone(), epoch_losses: self.epoch_losses.clone() }
    }

    fn check_scenes(&self, scenes: &[SceneRecord]) -> Result<()> {
        if scenes.is_empty() {
            return Err(Error::Data("no training scenes".into()));
        }
        let n = self.store.table.len();
        if let Some(i) = scenes.iter().position(|s| s.pairs.len() != n) {
            return Err(Error::Data(format!("scene {i} has {} modalities, model expects {n}", scenes[i].pairs.len())));
        }
        Ok(())
    }

    /// Loss and parameter gradients for one scene.
    fn scene_grad(&self, scene: &SceneRecord, index: usize, epoch: usize, beta: f64) -> Result<(f64, Vec<Option<Vec<f32>>>)> {
        let cfg = &self.config;
        let mods = scene_subset(cfg.seed, index, self.store.table.len(), cfg.subset_size);
        let mut rng = SeededRng::for_keys(cfg.seed, &[EPISODE, epoch as u64, index as u64]);
        let ep = Episode::sample(scene, &mods, cfg.context_min..=cfg.context_max, cfg.observations, &mut rng)?;
        let g = Gmn::new(&self.store);
        let mut tape = g.tape();
        let numeric = |e: Error| Error::Numeric(format!("scene {index}: {e}"));
        let terms = g.elbo(&mut tape, &ep, beta, &mut rng).map_err(numeric)?;
        let loss = tape.scalar(terms.loss) as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("scene {index}: loss {loss}")));
        }
        tape.backward(terms.loss).map_err(numeric)?;
        Ok((loss, tape.take_param_grads()))
    }

    /// One pass over `scenes`; returns the epoch-mean per-scene loss.
    pub fn train_epoch(&mut self, scenes: &[SceneRecord]) -> Result<f64> {
        self.check_scenes(scenes)?;
        let epoch = self.epochs_done;
        let batch = self.config.batch_for(self.store.table.len()).max(1);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        SeededRng::for_keys(self.config.seed, &[ORDER, epoch as u64]).shuffle(&mut order);
        let steps = order.len().div_ceil(batch);
        let adam_cfg = self.config.adam();
        let mut epoch_sum = 0.0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let beta = beta_at(epoch, step, steps, self.config.beta_start);
            let this = &*self;
            let results: Vec<Result<(f64, Vec<Option<Vec<f32>>>)>> = self.pool.install(|| {
                chunk.par_iter().map(|&i| this.scene_grad(&scenes[i], i, epoch, beta)).collect()
            });
            let scale = 1.0 / chunk.len() as f32;
            let mut grads: Vec<Vec<f32>> = self.store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                for (acc, g) in grads.iter_mut().zip(g) {
                    if let Some(g) = g {
                        for (a, x) in acc.iter_mut().zip(g) {
                            *a += x * scale;
                        }
                    }
                }
            }
            adam_step(&mut self.store.tensors, &grads, &mut self.adam, &adam_cfg)?;
            let mean = batch_loss / chunk.len() as f64;
            self.step_losses.push(mean);
            epoch_sum += batch_loss;
        }
        let epoch_mean = epoch_sum / scenes.len() as f64;
        self.epoch_losses.push(epoch_mean);
        self.epochs_done += 1;
        Ok(epoch_mean)
    }

    /// Trains until `config.epochs` epochs are done, calling `after_epoch` after each.
    pub fn run(
        &mut self,
        scenes: &[SceneRecord],
        mut after_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<TrainReport> {
        while self.epochs_done < self.config.epochs {
            self.train_epoch(scenes)?;
            after_epoch(self)?;
        }
        Ok(self.report())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_schedule() {
        assert_eq!(beta_at(0, 0, 10, 0.1), 0.1);
        assert!((beta_at(0, 5, 10, 0.1) - 0.55).abs() < 1e-12);
        assert_eq!(beta_at(1, 0, 10, 0.1), 1.0);
    }

    #[test]
    fn subsets_are_seeded() {
        let a = scene_subset(3, 7, 5, 2);
        assert_eq!(a.len(), 2);
        assert_eq!(a, scene_subset(3, 7, 5, 2));
        assert_eq!(scene_subset(3, 7, 5, 0), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn config_round_trip() {
        let a = TrainConfig { lr: 3e-4, epochs: 2, subset_size: 2, ..Default::default() };
        let mut b = TrainConfig::default();
        for (k, v) in a.entries() {
            assert!(b.set(k, &v).unwrap());
        }
        assert_eq!(a, b);
    }
}
