use std::fmt;

use rayon::prelude::*;

use super::mean;
use crate::error::{Error, Result};
use crate::model::{scene_subset, Episode, FusionMode, Gmn, ModelConfig, ParameterStore, TrainConfig, Trainer};
use crate::scene::{ModalityTable, SceneRecord};
use crate::tensor::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    ValMissing,
    ValFull,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::ValMissing => "val_missing",
            Split::ValFull => "val_full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingSpec {
    /// Modalities per training and `val_missing` scene.
    pub subset_size: usize,
    pub modes: Vec<FusionMode>,
    /// Training scenes re-scored for the `train` split.
    pub train_eval_scenes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixRow {
    pub epoch: usize,
    pub split: Split,
    pub mode: FusionMode,
    pub loss: f64,
}

/// Mean single-sample negative ELBO (β = 1) per observed sense dimension.
/// Scene `i` uses modalities `subset(i)` and a seeded episode.
pub fn eval_loss(
    store: &ParameterStore<f32>,
    scenes: &[SceneRecord],
    subset: &(dyn Fn(usize) -> Vec<usize> + Sync),
    train: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let g = Gmn::new(store);
    let losses = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = SeededRng::for_keys(seed, &[0xe1, i as u64]);
            let ep = Episode::sample(s, &subset(i), train.context_min..=train.context_max, train.observations, &mut rng)?;
            let mut tape = g.tape();
            let t = g.elbo(&mut tape, &ep, 1.0, &mut rng)?;
            Ok(tape.scalar(t.loss) as f64 / t.observed_dims as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&losses))
}

/// Trains each fusion mode on scenes restricted to `subset_size` modalities
/// and scores, after every epoch, training scenes, validation scenes with the
/// same restriction and validation scenes with every modality present.
pub fn missing_modality_protocol(
    model: &ModelConfig,
    table: &ModalityTable,
    train: &TrainConfig,
    train_scenes: &[SceneRecord],
    val_scenes: &[SceneRecord],
    spec: &MissingSpec,
    mut on_row: impl FnMut(&MatrixRow) -> Result<()>,
) -> Result<Vec<MatrixRow>> {
    let count = table.len();
    if spec.subset_size == 0 || spec.subset_size > count {
        return Err(Error::Config(format!("subset size {} with {count} modalities", spec.subset_size)));
    }
    if train_scenes.is_empty() || val_scenes.is_empty() {
        return Err(Error::Data("missing-modality runs need training and validation scenes".into()));
    }
    let mut rows = Vec::new();
    for &mode in &spec.modes {
        let cfg = ModelConfig { fusion: mode, ..model.clone() };
        let store = ParameterStore::init(&cfg, table, train.seed)?;
        let tc = TrainConfig { subset_size: spec.subset_size, ..train.clone() };
        let mut trainer = Trainer::new(store, tc.clone())?;
        let k = spec.subset_size;
        let train_subset = |i: usize| scene_subset(tc.seed, i, count, k);
        let val_subset = |i: usize| scene_subset(spec.seed, i, count, k);
        let full = |_: usize| (0..count).collect::<Vec<_>>();
        let n_train_eval = spec.train_eval_scenes.min(train_scenes.len());
        for _ in 0..tc.epochs {
            trainer.train_epoch(train_scenes)?;
            let epoch = trainer.epochs_done;
            for (split, loss) in [
                (Split::Train, eval_loss(&trainer.store, &train_scenes[..n_train_eval], &train_subset, &tc, spec.seed)?),
                (Split::ValMissing, eval_loss(&trainer.store, val_scenes, &val_subset, &tc, spec.seed)?),
                (Split::ValFull, eval_loss(&trainer.store, val_scenes, &full, &tc, spec.seed)?),
            ] {
                let row = MatrixRow { epoch, split, mode, loss };
                on_row(&row)?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

