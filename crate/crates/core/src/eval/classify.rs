use rayon::prelude::*;

use super::iwae::{iwae_loglik, TargetView};
use crate::error::{Error, Result};
use crate::model::{random_subset, Episode, Gmn, ParameterStore, Part};
use crate::scene::{Pair, SceneRecord};
use crate::tensor::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifySpec {
    pub candidates: usize,
    pub trials: usize,
    /// Context pairs per context modality.
    pub context: usize,
    pub observations: usize,
    pub samples: usize,
    pub context_modalities: Vec<usize>,
    pub target_modalities: Vec<usize>,
    pub view: TargetView,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyTrial {
    pub truth: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

/// Scores every candidate context against the same observations and returns
/// the index of the best one with all scores. Each candidate is scored with
/// the same random stream, so scores do not depend on candidate order.
pub fn classify(
    g: &Gmn<'_, f32>,
    candidates: &[Vec<(usize, Vec<&Pair>)>],
    observations: &[(usize, Vec<&Pair>)],
    samples: usize,
    view: TargetView,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidates to classify".into()));
    }
    let scores = candidates
        .iter()
        .map(|ctx| {
            let mut mods: Vec<usize> = ctx.iter().chain(observations).map(|p| p.0).collect();
            mods.sort_unstable();
            mods.dedup();
            let parts = mods
                .into_iter()
                .map(|m| Part {
                    modality: m,
                    context: ctx.iter().filter(|p| p.0 == m).flat_map(|p| p.1.iter().copied()).collect(),
                    targets: observations.iter().filter(|p| p.0 == m).flat_map(|p| p.1.iter().copied()).collect(),
                })
                .collect();
            iwae_loglik(g, &Episode { parts }, samples, view, &mut SeededRng::for_keys(seed, &[0xc1a5]))
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
    Ok((best, scores))
}

/// Repeated classification among `candidates` distinct scenes; returns accuracy and every trial.
pub fn classification_trials(
    store: &ParameterStore<f32>,
    scenes: &[SceneRecord],
    spec: &ClassifySpec,
) -> Result<(f64, Vec<ClassifyTrial>)> {
    if spec.candidates == 0 || spec.candidates > scenes.len() {
        return Err(Error::Invalid(format!("{} candidates from {} scenes", spec.candidates, scenes.len())));
    }
    let g = Gmn::new(store);
    let trials: Vec<ClassifyTrial> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = SeededRng::for_keys(spec.seed, &[0x7a1, t as u64]);
            let mut picked = random_subset(scenes.len(), spec.candidates, &mut rng);
            rng.shuffle(&mut picked);
            let truth = rng.below(spec.candidates);
            let mut contexts = Vec::with_capacity(picked.len());
            let mut observations = Vec::new();
            for (k, &si) in picked.iter().enumerate() {
                let scene = &scenes[si];
                let mut ctx = Vec::new();
                let mut mods: Vec<usize> =
                    spec.context_modalities.iter().chain(&spec.target_modalities).copied().collect();
                mods.sort_unstable();
                mods.dedup();
                for m in mods {
                    let pool = &scene.pairs[m];
                    let mut perm: Vec<usize> = (0..pool.len()).collect();
                    SeededRng::for_keys(spec.seed, &[0x7a2, t as u64, si as u64, m as u64]).shuffle(&mut perm);
                    let n_ctx = if spec.context_modalities.contains(&m) { spec.context } else { 0 };
                    if k == truth && spec.target_modalities.contains(&m) {
                        if n_ctx + spec.observations > pool.len() {
                            return Err(Error::Invalid(format!("modality {m} has only {} pairs", pool.len())));
                        }
                        observations.push((m, perm[n_ctx..n_ctx + spec.observations].iter().map(|&i| &pool[i]).collect()));
                    }
                    if n_ctx > pool.len() {
                        return Err(Error::Invalid(format!("modality {m} has only {} pairs", pool.len())));
                    }
                    if n_ctx > 0 {
                        ctx.push((m, perm[..n_ctx].iter().map(|&i| &pool[i]).collect::<Vec<&Pair>>()));
                    }
                }
                contexts.push(ctx);
            }
            let (predicted, scores) =
                classify(&g, &contexts, &observations, spec.samples, spec.view, spec.seed ^ t as u64)?;
            Ok(ClassifyTrial { truth, predicted, scores })
        })
        .collect::<Result<_>>()?;
    let correct = trials.iter().filter(|t| t.truth == t.predicted).count();
    Ok((correct as f64 / trials.len().max(1) as f64, trials))
}
