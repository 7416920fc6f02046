use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::scene::{Pair, SceneRecord};
use crate::tensor::SeededRng;

/// The pairs one modality contributes to a single model evaluation.
#[derive(Clone, Debug)]
pub struct Part<'s> {
    pub modality: usize,
    pub context: Vec<&'s Pair>,
    pub targets: Vec<&'s Pair>,
}

/// Context and observation sets for the modalities taking part in one scene.
#[derive(Clone, Debug, Default)]
pub struct Episode<'s> {
    pub parts: Vec<Part<'s>>,
}

impl<'s> Episode<'s> {
    /// Draws, per listed modality, a context size uniformly from `context`
    /// and then disjoint context and target pairs from the scene's pool.
    pub fn sample(
        scene: &'s SceneRecord,
        modalities: &[usize],
        context: RangeInclusive<usize>,
        targets: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (lo, hi) = (*context.start(), *context.end());
        if lo > hi {
            return Err(Error::Config(format!("empty context range {lo}..={hi}")));
        }
        let mut parts = Vec::with_capacity(modalities.len());
        for &m in modalities {
            let pool = scene
                .pairs
                .get(m)
                .ok_or_else(|| Error::Data(format!("scene has no modality {m}")))?;
            let n_ctx = lo + rng.below(hi - lo + 1);
            if n_ctx + targets > pool.len() {
                return Err(Error::Data(format!(
                    "modality {m}: {} pairs cannot supply {n_ctx} context and {targets} targets",
                    pool.len()
                )));
            }
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            rng.shuffle(&mut idx);
            parts.push(Part {
                modality: m,
                context: idx[..n_ctx].iter().map(|&i| &pool[i]).collect(),
                targets: idx[n_ctx..n_ctx + targets].iter().map(|&i| &pool[i]).collect(),
            });
        }
        Ok(Self { parts })
    }

    pub fn target_count(&self) -> usize {
        self.parts.iter().map(|p| p.targets.len()).sum()
    }
}

/// A random `size`-subset of `0..count`, sorted.
pub fn random_subset(count: usize, size: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..count).collect();
    rng.shuffle(&mut idx);
    idx.truncate(size.min(count));
    idx.sort_unstable();
    idx
}
