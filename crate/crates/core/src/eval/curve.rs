use rayon::prelude::*;

use super::iwae::{iwae_loglik, scored_dims, TargetView};
use super::{bootstrap_se, mean, scene_key};
use crate::error::{Error, Result};
use crate::model::{Episode, Gmn, ParameterStore, Part};
use crate::scene::SceneRecord;
use crate::tensor::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSpec {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub sweep: Vec<usize>,
    /// Context pairs of each target modality that is not also a source.
    pub target_context: usize,
    pub observations: usize,
    pub samples: usize,
    pub view: TargetView,
    pub bootstrap: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub context_size: usize,
    /// Mean log-likelihood per target pair.
    pub mean_ll: f64,
    pub stderr: f64,
    pub n_scenes: usize,
    /// Mean log-likelihood per scored sense dimension.
    pub mean_ll_per_dim: f64,
    pub stderr_per_dim: f64,
}

fn permutation(len: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut p);
    p
}

/// Builds the episode for one scene at source context size `n`: targets come
/// first in a per-scene permutation, context follows, so contexts are nested in `n`.
fn episode<'s>(scene: &'s SceneRecord, spec: &CurveSpec, n: usize, key: u64) -> Result<Episode<'s>> {
    let mut mods: Vec<usize> = spec.source.iter().chain(&spec.target).copied().collect();
    mods.sort_unstable();
    mods.dedup();
    let mut parts = Vec::with_capacity(mods.len());
    for m in mods {
        let pool = scene.pairs.get(m).ok_or_else(|| Error::Data(format!("scene lacks modality {m}")))?;
        let perm = permutation(pool.len(), &mut SeededRng::for_keys(spec.seed, &[key, m as u64]));
        let is_target = spec.target.contains(&m);
        let n_obs = if is_target { spec.observations } else { 0 };
        let n_ctx = if spec.source.contains(&m) {
            n
        } else if is_target {
            spec.target_context
        } else {
            0
        };
        if n_obs + n_ctx > pool.len() {
            return Err(Error::Invalid(format!(
                "context size {n_ctx} plus {n_obs} targets exceeds the {} pairs of modality {m}",
                pool.len()
            )));
        }
        parts.push(Part {
            modality: m,
            targets: perm[..n_obs].iter().map(|&i| &pool[i]).collect(),
            context: perm[n_obs..n_obs + n_ctx].iter().map(|&i| &pool[i]).collect(),
        });
    }
    Ok(Episode { parts })
}

/// Importance-weighted target log-likelihood as a function of source context size.
pub fn crossmodal_curve(store: &ParameterStore<f32>, scenes: &[SceneRecord], spec: &CurveSpec) -> Result<Vec<CurvePoint>> {
    if scenes.is_empty() || spec.sweep.is_empty() || spec.target.is_empty() {
        return Err(Error::Invalid("curve needs scenes, a sweep and targets".into()));
    }
    let g = Gmn::new(store);
    // per scene: (key, per-pair values, per-dim values), one entry per sweep point
    let mut per_scene: Vec<(u64, Vec<f64>, Vec<f64>)> = scenes
        .par_iter()
        .map(|s| {
            let key = scene_key(s);
            let mut pair = Vec::with_capacity(spec.sweep.len());
            let mut dim = Vec::with_capacity(spec.sweep.len());
            for &n in &spec.sweep {
                let ep = episode(s, spec, n, key)?;
                // common random numbers across the sweep
                let mut rng = SeededRng::for_keys(spec.seed, &[key, 0x1ae]);
                let ll = iwae_loglik(&g, &ep, spec.samples, spec.view, &mut rng)?;
                pair.push(ll / ep.target_count() as f64);
                dim.push(ll / scored_dims(&g, &ep, spec.view) as f64);
            }
            Ok((key, pair, dim))
        })
        .collect::<Result<_>>()?;
    per_scene.sort_by_key(|v| v.0);
    Ok(spec
        .sweep
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let pair: Vec<f64> = per_scene.iter().map(|v| v.1[i]).collect();
            let dim: Vec<f64> = per_scene.iter().map(|v| v.2[i]).collect();
            CurvePoint {
                context_size: n,
                mean_ll: mean(&pair),
                stderr: bootstrap_se(&pair, spec.bootstrap, spec.seed),
                n_scenes: pair.len(),
                mean_ll_per_dim: mean(&dim),
                stderr_per_dim: bootstrap_se(&dim, spec.bootstrap, spec.seed),
            }
        })
        .collect())
}
