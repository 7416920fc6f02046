use std::fs;
use std::path::{Path, PathBuf};

use super::write_csv;
use crate::error::{Error, Result};
use crate::model::{Encoded, Gmn, ParameterStore};
use crate::scene::{export_ppm, BaseSensor, SceneRecord};
use crate::tensor::{SeededRng, Tensor};

/// Fill for image regions a target does not cover.
const UNCOVERED: f32 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DumpSpec {
    /// `(modality, n)`: the first `n` stored pairs of `modality` form the context.
    pub source: Vec<(usize, usize)>,
    /// `(modality, pair index)` of every query to render.
    pub targets: Vec<(usize, usize)>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DumpReport {
    /// Stored sense of each target.
    pub truth: Vec<Vec<f32>>,
    /// Per target: rendered mean for every sample.
    pub renders: Vec<Vec<Vec<f32>>>,
    /// Per target: sample standard deviation averaged over sense dimensions.
    pub spread: Vec<f64>,
    pub files: Vec<PathBuf>,
}

/// Linear-interpolation quantile of unsorted values, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn spread(samples: &[Vec<f32>]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let d = samples[0].len();
    let mut total = 0.0;
    for j in 0..d {
        let m = samples.iter().map(|s| s[j] as f64).sum::<f64>() / n as f64;
        let v = samples.iter().map(|s| (s[j] as f64 - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        total += v.sqrt();
    }
    total / d as f64
}

/// Horizontal strip of full-size images, one tile per image target.
fn image_strip(store: &ParameterStore<f32>, targets: &[(usize, &[f32])]) -> Result<Tensor<f32>> {
    let (h, w) = (store.table.height, store.table.width);
    let tiles = targets.len();
    let mut data = vec![UNCOVERED; 3 * h * w * tiles];
    for (t, (m, sense)) in targets.iter().enumerate() {
        let (img, _) = store.table.assemble(&[(*m, sense)]);
        for ch in 0..3 {
            for r in 0..h {
                for c in 0..w {
                    let v = img[ch * h * w + r * w + c];
                    if !v.is_nan() {
                        data[ch * h * w * tiles + r * w * tiles + t * w + c] = v;
                    }
                }
            }
        }
    }
    Tensor::new(vec![3, h, w * tiles], data)
}

/// Samples `spec.samples` latent chains from the context prior and renders
/// every target query under each. With `out` set, writes one image strip per
/// sample, `truth.ppm`, `haptic.csv` (mean and 95% band per dimension) and
/// `truth.csv` (stored senses at full precision).
pub fn crossmodal_dump(
    store: &ParameterStore<f32>,
    scene: &SceneRecord,
    spec: &DumpSpec,
    out: Option<&Path>,
) -> Result<DumpReport> {
    if spec.samples == 0 {
        return Err(Error::Invalid("dump needs at least one sample".into()));
    }
    if spec.targets.is_empty() {
        return Err(Error::Invalid("dump needs at least one target".into()));
    }
    let pair = |m: usize, i: usize| {
        scene
            .pairs
            .get(m)
            .and_then(|p| p.get(i))
            .ok_or_else(|| Error::Invalid(format!("scene has no pair {i} of modality {m}")))
    };
    let g = Gmn::new(store);
    let mut tape = g.tape();
    let mut mods: Vec<usize> = spec.source.iter().map(|s| s.0).chain(spec.targets.iter().map(|t| t.0)).collect();
    mods.sort_unstable();
    mods.dedup();
    let mut enc = Vec::with_capacity(mods.len());
    for &m in &mods {
        let n = spec.source.iter().filter(|s| s.0 == m).map(|s| s.1).max().unwrap_or(0);
        let ctx = (0..n).map(|i| pair(m, i)).collect::<Result<Vec<_>>>()?;
        enc.push(Encoded { modality: m, r: g.encode(&mut tape, m, &ctx)? });
    }
    let mut rng = SeededRng::for_keys(spec.seed, &[0xd0]);
    let chain = g.prior_rollout(&mut tape, &enc, spec.samples, &mut rng)?;
    let mut truth = Vec::new();
    let mut renders = Vec::new();
    for &(m, i) in &spec.targets {
        let p = pair(m, i)?;
        let mean = g.render(&mut tape, &chain, m, &[p.query.as_slice()])?;
        let sd = store.table.modalities[m].sense_dim;
        let v = tape.value(mean).data();
        renders.push((0..spec.samples).map(|s| v[s * sd..(s + 1) * sd].to_vec()).collect::<Vec<_>>());
        truth.push(p.sense.clone());
    }
    let spread = renders.iter().map(|r| spread(r)).collect();
    let mut files = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let image_targets: Vec<usize> = (0..spec.targets.len())
            .filter(|&t| store.table.modalities[spec.targets[t].0].base() == BaseSensor::Image)
            .collect();
        if !image_targets.is_empty() {
            for s in 0..spec.samples {
                let tiles: Vec<(usize, &[f32])> =
                    image_targets.iter().map(|&t| (spec.targets[t].0, renders[t][s].as_slice())).collect();
                let path = dir.join(format!("sample_{s:02}.ppm"));
                export_ppm(&image_strip(store, &tiles)?, &path)?;
                files.push(path);
            }
            let tiles: Vec<(usize, &[f32])> =
                image_targets.iter().map(|&t| (spec.targets[t].0, truth[t].as_slice())).collect();
            let path = dir.join("truth.ppm");
            export_ppm(&image_strip(store, &tiles)?, &path)?;
            files.push(path);
        }
        let mut rows = Vec::new();
        for (t, &(m, _)) in spec.targets.iter().enumerate() {
            if store.table.modalities[m].base() != BaseSensor::Haptic {
                continue;
            }
            for j in 0..truth[t].len() {
                let v: Vec<f64> = renders[t].iter().map(|r| r[j] as f64).collect();
                rows.push(vec![
                    t.to_string(),
                    store.table.modalities[m].name.clone(),
                    j.to_string(),
                    (v.iter().sum::<f64>() / v.len() as f64).to_string(),
                    quantile(&v, 0.025).to_string(),
                    quantile(&v, 0.975).to_string(),
                    truth[t][j].to_string(),
                ]);
            }
        }
        let path = dir.join("haptic.csv");
        write_csv(&path, &["target", "modality", "dim", "mean", "p2_5", "p97_5", "truth"], &rows)?;
        files.push(path);
        let mut rows = Vec::new();
        for (t, &(m, i)) in spec.targets.iter().enumerate() {
            for (j, v) in truth[t].iter().enumerate() {
                rows.push(vec![
                    t.to_string(),
                    store.table.modalities[m].name.clone(),
                    i.to_string(),
                    j.to_string(),
                    v.to_string(),
                ]);
            }
        }
        let path = dir.join("truth.csv");
        write_csv(&path, &["target", "modality", "pair", "dim", "value"], &rows)?;
        files.push(path);
    }
    Ok(DumpReport { truth, renders, spread, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert!((quantile(&v, 0.125) - 1.5).abs() < 1e-12);
    }
}
