use crate::error::{Error, Result};
use crate::model::{Episode, Gmn};
use crate::poe::LN_2PI;
use crate::scene::SliceRule;
use crate::tensor::{SeededRng, Var};

/// How rendered means are compared against targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetView {
    /// The modality's own sense space.
    Native,
    /// Luminance of an RGB modality, scored under a one-channel Gaussian.
    Gray,
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Numerically stable `log(mean(exp(w)))`.
pub fn log_mean_exp(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Invalid("no importance weights".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "importance weight" });
    }
    let mx = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = w.iter().map(|v| (v - mx).exp()).sum();
    Ok(mx + (s / w.len() as f64).ln())
}

fn log_normal_sum(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let q: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * q / (sigma * sigma) - x.len() as f64 * (sigma.ln() + 0.5 * LN_2PI)
}

fn diag_log_prob(x: &[f64], mean: &[f64], lp: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(lp)
        .map(|((x, m), l)| 0.5 * l - 0.5 * LN_2PI - 0.5 * l.exp() * (x - m) * (x - m))
        .sum()
}

fn gray(v: &[f64]) -> Vec<f64> {
    let p = v.len() / 3;
    (0..p).map(|j| LUMA[0] * v[j] + LUMA[1] * v[p + j] + LUMA[2] * v[2 * p + j]).collect()
}

fn rows(tape: &crate::tensor::Tape<'_, f32>, v: Var) -> Vec<f64> {
    tape.value(v).data().iter().map(|&x| x as f64).collect()
}

/// Log importance weights `log p(X|V,z) + log p(z|C) - log q(z|C,O)` for `k`
/// posterior chains, each summed over all steps and all targets.
pub fn log_weights(g: &Gmn<'_, f32>, ep: &Episode<'_>, k: usize, view: TargetView, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Invalid("need at least one latent sample".into()));
    }
    if ep.target_count() == 0 {
        return Err(Error::Invalid("no observations to score".into()));
    }
    let store = g.store;
    let mut tape = g.tape();
    let (prior, post) = g.encode_episode(&mut tape, ep)?;
    let chain = g.posterior_rollout(&mut tape, &prior, &post, k, rng)?;
    let l = store.config.latent_dim;
    let mut w = vec![0.0; k];
    for s in &chain.steps {
        let q = s.posterior.expect("posterior rollout").fused;
        let (z, qm, ql) = (rows(&tape, s.z), rows(&tape, q.mean), rows(&tape, q.log_precision));
        let (pm, pl) = (rows(&tape, s.prior.fused.mean), rows(&tape, s.prior.fused.log_precision));
        for (d, wd) in w.iter_mut().enumerate() {
            let r = d * l..(d + 1) * l;
            *wd += diag_log_prob(&z[r.clone()], &pm[r.clone()], &pl[r.clone()])
                - diag_log_prob(&z[r.clone()], &qm[r.clone()], &ql[r]);
        }
    }
    for p in &ep.parts {
        if p.targets.is_empty() {
            continue;
        }
        let desc = &store.table.modalities[p.modality];
        if view == TargetView::Gray && !matches!(desc.rule, SliceRule::Image { channels: 0b111, .. }) {
            return Err(Error::Invalid(format!("gray view needs an RGB modality, {} is not", desc.name)));
        }
        let queries: Vec<&[f32]> = p.targets.iter().map(|t| t.query.as_slice()).collect();
        let mean = g.render(&mut tape, &chain, p.modality, &queries)?;
        let mean = rows(&tape, mean);
        let sd = desc.sense_dim;
        let sigma = store.sigma(p.modality);
        let n = p.targets.len();
        for (d, wd) in w.iter_mut().enumerate() {
            for (j, t) in p.targets.iter().enumerate() {
                let mu = &mean[(d * n + j) * sd..(d * n + j + 1) * sd];
                let x: Vec<f64> = t.sense.iter().map(|&v| v as f64).collect();
                *wd += match view {
                    TargetView::Native => log_normal_sum(&x, mu, sigma),
                    TargetView::Gray => log_normal_sum(&gray(&x), &gray(mu), sigma),
                };
            }
        }
    }
    Ok(w)
}

/// Importance-weighted estimate of `log P(X | V, C)` from `k` posterior chains.
pub fn iwae_loglik(g: &Gmn<'_, f32>, ep: &Episode<'_>, k: usize, view: TargetView, rng: &mut SeededRng) -> Result<f64> {
    log_mean_exp(&log_weights(g, ep, k, view, rng)?)
}

/// Sense dimensions scored for an episode under `view`.
pub fn scored_dims(g: &Gmn<'_, f32>, ep: &Episode<'_>, view: TargetView) -> usize {
    ep.parts
        .iter()
        .map(|p| {
            let sd = g.store.table.modalities[p.modality].sense_dim;
            p.targets.len() * if view == TargetView::Gray { sd / 3 } else { sd }
        })
        .sum()
}
