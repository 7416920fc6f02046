//! Oracles shared by the integration suites and the acceptance run.
#![allow(dead_code)]

use gmn::eval::log_mean_exp;
use gmn::model::{Episode, FusionMode, Gmn, LinearGaussian, ModelConfig, ParameterStore, Part};
use gmn::poe::{poe_fuse, DiagGaussian};
use gmn::scene::{generate_dataset, GenParams, SceneRecord};
use gmn::tensor::{sample_normal, SeededRng, Tape, Tensor, Var};

/// Largest absolute gap between the fused 1-D density and the normalized
/// pointwise product of expert densities on a 10,001-point grid, over `sets`
/// random expert sets.
pub fn fusion_grid_error(sets: usize, seed: u64) -> f64 {
    const GRID: usize = 10_001;
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let n = 1 + rng.below(8);
        let experts: Vec<DiagGaussian> = (0..n)
            .map(|_| DiagGaussian::new(vec![rng.uniform_in(-3.0, 3.0)], vec![rng.uniform_in(-2.0, 2.0)]).unwrap())
            .collect();
        let fused = poe_fuse(&experts).unwrap();
        let sd = fused.variance()[0].sqrt();
        let (lo, hi) = (fused.mean[0] - 12.0 * sd, fused.mean[0] + 12.0 * sd);
        let h = (hi - lo) / (GRID - 1) as f64;
        let xs: Vec<f64> = (0..GRID).map(|i| lo + h * i as f64).collect();
        let log_prod: Vec<f64> = xs.iter().map(|&x| experts.iter().map(|e| e.log_prob(&[x]).unwrap()).sum()).collect();
        let top = log_prod.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let un: Vec<f64> = log_prod.iter().map(|l| (l - top).exp()).collect();
        // trapezoid normalization
        let z = h * (un.iter().sum::<f64>() - 0.5 * (un[0] + un[GRID - 1]));
        for (x, u) in xs.iter().zip(&un) {
            worst = worst.max((u / z - fused.density_1d(*x)).abs());
        }
    }
    worst
}

/// 1-D linear-Gaussian model with a deliberately imperfect proposal.
pub fn conjugate_model() -> (LinearGaussian, f64) {
    let m = LinearGaussian { prior_mean: 0.5, prior_var: 1.5, a: 1.2, b: -0.3, noise_var: 0.4, q_mean: 0.0, q_var: 1.0 };
    let x = 1.7;
    let (pm, pv) = m.posterior(x);
    (LinearGaussian { q_mean: pm + 0.4, q_var: pv * 1.8, ..m }, x)
}

pub struct BoundOrdering {
    pub elbo: f64,
    pub iwae50: f64,
    pub iwae50_se: f64,
    pub iwae5000: f64,
    pub truth: f64,
}

impl BoundOrdering {
    pub fn holds(&self) -> bool {
        self.elbo <= self.iwae50
            && self.iwae50 <= self.truth + 3.0 * self.iwae50_se
            && (self.iwae5000 - self.truth).abs() < 0.05
    }
}

/// Analytic ELBO, mean K=50 IWAE over `repeats` estimates with its standard
/// error, one K=5000 estimate, and the true log marginal.
pub fn bound_ordering(repeats: usize, seed: u64) -> BoundOrdering {
    let (m, x) = conjugate_model();
    let mut rng = SeededRng::new(seed);
    let est: Vec<f64> = (0..repeats).map(|_| log_mean_exp(&m.log_weights(x, 50, &mut rng)).unwrap()).collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    BoundOrdering {
        elbo: m.elbo(x),
        iwae50: mean,
        iwae50_se: (var / n).sqrt(),
        iwae5000: log_mean_exp(&m.log_weights(x, 5000, &mut rng)).unwrap(),
        truth: m.log_marginal(x),
    }
}

/// Tiny model: 4x4 images and a handful of pairs per modality.
pub fn tiny_world(modalities: usize, fusion: FusionMode, seed: u64) -> (ParameterStore<f64>, Vec<SceneRecord>) {
    let params = GenParams { modalities, height: 4, width: 4, min_pairs: 4, max_pairs: 4, ..Default::default() };
    let table = params.table().unwrap();
    let mut store = ParameterStore::<f64>::init(&ModelConfig::tiny(fusion), &table, seed).unwrap();
    // nonzero biases so their gradients are exercised too
    let mut rng = SeededRng::for_keys(seed, &[0xb1a5]);
    for t in &mut store.tensors {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v = rng.uniform_in(-0.3, 0.3);
            }
        }
    }
    (store, generate_dataset(seed, 2, &params).unwrap())
}

/// Episode over every modality: pairs `0..ctx` as context, `ctx..ctx + obs` as targets.
pub fn fixed_episode(scene: &SceneRecord, ctx: usize, obs: usize) -> Episode<'_> {
    Episode {
        parts: scene
            .pairs
            .iter()
            .enumerate()
            .map(|(m, pool)| Part {
                modality: m,
                context: pool[..ctx].iter().collect(),
                targets: pool[ctx..ctx + obs].iter().collect(),
            })
            .collect(),
    }
}

pub type Probe = dyn for<'p> Fn(&Gmn<'p, f64>, &mut Tape<'p, f64>) -> Var;

fn probe(p: impl for<'p> Fn(&Gmn<'p, f64>, &mut Tape<'p, f64>) -> Var + 'static) -> Box<Probe> {
    Box::new(p)
}

/// Weighted sum of the probe's output, so every output entry contributes.
fn weighted<'p>(g: &Gmn<'p, f64>, tape: &mut Tape<'p, f64>, probe: &Probe, weights: &mut Option<Tensor<f64>>) -> Var {
    let out = probe(g, tape);
    let shape = tape.shape(out).to_vec();
    let w = weights.get_or_insert_with(|| sample_normal(&mut SeededRng::new(0x3e16), &shape)).clone();
    let w = tape.constant(w);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

/// Largest relative error between tape parameter gradients and central
/// differences, over every `stride`-th scalar of every parameter tensor.
/// Returns the error and the number of scalars checked.
pub fn model_gradient_error(store: &ParameterStore<f64>, probe: &Probe, stride: usize) -> (f64, usize) {
    const STEP: f64 = 1e-3;
    let mut weights = None;
    let g = Gmn::new(store);
    let mut tape = g.tape();
    let loss = weighted(&g, &mut tape, probe, &mut weights);
    tape.backward(loss).unwrap();
    let analytic = tape.take_param_grads();
    drop(tape);
    let eval = |s: &ParameterStore<f64>, weights: &mut Option<Tensor<f64>>| {
        let g = Gmn::new(s);
        let mut tape = g.tape();
        let l = weighted(&g, &mut tape, probe, weights);
        tape.scalar(l)
    };
    let mut work = store.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut counter = 0usize;
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..store.tensors[i].len() {
            counter += 1;
            if counter % stride != 0 {
                continue;
            }
            let a = grad.as_ref().map_or(0.0, |g| g[j]);
            let base = store.tensors[i].data()[j];
            let mut at = |d: f64| {
                work.tensors[i].data_mut()[j] = base + d;
                eval(&work, &mut weights)
            };
            let (u1, d1, u2, d2) = (at(STEP), at(-STEP), at(2.0 * STEP), at(-2.0 * STEP));
            work.tensors[i].data_mut()[j] = base;
            // fourth-order stencil: the losses are large next to some gradient entries
            let n = (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * STEP);
            let scale = a.abs().max(n.abs());
            let err = if scale < 1e-7 { (a - n).abs() } else { (a - n).abs() / scale };
            worst = worst.max(err);
            checked += 1;
        }
    }
    (worst, checked)
}

/// Probes for each path through the model: `(name, probe)`.
pub fn gradient_probes(scene: &SceneRecord) -> Vec<(&'static str, Box<Probe>)> {
    let s1 = scene.clone();
    let s2 = scene.clone();
    let s3 = scene.clone();
    let s4 = scene.clone();
    let s5 = scene.clone();
    vec![
        (
            "encoder",
            probe(move |g, t| {
                let pairs: Vec<_> = s1.pairs[0][..3].iter().collect();
                g.encode(t, 0, &pairs).unwrap()
            }),
        ),
        (
            "prior rollout",
            probe(move |g, t| {
                let ep = fixed_episode(&s2, 2, 1);
                let (prior, _) = g.encode_episode(t, &ep).unwrap();
                let chain = g.prior_rollout(t, &prior, 2, &mut SeededRng::new(9)).unwrap();
                chain.steps.last().unwrap().z
            }),
        ),
        (
            "posterior rollout",
            probe(move |g, t| {
                let ep = fixed_episode(&s3, 1, 2);
                let (prior, post) = g.encode_episode(t, &ep).unwrap();
                let chain = g.posterior_rollout(t, &prior, &post, 2, &mut SeededRng::new(9)).unwrap();
                let last = chain.steps.last().unwrap();
                let q = last.posterior.unwrap().fused;
                let mq = t.sum(q.mean).unwrap();
                let lq = t.sum(q.log_precision).unwrap();
                let zs = t.sum(last.z).unwrap();
                let a = t.add(mq, lq).unwrap();
                t.add(a, zs).unwrap()
            }),
        ),
        (
            "renderer",
            probe(move |g, t| {
                let ep = fixed_episode(&s4, 2, 1);
                let (prior, _) = g.encode_episode(t, &ep).unwrap();
                let chain = g.prior_rollout(t, &prior, 2, &mut SeededRng::new(9)).unwrap();
                let qs: Vec<&[f32]> = s4.pairs[0][..2].iter().map(|p| p.query.as_slice()).collect();
                let img = g.render(t, &chain, 0, &qs).unwrap();
                let hq: Vec<&[f32]> = vec![s4.pairs[1][0].query.as_slice()];
                let hap = g.render(t, &chain, 1, &hq).unwrap();
                let a = t.sum(img).unwrap();
                let b = t.sum(hap).unwrap();
                t.add(a, b).unwrap()
            }),
        ),
        (
            "elbo",
            probe(move |g, t| {
                let ep = fixed_episode(&s5, 1, 2);
                g.elbo(t, &ep, 0.7, &mut SeededRng::new(9)).unwrap().loss
            }),
        ),
    ]
}

/// Runs every probe for every fusion mode; returns `(mode, probe, error, checked)`.
pub fn gradient_suite(stride: usize) -> Vec<(FusionMode, &'static str, f64, usize)> {
    let mut out = Vec::new();
    for mode in FusionMode::ALL {
        let (store, scenes) = tiny_world(2, mode, 3);
        for (name, probe) in gradient_probes(&scenes[0]) {
            let (err, n) = model_gradient_error(&store, probe.as_ref(), stride);
            out.push((mode, name, err, n));
        }
    }
    out
}

/// Plain encoding helper for tests that inspect representations.
pub fn encode_values(store: &ParameterStore<f64>, m: usize, pairs: &[&gmn::scene::Pair]) -> Vec<f64> {
    let g = Gmn::new(store);
    let mut t = g.tape();
    let r = g.encode(&mut t, m, pairs).unwrap();
    t.value(r).data().to_vec()
}

