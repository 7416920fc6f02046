use super::config::{Aggregate, FusionMode, UniversalExpert};
use super::episode::Episode;
use super::params::{Cell, Dense, Mlp, ParameterStore, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::poe::{kl_diag_var, poe_fuse_rows, GaussianVar, LN_2PI};
use crate::scene::{BaseSensor, Pair, QUERY_DIM};
use crate::tensor::{c, sample_normal, Real, SeededRng, Tape, Tensor, Var};

/// Expert log precisions are squashed into `(-B, B)`.
pub const LOG_PRECISION_BOUND: f64 = 6.0;

/// Direction, heading and elevation of a query, invariant to sensor radius.
pub fn query_features(q: &[f32]) -> [f64; FEATURE_DIM] {
    let p = [q[0] as f64, q[1] as f64, q[2] as f64];
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(1e-12);
    let (sp, cp) = (q[3] as f64).sin_cos();
    let (sy, cy) = (q[4] as f64).sin_cos();
    [p[0] / r, p[1] / r, p[2] / r, sy, cy, sp, cp]
}

/// One fused distribution together with the expert rows it came from.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    /// `[draws, latent]`.
    pub fused: GaussianVar,
    /// `[experts * draws, latent]`, expert-major.
    pub expert_means: Var,
    pub expert_log_precisions: Var,
    pub experts: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ChainStep {
    pub prior: Fused,
    pub posterior: Option<Fused>,
    /// `[draws, latent]`.
    pub z: Var,
}

/// Per-step distributions and samples `z_1..z_T`.
#[derive(Clone, Debug)]
pub struct LatentChain {
    pub steps: Vec<ChainStep>,
    pub draws: usize,
}

/// An encoded modality taking part in a rollout.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub modality: usize,
    /// `[r_dim]`.
    pub r: Var,
}

struct Group {
    cell: usize,
    /// `[experts * draws, input_dim - latent]`.
    base: Var,
    h: Var,
    experts: usize,
}

struct Rollout {
    groups: Vec<Group>,
    universal: bool,
    draws: usize,
}

/// Scalar loss plus its parts, all in nats.
#[derive(Clone, Debug)]
pub struct ElboTerms {
    pub loss: Var,
    /// Per modality `(m, log-likelihood summed over its targets)`.
    pub recon: Vec<(usize, f64)>,
    pub kl: Vec<f64>,
    /// Number of observed sense dimensions.
    pub observed_dims: usize,
}

impl ElboTerms {
    pub fn recon_total(&self) -> f64 {
        self.recon.iter().map(|r| r.1).sum()
    }

    pub fn kl_total(&self) -> f64 {
        self.kl.iter().sum()
    }
}

/// Read-only view of a parameter store that builds computations on a tape.
#[derive(Clone, Copy)]
pub struct Gmn<'p, F: Real> {
    pub store: &'p ParameterStore<F>,
}

impl<'p, F: Real> Gmn<'p, F> {
    pub fn new(store: &'p ParameterStore<F>) -> Self {
        Self { store }
    }

    pub fn tape(&self) -> Tape<'p, F> {
        Tape::with_params(&self.store.tensors)
    }

    fn latent(&self) -> usize {
        self.store.config.latent_dim
    }

    fn dense(&self, tape: &mut Tape<'p, F>, d: Dense, x: Var) -> Result<Var> {
        let w = tape.param(d.w);
        let b = tape.param(d.b);
        let rows = tape.shape(x)[0];
        let y = tape.matmul(x, w)?;
        let bb = tape.broadcast_rows(b, rows)?;
        tape.add(y, bb)
    }

    fn mlp(&self, tape: &mut Tape<'p, F>, m: &Mlp, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, d) in m.layers.iter().enumerate() {
            h = self.dense(tape, *d, h)?;
            if i + 1 < m.layers.len() {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    fn check_pair(&self, m: usize, p: &Pair) -> Result<()> {
        let d = &self.store.table.modalities[m];
        if p.query.len() != QUERY_DIM || p.sense.len() != d.sense_dim {
            return Err(Error::shape(
                "encode",
                format!("{}: query {} sense {}, expected {QUERY_DIM} and {}", d.name, p.query.len(), p.sense.len(), d.sense_dim),
            ));
        }
        Ok(())
    }

    fn modality(&self, m: usize) -> Result<()> {
        if m >= self.store.table.len() {
            return Err(Error::Invalid(format!("modality {m} not in a table of {}", self.store.table.len())));
        }
        Ok(())
    }

    /// Sum of per-pair encodings of modality `m`; zeros for an empty list.
    pub fn encode(&self, tape: &mut Tape<'p, F>, m: usize, pairs: &[&Pair]) -> Result<Var> {
        self.modality(m)?;
        let r_dim = self.store.config.r_dim;
        if pairs.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[r_dim])));
        }
        let sd = self.store.table.modalities[m].sense_dim;
        let cols = FEATURE_DIM + sd;
        let mut data = Vec::with_capacity(pairs.len() * cols);
        for p in pairs {
            self.check_pair(m, p)?;
            data.extend(query_features(&p.query).iter().map(|&v| c::<F>(v)));
            data.extend(p.sense.iter().map(|&v| c::<F>(v as f64)));
        }
        let x = tape.constant(Tensor::matrix(pairs.len(), cols, data)?);
        let y = self.mlp(tape, &self.store.layout.encoders[m], x)?;
        tape.sum_rows(y)
    }

    fn cell_step(&self, tape: &mut Tape<'p, F>, cell: Cell, x: Var, h: Var) -> Result<(Var, Var, Var)> {
        let w = cell.width;
        let l = self.latent();
        let xh = tape.concat(&[x, h], 1)?;
        let g = self.dense(tape, cell.gates, xh)?;
        let u = tape.slice(g, 1, 0, w)?;
        let u = tape.sigmoid(u)?;
        let cand = tape.slice(g, 1, w, 2 * w)?;
        let cand = tape.tanh(cand)?;
        let diff = tape.sub(cand, h)?;
        let step = tape.mul(u, diff)?;
        let h_new = tape.add(h, step)?;
        let out = self.dense(tape, cell.head, h_new)?;
        let mean = tape.slice(out, 1, 0, l)?;
        let raw = tape.slice(out, 1, l, 2 * l)?;
        let b = c::<F>(LOG_PRECISION_BOUND);
        let lp = tape.scale(raw, F::one() / b)?;
        let lp = tape.tanh(lp)?;
        let lp = tape.scale(lp, b)?;
        Ok((h_new, mean, lp))
    }

    fn rows(&self, tape: &mut Tape<'p, F>, v: Var, rows: usize) -> Result<Var> {
        tape.broadcast_rows(v, rows)
    }

    fn start(&self, tape: &mut Tape<'p, F>, enc: &[Encoded], draws: usize) -> Result<Rollout> {
        let cfg = &self.store.config;
        let n_mod = self.store.table.len();
        for e in enc {
            self.modality(e.modality)?;
        }
        let universal = match cfg.universal_expert {
            UniversalExpert::Never => false,
            UniversalExpert::WhenEmpty => enc.is_empty(),
            UniversalExpert::Always => true,
        };
        if enc.is_empty() && !universal {
            return Err(Error::Invalid("no participating experts and the universal expert is off".into()));
        }
        let mut groups = Vec::new();
        if !enc.is_empty() {
            match cfg.fusion {
                FusionMode::BaselineSum => {
                    let mut r = enc[0].r;
                    for e in &enc[1..] {
                        r = tape.add(r, e.r)?;
                    }
                    if cfg.aggregate == Aggregate::Mean {
                        r = tape.scale(r, c::<F>(1.0 / enc.len() as f64))?;
                    }
                    let base = self.rows(tape, r, draws)?;
                    groups.push(Group { cell: 0, base, h: self.zero_state(tape, 0, draws), experts: 1 });
                }
                FusionMode::Poe => {
                    for e in enc {
                        let base = self.rows(tape, e.r, draws)?;
                        let h = self.zero_state(tape, e.modality, draws);
                        groups.push(Group { cell: e.modality, base, h, experts: 1 });
                    }
                }
                FusionMode::Apoe => {
                    let mut blocks = Vec::with_capacity(enc.len());
                    for e in enc {
                        let mut mask = vec![F::zero(); n_mod];
                        mask[e.modality] = F::one();
                        let mask = tape.constant(Tensor::matrix(1, n_mod, mask)?);
                        let r = self.rows(tape, e.r, 1)?;
                        let row = tape.concat(&[r, mask], 1)?;
                        blocks.push(self.rows(tape, row, draws)?);
                    }
                    let base = if blocks.len() == 1 { blocks[0] } else { tape.concat(&blocks, 0)? };
                    let h = self.zero_state(tape, 0, draws * enc.len());
                    groups.push(Group { cell: 0, base, h, experts: enc.len() });
                }
            }
        }
        Ok(Rollout { groups, universal, draws })
    }

    fn zero_state(&self, tape: &mut Tape<'p, F>, cell: usize, rows: usize) -> Var {
        let w = self.store.layout.cells[cell].width;
        tape.constant(Tensor::zeros(&[rows, w]))
    }

    fn step(&self, tape: &mut Tape<'p, F>, ro: &mut Rollout, z_prev: Var) -> Result<Fused> {
        let l = self.latent();
        let b = ro.draws;
        let mut means = Vec::new();
        let mut lps = Vec::new();
        let mut experts = 0;
        for g in &mut ro.groups {
            let zrep = if g.experts == 1 { z_prev } else { tape.concat(&vec![z_prev; g.experts], 0)? };
            let x = tape.concat(&[g.base, zrep], 1)?;
            let cell = self.store.layout.cells[g.cell];
            let (h, m, lp) = self.cell_step(tape, cell, x, g.h)?;
            g.h = h;
            means.push(m);
            lps.push(lp);
            experts += g.experts;
        }
        if ro.universal {
            means.push(tape.constant(Tensor::zeros(&[b, l])));
            lps.push(tape.constant(Tensor::zeros(&[b, l])));
            experts += 1;
        }
        let em = if means.len() == 1 { means[0] } else { tape.concat(&means, 0)? };
        let el = if lps.len() == 1 { lps[0] } else { tape.concat(&lps, 0)? };
        let fused = if experts == 1 {
            GaussianVar { mean: em, log_precision: el }
        } else {
            let m = tape.reshape(em, &[experts, b * l])?;
            let lp = tape.reshape(el, &[experts, b * l])?;
            let f = poe_fuse_rows(tape, m, lp)?;
            GaussianVar { mean: tape.reshape(f.mean, &[b, l])?, log_precision: tape.reshape(f.log_precision, &[b, l])? }
        };
        Ok(Fused { fused, expert_means: em, expert_log_precisions: el, experts })
    }

    fn sample(&self, tape: &mut Tape<'p, F>, g: GaussianVar, rng: &mut SeededRng, draws: usize) -> Result<Var> {
        let noise = tape.constant(sample_normal(rng, &[draws, self.latent()]));
        crate::poe::sample_reparam_var(tape, g, noise)
    }

    /// Latent chain from context encodings alone; samples come from the fused priors.
    pub fn prior_rollout(
        &self,
        tape: &mut Tape<'p, F>,
        context: &[Encoded],
        draws: usize,
        rng: &mut SeededRng,
    ) -> Result<LatentChain> {
        let mut ro = self.start(tape, context, draws)?;
        let mut z = tape.constant(Tensor::zeros(&[draws, self.latent()]));
        let mut steps = Vec::with_capacity(self.store.config.draw_steps);
        for _ in 0..self.store.config.draw_steps {
            let prior = self.step(tape, &mut ro, z)?;
            z = self.sample(tape, prior.fused, rng, draws)?;
            steps.push(ChainStep { prior, posterior: None, z });
        }
        Ok(LatentChain { steps, draws })
    }

    /// Latent chain sampled from the fused posteriors, with the priors of the
    /// same steps computed alongside from the context encodings.
    pub fn posterior_rollout(
        &self,
        tape: &mut Tape<'p, F>,
        context: &[Encoded],
        posterior: &[Encoded],
        draws: usize,
        rng: &mut SeededRng,
    ) -> Result<LatentChain> {
        if posterior.is_empty() {
            return Err(Error::Invalid("posterior rollout needs at least one modality".into()));
        }
        let mut pri = self.start(tape, context, draws)?;
        let mut post = self.start(tape, posterior, draws)?;
        let mut z = tape.constant(Tensor::zeros(&[draws, self.latent()]));
        let mut steps = Vec::with_capacity(self.store.config.draw_steps);
        for _ in 0..self.store.config.draw_steps {
            let prior = self.step(tape, &mut pri, z)?;
            let q = self.step(tape, &mut post, z)?;
            z = self.sample(tape, q.fused, rng, draws)?;
            steps.push(ChainStep { prior, posterior: Some(q), z });
        }
        Ok(LatentChain { steps, draws })
    }

    /// Mean of the observation Gaussian for each draw and query: `[draws * n, sense_dim]`, draw-major.
    pub fn render(&self, tape: &mut Tape<'p, F>, chain: &LatentChain, m: usize, queries: &[&[f32]]) -> Result<Var> {
        self.modality(m)?;
        let n = queries.len();
        if n == 0 {
            return Err(Error::Invalid("render needs at least one query".into()));
        }
        let zs: Vec<Var> = chain.steps.iter().map(|s| s.z).collect();
        let z = if zs.len() == 1 { zs[0] } else { tape.concat(&zs, 1)? };
        let b = chain.draws;
        let zrep = if b == 1 {
            tape.broadcast_rows(z, n)?
        } else {
            let mut blocks = Vec::with_capacity(b);
            for k in 0..b {
                let row = tape.slice(z, 0, k, k + 1)?;
                blocks.push(tape.broadcast_rows(row, n)?);
            }
            tape.concat(&blocks, 0)?
        };
        let mut feats = Vec::with_capacity(b * n * FEATURE_DIM);
        for _ in 0..b {
            for q in queries {
                if q.len() != QUERY_DIM {
                    return Err(Error::shape("render", format!("query of length {}", q.len())));
                }
                feats.extend(query_features(q).iter().map(|&v| c::<F>(v)));
            }
        }
        let feats = tape.constant(Tensor::matrix(b * n, FEATURE_DIM, feats)?);
        let x = tape.concat(&[zrep, feats], 1)?;
        let y = self.mlp(tape, &self.store.layout.renderers[m], x)?;
        match self.store.table.modalities[m].base() {
            BaseSensor::Image => tape.sigmoid(y),
            BaseSensor::Haptic => tape.tanh(y),
        }
    }

    /// Encodes the context of every part, and context plus targets for the posterior.
    pub fn encode_episode(&self, tape: &mut Tape<'p, F>, ep: &Episode<'_>) -> Result<(Vec<Encoded>, Vec<Encoded>)> {
        let mut prior = Vec::with_capacity(ep.parts.len());
        let mut post = Vec::with_capacity(ep.parts.len());
        for p in &ep.parts {
            let rc = self.encode(tape, p.modality, &p.context)?;
            let rp = if p.targets.is_empty() {
                rc
            } else {
                let ro = self.encode(tape, p.modality, &p.targets)?;
                tape.add(rc, ro)?
            };
            prior.push(Encoded { modality: p.modality, r: rc });
            post.push(Encoded { modality: p.modality, r: rp });
        }
        Ok((prior, post))
    }

    /// Single-sample negative ELBO `-recon + beta * KL`.
    pub fn elbo(&self, tape: &mut Tape<'p, F>, ep: &Episode<'_>, beta: f64, rng: &mut SeededRng) -> Result<ElboTerms> {
        if ep.target_count() == 0 {
            return Err(Error::Invalid("ELBO needs at least one observation".into()));
        }
        let (prior, post) = self.encode_episode(tape, ep)?;
        let chain = self.posterior_rollout(tape, &prior, &post, 1, rng)?;
        let mut kl = Vec::with_capacity(chain.steps.len());
        let mut kl_vars = Vec::with_capacity(chain.steps.len());
        for s in &chain.steps {
            let q = s.posterior.expect("posterior rollout").fused;
            let k = kl_diag_var(tape, q, s.prior.fused)?;
            kl.push(tape.scalar(k).to_f64().unwrap_or(f64::NAN));
            kl_vars.push(k);
        }
        let mut recon = Vec::new();
        let mut recon_vars = Vec::new();
        let mut observed_dims = 0;
        for p in &ep.parts {
            if p.targets.is_empty() {
                continue;
            }
            let queries: Vec<&[f32]> = p.targets.iter().map(|t| t.query.as_slice()).collect();
            let mean = self.render(tape, &chain, p.modality, &queries)?;
            let sd = self.store.table.modalities[p.modality].sense_dim;
            let mut x = Vec::with_capacity(p.targets.len() * sd);
            for t in &p.targets {
                self.check_pair(p.modality, t)?;
                x.extend(t.sense.iter().map(|&v| c::<F>(v as f64)));
            }
            let x = tape.constant(Tensor::matrix(p.targets.len(), sd, x)?);
            let ll = gaussian_ll(tape, mean, x, self.store.sigma(p.modality))?;
            recon.push((p.modality, tape.scalar(ll).to_f64().unwrap_or(f64::NAN)));
            recon_vars.push(ll);
            observed_dims += p.targets.len() * sd;
        }
        let mut total = recon_vars[0];
        for v in &recon_vars[1..] {
            total = tape.add(total, *v)?;
        }
        let mut loss = tape.neg(total)?;
        if beta != 0.0 {
            let mut k = kl_vars[0];
            for v in &kl_vars[1..] {
                k = tape.add(k, *v)?;
            }
            let k = tape.scale(k, c::<F>(beta))?;
            loss = tape.add(loss, k)?;
        }
        Ok(ElboTerms { loss, recon, kl, observed_dims })
    }
}

/// `sum log N(x; mean, sigma^2)` over all entries.
pub fn gaussian_ll<F: Real>(tape: &mut Tape<'_, F>, mean: Var, x: Var, sigma: f64) -> Result<Var> {
    let n = tape.value(x).len() as f64;
    let d = tape.sub(mean, x)?;
    let d2 = tape.square(d)?;
    let s = tape.sum(d2)?;
    let s = tape.scale(s, c::<F>(-0.5 / (sigma * sigma)))?;
    tape.add_scalar(s, c::<F>(-n * (sigma.ln() + 0.5 * LN_2PI)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::scene::{generate_scene, GenParams, ModalityTable};

    fn setup(fusion: FusionMode, m: usize) -> (ParameterStore<f64>, crate::scene::SceneRecord) {
        let table = ModalityTable::for_config(m, 4, 4).unwrap();
        let store = ParameterStore::init(&ModelConfig::tiny(fusion), &table, 1).unwrap();
        let params = GenParams { modalities: m, height: 4, width: 4, ..Default::default() };
        (store, generate_scene(5, 0, &params).unwrap())
    }

    #[test]
    fn empty_context_encodes_to_zero() {
        let (store, _) = setup(FusionMode::Apoe, 2);
        let g = Gmn::new(&store);
        let mut tape = g.tape();
        let r = g.encode(&mut tape, 0, &[]).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0; 8]);
    }

    #[test]
    fn renders_stay_in_range() {
        for fusion in FusionMode::ALL {
            let (store, scene) = setup(fusion, 5);
            let g = Gmn::new(&store);
            let mut tape = g.tape();
            let ep = Episode::sample(&scene, &[0, 1, 2, 3, 4], 0..=3, 2, &mut SeededRng::new(0)).unwrap();
            let (prior, _) = g.encode_episode(&mut tape, &ep).unwrap();
            let chain = g.prior_rollout(&mut tape, &prior, 3, &mut SeededRng::new(1)).unwrap();
            for m in 0..5 {
                let q = [scene.pairs[m][0].query.as_slice()];
                let out = g.render(&mut tape, &chain, m, &q).unwrap();
                assert_eq!(tape.shape(out), &[3, store.table.modalities[m].sense_dim]);
                let (lo, hi) = if m == 4 { (-1.0, 1.0) } else { (0.0, 1.0) };
                assert!(tape.value(out).data().iter().all(|v| (lo..=hi).contains(v)));
            }
        }
    }

    #[test]
    fn no_experts_without_universal_is_an_error() {
        let (mut store, _) = setup(FusionMode::Poe, 2);
        store.config.universal_expert = UniversalExpert::Never;
        let g = Gmn::new(&store);
        let mut tape = g.tape();
        assert!(g.prior_rollout(&mut tape, &[], 1, &mut SeededRng::new(0)).is_err());
        store.config.universal_expert = UniversalExpert::WhenEmpty;
        let g = Gmn::new(&store);
        let mut tape = g.tape();
        let chain = g.prior_rollout(&mut tape, &[], 1, &mut SeededRng::new(0)).unwrap();
        let p = chain.steps[0].prior.fused;
        assert!(tape.value(p.mean).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn elbo_needs_targets() {
        let (store, scene) = setup(FusionMode::Apoe, 2);
        let g = Gmn::new(&store);
        let mut tape = g.tape();
        let ep = Episode::sample(&scene, &[0, 1], 2..=2, 0, &mut SeededRng::new(0)).unwrap();
        assert!(g.elbo(&mut tape, &ep, 1.0, &mut SeededRng::new(0)).is_err());
    }
}
