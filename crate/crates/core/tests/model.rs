mod common;

use common::{fixed_episode, tiny_world};
use gmn::eval::{iwae_loglik, log_weights, TargetView};
use gmn::model::*;
use gmn::poe::{poe_fuse, DiagGaussian, GaussianVar};
use gmn::scene::{generate_dataset, GenParams, SceneRecord};
use gmn::tensor::{SeededRng, Tape};
use proptest::prelude::*;

fn value(tape: &Tape<'_, f64>, g: GaussianVar) -> DiagGaussian {
    g.to_value(tape)
}

#[test]
fn gradients_match_central_differences_on_every_path() {
    for (mode, probe, err, checked) in common::gradient_suite(1) {
        assert!(checked > 100, "{mode} {probe}: only {checked} scalars checked");
        assert!(err < 1e-4, "{mode} {probe}: relative error {err:e}");
    }
}

#[test]
fn encoding_is_a_permutation_invariant_sum() {
    let (store, scenes) = tiny_world(2, FusionMode::Apoe, 1);
    let pool = &scenes[0].pairs[1];
    let fwd: Vec<_> = pool.iter().collect();
    let rev: Vec<_> = pool.iter().rev().collect();
    let a = common::encode_values(&store, 1, &fwd);
    let b = common::encode_values(&store, 1, &rev);
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6));
    let one = common::encode_values(&store, 1, &[&pool[0]]);
    let two = common::encode_values(&store, 1, &[&pool[0], &pool[0]]);
    assert!(one.iter().zip(&two).all(|(x, y)| *y == 2.0 * x));
    assert!(common::encode_values(&store, 1, &[]).iter().all(|&v| v == 0.0));
}

#[test]
fn single_expert_chain_is_that_expert() {
    let (store, scenes) = tiny_world(2, FusionMode::Apoe, 2);
    let g = Gmn::new(&store);
    let mut t = g.tape();
    let pairs: Vec<_> = scenes[0].pairs[0][..3].iter().collect();
    let r = g.encode(&mut t, 0, &pairs).unwrap();
    let chain = g.prior_rollout(&mut t, &[Encoded { modality: 0, r }], 1, &mut SeededRng::new(1)).unwrap();
    for s in &chain.steps {
        assert_eq!(s.prior.experts, 1);
        assert_eq!(t.value(s.prior.fused.mean).data(), t.value(s.prior.expert_means).data());
        assert_eq!(t.value(s.prior.fused.log_precision).data(), t.value(s.prior.expert_log_precisions).data());
    }
}

#[test]
fn duplicated_expert_doubles_precision_and_keeps_mean() {
    for mode in [FusionMode::Apoe, FusionMode::Poe] {
        let (store, scenes) = tiny_world(2, mode, 3);
        let g = Gmn::new(&store);
        let mut t = g.tape();
        let pairs: Vec<_> = scenes[0].pairs[1][..2].iter().collect();
        let r = g.encode(&mut t, 1, &pairs).unwrap();
        let e = Encoded { modality: 1, r };
        let one = g.prior_rollout(&mut t, &[e], 1, &mut SeededRng::new(4)).unwrap();
        let two = g.prior_rollout(&mut t, &[e, e], 1, &mut SeededRng::new(4)).unwrap();
        // same first step input, so compare step 1 exactly
        let (a, b) = (value(&t, one.steps[0].prior.fused), value(&t, two.steps[0].prior.fused));
        for j in 0..a.dim() {
            assert!((b.log_precision[j] - a.log_precision[j] - 2f64.ln()).abs() < 1e-12);
            assert!((b.mean[j] - a.mean[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn fused_steps_match_value_fusion_of_the_experts() {
    for mode in FusionMode::ALL {
        let (store, scenes) = tiny_world(5, mode, 4);
        let g = Gmn::new(&store);
        let mut t = g.tape();
        let ep = fixed_episode(&scenes[0], 2, 1);
        let (prior, post) = g.encode_episode(&mut t, &ep).unwrap();
        let chain = g.posterior_rollout(&mut t, &prior, &post, 3, &mut SeededRng::new(5)).unwrap();
        let l = store.config.latent_dim;
        for s in &chain.steps {
            for f in [s.prior, s.posterior.unwrap()] {
                let means = t.value(f.expert_means).data().to_vec();
                let lps = t.value(f.expert_log_precisions).data().to_vec();
                let fused = value(&t, f.fused);
                let draws = chain.draws;
                for d in 0..draws {
                    let experts: Vec<DiagGaussian> = (0..f.experts)
                        .map(|e| {
                            let off = (e * draws + d) * l;
                            DiagGaussian::new(means[off..off + l].to_vec(), lps[off..off + l].to_vec()).unwrap()
                        })
                        .collect();
                    let want = poe_fuse(&experts).unwrap();
                    for j in 0..l {
                        assert!((fused.mean[d * l + j] - want.mean[j]).abs() < 1e-12, "{mode}");
                        assert!((fused.log_precision[d * l + j] - want.log_precision[j]).abs() < 1e-12, "{mode}");
                    }
                }
            }
        }
    }
}

#[test]
fn posterior_without_observations_is_the_prior() {
    for mode in FusionMode::ALL {
        let (store, scenes) = tiny_world(2, mode, 5);
        let g = Gmn::new(&store);
        let mut t = g.tape();
        let ep = fixed_episode(&scenes[0], 3, 0);
        let (prior, post) = g.encode_episode(&mut t, &ep).unwrap();
        let chain = g.posterior_rollout(&mut t, &prior, &post, 2, &mut SeededRng::new(6)).unwrap();
        for s in &chain.steps {
            let q = s.posterior.unwrap().fused;
            assert_eq!(t.value(q.mean).data(), t.value(s.prior.fused.mean).data());
            assert_eq!(t.value(q.log_precision).data(), t.value(s.prior.fused.log_precision).data());
        }
    }
}

#[test]
fn baseline_ignores_modality_order() {
    let (store, scenes) = tiny_world(5, FusionMode::BaselineSum, 6);
    let g = Gmn::new(&store);
    let mut t = g.tape();
    let ep = fixed_episode(&scenes[0], 2, 0);
    let (prior, _) = g.encode_episode(&mut t, &ep).unwrap();
    let mut rev = prior.clone();
    rev.reverse();
    let a = g.prior_rollout(&mut t, &prior, 1, &mut SeededRng::new(7)).unwrap();
    let b = g.prior_rollout(&mut t, &rev, 1, &mut SeededRng::new(7)).unwrap();
    for (x, y) in a.steps.iter().zip(&b.steps) {
        let (x, y) = (t.value(x.z).data().to_vec(), t.value(y.z).data().to_vec());
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}

#[test]
fn renders_are_in_range_and_repeatable() {
    let (store, scenes) = tiny_world(8, FusionMode::Poe, 7);
    let g = Gmn::new(&store);
    let mut t = g.tape();
    let ep = fixed_episode(&scenes[0], 2, 0);
    let (prior, _) = g.encode_episode(&mut t, &ep).unwrap();
    let chain = g.prior_rollout(&mut t, &prior, 3, &mut SeededRng::new(8)).unwrap();
    for m in 0..store.table.len() {
        let qs: Vec<&[f32]> = scenes[0].pairs[m].iter().map(|p| p.query.as_slice()).collect();
        let a = g.render(&mut t, &chain, m, &qs).unwrap();
        let b = g.render(&mut t, &chain, m, &qs).unwrap();
        assert_eq!(t.value(a).data(), t.value(b).data());
        let (lo, hi) = match store.table.modalities[m].base() {
            gmn::scene::BaseSensor::Image => (0.0, 1.0),
            gmn::scene::BaseSensor::Haptic => (-1.0, 1.0),
        };
        assert!(t.value(a).data().iter().all(|v| (lo..=hi).contains(v)));
        assert_eq!(t.shape(a), &[3 * qs.len(), store.table.modalities[m].sense_dim]);
    }
}

#[test]
fn zero_beta_leaves_only_reconstruction() {
    let (store, scenes) = tiny_world(2, FusionMode::Apoe, 8);
    let g = Gmn::new(&store);
    let ep = fixed_episode(&scenes[0], 1, 2);
    let mut t = g.tape();
    let terms = g.elbo(&mut t, &ep, 0.0, &mut SeededRng::new(9)).unwrap();
    assert_eq!(t.scalar(terms.loss), -terms.recon.iter().map(|r| r.1).fold(0.0, |a, b| a + b));
    assert!(terms.kl.iter().all(|&k| k >= 0.0));
    let mut t = g.tape();
    let full = g.elbo(&mut t, &ep, 1.0, &mut SeededRng::new(9)).unwrap();
    assert!((t.scalar(full.loss) - (-full.recon_total() + full.kl_total())).abs() < 1e-9);
}

#[test]
fn conjugate_elbo_never_exceeds_the_log_marginal() {
    let mut rng = SeededRng::new(10);
    for _ in 0..2000 {
        let m = LinearGaussian {
            prior_mean: rng.uniform_in(-2.0, 2.0),
            prior_var: rng.uniform_in(0.1, 3.0),
            a: rng.uniform_in(-2.0, 2.0),
            b: rng.uniform_in(-1.0, 1.0),
            noise_var: rng.uniform_in(0.05, 2.0),
            q_mean: rng.uniform_in(-2.0, 2.0),
            q_var: rng.uniform_in(0.05, 3.0),
        };
        let x = rng.uniform_in(-3.0, 3.0);
        assert!(m.elbo(x) <= m.log_marginal(x) + 1e-12);
    }
}

#[test]
fn conjugate_bounds_are_ordered() {
    let b = common::bound_ordering(400, 11);
    assert!(b.holds(), "elbo {} iwae50 {} ± {} iwae5000 {} truth {}", b.elbo, b.iwae50, b.iwae50_se, b.iwae5000, b.truth);
}

fn default_world(count: usize, seed: u64) -> (ParameterStore<f32>, Vec<SceneRecord>) {
    let params = GenParams::default();
    let store = ParameterStore::<f32>::init(&ModelConfig::default(), &params.table().unwrap(), seed).unwrap();
    (store, generate_dataset(seed, count, &params).unwrap())
}

#[test]
fn single_sample_iwae_is_the_sampled_elbo() {
    let (store, scenes) = default_world(3, 12);
    let g = Gmn::new(&store);
    for s in &scenes {
        let ep = fixed_episode(s, 4, 2);
        let iwae = iwae_loglik(&g, &ep, 1, TargetView::Native, &mut SeededRng::new(13)).unwrap();
        // same stream, so the same latent draw
        let mut t = g.tape();
        let recon = g.elbo(&mut t, &ep, 0.0, &mut SeededRng::new(13)).unwrap().recon_total();
        let mut t = g.tape();
        let (prior, post) = g.encode_episode(&mut t, &ep).unwrap();
        let chain = g.posterior_rollout(&mut t, &prior, &post, 1, &mut SeededRng::new(13)).unwrap();
        let mut ratio = 0.0;
        for st in &chain.steps {
            let z: Vec<f64> = t.value(st.z).data().iter().map(|&v| v as f64).collect();
            ratio += st.prior.fused.to_value(&t).log_prob(&z).unwrap() - st.posterior.unwrap().fused.to_value(&t).log_prob(&z).unwrap();
        }
        let sampled = recon + ratio;
        assert!((iwae - sampled).abs() < 1e-5 * sampled.abs().max(1.0), "{iwae} vs {sampled}");
    }
}

#[test]
fn iwae_bounds_the_elbo_and_grows_with_samples() {
    let (store, scenes) = default_world(200, 14);
    let g = Gmn::new(&store);
    let (mut gap_elbo, mut gap_k) = (Vec::new(), Vec::new());
    for (i, s) in scenes.iter().enumerate() {
        let ep = fixed_episode(s, 5, 2);
        let k50 = iwae_loglik(&g, &ep, 50, TargetView::Native, &mut SeededRng::new(i as u64)).unwrap();
        let k1 = iwae_loglik(&g, &ep, 1, TargetView::Native, &mut SeededRng::new(1000 + i as u64)).unwrap();
        let mut t = g.tape();
        let loss = g.elbo(&mut t, &ep, 1.0, &mut SeededRng::new(2000 + i as u64)).unwrap().loss;
        let elbo = -t.scalar(loss) as f64;
        gap_elbo.push(k50 - elbo);
        gap_k.push(k50 - k1);
    }
    for (name, gaps) in [("k50 - elbo", gap_elbo), ("k50 - k1", gap_k)] {
        let n = gaps.len() as f64;
        let m = gaps.iter().sum::<f64>() / n;
        let se = (gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(m >= -3.0 * se, "{name}: mean {m} se {se}");
    }
}

#[test]
fn log_weights_reject_bad_requests() {
    let (store, scenes) = default_world(1, 15);
    let g = Gmn::new(&store);
    let ep = fixed_episode(&scenes[0], 2, 0);
    assert!(log_weights(&g, &ep, 5, TargetView::Native, &mut SeededRng::new(1)).is_err());
    let ep = fixed_episode(&scenes[0], 2, 1);
    assert!(log_weights(&g, &ep, 0, TargetView::Native, &mut SeededRng::new(1)).is_err());
    // haptics have no luminance
    assert!(log_weights(&g, &ep, 2, TargetView::Gray, &mut SeededRng::new(1)).is_err());
}

#[test]
fn parameter_counts_follow_the_layer_shapes() {
    for m in [2, 5, 8, 14] {
        let table = GenParams { modalities: m, ..Default::default() }.table().unwrap();
        for mode in FusionMode::ALL {
            let cfg = ModelConfig { fusion: mode, ..Default::default() };
            let store = ParameterStore::<f32>::init(&cfg, &table, 0).unwrap();
            let listed: usize = store.tensors.iter().map(|t| t.len()).sum();
            assert_eq!(store.count(), param_count(&cfg, &table));
            assert_eq!(store.count().total(), listed);
        }
    }
    let t5 = GenParams { modalities: 5, ..Default::default() }.table().unwrap();
    let t14 = GenParams { modalities: 14, ..Default::default() }.table().unwrap();
    let inf = |mode, t| param_count(&ModelConfig { fusion: mode, ..Default::default() }, t).inference;
    assert_eq!(inf(FusionMode::Poe, &t14) * 5, inf(FusionMode::Poe, &t5) * 14);
    let cw = ModelConfig::default().cell_width;
    // the mask adds one input column per modality to the shared gate layer
    assert_eq!(inf(FusionMode::Apoe, &t14) - inf(FusionMode::Apoe, &t5), 9 * 2 * cw);
}

/// Context-shuffled copy of an episode.
fn shuffled<'s>(ep: &Episode<'s>, seed: u64) -> Episode<'s> {
    let mut rng = SeededRng::new(seed);
    Episode {
        parts: ep
            .parts
            .iter()
            .map(|p| {
                let mut c = p.context.clone();
                rng.shuffle(&mut c);
                Part { modality: p.modality, context: c, targets: p.targets.clone() }
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn context_order_does_not_move_the_elbo(seed in any::<u64>(), n in 0usize..=15) {
        let params = GenParams { modalities: 5, ..Default::default() };
        let store = ParameterStore::<f64>::init(&ModelConfig::default(), &params.table().unwrap(), 1).unwrap();
        let scene = gmn::scene::generate_scene(seed, 0, &params).unwrap();
        let ep = fixed_episode(&scene, n, 2);
        let g = Gmn::new(&store);
        let mut t = g.tape();
        let loss = g.elbo(&mut t, &ep, 1.0, &mut SeededRng::new(seed)).unwrap().loss;
        let a = t.scalar(loss);
        let mut t = g.tape();
        let loss = g.elbo(&mut t, &shuffled(&ep, seed ^ 1), 1.0, &mut SeededRng::new(seed)).unwrap().loss;
        let b = t.scalar(loss);
        prop_assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }

    #[test]
    fn context_size_never_changes_shapes(n in 0usize..=15, mode in prop::sample::select(FusionMode::ALL.to_vec())) {
        let params = GenParams::default();
        let cfg = ModelConfig { fusion: mode, ..ModelConfig::default() };
        let store = ParameterStore::<f32>::init(&cfg, &params.table().unwrap(), 2).unwrap();
        let scene = gmn::scene::generate_scene(3, 0, &params).unwrap();
        let ep = fixed_episode(&scene, n, 1);
        let g = Gmn::new(&store);
        let mut t = g.tape();
        let (prior, post) = g.encode_episode(&mut t, &ep).unwrap();
        for e in prior.iter().chain(&post) {
            prop_assert_eq!(t.shape(e.r), &[cfg.r_dim]);
        }
        let chain = g.posterior_rollout(&mut t, &prior, &post, 1, &mut SeededRng::new(4)).unwrap();
        prop_assert_eq!(chain.steps.len(), cfg.draw_steps);
        for s in &chain.steps {
            prop_assert_eq!(t.shape(s.z), &[1, cfg.latent_dim]);
        }
        let terms = g.elbo(&mut t, &ep, 1.0, &mut SeededRng::new(4)).unwrap();
        prop_assert!(t.scalar(terms.loss).is_finite());
        prop_assert!(terms.kl.iter().all(|&k| k >= 0.0));
    }
}
