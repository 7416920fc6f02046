use std::time::Instant;

use crate::error::Result;
use crate::model::{Episode, FusionMode, Gmn, ModelConfig, ParamCount, ParameterStore, TrainConfig};
use crate::scene::{generate_scene, GenParams};
use crate::tensor::{adam_step, AdamState, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingSpec {
    pub modality_counts: Vec<usize>,
    pub modes: Vec<FusionMode>,
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            modality_counts: vec![2, 5, 8, 14],
            modes: FusionMode::ALL.to_vec(),
            height: 16,
            width: 16,
            warmup: 5,
            iterations: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub modalities: usize,
    pub mode: FusionMode,
    pub params: ParamCount,
    /// Mean wall time of one batch-1 training iteration.
    pub ms_per_iter: f64,
}

/// Parameter counts and per-iteration training time for fresh models.
pub fn scaling_report(model: &ModelConfig, spec: &ScalingSpec) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    let train = TrainConfig::default();
    for &m in &spec.modality_counts {
        let params = GenParams { modalities: m, height: spec.height, width: spec.width, ..Default::default() };
        let table = params.table()?;
        let scene = generate_scene(spec.seed, 0, &params)?;
        let all: Vec<usize> = (0..m).collect();
        for &mode in &spec.modes {
            let cfg = ModelConfig { fusion: mode, ..model.clone() };
            let mut store = ParameterStore::<f32>::init(&cfg, &table, spec.seed)?;
            let mut adam = AdamState::new(&store.tensors);
            let adam_cfg = train.adam();
            let mut rng = SeededRng::for_keys(spec.seed, &[m as u64]);
            let mut iterate = |store: &mut ParameterStore<f32>| -> Result<()> {
                let ep = Episode::sample(&scene, &all, train.context_max..=train.context_max, train.observations, &mut rng)?;
                let g = Gmn::new(&*store);
                let mut tape = g.tape();
                let t = g.elbo(&mut tape, &ep, 1.0, &mut rng)?;
                tape.backward(t.loss)?;
                let grads: Vec<Vec<f32>> = tape
                    .take_param_grads()
                    .into_iter()
                    .zip(&store.tensors)
                    .map(|(g, p)| g.unwrap_or_else(|| vec![0.0; p.len()]))
                    .collect();
                drop(tape);
                adam_step(&mut store.tensors, &grads, &mut adam, &adam_cfg)
            };
            for _ in 0..spec.warmup {
                iterate(&mut store)?;
            }
            let start = Instant::now();
            for _ in 0..spec.iterations {
                iterate(&mut store)?;
            }
            let ms = start.elapsed().as_secs_f64() * 1e3 / spec.iterations.max(1) as f64;
            rows.push(ScalingRow { modalities: m, mode, params: store.count(), ms_per_iter: ms });
        }
    }
    Ok(rows)
}
