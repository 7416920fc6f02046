use rayon::prelude::*;

use super::geometry::sample_viewpoint;
use super::haptic::simulate_grab;
use super::modality::{split_modalities, ModalityTable};
use super::object::gen_object;
use super::render::render_image;
use super::{Pair, SceneRecord, CAMERA_RADIUS, HAND_RADIUS};
use crate::error::{Error, Result};
use crate::tensor::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub modalities: usize,
    pub height: usize,
    pub width: usize,
    /// Candidate block counts; each scene picks one uniformly.
    pub parts: Vec<usize>,
    pub min_pairs: usize,
    pub max_pairs: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { modalities: 2, height: 16, width: 16, parts: vec![5], min_pairs: 20, max_pairs: 20 }
    }
}

impl GenParams {
    pub fn table(&self) -> Result<ModalityTable> {
        ModalityTable::for_config(self.modalities, self.height, self.width)
    }

    fn check(&self) -> Result<()> {
        if self.parts.is_empty() || self.parts.contains(&0) {
            return Err(Error::Config("part counts must be positive".into()));
        }
        if self.min_pairs > self.max_pairs {
            return Err(Error::Config("min_pairs exceeds max_pairs".into()));
        }
        Ok(())
    }
}

/// The scene with only the two base sensors (full image, full haptics).
pub fn generate_base_scene(seed: u64, index: u64, params: &GenParams) -> Result<SceneRecord> {
    params.check()?;
    let mut rng = SeededRng::for_keys(seed, &[index]);
    let parts = params.parts[rng.below(params.parts.len())];
    let object = gen_object(&mut rng, parts)?;
    let span = params.max_pairs - params.min_pairs + 1;
    let n_img = params.min_pairs + rng.below(span);
    let n_hap = params.min_pairs + rng.below(span);
    let mut images = Vec::with_capacity(n_img);
    for _ in 0..n_img {
        let q = sample_viewpoint(&mut rng, CAMERA_RADIUS).to_query();
        let img = render_image(&object, &q, params.height, params.width)?;
        images.push(Pair { query: q.to_vec(), sense: img.into_data() });
    }
    let mut haptics = Vec::with_capacity(n_hap);
    for _ in 0..n_hap {
        let q = sample_viewpoint(&mut rng, HAND_RADIUS).to_query();
        let h = simulate_grab(&object, &q, HAND_RADIUS)?;
        haptics.push(Pair { query: q.to_vec(), sense: h });
    }
    Ok(SceneRecord { object, pairs: vec![images, haptics] })
}

pub fn generate_scene(seed: u64, index: u64, params: &GenParams) -> Result<SceneRecord> {
    let base = generate_base_scene(seed, index, params)?;
    if params.modalities == 2 {
        return Ok(base);
    }
    split_modalities(&base, &params.table()?)
}

/// Scenes `0..count`; each is generated independently from its own stream.
pub fn generate_dataset(seed: u64, count: usize, params: &GenParams) -> Result<Vec<SceneRecord>> {
    params.table()?;
    (0..count as u64).into_par_iter().map(|i| generate_scene(seed, i, params)).collect()
}
