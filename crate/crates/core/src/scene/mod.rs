//! Procedural multisensory scenes.
//!
//! Each scene holds one randomly colored block chain centered at the origin.
//! A camera on a sphere of radius [`CAMERA_RADIUS`] produces RGB images and a
//! hand on a sphere of radius [`HAND_RADIUS`] produces feeler-ray haptics.
//! Scenes are pure functions of `(seed, scene index)`.

mod dataset;
mod generate;
mod geometry;
mod haptic;
mod modality;
mod object;
mod ppm;
mod render;

pub(crate) use dataset::{read_table, write_table};
pub use dataset::{
    read_dataset, read_dataset_from, write_dataset, write_dataset_to, write_manifest, DatasetHeader, DATASET_MAGIC, DATASET_VERSION};
pub use generate::{generate_base_scene, generate_dataset, generate_scene, GenParams};
pub use geometry::{ray_box, sample_viewpoint, Face, Frame, Hit, Viewpoint, V3};
pub use haptic::{contact_code, feeler_offsets, grab_frame, simulate_grab, FIRST_GROUP, N_FEELERS};
pub use modality::{
    split_modalities, BaseSensor, ModalityDescriptor, ModalityTable, SliceRule, MAX_RESOLUTION, QUERY_DIM,
};
pub use object::{
    canonical_key_of, canonical_shape_key, gen_object, hsv_to_rgb, is_connected, lattice_rotations,
    rotate_coord, Coord, ObjectSpec,
};
pub use ppm::{export_ppm, read_ppm, write_ppm_bytes};
pub use render::{render_frame, render_image, BACKGROUND, SHADE_BOTTOM, SHADE_SIDE, SHADE_TOP, TAN_HALF_FOV};

pub const CAMERA_RADIUS: f64 = 4.0;
pub const HAND_RADIUS: f64 = 3.0;

/// One experience trial: a sensor query and what the sensor returned.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub query: Vec<f32>,
    pub sense: Vec<f32>,
}

/// A scene: the object plus, per modality, a pool of query/sense pairs.
///
/// Which pairs act as context and which as observations is decided when the
/// scene is used, not when it is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub object: ObjectSpec,
    pub pairs: Vec<Vec<Pair>>,
}

impl SceneRecord {
    /// Checks sense lengths and ranges against the modality table.
    pub fn validate(&self, table: &ModalityTable) -> crate::Result<()> {
        use crate::error::Error;
        if self.pairs.len() != table.len() {
            return Err(Error::Data(format!(
                "scene has {} modalities, table has {}",
                self.pairs.len(),
                table.len()
            )));
        }
        for (m, (pairs, d)) in self.pairs.iter().zip(&table.modalities).enumerate() {
            for p in pairs {
                if p.query.len() != d.query_dim || p.sense.len() != d.sense_dim {
                    return Err(Error::Data(format!("modality {m}: pair dimension mismatch")));
                }
                let (lo, hi) = match d.base() {
                    BaseSensor::Image => (0.0, 1.0),
                    BaseSensor::Haptic => (-1.0, 1.0),
                };
                if p.sense.iter().any(|v| !(lo..=hi).contains(v)) {
                    return Err(Error::Data(format!("modality {m}: sense outside [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }
}
