use super::geometry::{nearest_hit, Frame, Viewpoint};
use super::object::ObjectSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BACKGROUND: [f32; 3] = [0.8, 0.9, 1.0];
pub const SHADE_TOP: f32 = 1.0;
pub const SHADE_SIDE: f32 = 0.8;
pub const SHADE_BOTTOM: f32 = 0.6;
/// Half-extent of the image plane at unit focal distance.
pub const TAN_HALF_FOV: f64 = 0.75;

/// Perspective ray-cast of the object's unit cubes into a `[3, H, W]` image.
pub fn render_image(o: &ObjectSpec, query: &[f32], height: usize, width: usize) -> Result<Tensor<f32>> {
    let frame = Viewpoint::from_query(query)?.frame()?;
    render_frame(o, &frame, height, width)
}

/// Renders from an explicit sensor frame.
pub fn render_frame(o: &ObjectSpec, frame: &Frame, height: usize, width: usize) -> Result<Tensor<f32>> {
    if height == 0 || width == 0 {
        return Err(Error::Invalid("image resolution must be positive".into()));
    }
    let centers = o.centered_blocks();
    let plane = height * width;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..height {
        for j in 0..width {
            let u = ((j as f64 + 0.5) / width as f64 * 2.0 - 1.0) * TAN_HALF_FOV;
            let v = (1.0 - (i as f64 + 0.5) / height as f64 * 2.0) * TAN_HALF_FOV;
            let dir = frame.direction(u, v).ok_or_else(|| Error::Invalid("degenerate view ray".into()))?;
            let rgb = match nearest_hit(frame.origin, dir, &centers) {
                None => BACKGROUND,
                Some((block, hit)) => {
                    let shade = match (hit.face.axis, hit.face.positive) {
                        (2, true) => SHADE_TOP,
                        (2, false) => SHADE_BOTTOM,
                        _ => SHADE_SIDE,
                    };
                    o.colors[block].map(|c| c * shade)
                }
            };
            for (ch, value) in rgb.iter().enumerate() {
                data[ch * plane + i * width + j] = *value;
            }
        }
    }
    Tensor::new(vec![3, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_renders_background() {
        let q = Viewpoint::facing_origin([0.0, 4.0, 1.0]).to_query();
        let img = render_image(&ObjectSpec::empty(), &q, 8, 8).unwrap();
        for ch in 0..3 {
            assert!(img.data()[ch * 64..(ch + 1) * 64].iter().all(|&v| v == BACKGROUND[ch]));
        }
    }

    #[test]
    fn side_face_is_shaded() {
        let color = [0.9f32, 0.4, 0.2];
        let o = ObjectSpec::new(vec![[0, 0, 0]], vec![color]).unwrap();
        let q = Viewpoint::facing_origin([4.0, 0.0, 0.0]).to_query();
        let img = render_image(&o, &q, 16, 16).unwrap();
        for ch in 0..3 {
            assert_eq!(img.data()[ch * 256 + 8 * 16 + 8], color[ch] * SHADE_SIDE);
        }
    }

    #[test]
    fn top_face_from_above() {
        let color = [0.3f32, 0.6, 0.9];
        let o = ObjectSpec::new(vec![[0, 0, 0]], vec![color]).unwrap();
        let q = Viewpoint::facing_origin([0.0, 0.0, 4.0]).to_query();
        let img = render_image(&o, &q, 16, 16).unwrap();
        assert_eq!(img.data()[8 * 16 + 8], color[0] * SHADE_TOP);
    }
}
