use super::geometry::{nearest_hit, norm, Frame, Viewpoint};
use super::object::ObjectSpec;
use crate::error::{Error, Result};

pub const N_FEELERS: usize = 32;
/// Rays `0..FIRST_GROUP` form the first haptic group when haptics are split.
pub const FIRST_GROUP: usize = 18;
const FAN_COLS: usize = 8;
const FAN_ROWS: usize = 4;
const FAN_U: f64 = 0.7;
const FAN_V: f64 = 0.5;

/// Image-plane offsets of the feeler fan in the palm frame, row-major.
pub fn feeler_offsets() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(N_FEELERS);
    for r in 0..FAN_ROWS {
        for c in 0..FAN_COLS {
            let u = -FAN_U + 2.0 * FAN_U * c as f64 / (FAN_COLS - 1) as f64;
            let v = -FAN_V + 2.0 * FAN_V * r as f64 / (FAN_ROWS - 1) as f64;
            out.push((u, v));
        }
    }
    out
}

/// Maps a contact distance in `[0, 2R]` affinely onto `[1, -1]`; misses read -1.
pub fn contact_code(distance: Option<f64>, radius: f64) -> f32 {
    match distance {
        None => -1.0,
        Some(d) => (1.0 - d.clamp(0.0, 2.0 * radius) / radius) as f32,
    }
}

/// Deterministic grab: 32 feeler rays cast from the hand pose toward the object.
pub fn simulate_grab(o: &ObjectSpec, hand_query: &[f32], radius: f64) -> Result<Vec<f32>> {
    let vp = Viewpoint::from_query(hand_query)?;
    let r = norm(vp.position);
    if (r - radius).abs() > 1e-3 * radius {
        return Err(Error::Invalid(format!("hand at distance {r}, expected {radius}")));
    }
    grab_frame(o, &vp.frame()?, radius)
}

pub fn grab_frame(o: &ObjectSpec, frame: &Frame, radius: f64) -> Result<Vec<f32>> {
    let centers = o.centered_blocks();
    feeler_offsets()
        .into_iter()
        .map(|(u, v)| {
            let dir = frame.direction(u, v).ok_or_else(|| Error::Invalid("degenerate feeler".into()))?;
            Ok(contact_code(nearest_hit(frame.origin, dir, &centers).map(|(_, h)| h.t), radius))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_no_contact() {
        let q = Viewpoint::facing_origin([0.0, 3.0, 0.0]).to_query();
        let h = simulate_grab(&ObjectSpec::empty(), &q, 3.0).unwrap();
        assert_eq!(h, vec![-1.0; N_FEELERS]);
    }

    #[test]
    fn off_sphere_hand_is_rejected() {
        let q = Viewpoint::facing_origin([0.0, 5.0, 0.0]).to_query();
        assert!(simulate_grab(&ObjectSpec::empty(), &q, 3.0).is_err());
    }

    #[test]
    fn codes_stay_in_range() {
        assert_eq!(contact_code(Some(0.0), 3.0), 1.0);
        assert_eq!(contact_code(Some(6.0), 3.0), -1.0);
        assert_eq!(contact_code(Some(60.0), 3.0), -1.0);
        assert_eq!(contact_code(Some(3.0), 3.0), 0.0);
    }
}
