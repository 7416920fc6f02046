use crate::error::{Error, Result};
use crate::tensor::SeededRng;

pub type Coord = [i8; 3];

const STEPS: [Coord; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// A polycube: unit cubes on the integer lattice, one color per block.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub blocks: Vec<Coord>,
    pub colors: Vec<[f32; 3]>,
}

impl ObjectSpec {
    /// Validates distinctness, face-connectivity and color range.
    pub fn new(blocks: Vec<Coord>, colors: Vec<[f32; 3]>) -> Result<Self> {
        if blocks.len() != colors.len() {
            return Err(Error::Invalid(format!(
                "{} blocks but {} colors",
                blocks.len(),
                colors.len()
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            if blocks[..i].contains(b) {
                return Err(Error::Invalid(format!("duplicate block {b:?}")));
            }
        }
        if !is_connected(&blocks) {
            return Err(Error::Invalid("blocks are not face-connected".into()));
        }
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Invalid("color channel outside [0, 1]".into()));
        }
        Ok(Self { blocks, colors })
    }

    pub fn empty() -> Self {
        Self { blocks: Vec::new(), colors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        if self.blocks.is_empty() {
            return [0.0; 3];
        }
        let n = self.blocks.len() as f64;
        let mut c = [0.0; 3];
        for b in &self.blocks {
            for k in 0..3 {
                c[k] += b[k] as f64;
            }
        }
        c.map(|v| v / n)
    }

    /// Block centers in world space, with the object centroid at the origin.
    pub fn centered_blocks(&self) -> Vec<[f64; 3]> {
        let c = self.centroid();
        self.blocks.iter().map(|b| [b[0] as f64 - c[0], b[1] as f64 - c[1], b[2] as f64 - c[2]]).collect()
    }
}

pub fn is_connected(blocks: &[Coord]) -> bool {
    if blocks.len() <= 1 {
        return true;
    }
    let mut seen = vec![false; blocks.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for (j, b) in blocks.iter().enumerate() {
            if !seen[j] && adjacent(blocks[i], *b) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn adjacent(a: Coord, b: Coord) -> bool {
    let d: i32 = (0..3).map(|k| (a[k] as i32 - b[k] as i32).abs()).sum();
    d == 1
}

/// HSV (all components in [0, 1]) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32].map(|x| x.clamp(0.0, 1.0))
}

/// Random block chain: a self-avoiding lattice walk from the origin that
/// backtracks out of dead ends. Hue in (0, 1), saturation in (0, 0.75), value 1.
pub fn gen_object(rng: &mut SeededRng, n_parts: usize) -> Result<ObjectSpec> {
    if n_parts == 0 {
        return Err(Error::Invalid("objects need at least one block".into()));
    }
    let mut path: Vec<Coord> = vec![[0, 0, 0]];
    // untried directions per path position
    let mut options: Vec<Vec<Coord>> = vec![shuffled_steps(rng)];
    while path.len() < n_parts {
        let top = path.len() - 1;
        match options[top].pop() {
            Some(step) => {
                let cur = path[top];
                let next = [cur[0] + step[0], cur[1] + step[1], cur[2] + step[2]];
                if !path.contains(&next) {
                    path.push(next);
                    options.push(shuffled_steps(rng));
                }
            }
            None => {
                // dead end
                path.pop();
                options.pop();
                if path.is_empty() {
                    path.push([0, 0, 0]);
                    options.push(shuffled_steps(rng));
                }
            }
        }
    }
    let colors = (0..n_parts)
        .map(|_| {
            let h = rng.uniform();
            let s = rng.uniform_in(0.0, 0.75);
            hsv_to_rgb(h, s, 1.0)
        })
        .collect();
    ObjectSpec::new(path, colors)
}

fn shuffled_steps(rng: &mut SeededRng) -> Vec<Coord> {
    let mut s = STEPS.to_vec();
    rng.shuffle(&mut s);
    s
}

/// The 24 proper rotations of the cube as integer matrices.
pub fn lattice_rotations() -> Vec<[[i8; 3]; 3]> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u8 {
            let mut m = [[0i8; 3]; 3];
            for (row, &col) in p.iter().enumerate() {
                m[row][col] = if signs >> row & 1 == 1 { -1 } else { 1 };
            }
            if det3(&m) == 1 {
                out.push(m);
            }
        }
    }
    out
}

fn det3(m: &[[i8; 3]; 3]) -> i32 {
    let m = m.map(|r| r.map(|v| v as i32));
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn rotate_coord(m: &[[i8; 3]; 3], c: Coord) -> Coord {
    let mut out = [0i8; 3];
    for (r, row) in m.iter().enumerate() {
        out[r] = row[0] * c[0] + row[1] * c[1] + row[2] * c[2];
    }
    out
}

/// Shape identity up to lattice translation and proper rotation: the
/// lexicographically smallest sorted, origin-normalized block list over
/// all 24 rotations.
pub fn canonical_shape_key(o: &ObjectSpec) -> Vec<u8> {
    canonical_key_of(&o.blocks)
}

pub fn canonical_key_of(blocks: &[Coord]) -> Vec<u8> {
    lattice_rotations()
        .iter()
        .map(|m| {
            let mut pts: Vec<Coord> = blocks.iter().map(|b| rotate_coord(m, *b)).collect();
            let mut lo = [i8::MAX; 3];
            for p in &pts {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                }
            }
            for p in &mut pts {
                for k in 0..3 {
                    p[k] -= lo[k];
                }
            }
            pts.sort_unstable();
            let mut key = Vec::with_capacity(1 + 3 * pts.len());
            key.push(pts.len() as u8);
            key.extend(pts.iter().flat_map(|p| p.map(|v| v as u8)));
            key
        })
        .min()
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_part_is_one_block_at_origin() {
        let o = gen_object(&mut SeededRng::new(1), 1).unwrap();
        assert_eq!(o.blocks, vec![[0, 0, 0]]);
        assert_eq!(o.colors.len(), 1);
    }

    #[test]
    fn generated_objects_are_valid_chains() {
        let mut rng = SeededRng::new(9);
        for n in 1..=8 {
            for _ in 0..50 {
                let o = gen_object(&mut rng, n).unwrap();
                assert_eq!(o.len(), n);
                for w in o.blocks.windows(2) {
                    assert!(adjacent(w[0], w[1]));
                }
                for c in o.colors.iter().flatten() {
                    assert!((0.0..=1.0).contains(c));
                }
                // value fixed at 1: the largest channel is always 1
                for c in &o.colors {
                    assert!((c.iter().cloned().fold(0.0f32, f32::max) - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn there_are_24_rotations() {
        let r = lattice_rotations();
        assert_eq!(r.len(), 24);
        for (i, a) in r.iter().enumerate() {
            assert!(!r[..i].contains(a));
        }
    }

    #[test]
    fn triominoes_have_two_classes() {
        let straight = vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]];
        let l_shape = vec![[0, 0, 0], [1, 0, 0], [1, 1, 0]];
        assert_ne!(canonical_key_of(&straight), canonical_key_of(&l_shape));
        let mut keys = std::collections::BTreeSet::new();
        let mut rng = SeededRng::new(4);
        for _ in 0..500 {
            keys.insert(canonical_shape_key(&gen_object(&mut rng, 3).unwrap()));
        }
        assert_eq!(keys.len(), 2);
    }

    #[test]
    fn key_is_rotation_and_translation_invariant() {
        let o = gen_object(&mut SeededRng::new(12), 6).unwrap();
        let k = canonical_shape_key(&o);
        for m in lattice_rotations() {
            let moved: Vec<Coord> = o
                .blocks
                .iter()
                .map(|b| {
                    let r = rotate_coord(&m, *b);
                    [r[0] + 3, r[1] - 2, r[2] + 1]
                })
                .collect();
            assert_eq!(canonical_key_of(&moved), k);
        }
    }

    #[test]
    fn invalid_objects_are_rejected() {
        let c = [0.5f32; 3];
        assert!(ObjectSpec::new(vec![[0, 0, 0], [0, 0, 0]], vec![c, c]).is_err());
        assert!(ObjectSpec::new(vec![[0, 0, 0], [2, 0, 0]], vec![c, c]).is_err());
        assert!(ObjectSpec::new(vec![[0, 0, 0]], vec![[1.5, 0.0, 0.0]]).is_err());
        assert!(gen_object(&mut SeededRng::new(0), 0).is_err());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(1.0 / 3.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(0.5, 0.0, 1.0), [1.0, 1.0, 1.0]);
    }
}
