use super::haptic::{FIRST_GROUP, N_FEELERS};
use super::{Pair, SceneRecord};
use crate::error::{Error, Result};

pub const QUERY_DIM: usize = 5;
pub const MAX_RESOLUTION: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseSensor {
    Image,
    Haptic,
}

/// Which part of a base sensor a modality sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SliceRule {
    /// Rows `r0..r1`, columns `c0..c1` of the channels set in `channels` (bit 0 = R).
    Image { r0: u16, r1: u16, c0: u16, c1: u16, channels: u8 },
    /// Feeler rays `start..end`.
    Haptic { start: u16, end: u16 },
}

impl SliceRule {
    pub fn base(&self) -> BaseSensor {
        match self {
            SliceRule::Image { .. } => BaseSensor::Image,
            SliceRule::Haptic { .. } => BaseSensor::Haptic,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            SliceRule::Image { r0, r1, c0, c1, channels } => {
                channels.count_ones() as usize * (r1 - r0) as usize * (c1 - c0) as usize
            }
            SliceRule::Haptic { start, end } => (end - start) as usize,
        }
    }

    /// Flat indices into the base sense this rule selects, in sense order.
    pub fn indices(&self, height: usize, width: usize) -> Vec<usize> {
        match *self {
            SliceRule::Image { r0, r1, c0, c1, channels } => {
                let mut out = Vec::with_capacity(self.dim());
                for ch in 0..3 {
                    if channels >> ch & 1 == 0 {
                        continue;
                    }
                    for r in r0 as usize..r1 as usize {
                        for c in c0 as usize..c1 as usize {
                            out.push(ch * height * width + r * width + c);
                        }
                    }
                }
                out
            }
            SliceRule::Haptic { start, end } => (start as usize..end as usize).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityDescriptor {
    pub id: u8,
    pub name: String,
    pub query_dim: usize,
    pub sense_dim: usize,
    pub rule: SliceRule,
}

impl ModalityDescriptor {
    pub fn base(&self) -> BaseSensor {
        self.rule.base()
    }
}

/// The modality layout of a dataset: image resolution plus one descriptor per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityTable {
    pub height: usize,
    pub width: usize,
    pub modalities: Vec<ModalityDescriptor>,
}

const RGB: u8 = 0b111;

impl ModalityTable {
    /// Splits image and haptics into `count` ∈ {2, 5, 8, 14} modalities.
    pub fn for_config(count: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height % 2 != 0 || width % 2 != 0 {
            return Err(Error::Config(format!("resolution {height}x{width} must be even and positive")));
        }
        if height > MAX_RESOLUTION || width > MAX_RESOLUTION {
            return Err(Error::Config(format!("resolution above {MAX_RESOLUTION}")));
        }
        let (h, w) = (height as u16, width as u16);
        let (hh, hw) = (h / 2, w / 2);
        let full_haptic = [("haptic".to_string(), SliceRule::Haptic { start: 0, end: N_FEELERS as u16 })];
        let split_haptic = [
            ("haptic1".to_string(), SliceRule::Haptic { start: 0, end: FIRST_GROUP as u16 }),
            ("haptic2".to_string(), SliceRule::Haptic { start: FIRST_GROUP as u16, end: N_FEELERS as u16 }),
        ];
        let channel_names = ["r", "g", "b"];
        let mut rules: Vec<(String, SliceRule)> = Vec::new();
        match count {
            2 => {
                rules.push(("image".into(), SliceRule::Image { r0: 0, r1: h, c0: 0, c1: w, channels: RGB }));
                rules.extend(full_haptic);
            }
            5 => {
                for (name, r0, c0) in [("upper_left", 0, 0), ("upper_right", 0, hw), ("lower_left", hh, 0), ("lower_right", hh, hw)] {
                    rules.push((
                        format!("{name}_rgb"),
                        SliceRule::Image { r0, r1: r0 + hh, c0, c1: c0 + hw, channels: RGB },
                    ));
                }
                rules.extend(full_haptic);
            }
            8 => {
                for (side, c0) in [("left", 0), ("right", hw)] {
                    for (ch, cn) in channel_names.iter().enumerate() {
                        rules.push((
                            format!("{side}_{cn}"),
                            SliceRule::Image { r0: 0, r1: h, c0, c1: c0 + hw, channels: 1 << ch },
                        ));
                    }
                }
                rules.extend(split_haptic);
            }
            14 => {
                for (vert, r0) in [("upper", 0), ("lower", hh)] {
                    for (side, c0) in [("left", 0), ("right", hw)] {
                        for (ch, cn) in channel_names.iter().enumerate() {
                            rules.push((
                                format!("{vert}_{side}_{cn}"),
                                SliceRule::Image { r0, r1: r0 + hh, c0, c1: c0 + hw, channels: 1 << ch },
                            ));
                        }
                    }
                }
                rules.extend(split_haptic);
            }
            other => return Err(Error::Config(format!("unknown modality configuration {other}"))),
        }
        let modalities = rules
            .into_iter()
            .enumerate()
            .map(|(i, (name, rule))| ModalityDescriptor {
                id: i as u8,
                name,
                query_dim: QUERY_DIM,
                sense_dim: rule.dim(),
                rule,
            })
            .collect();
        let t = Self { height, width, modalities };
        t.validate()?;
        Ok(t)
    }

    pub fn base(height: usize, width: usize) -> Result<Self> {
        Self::for_config(2, height, width)
    }

    pub fn len(&self) -> usize {
        self.modalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modalities.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn base_dim(&self, b: BaseSensor) -> usize {
        match b {
            BaseSensor::Image => self.image_dim(),
            BaseSensor::Haptic => N_FEELERS,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    pub fn of_base(&self, b: BaseSensor) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.modalities[i].base() == b).collect()
    }

    /// Checks that the slice rules partition each base sensor: no gaps, no overlap.
    pub fn validate(&self) -> Result<()> {
        for b in [BaseSensor::Image, BaseSensor::Haptic] {
            let mut cover = vec![0u8; self.base_dim(b)];
            for m in self.modalities.iter().filter(|m| m.base() == b) {
                if m.sense_dim != m.rule.dim() {
                    return Err(Error::Data(format!("modality {} sense_dim mismatch", m.name)));
                }
                for i in m.rule.indices(self.height, self.width) {
                    let slot = cover.get_mut(i).ok_or_else(|| {
                        Error::Data(format!("modality {} reaches outside its base sensor", m.name))
                    })?;
                    *slot += 1;
                }
            }
            if cover.iter().any(|&c| c != 1) {
                return Err(Error::Data(format!("modalities do not partition the {b:?} sensor")));
            }
        }
        Ok(())
    }

    pub fn slice(&self, modality: usize, base_sense: &[f32]) -> Vec<f32> {
        self.modalities[modality]
            .rule
            .indices(self.height, self.width)
            .into_iter()
            .map(|i| base_sense[i])
            .collect()
    }

    /// Writes the senses of the given modalities back into their base sensor buffers.
    pub fn assemble(&self, parts: &[(usize, &[f32])]) -> (Vec<f32>, Vec<f32>) {
        let mut image = vec![f32::NAN; self.image_dim()];
        let mut haptic = vec![f32::NAN; N_FEELERS];
        for &(m, sense) in parts {
            let d = &self.modalities[m];
            let dst = match d.base() {
                BaseSensor::Image => &mut image,
                BaseSensor::Haptic => &mut haptic,
            };
            for (v, i) in sense.iter().zip(d.rule.indices(self.height, self.width)) {
                dst[i] = *v;
            }
        }
        (image, haptic)
    }
}

/// Re-expresses a base-sensor scene (image, haptic) under `table`'s modalities.
pub fn split_modalities(record: &SceneRecord, table: &ModalityTable) -> Result<SceneRecord> {
    if record.pairs.len() != 2 {
        return Err(Error::Invalid(format!(
            "expected a base record with 2 modalities, got {}",
            record.pairs.len()
        )));
    }
    let pairs = table
        .modalities
        .iter()
        .enumerate()
        .map(|(m, d)| {
            let src = match d.base() {
                BaseSensor::Image => &record.pairs[0],
                BaseSensor::Haptic => &record.pairs[1],
            };
            src.iter()
                .map(|p| {
                    if p.sense.len() != table.base_dim(d.base()) {
                        return Err(Error::shape("split", format!("base sense length {}", p.sense.len())));
                    }
                    Ok(Pair { query: p.query.clone(), sense: table.slice(m, &p.sense) })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneRecord { object: record.object.clone(), pairs })
}
