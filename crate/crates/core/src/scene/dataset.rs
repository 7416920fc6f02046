//! Little-endian binary dataset format.
//!
//! ```text
//! header:
//!   magic "GMNS" | version u32 | height u16 | width u16 | modality count u16
//!   per modality: id u8 | name len u16 | name utf8 | query_dim u32 | sense_dim u32
//!                 | rule tag u8 (0 image, 1 haptic)
//!                 | image: r0 r1 c0 c1 u16, channel mask u8 | haptic: start end u16
//!   scene count u64 | min pairs u32 | max pairs u32 | seed u64
//! per scene:
//!   block count u32 | blocks (i8 x3) | colors (f32 x3 per block)
//!   per modality: pair count u32 | per pair: query f32 x query_dim, sense f32 x sense_dim
//! ```

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::modality::{ModalityDescriptor, ModalityTable, SliceRule};
use super::object::ObjectSpec;
use super::{Pair, SceneRecord};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"GMNS";
pub const DATASET_VERSION: u32 = 1;
const MAX_BLOCKS: u32 = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub table: ModalityTable,
    pub scene_count: u64,
    pub min_pairs: u32,
    pub max_pairs: u32,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn new(table: ModalityTable, scene_count: u64, min_pairs: u32, max_pairs: u32, seed: u64) -> Self {
        Self { version: DATASET_VERSION, table, scene_count, min_pairs, max_pairs, seed }
    }
}

fn truncated(what: impl Into<String>) -> impl FnOnce(io::Error) -> Error {
    let what = what.into();
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated { what }
        } else {
            Error::Io(e)
        }
    }
}

pub(crate) fn write_table<W: Write>(w: &mut W, table: &ModalityTable) -> Result<()> {
    w.write_u16::<LE>(table.height as u16)?;
    w.write_u16::<LE>(table.width as u16)?;
    w.write_u16::<LE>(table.modalities.len() as u16)?;
    for m in &table.modalities {
        w.write_u8(m.id)?;
        w.write_u16::<LE>(m.name.len() as u16)?;
        w.write_all(m.name.as_bytes())?;
        w.write_u32::<LE>(m.query_dim as u32)?;
        w.write_u32::<LE>(m.sense_dim as u32)?;
        match m.rule {
            SliceRule::Image { r0, r1, c0, c1, channels } => {
                w.write_u8(0)?;
                for v in [r0, r1, c0, c1] {
                    w.write_u16::<LE>(v)?;
                }
                w.write_u8(channels)?;
            }
            SliceRule::Haptic { start, end } => {
                w.write_u8(1)?;
                w.write_u16::<LE>(start)?;
                w.write_u16::<LE>(end)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn read_table<R: Read>(r: &mut R) -> Result<ModalityTable> {
    let t = truncated("header");
    let mut inner = || -> io::Result<(usize, usize, Vec<ModalityDescriptor>)> {
        let height = r.read_u16::<LE>()? as usize;
        let width = r.read_u16::<LE>()? as usize;
        let n = r.read_u16::<LE>()? as usize;
        let mut mods = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.read_u8()?;
            let len = r.read_u16::<LE>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let query_dim = r.read_u32::<LE>()? as usize;
            let sense_dim = r.read_u32::<LE>()? as usize;
            let rule = match r.read_u8()? {
                0 => {
                    let r0 = r.read_u16::<LE>()?;
                    let r1 = r.read_u16::<LE>()?;
                    let c0 = r.read_u16::<LE>()?;
                    let c1 = r.read_u16::<LE>()?;
                    let channels = r.read_u8()?;
                    SliceRule::Image { r0, r1, c0, c1, channels }
                }
                1 => {
                    let start = r.read_u16::<LE>()?;
                    let end = r.read_u16::<LE>()?;
                    SliceRule::Haptic { start, end }
                }
                tag => {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unknown slice rule tag {tag}")))
                }
            };
            let name = String::from_utf8(name)
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "modality name is not utf-8"))?;
            mods.push(ModalityDescriptor { id, name, query_dim, sense_dim, rule });
        }
        Ok((height, width, mods))
    };
    let (height, width, modalities) = inner().map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData => Error::Data(e.to_string()),
        _ => t(e),
    })?;
    let table = ModalityTable { height, width, modalities };
    table.validate()?;
    Ok(table)
}

pub fn write_header<W: Write>(w: &mut W, h: &DatasetHeader) -> Result<()> {
    w.write_all(&DATASET_MAGIC)?;
    w.write_u32::<LE>(h.version)?;
    write_table(w, &h.table)?;
    w.write_u64::<LE>(h.scene_count)?;
    w.write_u32::<LE>(h.min_pairs)?;
    w.write_u32::<LE>(h.max_pairs)?;
    w.write_u64::<LE>(h.seed)?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<DatasetHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("header"))?;
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: DATASET_MAGIC, found: magic });
    }
    let version = r.read_u32::<LE>().map_err(truncated("header"))?;
    if version != DATASET_VERSION {
        return Err(Error::Version { expected: DATASET_VERSION, found: version });
    }
    let table = read_table(r)?;
    let mut tail = || -> io::Result<(u64, u32, u32, u64)> {
        Ok((r.read_u64::<LE>()?, r.read_u32::<LE>()?, r.read_u32::<LE>()?, r.read_u64::<LE>()?))
    };
    let (scene_count, min_pairs, max_pairs, seed) = tail().map_err(truncated("header"))?;
    Ok(DatasetHeader { version, table, scene_count, min_pairs, max_pairs, seed })
}

fn write_scene<W: Write>(w: &mut W, s: &SceneRecord, h: &DatasetHeader, index: usize) -> Result<()> {
    if s.pairs.len() != h.table.len() {
        return Err(Error::Data(format!("scene {index}: modality count mismatch")));
    }
    w.write_u32::<LE>(s.object.blocks.len() as u32)?;
    for b in &s.object.blocks {
        for v in b {
            w.write_i8(*v)?;
        }
    }
    for c in &s.object.colors {
        for v in c {
            w.write_f32::<LE>(*v)?;
        }
    }
    for (pairs, d) in s.pairs.iter().zip(&h.table.modalities) {
        let n = pairs.len() as u32;
        if n < h.min_pairs || n > h.max_pairs {
            return Err(Error::Data(format!("scene {index}: {n} pairs outside header bounds")));
        }
        w.write_u32::<LE>(n)?;
        for p in pairs {
            if p.query.len() != d.query_dim || p.sense.len() != d.sense_dim {
                return Err(Error::Data(format!("scene {index}: pair dimension mismatch in {}", d.name)));
            }
            for v in p.query.iter().chain(&p.sense) {
                w.write_f32::<LE>(*v)?;
            }
        }
    }
    Ok(())
}

fn read_scene<R: Read>(r: &mut R, h: &DatasetHeader, index: usize) -> Result<SceneRecord> {
    let what = format!("scene {index}");
    let t = || truncated(what.clone());
    let n_blocks = r.read_u32::<LE>().map_err(t())?;
    if n_blocks > MAX_BLOCKS {
        return Err(Error::Data(format!("scene {index}: {n_blocks} blocks")));
    }
    let mut blocks = Vec::with_capacity(n_blocks as usize);
    for _ in 0..n_blocks {
        let mut b = [0i8; 3];
        r.read_i8_into(&mut b).map_err(t())?;
        blocks.push(b);
    }
    let mut colors = Vec::with_capacity(n_blocks as usize);
    for _ in 0..n_blocks {
        let mut c = [0f32; 3];
        r.read_f32_into::<LE>(&mut c).map_err(t())?;
        colors.push(c);
    }
    let object = ObjectSpec::new(blocks, colors).map_err(|e| Error::Data(format!("scene {index}: {e}")))?;
    let mut pairs = Vec::with_capacity(h.table.len());
    for d in &h.table.modalities {
        let n = r.read_u32::<LE>().map_err(t())?;
        if n < h.min_pairs || n > h.max_pairs {
            return Err(Error::Data(format!("scene {index}: {n} pairs for {} outside header bounds", d.name)));
        }
        let mut list = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let mut query = vec![0f32; d.query_dim];
            let mut sense = vec![0f32; d.sense_dim];
            r.read_f32_into::<LE>(&mut query).map_err(t())?;
            r.read_f32_into::<LE>(&mut sense).map_err(t())?;
            list.push(Pair { query, sense });
        }
        pairs.push(list);
    }
    Ok(SceneRecord { object, pairs })
}

pub fn write_dataset_to<W: Write>(w: &mut W, header: &DatasetHeader, scenes: &[SceneRecord]) -> Result<()> {
    if header.scene_count != scenes.len() as u64 {
        return Err(Error::Data(format!(
            "header announces {} scenes, got {}",
            header.scene_count,
            scenes.len()
        )));
    }
    write_header(w, header)?;
    for (i, s) in scenes.iter().enumerate() {
        write_scene(w, s, header, i)?;
    }
    Ok(())
}

pub fn read_dataset_from<R: Read>(r: &mut R) -> Result<(DatasetHeader, Vec<SceneRecord>)> {
    let header = read_header(r)?;
    let scenes = (0..header.scene_count as usize)
        .map(|i| read_scene(r, &header, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, scenes))
}

pub fn write_dataset(path: impl AsRef<Path>, header: &DatasetHeader, scenes: &[SceneRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_dataset_to(&mut w, header, scenes)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<SceneRecord>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    read_dataset_from(&mut r)
}

/// Plain-text `key=value` manifest, one entry per line, in the given order.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(&str, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(count: u64) -> DatasetHeader {
        DatasetHeader::new(ModalityTable::base(4, 4).unwrap(), count, 0, 20, 7)
    }

    #[test]
    fn header_only_file_reads_as_empty() {
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &header(0), &[]).unwrap();
        let (h, scenes) = read_dataset_from(&mut buf.as_slice()).unwrap();
        assert_eq!(h, header(0));
        assert!(scenes.is_empty());
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &header(0), &[]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset_from(&mut bad.as_slice()), Err(Error::BadMagic { .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_dataset_from(&mut bad.as_slice()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn truncation_names_the_scene() {
        let params = super::super::GenParams { height: 4, width: 4, min_pairs: 2, max_pairs: 3, ..Default::default() };
        let scenes = super::super::generate_dataset(1, 3, &params).unwrap();
        let h = DatasetHeader::new(params.table().unwrap(), 3, 2, 3, 1);
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &h, &scenes).unwrap();
        buf.truncate(buf.len() - 10);
        match read_dataset_from(&mut buf.as_slice()) {
            Err(Error::Truncated { what }) => assert_eq!(what, "scene 2"),
            other => panic!("expected truncation, got {other:?}"),
        }
    }
}
