use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes a `[3, H, W]` image in `[0, 1]` as binary P6, rounding half up.
pub fn write_ppm_bytes(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::shape("ppm", format!("expected [3, H, W], got {s:?}"))),
    };
    let d = image.data();
    if d.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Invalid("image values outside [0, 1]".into()));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..3 {
            out.push((d[ch * plane + i] as f64 * 255.0 + 0.5).floor() as u8);
        }
    }
    Ok(out)
}

pub fn export_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_ppm_bytes(image)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads a binary P6 file back into a `[3, H, W]` image of `byte / 255`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated { what: "ppm header".into() });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Data(format!("unsupported ppm header {fields:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad ppm dimension {s}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let payload = bytes.get(pos..pos + 3 * w * h).ok_or_else(|| Error::Truncated { what: "ppm payload".into() })?;
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = payload[3 * i + ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}
