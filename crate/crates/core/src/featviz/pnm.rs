//! Binary netpbm images: PGM (P5) for one channel, PPM (P6) for three.

use std::io::{self, Write};
use std::path::Path;

use crate::tensorcore::Tensor;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[C, H, W]` or `[1, C, H, W]` image with `C` of 1 or 3.
pub fn write_pnm(path: &Path, image: &Tensor) -> io::Result<()> {
    let s = image.shape();
    let (c, h, w) = match s.len() {
        3 => (s[0], s[1], s[2]),
        4 if s[0] == 1 => (s[1], s[2], s[3]),
        _ => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("not an image: {s:?}"))),
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{c} channels"))),
    };
    let mut out = Vec::with_capacity(h * w * c + 20);
    write!(out, "{magic}\n{w} {h}\n255\n")?;
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(image.data()[ch * plane + p]));
        }
    }
    std::fs::write(path, out)
}

/// Reads a P5/P6 file back to `[C, H, W]` in `[0, 1]`.
pub fn read_pnm(path: &Path) -> io::Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("unsupported magic")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    let raw = bytes.get(pos..pos + w * h * c).ok_or_else(|| bad("truncated pixels"))?;
    let mut data = vec![0.0; c * h * w];
    for (p, px) in raw.chunks(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + p] = v as f64 / max as f64;
        }
    }
    Tensor::new(vec![c, h, w], data).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = Tensor::new(vec![1, 2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        write_pnm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = read_pnm(&path).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn ppm_interleaves_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let img = Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, 1.0]).unwrap();
        write_pnm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 255]);
        assert_eq!(read_pnm(&path).unwrap(), img);
    }
}
