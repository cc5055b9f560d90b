//! 8-bit RGB images and binary PPM (P6) I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(w: usize, h: usize) -> Self {
        Image { w, h, data: vec![0; w * h * 3] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Planar `[3, h, w]` tensor in [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.w * self.h;
        let mut out = vec![0.0; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                out[c * plane + i] = self.data[i * 3 + c] as f64 / 255.0;
            }
        }
        Tensor::new(vec![3, self.h, self.w], out).unwrap()
    }

    /// Quantize a planar `[3, h, w]` value map in [0, 1] back to bytes.
    pub fn from_planes(h: usize, w: usize, planes: &[f64]) -> Result<Self> {
        if planes.len() != 3 * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {w}x{h} RGB image",
                planes.len()
            )));
        }
        let plane = w * h;
        let mut img = Image::new(w, h);
        for i in 0..plane {
            for c in 0..3 {
                let v = (planes[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.data[i * 3 + c] = v;
            }
        }
        Ok(img)
    }

    /// Mean luminance in [0, 1].
    pub fn mean_gray(&self) -> f64 {
        let sum: u64 = self.data.iter().map(|&b| b as u64).sum();
        sum as f64 / (self.data.len() as f64 * 255.0)
    }
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", img.w, img.h)?;
    w.write_all(&img.data)?;
    w.flush()?;
    Ok(())
}

/// Read a binary PPM. Comment lines (`#` to end of line) are tolerated
/// anywhere whitespace may appear in the header.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Data(format!("{}: not a binary PPM (P6)", path.display())));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data(format!("{}: malformed PPM header", path.display())));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Data(format!("{}: only maxval 255 supported", path.display())));
    }
    pos += 1; // the single whitespace byte after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::Data(format!("{}: truncated pixel data", path.display())));
    }
    Ok(Image { w, h, data: bytes[pos..pos + need].to_vec() })
}

/// Bilinear resize with corner-aligned sampling.
pub fn resize_bilinear(img: &Image, w: usize, h: usize) -> Image {
    if img.w == w && img.h == h {
        return img.clone();
    }
    let mut out = Image::new(w, h);
    let sx = if w > 1 { (img.w - 1) as f64 / (w - 1) as f64 } else { 0.0 };
    let sy = if h > 1 { (img.h - 1) as f64 / (h - 1) as f64 } else { 0.0 };
    for y in 0..h {
        let fy = y as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.h - 1);
        let dy = fy - y0 as f64;
        for x in 0..w {
            let fx = x as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.w - 1);
            let dx = fx - x0 as f64;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let p00 = img.get(x0, y0)[c] as f64;
                let p10 = img.get(x1, y0)[c] as f64;
                let p01 = img.get(x0, y1)[c] as f64;
                let p11 = img.get(x1, y1)[c] as f64;
                let v = p00 * (1.0 - dx) * (1.0 - dy)
                    + p10 * dx * (1.0 - dy)
                    + p01 * (1.0 - dx) * dy
                    + p11 * dx * dy;
                px[c] = v.round() as u8;
            }
            out.set(x, y, px);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("cgrn_ppm_{tag}"));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn roundtrip_bit_exact() {
        let mut img = Image::new(3, 2);
        img.data = vec![
            10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150, 160, 170, 180,
        ];
        let dir = tmpdir("roundtrip");
        let p = dir.join("a.ppm");
        write_ppm(&p, &img).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn comments_tolerated_on_read() {
        let dir = tmpdir("comments");
        let p = dir.join("c.ppm");
        let mut bytes = b"P6\n# a comment\n2 # inline\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&p, &bytes).unwrap();
        let img = read_ppm(&p).unwrap();
        assert_eq!((img.w, img.h), (2, 1));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_non_p6() {
        let dir = tmpdir("notp6");
        let p = dir.join("x.ppm");
        std::fs::write(&p, b"P3\n1 1\n255\n1 2 3\n").unwrap();
        assert!(read_ppm(&p).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn exact_halving_preserves_corners() {
        // 128x128 ramp down to 64x64: corner pixels must survive within
        // one gray level under corner-aligned bilinear sampling
        let mut img = Image::new(128, 128);
        for y in 0..128 {
            for x in 0..128 {
                img.set(x, y, [(x * 2) as u8, (y * 2) as u8, 7]);
            }
        }
        let small = resize_bilinear(&img, 64, 64);
        for (a, b) in [(0usize, 0usize), (63, 127)] {
            let orig = img.get(b, b);
            let got = small.get(a, a);
            for c in 0..3 {
                assert!(
                    (orig[c] as i16 - got[c] as i16).abs() <= 1,
                    "corner {a}: {orig:?} vs {got:?}"
                );
            }
        }
    }

    #[test]
    fn tensor_conversion_roundtrip() {
        let mut img = Image::new(2, 2);
        img.data = (0..12).map(|i| (i * 20) as u8).collect();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 2, 2]);
        let back = Image::from_planes(2, 2, t.data()).unwrap();
        assert_eq!(back, img);
    }
}
