//! Binary netpbm (P5 grey, P6 RGB, maxval 255) and the synthetic clean corpus.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rand_noise::Prng;
use crate::tensor::Tensor;

/// An image is a `[C, H, W]` tensor with values in `[0, 1]`.
pub type Image = Tensor<f32>;

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a P5/P6 byte stream. `path` is only used in error messages.
pub fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(path, "truncated header"));
        }
        Ok(&bytes[start..pos])
    };
    let channels = match token()? {
        b"P5" => 1,
        b"P6" => 3,
        m => {
            return Err(image_err(
                path,
                format!("unsupported magic {:?}, expected P5 or P6", String::from_utf8_lossy(m)),
            ))
        }
    };
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, format!("bad {what} {:?}", String::from_utf8_lossy(t))))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(image_err(path, format!("unsupported bit depth: maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(image_err(path, "zero-sized image"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| image_err(path, format!("raster has {} bytes, expected {n}", bytes.len().saturating_sub(pos))))?;
    let mut data = vec![0.0f32; n];
    for (i, &b) in raster.iter().enumerate() {
        // interleaved → planar
        let (p, c) = (i / channels, i % channels);
        data[c * width * height + p] = b as f32 / 255.0;
    }
    Tensor::new([channels, height, width], data)
}

/// Encodes a `[1|3, H, W]` image, rounding to the nearest 8-bit level after
/// clamping to `[0, 1]`.
pub fn encode_netpbm(img: &Image) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        s => {
            return Err(Error::InvalidShape {
                op: "encode_netpbm",
                shape: s.to_vec(),
                reason: "expected [1|3, H, W]".into(),
            })
        }
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(plane * c);
    for p in 0..plane {
        for ch in 0..c {
            let v = img.data()[ch * plane + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes, path)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_netpbm(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn is_netpbm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Every `.pgm`/`.ppm`/`.pnm` file in `dir`, in lexicographic filename order.
pub fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, Image)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_netpbm(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("corpus directory has no .pgm/.ppm files"));
    }
    paths
        .into_iter()
        .map(|p| {
            let img = read_image(&p)?;
            Ok((p, img))
        })
        .collect()
}

/// Piecewise-smooth grey images: a gradient background with overlaid discs,
/// rectangles and a sinusoidal texture patch. Values stay inside
/// `[0.1, 0.9]` so added noise is rarely clipped.
pub fn synthetic_image(prng: &mut Prng, channels: usize, size: usize) -> Image {
    let (h, w) = (size, size);
    let mut planes = vec![0.0f64; channels * h * w];
    let gx = prng.uniform_range(-0.3, 0.3);
    let gy = prng.uniform_range(-0.3, 0.3);
    let base: Vec<f64> = (0..channels).map(|_| prng.uniform_range(0.35, 0.65)).collect();
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64 - 0.5;
                let v = y as f64 / h as f64 - 0.5;
                planes[(c * h + y) * w + x] = base[c] + gx * u + gy * v;
            }
        }
    }
    let shapes = 3 + prng.below(5);
    for _ in 0..shapes {
        let level: Vec<f64> = (0..channels).map(|_| prng.uniform_range(0.15, 0.85)).collect();
        let cx = prng.uniform_range(0.0, w as f64);
        let cy = prng.uniform_range(0.0, h as f64);
        let r = prng.uniform_range(0.08, 0.3) * size as f64;
        let kind = prng.below(3);
        let (fx, fy, phase) = (
            prng.uniform_range(0.1, 0.6),
            prng.uniform_range(0.1, 0.6),
            prng.uniform_range(0.0, std::f64::consts::TAU),
        );
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = match kind {
                    0 => dx * dx + dy * dy <= r * r,
                    _ => dx.abs() <= r && dy.abs() <= 0.6 * r,
                };
                if !inside {
                    continue;
                }
                for c in 0..channels {
                    let mut v = level[c];
                    if kind == 2 {
                        v += 0.12 * (fx * x as f64 + fy * y as f64 + phase).sin();
                    }
                    planes[(c * h + y) * w + x] = v;
                }
            }
        }
    }
    let data = planes.into_iter().map(|v| v.clamp(0.1, 0.9) as f32).collect();
    Tensor::new([channels, h, w], data).expect("consistent extents")
}

pub fn synthetic_corpus(prng: &mut Prng, count: usize, channels: usize, size: usize) -> Vec<Image> {
    (0..count).map(|_| synthetic_image(prng, channels, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_decodes_and_round_trips() {
        let bytes: Vec<u8> = b"P5\n# comment\n3 2\n255\n".iter().copied().chain([0, 128, 255, 1, 2, 3]).collect();
        let img = decode_netpbm(&bytes, Path::new("x.pgm")).unwrap();
        assert_eq!(img.shape(), &[1, 2, 3]);
        assert_eq!(img.data()[2], 1.0);
        let again = encode_netpbm(&img).unwrap();
        assert_eq!(decode_netpbm(&again, Path::new("y.pgm")).unwrap(), img);
    }

    #[test]
    fn ppm_red_pixel_normalises() {
        let bytes: Vec<u8> = b"P6 1 1 255\n".iter().copied().chain([255, 0, 0]).collect();
        let img = decode_netpbm(&bytes, Path::new("r.ppm")).unwrap();
        assert_eq!(img.shape(), &[3, 1, 1]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn every_byte_value_round_trips() {
        let raster: Vec<u8> = (0..=255u8).collect();
        let bytes: Vec<u8> = b"P5\n16 16\n255\n".iter().copied().chain(raster.iter().copied()).collect();
        let img = decode_netpbm(&bytes, Path::new("all.pgm")).unwrap();
        assert_eq!(encode_netpbm(&img).unwrap(), bytes);
    }

    #[test]
    fn errors_name_the_problem() {
        let e = decode_netpbm(b"P5\n2 2\n65535\n", Path::new("deep.pgm")).unwrap_err().to_string();
        assert!(e.contains("deep.pgm") && e.contains("bit depth"), "{e}");
        let e = decode_netpbm(b"P5\n2 2\n255\n\x00", Path::new("short.pgm")).unwrap_err().to_string();
        assert!(e.contains("short.pgm") && e.contains("raster"), "{e}");
        let e = decode_netpbm(b"P2\n2 2\n255\n", Path::new("ascii.pgm")).unwrap_err().to_string();
        assert!(e.contains("P2"), "{e}");
    }

    #[test]
    fn synthetic_images_are_seeded_and_bounded() {
        let a = synthetic_image(&mut Prng::new(4), 1, 32);
        let b = synthetic_image(&mut Prng::new(4), 1, 32);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.1..=0.9).contains(&v)));
        assert_ne!(a, synthetic_image(&mut Prng::new(5), 1, 32));
    }
}
