//! File formats: 16-bit PNG codecs for depth and normal maps, 8/16-bit
//! grayscale reading, and a small key=value camera file.
//!
//! Depth PNGs store `round(depth * 256)` in a 16-bit gray channel with
//! 0 reserved for invalid pixels, so depths are capped at 65535/256. A
//! valid depth that would quantize to 0 is written as 1 instead:
//! validity survives the round trip even when the value cannot.
//! Normal PNGs map each component from [-1, 1] onto [0, 65535] in RGB,
//! with the all-zero pixel reserved for invalid; decoding renormalizes.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::{vec3, NormalMap};
use crate::grid::{CameraIntrinsics, DepthMap, GrayImage, ValidityMask};

const DEPTH_SCALE: f64 = 256.0;
pub const MAX_ENCODABLE_DEPTH: f64 = 65535.0 / DEPTH_SCALE;

pub fn write_depth_png16<P: AsRef<Path>>(depth: &DepthMap, path: P) -> Result<()> {
    let (h, w) = depth.shape();
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let d = depth.get(r, c);
            let stored = if d > 0.0 {
                let q = (d * DEPTH_SCALE).round();
                if q > 65535.0 {
                    return Err(Error::DepthOutOfRange {
                        value: d,
                        max: MAX_ENCODABLE_DEPTH,
                    });
                }
                // Never let a valid pixel collapse onto the invalid code.
                (q as u16).max(1)
            } else {
                0
            };
            img.put_pixel(c as u32, r as u32, Luma([stored]));
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

pub fn read_depth_png16<P: AsRef<Path>>(path: P) -> Result<DepthMap> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let buf = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::FileFormat {
                path: path.to_path_buf(),
                what: format!("expected 16-bit grayscale, got {:?}", other.color()),
            });
        }
    };
    let (w, h) = buf.dimensions();
    let mut values = Vec::with_capacity((w * h) as usize);
    for px in buf.pixels() {
        values.push(px.0[0] as f64 / DEPTH_SCALE);
    }
    DepthMap::new(h as usize, w as usize, values)
}

fn encode_normal_channel(v: f64) -> u16 {
    (((v + 1.0) / 2.0 * 65535.0).round()).clamp(0.0, 65535.0) as u16
}

fn encode_normal_px(n: [f64; 3]) -> [u16; 3] {
    [
        encode_normal_channel(n[0]),
        encode_normal_channel(n[1]),
        encode_normal_channel(n[2]),
    ]
}

fn decode_normal_px(px: [u16; 3]) -> [f64; 3] {
    [
        px[0] as f64 / 65535.0 * 2.0 - 1.0,
        px[1] as f64 / 65535.0 * 2.0 - 1.0,
        px[2] as f64 / 65535.0 * 2.0 - 1.0,
    ]
}

/// Settles on codes that survive a decode, renormalize, and re-encode
/// unchanged, so writing a freshly read map reproduces its file byte
/// for byte. The renormalize step can shift a component across a
/// rounding boundary, so the naive codes are not always such a fixed
/// point; iterating reaches one, or a short cycle whose smallest
/// element serves as the canonical representative.
fn canonical_normal_px(n: [f64; 3]) -> [u16; 3] {
    let mut seen: Vec<[u16; 3]> = Vec::new();
    let mut code = encode_normal_px(n);
    loop {
        if let Some(pos) = seen.iter().position(|s| *s == code) {
            return *seen[pos..].iter().min().expect("cycle is non-empty");
        }
        seen.push(code);
        let back = vec3::normalize(decode_normal_px(code)).expect("codes stay near unit length");
        code = encode_normal_px(back);
    }
}

pub fn write_normals_png16<P: AsRef<Path>>(normals: &NormalMap, path: P) -> Result<()> {
    let (h, w) = normals.shape();
    let mut img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let px = match normals.get(r, c) {
                Some(n) => canonical_normal_px(n),
                None => [0, 0, 0],
            };
            img.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

pub fn read_normals_png16<P: AsRef<Path>>(path: P) -> Result<NormalMap> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let buf = match img {
        DynamicImage::ImageRgb16(buf) => buf,
        other => {
            return Err(Error::FileFormat {
                path: path.to_path_buf(),
                what: format!("expected 16-bit RGB, got {:?}", other.color()),
            });
        }
    };
    let (w, h) = buf.dimensions();
    let mut out = NormalMap::all_invalid(h as usize, w as usize)?;
    for (x, y, px) in buf.enumerate_pixels() {
        if px.0 == [0, 0, 0] {
            continue;
        }
        let raw = [
            px.0[0] as f64 / 65535.0 * 2.0 - 1.0,
            px.0[1] as f64 / 65535.0 * 2.0 - 1.0,
            px.0[2] as f64 / 65535.0 * 2.0 - 1.0,
        ];
        if vec3::norm(raw) < 1e-6 {
            return Err(Error::FileFormat {
                path: path.to_path_buf(),
                what: format!("normal at ({y}, {x}) has near-zero length"),
            });
        }
        let unit = vec3::normalize(raw).expect("length checked above");
        out.set_valid(y as usize, x as usize, unit);
    }
    Ok(out)
}

/// Reads an 8 or 16-bit grayscale PNG into [0, 1] intensities.
pub fn read_gray<P: AsRef<Path>>(path: P) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let (values, w, h) = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            let v = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            (v, w, h)
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let v = buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            (v, w, h)
        }
        other => {
            return Err(Error::FileFormat {
                path: path.to_path_buf(),
                what: format!("expected 8 or 16-bit grayscale, got {:?}", other.color()),
            });
        }
    };
    GrayImage::new(h as usize, w as usize, values)
}

/// Writes a binary mask as an 8-bit grayscale PNG, 255 for set bits.
pub fn write_mask_png8<P: AsRef<Path>>(mask: &ValidityMask, path: P) -> Result<()> {
    let (h, w) = mask.shape();
    let mut img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = if mask.get(r, c) { 255 } else { 0 };
            img.put_pixel(c as u32, r as u32, Luma([v]));
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

/// Parses a camera file of `fx=`, `fy=`, `ox=`, `oy=` lines, each
/// required exactly once. Blank lines and `#` comments are ignored.
pub fn read_intrinsics<P: AsRef<Path>>(path: P) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut seen: [Option<f64>; 4] = [None; 4];
    const KEYS: [&str; 4] = ["fx", "fy", "ox", "oy"];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("{}: expected key=value, got \"{line}\"", path.display()))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let slot = KEYS.iter().position(|k| *k == key).ok_or_else(|| {
            Error::Parse(format!("{}: unknown key \"{key}\"", path.display()))
        })?;
        if seen[slot].is_some() {
            return Err(Error::Parse(format!(
                "{}: duplicate key \"{key}\"",
                path.display()
            )));
        }
        let parsed: f64 = value.parse().map_err(|_| {
            Error::Parse(format!(
                "{}: invalid number \"{value}\" for {key}",
                path.display()
            ))
        })?;
        seen[slot] = Some(parsed);
    }
    for (slot, key) in KEYS.iter().enumerate() {
        if seen[slot].is_none() {
            return Err(Error::Parse(format!(
                "{}: missing key \"{key}\"",
                path.display()
            )));
        }
    }
    CameraIntrinsics::new(
        seen[0].unwrap(),
        seen[1].unwrap(),
        seen[2].unwrap(),
        seen[3].unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn png_path(dir: &TempDir, name: &str) -> std::path::PathBuf {
        dir.path().join(name)
    }

    #[test]
    fn depth_quantization() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "d.png");
        let depth = DepthMap::new(1, 3, vec![1.0, 3.14159, 0.0]).unwrap();
        write_depth_png16(&depth, &p).unwrap();

        let raw = image::open(&p).unwrap().into_luma16();
        assert_eq!(raw.get_pixel(0, 0).0[0], 256);
        assert_eq!(raw.get_pixel(1, 0).0[0], 804);
        assert_eq!(raw.get_pixel(2, 0).0[0], 0);

        let back = read_depth_png16(&p).unwrap();
        assert_eq!(back.get(0, 0), 1.0);
        assert_eq!(back.get(0, 1), 804.0 / 256.0);
        assert_eq!(back.get(0, 2), 0.0);
        assert!(!back.is_valid(0, 2));
    }

    #[test]
    fn tiny_valid_depth_stays_valid() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "d.png");
        let depth = DepthMap::new(1, 1, vec![0.001]).unwrap();
        write_depth_png16(&depth, &p).unwrap();
        let back = read_depth_png16(&p).unwrap();
        assert!(back.is_valid(0, 0));
        assert_eq!(back.get(0, 0), 1.0 / 256.0);
    }

    #[test]
    fn depth_over_range_is_rejected() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "d.png");
        let depth = DepthMap::new(1, 1, vec![256.0]).unwrap();
        match write_depth_png16(&depth, &p).unwrap_err() {
            Error::DepthOutOfRange { value, max } => {
                assert_eq!(value, 256.0);
                assert_eq!(max, 255.99609375);
            }
            other => panic!("unexpected {other:?}"),
        }
        let depth = DepthMap::new(1, 1, vec![255.998]).unwrap();
        write_depth_png16(&depth, &p).unwrap();
    }

    #[test]
    fn depth_reencode_is_byte_identical() {
        let dir = TempDir::new().unwrap();
        let a = png_path(&dir, "a.png");
        let b = png_path(&dir, "b.png");
        let depth = DepthMap::new(2, 2, vec![0.0, 0.004, 12.75, 100.125]).unwrap();
        write_depth_png16(&depth, &a).unwrap();
        let back = read_depth_png16(&a).unwrap();
        write_depth_png16(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn depth_rejects_other_color_types() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "gray8.png");
        let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::new(2, 2);
        img.save(&p).unwrap();
        assert!(matches!(
            read_depth_png16(&p),
            Err(Error::FileFormat { .. })
        ));
    }

    #[test]
    fn normals_encoding() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "n.png");
        let mut normals = NormalMap::all_invalid(1, 2).unwrap();
        normals.set_valid(0, 0, [0.0, 0.0, -1.0]);
        write_normals_png16(&normals, &p).unwrap();

        let raw = image::open(&p).unwrap().into_rgb16();
        assert_eq!(raw.get_pixel(0, 0).0, [32768, 32768, 0]);
        assert_eq!(raw.get_pixel(1, 0).0, [0, 0, 0]);

        let back = read_normals_png16(&p).unwrap();
        assert_eq!(back.get(0, 1), None);
        let n = back.get(0, 0).unwrap();
        let angle = vec3::dot(n, [0.0, 0.0, -1.0]).clamp(-1.0, 1.0).acos();
        assert!(angle.to_degrees() <= 0.01);
    }

    #[test]
    fn normals_roundtrip_angle_error_is_small() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "n.png");
        let mut normals = NormalMap::all_invalid(2, 3).unwrap();
        let samples: [[f64; 3]; 5] = [
            [0.3, -0.4, -0.5],
            [1.0, 2.0, -0.1],
            [-0.7, 0.1, -0.9],
            [0.0, 1.0, -1.0],
            [5.0, -3.0, -1.0],
        ];
        for (i, s) in samples.iter().enumerate() {
            normals.set_valid(i / 3, i % 3, vec3::normalize(*s).unwrap());
        }
        write_normals_png16(&normals, &p).unwrap();
        let back = read_normals_png16(&p).unwrap();
        assert_eq!(back.validity().popcount(), 5);
        for (i, s) in samples.iter().enumerate() {
            let got = back.get(i / 3, i % 3).unwrap();
            let want = vec3::normalize(*s).unwrap();
            let angle = vec3::dot(got, want).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle <= 0.01, "sample {i} off by {angle} deg");
        }
        // Same map written again encodes to the same bytes.
        let q = png_path(&dir, "n2.png");
        write_normals_png16(&normals, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn normals_reencode_is_byte_identical() {
        // Renormalizing on read can pull a component across a rounding
        // boundary, so the encoder settles each pixel on codes that
        // re-encode to themselves. A batch of awkward directions keeps
        // it honest.
        let dir = TempDir::new().unwrap();
        let a = png_path(&dir, "a.png");
        let b = png_path(&dir, "b.png");
        let mut normals = NormalMap::all_invalid(8, 8).unwrap();
        for i in 0..64 {
            let t = i as f64 / 64.0;
            let z = 2.0 * t - 1.0 + 1e-3;
            let phi = 37.0 * t;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let n = vec3::normalize([s * phi.cos(), s * phi.sin(), z]).unwrap();
            normals.set_valid(i / 8, i % 8, n);
        }
        write_normals_png16(&normals, &a).unwrap();
        let back = read_normals_png16(&a).unwrap();
        write_normals_png16(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn gray_reads_both_depths() {
        let dir = TempDir::new().unwrap();
        let p8 = png_path(&dir, "g8.png");
        let mut img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::new(2, 1);
        img.put_pixel(0, 0, Luma([0]));
        img.put_pixel(1, 0, Luma([255]));
        img.save(&p8).unwrap();
        let g = read_gray(&p8).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(g.get(0, 1), 1.0);

        let p16 = png_path(&dir, "g16.png");
        let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(1, 1);
        img.put_pixel(0, 0, Luma([13107]));
        img.save(&p16).unwrap();
        let g = read_gray(&p16).unwrap();
        assert!((g.get(0, 0) - 13107.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn mask_writes_binary_gray() {
        let dir = TempDir::new().unwrap();
        let p = png_path(&dir, "m.png");
        let mask = ValidityMask::new(2, 2, vec![true, false, false, true]).unwrap();
        write_mask_png8(&mask, &p).unwrap();
        let g = read_gray(&p).unwrap();
        assert_eq!(g.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    fn write_cam(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn intrinsics_parsing() {
        let dir = TempDir::new().unwrap();
        let p = write_cam(
            &dir,
            "cam.txt",
            "# camera\n\nfx = 721.5377\nfy=721.5377\nox=609.5593\noy = 172.854\n",
        );
        let cam = read_intrinsics(&p).unwrap();
        assert_eq!(cam.fx, 721.5377);
        assert_eq!(cam.oy, 172.854);

        for (body, needle) in [
            ("fx=1\nfy=1\nox=0\noy=0\nfx=2\n", "duplicate"),
            ("fx=1\nfy=1\nox=0\n", "missing key \"oy\""),
            ("fx=1\nfy=1\nox=0\noy=0\nskew=0\n", "unknown key"),
            ("fx=abc\nfy=1\nox=0\noy=0\n", "invalid number"),
            ("fx 1\nfy=1\nox=0\noy=0\n", "expected key=value"),
        ] {
            let p = write_cam(&dir, "bad.txt", body);
            match read_intrinsics(&p).unwrap_err() {
                Error::Parse(msg) => assert!(msg.contains(needle), "{msg}"),
                other => panic!("unexpected {other:?}"),
            }
        }

        let p = write_cam(&dir, "neg.txt", "fx=-1\nfy=1\nox=0\noy=0\n");
        assert!(read_intrinsics(&p).is_err());
    }
}
