//! 8-bit image file I/O: PNG via the `image` crate, raw PGM/PPM by hand.

use std::fs;
use std::path::Path;

use crate::error::{Result, SthqError};
use crate::pipelines::data::GrayImage;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn luma(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

pub fn read_image(path: &Path) -> Result<GrayImage> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "pgm" || ext == "ppm" => read_pnm(path),
        _ => read_png(path),
    }
}

pub fn write_image(path: &Path, img: &GrayImage) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "pgm" => write_pgm(path, img),
        Some(ext) if ext == "ppm" => write_ppm(path, img),
        _ => write_png(path, img),
    }
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| SthqError::Decode(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.into_raw().into_iter().map(|p| p as f64 / 255.0).collect();
    Ok(GrayImage::new(w, h, pixels))
}

fn write_png(path: &Path, img: &GrayImage) -> Result<()> {
    let buf: Vec<u8> = img.pixels.iter().map(|&v| to_u8(v)).collect();
    let out = image::GrayImage::from_raw(img.w as u32, img.h as u32, buf)
        .expect("buffer matches dimensions");
    out.save(path).map_err(|e| SthqError::Decode(format!("{}: {e}", path.display())))
}

/// Binary PGM (P5) / PPM (P6), 8-bit, comments allowed in the header.
fn read_pnm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| SthqError::Decode(format!("{}: {msg}", path.display()));
    if bytes.len() < 2 {
        return Err(bad("truncated header"));
    }
    let color = match &bytes[0..2] {
        b"P5" => false,
        b"P6" => true,
        _ => return Err(bad("not a binary PGM/PPM")),
    };
    // parse three ASCII fields (width, height, maxval) ignoring comments
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
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
            return Err(bad("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("bad header number"))?;
    }
    if fields[2] != 255 {
        return Err(bad("only 8-bit maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let (w, h) = (fields[0], fields[1]);
    let per_pixel = if color { 3 } else { 1 };
    if bytes.len() < pos + w * h * per_pixel {
        return Err(bad("truncated pixel data"));
    }
    let mut pixels = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let o = pos + i * per_pixel;
        if color {
            pixels.push(luma(bytes[o], bytes[o + 1], bytes[o + 2]));
        } else {
            pixels.push(bytes[o] as f64 / 255.0);
        }
    }
    Ok(GrayImage::new(w, h, pixels))
}

fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend(img.pixels.iter().map(|&v| to_u8(v)));
    fs::write(path, out)?;
    Ok(())
}

fn write_ppm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    for &v in &img.pixels {
        let b = to_u8(v);
        out.extend_from_slice(&[b, b, b]);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::data::texture;
    use crate::rng::SeedTree;

    #[test]
    fn pgm_roundtrip_is_exact_at_8_bit() {
        let tree = SeedTree::new(9);
        let img = texture(16, &mut tree.stream("io"));
        let dir = std::env::temp_dir().join("sthq-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.pgm");
        write_pgm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((to_u8(*a) as f64 / 255.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn png_roundtrip_is_exact_at_8_bit() {
        let tree = SeedTree::new(10);
        let img = texture(16, &mut tree.stream("io"));
        let dir = std::env::temp_dir().join("sthq-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((to_u8(*a) as f64 / 255.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ppm_reads_back_as_gray() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]);
        let dir = std::env::temp_dir().join("sthq-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert!(back.pixels[0] < 0.01 && back.pixels[1] > 0.99);
    }
}
