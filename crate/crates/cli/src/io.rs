//! Image and directory helpers for command inputs.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use splatfix_core::Image;

/// Reads an 8-bit RGB(A) PNG or a 3-channel `.f32img` file. Non-finite
/// pixels are rejected.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = read_image(path)?;
    if img.channels != 3 {
        bail!("{}: expected 3 channels, found {}", path.display(), img.channels);
    }
    if let Some(i) = img.data.iter().position(|v| !v.is_finite()) {
        bail!("{}: non-finite value at index {i}", path.display());
    }
    Ok(img)
}

fn read_image(path: &Path) -> Result<Image> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "f32img" {
        return Image::load_f32img(path).with_context(|| format!("reading {}", path.display()));
    }
    if ext != "png" {
        bail!("{}: expected a .png or .f32img file", path.display());
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().with_context(|| format!("decoding {}", path.display()))?;
    let mut buf = vec![0; reader.output_buffer_size().context("PNG too large")?];
    let info = reader.next_frame(&mut buf).with_context(|| format!("decoding {}", path.display()))?;
    if info.bit_depth != png::BitDepth::Eight {
        bail!("{}: only 8-bit PNGs are supported", path.display());
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => bail!("{}: unsupported PNG color type {other:?}", path.display()),
    };
    let data = buf[..info.buffer_size()]
        .chunks_exact(stride)
        .flat_map(|px| px[..3].iter().map(|&v| v as f32 / 255.0))
        .collect();
    Ok(Image::new(info.height as usize, info.width as usize, 3, data)?)
}

/// `scene_*` subdirectories of `dir`, sorted by name.
pub fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("scene_")))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_matches_eight_bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 3, 3, (0..18).map(|i| i as f32 / 17.0).collect()).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert!(load_image(&dir.path().join("a.jpg")).is_err());
    }

    #[test]
    fn non_finite_and_wrong_channel_images_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.f32img");
        let mut img = Image::filled(2, 2, &[0.5, 0.5, 0.5]);
        img.data[4] = f32::NAN;
        img.save_f32img(&p).unwrap();
        assert!(load_image(&p).unwrap_err().to_string().contains("non-finite"));
        Image::filled(2, 2, &[0.5]).save_f32img(&p).unwrap();
        assert!(load_image(&p).unwrap_err().to_string().contains("3 channels"));
    }

    #[test]
    fn scene_dirs_are_sorted_and_filtered() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["scene_002", "scene_000", "other"] {
            fs::create_dir(dir.path().join(n)).unwrap();
        }
        fs::write(dir.path().join("scene_001"), b"").unwrap();
        let names: Vec<String> = scene_dirs(dir.path()).unwrap().iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["scene_000", "scene_002"]);
    }
}
