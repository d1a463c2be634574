//! 8-bit image files: binary PGM/PPM (P5/P6) and PNG, chosen by extension.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, ImageEncoder, ImageFormat, Luma, Rgb};

use crate::error::{invalid, Error, Result};
use crate::image::{to_u8, Image};

fn codec(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Codec { path: path.to_path_buf(), source }
}

/// Reads a grayscale or colour image; values are divided by 255.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(codec(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let buf = img.to_luma8();
        let data = buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Image::from_vec(h, w, 1, data)
    } else {
        let buf = img.to_rgb8();
        let raw = buf.as_raw();
        Image::from_fn(h, w, 3, |c, i, j| raw[(i * w + j) * 3 + c] as f64 / 255.0)
    }
}

/// Writes an image with round-to-nearest quantization clamped to [0, 255].
///
/// `.pgm`/`.ppm`/`.pnm` produce binary P5 (gray) or P6 (colour); `.png` PNG.
pub fn write_image(path: impl AsRef<Path>, x: &Image) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "pgm" || ext == "ppm" || ext == "pnm" => ImageFormat::Pnm,
        Some(ext) if ext == "png" => ImageFormat::Png,
        _ => return Err(invalid(format!("unsupported image extension: {}", path.display()))),
    };
    let (h, w) = (x.height() as u32, x.width() as u32);
    let dynimg = if x.channels() == 1 {
        let raw = x.data().iter().map(|&v| to_u8(v)).collect();
        DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size"),
        )
    } else {
        let n = x.pixels();
        let mut raw = Vec::with_capacity(n * 3);
        for p in 0..n {
            for c in 0..3 {
                raw.push(to_u8(x.data()[c * n + p]));
            }
        }
        DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
    };
    if format == ImageFormat::Png {
        return dynimg.save_with_format(path, format).map_err(codec(path));
    }
    let subtype = if x.channels() == 1 {
        PnmSubtype::Graymap(SampleEncoding::Binary)
    } else {
        PnmSubtype::Pixmap(SampleEncoding::Binary)
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(subtype)
        .write_image(dynimg.as_bytes(), w, h, dynimg.color().into())
        .map_err(codec(path))
}

/// Image files (by supported extension) in `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Dataset {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm" | "png"))
            .unwrap_or(false);
        if ok {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_and_ppm_round_trip_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let gray = Image::from_fn(5, 7, 1, |_, i, j| ((i * 7 + j) * 7 % 256) as f64 / 255.0).unwrap();
        let p = dir.path().join("g.pgm");
        write_image(&p, &gray).unwrap();
        assert_eq!(&std::fs::read(&p).unwrap()[..2], b"P5");
        assert_eq!(read_image(&p).unwrap(), gray);

        let rgb = Image::from_fn(4, 3, 3, |c, i, j| ((c * 50 + i * 3 + j) % 256) as f64 / 255.0).unwrap();
        let p = dir.path().join("c.ppm");
        write_image(&p, &rgb).unwrap();
        assert_eq!(&std::fs::read(&p).unwrap()[..2], b"P6");
        assert_eq!(read_image(&p).unwrap(), rgb);

        let p = dir.path().join("c.png");
        write_image(&p, &rgb).unwrap();
        assert_eq!(read_image(&p).unwrap(), rgb);
    }

    #[test]
    fn writer_clamps_and_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let x = Image::from_vec(1, 4, 1, vec![-0.3, 1.7, 0.5 / 255.0 + 1e-9, 0.49 / 255.0]).unwrap();
        let p = dir.path().join("q.pgm");
        write_image(&p, &x).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 1.0 / 255.0, 0.0]);
        assert!(write_image(dir.path().join("x.bmp"), &x).is_err());
    }
}
