use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::Sample;
use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::tensor::{Shape, Tensor};

/// Gray levels at or above this are mask positives.
pub const MASK_THRESHOLD: u8 = 128;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// `(1, 3, H, W)` with values `v / 255`.
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

/// Grayscale mask binarized at [`MASK_THRESHOLD`].
pub fn load_mask(path: &Path) -> Result<SegMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| (v >= MASK_THRESHOLD) as u8).collect();
    SegMask::new(h, w, data)
}

/// Loads an image/mask pair (and optional fold mask), resizing to
/// `size × size` when given.
pub fn load_sample(image: &Path, mask: &Path, hf: Option<&Path>, size: Option<usize>) -> Result<Sample> {
    let img = load_rgb(image)?;
    let m = load_mask(mask)?;
    let s = img.shape();
    if m.dims() != (s.h(), s.w()) {
        return Err(Error::Image {
            path: mask.to_path_buf(),
            message: format!(
                "mask is {}x{} but image {} is {}x{}",
                m.height(),
                m.width(),
                image.display(),
                s.h(),
                s.w()
            ),
        });
    }
    let hf = match hf {
        Some(p) => {
            let r = load_mask(p)?;
            if r.dims() != m.dims() {
                return Err(image_err(p, "fold mask size differs from mask"));
            }
            // Fold pixels are non-polyp by construction.
            Some(SegMask::from_fn(r.height(), r.width(), |y, x| r.get(y, x) && !m.get(y, x)))
        }
        None => None,
    };
    let id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let sample = Sample::new(img, m, hf, id)?;
    match size {
        Some(n) => sample.resized(n),
        None => Ok(sample),
    }
}

/// `round(255·clamp(p, 0, 1))`.
pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `(1, 3, H, W)` or `(3, H, W)`-laid-out tensor as RGB.
pub fn save_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.b() != 1 || s.c() != 3 {
        return Err(Error::shape("save_rgb", format!("expected (1, 3, H, W), got {s}")));
    }
    let (h, w) = (s.h(), s.w());
    let d = image.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| quantize(d[(c * h + y as usize) * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes `{0, 255}` grayscale.
pub fn save_mask(path: &Path, mask: &SegMask) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes a row-major `h × w` map in `[0, 1]` quantized by [`quantize`].
pub fn save_gray(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::shape("save_gray", format!("{} values for {h}x{w}", values.len())));
    }
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([quantize(values[y as usize * w + x as usize])]));
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_threshold_convention() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let img: GrayImage = ImageBuffer::from_raw(4, 1, vec![0, 127, 128, 255]).unwrap();
        img.save(&p).unwrap();
        assert_eq!(load_mask(&p).unwrap().data(), &[0, 0, 1, 1]);
    }

    #[test]
    fn white_mask_is_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_gray(&p, &[1.0; 6], 2, 3).unwrap();
        assert_eq!(load_mask(&p).unwrap().count(), 6);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/m.png");
        let m = SegMask::from_fn(7, 5, |r, c| (r * c) % 3 == 1);
        save_mask(&p, &m).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.2), 51);
        assert_eq!(quantize(-3.0), 0);
    }

    #[test]
    fn resize_on_load_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp, bad) = (dir.path().join("i.png"), dir.path().join("m.png"), dir.path().join("b.png"));
        let img = Tensor::from_fn(Shape::new(1, 3, 574, 500), |[_, c, h, w]| ((c + h + w) % 7) as f64 / 7.0);
        save_rgb(&ip, &img).unwrap();
        save_mask(&mp, &SegMask::from_fn(574, 500, |r, _| r > 300)).unwrap();
        save_mask(&bad, &SegMask::zeros(10, 10)).unwrap();
        let s = load_sample(&ip, &mp, None, Some(256)).unwrap();
        assert_eq!(s.dims(), (256, 256));
        assert_eq!(s.image.shape(), Shape::new(1, 3, 256, 256));
        assert_eq!(s.id, "i");
        let err = load_sample(&ip, &bad, None, None).unwrap_err().to_string();
        assert!(err.contains("10x10"), "{err}");
        assert!(load_sample(&dir.path().join("none.png"), &mp, None, None).is_err());
    }
}
