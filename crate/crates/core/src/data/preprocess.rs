use std::path::Path;

use autograd::Tensor;
use image::imageops::FilterType;
use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Side length of every network input.
pub const IMAGE_SIZE: usize = 128;

fn is_gray(c: ColorType) -> bool {
    matches!(c, ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16)
}

/// Decodes an image, resizes it bilinearly to `size x size` and scales to
/// `[0, 1]`; grayscale inputs are replicated to three channels.
pub fn preprocess_bytes(bytes: &[u8], size: usize) -> std::result::Result<Tensor<f32>, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    Ok(to_tensor(&img, size))
}

fn to_tensor(img: &DynamicImage, size: usize) -> Tensor<f32> {
    let s = size as u32;
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    if is_gray(img.color()) {
        let mut g = img.to_luma8();
        if g.dimensions() != (s, s) {
            g = image::imageops::resize(&g, s, s, FilterType::Triangle);
        }
        for (i, p) in g.pixels().enumerate() {
            let v = p.0[0] as f32 / 255.0;
            for c in 0..3 {
                data[c * plane + i] = v;
            }
        }
    } else {
        let mut rgb = img.to_rgb8();
        if rgb.dimensions() != (s, s) {
            rgb = image::imageops::resize(&rgb, s, s, FilterType::Triangle);
        }
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = p.0[c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(&[3, size, size], data)
}

/// [`preprocess_bytes`] on a file at the standard input size.
pub fn preprocess(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    preprocess_bytes(&bytes, IMAGE_SIZE).map_err(|message| Error::Image {
        path: path.to_path_buf(),
        message,
    })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[1|3, H, W]` tensor in `[0, 1]` as an 8-bit PNG.
pub fn save_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::Shape(format!("PNG export needs [1|3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let d = t.data();
    let result = if s[0] == 1 {
        GrayImage::from_raw(w as u32, h as u32, d.iter().map(|&v| to_u8(v)).collect())
            .expect("buffer size")
            .save_with_format(path, ImageFormat::Png)
    } else {
        let px: Vec<u8> = (0..plane)
            .flat_map(|i| (0..3).map(move |c| to_u8(d[c * plane + i])))
            .collect();
        RgbImage::from_raw(w as u32, h as u32, px)
            .expect("buffer size")
            .save_with_format(path, ImageFormat::Png)
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}
