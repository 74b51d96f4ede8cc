//! Image containers shared by the data, model and evaluation code, plus PNG
//! and tensor conversions.

use std::path::Path;

use ndarray::{Array2, Array3};
use tch::{Device, Kind, Tensor};

use crate::error::{shape, Error, Result};

/// RGB image, `(height, width, 3)`, values in `[0, 1]`.
pub type Rgb = Array3<f32>;

/// Binary mask, `(height, width)`.
pub type Mask = Array2<bool>;

pub fn blank(width: usize, height: usize) -> Rgb {
    Rgb::zeros((height, width, 3))
}

pub fn empty_mask(width: usize, height: usize) -> Mask {
    Mask::from_elem((height, width), false)
}

/// Quantizes to 8 bits, the precision every frame is stored with on disk.
pub fn quantize(img: &Rgb) -> Rgb {
    img.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

pub fn to_png_bytes(img: &Rgb) -> Result<Vec<u8>> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(shape(format!("expected 3 channels, got {c}")));
    }
    let raw: Vec<u8> = img
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| shape("rgb buffer size"))?;
    let mut out = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::Numerical(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn mask_to_png_bytes(mask: &Mask) -> Result<Vec<u8>> {
    let (h, w) = mask.dim();
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| shape("mask buffer size"))?;
    let mut out = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::Numerical(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn rgb_from_png_bytes(bytes: &[u8], path: &Path) -> Result<Rgb> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Rgb::from_shape_vec((h, w, 3), data).map_err(|e| Error::io(path, e))
}

pub fn mask_from_png_bytes(bytes: &[u8], path: &Path) -> Result<Mask> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<bool> = img.into_raw().into_iter().map(|v| v >= 128).collect();
    Mask::from_shape_vec((h, w), data).map_err(|e| Error::io(path, e))
}

pub fn save_png(img: &Rgb, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_png_bytes(img)?).map_err(|e| Error::io(path, e))
}

/// Stacks HWC images into an `(N, 3, H, W)` float tensor.
pub fn batch_to_tensor(images: &[&Rgb]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| shape("empty image batch"))?;
    let (h, w, c) = first.dim();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dim() != (h, w, c) {
            return Err(shape("images in a batch must share a shape"));
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_slice(&data)
        .view([images.len() as i64, h as i64, w as i64, c as i64])
        .permute([0, 3, 1, 2])
        .contiguous())
}

pub fn rgb_to_tensor(img: &Rgb) -> Result<Tensor> {
    batch_to_tensor(&[img])
}

/// Stacks masks into an `(N, 1, H, W)` tensor of zeros and ones.
pub fn masks_to_tensor(masks: &[&Mask]) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| shape("empty mask batch"))?;
    let (h, w) = first.dim();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.dim() != (h, w) {
            return Err(shape("masks in a batch must share a shape"));
        }
        data.extend(m.iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
    }
    Ok(Tensor::from_slice(&data).view([masks.len() as i64, 1, h as i64, w as i64]))
}

/// Converts one item of an `(N, 3, H, W)` tensor back to an HWC image.
pub fn tensor_to_rgb(t: &Tensor, index: i64) -> Result<Rgb> {
    let item = t
        .get(index)
        .to_device(Device::Cpu)
        .to_kind(Kind::Float)
        .permute([1, 2, 0])
        .contiguous();
    let dims = item.size();
    if dims.len() != 3 || dims[2] != 3 {
        return Err(shape(format!("expected (3, H, W) image tensor, got {dims:?}")));
    }
    let data = Vec::<f32>::try_from(&item.view([-1]))?;
    Rgb::from_shape_vec((dims[0] as usize, dims[1] as usize, 3), data)
        .map_err(|e| shape(e.to_string()))
}

/// Tiles images into a grid sheet (row-major), separated by `gap` black pixels.
pub fn tile(images: &[Rgb], columns: usize, gap: usize) -> Result<Rgb> {
    let first = images.first().ok_or_else(|| shape("no images to tile"))?;
    let (h, w, _) = first.dim();
    let columns = columns.max(1);
    let rows = images.len().div_ceil(columns);
    let mut sheet = Rgb::zeros((rows * h + (rows + 1) * gap, columns * w + (columns + 1) * gap, 3));
    for (i, img) in images.iter().enumerate() {
        if img.dim() != (h, w, 3) {
            return Err(shape("tiled images must share a shape"));
        }
        let (r, c) = (i / columns, i % columns);
        let (y0, x0) = (gap + r * (h + gap), gap + c * (w + gap));
        sheet
            .slice_mut(ndarray::s![y0..y0 + h, x0..x0 + w, ..])
            .assign(img);
    }
    Ok(sheet)
}
