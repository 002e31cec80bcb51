//! 8-bit RGB PNG reading and writing for canvases in `[0, 1]`.

use std::path::Path;

use anagram_core::Image;
use image::{ImageFormat, RgbImage};

use crate::error::LabError;

pub fn write_png(path: &Path, canvas: &Image) -> Result<(), LabError> {
    if canvas.channels() != 3 {
        return Err(LabError::Data(format!(
            "{}: expected 3 channels, got {}",
            path.display(),
            canvas.channels()
        )));
    }
    if !canvas.is_finite() {
        return Err(LabError::Numeric(format!("{}: canvas is not finite", path.display())));
    }
    let buf = RgbImage::from_raw(canvas.width() as u32, canvas.height() as u32, canvas.quantize())
        .expect("buffer length matches the canvas shape");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| LabError::Data(format!("{}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> Result<Image, LabError> {
    let decoded = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => LabError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => LabError::Data(format!("{}: {other}", path.display())),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::from_u8(h as usize, w as usize, 3, rgb.as_raw())
        .map_err(|e| LabError::Data(format!("{}: {e}", path.display())))
}
