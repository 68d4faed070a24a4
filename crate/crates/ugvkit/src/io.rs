//! Tensor files, image decoding and small file helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use ugvkit_core::{ImageBuffer, Tensor};

use crate::error::{Error, Result};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write via a sibling temporary file and rename, so readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
    drop(f);
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn tensor_write(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &t.to_bytes()?)
}

/// Read a tensor file; trailing bytes after the payload are rejected.
pub fn tensor_read(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let (t, used) = Tensor::from_bytes(&bytes).map_err(|e| Error::from(e).context(path.display()))?;
    if used != bytes.len() {
        return Err(Error::invalid(format!(
            "{}: {} trailing bytes after tensor payload",
            path.display(),
            bytes.len() - used
        )));
    }
    Ok(t)
}

/// Load a PNG or PNM image as RGB in `[0, 1]`. Grayscale is replicated to three
/// channels; 8-bit samples are divided by 255, 16-bit samples by 65535.
pub fn image_load(path: &Path) -> Result<ImageBuffer> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        other => {
            return Err(Error::invalid(format!(
                "{}: unsupported image format {other:?}, expected PNG or PPM",
                path.display()
            )))
        }
    }
    let img = reader
        .decode()
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    image_to_buffer(&img)
}

pub fn image_to_buffer(img: &DynamicImage) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = img.to_rgb32f();
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for (k, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + k] = px.0[c];
        }
    }
    Ok(ImageBuffer::new(h, w, data)?)
}
