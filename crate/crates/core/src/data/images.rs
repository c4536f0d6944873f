use std::path::Path;

use image::{ColorType, GrayImage, ImageFormat, ImageReader};

use crate::nn::Tensor;

use super::{index_of, DataError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub ids: Vec<String>,
    /// `[N × C × H × W]`, values in `[0, 1]`.
    pub images: Tensor,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let idx = index_of(&self.ids, ids)?;
        Ok(Self {
            ids: ids.to_vec(),
            images: self.images.gather_rows(&idx)?,
        })
    }
}

fn read_gray(path: &Path, expected: (usize, usize)) -> Result<Vec<u8>> {
    let image_err = |message: String| DataError::Image {
        path: path.to_path_buf(),
        message,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| image_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| image_err(e.to_string()))?;
    let img = reader.decode().map_err(|e| image_err(e.to_string()))?;
    if img.color() != ColorType::L8 {
        return Err(image_err(format!("expected 8-bit grayscale, found {:?}", img.color())));
    }
    let actual = (img.height() as usize, img.width() as usize);
    if actual != expected {
        return Err(DataError::ImageDims {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(img.into_luma8().into_raw())
}

/// Loads the images listed in a two-column `id,path` manifest. Relative
/// paths resolve against `dir`. Only single-channel images are supported;
/// `shape` is `[1, H, W]`.
pub fn load_images(dir: &Path, manifest: &Path, shape: [usize; 3]) -> Result<ImageDataset> {
    if shape[0] != 1 {
        return Err(DataError::Invalid(format!(
            "grayscale images have 1 channel, configuration asks for {}",
            shape[0]
        )));
    }
    let csv_err = |source| DataError::Csv {
        path: manifest.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn {
            path: manifest.to_path_buf(),
            column: name.into(),
        })
    };
    let (id_col, path_col) = (col("id")?, col("path")?);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let id = record.get(id_col).unwrap_or("").to_string();
        let rel = record.get(path_col).unwrap_or("");
        if id.is_empty() || rel.is_empty() {
            return Err(DataError::Invalid(format!(
                "{}: line {}: empty id or path",
                manifest.display(),
                record.position().map_or(0, |p| p.line())
            )));
        }
        let pixels = read_gray(&dir.join(rel), (shape[1], shape[2]))?;
        data.extend(pixels.into_iter().map(|p| p as f32 / 255.0));
        ids.push(id);
    }
    index_of(&ids, &[])?;
    let mut dims = vec![ids.len()];
    dims.extend(shape);
    Ok(ImageDataset {
        ids,
        images: Tensor::new(dims, data)?,
    })
}

/// Writes one `[H × W]` plane of values in `[0, 1]` as a binary PGM.
pub fn write_pgm(path: &Path, plane: &[f32], height: usize, width: usize) -> Result<()> {
    let bytes: Vec<u8> = plane.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(width as u32, height as u32, bytes).ok_or_else(|| {
        DataError::Invalid(format!("plane of {} values is not {height}x{width}", plane.len()))
    })?;
    img.save_with_format(path, ImageFormat::Pnm).map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
