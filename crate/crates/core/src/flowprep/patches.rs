use std::path::Path;

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::color::FlowMapImage;
use crate::arrays::{ArrayFile, NamedArray};
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Where a patch was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub frame_idx: usize,
    pub row: usize,
    pub col: usize,
}

/// `N x window x window x 3` patches scaled to `[-1, 1]`, with per-patch provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Array4<f32>,
    pub provenance: Vec<PatchOrigin>,
}

impl PatchBatch {
    pub fn new(patches: Array4<f32>, provenance: Vec<PatchOrigin>) -> Result<Self> {
        if patches.len_of(Axis(0)) != provenance.len() {
            return Err(Error::Shape(format!(
                "{} patches but {} provenance entries",
                patches.len_of(Axis(0)),
                provenance.len()
            )));
        }
        if patches.len_of(Axis(0)) == 0 {
            return Err(Error::Data("patch batch is empty".into()));
        }
        if patches.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::Data("patch values must lie in [-1, 1]".into()));
        }
        Ok(Self { patches, provenance })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn window(&self) -> usize {
        self.patches.len_of(Axis(1))
    }

    /// Concatenate batches in order.
    pub fn concat(batches: &[PatchBatch]) -> Result<PatchBatch> {
        if batches.is_empty() {
            return Err(Error::Data("nothing to concatenate".into()));
        }
        let views: Vec<_> = batches.iter().map(|b| b.patches.view()).collect();
        let patches = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("cannot concatenate patch batches: {e}")))?;
        let provenance = batches.iter().flat_map(|b| b.provenance.iter().copied()).collect();
        Ok(Self { patches, provenance })
    }

    /// Write the patch array container plus a `frame_idx,row,col` CSV sidecar
    /// next to it (same stem, `.csv` extension).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let shape = self.patches.shape().to_vec();
        let data: Vec<f32> = self.patches.iter().copied().collect();
        let mut file = ArrayFile::default();
        file.arrays.push(NamedArray::f32("patches", shape, data));
        file.metadata.insert("kind".into(), "patch-batch".into());
        file.save(path)?;

        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["frame_idx", "row", "col"])?;
        for o in &self.provenance {
            w.write_record([o.frame_idx.to_string(), o.row.to_string(), o.col.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        write_atomic(sidecar_path(path), &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = ArrayFile::load(path)?;
        let arr = file.get("patches")?;
        let shape: [usize; 4] = arr
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format(format!("patches array has rank {}, expected 4", arr.shape.len())))?;
        let patches = Array4::from_shape_vec(shape, arr.to_f32()).map_err(|e| Error::Format(e.to_string()))?;

        let side = sidecar_path(path);
        let mut r = csv::Reader::from_path(&side)?;
        let mut provenance = Vec::new();
        for rec in r.deserialize() {
            provenance.push(rec?);
        }
        PatchBatch::new(patches, provenance)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("csv")
}

/// Cut a flow map into `window x window` patches, row-major, dropping partial
/// windows at the borders. Provenance frame index is 0.
pub fn extract_patches(image: &FlowMapImage, window: usize, stride: usize) -> Result<PatchBatch> {
    extract_patches_at(image, 0, window, stride)
}

/// [`extract_patches`] tagging every patch with the given frame index.
pub fn extract_patches_at(image: &FlowMapImage, frame_idx: usize, window: usize, stride: usize) -> Result<PatchBatch> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let (h, w) = (image.height(), image.width());
    if h < window || w < window {
        return Err(Error::Size(format!(
            "flow map {w}x{h} is smaller than the {window}x{window} window"
        )));
    }
    let rows = (h - window) / stride + 1;
    let cols = (w - window) / stride + 1;
    let full = Array4::from_shape_fn((1, h, w, 3), |(_, y, x, c)| {
        image.pixels.get_pixel(x as u32, y as u32).0[c] as f32 / 127.5 - 1.0
    });
    let mut patches = Array4::zeros((rows * cols, window, window, 3));
    let mut provenance = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (row, col) = (r * stride, c * stride);
            let i = provenance.len();
            patches
                .slice_mut(s![i, .., .., ..])
                .assign(&full.slice(s![0, row..row + window, col..col + window, ..]));
            provenance.push(PatchOrigin { frame_idx, row, col });
        }
    }
    Ok(PatchBatch { patches, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn map(h: u32, w: u32) -> FlowMapImage {
        FlowMapImage {
            pixels: RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 255])),
            max_magnitude: 1.0,
        }
    }

    #[test]
    fn counts_for_named_sizes() {
        assert_eq!(extract_patches(&map(64, 64), 32, 32).unwrap().len(), 4);
        assert_eq!(extract_patches(&map(32, 32), 32, 32).unwrap().len(), 1);
        assert_eq!(extract_patches(&map(33, 33), 32, 32).unwrap().len(), 1);
    }

    #[test]
    fn too_small_is_a_size_error() {
        assert!(matches!(extract_patches(&map(31, 64), 32, 32), Err(Error::Size(_))));
    }

    #[test]
    fn values_are_rescaled() {
        let b = extract_patches(&map(32, 32), 32, 32).unwrap();
        // pixel (x=0, y=0) = (0, 0, 255)
        assert_eq!(b.patches[[0, 0, 0, 0]], -1.0);
        assert_eq!(b.patches[[0, 0, 0, 2]], 1.0);
        // pixel (x=3, y=0): red channel 3
        assert!((b.patches[[0, 0, 3, 0]] - (3.0 / 127.5 - 1.0)).abs() < 1e-7);
    }

    #[test]
    fn row_major_order() {
        let b = extract_patches(&map(64, 96), 32, 32).unwrap();
        let order: Vec<_> = b.provenance.iter().map(|o| (o.row, o.col)).collect();
        assert_eq!(order, vec![(0, 0), (0, 32), (0, 64), (32, 0), (32, 32), (32, 64)]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = extract_patches_at(&map(40, 70), 3, 32, 8).unwrap();
        let b = extract_patches_at(&map(40, 70), 4, 32, 8).unwrap();
        let batch = PatchBatch::concat(&[a, b]).unwrap();
        let p = dir.path().join("v.safetensors");
        batch.save(&p).unwrap();
        assert!(dir.path().join("v.csv").exists());
        assert_eq!(PatchBatch::load(&p).unwrap(), batch);
    }

    proptest! {
        #[test]
        fn count_formula_and_injective_provenance(
            h in 8usize..80,
            w in 8usize..80,
            window in 1usize..9,
            stride in 1usize..9,
        ) {
            let b = extract_patches(&map(h as u32, w as u32), window, stride).unwrap();
            let expected = ((h - window) / stride + 1) * ((w - window) / stride + 1);
            prop_assert_eq!(b.len(), expected);
            let unique: HashSet<_> = b.provenance.iter().collect();
            prop_assert_eq!(unique.len(), b.len());
            for o in &b.provenance {
                prop_assert!(o.row + window <= h && o.col + window <= w);
            }
            prop_assert!(b.patches.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }
}
