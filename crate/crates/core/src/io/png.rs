//! 8-bit PNG slice images and index-valued PNG masks.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::slicer::{slice_count, Axis, Sliceable};
use crate::volume::{ClassMap, Domain, Grid2, LabelVolume, ScalarVolume};

pub fn image_file_name(axis: Axis, index: usize) -> String {
    format!("{axis}_{index:05}.png")
}

pub fn mask_file_name(axis: Axis, index: usize) -> String {
    format!("{axis}_{index:05}_mask.png")
}

fn save_gray(path: &Path, h: usize, w: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches dims");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Png(format!("writing {}: {e}", path.display())))
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::Png(format!(
            "{}: expected 8-bit single-channel PNG, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn quantize(p: f32) -> u8 {
    (255.0 * p).round().clamp(0.0, 255.0) as u8
}

/// Writes one PNG per slice along `axis` (and one mask PNG per slice when
/// labels are given). Returns the number of files written.
///
/// Images are the normalized intensities scaled to 0..=255; masks hold the
/// raw class indices.
pub fn export_png_slices(
    v: &ScalarVolume,
    labels: Option<&LabelVolume>,
    axis: Axis,
    out_dir: &Path,
) -> Result<usize> {
    if v.domain() != Domain::Normalized {
        return Err(Error::Domain(
            "PNG export expects a windowed (normalized) volume".to_string(),
        ));
    }
    if let Some(l) = labels {
        if l.dims() != v.dims() {
            return Err(Error::DimsMismatch(format!(
                "volume {} vs labels {}",
                v.dims(),
                l.dims()
            )));
        }
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut written = 0;
    for index in 0..slice_count(v.dims(), axis) {
        let img = v.extract_slice(axis, index)?;
        let pixels = img.data().iter().map(|&p| quantize(p)).collect();
        save_gray(&out_dir.join(image_file_name(axis, index)), img.h(), img.w(), pixels)?;
        written += 1;
        if let Some(l) = labels {
            let mask = l.extract_slice(axis, index)?;
            let (h, w) = (mask.h(), mask.w());
            save_gray(&out_dir.join(mask_file_name(axis, index)), h, w, mask.into_data())?;
            written += 1;
        }
    }
    Ok(written)
}

/// Reads a mask PNG back into class indices; any value outside the class map
/// is an error.
pub fn import_png_mask(path: &Path, classes: &ClassMap) -> Result<Grid2<u8>> {
    let img = load_gray(path)?;
    let (w, h) = img.dimensions();
    let c = classes.count();
    if let Some(&bad) = img.as_raw().iter().find(|&&v| v as usize >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            classes: c,
        });
    }
    Grid2::new(h as usize, w as usize, img.into_raw())
}

/// Reads an image PNG as normalized intensities (`value / 255`).
pub fn import_png_image(path: &Path) -> Result<Grid2<f32>> {
    let img = load_gray(path)?;
    let (w, h) = img.dimensions();
    Grid2::new(
        h as usize,
        w as usize,
        img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};
    use image::{Rgb, RgbImage};

    fn normalized(dims: Dims, value: f32) -> ScalarVolume {
        ScalarVolume::new(dims, Spacing::unit(), Domain::Normalized, vec![value; dims.len()]).unwrap()
    }

    #[test]
    fn full_intensity_is_255() {
        let dir = tempfile::tempdir().unwrap();
        let v = normalized(Dims::new(4, 3, 2), 1.0);
        assert_eq!(export_png_slices(&v, None, Axis::Axial, dir.path()).unwrap(), 2);
        let img = load_gray(&dir.path().join("axial_00000.png")).unwrap();
        assert!(img.as_raw().iter().all(|&p| p == 255));
        assert_eq!(img.dimensions(), (4, 3));
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
    }

    #[test]
    fn one_file_per_slice() {
        let dir = tempfile::tempdir().unwrap();
        let v = normalized(Dims::cube(64), 0.25);
        assert_eq!(export_png_slices(&v, None, Axis::Axial, dir.path()).unwrap(), 64);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 64);
    }

    #[test]
    fn mask_import_rules() {
        let dir = tempfile::tempdir().unwrap();
        let classes = ClassMap::cardiac();

        let zeros = dir.path().join("zeros.png");
        save_gray(&zeros, 2, 3, vec![0; 6]).unwrap();
        let g = import_png_mask(&zeros, &classes).unwrap();
        assert!(g.data().iter().all(|&l| l == 0));
        assert_eq!(classes.name(g.get(0, 0) as usize), "right_atrium");

        let four = dir.path().join("four.png");
        save_gray(&four, 1, 1, vec![4]).unwrap();
        let g = import_png_mask(&four, &classes).unwrap();
        assert_eq!(g.get(0, 0) as usize, classes.background());

        let seven = dir.path().join("seven.png");
        save_gray(&seven, 1, 1, vec![7]).unwrap();
        assert!(matches!(
            import_png_mask(&seven, &classes),
            Err(Error::LabelOutOfRange { label: 7, classes: 5 })
        ));

        let rgb = dir.path().join("rgb.png");
        RgbImage::from_pixel(2, 2, Rgb([1, 1, 1])).save(&rgb).unwrap();
        assert!(matches!(import_png_mask(&rgb, &classes), Err(Error::Png(_))));
    }

    #[test]
    fn rejects_hounsfield_volume() {
        let dir = tempfile::tempdir().unwrap();
        let v = ScalarVolume::new(Dims::cube(2), Spacing::unit(), Domain::Hounsfield, vec![0.0; 8])
            .unwrap();
        assert!(export_png_slices(&v, None, Axis::Axial, dir.path()).is_err());
    }
}
