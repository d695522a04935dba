use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::label::LabelMap;
use crate::scenes::io::write_png;
use crate::scenes::Sample;

/// Overlay colour of class index `c` (cycled past the table).
///
/// background black, then red, green, blue, yellow, magenta, cyan, orange,
/// purple, grey.
pub const PALETTE: [[u8; 3]; 10] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [240, 50, 230],
    [70, 240, 240],
    [245, 130, 48],
    [145, 30, 180],
    [128, 128, 128],
];

/// Image blended half-and-half with the class colours; background pixels
/// keep the image unchanged.
pub fn overlay(sample: &Sample, labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.dims() != (1, sample.height, sample.width) {
        return Err(shape_err!(
            "labels {:?} do not match {}x{} image {}",
            labels.dims(),
            sample.width,
            sample.height,
            sample.id
        ));
    }
    let mut out = sample.rgb.clone();
    for (px, &c) in out.chunks_exact_mut(3).zip(labels.data()) {
        if c == 0 {
            continue;
        }
        let col = PALETTE[c as usize % PALETTE.len()];
        for (v, k) in px.iter_mut().zip(col) {
            *v = (*v as u16 + k as u16).div_ceil(2) as u8;
        }
    }
    Ok(out)
}

/// Writes `<dir>/<id>.png` overlays for each sample and prediction.
pub fn write_overlays(samples: &[Sample], preds: &[LabelMap], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if samples.len() != preds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples but {} predictions",
            samples.len(),
            preds.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (s, p) in samples.iter().zip(preds) {
        let rgb = overlay(s, p)?;
        write_png(&dir.join(format!("{}.png", s.id)), s.width, s.height, true, &rgb)?;
    }
    Ok(())
}
