//! Canonical dataset directory layout:
//!
//! ```text
//! <root>/hierarchy.json
//! <root>/images/<id>.png               8-bit RGB
//! <root>/labels/level{1,2,3,4}/<id>.png  8-bit gray, value = class index
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::{collapse_labels, Dataset, HierarchySpec, Level, Sample};
use crate::error::{Error, Result};
use crate::label::LabelMap;

/// A problem found while ingesting one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadIssue {
    pub id: String,
    pub message: String,
    /// Whether the sample was dropped.
    pub rejected: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub issues: Vec<LoadIssue>,
    pub loaded: usize,
}

impl LoadReport {
    pub fn rejected(&self) -> usize {
        self.issues.iter().filter(|i| i.rejected).count()
    }

    fn note(&mut self, id: &str, rejected: bool, message: String) {
        self.issues.push(LoadIssue {
            id: id.to_string(),
            message,
            rejected,
        });
    }
}

pub(crate) fn write_png(path: &Path, width: usize, height: usize, rgb: bool, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(if rgb {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Decoded 8-bit image: `(width, height, channels, samples)`.
pub(crate) fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let png_err = |message: String| Error::Png {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| png_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err("unexpanded palette image".into())),
    };
    Ok((info.width as usize, info.height as usize, channels, buf))
}

fn to_rgb(channels: usize, data: &[u8]) -> Vec<u8> {
    match channels {
        3 => data.to_vec(),
        4 => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        _ => data.chunks_exact(channels).flat_map(|p| [p[0], p[0], p[0]]).collect(),
    }
}

/// Reads any 8-bit PNG as interleaved RGB: `(width, height, rgb)`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, c, data) = read_png(path.as_ref())?;
    Ok((w, h, to_rgb(c, &data)))
}

/// Reads a grayscale label PNG (first channel of anything else).
pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (w, h, c, data) = read_png(path.as_ref())?;
    LabelMap::new(1, h, w, data.chunks_exact(c).map(|p| p[0]).collect())
}

/// Writes a single-image label map as 8-bit grayscale.
pub fn write_label_png(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    if labels.batch() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected one label map, got {}",
            labels.batch()
        )));
    }
    write_png(path.as_ref(), labels.width(), labels.height(), false, labels.data())
}

/// Writes interleaved 8-bit RGB.
pub fn write_rgb_png(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidArgument(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    write_png(path.as_ref(), width, height, true, rgb)
}

fn level_dir(root: &Path, level: Level) -> PathBuf {
    root.join("labels").join(format!("level{}", level.number()))
}

/// Writes `dataset` in the canonical layout under `root`.
pub fn export_dataset(dataset: &Dataset, root: impl AsRef<Path>, hierarchy: &HierarchySpec) -> Result<()> {
    let root = root.as_ref();
    let images = root.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = root.join("hierarchy.json");
    let mut text = serde_json::to_string_pretty(hierarchy)?;
    text.push('\n');
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    for level in Level::ALL {
        if dataset.samples.iter().any(|s| s.label(level).is_some()) {
            let dir = level_dir(root, level);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    for s in &dataset.samples {
        write_png(&images.join(format!("{}.png", s.id)), s.width, s.height, true, &s.rgb)?;
        for level in Level::ALL {
            if let Some(map) = s.label(level) {
                let path = level_dir(root, level).join(format!("{}.png", s.id));
                write_png(&path, s.width, s.height, false, map.data())?;
            }
        }
    }
    Ok(())
}

/// Reads a dataset in the canonical layout.
///
/// A missing level directory leaves that level absent. Samples whose label
/// extent differs from the image or whose labels exceed the level's class
/// count are dropped and reported; collapse inconsistencies between levels
/// are reported without dropping the sample.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<(Dataset, LoadReport)> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let manifest = root.join("hierarchy.json");
    let hierarchy = if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let h: HierarchySpec = serde_json::from_str(&text)?;
        h.validate()?;
        h
    } else {
        HierarchySpec::standard()
    };

    let mut report = LoadReport::default();
    let images = root.join("images");
    if !images.is_dir() {
        return Ok((Dataset::default(), report));
    }
    let mut ids: Vec<String> = fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension()? == "png").then(|| path.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    ids.sort();

    let present: Vec<Level> = Level::ALL
        .into_iter()
        .filter(|&l| level_dir(root, l).is_dir())
        .collect();

    let mut samples = Vec::new();
    'sample: for id in ids {
        let (width, height, channels, data) = match read_png(&images.join(format!("{id}.png"))) {
            Ok(v) => v,
            Err(e) => {
                report.note(&id, true, format!("unreadable image: {e}"));
                continue;
            }
        };
        let mut labels: [Option<LabelMap>; 4] = Default::default();
        for &level in &present {
            let path = level_dir(root, level).join(format!("{id}.png"));
            if !path.exists() {
                report.note(&id, false, format!("no level-{} labels", level.number()));
                continue;
            }
            let (lw, lh, lc, raw) = match read_png(&path) {
                Ok(v) => v,
                Err(e) => {
                    report.note(&id, true, format!("unreadable level-{} labels: {e}", level.number()));
                    continue 'sample;
                }
            };
            if (lw, lh) != (width, height) {
                report.note(
                    &id,
                    true,
                    format!(
                        "level-{} labels are {lw}x{lh}, image is {width}x{height}",
                        level.number()
                    ),
                );
                continue 'sample;
            }
            let gray: Vec<u8> = raw.chunks_exact(lc).map(|p| p[0]).collect();
            let map = LabelMap::new(1, height, width, gray)?;
            if let Err(e) = map.check_range(hierarchy.num_classes(level)) {
                report.note(&id, true, format!("level-{} {e}", level.number()));
                continue 'sample;
            }
            labels[level.index()] = Some(map);
        }
        for fine in Level::ALL.into_iter().skip(1) {
            let coarse = Level::from_number(fine.number() - 1)?;
            if let (Some(f), Some(c)) = (&labels[fine.index()], &labels[coarse.index()]) {
                if &collapse_labels(f, fine, coarse, &hierarchy)? != c {
                    report.note(
                        &id,
                        false,
                        format!(
                            "level-{} labels do not collapse onto level-{}",
                            fine.number(),
                            coarse.number()
                        ),
                    );
                }
            }
        }
        samples.push(Sample {
            id,
            height,
            width,
            rgb: to_rgb(channels, &data),
            labels,
        });
    }
    report.loaded = samples.len();
    Ok((Dataset::new(samples), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, report) = load_dataset(dir.path()).unwrap();
        assert!(ds.is_empty());
        assert!(report.issues.is_empty());
    }

    #[test]
    fn missing_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path().join("nope")).is_err());
    }

    #[test]
    fn export_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(6, 32, 11).unwrap();
        export_dataset(&ds, dir.path(), &HierarchySpec::standard()).unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert!(report.issues.is_empty(), "{:?}", report.issues);
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_level_directory_leaves_level_absent() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(2, 16, 1).unwrap();
        export_dataset(&ds, dir.path(), &HierarchySpec::standard()).unwrap();
        fs::remove_dir_all(dir.path().join("labels/level4")).unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(report.issues.is_empty());
        assert!(back.samples.iter().all(|s| s.label(Level::ExactPhase).is_none()));
        assert!(back.has_level(Level::SolidLiquid));
    }

    #[test]
    fn out_of_range_label_rejects_sample() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(2, 16, 2).unwrap();
        export_dataset(&ds, dir.path(), &HierarchySpec::standard()).unwrap();
        let id = &ds.samples[0].id;
        let bad = vec![7u8; 16 * 16];
        write_png(&dir.path().join(format!("labels/level2/{id}.png")), 16, 16, false, &bad).unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(report.rejected(), 1);
        assert_eq!(&report.issues[0].id, id);
    }

    #[test]
    fn size_mismatch_rejects_sample() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(1, 16, 3).unwrap();
        export_dataset(&ds, dir.path(), &HierarchySpec::standard()).unwrap();
        let id = &ds.samples[0].id;
        write_png(
            &dir.path().join(format!("labels/level1/{id}.png")),
            8,
            8,
            false,
            &[0; 64],
        )
        .unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert!(back.is_empty());
        assert_eq!(report.rejected(), 1);
    }

    #[test]
    fn collapse_violation_is_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(1, 16, 4).unwrap();
        export_dataset(&ds, dir.path(), &HierarchySpec::standard()).unwrap();
        let id = &ds.samples[0].id;
        write_png(
            &dir.path().join(format!("labels/level1/{id}.png")),
            16,
            16,
            false,
            &[0; 256],
        )
        .unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(report.rejected(), 0);
        assert!(report.issues.iter().any(|i| i.message.contains("collapse")));
    }
}
