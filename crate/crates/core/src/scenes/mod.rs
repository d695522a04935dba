//! Labeled vessel scenes: the class hierarchy, the procedural generator and
//! the on-disk dataset layout.

mod generate;
mod hierarchy;
pub(crate) mod io;

pub use generate::{
    check_size, generate_scene, scene_seeds, Background, Band, Distractor, Phase, SceneSpec, VesselShape, VesselSpec,
};
pub use hierarchy::{collapse_labels, CollapseMap, HierarchySpec, Level, LevelClasses};
pub use io::{
    export_dataset, load_dataset, read_label_png, read_rgb_png, write_label_png, write_rgb_png, LoadIssue, LoadReport,
};

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Tensor;

/// One image with whichever label levels are known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Interleaved 8-bit RGB, row major.
    pub rgb: Vec<u8>,
    /// Single-image label maps indexed by `Level::index()`.
    pub labels: [Option<LabelMap>; 4],
}

impl Sample {
    /// An unlabeled sample from interleaved RGB.
    pub fn unlabeled(id: impl Into<String>, width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {width}x{height} RGB image",
                rgb.len()
            )));
        }
        Ok(Sample {
            id: id.into(),
            height,
            width,
            rgb,
            labels: Default::default(),
        })
    }

    pub fn label(&self, level: Level) -> Option<&LabelMap> {
        self.labels[level.index()].as_ref()
    }

    /// `[1, 3, H, W]` with channels scaled to `[0, 1]`.
    pub fn image_tensor(&self) -> Tensor<f32> {
        let plane = self.height * self.width;
        let mut data = vec![0.0f32; 3 * plane];
        for (p, px) in self.rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = px[c] as f32 / 255.0;
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], data).expect("rgb fills image")
    }
}

/// An ordered collection of samples of equal extent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the first `n` samples.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        (
            Dataset::new(self.samples[..n].to_vec()),
            Dataset::new(self.samples[n..].to_vec()),
        )
    }

    fn pick(&self, indices: &[usize]) -> Result<Vec<&Sample>> {
        if indices.is_empty() {
            return Err(Error::Dataset("empty selection".into()));
        }
        indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .ok_or_else(|| Error::Dataset(format!("sample index {i} out of range")))
            })
            .collect()
    }

    /// Stacked images of the selected samples.
    pub fn images(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let tensors: Vec<Tensor<f32>> = self.pick(indices)?.iter().map(|s| s.image_tensor()).collect();
        let refs: Vec<&Tensor<f32>> = tensors.iter().collect();
        Tensor::concat_batch(&refs)
    }

    /// Stacked labels at `level`; fails if any selected sample lacks it.
    pub fn labels(&self, indices: &[usize], level: Level) -> Result<LabelMap> {
        let maps = self
            .pick(indices)?
            .into_iter()
            .map(|s| {
                s.label(level)
                    .ok_or_else(|| Error::Dataset(format!("sample {} has no level-{} labels", s.id, level.number())))
            })
            .collect::<Result<Vec<_>>>()?;
        LabelMap::concat(&maps)
    }

    /// True when every sample carries labels at `level`.
    pub fn has_level(&self, level: Level) -> bool {
        self.samples.iter().all(|s| s.label(level).is_some())
    }
}
