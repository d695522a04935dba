use crate::error::{shape_err, Error, Result};

/// Per-pixel class indices for a batch of images, stored as `[N, H, W]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != batch * height * width {
            return Err(shape_err!(
                "{} labels do not fill [{batch}, {height}, {width}]",
                data.len()
            ));
        }
        Ok(LabelMap {
            batch,
            height,
            width,
            data,
        })
    }

    pub fn filled(batch: usize, height: usize, width: usize, class: u8) -> Self {
        LabelMap {
            batch,
            height,
            width,
            data: vec![class; batch * height * width],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(batch, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, class: u8) {
        self.data[(n * self.height + y) * self.width + x] = class;
    }

    pub fn item(&self, n: usize) -> &[u8] {
        let len = self.height * self.width;
        &self.data[n * len..(n + 1) * len]
    }

    /// Copies out batch item `n` as a single-image map.
    pub fn single(&self, n: usize) -> LabelMap {
        LabelMap {
            batch: 1,
            height: self.height,
            width: self.width,
            data: self.item(n).to_vec(),
        }
    }

    pub fn concat(parts: &[&LabelMap]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("cannot concatenate zero label maps"))?;
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if (p.height, p.width) != (first.height, first.width) {
                return Err(shape_err!(
                    "label map {}x{} does not match {}x{}",
                    p.height,
                    p.width,
                    first.height,
                    first.width
                ));
            }
            batch += p.batch;
            data.extend_from_slice(&p.data);
        }
        Ok(LabelMap {
            batch,
            height: first.height,
            width: first.width,
            data,
        })
    }

    /// Fails with the first label that is not below `classes`.
    pub fn check_range(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= classes) {
            Some(&l) => Err(Error::LabelOutOfRange {
                label: l as usize,
                classes,
            }),
            None => Ok(()),
        }
    }

    /// Applies a class lookup table to every pixel.
    pub fn remap(&self, table: &[u8]) -> Result<Self> {
        self.check_range(table.len())?;
        Ok(LabelMap {
            data: self.data.iter().map(|&l| table[l as usize]).collect(),
            ..self.clone()
        })
    }

    /// Number of pixels carrying `class`.
    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&l| l == class).count()
    }
}
