//! Procedural vessel scenes. A [`SceneSpec`] is drawn from a seed; rendering
//! it produces the RGB image and all four label levels, each computed
//! directly from the scene geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::label::LabelMap;

type Rgb = [f32; 3];

/// Material phases that can fill a vessel, in level-4 class order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Liquid,
    LiquidPhaseTwo,
    Suspension,
    Foam,
    Solid,
    Powder,
    Granular,
    Bulk,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Liquid,
        Phase::LiquidPhaseTwo,
        Phase::Suspension,
        Phase::Foam,
        Phase::Solid,
        Phase::Powder,
        Phase::Granular,
        Phase::Bulk,
    ];

    /// Class index at the exact-phase level (0 and 1 are background and
    /// empty vessel).
    pub fn class_id(self) -> u8 {
        2 + Phase::ALL.iter().position(|&p| p == self).expect("listed") as u8
    }

    pub fn is_liquid(self) -> bool {
        matches!(self, Phase::Liquid | Phase::LiquidPhaseTwo | Phase::Suspension)
    }

    /// How much of the background survives through the material.
    fn opacity(self) -> f32 {
        match self {
            Phase::Liquid | Phase::LiquidPhaseTwo => 0.7,
            Phase::Suspension => 0.85,
            Phase::Foam => 0.95,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VesselShape {
    Trapezoid,
    RoundedRect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VesselSpec {
    pub shape: VesselShape,
    pub center_x: f32,
    pub top: usize,
    pub bottom: usize,
    pub top_width: f32,
    pub bottom_width: f32,
    pub wall: usize,
    pub corner_radius: f32,
    pub tint: Rgb,
    /// Blend weight of the glass tint over the background inside the vessel.
    pub opacity: f32,
}

impl VesselSpec {
    fn half_width(&self, y: usize, inset: f32) -> Option<f32> {
        if y < self.top || y > self.bottom {
            return None;
        }
        let t = (y - self.top) as f32 / (self.bottom - self.top).max(1) as f32;
        let mut hw = 0.5 * (self.top_width + (self.bottom_width - self.top_width) * t) - inset;
        if self.shape == VesselShape::RoundedRect {
            let r = (self.corner_radius - inset).max(0.0);
            let corner_start = self.bottom as f32 - inset - r;
            let ay = y as f32 + 0.5 - corner_start;
            if ay > 0.0 {
                if ay >= r {
                    return None;
                }
                hw = hw - r + (r * r - ay * ay).sqrt();
            }
        }
        (hw > 0.0).then_some(hw)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.half_width(y, 0.0)
            .is_some_and(|hw| (x as f32 + 0.5 - self.center_x).abs() <= hw)
    }

    /// Inside the walls; the top of the vessel is open.
    pub fn interior_contains(&self, y: usize, x: usize) -> bool {
        let w = self.wall as f32;
        y + self.wall <= self.bottom
            && self
                .half_width(y, w)
                .is_some_and(|hw| (x as f32 + 0.5 - self.center_x).abs() <= hw)
    }

    /// Last interior row.
    pub fn interior_bottom(&self) -> usize {
        self.bottom - self.wall
    }

    pub fn interior_rows(&self) -> usize {
        self.interior_bottom() + 1 - self.top
    }
}

/// One horizontal layer of material; bands are listed top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub phase: Phase,
    pub rows: usize,
    pub color: Rgb,
    pub texture_seed: u64,
}

/// A textured patch in the background that resembles vessel contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Distractor {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
    pub phase: Phase,
    pub color: Rgb,
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub top: Rgb,
    pub bottom: Rgb,
    pub noise: f32,
    pub noise_seed: u64,
    pub distractors: Vec<Distractor>,
}

/// Seeded description of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub background: Background,
    pub vessel: VesselSpec,
    /// Fraction of interior rows holding material.
    pub fill_fraction: f32,
    pub bands: Vec<Band>,
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Rgb {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn material_color(rng: &mut ChaCha8Rng, phase: Phase) -> Rgb {
    match phase {
        Phase::Foam => random_color(rng, 0.75, 1.0),
        Phase::Powder => random_color(rng, 0.55, 0.95),
        _ => random_color(rng, 0.1, 0.9),
    }
}

/// Allowed extents for generated images.
pub fn check_size(size: usize) -> Result<()> {
    if size < 16 || !size.is_multiple_of(8) || size > 1024 {
        return Err(Error::InvalidArgument(format!(
            "scene size {size} must be a multiple of 8 in 16..=1024"
        )));
    }
    Ok(())
}

impl SceneSpec {
    pub fn sample(seed: u64, size: usize) -> Result<Self> {
        check_size(size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = size as f32;

        let height = rng.gen_range(0.45 * s..0.88 * s).round() as usize;
        let bottom = size - 1 - rng.gen_range(0..(size / 16).max(1));
        let top = bottom + 1 - height.min(bottom);
        let bottom_width = rng.gen_range(0.25 * s..0.6 * s);
        let shape = if rng.gen_bool(0.5) {
            VesselShape::Trapezoid
        } else {
            VesselShape::RoundedRect
        };
        let top_width = match shape {
            VesselShape::Trapezoid => bottom_width * rng.gen_range(0.45..1.1),
            VesselShape::RoundedRect => bottom_width,
        };
        let max_half = 0.5 * top_width.max(bottom_width);
        let center_x = rng.gen_range(max_half + 1.0..(s - max_half - 1.0).max(max_half + 1.5));
        let wall = rng.gen_range(1..=(size / 32).max(1) + 1);
        let corner_radius = rng.gen_range(2.0..(0.25 * bottom_width).max(2.5));
        let vessel = VesselSpec {
            shape,
            center_x,
            top,
            bottom,
            top_width,
            bottom_width,
            wall,
            corner_radius,
            tint: random_color(&mut rng, 0.6, 1.0),
            opacity: rng.gen_range(0.12..0.35),
        };

        let interior = vessel.interior_rows();
        let (fill_fraction, bands) = if rng.gen_bool(0.1) || interior < 2 {
            (0.0, Vec::new())
        } else {
            let mut rows = rng.gen_range(2..=interior);
            let frac = rows as f32 / interior as f32;
            let count = rng.gen_range(1..=3usize).min(rows);
            let mut bands = Vec::with_capacity(count);
            for i in 0..count {
                let remaining = count - i - 1;
                let take = if remaining == 0 {
                    rows
                } else {
                    rng.gen_range(1..=rows - remaining)
                };
                rows -= take;
                let phase = Phase::ALL[rng.gen_range(0..Phase::ALL.len())];
                bands.push(Band {
                    phase,
                    rows: take,
                    color: material_color(&mut rng, phase),
                    texture_seed: rng.gen(),
                });
            }
            (frac, bands)
        };

        let mut distractors = Vec::new();
        for _ in 0..rng.gen_range(0..=3) {
            let h = rng.gen_range(size / 8..size / 3);
            let w = rng.gen_range(size / 10..size / 4);
            let y0 = rng.gen_range(0..size - h);
            let x0 = rng.gen_range(0..size - w);
            let phase = Phase::ALL[rng.gen_range(0..Phase::ALL.len())];
            distractors.push(Distractor {
                y0,
                x0,
                y1: y0 + h,
                x1: x0 + w,
                phase,
                color: material_color(&mut rng, phase),
                texture_seed: rng.gen(),
            });
        }
        let background = Background {
            top: random_color(&mut rng, 0.15, 0.85),
            bottom: random_color(&mut rng, 0.15, 0.85),
            noise: rng.gen_range(0.01..0.06),
            noise_seed: rng.gen(),
            distractors,
        };

        Ok(SceneSpec {
            size,
            background,
            vessel,
            fill_fraction,
            bands,
        })
    }

    /// Number of interior rows covered by bands.
    pub fn fill_rows(&self) -> usize {
        self.bands.iter().map(|b| b.rows).sum()
    }

    /// Band at interior row `y`, if `y` lies in the filled part.
    fn band_at(&self, y: usize) -> Option<(&Band, usize)> {
        let fill = self.fill_rows();
        let last = self.vessel.interior_bottom();
        if fill == 0 || y > last || y + fill <= last {
            return None;
        }
        let mut row = y + fill - last - 1;
        for band in &self.bands {
            if row < band.rows {
                return Some((band, row));
            }
            row -= band.rows;
        }
        None
    }

    pub fn render(&self, id: impl Into<String>) -> Sample {
        let n = self.size;
        let mut image = vec![[0.0f32; 3]; n * n];
        let mut noise = ChaCha8Rng::seed_from_u64(self.background.noise_seed);
        for y in 0..n {
            let t = y as f32 / (n - 1) as f32;
            for x in 0..n {
                let jitter = self.background.noise * noise.gen_range(-1.0f32..1.0);
                image[y * n + x] = std::array::from_fn(|c| {
                    self.background.top[c] + (self.background.bottom[c] - self.background.top[c]) * t + jitter
                });
            }
        }
        for d in &self.background.distractors {
            let tex = Texture::new(d.phase, d.color, d.texture_seed, d.y1 - d.y0, d.x1 - d.x0);
            for y in d.y0..d.y1 {
                for x in d.x0..d.x1 {
                    let m = tex.at(y - d.y0, x - d.x0);
                    let px = &mut image[y * n + x];
                    *px = mix(*px, m, d.phase.opacity());
                }
            }
        }

        let v = &self.vessel;
        let textures: Vec<Texture> = self
            .bands
            .iter()
            .map(|b| Texture::new(b.phase, b.color, b.texture_seed, b.rows, n))
            .collect();
        let mut level = [vec![0u8; n * n], vec![0u8; n * n], vec![0u8; n * n], vec![0u8; n * n]];
        for y in 0..n {
            for x in 0..n {
                if !v.contains(y, x) {
                    continue;
                }
                let i = y * n + x;
                let bg = image[i];
                level[0][i] = 1;
                if !v.interior_contains(y, x) {
                    level[1][i] = 1;
                    level[2][i] = 1;
                    level[3][i] = 1;
                    image[i] = brighten(mix(bg, v.tint, 0.55), 0.12);
                    continue;
                }
                let glass = mix(bg, v.tint, v.opacity);
                match self.band_at(y) {
                    Some((band, row)) => {
                        let bi = self.bands.iter().position(|b| std::ptr::eq(b, band)).expect("own band");
                        level[1][i] = 2;
                        level[2][i] = if band.phase.is_liquid() { 2 } else { 3 };
                        level[3][i] = band.phase.class_id();
                        let mut m = textures[bi].at(row, x);
                        if row == 0 && bi == 0 {
                            m = brighten(m, -0.12);
                        }
                        image[i] = mix(glass, m, band.phase.opacity());
                    }
                    None => {
                        level[1][i] = 1;
                        level[2][i] = 1;
                        level[3][i] = 1;
                        // reflection stripe near the left wall
                        let left = v.center_x - v.half_width(y, v.wall as f32).unwrap_or(0.0);
                        let d = x as f32 + 0.5 - left;
                        image[i] = if (1.0..2.5).contains(&d) {
                            brighten(glass, 0.08)
                        } else {
                            glass
                        };
                    }
                }
            }
        }

        let rgb = image
            .iter()
            .flat_map(|px| px.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        let labels = level.map(|data| Some(LabelMap::new(1, n, n, data).expect("square map")));
        Sample {
            id: id.into(),
            height: n,
            width: n,
            rgb,
            labels,
        }
    }
}

fn mix(a: Rgb, b: Rgb, w: f32) -> Rgb {
    std::array::from_fn(|c| a[c] * (1.0 - w) + b[c] * w)
}

fn brighten(a: Rgb, d: f32) -> Rgb {
    a.map(|c| c + d)
}

fn scale(a: Rgb, f: f32) -> Rgb {
    a.map(|c| c * f)
}

/// Per-region texture field for one material patch of `rows × cols`.
struct Texture {
    phase: Phase,
    color: Rgb,
    rows: usize,
    cols: usize,
    field: Vec<f32>,
    cells: Vec<(f32, f32, f32)>,
    wave: f32,
}

impl Texture {
    fn new(phase: Phase, color: Rgb, seed: u64, rows: usize, cols: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = vec![0.0f32; rows * cols];
        let mut cells = Vec::new();
        match phase {
            Phase::Powder => field.iter_mut().for_each(|f| *f = rng.gen_range(-1.0..1.0)),
            Phase::Granular => {
                let g = 2;
                let coarse: Vec<f32> = (0..rows.div_ceil(g) * cols.div_ceil(g))
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                for y in 0..rows {
                    for x in 0..cols {
                        field[y * cols + x] = coarse[(y / g) * cols.div_ceil(g) + x / g];
                    }
                }
            }
            Phase::Suspension => {
                let streaks: Vec<f32> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for y in 0..rows {
                    for x in 0..cols {
                        let s = (streaks[x] + streaks[(x + 1) % cols]) * 0.5;
                        field[y * cols + x] = s;
                    }
                }
            }
            Phase::Foam => {
                let count = (rows * cols / 12).max(1);
                for _ in 0..count {
                    cells.push((
                        rng.gen_range(0.0..rows as f32),
                        rng.gen_range(0.0..cols as f32),
                        rng.gen_range(1.2..2.8),
                    ));
                }
            }
            Phase::Solid => {
                let count = (rows * cols / 60).clamp(2, 12);
                for _ in 0..count {
                    cells.push((
                        rng.gen_range(0.0..rows as f32),
                        rng.gen_range(0.0..cols as f32),
                        rng.gen_range(0.7..1.2),
                    ));
                }
            }
            Phase::Bulk => {
                let block = rng.gen_range(5..9) as f32;
                cells.push((block, 0.0, 0.0));
                let shades: Vec<f32> = (0..256).map(|_| rng.gen_range(0.55..1.2)).collect();
                for y in 0..rows {
                    for x in 0..cols {
                        let by = (y as f32 / block) as usize;
                        let bx = (x as f32 / block) as usize;
                        field[y * cols + x] = shades[(by * 31 + bx * 7) % 256];
                    }
                }
            }
            Phase::Liquid | Phase::LiquidPhaseTwo => {}
        }
        Texture {
            phase,
            color,
            rows,
            cols,
            field,
            cells,
            wave: rng.gen_range(0.0..std::f32::consts::TAU),
        }
    }

    fn at(&self, y: usize, x: usize) -> Rgb {
        let t = y as f32 / self.rows.max(1) as f32;
        let f = self.field.get(y * self.cols + x).copied().unwrap_or(0.0);
        match self.phase {
            Phase::Liquid => scale(self.color, 0.8 + 0.35 * t),
            Phase::LiquidPhaseTwo => {
                let band = 0.9 + 0.12 * (0.45 * x as f32 + self.wave).sin();
                scale(mix(self.color, [0.9, 0.9, 0.95], 0.25), band * (0.85 + 0.2 * t))
            }
            Phase::Suspension => brighten(scale(self.color, 0.8 + 0.3 * t), 0.15 * f),
            Phase::Powder => scale(self.color, 1.0 + 0.18 * f),
            Phase::Granular => scale(self.color, 1.0 + 0.35 * f),
            Phase::Bulk => {
                let block = self.cells[0].0;
                let edge = (y as f32 % block) < 1.0 || (x as f32 % block) < 1.0;
                scale(self.color, if edge { 0.45 } else { f })
            }
            Phase::Foam => {
                let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
                let mut c = scale(self.color, 0.92);
                for &(cy, cx, r) in &self.cells {
                    let d = ((py - cy).powi(2) + (px - cx).powi(2)).sqrt();
                    if (d - r).abs() < 0.6 {
                        c = scale(self.color, 0.7);
                    } else if d < r {
                        c = brighten(self.color, 0.08);
                    }
                }
                c
            }
            Phase::Solid => {
                let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
                let mut best = (f32::MAX, 1.0);
                let mut second = f32::MAX;
                for &(cy, cx, shade) in &self.cells {
                    let d = (py - cy).powi(2) + (px - cx).powi(2);
                    if d < best.0 {
                        second = best.0;
                        best = (d, shade);
                    } else if d < second {
                        second = d;
                    }
                }
                let edge = second.sqrt() - best.0.sqrt() < 0.8;
                scale(self.color, if edge { 0.6 } else { best.1 })
            }
        }
    }
}

/// Renders the scene for `seed`.
pub fn generate_scene(seed: u64, size: usize) -> Result<Sample> {
    Ok(SceneSpec::sample(seed, size)?.render(format!("scene{seed:020}")))
}

/// Per-scene seeds of a generated dataset; index `i` depends only on
/// `(seed, i)`.
pub fn scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

impl Dataset {
    /// `n` synthetic scenes of `size × size` pixels.
    pub fn generate(n: usize, size: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        let samples = scene_seeds(seed, n)
            .into_iter()
            .enumerate()
            .map(|(i, s)| Ok(SceneSpec::sample(s, size)?.render(format!("{seed}_{i:05}"))))
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }
}
