//! The Mini-FCN shared by the vessel net, the content nets and the
//! single-step baseline.
//!
//! Layout for widths `[w1..wL]`: block 1 is a 3×3 conv (or a valve layer
//! when the net takes segment planes) at full resolution, and each further
//! block is a stride-2 3×3 downsample followed by a 3×3 conv, all with relu.
//! A 1×1 score conv on the deepest block is upsampled ×2 by transposed
//! convolution and fused (summed) with 1×1 scores from every intermediate
//! scale, FCN-8s style, then upsampled ×2 once more to full resolution.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::label::LabelMap;
use crate::tensor::{ConvGeometry, Scalar, Shape, Tape, Tensor, Var};
use crate::valve::{valve_on_tape, SegPlanes, ValveLayerParams, ValveVars};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

const UPSAMPLE_KERNEL: usize = 4;
const UPSAMPLE: ConvGeometry = ConvGeometry::new(2, 1);

/// How coarse score maps are brought back to a finer scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Upsample {
    /// Transposed conv initialized to bilinear interpolation and trained.
    Transposed,
    /// Frozen bilinear interpolation (no parameters).
    Bilinear,
}

impl fmt::Display for Upsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsample::Transposed => "transposed",
            Upsample::Bilinear => "bilinear",
        })
    }
}

impl FromStr for Upsample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transposed" => Ok(Upsample::Transposed),
            "bilinear" => Ok(Upsample::Bilinear),
            other => Err(Error::InvalidArgument(format!("unknown upsampling {other:?}"))),
        }
    }
}

/// Architecture description of a Mini-FCN.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    pub in_channels: usize,
    /// Segment plane count; `Some` makes the first layer a valve layer.
    pub seg_channels: Option<usize>,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub num_classes: usize,
    pub upsample: Upsample,
}

impl NetworkSpec {
    pub const DEFAULT_WIDTHS: [usize; 4] = [16, 32, 64, 128];

    /// RGB input, default widths, no segmentation input.
    pub fn plain(num_classes: usize) -> Self {
        NetworkSpec {
            in_channels: 3,
            seg_channels: None,
            widths: Self::DEFAULT_WIDTHS.to_vec(),
            kernel: 3,
            num_classes,
            upsample: Upsample::Transposed,
        }
    }

    /// Same trunk as [`NetworkSpec::plain`] with a valve first layer over
    /// `segments` one-hot planes.
    pub fn gated(num_classes: usize, segments: usize) -> Self {
        NetworkSpec {
            seg_channels: Some(segments),
            ..Self::plain(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.num_classes > 256 {
            return bad(format!("at most 256 classes, got {}", self.num_classes));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("invalid widths {:?}", self.widths));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.in_channels == 0 || self.seg_channels == Some(0) {
            return bad("input channel counts must be positive".into());
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn stride_budget(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    /// Parameter names and shapes in declaration order.
    pub fn layout(&self) -> Vec<(String, Shape)> {
        let k = self.kernel;
        let c = self.num_classes;
        let w = &self.widths;
        let mut out = Vec::new();
        let bias = |f: usize| Shape::new(1, f, 1, 1);
        match self.seg_channels {
            Some(s) => {
                out.push(("enc1.image.weight".into(), Shape::new(w[0], self.in_channels, k, k)));
                out.push(("enc1.image.bias".into(), bias(w[0])));
                out.push(("enc1.valve.weight".into(), Shape::new(w[0], s, k, k)));
                out.push(("enc1.valve.bias".into(), bias(w[0])));
            }
            None => {
                out.push(("enc1.conv.weight".into(), Shape::new(w[0], self.in_channels, k, k)));
                out.push(("enc1.conv.bias".into(), bias(w[0])));
            }
        }
        for i in 1..w.len() {
            out.push((format!("down{i}.weight"), Shape::new(w[i - 1], w[i - 1], k, k)));
            out.push((format!("down{i}.bias"), bias(w[i - 1])));
            out.push((format!("enc{}.conv.weight", i + 1), Shape::new(w[i], w[i - 1], k, k)));
            out.push((format!("enc{}.conv.bias", i + 1), bias(w[i])));
        }
        let deepest = w.len() - 1;
        out.push((format!("score{}.weight", 1 << deepest), Shape::new(c, w[deepest], 1, 1)));
        out.push((format!("score{}.bias", 1 << deepest), bias(c)));
        for level in (0..deepest).rev() {
            if self.upsample == Upsample::Transposed {
                out.push((
                    format!("up{}.weight", 1 << level),
                    Shape::new(c, c, UPSAMPLE_KERNEL, UPSAMPLE_KERNEL),
                ));
            }
            if level > 0 {
                out.push((format!("score{}.weight", 1 << level), Shape::new(c, w[level], 1, 1)));
                out.push((format!("score{}.bias", 1 << level), bias(c)));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.len()).sum()
    }
}

/// Bilinear interpolation kernel placed on the channel diagonal.
fn bilinear_kernel<T: Scalar>(channels: usize) -> Tensor<T> {
    let k = UPSAMPLE_KERNEL;
    let factor = k.div_ceil(2);
    let center = factor as f64 - 0.5;
    let tap = |i: usize| 1.0 - (i as f64 - center).abs() / factor as f64;
    Tensor::from_fn([channels, channels, k, k], |[i, o, y, x]| {
        if i == o {
            T::from_f64_lossy(tap(y) * tap(x))
        } else {
            T::zero()
        }
    })
}

/// Tape handles produced by [`Network::record`].
#[derive(Clone, Debug)]
pub struct Recorded {
    pub logits: Var,
    /// One handle per parameter, in declaration order.
    pub params: Vec<Var>,
}

/// A Mini-FCN with concrete parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    spec: NetworkSpec,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Builds a network with seeded initialization: He-uniform conv weights,
/// zero conv biases, bilinear upsampling kernels, and open valves (valve
/// weights 0, valve biases 1).
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut params = Vec::new();
    for (name, shape) in spec.layout() {
        let t = if name.starts_with("up") {
            bilinear_kernel(shape.batch)
        } else if name == "enc1.valve.weight" {
            Tensor::zeros(shape)
        } else if name == "enc1.valve.bias" {
            Tensor::full(shape, T::one())
        } else if name.ends_with(".bias") {
            Tensor::zeros(shape)
        } else {
            let fan_in = shape.channels * shape.height * shape.width;
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        };
        names.push(name);
        params.push(t);
    }
    Ok(Network {
        spec: spec.clone(),
        names,
        params,
    })
}

impl<T: Scalar> Network<T> {
    /// Assembles a network from explicit parameters, checking them against
    /// the spec layout.
    pub fn from_params(spec: NetworkSpec, params: Vec<(String, Tensor<T>)>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != params.len() {
            return Err(Error::CheckpointShape(format!(
                "spec declares {} parameter blocks, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(&params) {
            if name != pname || *shape != t.shape() {
                return Err(Error::CheckpointShape(format!(
                    "expected {name} {shape}, found {pname} {}",
                    t.shape()
                )));
            }
        }
        let (names, params) = params.into_iter().unzip();
        Ok(Network { spec, names, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// The first-layer valve parameters, when the net has a valve layer.
    pub fn valve_params(&self) -> Option<ValveLayerParams<T>> {
        self.spec.seg_channels?;
        Some(ValveLayerParams {
            image_weight: self.params[0].clone(),
            image_bias: self.params[1].clone(),
            valve_weight: self.params[2].clone(),
            valve_bias: self.params[3].clone(),
        })
    }

    pub fn set_valve_params(&mut self, valve: ValveLayerParams<T>) -> Result<()> {
        if self.spec.seg_channels.is_none() {
            return Err(Error::InvalidArgument("network has no valve layer".into()));
        }
        let fresh = [
            valve.image_weight,
            valve.image_bias,
            valve.valve_weight,
            valve.valve_bias,
        ];
        for (slot, t) in self.params.iter().zip(&fresh) {
            if slot.shape() != t.shape() {
                return Err(shape_err!("valve parameter {} replaces {}", t.shape(), slot.shape()));
            }
        }
        for (slot, t) in self.params.iter_mut().zip(fresh) {
            *slot = t;
        }
        Ok(())
    }

    fn check_inputs(&self, image: Shape, seg: Option<Shape>) -> Result<()> {
        if image.channels != self.spec.in_channels {
            return Err(shape_err!(
                "network expects {} image channels, got {image}",
                self.spec.in_channels
            ));
        }
        let budget = self.spec.stride_budget();
        if image.height == 0
            || image.width == 0
            || !image.height.is_multiple_of(budget)
            || !image.width.is_multiple_of(budget)
        {
            return Err(shape_err!(
                "image extent {image} must be a positive multiple of {budget}"
            ));
        }
        match (self.spec.seg_channels, seg) {
            (Some(s), Some(seg)) => {
                if seg.channels != s || (seg.batch, seg.height, seg.width) != (image.batch, image.height, image.width) {
                    return Err(shape_err!("segment planes {seg} do not match {s} planes over {image}"));
                }
                Ok(())
            }
            (Some(_), None) => Err(Error::InvalidArgument(
                "network takes a segmentation input but none was given".into(),
            )),
            (None, Some(_)) => Err(Error::InvalidArgument(
                "network has no segmentation input but one was given".into(),
            )),
            (None, None) => Ok(()),
        }
    }

    /// Records the forward pass on `tape`, registering every parameter as a
    /// trainable leaf.
    pub fn record(&self, tape: &mut Tape<T>, image: Var, seg: Option<Var>) -> Result<Recorded> {
        self.check_inputs(tape.value(image).shape(), seg.map(|s| tape.value(s).shape()))?;
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let mut next = vars.iter().copied();
        let mut take = || next.next().expect("layout and params agree");
        let k = self.spec.kernel;
        let same = ConvGeometry::same(k);
        let down = ConvGeometry::new(2, k / 2);
        let pointwise = ConvGeometry::new(1, 0);

        let mut x = match seg {
            Some(seg) => {
                let vv = ValveVars {
                    image_weight: take(),
                    image_bias: take(),
                    valve_weight: take(),
                    valve_bias: take(),
                };
                valve_on_tape(tape, image, seg, vv)?
            }
            None => {
                let (w, b) = (take(), take());
                let y = tape.conv2d(image, w, b, same)?;
                tape.relu(y)
            }
        };
        let mut features = vec![x];
        for _ in 1..self.spec.widths.len() {
            let (w, b) = (take(), take());
            let y = tape.conv2d(x, w, b, down)?;
            x = tape.relu(y);
            let (w, b) = (take(), take());
            let y = tape.conv2d(x, w, b, same)?;
            x = tape.relu(y);
            features.push(x);
        }
        let deepest = features.len() - 1;
        let (w, b) = (take(), take());
        let mut score = tape.conv2d(features[deepest], w, b, pointwise)?;
        for level in (0..deepest).rev() {
            let up_w = match self.spec.upsample {
                Upsample::Transposed => take(),
                Upsample::Bilinear => tape.constant(bilinear_kernel(self.spec.num_classes)),
            };
            score = tape.transposed_conv2d(score, up_w, UPSAMPLE)?;
            if level > 0 {
                let (w, b) = (take(), take());
                let skip = tape.conv2d(features[level], w, b, pointwise)?;
                score = tape.add(score, skip)?;
            }
        }
        Ok(Recorded {
            logits: score,
            params: vars,
        })
    }

    /// Class logits `[N, C, H, W]` at input resolution.
    pub fn forward(&self, image: &Tensor<T>, seg: Option<&SegPlanes<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let iv = tape.constant(image.clone());
        let sv = seg.map(|s| tape.constant(s.tensor().clone()));
        let rec = self.record(&mut tape, iv, sv)?;
        Ok(tape.value(rec.logits).clone())
    }
}

/// Per-pixel argmax over classes; ties go to the lowest class index.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> LabelMap {
    let s = logits.shape();
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.batch * plane);
    for n in 0..s.batch {
        let z = logits.item(n);
        for p in 0..plane {
            let mut best = 0;
            for c in 1..s.channels {
                if z[c * plane + p] > z[best * plane + p] {
                    best = c;
                }
            }
            data.push(best as u8);
        }
    }
    LabelMap::new(s.batch, s.height, s.width, data).expect("extent preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valve::encode_segmap;

    fn image(seed: u64, n: usize, size: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([n, 3, size, size], |_| rng.gen_range(0.0..1.0))
    }

    fn small_spec(seg: Option<usize>) -> NetworkSpec {
        NetworkSpec {
            widths: vec![4, 6, 8, 8],
            seg_channels: seg,
            ..NetworkSpec::plain(3)
        }
    }

    #[test]
    fn default_content_net_parameter_count() {
        // Hand count for widths [16,32,64,128], k=3, S=2, C=4:
        // valve layer 752, down/enc pairs 2320+4640+9248+18496+36928+73856,
        // scores 516+260+132, upsamplers 3·(4·4·4·4).
        let spec = NetworkSpec::gated(4, 2);
        assert_eq!(spec.param_count(), 147_916);
        let net = build_network::<f32>(&spec, 0).unwrap();
        assert_eq!(net.param_count(), 147_916);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let spec = NetworkSpec::gated(4, 2);
        let a = build_network::<f32>(&spec, 7).unwrap();
        let b = build_network::<f32>(&spec, 7).unwrap();
        let c = build_network::<f32>(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gated_spec_starts_with_valve_layer() {
        let net = build_network::<f32>(&NetworkSpec::gated(4, 2), 0).unwrap();
        let valve = net.valve_params().unwrap();
        assert_eq!(valve.valve_weight.shape(), Shape::new(16, 2, 3, 3));
        assert!(valve.valve_weight.data().iter().all(|&v| v == 0.0));
        assert!(valve.valve_bias.data().iter().all(|&v| v == 1.0));
        let plain = build_network::<f32>(&NetworkSpec::plain(4), 0).unwrap();
        assert!(plain.valve_params().is_none());
    }

    #[test]
    fn logits_keep_input_extent() {
        let net = build_network::<f32>(&NetworkSpec::plain(3), 1).unwrap();
        let out = net.forward(&image(0, 1, 64), None).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 64, 64));
        let out = net.forward(&image(0, 1, 24), None).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 24, 24));
    }

    #[test]
    fn rejects_indivisible_extent() {
        let net = build_network::<f32>(&small_spec(None), 1).unwrap();
        assert!(net.forward(&image(0, 1, 12), None).is_err());
    }

    #[test]
    fn seg_input_contract() {
        let gated = build_network::<f32>(&small_spec(Some(2)), 1).unwrap();
        let plain = build_network::<f32>(&small_spec(None), 1).unwrap();
        let img = image(1, 1, 16);
        let seg = encode_segmap(&LabelMap::filled(1, 16, 16, 1), 2).unwrap();
        assert!(gated.forward(&img, None).is_err());
        assert!(plain.forward(&img, Some(&seg)).is_err());
        assert!(gated.forward(&img, Some(&seg)).is_ok());
        let wrong = encode_segmap(&LabelMap::filled(1, 16, 16, 1), 3).unwrap();
        assert!(gated.forward(&img, Some(&wrong)).is_err());
    }

    #[test]
    fn bilinear_variant_has_no_upsampling_params() {
        let spec = NetworkSpec {
            upsample: Upsample::Bilinear,
            ..small_spec(None)
        };
        let net = build_network::<f32>(&spec, 2).unwrap();
        assert!(net.named_params().all(|(n, _)| !n.starts_with("up")));
        let out = net.forward(&image(3, 2, 16), None).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 3, 16, 16));
    }

    #[test]
    fn bilinear_kernel_upsamples_constant() {
        let k = bilinear_kernel::<f64>(1);
        let x = Tensor::full([1, 1, 4, 4], 1.0);
        let y = crate::tensor::transposed_conv2d(&x, &k, UPSAMPLE).unwrap();
        // interior pixels of an upsampled constant stay constant
        for yy in 1..7 {
            for xx in 1..7 {
                assert!((y.get([0, 0, yy, xx]) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_argmax_and_ties() {
        let z = Tensor::from_vec([1, 2, 1, 2], vec![0.1f32, 0.5, 0.9, 0.5]).unwrap();
        assert_eq!(predict(&z).data(), &[1, 0]);
    }

    #[test]
    fn from_params_rejects_wrong_layout() {
        let net = build_network::<f32>(&small_spec(None), 0).unwrap();
        let params: Vec<_> = net.named_params().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert!(Network::from_params(small_spec(None), params.clone()).is_ok());
        let err = Network::from_params(
            NetworkSpec {
                num_classes: 4,
                ..small_spec(None)
            },
            params,
        )
        .unwrap_err();
        assert_eq!(err.code(), "shape_mismatch");
    }
}
