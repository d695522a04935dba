//! Valve-filter gating: image features are multiplied element-wise by
//! relevance maps computed from the segmentation mask, then rectified.
//!
//! For every image filter there is a matching valve filter over the one-hot
//! segment planes. The relevance map it produces opens, closes or inverts
//! that feature channel region by region.

use crate::error::{shape_err, Result};
use crate::label::LabelMap;
use crate::tensor::{conv2d, mul, relu, ConvGeometry, Scalar, Tape, Tensor, Var};

/// One-hot segment planes `[N, S, H, W]`: exactly one plane is 1 per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SegPlanes<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> SegPlanes<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn segments(&self) -> usize {
        self.0.shape().channels
    }

    /// Validates that `planes` is one-hot along the channel axis.
    pub fn from_tensor(planes: Tensor<T>) -> Result<Self> {
        let s = planes.shape();
        let plane = s.plane();
        for n in 0..s.batch {
            let item = planes.item(n);
            for p in 0..plane {
                let mut sum = T::zero();
                for c in 0..s.channels {
                    let v = item[c * plane + p];
                    if v != T::zero() && v != T::one() {
                        return Err(shape_err!("segment plane value {v} is not 0 or 1"));
                    }
                    sum += v;
                }
                if sum != T::one() {
                    return Err(shape_err!("segment planes are not one-hot at pixel {p}"));
                }
            }
        }
        Ok(SegPlanes(planes))
    }

    /// Index of the hot plane at each pixel.
    pub fn argmax(&self) -> LabelMap {
        let s = self.0.shape();
        let plane = s.plane();
        let mut data = vec![0u8; s.batch * plane];
        for n in 0..s.batch {
            let item = self.0.item(n);
            for p in 0..plane {
                data[n * plane + p] = (0..s.channels).find(|&c| item[c * plane + p] == T::one()).unwrap_or(0) as u8;
            }
        }
        LabelMap::new(s.batch, s.height, s.width, data).expect("extent preserved")
    }
}

/// One-hot encodes a segmentation map into `num_segments` planes.
pub fn encode_segmap<T: Scalar>(map: &LabelMap, num_segments: usize) -> Result<SegPlanes<T>> {
    map.check_range(num_segments)?;
    let (n, h, w) = map.dims();
    let plane = h * w;
    let mut t = Tensor::zeros([n, num_segments, h, w]);
    for b in 0..n {
        let labels = map.item(b);
        let item = t.item_mut(b);
        for (p, &l) in labels.iter().enumerate() {
            item[l as usize * plane + p] = T::one();
        }
    }
    Ok(SegPlanes(t))
}

/// Image filter bank and its matching valve filter bank.
///
/// Biases are stored as `[1, F, 1, 1]` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ValveLayerParams<T: Scalar = f32> {
    pub image_weight: Tensor<T>,
    pub image_bias: Tensor<T>,
    pub valve_weight: Tensor<T>,
    pub valve_bias: Tensor<T>,
}

impl<T: Scalar> ValveLayerParams<T> {
    pub fn validate(&self) -> Result<()> {
        let iw = self.image_weight.shape();
        let vw = self.valve_weight.shape();
        if iw.batch != vw.batch || iw.height != vw.height || iw.width != vw.width {
            return Err(shape_err!(
                "image filters {iw} and valve filters {vw} must share count and size"
            ));
        }
        if iw.height.is_multiple_of(2) {
            return Err(shape_err!("valve layer needs an odd kernel, got {}", iw.height));
        }
        for b in [&self.image_bias, &self.valve_bias] {
            if b.len() != iw.batch {
                return Err(shape_err!("bias {} for {} filters", b.shape(), iw.batch));
            }
        }
        Ok(())
    }

    pub fn filters(&self) -> usize {
        self.image_weight.shape().batch
    }

    pub fn kernel(&self) -> usize {
        self.image_weight.shape().height
    }

    /// Valve weights zero, valve biases one: every relevance map is 1.
    pub fn open_valves(&mut self) {
        self.valve_weight = Tensor::zeros(self.valve_weight.shape());
        self.valve_bias = Tensor::full(self.valve_bias.shape(), T::one());
    }
}

/// Intermediate maps of one valve layer evaluation.
#[derive(Clone, Debug)]
pub struct ValveMaps<T: Scalar = f32> {
    pub features: Tensor<T>,
    pub relevance: Tensor<T>,
    /// Pre-rectification product of features and relevance.
    pub normalized: Tensor<T>,
    pub output: Tensor<T>,
}

fn check_extents<T: Scalar>(image: &Tensor<T>, seg: &SegPlanes<T>) -> Result<()> {
    let (i, s) = (image.shape(), seg.tensor().shape());
    if (i.batch, i.height, i.width) != (s.batch, s.height, s.width) {
        return Err(shape_err!("image {i} and segment planes {s} differ in extent"));
    }
    Ok(())
}

/// Evaluates the layer and keeps every intermediate map.
pub fn valve_maps<T: Scalar>(
    image: &Tensor<T>,
    seg: &SegPlanes<T>,
    params: &ValveLayerParams<T>,
) -> Result<ValveMaps<T>> {
    params.validate()?;
    check_extents(image, seg)?;
    let geom = ConvGeometry::same(params.kernel());
    let features = conv2d(image, &params.image_weight, params.image_bias.data(), geom)?;
    let relevance = conv2d(seg.tensor(), &params.valve_weight, params.valve_bias.data(), geom)?;
    let normalized = mul(&features, &relevance)?;
    let output = relu(&normalized);
    Ok(ValveMaps {
        features,
        relevance,
        normalized,
        output,
    })
}

/// `relu(conv(image, W_img) ⊙ conv(seg, W_valve))`, spatial extent preserved.
pub fn valve_forward<T: Scalar>(
    image: &Tensor<T>,
    seg: &SegPlanes<T>,
    params: &ValveLayerParams<T>,
) -> Result<Tensor<T>> {
    Ok(valve_maps(image, seg, params)?.output)
}

/// Tape handles for the four valve layer parameters.
#[derive(Clone, Copy, Debug)]
pub struct ValveVars {
    pub image_weight: Var,
    pub image_bias: Var,
    pub valve_weight: Var,
    pub valve_bias: Var,
}

/// Records the valve layer on a tape.
pub fn valve_on_tape<T: Scalar>(tape: &mut Tape<T>, image: Var, seg: Var, vars: ValveVars) -> Result<Var> {
    let (i, s) = (tape.value(image).shape(), tape.value(seg).shape());
    if (i.batch, i.height, i.width) != (s.batch, s.height, s.width) {
        return Err(shape_err!("image {i} and segment planes {s} differ in extent"));
    }
    let k = tape.value(vars.image_weight).shape().height;
    let geom = ConvGeometry::same(k);
    let features = tape.conv2d(image, vars.image_weight, vars.image_bias, geom)?;
    let relevance = tape.conv2d(seg, vars.valve_weight, vars.valve_bias, geom)?;
    let normalized = tape.mul(features, relevance)?;
    Ok(tape.relu(normalized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, cin: usize, s: usize, f: usize) -> ValveLayerParams<f64> {
        ValveLayerParams {
            image_weight: Tensor::from_fn([f, cin, 3, 3], |_| rng.gen_range(-1.0..1.0)),
            image_bias: Tensor::from_fn([1, f, 1, 1], |_| rng.gen_range(-1.0..1.0)),
            valve_weight: Tensor::from_fn([f, s, 3, 3], |_| rng.gen_range(-1.0..1.0)),
            valve_bias: Tensor::from_fn([1, f, 1, 1], |_| rng.gen_range(-1.0..1.0)),
        }
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, s: u8) -> LabelMap {
        LabelMap::new(n, h, w, (0..n * h * w).map(|_| rng.gen_range(0..s)).collect()).unwrap()
    }

    #[test]
    fn encode_single_pixel() {
        let m = LabelMap::new(1, 1, 1, vec![0]).unwrap();
        let planes = encode_segmap::<f32>(&m, 2).unwrap();
        assert_eq!(planes.tensor().data(), &[1.0, 0.0]);
    }

    #[test]
    fn encode_all_vessel() {
        let m = LabelMap::filled(1, 3, 3, 1);
        let planes = encode_segmap::<f32>(&m, 2).unwrap();
        assert!(planes.tensor().item(0)[..9].iter().all(|&v| v == 0.0));
        assert!(planes.tensor().item(0)[9..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let m = LabelMap::new(1, 1, 2, vec![0, 2]).unwrap();
        assert!(encode_segmap::<f32>(&m, 2).is_err());
    }

    #[test]
    fn argmax_inverts_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in 2..5u8 {
            let m = random_map(&mut rng, 2, 5, 7, s);
            let planes = encode_segmap::<f32>(&m, s as usize).unwrap();
            assert_eq!(planes.argmax(), m);
            assert!(SegPlanes::from_tensor(planes.into_tensor()).is_ok());
        }
    }

    #[test]
    fn from_tensor_rejects_non_one_hot() {
        assert!(SegPlanes::from_tensor(Tensor::<f32>::full([1, 2, 1, 1], 1.0)).is_err());
        assert!(SegPlanes::from_tensor(Tensor::<f32>::full([1, 2, 1, 1], 0.5)).is_err());
    }

    #[test]
    fn open_valve_is_plain_conv_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = random_params(&mut rng, 3, 2, 4);
        params.open_valves();
        let image = Tensor::from_fn([1, 3, 6, 6], |_| rng.gen_range(0.0..1.0));
        let seg = encode_segmap(&random_map(&mut rng, 1, 6, 6, 2), 2).unwrap();
        let gated = valve_forward(&image, &seg, &params).unwrap();
        let plain = relu(
            &conv2d(
                &image,
                &params.image_weight,
                params.image_bias.data(),
                ConvGeometry::same(3),
            )
            .unwrap(),
        );
        assert_eq!(gated, plain);
    }

    #[test]
    fn shut_valve_zeroes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = random_params(&mut rng, 3, 2, 4);
        params.valve_weight = Tensor::zeros(params.valve_weight.shape());
        params.valve_bias = Tensor::zeros(params.valve_bias.shape());
        let image = Tensor::from_fn([1, 3, 5, 5], |_| rng.gen_range(0.0..1.0));
        let seg = encode_segmap(&random_map(&mut rng, 1, 5, 5, 2), 2).unwrap();
        let out = valve_forward(&image, &seg, &params).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverted_relevance_kills_active_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = random_params(&mut rng, 2, 2, 3);
        let image = Tensor::from_fn([1, 2, 5, 5], |_| rng.gen_range(0.0..1.0));
        let seg = encode_segmap(&random_map(&mut rng, 1, 5, 5, 2), 2).unwrap();
        let flipped = ValveLayerParams {
            valve_weight: params.valve_weight.scale(-1.0),
            valve_bias: params.valve_bias.scale(-1.0),
            ..params.clone()
        };
        let a = valve_forward(&image, &seg, &params).unwrap();
        let b = valve_forward(&image, &seg, &flipped).unwrap();
        for (&x, &y) in a.data().iter().zip(b.data()) {
            if x > 0.0 {
                assert_eq!(y, 0.0);
            }
        }
    }

    #[test]
    fn extent_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = random_params(&mut rng, 3, 2, 2);
        let image = Tensor::<f64>::zeros([1, 3, 4, 4]);
        let seg = encode_segmap(&LabelMap::filled(1, 4, 5, 0), 2).unwrap();
        assert!(valve_forward(&image, &seg, &params).is_err());
    }

    #[test]
    fn tape_matches_functional() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 3, 2, 4);
        let image = Tensor::from_fn([2, 3, 6, 6], |_| rng.gen_range(0.0..1.0));
        let seg = encode_segmap(&random_map(&mut rng, 2, 6, 6, 2), 2).unwrap();
        let mut tape = Tape::new();
        let iv = tape.constant(image.clone());
        let sv = tape.constant(seg.tensor().clone());
        let vars = ValveVars {
            image_weight: tape.param(p.image_weight.clone()),
            image_bias: tape.param(p.image_bias.clone()),
            valve_weight: tape.param(p.valve_weight.clone()),
            valve_bias: tape.param(p.valve_bias.clone()),
        };
        let out = valve_on_tape(&mut tape, iv, sv, vars).unwrap();
        assert_eq!(tape.value(out), &valve_forward(&image, &seg, &p).unwrap());
    }
}
