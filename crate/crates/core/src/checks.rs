//! Central-difference gradient checks for every differentiable op and the
//! composite valve layer, in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::label::LabelMap;
use crate::tensor::gradcheck::{gradcheck, projected, GradcheckReport};
use crate::tensor::{softmax_cross_entropy, ConvGeometry, Tensor};
use crate::valve::{encode_segmap, valve_maps, valve_on_tape, ValveLayerParams, ValveVars};

/// Finite-difference step.
pub const EPS: f64 = 1e-3;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Pre-activations closer to the relu kink than this are resampled, since a
/// central difference straddling the kink is meaningless.
const KINK_MARGIN: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradcheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values in `±[0.1, 1)`, away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn conv_check(
    rng: &mut ChaCha8Rng,
    op: &'static str,
    cin: usize,
    f: usize,
    k: usize,
    geom: ConvGeometry,
) -> Result<OpCheck> {
    let x = uniform(rng, [2, cin, 5, 5]);
    let w = uniform(rng, [f, cin, k, k]);
    let b = uniform(rng, [1, f, 1, 1]);
    let seed = rng.gen();
    let report = gradcheck(
        &[x, w, b],
        EPS,
        projected(move |t, v| t.conv2d(v[0], v[1], v[2], geom), seed),
    )?;
    Ok(OpCheck { op, report })
}

fn valve_inputs(rng: &mut ChaCha8Rng) -> Result<(Tensor<f64>, LabelMap, ValveLayerParams<f64>)> {
    loop {
        let image = uniform(rng, [2, 2, 5, 5]);
        let seg = LabelMap::new(2, 5, 5, (0..50).map(|_| rng.gen_range(0..2)).collect())?;
        let params = ValveLayerParams {
            image_weight: uniform(rng, [3, 2, 3, 3]),
            image_bias: uniform(rng, [1, 3, 1, 1]),
            valve_weight: uniform(rng, [3, 2, 3, 3]),
            valve_bias: uniform(rng, [1, 3, 1, 1]),
        };
        let planes = encode_segmap(&seg, 2)?;
        if valve_maps(&image, &planes, &params)?
            .normalized
            .data()
            .iter()
            .all(|v| v.abs() > KINK_MARGIN)
        {
            return Ok((image, seg, params));
        }
    }
}

/// Runs the full suite. Deterministic for a given `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        conv_check(&mut rng, "conv2d", 2, 3, 3, ConvGeometry::same(3))?,
        conv_check(&mut rng, "conv2d_stride2", 2, 3, 3, ConvGeometry::new(2, 1))?,
        conv_check(&mut rng, "conv2d_1x1", 3, 2, 1, ConvGeometry::new(1, 0))?,
    ];

    let x = uniform(&mut rng, [2, 2, 3, 3]);
    let w = uniform(&mut rng, [2, 3, 4, 4]);
    let s = rng.gen();
    out.push(OpCheck {
        op: "transposed_conv2d",
        report: gradcheck(
            &[x, w],
            EPS,
            projected(|t, v| t.transposed_conv2d(v[0], v[1], ConvGeometry::new(2, 1)), s),
        )?,
    });

    let x = away_from_zero(&mut rng, [2, 3, 4, 4]);
    let s = rng.gen();
    out.push(OpCheck {
        op: "relu",
        report: gradcheck(&[x], EPS, projected(|t, v| Ok(t.relu(v[0])), s))?,
    });

    let (a, b) = (uniform(&mut rng, [2, 3, 4, 4]), uniform(&mut rng, [2, 3, 4, 4]));
    let s = rng.gen();
    out.push(OpCheck {
        op: "mul",
        report: gradcheck(&[a.clone(), b.clone()], EPS, projected(|t, v| t.mul(v[0], v[1]), s))?,
    });
    let s = rng.gen();
    out.push(OpCheck {
        op: "add",
        report: gradcheck(&[a, b], EPS, projected(|t, v| t.add(v[0], v[1]), s))?,
    });

    let logits = Tensor::from_fn([2, 4, 3, 3], |_| rng.gen_range(-2.0..2.0));
    let labels = LabelMap::new(2, 3, 3, (0..18).map(|_| rng.gen_range(0..4)).collect())?;
    let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..2.0)).collect();
    for (op, w) in [
        ("softmax_cross_entropy", None),
        ("softmax_cross_entropy_weighted", Some(weights)),
    ] {
        let report = gradcheck(std::slice::from_ref(&logits), EPS, |inp| {
            let l = softmax_cross_entropy(&inp[0], &labels, w.as_deref())?;
            Ok((l.loss, vec![l.grad]))
        })?;
        out.push(OpCheck { op, report });
    }

    let (image, seg, params) = valve_inputs(&mut rng)?;
    let planes = encode_segmap::<f64>(&seg, 2)?.into_tensor();
    let s = rng.gen();
    let report = gradcheck(
        &[
            image,
            params.image_weight,
            params.image_bias,
            params.valve_weight,
            params.valve_bias,
        ],
        EPS,
        projected(
            move |t, v| {
                let seg = t.constant(planes.clone());
                valve_on_tape(
                    t,
                    v[0],
                    seg,
                    ValveVars {
                        image_weight: v[1],
                        image_bias: v[2],
                        valve_weight: v[3],
                        valve_bias: v[4],
                    },
                )
            },
            s,
        ),
    )?;
    out.push(OpCheck {
        op: "valve_layer",
        report,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in gradient_suite(0).unwrap() {
            assert!(c.passed(), "{} {:?}", c.op, c.report);
            assert!(c.report.checked > 0);
        }
    }
}
