//! Fixtures shared by the benches.

use valveseg::fcn::{build_network, Network, NetworkSpec};
use valveseg::scenes::{Dataset, Level};
use valveseg::tensor::{softmax_cross_entropy, Optimizer, Sgd, Tape, Tensor};
use valveseg::valve::{encode_segmap, SegPlanes};
use valveseg::LabelMap;

pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: LabelMap,
    pub planes: SegPlanes<f32>,
}

/// `n` generated scenes with level-3 targets and ground-truth vessel planes.
pub fn batch(n: usize, size: usize) -> Batch {
    let ds = Dataset::generate(n, size, 0).expect("valid size");
    let idx: Vec<usize> = (0..n).collect();
    Batch {
        images: ds.images(&idx).unwrap(),
        labels: ds.labels(&idx, Level::SolidLiquid).unwrap(),
        planes: encode_segmap(&ds.labels(&idx, Level::Vessel).unwrap(), 2).unwrap(),
    }
}

pub fn content_net() -> Network<f32> {
    build_network(&NetworkSpec::gated(4, 2), 0).unwrap()
}

/// One forward, backward and momentum-SGD update.
pub fn train_step(net: &mut Network<f32>, opt: &mut Sgd<f32>, b: &Batch) -> f32 {
    let mut tape = Tape::new();
    let iv = tape.constant(b.images.clone());
    let sv = tape.constant(b.planes.tensor().clone());
    let rec = net.record(&mut tape, iv, Some(sv)).unwrap();
    let loss = softmax_cross_entropy(tape.value(rec.logits), &b.labels, None).unwrap();
    let mut grads = tape.backward(rec.logits, loss.grad).unwrap();
    let g: Vec<Tensor<f32>> = rec
        .params
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    opt.step(net.params_mut(), &g).unwrap();
    loss.loss
}
