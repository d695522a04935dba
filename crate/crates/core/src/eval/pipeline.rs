use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fcn::{predict, Network};
use crate::label::LabelMap;
use crate::tensor::Tensor;
use crate::valve::encode_segmap;

/// How content labels are produced for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// One net predicts the content classes directly from the image.
    SingleNet,
    /// A vessel net's prediction feeds the content net.
    ModularPredicted,
    /// The ground-truth vessel map feeds the content net.
    ModularGroundTruth,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [
        EvalMode::SingleNet,
        EvalMode::ModularPredicted,
        EvalMode::ModularGroundTruth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::SingleNet => "single",
            EvalMode::ModularPredicted => "modular",
            EvalMode::ModularGroundTruth => "modular-gt",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "a" => Ok(EvalMode::SingleNet),
            "modular" | "b" => Ok(EvalMode::ModularPredicted),
            "modular-gt" | "c" => Ok(EvalMode::ModularGroundTruth),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected single, modular or modular-gt)"
            ))),
        }
    }
}

/// Whichever trained nets are available to an evaluation.
#[derive(Clone, Debug, Default)]
pub struct NetSet {
    pub single: Option<Network<f32>>,
    pub vessel: Option<Network<f32>>,
    pub content: Option<Network<f32>>,
}

impl NetSet {
    pub fn single(&self) -> Result<&Network<f32>> {
        self.single.as_ref().ok_or(Error::MissingCheckpoint("single-net"))
    }

    pub fn vessel(&self) -> Result<&Network<f32>> {
        self.vessel.as_ref().ok_or(Error::MissingCheckpoint("vessel-net"))
    }

    pub fn content(&self) -> Result<&Network<f32>> {
        self.content.as_ref().ok_or(Error::MissingCheckpoint("content-net"))
    }

    /// Fails naming the first net `mode` needs but lacks.
    pub fn require(&self, mode: EvalMode) -> Result<()> {
        match mode {
            EvalMode::SingleNet => self.single().map(drop),
            EvalMode::ModularPredicted => {
                self.vessel()?;
                self.content().map(drop)
            }
            EvalMode::ModularGroundTruth => self.content().map(drop),
        }
    }

    /// Content labels for `images` under `mode`. `gt_vessel` is only read in
    /// [`EvalMode::ModularGroundTruth`].
    pub fn predict(&self, mode: EvalMode, images: &Tensor<f32>, gt_vessel: Option<&LabelMap>) -> Result<LabelMap> {
        match mode {
            EvalMode::SingleNet => {
                let net = self.single()?;
                if net.spec().seg_channels.is_some() {
                    return Err(Error::CheckpointShape(
                        "single-net checkpoint has a segmentation input".into(),
                    ));
                }
                Ok(predict(&net.forward(images, None)?))
            }
            EvalMode::ModularPredicted => Ok(modular_inference(self.vessel()?, self.content()?, images)?.content),
            EvalMode::ModularGroundTruth => {
                let gt = gt_vessel.ok_or_else(|| {
                    Error::InvalidArgument("modular-gt evaluation needs ground-truth vessel labels".into())
                })?;
                content_from_vessel_map(self.content()?, images, gt)
            }
        }
    }
}

/// Both stages of the modular pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModularOutput {
    pub vessel: LabelMap,
    pub content: LabelMap,
}

fn check_pair(vessel_net: &Network<f32>, content_net: &Network<f32>) -> Result<()> {
    let v = vessel_net.spec();
    if v.seg_channels.is_some() {
        return Err(Error::CheckpointShape(
            "vessel-net checkpoint has a segmentation input".into(),
        ));
    }
    let segments = content_net
        .spec()
        .seg_channels
        .ok_or_else(|| Error::CheckpointShape("content-net checkpoint has no segmentation input".into()))?;
    if segments != v.num_classes {
        return Err(Error::CheckpointShape(format!(
            "content net expects {segments} segment planes, vessel net predicts {} classes",
            v.num_classes
        )));
    }
    Ok(())
}

/// Content labels given a vessel map (predicted or ground truth).
pub fn content_from_vessel_map(
    content_net: &Network<f32>,
    images: &Tensor<f32>,
    vessel: &LabelMap,
) -> Result<LabelMap> {
    let segments = content_net
        .spec()
        .seg_channels
        .ok_or_else(|| Error::CheckpointShape("content-net checkpoint has no segmentation input".into()))?;
    let planes = encode_segmap(vessel, segments)?;
    Ok(predict(&content_net.forward(images, Some(&planes))?))
}

/// Vessel net → argmax → one-hot planes → content net → argmax.
pub fn modular_inference(
    vessel_net: &Network<f32>,
    content_net: &Network<f32>,
    images: &Tensor<f32>,
) -> Result<ModularOutput> {
    check_pair(vessel_net, content_net)?;
    let vessel = predict(&vessel_net.forward(images, None)?);
    let content = content_from_vessel_map(content_net, images, &vessel)?;
    Ok(ModularOutput { vessel, content })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{build_network, NetworkSpec};
    use crate::valve::encode_segmap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn images(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([2, 3, 16, 16], |_| rng.gen_range(0.0..1.0))
    }

    fn perturb_valves(net: &mut Network<f32>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = net.valve_params().unwrap();
        for x in v.valve_weight.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        net.set_valve_params(v).unwrap();
    }

    #[test]
    fn pipeline_matches_manual_composition() {
        let vessel = build_network::<f32>(&NetworkSpec::plain(2), 1).unwrap();
        let mut content = build_network::<f32>(&NetworkSpec::gated(4, 2), 2).unwrap();
        perturb_valves(&mut content, 3);
        let x = images(4);
        let out = modular_inference(&vessel, &content, &x).unwrap();

        let v = predict(&vessel.forward(&x, None).unwrap());
        let planes = encode_segmap::<f32>(&v, 2).unwrap();
        let c = predict(&content.forward(&x, Some(&planes)).unwrap());
        assert_eq!(out.vessel, v);
        assert_eq!(out.content, c);
    }

    #[test]
    fn open_valves_ignore_the_vessel_net() {
        let content = build_network::<f32>(&NetworkSpec::gated(4, 2), 5).unwrap();
        let x = images(6);
        let a = modular_inference(&build_network(&NetworkSpec::plain(2), 7).unwrap(), &content, &x).unwrap();
        let b = modular_inference(&build_network(&NetworkSpec::plain(2), 8).unwrap(), &content, &x).unwrap();
        assert_ne!(a.vessel, b.vessel);
        assert_eq!(a.content, b.content);
    }

    #[test]
    fn ground_truth_mode_is_the_pipeline_with_gt_vessel() {
        let mut content = build_network::<f32>(&NetworkSpec::gated(4, 2), 9).unwrap();
        perturb_valves(&mut content, 10);
        let x = images(11);
        let gt = LabelMap::new(2, 16, 16, (0..512).map(|i| ((i / 7) % 2) as u8).collect()).unwrap();
        let nets = NetSet {
            content: Some(content.clone()),
            ..NetSet::default()
        };
        let direct = nets.predict(EvalMode::ModularGroundTruth, &x, Some(&gt)).unwrap();
        assert_eq!(direct, content_from_vessel_map(&content, &x, &gt).unwrap());
    }

    #[test]
    fn missing_nets_are_named() {
        let nets = NetSet {
            content: Some(build_network(&NetworkSpec::gated(4, 2), 0).unwrap()),
            ..NetSet::default()
        };
        let err = nets.require(EvalMode::SingleNet).unwrap_err();
        assert_eq!(err.to_string(), "missing single-net checkpoint");
        let err = nets.require(EvalMode::ModularPredicted).unwrap_err();
        assert_eq!(err.to_string(), "missing vessel-net checkpoint");
        assert!(nets.require(EvalMode::ModularGroundTruth).is_ok());
    }

    #[test]
    fn incompatible_pair_rejected() {
        let vessel = build_network::<f32>(&NetworkSpec::plain(3), 0).unwrap();
        let content = build_network::<f32>(&NetworkSpec::gated(4, 2), 0).unwrap();
        assert!(modular_inference(&vessel, &content, &images(0)).is_err());
        assert!(modular_inference(&content, &content, &images(0)).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EvalMode::ALL {
            assert_eq!(m.name().parse::<EvalMode>().unwrap(), m);
        }
        assert_eq!("b".parse::<EvalMode>().unwrap(), EvalMode::ModularPredicted);
    }
}
