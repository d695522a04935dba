//! Independent training of the three net roles.
//!
//! The content net always receives the ground-truth vessel map as its
//! segmentation input, so it never depends on a trained vessel net.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::IouCounts;
use crate::fcn::{build_network, predict, Checkpoint, Network, NetworkSpec, TrainingMeta};
use crate::label::LabelMap;
use crate::scenes::{Dataset, Level};
use crate::tensor::{softmax_cross_entropy, Adam, Optimizer, Sgd, Tape, Tensor};
use crate::valve::{encode_segmap, SegPlanes};

/// Segment planes fed to content nets: background and vessel.
pub const VESSEL_SEGMENTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Steps between held-out evaluations (0 disables intermediate ones).
    pub eval_interval: usize,
    pub level: Level,
    /// Scale each pixel's loss by the inverse frequency of its class.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 6000,
            batch_size: 8,
            lr: 0.01,
            optimizer: OptimizerKind::Sgd { momentum: 0.9 },
            seed: 0,
            eval_interval: 500,
            level: Level::SolidLiquid,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        match key {
            "steps" => self.steps = value.parse().map_err(|_| bad())?,
            "batch" | "batch_size" => self.batch_size = value.parse().map_err(|_| bad())?,
            "lr" => self.lr = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "eval_interval" => self.eval_interval = value.parse().map_err(|_| bad())?,
            "level" => self.level = value.parse().map_err(|_| bad())?,
            "class_weighting" => self.class_weighting = value.parse().map_err(|_| bad())?,
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd { momentum: 0.9 },
                    "adam" => OptimizerKind::Adam {
                        beta1: 0.9,
                        beta2: 0.999,
                        eps: 1e-8,
                    },
                    _ => return Err(bad()),
                }
            }
            "momentum" => match &mut self.optimizer {
                OptimizerKind::Sgd { momentum } => *momentum = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config("momentum only applies to sgd".into())),
            },
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which of the three nets is being trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    /// Image → background/vessel.
    Vessel,
    /// Image + vessel planes → content classes at a level.
    Content,
    /// Image → content classes at a level, no vessel input.
    Single,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Vessel => "vessel",
            Role::Content => "content",
            Role::Single => "single",
        }
    }

    /// Architecture for a net predicting `num_classes` classes.
    pub fn spec(self, num_classes: usize) -> NetworkSpec {
        match self {
            Role::Vessel => NetworkSpec::plain(2),
            Role::Content => NetworkSpec::gated(num_classes, VESSEL_SEGMENTS),
            Role::Single => NetworkSpec::plain(num_classes),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vessel" => Ok(Role::Vessel),
            "content" => Ok(Role::Content),
            "single" => Ok(Role::Single),
            other => Err(Error::InvalidArgument(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean training loss since the previous evaluation.
    pub loss: f64,
    pub accuracy: f64,
    pub mean_iou: f64,
    /// Per-class IoU; `None` for classes absent from prediction and target.
    pub class_iou: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Training loss of every step.
    pub step_losses: Vec<f32>,
    pub evals: Vec<EvalPoint>,
}

impl TrainLog {
    /// `step,loss,accuracy,mean_iou`, one row per evaluation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,accuracy,mean_iou\n");
        for e in &self.evals {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", e.step, e.loss, e.accuracy, e.mean_iou);
        }
        out
    }

    fn median(values: &[f32]) -> f32 {
        let mut v = values.to_vec();
        v.sort_by(f32::total_cmp);
        if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        }
    }

    /// Medians of the first and last 10% of step losses.
    pub fn loss_medians(&self) -> Option<(f32, f32)> {
        let n = self.step_losses.len();
        if n < 10 {
            return None;
        }
        let k = n / 10;
        Some((
            Self::median(&self.step_losses[..k]),
            Self::median(&self.step_losses[n - k..]),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Tensors for one role, prepared once per run.
struct Prepared {
    images: Vec<Tensor<f32>>,
    targets: Vec<LabelMap>,
    segs: Option<Vec<SegPlanes<f32>>>,
}

impl Prepared {
    fn new(data: &Dataset, role: Role, level: Level) -> Result<Self> {
        let target_level = if role == Role::Vessel { Level::Vessel } else { level };
        let mut images = Vec::with_capacity(data.len());
        let mut targets = Vec::with_capacity(data.len());
        let mut segs = (role == Role::Content).then(Vec::new);
        for s in &data.samples {
            images.push(s.image_tensor());
            targets.push(
                s.label(target_level)
                    .ok_or_else(|| {
                        Error::Dataset(format!("sample {} lacks level-{} labels", s.id, target_level.number()))
                    })?
                    .clone(),
            );
            if let Some(segs) = segs.as_mut() {
                let vessel = s
                    .label(Level::Vessel)
                    .ok_or_else(|| Error::Dataset(format!("sample {} lacks vessel labels", s.id)))?;
                segs.push(encode_segmap(vessel, VESSEL_SEGMENTS)?);
            }
        }
        Ok(Prepared { images, targets, segs })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, LabelMap, Option<SegPlanes<f32>>)> {
        let images: Vec<&Tensor<f32>> = idx.iter().map(|&i| &self.images[i]).collect();
        let targets: Vec<&LabelMap> = idx.iter().map(|&i| &self.targets[i]).collect();
        let seg = match &self.segs {
            Some(segs) => {
                let planes: Vec<&Tensor<f32>> = idx.iter().map(|&i| segs[i].tensor()).collect();
                Some(SegPlanes::from_tensor(Tensor::concat_batch(&planes)?)?)
            }
            None => None,
        };
        Ok((Tensor::concat_batch(&images)?, LabelMap::concat(&targets)?, seg))
    }
}

fn inverse_frequency(targets: &[LabelMap], classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; classes];
    for t in targets {
        for &l in t.data() {
            counts[l as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                total as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Pixel statistics of `net` on prepared data, evaluated in batches.
fn evaluate(net: &Network<f32>, data: &Prepared) -> Result<IouCounts> {
    let mut counts = IouCounts::new(net.spec().num_classes);
    let all: Vec<usize> = (0..data.images.len()).collect();
    for chunk in all.chunks(16) {
        let (images, targets, seg) = data.batch(chunk)?;
        let logits = net.forward(&images, seg.as_ref())?;
        counts.accumulate(&predict(&logits), &targets)?;
    }
    Ok(counts)
}

/// Trains one role. `heldout` drives the logged metrics; without it the
/// training set is scored instead.
pub fn train_role(
    role: Role,
    level: Level,
    train: &Dataset,
    heldout: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if role != Role::Vessel && level == Level::Vessel {
        return Err(Error::InvalidArgument(format!(
            "{role} nets predict vessel contents; choose a level above 1"
        )));
    }
    let hierarchy = crate::scenes::HierarchySpec::standard();
    let target_level = if role == Role::Vessel { Level::Vessel } else { level };
    let classes = hierarchy.num_classes(target_level);
    let spec = role.spec(classes);
    let mut net = build_network::<f32>(&spec, config.seed)?;

    let data = Prepared::new(train, role, level)?;
    let scored = match heldout {
        Some(h) => Prepared::new(h, role, level)?,
        None => Prepared::new(train, role, level)?,
    };
    let weights = config
        .class_weighting
        .then(|| inverse_frequency(&data.targets, classes));

    let mut optimizer: Box<dyn Optimizer<f32>> = match config.optimizer {
        OptimizerKind::Sgd { momentum } => Box::new(Sgd::new(config.lr, momentum)),
        OptimizerKind::Adam { beta1, beta2, eps } => Box::new(Adam::new(config.lr, beta1, beta2, eps)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = TrainLog::default();
    let mut since_eval = Vec::new();

    for step in 1..=config.steps {
        let mut idx = Vec::with_capacity(config.batch_size);
        while idx.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..data.images.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (images, targets, seg) = data.batch(&idx)?;
        let mut tape = Tape::new();
        let iv = tape.constant(images);
        let sv = seg.map(|s| tape.constant(s.into_tensor()));
        let rec = net.record(&mut tape, iv, sv)?;
        let loss = softmax_cross_entropy(tape.value(rec.logits), &targets, weights.as_deref())?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }
        let mut grads = tape.backward(rec.logits, loss.grad)?;
        let grads: Vec<Tensor<f32>> = rec
            .params
            .iter()
            .zip(net.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        optimizer.step(net.params_mut(), &grads)?;
        log.step_losses.push(loss.loss);
        since_eval.push(loss.loss);

        let due = step == config.steps || (config.eval_interval > 0 && step % config.eval_interval == 0);
        if due {
            let counts = evaluate(&net, &scored)?;
            log.evals.push(EvalPoint {
                step,
                loss: since_eval.iter().map(|&l| l as f64).sum::<f64>() / since_eval.len() as f64,
                accuracy: counts.pixel_accuracy(),
                mean_iou: counts.mean_iou().unwrap_or(0.0),
                class_iou: counts.ious(),
            });
            since_eval.clear();
        }
    }

    let final_loss = log.evals.last().map_or(0.0, |e| e.loss as f32);
    let meta = TrainingMeta {
        seed: config.seed,
        steps: config.steps,
        final_loss,
        role: Some(role.name().to_string()),
        level: Some(target_level.number()),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(net, meta),
        log,
    })
}

/// Image → background/vessel, cross-entropy against the level-1 labels.
pub fn train_vessel_net(train: &Dataset, heldout: Option<&Dataset>, config: &TrainConfig) -> Result<TrainOutcome> {
    train_role(Role::Vessel, Level::Vessel, train, heldout, config)
}

/// Image plus ground-truth vessel planes → classes at `level`.
pub fn train_content_net(
    train: &Dataset,
    heldout: Option<&Dataset>,
    level: Level,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_role(Role::Content, level, train, heldout, config)
}

/// Image → classes at `level` in one net, the non-modular baseline.
pub fn train_single_net(
    train: &Dataset,
    heldout: Option<&Dataset>,
    level: Level,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_role(Role::Single, level, train, heldout, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            eval_interval: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_parses_key_values() {
        let cfg = TrainConfig::from_kv("# comment\nsteps = 10\nlr=0.5\noptimizer=adam\nlevel=fill\n").unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.lr, 0.5);
        assert!(matches!(cfg.optimizer, OptimizerKind::Adam { .. }));
        assert_eq!(cfg.level, Level::Fill);
        assert!(TrainConfig::from_kv("bogus=1").is_err());
        assert!(TrainConfig::from_kv("lr=0").is_err());
        assert!(TrainConfig::from_kv("batch=0").is_err());
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let ds = Dataset::generate(2, 16, 0).unwrap();
        let cfg = tiny_config(0);
        let out = train_vessel_net(&ds, None, &cfg).unwrap();
        let init = build_network::<f32>(&NetworkSpec::plain(2), cfg.seed).unwrap();
        assert_eq!(out.checkpoint.network, init);
        assert!(out.log.step_losses.is_empty());
    }

    #[test]
    fn same_seed_same_log_and_weights() {
        let ds = Dataset::generate(3, 16, 1).unwrap();
        let cfg = tiny_config(3);
        let a = train_content_net(&ds, None, Level::SolidLiquid, &cfg).unwrap();
        let b = train_content_net(&ds, None, Level::SolidLiquid, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.log.evals.iter().map(|e| e.step).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn roles_get_their_architectures() {
        let ds = Dataset::generate(2, 16, 2).unwrap();
        let cfg = tiny_config(1);
        let single = train_single_net(&ds, None, Level::SolidLiquid, &cfg).unwrap();
        assert_eq!(single.checkpoint.network.spec(), &NetworkSpec::plain(4));
        let content = train_content_net(&ds, None, Level::Fill, &cfg).unwrap();
        assert_eq!(content.checkpoint.network.spec(), &NetworkSpec::gated(3, 2));
        assert_eq!(content.checkpoint.meta.role.as_deref(), Some("content"));
        assert_eq!(content.checkpoint.meta.level, Some(2));
        assert!(train_single_net(&ds, None, Level::Vessel, &cfg).is_err());
    }

    #[test]
    fn log_csv_layout() {
        let log = TrainLog {
            step_losses: vec![],
            evals: vec![EvalPoint {
                step: 5,
                loss: 0.5,
                accuracy: 0.25,
                mean_iou: 0.125,
                class_iou: vec![Some(0.25), None],
            }],
        };
        assert_eq!(
            log.to_csv(),
            "step,loss,accuracy,mean_iou\n5,0.500000,0.250000,0.125000\n"
        );
    }

    #[test]
    fn inverse_frequency_balances() {
        let t = vec![LabelMap::new(1, 1, 4, vec![0, 0, 0, 1]).unwrap()];
        let w = inverse_frequency(&t, 3);
        assert!((w[0] * 3.0 - w[1]).abs() < 1e-12);
        assert_eq!(w[2], 1.0);
    }
}
