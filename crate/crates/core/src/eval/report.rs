use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EvalMode, IouCounts, NetSet};
use crate::error::{Error, Result};
use crate::fcn::Network;
use crate::label::LabelMap;
use crate::scenes::{Dataset, HierarchySpec, Level};

/// Images per forward pass during evaluation.
const EVAL_BATCH: usize = 16;

pub const CSV_HEADER: &str = "level,class,mode,iou,pixels_gt,pixels_pred,intersection,union";

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRow {
    pub class: String,
    /// `None` when the class is absent from both prediction and ground truth.
    pub iou: Option<f64>,
    pub pixels_gt: u64,
    pub pixels_pred: u64,
    pub intersection: u64,
    pub union: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub level: Level,
    pub mode: EvalMode,
    pub seed: u64,
    pub samples: usize,
    pub rows: Vec<ClassRow>,
    pub mean_iou: Option<f64>,
    /// Mean over defined classes other than background.
    pub content_mean_iou: Option<f64>,
    /// SHA-256 over mode, level, seed, sample ids and the nets used.
    pub config_digest: String,
}

fn fmt_iou(iou: Option<f64>) -> String {
    iou.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl MetricsReport {
    pub fn from_counts(
        counts: &IouCounts,
        names: &[String],
        level: Level,
        mode: EvalMode,
        seed: u64,
        samples: usize,
        config_digest: String,
    ) -> Self {
        let rows = names
            .iter()
            .enumerate()
            .map(|(c, name)| ClassRow {
                class: name.clone(),
                iou: counts.iou(c),
                pixels_gt: counts.pixels_gt[c],
                pixels_pred: counts.pixels_pred[c],
                intersection: counts.intersection[c],
                union: counts.union(c),
            })
            .collect();
        MetricsReport {
            level,
            mode,
            seed,
            samples,
            rows,
            mean_iou: counts.mean_iou(),
            content_mean_iou: counts.content_mean_iou(),
            config_digest,
        }
    }

    pub fn row(&self, class: &str) -> Option<&ClassRow> {
        self.rows.iter().find(|r| r.class == class)
    }

    /// Rows without the header line.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.level.number(),
                r.class,
                self.mode,
                fmt_iou(r.iou),
                r.pixels_gt,
                r.pixels_pred,
                r.intersection,
                r.union
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    /// Human-readable table with IoU in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} (level {}), mode {}, {} samples, seed {}",
            self.level.title(),
            self.level.number(),
            self.mode,
            self.samples,
            self.seed
        );
        let width = self.rows.iter().map(|r| r.class.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:<width$}  {:>9}", "class", "IoU");
        for r in &self.rows {
            let iou = r
                .iou
                .map_or_else(|| "undefined".to_string(), |v| format!("{:.2}%", 100.0 * v));
            let _ = writeln!(out, "{:<width$}  {:>9}", r.class, iou);
        }
        let pct = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{:.2}%", 100.0 * v));
        let _ = writeln!(out, "{:<width$}  {:>9}", "mean", pct(self.mean_iou));
        let _ = writeln!(out, "{:<width$}  {:>9}", "content mean", pct(self.content_mean_iou));
        let undefined: Vec<&str> = self
            .rows
            .iter()
            .filter(|r| r.iou.is_none())
            .map(|r| r.class.as_str())
            .collect();
        out.push_str(
            "IoU pools pixel counts over all images. Classes absent from both prediction \
             and ground truth are undefined and excluded from the means",
        );
        if undefined.is_empty() {
            out.push_str(".\n");
        } else {
            let _ = writeln!(out, ": {}.", undefined.join(", "));
        }
        let _ = writeln!(out, "config digest {}", self.config_digest);
        out
    }
}

/// Concatenates reports into one CSV with a single header.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

fn hash_net(h: &mut Sha256, role: &str, net: &Network<f32>) {
    h.update(role.as_bytes());
    h.update(format!("{:?}", net.spec()).as_bytes());
    for (name, t) in net.named_params() {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
}

fn digest(dataset: &Dataset, level: Level, mode: EvalMode, nets: &NetSet, seed: u64) -> Result<String> {
    let mut h = Sha256::new();
    h.update(format!("mode={mode};level={};seed={seed};", level.number()).as_bytes());
    for s in &dataset.samples {
        h.update(s.id.as_bytes());
        h.update([0]);
    }
    match mode {
        EvalMode::SingleNet => hash_net(&mut h, "single", nets.single()?),
        EvalMode::ModularPredicted => {
            hash_net(&mut h, "vessel", nets.vessel()?);
            hash_net(&mut h, "content", nets.content()?);
        }
        EvalMode::ModularGroundTruth => hash_net(&mut h, "content", nets.content()?),
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Scores `mode` on every sample and returns the report together with the
/// per-sample predicted label maps.
pub fn evaluate_with_predictions(
    dataset: &Dataset,
    level: Level,
    mode: EvalMode,
    nets: &NetSet,
    seed: u64,
) -> Result<(MetricsReport, Vec<LabelMap>)> {
    nets.require(mode)?;
    if dataset.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    if !dataset.has_level(level) {
        return Err(Error::Dataset(format!(
            "not every sample has level-{} labels",
            level.number()
        )));
    }
    if mode == EvalMode::ModularGroundTruth && !dataset.has_level(Level::Vessel) {
        return Err(Error::Dataset("modular-gt evaluation needs level-1 labels".into()));
    }
    let hierarchy = HierarchySpec::standard();
    let names = hierarchy.class_names(level);
    let net_classes = match mode {
        EvalMode::SingleNet => nets.single()?.spec().num_classes,
        _ => nets.content()?.spec().num_classes,
    };
    if net_classes != names.len() {
        return Err(Error::CheckpointShape(format!(
            "net predicts {net_classes} classes, level {} has {}",
            level.number(),
            names.len()
        )));
    }

    let mut counts = IouCounts::new(names.len());
    let mut preds = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let images = dataset.images(chunk)?;
        let gt = dataset.labels(chunk, level)?;
        let vessel = match mode {
            EvalMode::ModularGroundTruth => Some(dataset.labels(chunk, Level::Vessel)?),
            _ => None,
        };
        let pred = nets.predict(mode, &images, vessel.as_ref())?;
        counts.accumulate(&pred, &gt)?;
        preds.extend((0..chunk.len()).map(|i| pred.single(i)));
    }
    let report = MetricsReport::from_counts(
        &counts,
        names,
        level,
        mode,
        seed,
        dataset.len(),
        digest(dataset, level, mode, nets, seed)?,
    );
    Ok((report, preds))
}

/// Per-class IoU table for one mode at one level.
pub fn run_benchmark(
    dataset: &Dataset,
    level: Level,
    mode: EvalMode,
    nets: &NetSet,
    seed: u64,
) -> Result<MetricsReport> {
    evaluate_with_predictions(dataset, level, mode, nets, seed).map(|(r, _)| r)
}

/// Writes `<stem>.csv` and `<stem>.txt` under `dir`.
pub fn write_report(report: &MetricsReport, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ext, text) in [("csv", report.to_csv()), ("txt", report.to_table())] {
        let path = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{build_network, NetworkSpec};

    fn nets() -> NetSet {
        NetSet {
            single: Some(build_network(&NetworkSpec::plain(4), 1).unwrap()),
            vessel: Some(build_network(&NetworkSpec::plain(2), 2).unwrap()),
            content: Some(build_network(&NetworkSpec::gated(4, 2), 3).unwrap()),
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let ds = Dataset::generate(5, 16, 0).unwrap();
        let nets = nets();
        for mode in EvalMode::ALL {
            let a = run_benchmark(&ds, Level::SolidLiquid, mode, &nets, 0).unwrap();
            let b = run_benchmark(&ds, Level::SolidLiquid, mode, &nets, 0).unwrap();
            assert_eq!(a.to_csv(), b.to_csv());
            assert_eq!(a.config_digest, b.config_digest);
            assert_eq!(a.rows.len(), 4);
            assert_eq!(a.samples, 5);
            let total: u64 = a.rows.iter().map(|r| r.pixels_gt).sum();
            assert_eq!(total, 5 * 16 * 16);
            for r in &a.rows {
                if let Some(v) = r.iou {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
            let csv = a.to_csv();
            assert!(csv.starts_with(CSV_HEADER));
            assert_eq!(csv.lines().count(), 5);
        }
    }

    #[test]
    fn digest_tracks_the_nets() {
        let ds = Dataset::generate(2, 16, 0).unwrap();
        let mut n = nets();
        let a = run_benchmark(&ds, Level::SolidLiquid, EvalMode::SingleNet, &n, 0).unwrap();
        n.single = Some(build_network(&NetworkSpec::plain(4), 99).unwrap());
        let b = run_benchmark(&ds, Level::SolidLiquid, EvalMode::SingleNet, &n, 0).unwrap();
        assert_ne!(a.config_digest, b.config_digest);
    }

    #[test]
    fn missing_checkpoint_named() {
        let ds = Dataset::generate(1, 16, 0).unwrap();
        let n = NetSet {
            content: nets().content,
            ..NetSet::default()
        };
        let err = run_benchmark(&ds, Level::SolidLiquid, EvalMode::SingleNet, &n, 0).unwrap_err();
        assert_eq!(err.code(), "missing_checkpoint");
        assert!(err.to_string().contains("single-net"));
    }

    #[test]
    fn class_count_must_match_level() {
        let ds = Dataset::generate(1, 16, 0).unwrap();
        assert!(run_benchmark(&ds, Level::Fill, EvalMode::SingleNet, &nets(), 0).is_err());
    }

    #[test]
    fn table_marks_undefined_classes() {
        let mut c = IouCounts::new(3);
        c.accumulate(
            &LabelMap::new(1, 1, 2, vec![0, 1]).unwrap(),
            &LabelMap::new(1, 1, 2, vec![0, 1]).unwrap(),
        )
        .unwrap();
        let names: Vec<String> = ["background", "empty", "filled"].map(String::from).to_vec();
        let r = MetricsReport::from_counts(&c, &names, Level::Fill, EvalMode::SingleNet, 0, 1, "x".into());
        assert_eq!(r.row("filled").unwrap().iou, None);
        assert!(r.to_csv().contains("2,filled,single,undefined,0,0,0,0"));
        assert!(r.to_table().contains("excluded from the means: filled."));
    }
}
