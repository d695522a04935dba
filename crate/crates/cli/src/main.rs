use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use valveseg::checks::{gradient_suite, TOLERANCE};
use valveseg::eval::{
    content_from_vessel_map, evaluate_with_predictions, modular_inference, overlay, write_overlays, write_report,
    EvalMode, NetSet, CSV_HEADER,
};
use valveseg::experiment::{run_experiment, ExperimentConfig};
use valveseg::fcn::{load_checkpoint, predict, save_checkpoint, Network};
use valveseg::scenes::{
    export_dataset, load_dataset, read_label_png, read_rgb_png, write_label_png, write_rgb_png, Dataset, HierarchySpec,
    Level, Sample,
};
use valveseg::train::{train_role, Role, TrainConfig};
use valveseg::{Error, Result};

/// Modular hierarchical segmentation of vessels and their contents.
#[derive(Parser, Debug)]
#[command(name = "valveseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic labeled scenes in the canonical dataset layout.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one net and write its checkpoint.
    Train(TrainArgs),
    /// Score a mode on a dataset and write CSV and text reports.
    Eval(EvalArgs),
    /// Segment a single image.
    Infer(InferArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge report CSVs into one class-by-mode IoU table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all roles for several seeds and compare the three modes.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    role: Role,
    /// Content level (2, 3, 4 or a level name); ignored for the vessel role.
    #[arg(long)]
    level: Option<Level>,
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset scored at each evaluation interval.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// key=value training config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable: --set lr=0.005
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Checkpoints {
    #[arg(long)]
    single: Option<PathBuf>,
    #[arg(long)]
    vessel: Option<PathBuf>,
    #[arg(long)]
    content: Option<PathBuf>,
}

impl Checkpoints {
    fn load(&self, mode: EvalMode) -> Result<NetSet> {
        let load = |p: &Option<PathBuf>, used: bool| -> Result<Option<Network<f32>>> {
            match p {
                Some(p) if used => Ok(Some(load_checkpoint(p)?.network)),
                _ => Ok(None),
            }
        };
        let nets = NetSet {
            single: load(&self.single, mode == EvalMode::SingleNet)?,
            vessel: load(&self.vessel, mode == EvalMode::ModularPredicted)?,
            content: load(&self.content, mode != EvalMode::SingleNet)?,
        };
        nets.require(mode)?;
        Ok(nets)
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    mode: EvalMode,
    #[arg(long, default_value = "3")]
    level: Level,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    checkpoints: Checkpoints,
    /// Output directory for report.csv and report.txt.
    #[arg(long)]
    out: PathBuf,
    /// Also write prediction overlays under <out>/overlays.
    #[arg(long)]
    overlays: bool,
    /// Recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    mode: EvalMode,
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    checkpoints: Checkpoints,
    /// Ground-truth vessel label PNG, required for modular-gt.
    #[arg(long)]
    vessel_map: Option<PathBuf>,
    /// Output label PNG (pixel value = class index).
    #[arg(long)]
    out: PathBuf,
    /// Optional overlay PNG.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 800)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value = "3")]
    level: Level,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_config(file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(p) => TrainConfig::from_kv(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(root: &Path) -> Result<Dataset> {
    let (ds, report) = load_dataset(root)?;
    for issue in &report.issues {
        let what = if issue.rejected { "rejected" } else { "warning" };
        eprintln!("{what}: {}: {}", issue.id, issue.message);
    }
    if ds.is_empty() {
        return Err(Error::Dataset(format!("no usable samples under {}", root.display())));
    }
    Ok(ds)
}

fn gen_data(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = Dataset::generate(n, size, seed)?;
    export_dataset(&ds, out, &HierarchySpec::standard())?;
    println!("wrote {n} scenes to {}", out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = train_config(args.config.as_deref(), &args.overrides)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(l) = args.level {
        cfg.level = l;
    }
    let data = load_data(&args.data)?;
    let heldout = args.eval_data.as_deref().map(load_data).transpose()?;
    let out = train_role(args.role, cfg.level, &data, heldout.as_ref(), &cfg)?;
    save_checkpoint(&out.checkpoint, &args.out)?;
    let log = args.log.unwrap_or_else(|| args.out.with_extension("csv"));
    write_text(&log, &out.log.to_csv())?;
    if let Some(last) = out.log.evals.last() {
        println!(
            "{} net: {} steps, loss {:.4}, accuracy {:.4}, mean IoU {:.4}",
            args.role, last.step, last.loss, last.accuracy, last.mean_iou
        );
    } else {
        println!("{} net: 0 steps, initial weights saved", args.role);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let nets = args.checkpoints.load(args.mode)?;
    let data = load_data(&args.data)?;
    let (report, preds) = evaluate_with_predictions(&data, args.level, args.mode, &nets, args.seed)?;
    write_report(&report, &args.out, "report")?;
    if args.overlays {
        write_overlays(&data.samples, &preds, args.out.join("overlays"))?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn infer(args: InferArgs) -> Result<()> {
    let nets = args.checkpoints.load(args.mode)?;
    let (w, h, rgb) = read_rgb_png(&args.image)?;
    let sample = Sample::unlabeled("input", w, h, rgb)?;
    let image = sample.image_tensor();
    let labels = match args.mode {
        EvalMode::SingleNet => predict(&nets.single()?.forward(&image, None)?),
        EvalMode::ModularPredicted => modular_inference(nets.vessel()?, nets.content()?, &image)?.content,
        EvalMode::ModularGroundTruth => {
            let path = args
                .vessel_map
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("modular-gt inference needs --vessel-map".into()))?;
            content_from_vessel_map(nets.content()?, &image, &read_label_png(path)?)?
        }
    };
    write_label_png(&args.out, &labels)?;
    if let Some(p) = &args.overlay {
        write_rgb_png(p, w, h, &overlay(&sample, &labels)?)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn gradcheck(seed: u64) -> Result<bool> {
    let checks = gradient_suite(seed)?;
    let mut ok = true;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<32} max_rel_error {:.3e}  {status}", c.op, c.report.max_rel_error);
        ok &= c.passed();
    }
    println!("tolerance {TOLERANCE:e}");
    Ok(ok)
}

/// One report CSV row, keyed for the merged table.
struct Row {
    level: String,
    class: String,
    mode: String,
    iou: String,
}

fn report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for path in inputs {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Config(format!("{} is not a report CSV", path.display())));
        }
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            rows.push(Row {
                level: rec[0].to_string(),
                class: rec[1].to_string(),
                mode: rec[2].to_string(),
                iou: rec[3].to_string(),
            });
        }
    }
    let modes: Vec<&str> = EvalMode::ALL
        .iter()
        .map(|m| m.name())
        .filter(|m| rows.iter().any(|r| r.mode == *m))
        .collect();
    let mut table: BTreeMap<(String, usize), (String, BTreeMap<String, String>)> = BTreeMap::new();
    let mut order = BTreeMap::new();
    for r in &rows {
        let next = order.len();
        let idx = *order.entry((r.level.clone(), r.class.clone())).or_insert(next);
        table
            .entry((r.level.clone(), idx))
            .or_insert_with(|| (r.class.clone(), BTreeMap::new()))
            .1
            .insert(r.mode.clone(), r.iou.clone());
    }
    let mut text = format!("level,class,{}\n", modes.join(","));
    for ((level, _), (class, by_mode)) in &table {
        let cells: Vec<&str> = modes
            .iter()
            .map(|m| by_mode.get(*m).map_or("", String::as_str))
            .collect();
        text.push_str(&format!("{level},{class},{}\n", cells.join(",")));
    }
    write_text(out, &text)?;
    print!("{text}");
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut train = train_config(args.config.as_deref(), &args.overrides)?;
    if let Some(s) = args.steps {
        train.steps = s;
    }
    let cfg = ExperimentConfig {
        train_samples: args.train,
        test_samples: args.test,
        size: args.size,
        level: args.level,
        seeds: args.seeds,
        train,
    };
    let res = run_experiment(&cfg, &mut |line| eprintln!("{line}"))?;
    res.write(&args.out)?;
    print!("{}", res.summary_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { n, size, seed, out } => gen_data(n, size, seed, &out)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Infer(a) => infer(a)?,
        Command::Gradcheck { seed } => return gradcheck(seed),
        Command::Report { inputs, out } => report(&inputs, &out)?,
        Command::Experiment(a) => experiment(a)?,
    }
    Ok(true)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradcheck: a gradient check exceeded the tolerance");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
