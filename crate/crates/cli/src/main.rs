use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use dropregion::blockpipe::{
    binarize, boxes_csv, classify_block_free, classify_block_segmented, close, segment_block, PATCH_SIZE, PATCH_STRIDE,
};
use dropregion::dropregion::{dropped_cells_csv, maybe_dropregion_masked, DropConfig};
use dropregion::ifn::{build_singlechar_ifn, build_textblock_ifn, NetworkSpec};
use dropregion::imagecore::{average_heatmap, read_pgm, write_pgm};
use dropregion::meshing::{mesh, MeshMode};
use dropregion::rng::stream;
use dropregion::tensornet::{checkpoint, Network, Precision};
use dropregion::trainer::{evaluate, masks_csv, metrics_csv, train, Dataset, NetKind, TrainConfig};
use dropregion::workbench::{
    gen_block_dataset, gen_char_dataset, run_experiment_to_dir, DatasetManifest, ExperimentConfig, GenConfig, Split,
    EXPERIMENTS,
};

#[derive(Parser)]
#[command(name = "dropregion", version, about = "Font recognition with region-dropping augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic font dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Generator config (`key = value` lines); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Render text blocks instead of single characters.
        #[arg(long)]
        blocks: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print mesh breakpoints of an image as CSV.
    Mesh {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        bars: usize,
        #[arg(long, default_value = "elastic")]
        mode: MeshMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write disrupted copies of an image and the dropped cells.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `bars,n_max,gamma,mode`
        #[arg(long, default_value = "5,13,0.5,elastic")]
        drop: DropConfig,
    },
    /// Print a network's shape table.
    Describe {
        /// singlechar, textblock, micro or micro-textblock.
        #[arg(long, default_value = "singlechar")]
        net: NetKind,
        /// Read the network from a layer description file instead.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        classes: usize,
    },
    /// Train a network on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and confusion of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
    /// Segment a text block into character boxes.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a text block by accumulating unit confidences.
    ClassifyBlock {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "segmented")]
        mode: BlockMode,
        #[arg(long, default_value_t = PATCH_SIZE)]
        patch: usize,
        #[arg(long, default_value_t = PATCH_STRIDE)]
        stride: usize,
    },
    /// Average the images of a dataset into one heatmap.
    Heatmap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        font: Option<usize>,
        #[arg(long)]
        split: Option<SplitArg>,
    },
    /// Run a named experiment and write results under `<runs>/<name>/<timestamp>/`.
    Experiment {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockMode {
    Segmented,
    Free,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn commit_id() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn gen_data(out: &Path, config: Option<&Path>, blocks: bool, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => GenConfig::parse(&read_text(p)?, &p.display().to_string())?,
        None => GenConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = if blocks {
        gen_block_dataset(&cfg, out)?
    } else {
        gen_char_dataset(&cfg, out)?
    };
    println!("wrote {} images to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn augment(input: &Path, out: &Path, count: usize, seed: u64, drop: &DropConfig) -> Result<()> {
    let img = read_pgm(input)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut patterns = Vec::with_capacity(count);
    for i in 0..count {
        let (aug, mask) = maybe_dropregion_masked(&img, drop, &mut stream(seed, i as u64))?;
        write_pgm(out.join(format!("aug_{i}.pgm")), &aug)?;
        patterns.push(mask.map(|m| m.pattern().clone()));
    }
    let csv = dropped_cells_csv(patterns.iter().enumerate().map(|(i, p)| (i, p.as_ref())));
    write_text(&out.join("dropped.csv"), &csv)?;
    println!("wrote {count} images to {}", out.display());
    Ok(())
}

fn describe(net: NetKind, spec: Option<&Path>, classes: usize) -> Result<()> {
    let spec = match spec {
        Some(p) => NetworkSpec::parse(&read_text(p)?)?,
        None => match net {
            NetKind::SingleChar => build_singlechar_ifn(),
            NetKind::TextBlock => build_textblock_ifn(),
            kind => TrainConfig {
                network: kind,
                input: if kind == NetKind::MicroTextblock { 64 } else { 32 },
                ..TrainConfig::default()
            }
            .network_spec(classes)?,
        },
    };
    print!("{}", spec.describe()?);
    println!("parameters: {}", spec.param_count()?);
    Ok(())
}

fn run_train(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = TrainConfig::parse(&read_text(config)?, &config.display().to_string())?;
    let manifest = DatasetManifest::read(data)?;
    let classes = manifest.fonts();
    let train_set = manifest.load(Split::Train, classes)?;
    let test_set = manifest.load(Split::Test, classes)?;
    let eval = (!test_set.is_empty()).then_some(&test_set);
    let spec = cfg.network_spec(classes)?;
    info!("training on {} samples, {} classes", train_set.len(), classes);
    let (metrics, masks) = match cfg.precision {
        Precision::F32 => {
            let run = train::<f32>(&train_set, eval, &spec, &cfg)?;
            checkpoint::save(&run.net, out)?;
            (run.metrics, run.masks)
        }
        Precision::F64 => {
            let run = train::<f64>(&train_set, eval, &spec, &cfg)?;
            checkpoint::save(&run.net, out)?;
            (run.metrics, run.masks)
        }
    };
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&metrics))?;
    if cfg.log_masks {
        write_text(&out.join("masks.csv"), &masks_csv(&masks))?;
    }
    if let Some(acc) = metrics.iter().rev().find_map(|r| r.eval_accuracy) {
        println!("final test accuracy {acc:.4}");
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn run_eval(model: &Path, data: &Path, split: Split) -> Result<()> {
    let net: Network<f64> = checkpoint::load(model)?;
    let manifest = DatasetManifest::read(data)?;
    let set: Dataset = manifest.load(split, net.classes())?;
    if set.is_empty() {
        bail!("split {split} of {} is empty", data.display());
    }
    let ev = evaluate(&net, &set)?;
    println!("accuracy {:.4} on {} samples", ev.accuracy, set.len());
    println!("confusion (rows: label, columns: predicted)");
    for row in &ev.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("{}", cells.join(","));
    }
    Ok(())
}

fn heatmap(data: &Path, out: &Path, font: Option<usize>, split: Option<Split>) -> Result<()> {
    let manifest = DatasetManifest::read(data)?;
    let imgs = manifest
        .entries
        .iter()
        .filter(|e| font.is_none_or(|f| e.font == f) && split.is_none_or(|s| e.split == s))
        .map(|e| read_pgm(data.join(&e.path)))
        .collect::<dropregion::Result<Vec<_>>>()?;
    if imgs.is_empty() {
        bail!("no images match the filter");
    }
    write_pgm(out, &average_heatmap(&imgs)?)?;
    println!("averaged {} images into {}", imgs.len(), out.display());
    Ok(())
}

fn experiment(name: &str, config: Option<&Path>, runs: &Path) -> Result<()> {
    if !EXPERIMENTS.contains(&name) {
        bail!("unknown experiment `{name}`; valid: {}", EXPERIMENTS.join(", "));
    }
    let cfg = match config {
        Some(p) => ExperimentConfig::parse(&read_text(p)?, &p.display().to_string())?,
        None => ExperimentConfig::default(),
    };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs().to_string();
    let (dir, result) = run_experiment_to_dir(name, &cfg, runs, &stamp, commit_id().as_deref())?;
    print!("{}", result.to_csv());
    println!("results written to {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::GenData { out, config, blocks, seed } => gen_data(&out, config.as_deref(), blocks, seed),
        Cmd::Mesh { input, bars, mode, out } => {
            let grid = mesh(&read_pgm(&input)?, bars, mode)?;
            match out {
                Some(p) => write_text(&p, &grid.to_csv()),
                None => {
                    print!("{}", grid.to_csv());
                    Ok(())
                }
            }
        }
        Cmd::Augment { input, out, count, seed, drop } => augment(&input, &out, count, seed, &drop),
        Cmd::Describe { net, spec, classes } => describe(net, spec.as_deref(), classes),
        Cmd::Train { config, data, out } => run_train(&config, &data, &out),
        Cmd::Eval { model, data, split } => run_eval(&model, &data, split.into()),
        Cmd::Segment { input, out } => {
            let boxes = segment_block(&close(&binarize(&read_pgm(&input)?)));
            write_text(&out, &boxes_csv(&boxes))?;
            println!("{} boxes", boxes.len());
            Ok(())
        }
        Cmd::ClassifyBlock { model, input, mode, patch, stride } => {
            let net: Network<f64> = checkpoint::load(&model)?;
            let img = read_pgm(&input)?;
            let pred = match mode {
                BlockMode::Segmented => classify_block_segmented(&img, &net)?,
                BlockMode::Free => classify_block_free(&img, &net, patch, stride)?,
            };
            let conf: Vec<String> = pred.accumulated.iter().map(|c| format!("{c:.4}")).collect();
            println!("font {} from {} units", pred.class, pred.units.len());
            println!("accumulated {}", conf.join(","));
            Ok(())
        }
        Cmd::Heatmap { data, out, font, split } => heatmap(&data, &out, font, split.map(Into::into)),
        Cmd::Experiment { name, config, runs } => experiment(&name, config.as_deref(), &runs),
    }
}
