//! Multi-arm training comparisons with shared seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;

use super::dataset::{char_dataset, generate_blocks, generate_chars, BlockRecord, GenConfig, Split};
use crate::blockpipe::{
    center_patch, classify_block_free, classify_block_segmented, segment_characters, PATCH_SIZE, PATCH_STRIDE,
};
use crate::dropregion::DropConfig;
use crate::ifn::to_input;
use crate::meshing::MeshMode;
use crate::rng::{derive_seed, stream};
use crate::tensornet::{Network, Precision, Real};
use crate::trainer::{argmax, evaluate, metrics_csv, train, Dataset, MetricRow, NetKind, Sample, TrainConfig};
use crate::{Error, Result};

pub const EXPERIMENTS: [&str; 4] = ["aug-compare", "mesh-compare", "dropcount-sweep", "block-modes"];

const TAG_CROPS: u64 = 21;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: GenConfig,
    /// Character model settings; arms override the factor under test.
    pub train: TrainConfig,
    /// Patch model settings of `block-modes`.
    pub block_train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Random training crops taken from each training block.
    pub crops_per_block: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig {
            max_iter: 4000,
            batch_size: 16,
            base_lr: 0.01,
            eval_every: 1000,
            ..TrainConfig::default()
        };
        Self {
            data: GenConfig::default(),
            block_train: TrainConfig {
                network: NetKind::MicroTextblock,
                input: PATCH_SIZE,
                ..train.clone()
            },
            train,
            seeds: vec![0, 1, 2],
            crops_per_block: 16,
        }
    }
}

const SECTIONS: [&str; 3] = ["data.", "train.", "block."];

impl ExperimentConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "crops_per_block = {}", self.crops_per_block);
        for (prefix, text) in SECTIONS
            .iter()
            .zip([self.data.to_text(), self.train.to_text(), self.block_train.to_text()])
        {
            for line in text.lines() {
                let _ = writeln!(s, "{prefix}{line}");
            }
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        // Each line goes to its section; the others get a blank line so that
        // reported line numbers stay those of the combined file.
        let mut parts = [String::new(), String::new(), String::new(), String::new()];
        for line in text.lines() {
            let trimmed = line.trim_start();
            let (target, body) = match SECTIONS.iter().position(|p| trimmed.starts_with(p)) {
                Some(i) => (i + 1, &trimmed[SECTIONS[i].len()..]),
                None => (0, line),
            };
            for (i, part) in parts.iter_mut().enumerate() {
                if i == target {
                    part.push_str(body);
                }
                part.push('\n');
            }
        }
        let [top, data, train, block] = parts;
        let d = Self::default();
        let mut kv = crate::kv::KeyValues::parse(&top, source)?;
        let seeds: String = kv.get("seeds", String::new())?;
        let crops_per_block = kv.get("crops_per_block", d.crops_per_block)?;
        kv.finish()?;
        let seeds = if seeds.is_empty() {
            d.seeds
        } else {
            seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidConfig(format!("bad seed list `{seeds}`")))?
        };
        Ok(Self {
            data: GenConfig::parse(&data, source)?,
            train: TrainConfig::parse(&train, source)?,
            block_train: TrainConfig::parse(&block, source)?,
            seeds,
            crops_per_block,
        })
    }
}

/// One configuration of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub train: TrainConfig,
}

/// Arms of a character-level experiment; they differ from `base` only in the
/// factor under test.
pub fn arms(name: &str, base: &TrainConfig) -> Result<Vec<Arm>> {
    let arm = |name: String, f: &dyn Fn(&mut TrainConfig)| {
        let mut train = base.clone();
        f(&mut train);
        Arm { name, train }
    };
    let drop_on = |gamma: f64| move |c: &mut TrainConfig| c.drop.gamma = gamma;
    match name {
        "aug-compare" => {
            let on = if base.drop.gamma < 1.0 { base.drop.gamma } else { DropConfig::default().gamma };
            let rate = if base.dropout_rate > 0.0 { base.dropout_rate } else { 0.5 };
            Ok(vec![
                arm("none".into(), &|c| {
                    drop_on(1.0)(c);
                    c.dropout_rate = 0.0;
                }),
                arm("dropout".into(), &|c| {
                    drop_on(1.0)(c);
                    c.dropout_rate = rate;
                }),
                arm("dropregion".into(), &|c| {
                    drop_on(on)(c);
                    c.dropout_rate = 0.0;
                }),
                arm("both".into(), &|c| {
                    drop_on(on)(c);
                    c.dropout_rate = rate;
                }),
            ])
        }
        "mesh-compare" => Ok([MeshMode::Fixed, MeshMode::Elastic]
            .into_iter()
            .map(|m| arm(m.as_str().into(), &|c| c.drop.mesh_mode = m))
            .collect()),
        "dropcount-sweep" => Ok((1..base.drop.cells())
            .map(|n| arm(n.to_string(), &|c| c.drop.n_max = n))
            .collect()),
        "block-modes" => Err(Error::InvalidConfig("block-modes has no character-level arms".into())),
        other => Err(unknown(other)),
    }
}

fn unknown(name: &str) -> Error {
    Error::UnknownExperiment {
        name: name.to_string(),
        valid: EXPERIMENTS.join(", "),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmResult {
    pub arm: String,
    /// Test accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
}

impl ArmResult {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmResult>,
    /// Per (arm, seed) training logs.
    pub metrics: Vec<(String, u64, Vec<MetricRow>)>,
}

impl ExperimentResult {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == name)
    }

    /// `arm,acc_seed<s>...,mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm");
        for s in &self.seeds {
            let _ = write!(out, ",acc_seed{s}");
        }
        out.push_str(",mean\n");
        for a in &self.arms {
            out.push_str(&a.arm);
            for acc in &a.accuracies {
                let _ = write!(out, ",{acc}");
            }
            let _ = writeln!(out, ",{}", a.mean());
        }
        out
    }

    /// `arm,seed,iter,lr,loss,eval_accuracy`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("arm,seed,iter,lr,loss,eval_accuracy\n");
        for (arm, seed, rows) in &self.metrics {
            for line in metrics_csv(rows).lines().skip(1) {
                let _ = writeln!(out, "{arm},{seed},{line}");
            }
        }
        out
    }
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.clone()
    }
}

fn train_any(
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Network<f64>, Vec<MetricRow>)> {
    let spec = cfg.network_spec(data.classes)?;
    Ok(match cfg.precision {
        Precision::F32 => {
            let run = train::<f32>(data, eval, &spec, cfg)?;
            (run.net.cast(), run.metrics)
        }
        Precision::F64 => {
            let run = train::<f64>(data, eval, &spec, cfg)?;
            (run.net, run.metrics)
        }
    })
}

/// Trains every arm on every seed and reports test accuracy.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if !EXPERIMENTS.contains(&name) {
        return Err(unknown(name));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("experiment needs at least one seed".into()));
    }
    if name == "block-modes" {
        return run_block_modes(cfg);
    }
    let records = generate_chars(&cfg.data)?;
    let train_set = char_dataset(&records, Split::Train, cfg.data.fonts)?;
    let test_set = char_dataset(&records, Split::Test, cfg.data.fonts)?;
    let mut result = ExperimentResult {
        name: name.to_string(),
        seeds: cfg.seeds.clone(),
        arms: Vec::new(),
        metrics: Vec::new(),
    };
    for arm in arms(name, &cfg.train)? {
        let mut accuracies = Vec::new();
        for &seed in &cfg.seeds {
            let tc = with_seed(&arm.train, seed);
            let (net, metrics) = train_any(&train_set, Some(&test_set), &tc)?;
            let acc = evaluate(&net, &test_set)?.accuracy;
            info!("{name} arm {} seed {seed}: accuracy {acc:.4}", arm.name);
            accuracies.push(acc);
            result.metrics.push((arm.name.clone(), seed, metrics));
        }
        result.arms.push(ArmResult {
            arm: arm.name,
            accuracies,
        });
    }
    Ok(result)
}

/// Random `size × size` crops of each training block, labelled by font.
pub fn block_crops(blocks: &[BlockRecord], per_block: usize, size: usize, seed: u64, classes: usize) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        let mut rng = stream(derive_seed(seed, TAG_CROPS), i as u64);
        let (w, h) = (b.image.width(), b.image.height());
        if size > w || size > h {
            return Err(Error::InvalidConfig(format!("crop {size} larger than {w}x{h} block")));
        }
        for _ in 0..per_block {
            let x = rng.random_range(0..=w - size);
            let y = rng.random_range(0..=h - size);
            samples.push(Sample {
                image: b.image.crop(x, y, x + size, y + size)?,
                label: b.font,
            });
        }
    }
    Dataset::new(samples, classes)
}

fn predict<T: Real>(net: &Network<T>, img: &crate::imagecore::GrayImage) -> Result<usize> {
    Ok(argmax(&net.logits(&to_input(img, net.input_shape())?)?))
}

/// Block-level accuracies of one character model and one patch model:
/// `segmented`, `single-char`, `free`, `center-patch`.
pub fn block_accuracies(
    blocks: &[BlockRecord],
    char_net: &Network<f64>,
    patch_net: &Network<f64>,
) -> Result<[f64; 4]> {
    let (mut seg, mut free, mut center) = (0usize, 0usize, 0usize);
    let (mut chars_right, mut chars_total) = (0usize, 0usize);
    for b in blocks {
        seg += usize::from(classify_block_segmented(&b.image, char_net)?.class == b.font);
        for c in segment_characters(&b.image)? {
            chars_right += usize::from(predict(char_net, &c)? == b.font);
            chars_total += 1;
        }
        free += usize::from(classify_block_free(&b.image, patch_net, PATCH_SIZE, PATCH_STRIDE)?.class == b.font);
        center += usize::from(predict(patch_net, &center_patch(&b.image, PATCH_SIZE)?)? == b.font);
    }
    let n = blocks.len() as f64;
    Ok([
        seg as f64 / n,
        chars_right as f64 / chars_total.max(1) as f64,
        free as f64 / n,
        center as f64 / n,
    ])
}

fn run_block_modes(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let classes = cfg.data.fonts;
    let records = generate_chars(&cfg.data)?;
    let char_train = char_dataset(&records, Split::Train, classes)?;
    let blocks = generate_blocks(&cfg.data)?;
    let (train_blocks, test_blocks): (Vec<BlockRecord>, Vec<BlockRecord>) =
        blocks.into_iter().partition(|b| b.split == Split::Train);
    let patch_size = cfg.block_train.input;
    let crops = block_crops(&train_blocks, cfg.crops_per_block, patch_size, cfg.data.seed, classes)?;
    let names = ["segmented", "single-char", "free", "center-patch"];
    let mut accs = vec![Vec::new(); names.len()];
    let mut metrics = Vec::new();
    for &seed in &cfg.seeds {
        let (char_net, m1) = train_any(&char_train, None, &with_seed(&cfg.train, seed))?;
        let (patch_net, m2) = train_any(&crops, None, &with_seed(&cfg.block_train, seed))?;
        let row = block_accuracies(&test_blocks, &char_net, &patch_net)?;
        info!("block-modes seed {seed}: {row:?}");
        for (a, v) in accs.iter_mut().zip(row) {
            a.push(v);
        }
        metrics.push(("char-model".to_string(), seed, m1));
        metrics.push(("patch-model".to_string(), seed, m2));
    }
    Ok(ExperimentResult {
        name: "block-modes".into(),
        seeds: cfg.seeds.clone(),
        arms: names
            .iter()
            .zip(accs)
            .map(|(n, accuracies)| ArmResult {
                arm: n.to_string(),
                accuracies,
            })
            .collect(),
        metrics,
    })
}

/// Runs `name` and writes `config.txt`, `metrics.csv` and `result.csv` under
/// `<runs>/<name>/<stamp>/`.
pub fn run_experiment_to_dir(
    name: &str,
    cfg: &ExperimentConfig,
    runs: &Path,
    stamp: &str,
    commit: Option<&str>,
) -> Result<(PathBuf, ExperimentResult)> {
    let result = run_experiment(name, cfg)?;
    let dir = runs.join(name).join(stamp);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let header = format!(
        "# experiment {name}\n# commit {}\n",
        commit.unwrap_or("unknown")
    );
    let write = |file: &str, text: String| {
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("config.txt", header + &cfg.to_text())?;
    write("metrics.csv", result.metrics_csv())?;
    write("result.csv", result.to_csv())?;
    Ok((dir, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_tables() {
        let base = TrainConfig::default();
        let aug = arms("aug-compare", &base).unwrap();
        let names: Vec<&str> = aug.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["none", "dropout", "dropregion", "both"]);
        assert_eq!(aug[0].train.drop.gamma, 1.0);
        assert_eq!(aug[0].train.dropout_rate, 0.0);
        assert_eq!(aug[2].train.drop.gamma, 0.5);
        assert_eq!(arms("dropcount-sweep", &base).unwrap().len(), 24);
        let mesh = arms("mesh-compare", &base).unwrap();
        assert_eq!(mesh[0].train.drop.mesh_mode, MeshMode::Fixed);
        assert_eq!(
            TrainConfig {
                drop: DropConfig {
                    mesh_mode: MeshMode::Elastic,
                    ..mesh[0].train.drop
                },
                ..mesh[0].train.clone()
            },
            mesh[1].train
        );
    }

    #[test]
    fn unknown_experiment_lists_valid_names() {
        let err = run_experiment("nope", &ExperimentConfig::default()).unwrap_err().to_string();
        for n in EXPERIMENTS {
            assert!(err.contains(n), "{err}");
        }
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![4, 5];
        cfg.train.drop.n_max = 7;
        cfg.data.seed = 9;
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text, "x").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
        assert!(matches!(
            ExperimentConfig::parse("train.bogus = 1\n", "x"),
            Err(Error::UnknownKey { line: 1, .. })
        ));
    }

    #[test]
    fn result_csv_layout() {
        let r = ExperimentResult {
            name: "x".into(),
            seeds: vec![0, 1],
            arms: vec![ArmResult {
                arm: "a".into(),
                accuracies: vec![0.5, 1.0],
            }],
            metrics: Vec::new(),
        };
        assert_eq!(r.to_csv(), "arm,acc_seed0,acc_seed1,mean\na,0.5,1,0.75\n");
    }
}
