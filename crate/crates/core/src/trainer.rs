//! Mini-batch SGD with momentum, polynomial learning-rate decay and per-sample
//! region disruption.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;

use crate::dropregion::{maybe_dropregion_masked, DropConfig, Pattern};
use crate::ifn::{build_micro_ifn, build_singlechar_ifn, build_textblock_ifn, to_input, MicroConfig, NetworkSpec};
use crate::imagecore::GrayImage;
use crate::kv::KeyValues;
use crate::meshing::MeshMode;
use crate::rng::{derive_seed, stream};
use crate::tensornet::ops::softmax_xent;
use crate::tensornet::{ConvGrads, Grads, Network, Precision, Real};
use crate::{Error, Result};

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_AUGMENT: u64 = 3;
const TAG_DROPOUT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    /// Desk-scale character network.
    Micro,
    /// Desk-scale block-patch network (stride-2 first layer).
    MicroTextblock,
    SingleChar,
    TextBlock,
}

impl NetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Micro => "micro",
            NetKind::MicroTextblock => "micro-textblock",
            NetKind::SingleChar => "singlechar",
            NetKind::TextBlock => "textblock",
        }
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(NetKind::Micro),
            "micro-textblock" => Ok(NetKind::MicroTextblock),
            "singlechar" => Ok(NetKind::SingleChar),
            "textblock" => Ok(NetKind::TextBlock),
            other => Err(Error::InvalidConfig(format!(
                "network must be micro|micro-textblock|singlechar|textblock, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub network: NetKind,
    /// Input side of the micro networks.
    pub input: usize,
    pub channel_scale: f64,
    pub stages: usize,
    pub precision: Precision,
    pub base_lr: f64,
    pub max_iter: usize,
    pub factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub drop: DropConfig,
    pub dropout_rate: f64,
    /// Iterations between evaluations of the held-out set.
    pub eval_every: usize,
    /// Record every sampled pattern in [`TrainRun::masks`].
    pub log_masks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetKind::Micro,
            input: 32,
            channel_scale: 1.0,
            stages: 2,
            precision: Precision::F32,
            base_lr: 0.01,
            max_iter: 5000,
            factor: 0.5,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 16,
            seed: 0,
            drop: DropConfig::default(),
            dropout_rate: 0.5,
            eval_every: 100,
            log_masks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.factor > 0.0) {
            return bad(format!("factor must be positive, got {}", self.factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.channel_scale > 0.0) {
            return bad(format!("channel_scale must be positive, got {}", self.channel_scale));
        }
        self.drop.validate()
    }

    /// Network for `classes` fonts, with every dropout layer at `dropout_rate`.
    pub fn network_spec(&self, classes: usize) -> Result<NetworkSpec> {
        let micro = |base: MicroConfig| MicroConfig {
            input: self.input,
            stages: self.stages,
            channel_scale: self.channel_scale,
            classes,
            dropout: self.dropout_rate,
            ..base
        };
        let spec = match self.network {
            NetKind::Micro => build_micro_ifn(&micro(MicroConfig::default()))?,
            NetKind::MicroTextblock => build_micro_ifn(&micro(MicroConfig::textblock(classes)))?,
            NetKind::SingleChar | NetKind::TextBlock => {
                let spec = if self.network == NetKind::SingleChar {
                    build_singlechar_ifn()
                } else {
                    build_textblock_ifn()
                };
                let k = spec.classes()?;
                if k != classes {
                    return Err(Error::InvalidConfig(format!(
                        "{} network has {k} classes, dataset has {classes}",
                        self.network
                    )));
                }
                spec
            }
        };
        Ok(spec.with_dropout_rate(self.dropout_rate))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("network", &self.network);
        kv("input", &self.input);
        kv("channel_scale", &self.channel_scale);
        kv("stages", &self.stages);
        kv("precision", &self.precision.as_str());
        kv("base_lr", &self.base_lr);
        kv("max_iter", &self.max_iter);
        kv("factor", &self.factor);
        kv("momentum", &self.momentum);
        kv("weight_decay", &self.weight_decay);
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv("bars", &self.drop.bars);
        kv("n_max", &self.drop.n_max);
        kv("gamma", &self.drop.gamma);
        kv("mesh_mode", &self.drop.mesh_mode.as_str());
        kv("dropout_rate", &self.dropout_rate);
        kv("eval_every", &self.eval_every);
        kv("log_masks", &self.log_masks);
        s
    }

    /// Parses `key = value` lines; absent keys keep their defaults, unknown
    /// keys are rejected.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let d = Self::default();
        let mut kv = KeyValues::parse(text, source)?;
        let cfg = Self {
            network: kv.get("network", d.network)?,
            input: kv.get("input", d.input)?,
            channel_scale: kv.get("channel_scale", d.channel_scale)?,
            stages: kv.get("stages", d.stages)?,
            precision: kv.get("precision", d.precision)?,
            base_lr: kv.get("base_lr", d.base_lr)?,
            max_iter: kv.get("max_iter", d.max_iter)?,
            factor: kv.get("factor", d.factor)?,
            momentum: kv.get("momentum", d.momentum)?,
            weight_decay: kv.get("weight_decay", d.weight_decay)?,
            batch_size: kv.get("batch_size", d.batch_size)?,
            seed: kv.get("seed", d.seed)?,
            drop: DropConfig {
                bars: kv.get("bars", d.drop.bars)?,
                n_max: kv.get("n_max", d.drop.n_max)?,
                gamma: kv.get("gamma", d.drop.gamma)?,
                mesh_mode: kv.get::<MeshMode>("mesh_mode", d.drop.mesh_mode)?,
            },
            dropout_rate: kv.get("dropout_rate", d.dropout_rate)?,
            eval_every: kv.get("eval_every", d.eval_every)?,
            log_masks: kv.get("log_masks", d.log_masks)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One labelled image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= classes) {
            return Err(Error::InvalidConfig(format!("label {} outside 0..{classes}", s.label)));
        }
        Ok(Self { samples, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Velocities mirroring the parameters, plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub velocity: Vec<ConvGrads<T>>,
    pub iter: usize,
}

impl<T: Real> OptimState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            velocity: net.zero_grads().layers,
            iter: 0,
        }
    }
}

/// `base_lr · (1 − iter/max_iter)^factor`, clamped to 0 past `max_iter`.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    if iter > cfg.max_iter {
        warn!("iteration {iter} is past max_iter {}; learning rate clamped to 0", cfg.max_iter);
        return 0.0;
    }
    cfg.base_lr * (1.0 - iter as f64 / cfg.max_iter as f64).powf(cfg.factor)
}

/// `v ← momentum·v + g + decay·p` (decay on weights only), then `p ← p − lr·v`.
/// Parameters are untouched when any gradient is non-finite.
pub fn sgd_step<T: Real>(
    net: &mut Network<T>,
    grads: &Grads<T>,
    state: &mut OptimState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (g, name) in grads.layers.iter().zip(net.param_names()) {
        if g.weight.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: name.clone() });
        }
    }
    let (lr, m, wd) = (T::from_f64(lr), T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay));
    for ((p, g), v) in net.params_mut().iter_mut().zip(&grads.layers).zip(&mut state.velocity) {
        for ((w, &gw), vw) in p.weight.iter_mut().zip(&g.weight).zip(&mut v.weight) {
            *vw = m * *vw + gw + wd * *w;
            *w -= lr * *vw;
        }
        for ((b, &gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
            *vb = m * *vb + gb;
            *b -= lr * *vb;
        }
    }
    state.iter += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub eval_accuracy: Option<f64>,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("iter,lr,loss,eval_accuracy\n");
    for r in rows {
        let acc = r.eval_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{acc}", r.iter, r.lr, r.loss);
    }
    out
}

/// Pattern drawn for dataset sample `sample` at iteration `iter`; `None` when
/// the sample was left clean.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRecord {
    pub iter: usize,
    pub sample: usize,
    pub pattern: Option<Pattern>,
}

pub fn masks_csv(records: &[MaskRecord]) -> String {
    let mut out = String::from("iter,sample,dropped\n");
    for r in records {
        let cells = match &r.pattern {
            None => String::new(),
            Some(p) => p
                .dropped()
                .iter()
                .map(|(row, col)| format!("{}:{}", row + 1, col + 1))
                .collect::<Vec<_>>()
                .join(" "),
        };
        let _ = writeln!(out, "{},{},{cells}", r.iter, r.sample);
    }
    out
}

pub struct TrainRun<T> {
    pub net: Network<T>,
    pub metrics: Vec<MetricRow>,
    pub masks: Vec<MaskRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode accuracy and confusion counts.
pub fn evaluate<T: Real>(net: &Network<T>, data: &Dataset) -> Result<Evaluation> {
    let k = net.classes();
    let mut confusion = vec![vec![0usize; k]; data.classes.max(k)];
    let mut predictions = Vec::with_capacity(data.len());
    let mut correct = 0;
    for s in &data.samples {
        let pred = argmax(&net.logits(&to_input(&s.image, net.input_shape())?)?);
        confusion[s.label][pred] += 1;
        correct += usize::from(pred == s.label);
        predictions.push(pred);
    }
    let accuracy = if data.is_empty() {
        0.0
    } else {
        correct as f64 / data.len() as f64
    };
    Ok(Evaluation {
        accuracy,
        confusion,
        predictions,
    })
}

/// Epoch-shuffled index stream.
struct Batches {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl Batches {
    fn new(len: usize, seed: u64) -> Self {
        let mut b = Self {
            order: (0..len).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut stream(self.seed, self.epoch));
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.epoch += 1;
                    self.shuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Trains a fresh network on `data`, evaluating `eval` every `eval_every`
/// iterations and after the last one. Deterministic given `cfg.seed`.
pub fn train<T: Real>(
    data: &Dataset,
    eval: Option<&Dataset>,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set has no samples".into()));
    }
    let spec = spec.with_dropout_rate(cfg.dropout_rate);
    let classes = spec.classes()?;
    if data.classes > classes {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, network only {classes}",
            data.classes
        )));
    }
    let mut net = Network::<T>::init(&spec, &mut stream(derive_seed(cfg.seed, TAG_INIT), 0))?;
    let mut state = OptimState::new(&net);
    let mut grads = net.zero_grads();
    let mut batches = Batches::new(data.len(), derive_seed(cfg.seed, TAG_SHUFFLE));
    let aug_seed = derive_seed(cfg.seed, TAG_AUGMENT);
    let dropout_seed = derive_seed(cfg.seed, TAG_DROPOUT);
    let mut metrics = Vec::with_capacity(cfg.max_iter);
    let mut masks = Vec::new();
    let scale = T::from_f64(1.0 / cfg.batch_size as f64);

    for iter in 0..cfg.max_iter {
        let lr = lr_at(iter, cfg);
        grads.fill_zero();
        let mut loss = 0.0;
        let iter_aug = derive_seed(aug_seed, iter as u64);
        let iter_dropout = derive_seed(dropout_seed, iter as u64);
        for idx in batches.next_batch(cfg.batch_size) {
            let sample = &data.samples[idx];
            let mut aug_rng = stream(iter_aug, idx as u64);
            let (image, mask) = maybe_dropregion_masked(&sample.image, &cfg.drop, &mut aug_rng)?;
            if cfg.log_masks {
                masks.push(MaskRecord {
                    iter,
                    sample: idx,
                    pattern: mask.map(|m| m.pattern().clone()),
                });
            }
            let x = to_input::<T>(&image, net.input_shape())?;
            let mut dropout_rng = stream(iter_dropout, idx as u64);
            let trace = net.trace(&x, Some(&mut dropout_rng))?;
            let (l, dlogits) = softmax_xent(&trace.logits, sample.label);
            loss += l.as_f64();
            net.backward(&trace, &dlogits, &mut grads);
        }
        grads.scale(scale);
        sgd_step(&mut net, &grads, &mut state, lr, cfg)?;
        let done = iter + 1;
        let eval_accuracy = match eval {
            Some(e) if done % cfg.eval_every == 0 || done == cfg.max_iter => Some(evaluate(&net, e)?.accuracy),
            _ => None,
        };
        metrics.push(MetricRow {
            iter,
            lr,
            loss: loss / cfg.batch_size as f64,
            eval_accuracy,
        });
    }
    Ok(TrainRun { net, metrics, masks })
}
