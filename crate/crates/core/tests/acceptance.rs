//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,4,12` restricts the run to the listed criteria.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use dropregion::dropregion::{
    apply_mask, count_patterns, expand_mask, maybe_dropregion, mixture_expectation, sample_pattern, DropConfig,
};
use dropregion::ifn::{
    build_micro_ifn, build_singlechar_ifn, build_textblock_ifn, to_input, LayerSpec, MicroConfig, NetworkSpec,
};
use dropregion::imagecore::{column_profile, decode_pgm, encode_pgm, row_profile, GrayImage};
use dropregion::meshing::{elastic_mesh, fixed_mesh, MeshMode};
use dropregion::rng::{stream, StreamRng};
use dropregion::tensornet::{checkpoint, grad_check, Network, Precision, Real, Shape, Tensor};
use dropregion::trainer::{lr_at, metrics_csv, train, NetKind, TrainConfig};
use dropregion::workbench::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Outcome;

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(&str, Duration, Check); 12] = [
        ("shape table", secs(1), shape_reproduction),
        ("gradient correctness", secs(120), gradient_correctness),
        ("zero propagation", secs(60), zero_propagation),
        ("elastic meshing", secs(10), elastic_meshing),
        ("mask distribution", secs(10), mask_distribution),
        ("mixture identity", secs(120), mixture_identity),
        ("lr schedule", secs(1), lr_schedule),
        ("augmentation ordering", secs(30 * 60), augmentation_ordering),
        ("mesh and drop-count experiments", secs(60 * 60), mesh_and_dropcount),
        ("block ensembles", secs(10 * 60), block_ensembles),
        ("determinism", Duration::MAX, determinism),
        ("round trips", Duration::MAX, round_trips),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = out.pass && in_time;
        failed += usize::from(!pass);
        let late = if in_time { "" } else { ", over time budget" };
        println!(
            "{} {id:>2}. {name}: {} [{:.1}s{late}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// 1

fn shape_reproduction() -> Outcome {
    // (row type, H, W, C) as printed in the SingleChar network table.
    let expected = [
        ("conv", 58, 58, 96),
        ("cccp", 58, 58, 96),
        ("cccp", 58, 58, 96),
        ("max-pooling", 29, 29, 96),
        ("conv", 23, 23, 256),
        ("cccp", 23, 23, 256),
        ("cccp", 23, 23, 256),
        ("max-pooling", 11, 11, 256),
        ("inception", 11, 11, 604),
        ("conv", 11, 11, 512),
        ("cccp", 11, 11, 512),
        ("cccp", 11, 11, 512),
        ("conv", 11, 11, 25),
        ("global-ave-pooling", 1, 1, 25),
    ];
    let table = build_singlechar_ifn().shape_table().unwrap();
    let rows: Vec<_> = table.iter().filter(|r| r.output.is_some() && r.kind != "Input").collect();
    let input_ok = build_singlechar_ifn().input == Shape::new(64, 64, 1);
    let mut mismatches = Vec::new();
    if rows.len() != expected.len() {
        mismatches.push(format!("{} rows, expected {}", rows.len(), expected.len()));
    }
    for (r, (kind, h, w, c)) in rows.iter().zip(expected) {
        let s = r.output.unwrap();
        if !r.kind.starts_with(kind) || (s.h, s.w, s.c) != (h, w, c) {
            mismatches.push(format!("{} {} vs {kind} {h}x{w}x{c}", r.kind, s));
        }
    }
    outcome(
        input_ok && mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} output rows match", rows.len())
        } else {
            mismatches.join("; ")
        },
    )
}

// 2

fn gradient_correctness() -> Outcome {
    let spec = build_micro_ifn(&MicroConfig {
        input: 16,
        first_kernel: 3,
        stages: 2,
        channel_scale: 0.25,
        classes: 4,
        ..MicroConfig::default()
    })
    .unwrap();
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = stream(1000 + seed, 0);
        let mut net = Network::<f64>::init(&spec, &mut rng).unwrap();
        // Non-zero biases keep pre-activations off the ReLU kink at zero.
        for p in net.params_mut() {
            p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let s = spec.input;
        let x = Tensor::new(s, (0..s.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let r = grad_check(&net, &x, seed as usize % 4, 1e-5).unwrap();
        checked += r.checked;
        if r.max_rel_error > worst {
            worst = r.max_rel_error;
            where_ = format!("{}[{}]", r.layer, r.index);
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} at {where_} over {checked} parameters"),
    )
}

// 3

/// Input rows (or columns) seen by output position `o` of layer `j`, inclusive.
fn receptive_field(layers: &[LayerSpec], lens: &[usize], j: usize, lo: usize, hi: usize) -> (usize, usize) {
    let (k, s, pad) = match &layers[j] {
        LayerSpec::Conv(c) => (c.kernel, c.stride, c.pad.top),
        LayerSpec::Cccp { .. } | LayerSpec::Relu | LayerSpec::Dropout { .. } => (1, 1, 0),
        LayerSpec::Pool(p) => (p.kernel, p.stride, p.pad),
        other => panic!("unexpected layer {other:?} in conv stack"),
    };
    let in_len = lens[j];
    let a = (lo * s).saturating_sub(pad);
    let b = (hi * s + k - 1).saturating_sub(pad).min(in_len - 1);
    if j == 0 {
        (a, b)
    } else {
        receptive_field(layers, lens, j - 1, a, b)
    }
}

fn zero_propagation() -> Outcome {
    let spec = build_micro_ifn(&MicroConfig::default()).unwrap();
    let stack: Vec<LayerSpec> = spec
        .layers
        .iter()
        .take_while(|l| !matches!(l, LayerSpec::Inception { .. }))
        .cloned()
        .collect();
    let conv_spec = NetworkSpec {
        input: spec.input,
        layers: stack.clone(),
    };
    let shapes = conv_spec.shapes().unwrap();
    let mut lens = vec![spec.input.h];
    lens.extend(shapes.iter().map(|s| s.h));

    let mut rng = stream(3, 0);
    let mut net = Network::<f64>::init(&spec, &mut rng).unwrap();
    net.params_mut().iter_mut().for_each(|p| p.bias.fill(0.0));

    let side = spec.input.w;
    let drop = DropConfig {
        n_max: 24,
        ..DropConfig::default()
    };
    let (mut inside, mut outside, mut bad) = (0usize, 0usize, Vec::new());
    for m in 0..20u64 {
        let mut r = stream(4, m);
        let img = GrayImage::from_fn(side, side, |_, _| r.random_range(1..=255)).unwrap();
        let grid = if m % 2 == 0 {
            elastic_mesh(&img, drop.bars).unwrap()
        } else {
            fixed_mesh(side, side, drop.bars).unwrap()
        };
        let mask = expand_mask(&sample_pattern(&drop, &mut r), &grid).unwrap();
        let masked = apply_mask(&img, &mask).unwrap();
        // Prefix sums of dropped pixels for rectangle queries.
        let mut pre = vec![0usize; (side + 1) * (side + 1)];
        for y in 0..side {
            for x in 0..side {
                pre[(y + 1) * (side + 1) + x + 1] = usize::from(mask.pixel(x, y) == 0) + pre[y * (side + 1) + x + 1]
                    + pre[(y + 1) * (side + 1) + x]
                    - pre[y * (side + 1) + x];
            }
        }
        let dropped_in = |t: usize, b: usize, l: usize, rr: usize| {
            pre[(b + 1) * (side + 1) + rr + 1] + pre[t * (side + 1) + l]
                - pre[t * (side + 1) + rr + 1]
                - pre[(b + 1) * (side + 1) + l]
        };
        let clean = net.activations(&Tensor::from_image(&img)).unwrap();
        let dropped = net.activations(&Tensor::from_image(&masked)).unwrap();
        for (j, (a, d)) in clean.iter().zip(&dropped).take(stack.len()).enumerate() {
            let s = a.shape();
            for y in 0..s.h {
                let (t, b) = receptive_field(&stack, &lens, j, y, y);
                for x in 0..s.w {
                    let (l, rr) = receptive_field(&stack, &lens, j, x, x);
                    let n = dropped_in(t, b, l, rr);
                    let area = (b - t + 1) * (rr - l + 1);
                    if n == area {
                        inside += 1;
                        if d.pixel(y, x).iter().any(|&v| v != 0.0) {
                            bad.push(format!("mask {m} layer {j} ({y},{x}) not zero"));
                        }
                    } else if n == 0 {
                        outside += 1;
                        if d.pixel(y, x) != a.pixel(y, x) {
                            bad.push(format!("mask {m} layer {j} ({y},{x}) changed"));
                        }
                    }
                }
            }
        }
    }
    outcome(
        bad.is_empty() && inside > 0 && outside > 0,
        format!(
            "{inside} fully-dropped units all zero, {outside} untouched units unchanged{}",
            bad.first().map(|b| format!("; first violation: {b}")).unwrap_or_default()
        ),
    )
}

// 4

/// Smallest 1-based x whose prefix mass reaches i/L of the total, found by
/// rescanning the prefix from scratch, then forced strictly increasing with
/// room for the remaining bars.
fn scan_oracle(profile: &[u64], bars: usize) -> Vec<usize> {
    let total: u128 = profile.iter().map(|&v| v as u128).sum();
    let len = profile.len();
    let mut out: Vec<usize> = Vec::new();
    for i in 1..=bars {
        let x = (1..=len)
            .find(|&x| profile[..x].iter().map(|&v| v as u128).sum::<u128>() * bars as u128 >= i as u128 * total)
            .unwrap();
        let prev = out.last().copied().unwrap_or(0);
        out.push(x.max(prev + 1).min(len - (bars - i)));
    }
    out[bars - 1] = len;
    out
}

fn random_image(rng: &mut StreamRng) -> GrayImage {
    let w = rng.random_range(8..48);
    let h = rng.random_range(8..48);
    let density = rng.random_range(0.02..0.6);
    GrayImage::from_fn(w, h, |_, _| {
        if rng.random_bool(density) {
            rng.random_range(1..=255)
        } else {
            0
        }
    })
    .unwrap()
}

fn elastic_meshing() -> Outcome {
    let mut rng = stream(44, 0);
    let mut problems = Vec::new();
    let mut images = 0;
    while images < 100 {
        let img = random_image(&mut rng);
        if img.mass() == 0 {
            continue;
        }
        images += 1;
        let bars = rng.random_range(1..=6.min(img.width().min(img.height())));
        let grid = elastic_mesh(&img, bars).unwrap();
        for (axis, profile, got) in [
            ("x", column_profile(&img), grid.u()),
            ("y", row_profile(&img), grid.v()),
        ] {
            let want = scan_oracle(&profile.values, bars);
            if got != want.as_slice() {
                problems.push(format!("image {images} {axis}: {got:?} vs oracle {want:?}"));
            }
            let total = profile.values.iter().sum::<u64>() as f64;
            let max_col = *profile.values.iter().max().unwrap() as f64;
            let mut start = 0;
            for &end in got {
                let mass = profile.values[start..end].iter().sum::<u64>() as f64;
                if (mass - total / bars as f64).abs() > max_col {
                    problems.push(format!("image {images} {axis}: bar mass {mass} vs {}", total / bars as f64));
                }
                start = end;
            }
        }
    }
    let blank = GrayImage::filled(37, 29, 0).unwrap();
    let fallback = elastic_mesh(&blank, 5).unwrap() == fixed_mesh(37, 29, 5).unwrap();
    outcome(
        problems.is_empty() && fallback,
        format!(
            "{images} images match the scan oracle and mass bound, blank image falls back: {fallback}{}",
            problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    )
}

// 5

fn mask_distribution() -> Outcome {
    let cfg = DropConfig {
        bars: 2,
        n_max: 2,
        gamma: 0.5,
        mesh_mode: MeshMode::Elastic,
    };
    let n = 100_000;
    let mut counts: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut rng = stream(5, 0);
    for _ in 0..n {
        *counts.entry(sample_pattern(&cfg, &mut rng).keep().to_vec()).or_default() += 1;
    }
    let mut worst = 0.0f64;
    for (keep, &c) in &counts {
        let k = keep.iter().filter(|&&b| !b).count();
        // P(k) = 1/2, then uniform over C(4, k) cell sets.
        let p = 0.5 / if k == 1 { 4.0 } else { 6.0 };
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        worst = worst.max((c as f64 - n as f64 * p).abs() / sigma);
    }
    let c25_13 = count_patterns(5, 13).0.to_string();
    outcome(
        counts.len() == 10 && worst <= 3.0 && c25_13 == "5200300",
        format!(
            "{} patterns observed, worst deviation {worst:.2} sigma, C(25,13) = {c25_13}",
            counts.len()
        ),
    )
}

// 6

fn mixture_identity() -> Outcome {
    let spec = build_micro_ifn(&MicroConfig::default()).unwrap();
    let net = Network::<f64>::init(&spec, &mut stream(6, 0)).unwrap();
    let records = generate_chars(&GenConfig {
        fonts: 2,
        chars: 2,
        train_chars: 1,
        samples: 1,
        ..GenConfig::default()
    })
    .unwrap();
    let img = &records[0].image;
    let cfg = DropConfig {
        bars: 2,
        n_max: 1,
        gamma: 0.5,
        mesh_mode: MeshMode::Elastic,
    };
    let exact = mixture_expectation(&net, img, &cfg).unwrap();
    let n = 10_000;
    let k = exact.len();
    let (mut sum, mut sq) = (vec![0.0; k], vec![0.0; k]);
    for i in 0..n {
        let aug = maybe_dropregion(img, &cfg, &mut stream(60, i)).unwrap();
        let c = net.confidences(&to_input(&aug, spec.input).unwrap()).unwrap();
        for j in 0..k {
            sum[j] += c[j];
            sq[j] += c[j] * c[j];
        }
    }
    let mut worst = 0.0f64;
    for j in 0..k {
        let mean = sum[j] / n as f64;
        let var = (sq[j] / n as f64 - mean * mean).max(0.0) * n as f64 / (n - 1) as f64;
        let se = (var / n as f64).sqrt().max(1e-15);
        worst = worst.max((exact[j] - mean).abs() / se);
    }
    let off = DropConfig { gamma: 1.0, ..cfg };
    let plain = net.confidences(&to_input(img, spec.input).unwrap()).unwrap();
    let degenerate = mixture_expectation(&net, img, &off).unwrap() == plain
        && maybe_dropregion(img, &off, &mut stream(61, 0)).unwrap() == *img;
    outcome(
        worst <= 3.0 && degenerate,
        format!("worst component {worst:.2} standard errors from Monte Carlo, gamma=1 bit-exact: {degenerate}"),
    )
}

// 7

fn lr_schedule() -> Outcome {
    let cfg = TrainConfig {
        base_lr: 0.01,
        max_iter: 1000,
        factor: 0.5,
        ..TrainConfig::default()
    };
    let start = lr_at(0, &cfg);
    let end = lr_at(1000, &cfg);
    let mid = lr_at(500, &cfg);
    let want = 0.01 * 0.5f64.sqrt();
    outcome(
        start == 0.01 && end == 0.0 && (mid - want).abs() <= 1e-12,
        format!("lr(0) = {start}, lr(max) = {end}, lr(max/2) = {mid} vs {want}"),
    )
}

// 8

fn augmentation_ordering() -> Outcome {
    let r = run_experiment("aug-compare", &ExperimentConfig::default()).unwrap();
    let mean = |a: &str| r.arm(a).unwrap().mean();
    let (none, dropout, dropregion) = (mean("none"), mean("dropout"), mean("dropregion"));
    let gap = dropregion - none;
    outcome(
        dropregion > dropout && dropout > none && gap >= 0.02,
        format!(
            "mean accuracy none {none:.3}, dropout {dropout:.3}, dropregion {dropregion:.3}, both {:.3}; gap {:.1} points",
            mean("both"),
            gap * 100.0
        ),
    )
}

// 9

fn mesh_and_dropcount() -> Outcome {
    let cfg = ExperimentConfig::default();
    let mesh = run_experiment("mesh-compare", &cfg).unwrap();
    let sweep = run_experiment("dropcount-sweep", &sweep_config()).unwrap();
    let seeds = sweep.seeds.len();
    let complete = |r: &ExperimentResult, arms: usize| {
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        lines.len() == arms + 1 && lines.iter().all(|l| l.split(',').count() == r.seeds.len() + 2)
    };
    let cells = cfg.train.drop.cells();
    let full = complete(&mesh, 2) && complete(&sweep, cells - 1);
    let mut interior = 0;
    let mut best = Vec::new();
    for s in 0..seeds {
        let accs: Vec<f64> = sweep.arms.iter().map(|a| a.accuracies[s]).collect();
        let inner = accs[1..accs.len() - 1].iter().cloned().fold(f64::MIN, f64::max);
        let n = accs.iter().position(|&a| a == inner).unwrap() + 1;
        if inner > accs[0] && inner > accs[accs.len() - 1] {
            interior += 1;
        }
        best.push(n);
    }
    let fixed = mesh.arm("fixed").unwrap().mean();
    let elastic = mesh.arm("elastic").unwrap().mean();
    outcome(
        full && interior * 3 >= seeds * 2,
        format!(
            "elastic {elastic:.3} vs fixed {fixed:.3}; sweep best n per seed {best:?}, interior on {interior}/{seeds}; csvs complete: {full}"
        ),
    )
}

/// The 24-arm sweep trains 72 networks, so each gets a shorter schedule.
fn sweep_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.train.max_iter = SWEEP_ITERS;
    cfg.train.eval_every = SWEEP_ITERS;
    cfg
}

const SWEEP_ITERS: usize = 1500;

// 10

fn block_ensembles() -> Outcome {
    let r = run_experiment("block-modes", &ExperimentConfig::default()).unwrap();
    let acc = |a: &str| r.arm(a).unwrap().accuracies.clone();
    let (seg, single, free, center) = (acc("segmented"), acc("single-char"), acc("free"), acc("center-patch"));
    let ok = (0..r.seeds.len()).all(|s| seg[s] >= single[s] && free[s] >= center[s]);
    outcome(
        ok,
        format!("segmented {seg:.3?} vs single char {single:.3?}; free {free:.3?} vs center patch {center:.3?}"),
    )
}

// 11

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let gen = GenConfig::default();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        gen_char_dataset(&gen, &dir.path().join("chars")).unwrap();
        gen_block_dataset(&gen, &dir.path().join("blocks")).unwrap();
        let data = DatasetManifest::read(&dir.path().join("chars")).unwrap();
        let train_set = data.load(Split::Train, 5).unwrap();
        let cfg = TrainConfig {
            max_iter: 40,
            eval_every: 20,
            ..TrainConfig::default()
        };
        let net = train::<f32>(&train_set, None, &cfg.network_spec(5).unwrap(), &cfg).unwrap();
        std::fs::write(dir.path().join("metrics.csv"), metrics_csv(&net.metrics)).unwrap();
        checkpoint::save(&net.net, &dir.path().join("model")).unwrap();
        dir_bytes(dir.path())
    };
    let a = run();
    let b = run();
    let files = a.len();
    let same = a == b;
    outcome(same && files > 0, format!("{files} files byte-identical across runs: {same}"))
}

// 12

fn random_train_config(rng: &mut StreamRng) -> TrainConfig {
    let bars = rng.random_range(2..=8);
    TrainConfig {
        network: [NetKind::Micro, NetKind::MicroTextblock][rng.random_range(0..2)],
        input: rng.random_range(16..=96),
        channel_scale: rng.random_range(0.1..4.0),
        stages: rng.random_range(1..=2),
        precision: [Precision::F32, Precision::F64][rng.random_range(0..2)],
        base_lr: rng.random_range(1e-5..1.0),
        max_iter: rng.random_range(1..100_000),
        factor: rng.random_range(0.1..2.0),
        momentum: rng.random_range(0.0..1.0),
        weight_decay: rng.random_range(0.0..1e-2),
        batch_size: rng.random_range(1..256),
        seed: rng.random(),
        drop: DropConfig {
            bars,
            n_max: rng.random_range(1..bars * bars),
            gamma: rng.random_range(0.0..=1.0),
            mesh_mode: [MeshMode::Fixed, MeshMode::Elastic][rng.random_range(0..2)],
        },
        dropout_rate: rng.random_range(0.0..0.9),
        eval_every: rng.random_range(1..5000),
        log_masks: rng.random(),
    }
}

fn random_net<T: Real>(rng: &mut StreamRng) -> Network<T> {
    let spec = build_micro_ifn(&MicroConfig {
        input: rng.random_range(12..=24),
        first_kernel: 3,
        stages: rng.random_range(1..=2),
        channel_scale: rng.random_range(0.2..0.6),
        classes: rng.random_range(2..6),
        ..MicroConfig::default()
    })
    .unwrap();
    let mut net = Network::<T>::init(&spec, rng).unwrap();
    for p in net.params_mut() {
        p.bias.iter_mut().for_each(|b| *b = T::from_f64(rng.random_range(-1.0..1.0)));
    }
    net
}

fn checkpoint_round_trip<T: Real>(rng: &mut StreamRng) -> bool {
    let net = random_net::<T>(rng);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    checkpoint::save(&net, a.path()).unwrap();
    let back: Network<T> = checkpoint::load(a.path()).unwrap();
    checkpoint::save(&back, b.path()).unwrap();
    let bits = |n: &Network<T>| -> Vec<u64> {
        n.params()
            .iter()
            .flat_map(|p| p.weight.iter().chain(&p.bias).map(|v| v.as_f64().to_bits()))
            .collect()
    };
    bits(&back) == bits(&net) && back.spec() == net.spec() && dir_bytes(a.path()) == dir_bytes(b.path())
}

fn round_trips() -> Outcome {
    let mut rng = stream(12, 0);
    let mut failures = Vec::new();
    for i in 0..50 {
        let img = random_image(&mut rng);
        let bytes = encode_pgm(&img);
        let back = decode_pgm(&bytes).unwrap();
        if back != img || encode_pgm(&back) != bytes {
            failures.push(format!("pgm {i}"));
        }
    }
    for i in 0..20 {
        let n = rng.random_range(1..50);
        let entries = (0..n)
            .map(|j| {
                let split = if rng.random() { Split::Train } else { Split::Test };
                let font = rng.random_range(0..25);
                let char_id = rng.random::<bool>().then(|| rng.random_range(0..1000));
                ManifestEntry {
                    path: format!("{split}/{font}/{}_{j}.pgm", char_id.unwrap_or(0)),
                    char_id,
                    font,
                    split,
                }
            })
            .collect();
        let m = DatasetManifest {
            root: "data".into(),
            entries,
        };
        let csv = m.to_csv();
        let back = DatasetManifest::parse(&csv, Path::new("data")).unwrap();
        if back != m || back.to_csv() != csv {
            failures.push(format!("manifest {i}"));
        }
    }
    for i in 0..50 {
        let t = random_train_config(&mut rng);
        let text = t.to_text();
        let back = TrainConfig::parse(&text, "train.txt").unwrap();
        if back != t || back.to_text() != text {
            failures.push(format!("train config {i}"));
        }
        let g = GenConfig {
            fonts: rng.random_range(2..30),
            chars: rng.random_range(2..100),
            samples: rng.random_range(1..20),
            jitter: rng.random_range(0.0..0.2),
            seed: rng.random(),
            ..GenConfig::default()
        };
        let g = GenConfig {
            train_chars: rng.random_range(1..g.chars),
            ..g
        };
        let text = g.to_text();
        let back = GenConfig::parse(&text, "gen.txt").unwrap();
        if back != g || back.to_text() != text {
            failures.push(format!("gen config {i}"));
        }
        let e = ExperimentConfig {
            data: g,
            train: t,
            block_train: random_train_config(&mut rng),
            seeds: (0..rng.random_range(1..5)).map(|_| rng.random()).collect(),
            crops_per_block: rng.random_range(1..64),
        };
        let text = e.to_text();
        let back = ExperimentConfig::parse(&text, "exp.txt").unwrap();
        if back != e || back.to_text() != text {
            failures.push(format!("experiment config {i}"));
        }
    }
    let mut specs = vec![build_singlechar_ifn(), build_textblock_ifn()];
    for _ in 0..20 {
        specs.push(random_net::<f32>(&mut rng).spec().clone());
    }
    for (i, s) in specs.iter().enumerate() {
        let text = s.to_text();
        let back = NetworkSpec::parse(&text).unwrap();
        if &back != s || back.to_text() != text {
            failures.push(format!("spec {i}"));
        }
    }
    for i in 0..5 {
        if !checkpoint_round_trip::<f32>(&mut rng) || !checkpoint_round_trip::<f64>(&mut rng) {
            failures.push(format!("checkpoint {i}"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "50 pgm, 20 manifest, 150 config, 22 spec and 10 checkpoint round trips exact".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}
