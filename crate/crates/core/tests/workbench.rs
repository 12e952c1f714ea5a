use dropregion::blockpipe::{binarize, close, segment_block};
use dropregion::imagecore::read_pgm;
use dropregion::meshing::MeshMode;
use dropregion::trainer::{masks_csv, train, TrainConfig};
use dropregion::workbench::*;

fn small_train() -> TrainConfig {
    TrainConfig {
        max_iter: 6,
        batch_size: 4,
        eval_every: 6,
        channel_scale: 0.5,
        stages: 1,
        log_masks: true,
        ..TrainConfig::default()
    }
}

#[test]
fn default_dataset_counts_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        samples: 10,
        ..GenConfig::default()
    };
    let m = gen_char_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(m.entries.len(), 2000);
    for f in 0..5 {
        assert_eq!(m.entries.iter().filter(|e| e.font == f).count(), 400);
    }
    let e = &m.entries[0];
    assert_eq!(e.path, "train/0/0_0.pgm");
    let img = read_pgm(dir.path().join(&e.path)).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));

    let train_chars: Vec<_> = m.entries.iter().filter(|e| e.split == Split::Train).map(|e| e.char_id).collect();
    assert!(m
        .entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .all(|e| !train_chars.contains(&e.char_id)));
}

#[test]
fn manifest_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_char_dataset(&GenConfig::default(), dir.path()).unwrap();
    let back = DatasetManifest::read(dir.path()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_csv(), std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap());
    let test = back.load(Split::Test, 5).unwrap();
    assert_eq!(test.len(), 200);
}

#[test]
fn generation_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = GenConfig::default();
    let ma = gen_char_dataset(&cfg, a.path()).unwrap();
    gen_char_dataset(&cfg, b.path()).unwrap();
    for e in &ma.entries {
        let x = std::fs::read(a.path().join(&e.path)).unwrap();
        let y = std::fs::read(b.path().join(&e.path)).unwrap();
        assert_eq!(x, y, "{}", e.path);
    }
}

#[test]
fn nearest_neighbour_is_above_chance_but_not_solved() {
    let records = generate_chars(&GenConfig::default()).unwrap();
    let train = char_dataset(&records, Split::Train, 5).unwrap();
    let test = char_dataset(&records, Split::Test, 5).unwrap();
    let acc = nearest_neighbor_accuracy(&train, &test);
    assert!(acc > 0.2 && acc < 0.9, "1-NN accuracy {acc}");
}

#[test]
fn every_default_block_segments_into_its_grid() {
    let cfg = GenConfig::default();
    for b in generate_blocks(&cfg).unwrap() {
        let boxes = segment_block(&close(&binarize(&b.image)));
        assert_eq!(boxes.len(), cfg.rows * cfg.cols, "font {} block {}", b.font, b.index);
    }
}

#[test]
fn oversized_glyphs_are_rejected() {
    let cfg = GenConfig {
        block_size: 60,
        ..GenConfig::default()
    };
    assert!(generate_blocks(&cfg).is_err());
}

#[test]
fn unknown_config_key_is_named() {
    let err = GenConfig::parse("fonts = 5\nfnts = 3\n", "gen.txt").unwrap_err().to_string();
    assert!(err.contains("fnts"), "{err}");
    let err = ExperimentConfig::parse("train.bogus = 1\n", "exp.txt").unwrap_err().to_string();
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn mesh_arms_share_drop_patterns() {
    let data = GenConfig::default();
    let records = generate_chars(&data).unwrap();
    let set = char_dataset(&records, Split::Train, 5).unwrap();
    let base = small_train();
    let logs: Vec<String> = arms("mesh-compare", &base)
        .unwrap()
        .iter()
        .map(|arm| {
            let spec = arm.train.network_spec(5).unwrap();
            masks_csv(&train::<f32>(&set, None, &spec, &arm.train).unwrap().masks)
        })
        .collect();
    assert_eq!(arms("mesh-compare", &base).unwrap()[0].train.drop.mesh_mode, MeshMode::Fixed);
    assert!(logs[0].lines().count() > 1);
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn degenerate_dropregion_arm_matches_none() {
    let data = GenConfig::default();
    let records = generate_chars(&data).unwrap();
    let set = char_dataset(&records, Split::Train, 5).unwrap();
    let all = arms("aug-compare", &small_train()).unwrap();
    let mut off = all[2].train.clone();
    off.drop.gamma = 1.0;
    let spec = all[0].train.network_spec(5).unwrap();
    let a = train::<f32>(&set, None, &spec, &all[0].train).unwrap();
    let b = train::<f32>(&set, None, &spec, &off).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.net.params(), b.net.params());
}

#[test]
fn experiment_writes_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        train: small_train(),
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    let (out, result) = run_experiment_to_dir("mesh-compare", &cfg, dir.path(), "t0", Some("abc")).unwrap();
    assert_eq!(out, dir.path().join("mesh-compare").join("t0"));
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.starts_with("# experiment mesh-compare\n# commit abc\n"));
    let body: String = config.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    assert_eq!(ExperimentConfig::parse(&body, "config.txt").unwrap(), cfg);
    assert_eq!(std::fs::read_to_string(out.join("result.csv")).unwrap(), result.to_csv());
    assert_eq!(result.arms.len(), 2);
}
