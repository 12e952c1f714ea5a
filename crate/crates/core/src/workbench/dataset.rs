//! Synthetic character and text-block datasets and their on-disk layout.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use super::fonts::{render_glyph, Skeleton, SyntheticFontSpec};
use crate::imagecore::{preprocess_char, read_pgm, write_pgm, GrayImage};
use crate::kv::KeyValues;
use crate::rng::{derive_seed, stream};
use crate::trainer::{Dataset, Sample};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const GEN_CONFIG_FILE: &str = "gen.txt";
/// Minimum background gap between neighbouring glyphs in a block.
pub const GLYPH_GAP: usize = 3;

const TAG_SKELETON: u64 = 11;
const TAG_SAMPLE: u64 = 12;
const TAG_BLOCK: u64 = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("split must be train|test, got `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub fonts: usize,
    pub chars: usize,
    /// Characters `0..train_chars` form the training split, the rest the test split.
    pub train_chars: usize,
    /// Renders per (font, character).
    pub samples: usize,
    pub jitter: f64,
    pub seed: u64,
    pub blocks_train: usize,
    pub blocks_test: usize,
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            fonts: 5,
            chars: 40,
            train_chars: 20,
            samples: 2,
            jitter: 0.04,
            seed: 0,
            blocks_train: 20,
            blocks_test: 20,
            block_size: 160,
            rows: 6,
            cols: 5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.fonts < 2 {
            return bad(format!("need at least 2 fonts, got {}", self.fonts));
        }
        if self.train_chars == 0 || self.train_chars >= self.chars {
            return bad(format!("train_chars must lie in 1..{}, got {}", self.chars, self.train_chars));
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.rows == 0 || self.cols == 0 || self.block_size == 0 {
            return bad("block geometry must be non-empty".into());
        }
        for f in 0..self.fonts {
            self.font(f).validate()?;
        }
        Ok(())
    }

    pub fn font(&self, id: usize) -> SyntheticFontSpec {
        SyntheticFontSpec::for_id(id, self.jitter)
    }

    pub fn split_of(&self, char_id: usize) -> Split {
        if char_id < self.train_chars {
            Split::Train
        } else {
            Split::Test
        }
    }

    pub fn chars_of(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_chars,
            Split::Test => self.train_chars..self.chars,
        }
    }

    pub fn skeleton(&self, char_id: usize) -> Skeleton {
        Skeleton::random(&mut stream(derive_seed(self.seed, TAG_SKELETON), char_id as u64))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("fonts", &self.fonts);
        kv("chars", &self.chars);
        kv("train_chars", &self.train_chars);
        kv("samples", &self.samples);
        kv("jitter", &self.jitter);
        kv("seed", &self.seed);
        kv("blocks_train", &self.blocks_train);
        kv("blocks_test", &self.blocks_test);
        kv("block_size", &self.block_size);
        kv("rows", &self.rows);
        kv("cols", &self.cols);
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let d = Self::default();
        let mut kv = KeyValues::parse(text, source)?;
        let cfg = Self {
            fonts: kv.get("fonts", d.fonts)?,
            chars: kv.get("chars", d.chars)?,
            train_chars: kv.get("train_chars", d.train_chars)?,
            samples: kv.get("samples", d.samples)?,
            jitter: kv.get("jitter", d.jitter)?,
            seed: kv.get("seed", d.seed)?,
            blocks_train: kv.get("blocks_train", d.blocks_train)?,
            blocks_test: kv.get("blocks_test", d.blocks_test)?,
            block_size: kv.get("block_size", d.block_size)?,
            rows: kv.get("rows", d.rows)?,
            cols: kv.get("cols", d.cols)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One 64×64 character image.
#[derive(Clone, Debug, PartialEq)]
pub struct CharRecord {
    pub font: usize,
    pub char_id: usize,
    pub sample: usize,
    pub split: Split,
    pub image: GrayImage,
}

/// Raw glyph crop of `(font, char, sample)`, before size normalization.
pub fn render_sample(cfg: &GenConfig, font: usize, char_id: usize, sample: usize) -> Result<GrayImage> {
    let seed = derive_seed(derive_seed(cfg.seed, TAG_SAMPLE), font as u64);
    let mut rng = stream(seed, (char_id * cfg.samples + sample) as u64);
    render_glyph(&cfg.skeleton(char_id), &cfg.font(font), &mut rng)
}

/// Every (font, character, sample) render, normalized to 64×64.
pub fn generate_chars(cfg: &GenConfig) -> Result<Vec<CharRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.fonts * cfg.chars * cfg.samples);
    for font in 0..cfg.fonts {
        for char_id in 0..cfg.chars {
            for sample in 0..cfg.samples {
                out.push(CharRecord {
                    font,
                    char_id,
                    sample,
                    split: cfg.split_of(char_id),
                    image: preprocess_char(&render_sample(cfg, font, char_id, sample)?)?,
                });
            }
        }
    }
    Ok(out)
}

pub fn char_dataset(records: &[CharRecord], split: Split, classes: usize) -> Result<Dataset> {
    let samples = records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| Sample {
            image: r.image.clone(),
            label: r.font,
        })
        .collect();
    Dataset::new(samples, classes)
}

/// One single-font text block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    pub font: usize,
    pub index: usize,
    pub split: Split,
    /// Row-major character ids.
    pub chars: Vec<usize>,
    pub image: GrayImage,
}

fn cell_edges(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| i * len / n).collect()
}

/// Renders a `rows × cols` block of random characters from `split` in `font`.
pub fn render_block(cfg: &GenConfig, font: usize, split: Split, index: usize) -> Result<BlockRecord> {
    let seed = derive_seed(derive_seed(cfg.seed, TAG_BLOCK), font as u64);
    let stream_id = (index as u64) << 1 | u64::from(split == Split::Test);
    let mut rng = stream(seed, stream_id);
    let xs = cell_edges(cfg.block_size, cfg.cols);
    let ys = cell_edges(cfg.block_size, cfg.rows);
    let pool = cfg.chars_of(split);
    let style = cfg.font(font);
    let mut image = GrayImage::filled(cfg.block_size, cfg.block_size, 0)?;
    let mut chars = Vec::with_capacity(cfg.rows * cfg.cols);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let char_id = rng.random_range(pool.clone());
            let glyph = render_glyph(&cfg.skeleton(char_id), &style, &mut rng)?;
            let (cw, ch) = (xs[c + 1] - xs[c], ys[r + 1] - ys[r]);
            if glyph.width() + GLYPH_GAP > cw || glyph.height() + GLYPH_GAP > ch {
                return Err(Error::InvalidConfig(format!(
                    "{}x{} glyph of font {font} does not fit a {cw}x{ch} cell with a {GLYPH_GAP}-pixel gap",
                    glyph.width(),
                    glyph.height()
                )));
            }
            let ox = xs[c] + rng.random_range(0..=cw - glyph.width() - GLYPH_GAP);
            let oy = ys[r] + rng.random_range(0..=ch - glyph.height() - GLYPH_GAP);
            for y in 0..glyph.height() {
                for x in 0..glyph.width() {
                    image.set(ox + x, oy + y, glyph.get(x, y));
                }
            }
            chars.push(char_id);
        }
    }
    Ok(BlockRecord {
        font,
        index,
        split,
        chars,
        image,
    })
}

pub fn generate_blocks(cfg: &GenConfig) -> Result<Vec<BlockRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (split, n) in [(Split::Train, cfg.blocks_train), (Split::Test, cfg.blocks_test)] {
        for font in 0..cfg.fonts {
            for index in 0..n {
                out.push(render_block(cfg, font, split, index)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest root, `/`-separated.
    pub path: String,
    /// Character id; `None` for blocks.
    pub char_id: Option<usize>,
    pub font: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,char,font,split\n");
        for e in &self.entries {
            let c = e.char_id.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{c},{},{}", e.path, e.font, e.split);
        }
        out
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let source = root.join(MANIFEST_FILE).display().to_string();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "path,char,font,split")) => {}
            _ => return Err(Error::parse(&source, 1, "expected header `path,char,font,split`")),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let err = |m: String| Error::parse(&source, i + 1, m);
            let fields: Vec<&str> = line.split(',').collect();
            let [path, c, font, split] = fields[..] else {
                return Err(err(format!("expected 4 fields, got {}", fields.len())));
            };
            if path.is_empty() {
                return Err(err("empty path".into()));
            }
            entries.push(ManifestEntry {
                path: path.to_string(),
                char_id: match c {
                    "" => None,
                    c => Some(c.parse().map_err(|_| err(format!("bad character id `{c}`")))?),
                },
                font: font.parse().map_err(|_| err(format!("bad font `{font}`")))?,
                split: split.parse().map_err(|_| err(format!("bad split `{split}`")))?,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, root)
    }

    pub fn fonts(&self) -> usize {
        self.entries.iter().map(|e| e.font + 1).max().unwrap_or(0)
    }

    /// Loads the images of `split` as a labelled dataset with `classes` labels
    /// (at least as many as the manifest's fonts).
    pub fn load(&self, split: Split, classes: usize) -> Result<Dataset> {
        let mut samples = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            samples.push(Sample {
                image: read_pgm(&self.root.join(&e.path))?,
                label: e.font,
            });
        }
        Dataset::new(samples, classes)
    }
}

fn save_config(cfg: &GenConfig, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(GEN_CONFIG_FILE);
    fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))
}

/// Writes `<root>/<split>/<font>/<char>_<n>.pgm`, `manifest.csv` and `gen.txt`.
pub fn gen_char_dataset(cfg: &GenConfig, root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for r in generate_chars(cfg)? {
        let path = format!("{}/{}/{}_{}.pgm", r.split, r.font, r.char_id, r.sample);
        write_pgm(&root.join(&path), &r.image)?;
        entries.push(ManifestEntry {
            path,
            char_id: Some(r.char_id),
            font: r.font,
            split: r.split,
        });
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        entries,
    };
    manifest.write()?;
    save_config(cfg, root)?;
    Ok(manifest)
}

/// Writes `<root>/<split>/<font>/block_<n>.pgm`, `manifest.csv` and `gen.txt`.
pub fn gen_block_dataset(cfg: &GenConfig, root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for b in generate_blocks(cfg)? {
        let path = format!("{}/{}/block_{}.pgm", b.split, b.font, b.index);
        write_pgm(&root.join(&path), &b.image)?;
        entries.push(ManifestEntry {
            path,
            char_id: None,
            font: b.font,
            split: b.split,
        });
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        entries,
    };
    manifest.write()?;
    save_config(cfg, root)?;
    Ok(manifest)
}

/// Accuracy of 1-nearest-neighbour classification under squared pixel distance.
pub fn nearest_neighbor_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let dist = |a: &GrayImage, b: &GrayImage| -> u64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
            .sum()
    };
    let correct = test
        .samples
        .iter()
        .filter(|t| {
            let nearest = train
                .samples
                .iter()
                .min_by_key(|s| dist(&s.image, &t.image))
                .expect("non-empty training set");
            nearest.label == t.label
        })
        .count();
    correct as f64 / test.len() as f64
}
