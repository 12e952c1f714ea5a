//! Region disruption: pattern sampling, mask expansion and application, and
//! the exact mixture over all masks.

use std::fmt::Write as _;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::seq::index;
use rand::Rng;

use crate::ifn::to_input;
use crate::imagecore::GrayImage;
use crate::meshing::{mesh, MeshGrid, MeshMode};
use crate::tensornet::{Network, Real};
use crate::{Error, Result};

/// Patterns enumerated by [`mixture_expectation`] at most.
pub const ENUMERATION_LIMIT: u128 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropConfig {
    /// Bars per axis, `L`.
    pub bars: usize,
    /// Upper bound of the per-sample drop count.
    pub n_max: usize,
    /// Weight of the clean sample; disruption happens with probability `1 - gamma`.
    pub gamma: f64,
    pub mesh_mode: MeshMode,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            bars: 5,
            n_max: 13,
            gamma: 0.5,
            mesh_mode: MeshMode::Elastic,
        }
    }
}

impl DropConfig {
    pub fn cells(&self) -> usize {
        self.bars * self.bars
    }

    pub fn validate(&self) -> Result<()> {
        if self.bars == 0 {
            return Err(Error::InvalidConfig("bars must be at least 1".into()));
        }
        if self.n_max == 0 || self.n_max >= self.cells() {
            return Err(Error::InvalidConfig(format!(
                "n_max must lie in 1..{} for {} bars, got {}",
                self.cells(),
                self.bars,
                self.n_max
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// L×L keep flags, row-major; `false` marks a dropped cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    bars: usize,
    keep: Vec<bool>,
}

impl Pattern {
    pub fn new(bars: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != bars * bars {
            return Err(Error::DimensionMismatch(format!(
                "{} flags for a {bars}×{bars} pattern",
                keep.len()
            )));
        }
        Ok(Self { bars, keep })
    }

    pub fn keep_all(bars: usize) -> Self {
        Self {
            bars,
            keep: vec![true; bars * bars],
        }
    }

    /// Pattern dropping the given row-major cell indices.
    pub fn dropping(bars: usize, cells: &[usize]) -> Result<Self> {
        let mut p = Self::keep_all(bars);
        for &c in cells {
            if c >= p.keep.len() {
                return Err(Error::DimensionMismatch(format!("cell {c} outside a {bars}×{bars} pattern")));
            }
            p.keep[c] = false;
        }
        Ok(p)
    }

    pub fn bars(&self) -> usize {
        self.bars
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.bars + col]
    }

    /// `(row, col)` of each dropped cell, row-major.
    pub fn dropped(&self) -> Vec<(usize, usize)> {
        (0..self.keep.len())
            .filter(|&i| !self.keep[i])
            .map(|i| (i / self.bars, i % self.bars))
            .collect()
    }

    pub fn dropped_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }
}

/// Pixel mask of one pattern over one mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pattern: Pattern,
    grid: MeshGrid,
    pixels: Vec<u8>,
}

impl RegionMask {
    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    pub fn grid(&self) -> &MeshGrid {
        &self.grid
    }

    /// Row-major 0/1 values.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.grid.width() + x]
    }

    pub fn dropped_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 0).count()
    }
}

/// Draws `k ~ U{1..n_max}`, then `k` distinct cells uniformly.
pub fn sample_pattern<R: Rng + ?Sized>(cfg: &DropConfig, rng: &mut R) -> Pattern {
    let k = rng.random_range(1..=cfg.n_max);
    let cells = index::sample(rng, cfg.cells(), k).into_vec();
    Pattern::dropping(cfg.bars, &cells).expect("sampled cells are in range")
}

pub fn expand_mask(pattern: &Pattern, grid: &MeshGrid) -> Result<RegionMask> {
    if pattern.bars() != grid.bars() {
        return Err(Error::DimensionMismatch(format!(
            "{0}×{0} pattern on a {1}×{1} mesh",
            pattern.bars(),
            grid.bars()
        )));
    }
    let (w, h) = (grid.width(), grid.height());
    let mut pixels = vec![1u8; w * h];
    for (row, col) in pattern.dropped() {
        for y in grid.rows(row) {
            pixels[y * w + grid.columns(col).start..y * w + grid.columns(col).end].fill(0);
        }
    }
    Ok(RegionMask {
        pattern: pattern.clone(),
        grid: grid.clone(),
        pixels,
    })
}

pub fn apply_mask(img: &GrayImage, mask: &RegionMask) -> Result<GrayImage> {
    if img.width() != mask.grid.width() || img.height() != mask.grid.height() {
        return Err(Error::DimensionMismatch(format!(
            "image {}×{} against mask {}×{}",
            img.width(),
            img.height(),
            mask.grid.width(),
            mask.grid.height()
        )));
    }
    let data = img.data().iter().zip(&mask.pixels).map(|(&p, &m)| p * m).collect();
    GrayImage::new(img.width(), img.height(), data)
}

/// Like [`maybe_dropregion`], also returning the mask when one was applied.
pub fn maybe_dropregion_masked<R: Rng + ?Sized>(
    img: &GrayImage,
    cfg: &DropConfig,
    rng: &mut R,
) -> Result<(GrayImage, Option<RegionMask>)> {
    let u: f64 = rng.random();
    if u < cfg.gamma {
        return Ok((img.clone(), None));
    }
    let grid = mesh(img, cfg.bars, cfg.mesh_mode)?;
    let mask = expand_mask(&sample_pattern(cfg, rng), &grid)?;
    Ok((apply_mask(img, &mask)?, Some(mask)))
}

/// Returns `img` untouched with probability `gamma`, otherwise meshes it and
/// zeroes a sampled set of regions.
pub fn maybe_dropregion<R: Rng + ?Sized>(img: &GrayImage, cfg: &DropConfig, rng: &mut R) -> Result<GrayImage> {
    Ok(maybe_dropregion_masked(img, cfg, rng)?.0)
}

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::ZERO;
    }
    let k = k.min(n - k);
    let mut c = BigUint::from(1u32);
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

/// `(C(L², n), Σ_{i=1..n} C(L², i))`.
pub fn count_patterns(bars: usize, n: usize) -> (BigUint, BigUint) {
    let cells = bars * bars;
    let exact = binomial(cells, n);
    let cumulative = (1..=n).map(|i| binomial(cells, i)).sum();
    (exact, cumulative)
}

/// Next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact `γ·f(x) + (1−γ)·Σ_M p(M)·f(M ⋆ x)` over the sampler's pattern law,
/// using inference-mode confidences. `img` is resized to the network input
/// after masking, as in training.
pub fn mixture_expectation<T: Real>(net: &Network<T>, img: &GrayImage, cfg: &DropConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let clean = net.confidences(&to_input(img, net.input_shape())?)?;
    if cfg.gamma == 1.0 {
        return Ok(clean);
    }
    let (_, total) = count_patterns(cfg.bars, cfg.n_max);
    let limit = BigUint::from(ENUMERATION_LIMIT);
    if total > limit {
        return Err(Error::EnumerationTooLarge {
            patterns: u128::try_from(&total).unwrap_or(u128::MAX),
            limit: ENUMERATION_LIMIT,
        });
    }
    let grid = mesh(img, cfg.bars, cfg.mesh_mode)?;
    let cells = cfg.cells();
    let mut acc = vec![0f64; clean.len()];
    for k in 1..=cfg.n_max {
        let weight = 1.0 / cfg.n_max as f64 / binomial(cells, k).to_string().parse::<f64>().expect("small count");
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            let mask = expand_mask(&Pattern::dropping(cfg.bars, &combo)?, &grid)?;
            let out = net.confidences(&to_input(&apply_mask(img, &mask)?, net.input_shape())?)?;
            for (a, v) in acc.iter_mut().zip(out) {
                *a += weight * v.as_f64();
            }
            if !next_combination(&mut combo, cells) {
                break;
            }
        }
    }
    Ok(clean
        .iter()
        .zip(acc)
        .map(|(&c, a)| T::from_f64(cfg.gamma * c.as_f64() + (1.0 - cfg.gamma) * a))
        .collect())
}

/// `sample,row,col` lines, one per dropped cell, 1-based rows and columns.
pub fn dropped_cells_csv<'a>(masks: impl IntoIterator<Item = (usize, Option<&'a Pattern>)>) -> String {
    let mut out = String::from("sample,row,col\n");
    for (sample, pattern) in masks {
        for (r, c) in pattern.map(Pattern::dropped).unwrap_or_default() {
            let _ = writeln!(out, "{sample},{},{}", r + 1, c + 1);
        }
    }
    out
}

impl FromStr for DropConfig {
    type Err = Error;

    /// `bars,n_max,gamma,mode`, e.g. `5,13,0.5,elastic`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [bars, n_max, gamma, mode] = parts[..] else {
            return Err(Error::InvalidConfig(format!("expected `bars,n_max,gamma,mode`, got `{s}`")));
        };
        let bad = |what: &str, v: &str| Error::InvalidConfig(format!("bad {what} `{v}`"));
        let cfg = Self {
            bars: bars.parse().map_err(|_| bad("bars", bars))?,
            n_max: n_max.parse().map_err(|_| bad("n_max", n_max))?,
            gamma: gamma.parse().map_err(|_| bad("gamma", gamma))?,
            mesh_mode: mode.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
