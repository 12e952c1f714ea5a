//! Fixed and elastic L×L mesh division.
//!
//! Breakpoints are 1-based inclusive right edges, which is the same number as
//! a 0-based exclusive end: bar `i` of an axis covers `[u[i-1], u[i])` with
//! `u[-1] = 0`.

use std::fmt::Write as _;
use std::ops::Range;

use crate::imagecore::{column_profile, row_profile, GrayImage, Profile};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeshMode {
    Elastic,
    Fixed,
}

impl MeshMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MeshMode::Elastic => "elastic",
            MeshMode::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for MeshMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elastic" => Ok(MeshMode::Elastic),
            "fixed" => Ok(MeshMode::Fixed),
            other => Err(Error::InvalidConfig(format!("mesh mode must be elastic|fixed, got `{other}`"))),
        }
    }
}

/// Per-axis breakpoints partitioning an image into L×L regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshGrid {
    bars: usize,
    u: Vec<usize>,
    v: Vec<usize>,
}

fn check_breakpoints(points: &[usize], bars: usize, len: usize, axis: &str) -> Result<()> {
    let increasing = points.windows(2).all(|w| w[0] < w[1]);
    if points.len() != bars || !increasing || points.first() == Some(&0) || points.last() != Some(&len) {
        return Err(Error::InvalidConfig(format!(
            "{axis} breakpoints {points:?} do not partition length {len} into {bars} bars"
        )));
    }
    Ok(())
}

impl MeshGrid {
    pub fn new(u: Vec<usize>, v: Vec<usize>, width: usize, height: usize) -> Result<Self> {
        let bars = u.len();
        if bars == 0 {
            return Err(Error::InvalidConfig("mesh needs at least one bar".into()));
        }
        check_breakpoints(&u, bars, width, "x")?;
        check_breakpoints(&v, bars, height, "y")?;
        Ok(Self { bars, u, v })
    }

    /// Bars per axis (L).
    pub fn bars(&self) -> usize {
        self.bars
    }

    pub fn u(&self) -> &[usize] {
        &self.u
    }

    pub fn v(&self) -> &[usize] {
        &self.v
    }

    pub fn width(&self) -> usize {
        self.u[self.bars - 1]
    }

    pub fn height(&self) -> usize {
        self.v[self.bars - 1]
    }

    /// Pixel columns of vertical bar `i`.
    pub fn columns(&self, i: usize) -> Range<usize> {
        (if i == 0 { 0 } else { self.u[i - 1] })..self.u[i]
    }

    /// Pixel rows of horizontal bar `j`.
    pub fn rows(&self, j: usize) -> Range<usize> {
        (if j == 0 { 0 } else { self.v[j - 1] })..self.v[j]
    }

    /// `(row, col)` of the region containing pixel `(x, y)`.
    pub fn cell_of(&self, x: usize, y: usize) -> (usize, usize) {
        let col = self.u.partition_point(|&e| e <= x);
        let row = self.v.partition_point(|&e| e <= y);
        (row, col)
    }

    pub fn cell_area(&self, row: usize, col: usize) -> usize {
        self.rows(row).len() * self.columns(col).len()
    }

    /// `axis,index,position` lines, index 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,index,position\n");
        for (axis, points) in [("x", &self.u), ("y", &self.v)] {
            for (i, p) in points.iter().enumerate() {
                let _ = writeln!(out, "{axis},{},{p}", i + 1);
            }
        }
        out
    }
}

/// Smallest `x` (1-based) whose cumulative mass reaches `i/L` of the total,
/// bumped to keep the breakpoints strictly increasing.
///
/// Returns [`Error::Degenerate`] for an all-zero profile.
pub fn elastic_breakpoints(profile: &Profile, bars: usize) -> Result<Vec<usize>> {
    let len = profile.len();
    if bars == 0 || bars > len {
        return Err(Error::InvalidConfig(format!("{bars} bars over a profile of length {len}")));
    }
    let total = profile.total() as u128;
    if total == 0 {
        return Err(Error::Degenerate("all-zero projection profile".into()));
    }
    let l = bars as u128;
    let mut points = Vec::with_capacity(bars);
    let mut cumulative = 0u128;
    let mut x = 0usize;
    for i in 1..=bars {
        // cumulative(x) * L >= i * total, in exact integers
        while (cumulative * l) < i as u128 * total {
            cumulative += profile.values[x] as u128;
            x += 1;
        }
        let prev = points.last().copied().unwrap_or(0);
        let latest = len - (bars - i);
        points.push(x.max(prev + 1).min(latest));
    }
    points[bars - 1] = len;
    Ok(points)
}

/// Breakpoints at `round(i * len / L)`.
fn fixed_breakpoints(len: usize, bars: usize) -> Vec<usize> {
    (1..=bars).map(|i| (2 * i * len + bars) / (2 * bars)).collect()
}

/// Equal-area division.
pub fn fixed_mesh(width: usize, height: usize, bars: usize) -> Result<MeshGrid> {
    if bars == 0 || bars > width.min(height) {
        return Err(Error::InvalidConfig(format!(
            "L = {bars} outside 1..={} for a {width}x{height} image",
            width.min(height)
        )));
    }
    MeshGrid::new(fixed_breakpoints(width, bars), fixed_breakpoints(height, bars), width, height)
}

/// Intensity-equalizing division; all-zero images fall back to [`fixed_mesh`].
pub fn elastic_mesh(img: &GrayImage, bars: usize) -> Result<MeshGrid> {
    if bars == 0 || bars > img.width().min(img.height()) {
        return fixed_mesh(img.width(), img.height(), bars);
    }
    match (
        elastic_breakpoints(&column_profile(img), bars),
        elastic_breakpoints(&row_profile(img), bars),
    ) {
        (Ok(u), Ok(v)) => MeshGrid::new(u, v, img.width(), img.height()),
        (Err(Error::Degenerate(_)), _) | (_, Err(Error::Degenerate(_))) => {
            fixed_mesh(img.width(), img.height(), bars)
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

pub fn mesh(img: &GrayImage, bars: usize, mode: MeshMode) -> Result<MeshGrid> {
    match mode {
        MeshMode::Elastic => elastic_mesh(img, bars),
        MeshMode::Fixed => fixed_mesh(img.width(), img.height(), bars),
    }
}
