//! Text-block recognition: projection segmentation with per-character
//! averaging, and sliding-window patch accumulation.

use std::fmt::Write as _;

use crate::ifn::to_input;
use crate::imagecore::{preprocess_char, GrayImage};
use crate::tensornet::{Network, Real};
use crate::trainer::argmax;
use crate::workbench::tight_crop;
use crate::{Error, Result};

/// Default window and stride of the segmentation-free recognizer.
pub const PATCH_SIZE: usize = 64;
pub const PATCH_STRIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} values for a {width}x{height} binary image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Foreground 255, background 0.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(self.width, self.height, self.data.iter().map(|&v| if v { 255 } else { 0 }).collect())
            .expect("same dimensions")
    }
}

/// Threshold `t` maximizing between-class variance of `{≤ t}` and `{> t}`;
/// `None` for a constant image.
pub fn otsu_threshold(img: &GrayImage) -> Option<u8> {
    let mut hist = [0u64; 256];
    img.data().iter().for_each(|&p| hist[p as usize] += 1);
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(u8, f64)> = None;
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

/// Stroke pixels (above the Otsu threshold); a constant image is all background.
pub fn binarize(img: &GrayImage) -> BinaryImage {
    let data = match otsu_threshold(img) {
        Some(t) => img.data().iter().map(|&p| p > t).collect(),
        None => vec![false; img.data().len()],
    };
    BinaryImage::new(img.width(), img.height(), data).expect("same dimensions")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Morph {
    Dilate,
    Erode,
}

/// 3×3 square structuring element; neighbours outside the image are ignored.
pub fn morph(binary: &BinaryImage, op: Morph) -> BinaryImage {
    let (w, h) = (binary.width, binary.height);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut hood = (y.saturating_sub(1)..(y + 2).min(h))
                .flat_map(|yy| (x.saturating_sub(1)..(x + 2).min(w)).map(move |xx| (xx, yy)));
            data.push(match op {
                Morph::Dilate => hood.any(|(xx, yy)| binary.get(xx, yy)),
                Morph::Erode => hood.all(|(xx, yy)| binary.get(xx, yy)),
            });
        }
    }
    BinaryImage { width: w, height: h, data }
}

/// Erosion of the dilation.
pub fn close(binary: &BinaryImage) -> BinaryImage {
    morph(&morph(binary, Morph::Dilate), Morph::Erode)
}

/// Half-open character bounds within a text line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharBox {
    pub line: usize,
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl CharBox {
    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }
}

/// Maximal runs of indices whose count exceeds `floor`.
fn runs(counts: &[usize], floor: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &c) in counts.iter().enumerate() {
        match (c > floor, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, counts.len()));
    }
    out
}

/// Lines from the row projection, characters from each line's column
/// projection; runs need more than `floor` foreground pixels. Each box is
/// tightened vertically to its own pixels.
pub fn segment_block_with_floor(binary: &BinaryImage, floor: usize) -> Vec<CharBox> {
    let (w, h) = (binary.width, binary.height);
    let row_counts: Vec<usize> = (0..h).map(|y| (0..w).filter(|&x| binary.get(x, y)).count()).collect();
    let mut boxes = Vec::new();
    for (line, (top, bottom)) in runs(&row_counts, floor).into_iter().enumerate() {
        let col_counts: Vec<usize> = (0..w)
            .map(|x| (top..bottom).filter(|&y| binary.get(x, y)).count())
            .collect();
        for (left, right) in runs(&col_counts, floor) {
            let ink_rows: Vec<usize> = (top..bottom)
                .filter(|&y| (left..right).any(|x| binary.get(x, y)))
                .collect();
            boxes.push(CharBox {
                line,
                left,
                top: ink_rows[0],
                right,
                bottom: ink_rows[ink_rows.len() - 1] + 1,
            });
        }
    }
    boxes
}

pub fn segment_block(binary: &BinaryImage) -> Vec<CharBox> {
    segment_block_with_floor(binary, 0)
}

/// `line,idx,left,top,right,bottom`, with `idx` counted within each line.
pub fn boxes_csv(boxes: &[CharBox]) -> String {
    let mut out = String::from("line,idx,left,top,right,bottom\n");
    let mut idx = 0;
    for (i, b) in boxes.iter().enumerate() {
        if i > 0 && boxes[i - 1].line != b.line {
            idx = 0;
        }
        let _ = writeln!(out, "{},{idx},{},{},{},{}", b.line, b.left, b.top, b.right, b.bottom);
        idx += 1;
    }
    out
}

/// Top-left corners `(x, y)` of every fully contained window, row-major.
pub fn patch_origins(width: usize, height: usize, size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 || size > width || size > height {
        return Err(Error::InvalidConfig(format!(
            "window {size} with stride {stride} does not fit a {width}x{height} image"
        )));
    }
    let xs = (width - size) / stride + 1;
    let ys = (height - size) / stride + 1;
    Ok((0..ys).flat_map(|j| (0..xs).map(move |i| (i * stride, j * stride))).collect())
}

pub fn sliding_patches(img: &GrayImage, size: usize, stride: usize) -> Result<Vec<GrayImage>> {
    patch_origins(img.width(), img.height(), size, stride)?
        .into_iter()
        .map(|(x, y)| img.crop(x, y, x + size, y + size))
        .collect()
}

/// The `size × size` window centred in the image.
pub fn center_patch(img: &GrayImage, size: usize) -> Result<GrayImage> {
    if size == 0 || size > img.width() || size > img.height() {
        return Err(Error::InvalidConfig(format!(
            "window {size} does not fit a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let (x, y) = ((img.width() - size) / 2, (img.height() - size) / 2);
    img.crop(x, y, x + size, y + size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPrediction {
    pub class: usize,
    pub accumulated: Vec<f64>,
    /// One confidence vector per character or patch.
    pub units: Vec<Vec<f64>>,
}

/// Accumulates unit confidences by mean (`average`) or sum.
pub fn accumulate(units: Vec<Vec<f64>>, average: bool) -> Result<BlockPrediction> {
    let Some(first) = units.first() else {
        return Err(Error::Empty("no units to accumulate".into()));
    };
    let mut acc = vec![0.0; first.len()];
    for u in &units {
        acc.iter_mut().zip(u).for_each(|(a, &v)| *a += v);
    }
    if average {
        let n = units.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(BlockPrediction {
        class: argmax(&acc),
        accumulated: acc,
        units,
    })
}

/// Grayscale character crops of a block, normalized to 64×64, in reading order.
pub fn segment_characters(img: &GrayImage) -> Result<Vec<GrayImage>> {
    let boxes = segment_block(&close(&binarize(img)));
    boxes
        .iter()
        .map(|b| {
            let l = b.left.saturating_sub(1);
            let t = b.top.saturating_sub(1);
            let r = (b.right + 1).min(img.width());
            let bt = (b.bottom + 1).min(img.height());
            let crop = img.crop(l, t, r, bt)?;
            preprocess_char(&tight_crop(&crop).unwrap_or(crop))
        })
        .collect()
}

fn confidences<T: Real>(net: &Network<T>, img: &GrayImage) -> Result<Vec<f64>> {
    Ok(net
        .confidences(&to_input(img, net.input_shape())?)?
        .into_iter()
        .map(|v| v.as_f64())
        .collect())
}

/// Binarize, close, segment, classify each character, average.
pub fn classify_block_segmented<T: Real>(img: &GrayImage, net: &Network<T>) -> Result<BlockPrediction> {
    let chars = segment_characters(img)?;
    if chars.is_empty() {
        return Err(Error::Empty("no characters found in block".into()));
    }
    let units = chars.iter().map(|c| confidences(net, c)).collect::<Result<Vec<_>>>()?;
    accumulate(units, true)
}

/// Classify each sliding window, sum.
pub fn classify_block_free<T: Real>(
    img: &GrayImage,
    net: &Network<T>,
    size: usize,
    stride: usize,
) -> Result<BlockPrediction> {
    let units = sliding_patches(img, size, stride)?
        .iter()
        .map(|p| confidences(net, p))
        .collect::<Result<Vec<_>>>()?;
    accumulate(units, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn bin(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> bool) -> BinaryImage {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        BinaryImage::new(w, h, data).unwrap()
    }

    fn otsu_oracle(img: &GrayImage) -> Option<u8> {
        let px: Vec<f64> = img.data().iter().map(|&p| p as f64).collect();
        let mut best: Option<(u8, f64)> = None;
        for t in 0..=255u32 {
            let (a, b): (Vec<f64>, Vec<f64>) = px.iter().partition(|&&p| p <= t as f64);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = a.len() as f64 * b.len() as f64 * (mean(&a) - mean(&b)).powi(2);
            if best.is_none_or(|(_, bv)| var > bv * (1.0 + 1e-12)) {
                best = Some((t as u8, var));
            }
        }
        best.map(|(t, _)| t)
    }

    #[test]
    fn otsu_two_modes_and_constant() {
        let img = GrayImage::from_fn(10, 10, |x, _| if x < 3 { 200 } else { 10 }).unwrap();
        let b = binarize(&img);
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(b.get(x, y), x < 3);
            }
        }
        assert_eq!(binarize(&GrayImage::filled(5, 5, 77).unwrap()).count(), 0);
    }

    #[test]
    fn single_pixel_dilates_to_square() {
        let b = bin(7, 7, |x, y| x == 3 && y == 3);
        let d = morph(&b, Morph::Dilate);
        assert_eq!(d.count(), 9);
        assert!((2..5).all(|y| (2..5).all(|x| d.get(x, y))));
        assert_eq!(morph(&d, Morph::Erode), b);
    }

    #[test]
    fn single_glyph_box_is_tight() {
        let b = bin(20, 12, |x, y| (5..9).contains(&x) && (3..10).contains(&y) && (x + y) % 3 != 0);
        assert_eq!(
            segment_block(&b),
            vec![CharBox {
                line: 0,
                left: 5,
                top: 3,
                right: 9,
                bottom: 10
            }]
        );
        assert!(segment_block(&bin(5, 5, |_, _| false)).is_empty());
    }

    #[test]
    fn gap_columns_split_boxes() {
        let b = bin(30, 10, |x, y| (2..8).contains(&y) && ((3..11).contains(&x) || (14..25).contains(&x)));
        let boxes = segment_block(&b);
        assert_eq!(boxes.len(), 2);
        assert_eq!((boxes[0].left, boxes[0].right), (3, 11));
        assert_eq!((boxes[1].left, boxes[1].right), (14, 25));
        assert_eq!(boxes_csv(&boxes), "line,idx,left,top,right,bottom\n0,0,3,2,11,8\n0,1,14,2,25,8\n");
    }

    #[test]
    fn patch_grids() {
        assert_eq!(patch_origins(320, 320, 128, 64).unwrap().len(), 16);
        let img = GrayImage::from_fn(10, 10, |x, y| (x * 10 + y) as u8).unwrap();
        assert_eq!(sliding_patches(&img, 10, 3).unwrap(), vec![img.clone()]);
        let o = patch_origins(10, 10, 4, 3).unwrap();
        let expect: Vec<(usize, usize)> = [0, 3, 6].iter().flat_map(|&y| [0, 3, 6].map(|x| (x, y))).collect();
        assert_eq!(o, expect);
        assert!(sliding_patches(&img, 11, 1).is_err());
        assert_eq!(center_patch(&img, 4).unwrap(), img.crop(3, 3, 7, 7).unwrap());
    }

    #[test]
    fn accumulation_laws() {
        let v = vec![0.1, 0.7, 0.2];
        for n in 1..6 {
            let p = accumulate(vec![v.clone(); n], false).unwrap();
            assert_eq!(p.class, 1);
        }
        let mut units = vec![vec![0.25; 4]; 5];
        units.push(vec![0.05, 0.05, 0.85, 0.05]);
        assert_eq!(accumulate(units.clone(), false).unwrap().class, 2);
        let mean = accumulate(units, true).unwrap();
        assert!((mean.accumulated.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(accumulate(Vec::new(), true).is_err());
    }

    proptest! {
        #[test]
        fn otsu_matches_scan(seed in any::<u64>(), lo in 0u8..100, hi in 120u8..=255) {
            let mut rng = stream(seed, 0);
            let img = GrayImage::from_fn(16, 12, |_, _| {
                let base = if rng.random_bool(0.3) { hi } else { lo };
                base.saturating_add(rng.random_range(0..20))
            }).unwrap();
            prop_assert_eq!(otsu_threshold(&img), otsu_oracle(&img));
        }

        #[test]
        fn morphology_matches_neighbourhood_oracle(seed in any::<u64>(), w in 1usize..15, h in 1usize..15) {
            let mut rng = stream(seed, 1);
            let b = bin(w, h, |_, _| rng.random_bool(0.4));
            let hood = |x: usize, y: usize| {
                let mut v = Vec::new();
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        v.push(b.get(xx, yy));
                    }
                }
                v
            };
            let d = morph(&b, Morph::Dilate);
            let e = morph(&b, Morph::Erode);
            for y in 0..h {
                for x in 0..w {
                    prop_assert_eq!(d.get(x, y), hood(x, y).iter().any(|&v| v));
                    prop_assert_eq!(e.get(x, y), hood(x, y).iter().all(|&v| v));
                }
            }
            let c = close(&b);
            prop_assert!(b.data().iter().zip(c.data()).all(|(&o, &n)| !o || n));
        }

        #[test]
        fn patch_count_formula(w in 1usize..80, h in 1usize..80, size in 1usize..40, stride in 1usize..20) {
            prop_assume!(size <= w && size <= h);
            let n = sliding_patches(&GrayImage::filled(w, h, 0).unwrap(), size, stride).unwrap().len();
            prop_assert_eq!(n, ((w - size) / stride + 1) * ((h - size) / stride + 1));
        }
    }
}
