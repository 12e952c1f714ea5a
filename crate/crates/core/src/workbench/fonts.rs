//! Procedural glyph skeletons and style-parameterized rendering.

use rand::Rng;

use crate::imagecore::GrayImage;
use crate::rng::stream;
use crate::{Error, Result};

/// Glyph box side in pixels before the font's scale factor.
pub const GLYPH_BOX: f64 = 16.0;

/// Rendering style of one synthetic font.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFontSpec {
    pub id: usize,
    /// Nominal stroke width in pixels.
    pub stroke_width: f64,
    /// Thinning of horizontal strokes relative to vertical ones, in `[0, 1)`.
    pub contrast: f64,
    /// Horizontal shear per unit height.
    pub slant: f64,
    pub serif: bool,
    /// Glyph box multiplier.
    pub scale: f64,
    /// Per-sample skeleton displacement, in glyph-box units.
    pub jitter: f64,
}

const TABLE: [(f64, f64, f64, bool, f64); 5] = [
    (1.8, 0.0, 0.0, false, 1.0),
    (3.0, 0.0, 0.0, false, 1.0),
    (2.2, 0.0, 0.15, false, 1.05),
    (2.2, 0.0, 0.0, true, 0.95),
    (2.6, 0.55, -0.1, false, 1.0),
];

impl SyntheticFontSpec {
    /// Font `id`: a fixed table for the first five, seeded draws beyond.
    pub fn for_id(id: usize, jitter: f64) -> Self {
        let (stroke_width, contrast, slant, serif, scale) = match TABLE.get(id) {
            Some(&row) => row,
            None => {
                let mut rng = stream(0x5eed_f0e7, id as u64);
                (
                    rng.random_range(1.6..3.2),
                    rng.random_range(0.0..0.6),
                    rng.random_range(-0.15..0.15),
                    rng.random_bool(0.5),
                    rng.random_range(0.9..1.1),
                )
            }
        };
        Self {
            id,
            stroke_width,
            contrast,
            slant,
            serif,
            scale,
            jitter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Err(Error::InvalidConfig(format!("font {}: {name} = {v} is not renderable", self.id)));
        if !(0.5..=6.0).contains(&self.stroke_width) {
            return bad("stroke_width", self.stroke_width);
        }
        if !(0.0..1.0).contains(&self.contrast) {
            return bad("contrast", self.contrast);
        }
        if !(-0.5..=0.5).contains(&self.slant) {
            return bad("slant", self.slant);
        }
        if !(0.5..=2.0).contains(&self.scale) {
            return bad("scale", self.scale);
        }
        if !(0.0..0.2).contains(&self.jitter) {
            return bad("jitter", self.jitter);
        }
        Ok(())
    }
}

/// Polylines in the unit box, `y` pointing down.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub strokes: Vec<Vec<(f64, f64)>>,
    /// Height of the full-width bar, the shear pivot.
    pub baseline: f64,
}

impl Skeleton {
    /// Character `id`: a full-width bar, a full-height stem and one to four
    /// free strokes.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let ya = rng.random_range(0.2..0.8);
        let xa = rng.random_range(0.3..0.7);
        let mut strokes = vec![vec![(0.0, ya), (1.0, ya)], vec![(xa, 0.0), (xa, 1.0)]];
        for _ in 0..rng.random_range(1..=4) {
            let points = rng.random_range(2..=3);
            strokes.push(
                (0..points)
                    .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.1..0.9)))
                    .collect(),
            );
        }
        Self { strokes, baseline: ya }
    }
}

struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
}

impl Segment {
    fn distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.a.0 + t * dx, self.a.1 + t * dy);
        ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
    }
}

const SERIF_LENGTH: f64 = 0.2;

/// Renders `skeleton` in `font`, jittering each point with `rng`, and returns
/// the tight crop around the ink (background 0).
pub fn render_glyph<R: Rng + ?Sized>(skeleton: &Skeleton, font: &SyntheticFontSpec, rng: &mut R) -> Result<GrayImage> {
    font.validate()?;
    let side = GLYPH_BOX * font.scale;
    let w = font.stroke_width;
    let to_px = |(x, y): (f64, f64)| {
        let sheared = x + font.slant * (skeleton.baseline - y);
        (sheared * side, y * side)
    };
    let mut segments = Vec::new();
    for stroke in &skeleton.strokes {
        let pts: Vec<(f64, f64)> = stroke
            .iter()
            .map(|&(x, y)| {
                let jx = rng.random_range(-1.0..=1.0) * font.jitter;
                let jy = rng.random_range(-1.0..=1.0) * font.jitter;
                to_px((x + jx, y + jy))
            })
            .collect();
        for pair in pts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let horizontal = if len == 0.0 { 0.0 } else { ((b.0 - a.0) / len).abs() };
            segments.push(Segment {
                a,
                b,
                half_width: w / 2.0 * (1.0 - font.contrast * horizontal),
            });
            if font.serif && len > 0.0 {
                let (nx, ny) = (-(b.1 - a.1) / len, (b.0 - a.0) / len);
                let h = SERIF_LENGTH * side / 2.0;
                for end in [a, b] {
                    segments.push(Segment {
                        a: (end.0 - nx * h, end.1 - ny * h),
                        b: (end.0 + nx * h, end.1 + ny * h),
                        half_width: w * 0.3,
                    });
                }
            }
        }
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for s in &segments {
        for p in [s.a, s.b] {
            x0 = x0.min(p.0 - s.half_width - 1.0);
            y0 = y0.min(p.1 - s.half_width - 1.0);
            x1 = x1.max(p.0 + s.half_width + 1.0);
            y1 = y1.max(p.1 + s.half_width + 1.0);
        }
    }
    let (ox, oy) = (x0.floor(), y0.floor());
    let width = (x1 - ox).ceil() as usize;
    let height = (y1 - oy).ceil() as usize;
    let canvas = GrayImage::from_fn(width, height, |x, y| {
        let p = (ox + x as f64 + 0.5, oy + y as f64 + 0.5);
        let cover = segments
            .iter()
            .map(|s| (s.half_width + 0.5 - s.distance(p)).clamp(0.0, 1.0))
            .fold(0.0, f64::max);
        (cover * 255.0).round() as u8
    })?;
    tight_crop(&canvas).ok_or_else(|| Error::Degenerate(format!("font {} rendered no ink", font.id)))
}

/// Half-open `(left, top, right, bottom)` bounds of the non-zero pixels.
pub fn ink_bounds(img: &GrayImage) -> Option<(usize, usize, usize, usize)> {
    let (mut l, mut t, mut r, mut b) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) > 0 {
                l = l.min(x);
                t = t.min(y);
                r = r.max(x + 1);
                b = b.max(y + 1);
            }
        }
    }
    (r > 0).then_some((l, t, r, b))
}

pub fn tight_crop(img: &GrayImage) -> Option<GrayImage> {
    let (l, t, r, b) = ink_bounds(img)?;
    img.crop(l, t, r, b).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::column_profile;

    #[test]
    fn table_fonts_are_distinct_and_valid() {
        let fonts: Vec<_> = (0..12).map(|i| SyntheticFontSpec::for_id(i, 0.04)).collect();
        for (i, a) in fonts.iter().enumerate() {
            a.validate().unwrap();
            for b in &fonts[i + 1..] {
                let key = |f: &SyntheticFontSpec| (f.stroke_width, f.contrast, f.slant, f.serif, f.scale);
                assert_ne!(key(a), key(b));
            }
        }
    }

    #[test]
    fn unrenderable_parameter_is_named() {
        let mut f = SyntheticFontSpec::for_id(0, 0.04);
        f.stroke_width = 40.0;
        let sk = Skeleton::random(&mut stream(1, 0));
        let err = render_glyph(&sk, &f, &mut stream(2, 0)).unwrap_err().to_string();
        assert!(err.contains("stroke_width"), "{err}");
    }

    #[test]
    fn glyph_columns_are_connected() {
        for font in 0..5 {
            let f = SyntheticFontSpec::for_id(font, 0.04);
            for c in 0..20 {
                let sk = Skeleton::random(&mut stream(c, 0));
                let g = render_glyph(&sk, &f, &mut stream(c, 1)).unwrap();
                assert!(g.width() <= 24 && g.height() <= 24, "{}x{}", g.width(), g.height());
                assert!(column_profile(&g).values.iter().all(|&v| v > 0));
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let sk = Skeleton::random(&mut stream(9, 0));
        let f = SyntheticFontSpec::for_id(3, 0.04);
        assert_eq!(
            render_glyph(&sk, &f, &mut stream(4, 4)).unwrap(),
            render_glyph(&sk, &f, &mut stream(4, 4)).unwrap()
        );
    }
}
