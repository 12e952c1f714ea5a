//! Declarative layer graphs and their text form.
//!
//! One layer per line, `type key=value ...`, preceded by an `input` line:
//!
//! ```text
//! input height=64 width=64 channels=1
//! conv name=conv1 out=96 kernel=7 stride=1 pad=0
//! relu
//! cccp name=cccp1_1 out=96
//! pool kernel=3 stride=2 pad=0
//! inception name=inception widths=128,128,128,128,92
//! dropout rate=0.5
//! gap
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::tensornet::{conv_output_len, Padding, PoolParams, Shape};
use crate::{Error, Result};

/// Channel allocation of the five inception branches:
/// 1×1 | 3×3→2×2→2×2 | 2×2→2×2 | 3×3→3×3 | pool→1×1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InceptionWidths(pub [usize; 5]);

impl InceptionWidths {
    /// Default allocation for the 604-channel module.
    pub const TABLE: InceptionWidths = InceptionWidths([128, 128, 128, 128, 92]);

    /// Validated widths whose sum must equal `target`.
    pub fn new(widths: [usize; 5], target: usize) -> Result<Self> {
        let sum: usize = widths.iter().sum();
        if sum != target {
            return Err(Error::InvalidConfig(format!(
                "inception widths {widths:?} sum to {sum}, expected {target}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("inception widths {widths:?} contain an empty branch")));
        }
        Ok(Self(widths))
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: Padding,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// 1×1 convolution mixing channels at each position.
    Cccp { name: String, out: usize },
    Relu,
    Pool(PoolParams),
    Inception { name: String, widths: InceptionWidths },
    Dropout { rate: f64 },
    Gap,
}

impl LayerSpec {
    pub fn conv(name: &str, out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv(ConvSpec {
            name: name.into(),
            out,
            kernel,
            stride,
            pad: Padding::uniform(pad),
        })
    }

    pub fn cccp(name: &str, out: usize) -> Self {
        LayerSpec::Cccp { name: name.into(), out }
    }

    pub fn pool(kernel: usize, stride: usize) -> Self {
        LayerSpec::Pool(PoolParams { kernel, stride, pad: 0 })
    }

    /// The same layer as a plain convolution, when it is one.
    pub fn as_conv(&self) -> Option<ConvSpec> {
        match self {
            LayerSpec::Conv(c) => Some(c.clone()),
            LayerSpec::Cccp { name, out } => Some(ConvSpec {
                name: name.clone(),
                out: *out,
                kernel: 1,
                stride: 1,
                pad: Padding::default(),
            }),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            LayerSpec::Conv(_) | LayerSpec::Cccp { .. } => {
                let c = self.as_conv().expect("conv layer");
                Ok(Shape::new(
                    conv_output_len(input.h, c.kernel, c.stride, c.pad.top, c.pad.bottom)?,
                    conv_output_len(input.w, c.kernel, c.stride, c.pad.left, c.pad.right)?,
                    c.out,
                ))
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input),
            LayerSpec::Pool(p) => p.output_shape(input),
            LayerSpec::Inception { name, widths } => {
                let mut channels = 0;
                for branch in inception_branches(name, widths) {
                    let mut s = input;
                    for layer in &branch {
                        s = layer.output_shape(s)?;
                    }
                    if (s.h, s.w) != (input.h, input.w) {
                        return Err(Error::Shape(format!(
                            "inception branch changes spatial size {input} -> {s}"
                        )));
                    }
                    channels += s.c;
                }
                Ok(Shape::new(input.h, input.w, channels))
            }
            LayerSpec::Gap => Ok(Shape::new(1, 1, input.c)),
        }
    }
}

/// Expands an inception module into its five branches. Every convolution is
/// followed by ReLU; even kernels pad one extra row/column at the bottom/right.
pub fn inception_branches(name: &str, widths: &InceptionWidths) -> Vec<Vec<LayerSpec>> {
    let [a, b, c, d, e] = widths.0;
    let conv = |suffix: &str, out: usize, kernel: usize| {
        LayerSpec::Conv(ConvSpec {
            name: format!("{name}.{suffix}"),
            out,
            kernel,
            stride: 1,
            pad: Padding::same(kernel),
        })
    };
    vec![
        vec![conv("1x1", a, 1), LayerSpec::Relu],
        vec![
            conv("3x3_2x2_2x2.0", b, 3),
            LayerSpec::Relu,
            conv("3x3_2x2_2x2.1", b, 2),
            LayerSpec::Relu,
            conv("3x3_2x2_2x2.2", b, 2),
            LayerSpec::Relu,
        ],
        vec![
            conv("2x2_2x2.0", c, 2),
            LayerSpec::Relu,
            conv("2x2_2x2.1", c, 2),
            LayerSpec::Relu,
        ],
        vec![
            conv("3x3_3x3.0", d, 3),
            LayerSpec::Relu,
            conv("3x3_3x3.1", d, 3),
            LayerSpec::Relu,
        ],
        vec![
            LayerSpec::Pool(PoolParams { kernel: 3, stride: 1, pad: 1 }),
            conv("pool_proj", e, 1),
            LayerSpec::Relu,
        ],
    ]
}

/// Input shape plus an ordered layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

/// One row of the human-readable shape table (ReLU rows are omitted).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeRow {
    pub kind: String,
    pub settings: String,
    pub output: Option<Shape>,
}

impl NetworkSpec {
    /// Output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut s = self.input;
        self.layers
            .iter()
            .map(|l| {
                s = l.output_shape(s)?;
                Ok(s)
            })
            .collect()
    }

    /// Validates the graph and returns the class count K (final 1×1×K).
    pub fn validate(&self) -> Result<usize> {
        let out = self.shapes()?.last().copied().unwrap_or(self.input);
        if out.h != 1 || out.w != 1 {
            return Err(Error::Shape(format!("network ends in {out}, expected 1 × 1 × K")));
        }
        Ok(out.c)
    }

    pub fn classes(&self) -> Result<usize> {
        self.validate()
    }

    /// Number of trainable scalars (weights and biases).
    pub fn param_count(&self) -> Result<usize> {
        fn count(layers: &[LayerSpec], mut s: Shape) -> Result<(usize, Shape)> {
            let mut n = 0;
            for layer in layers {
                if let LayerSpec::Inception { name, widths } = layer {
                    for branch in inception_branches(name, widths) {
                        n += count(&branch, s)?.0;
                    }
                } else if let Some(c) = layer.as_conv() {
                    n += c.kernel * c.kernel * s.c * c.out + c.out;
                }
                s = layer.output_shape(s)?;
            }
            Ok((n, s))
        }
        Ok(count(&self.layers, self.input)?.0)
    }

    /// Replaces the rate of every dropout layer.
    pub fn with_dropout_rate(&self, rate: f64) -> NetworkSpec {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dropout { .. } => LayerSpec::Dropout { rate },
                other => other.clone(),
            })
            .collect();
        NetworkSpec { input: self.input, layers }
    }

    /// Table of `Type | Settings | Output size` rows.
    pub fn shape_table(&self) -> Result<Vec<ShapeRow>> {
        let shapes = self.shapes()?;
        let mut rows = vec![ShapeRow {
            kind: "Input".into(),
            settings: String::new(),
            output: Some(self.input),
        }];
        for (layer, &shape) in self.layers.iter().zip(&shapes) {
            let (kind, settings, output) = match layer {
                LayerSpec::Relu => continue,
                LayerSpec::Conv(c) => {
                    let mut s = format!("{} × {} × {}", c.out, c.kernel, c.kernel);
                    if c.stride != 1 {
                        let _ = write!(s, ", st. {}", c.stride);
                    }
                    if c.pad != Padding::default() {
                        let _ = write!(s, ", pad {}", pad_text(&c.pad));
                    }
                    (c.name.clone(), s, Some(shape))
                }
                LayerSpec::Cccp { name, out } => (name.clone(), format!("{out} × 1 × 1"), Some(shape)),
                LayerSpec::Pool(p) => {
                    let mut s = format!("{} × {}, st. {}", p.kernel, p.kernel, p.stride);
                    if p.pad != 0 {
                        let _ = write!(s, ", pad {}", p.pad);
                    }
                    ("max-pooling".into(), s, Some(shape))
                }
                LayerSpec::Inception { name, widths } => (
                    name.clone(),
                    format!("branches {}", join(&widths.0)),
                    Some(shape),
                ),
                LayerSpec::Dropout { rate } => ("dropout".into(), format!("{rate}"), None),
                LayerSpec::Gap => ("global-ave-pooling".into(), String::new(), Some(shape)),
            };
            rows.push(ShapeRow { kind, settings, output });
        }
        // the GAP row shows the pooled window like the printed tables
        if let (Some(LayerSpec::Gap), Some(prev)) = (self.layers.last(), shapes.len().checked_sub(2).map(|i| shapes[i])) {
            if let Some(last) = rows.last_mut() {
                last.settings = format!("{} × {}", prev.h, prev.w);
            }
        }
        Ok(rows)
    }

    /// Renders [`Self::shape_table`] as aligned text.
    pub fn describe(&self) -> Result<String> {
        let rows = self.shape_table()?;
        let kw = rows.iter().map(|r| r.kind.chars().count()).max().unwrap_or(4).max(4);
        let sw = rows.iter().map(|r| r.settings.chars().count()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<kw$}  {:<sw$}  Output size", "Type", "Settings");
        for r in rows {
            let size = r.output.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{:<kw$}  {:<sw$}  {}", r.kind, r.settings, size);
        }
        Ok(out)
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "input height={} width={} channels={}\n",
            self.input.h, self.input.w, self.input.c
        );
        for layer in &self.layers {
            let line = match layer {
                LayerSpec::Conv(c) => format!(
                    "conv name={} out={} kernel={} stride={} pad={}",
                    c.name,
                    c.out,
                    c.kernel,
                    c.stride,
                    pad_text(&c.pad)
                ),
                LayerSpec::Cccp { name, out } => format!("cccp name={name} out={out}"),
                LayerSpec::Relu => "relu".into(),
                LayerSpec::Pool(p) => format!("pool kernel={} stride={} pad={}", p.kernel, p.stride, p.pad),
                LayerSpec::Inception { name, widths } => format!("inception name={name} widths={}", join(&widths.0)),
                LayerSpec::Dropout { rate } => format!("dropout rate={rate}"),
                LayerSpec::Gap => "gap".into(),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Parses the text form; errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<NetworkSpec> {
        const SRC: &str = "network spec";
        let mut input = None;
        let mut layers = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().expect("non-empty line");
            let mut fields = Fields::new(SRC, lineno);
            for kv in parts {
                fields.insert(kv)?;
            }
            let layer = match kind {
                "input" => {
                    if input.is_some() || !layers.is_empty() {
                        return Err(Error::parse(SRC, lineno, "`input` must be the first line"));
                    }
                    input = Some(Shape::new(
                        fields.usize("height")?,
                        fields.usize("width")?,
                        fields.usize("channels")?,
                    ));
                    fields.finish()?;
                    continue;
                }
                "conv" => LayerSpec::Conv(ConvSpec {
                    name: fields.string("name")?,
                    out: fields.usize("out")?,
                    kernel: fields.usize("kernel")?,
                    stride: fields.usize("stride")?,
                    pad: fields.padding("pad")?,
                }),
                "cccp" => LayerSpec::Cccp {
                    name: fields.string("name")?,
                    out: fields.usize("out")?,
                },
                "relu" => LayerSpec::Relu,
                "pool" => LayerSpec::Pool(PoolParams {
                    kernel: fields.usize("kernel")?,
                    stride: fields.usize("stride")?,
                    pad: fields.usize("pad")?,
                }),
                "inception" => {
                    let name = fields.string("name")?;
                    let list = fields.list("widths")?;
                    let widths: [usize; 5] = list
                        .try_into()
                        .map_err(|_| Error::parse(SRC, lineno, "inception needs exactly five widths"))?;
                    let total = widths.iter().sum();
                    LayerSpec::Inception {
                        name,
                        widths: InceptionWidths::new(widths, total).map_err(|e| Error::parse(SRC, lineno, e.to_string()))?,
                    }
                }
                "dropout" => {
                    let rate = fields.f64("rate")?;
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::parse(SRC, lineno, format!("dropout rate {rate} outside [0, 1)")));
                    }
                    LayerSpec::Dropout { rate }
                }
                "gap" => LayerSpec::Gap,
                other => return Err(Error::parse(SRC, lineno, format!("unknown layer type `{other}`"))),
            };
            fields.finish()?;
            if input.is_none() {
                return Err(Error::parse(SRC, lineno, "missing `input` line"));
            }
            layers.push(layer);
        }
        let input = input.ok_or_else(|| Error::parse(SRC, 1, "missing `input` line"))?;
        Ok(NetworkSpec { input, layers })
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn pad_text(p: &Padding) -> String {
    if p.is_uniform() {
        p.top.to_string()
    } else {
        format!("{},{},{},{}", p.top, p.left, p.bottom, p.right)
    }
}

struct Fields {
    source: &'static str,
    line: usize,
    map: BTreeMap<String, String>,
}

impl Fields {
    fn new(source: &'static str, line: usize) -> Self {
        Self {
            source,
            line,
            map: BTreeMap::new(),
        }
    }

    fn insert(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse(self.source, self.line, format!("expected key=value, got `{kv}`")))?;
        if self.map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse(self.source, self.line, format!("duplicate key `{k}`")));
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Result<String> {
        self.map
            .remove(key)
            .ok_or_else(|| Error::parse(self.source, self.line, format!("missing `{key}`")))
    }

    fn string(&mut self, key: &str) -> Result<String> {
        self.take(key)
    }

    fn usize(&mut self, key: &str) -> Result<usize> {
        let v = self.take(key)?;
        v.parse()
            .map_err(|_| Error::parse(self.source, self.line, format!("`{key}` must be an integer, got `{v}`")))
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        let v = self.take(key)?;
        v.parse()
            .map_err(|_| Error::parse(self.source, self.line, format!("`{key}` must be a number, got `{v}`")))
    }

    fn list(&mut self, key: &str) -> Result<Vec<usize>> {
        let v = self.take(key)?;
        v.split(',')
            .map(|x| {
                x.parse()
                    .map_err(|_| Error::parse(self.source, self.line, format!("bad `{key}` entry `{x}`")))
            })
            .collect()
    }

    fn padding(&mut self, key: &str) -> Result<Padding> {
        let v = self.list(key)?;
        match v.as_slice() {
            [p] => Ok(Padding::uniform(*p)),
            [top, left, bottom, right] => Ok(Padding {
                top: *top,
                left: *left,
                bottom: *bottom,
                right: *right,
            }),
            _ => Err(Error::parse(self.source, self.line, "pad takes one or four values")),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::UnknownKey {
                source_name: self.source.into(),
                line: self.line,
                key: k.clone(),
            }),
            None => Ok(()),
        }
    }
}
