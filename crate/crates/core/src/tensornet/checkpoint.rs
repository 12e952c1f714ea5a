//! Checkpoint directories: `spec.txt`, `params.manifest` and `params.bin`.
//!
//! The manifest starts with `dtype f32|f64`, followed by one
//! `name shape offset` line per tensor, e.g. `conv1.weight 5x5x1x16 0`.
//! Offsets count elements into the little-endian `params.bin`.

use std::fs;
use std::path::Path;

use super::network::Network;
use super::{Precision, Real};
use crate::ifn::NetworkSpec;
use crate::{Error, Result};

pub const SPEC_FILE: &str = "spec.txt";
pub const MANIFEST_FILE: &str = "params.manifest";
pub const PARAMS_FILE: &str = "params.bin";

pub fn save<T: Real>(net: &Network<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("dtype {}\n", T::PRECISION.as_str());
    let mut bytes = Vec::new();
    let mut offset = 0;
    let mut push = |v: T| match T::PRECISION {
        Precision::F32 => bytes.extend_from_slice(&v.as_f32().to_le_bytes()),
        Precision::F64 => bytes.extend_from_slice(&v.as_f64().to_le_bytes()),
    };
    for (p, name) in net.params().iter().zip(net.param_names()) {
        let wshape = format!("{k}x{k}x{}x{}", p.in_channels, p.out_channels, k = p.kernel);
        manifest += &format!("{name}.weight {wshape} {offset}\n");
        offset += p.weight.len();
        manifest += &format!("{name}.bias {} {offset}\n", p.out_channels);
        offset += p.bias.len();
        p.weight.iter().chain(&p.bias).for_each(|&v| push(v));
    }
    let write = |file: &str, data: &[u8]| {
        let path = dir.join(file);
        fs::write(&path, data).map_err(|e| Error::io(&path, e))
    };
    write(SPEC_FILE, net.spec().to_text().as_bytes())?;
    write(MANIFEST_FILE, manifest.as_bytes())?;
    write(PARAMS_FILE, &bytes)
}

pub fn load<T: Real>(dir: &Path) -> Result<Network<T>> {
    let read = |file: &str| {
        let path = dir.join(file);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let spec_text = String::from_utf8_lossy(&read(SPEC_FILE)?).into_owned();
    let spec = NetworkSpec::parse(&spec_text)?;
    let manifest = String::from_utf8_lossy(&read(MANIFEST_FILE)?).into_owned();
    let bytes = read(PARAMS_FILE)?;

    let mut lines = manifest.lines().enumerate();
    let dtype = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("dtype ")
            .ok_or_else(|| Error::parse(MANIFEST_FILE, 1, "expected `dtype f32|f64`"))?
            .trim()
            .parse::<Precision>()?,
        None => return Err(Error::parse(MANIFEST_FILE, 1, "empty manifest")),
    };
    let width = match dtype {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    if bytes.len() % width != 0 {
        return Err(Error::InvalidConfig(format!("{PARAMS_FILE} length {} is not a multiple of {width}", bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(width)
        .map(|c| match dtype {
            Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();

    let mut net = Network::<T>::zeros(&spec)?;
    let names: Vec<String> = net.param_names().to_vec();
    let mut expected = Vec::new();
    for (p, name) in net.params().iter().zip(&names) {
        expected.push((format!("{name}.weight"), p.weight.len()));
        expected.push((format!("{name}.bias"), p.bias.len()));
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [name, shape, offset] = fields[..] else {
            return Err(Error::parse(MANIFEST_FILE, i + 1, "expected `name shape offset`"));
        };
        let len = shape
            .split('x')
            .map(|d| d.parse::<usize>())
            .product::<std::result::Result<usize, _>>()
            .map_err(|_| Error::parse(MANIFEST_FILE, i + 1, format!("bad shape `{shape}`")))?;
        let offset: usize = offset
            .parse()
            .map_err(|_| Error::parse(MANIFEST_FILE, i + 1, format!("bad offset `{offset}`")))?;
        entries.push((i + 1, name.to_string(), len, offset));
    }
    if entries.len() != expected.len() {
        return Err(Error::InvalidConfig(format!(
            "manifest lists {} tensors, network has {}",
            entries.len(),
            expected.len()
        )));
    }
    for ((line, name, len, offset), (want, want_len)) in entries.iter().zip(&expected) {
        if name != want || len != want_len {
            return Err(Error::parse(
                MANIFEST_FILE,
                *line,
                format!("expected {want} with {want_len} values, found {name} with {len}"),
            ));
        }
        if offset + len > values.len() {
            return Err(Error::parse(MANIFEST_FILE, *line, format!("{name} extends past end of {PARAMS_FILE}")));
        }
    }
    for (li, p) in net.params_mut().iter_mut().enumerate() {
        let (_, _, _, wo) = entries[2 * li];
        let (_, _, _, bo) = entries[2 * li + 1];
        for (k, w) in p.weight.iter_mut().enumerate() {
            *w = T::from_f64(values[wo + k]);
        }
        for (k, b) in p.bias.iter_mut().enumerate() {
            *b = T::from_f64(values[bo + k]);
        }
    }
    Ok(net)
}
