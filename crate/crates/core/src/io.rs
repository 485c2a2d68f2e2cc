//! File formats: the portable model document, point and spectra CSVs, and
//! digests.
//!
//! Floats are written with Rust's shortest round-trip decimal formatting, so
//! writing and re-reading reproduces the exact bit patterns.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::SpectrumVae;
use crate::net::{Activation, DenseNet};
use crate::spectrum::{SpectrumParams, Spectrum};

const MODEL_MAGIC: &str = "spectrum-vae-model";
const MODEL_VERSION: u32 = 1;

/// Serializes a model to the line-based text document.
pub fn model_to_string(model: &SpectrumVae) -> String {
    let mut out = String::new();
    let p = model.params();
    writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}").unwrap();
    writeln!(out, "params {} {} {}", p.a, p.b, p.k).unwrap();
    for (name, net) in [("encoder", model.encoder()), ("decoder", model.decoder())] {
        writeln!(out, "net {name}").unwrap();
        let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
        writeln!(
            out,
            "activations {} {}",
            net.hidden_activation(),
            net.output_activation()
        )
        .unwrap();
        for (i, layer) in net.layers().iter().enumerate() {
            writeln!(out, "layer {i} weight").unwrap();
            for r in 0..layer.rows {
                let row: Vec<String> = layer.weight[r * layer.cols..(r + 1) * layer.cols]
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
            writeln!(out, "layer {i} bias").unwrap();
            let row: Vec<String> = layer.bias.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    current: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            let line = self
                .iter
                .next()
                .ok_or_else(|| Error::ModelFormat("unexpected end of document".into()))?;
            self.current += 1;
            if !line.trim().is_empty() {
                return Ok(line.trim());
            }
        }
    }

    fn expect(&mut self, prefix: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(prefix)
            .map(str::trim)
            .ok_or_else(|| Error::ModelFormat(format!("expected {prefix:?}, got {line:?}")))
    }
}

fn parse_floats(line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::ModelFormat(format!("bad float {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::ModelFormat(format!(
            "expected {expected} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn parse_net(lines: &mut Lines<'_>, name: &str) -> Result<DenseNet> {
    let got = lines.expect("net")?;
    if got != name {
        return Err(Error::ModelFormat(format!("expected net {name}, got {got}")));
    }
    let sizes: Vec<usize> = lines
        .expect("sizes")?
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::ModelFormat(format!("bad size {t:?}")))
        })
        .collect::<Result<_>>()?;
    let acts = lines.expect("activations")?;
    let mut tags = acts.split_whitespace();
    let hidden = Activation::from_str(
        tags.next()
            .ok_or_else(|| Error::ModelFormat("missing hidden activation".into()))?,
    )?;
    let output = Activation::from_str(
        tags.next()
            .ok_or_else(|| Error::ModelFormat("missing output activation".into()))?,
    )?;
    if sizes.len() < 2 {
        return Err(Error::ModelFormat("sizes must list at least two widths".into()));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for i in 0..sizes.len() - 1 {
        let rows = sizes[i + 1];
        let cols = sizes[i];
        let header = lines.next()?;
        if header != format!("layer {i} weight") {
            return Err(Error::ModelFormat(format!(
                "expected layer {i} weight, got {header:?}"
            )));
        }
        let mut weight = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            weight.extend(parse_floats(lines.next()?, cols)?);
        }
        let header = lines.next()?;
        if header != format!("layer {i} bias") {
            return Err(Error::ModelFormat(format!(
                "expected layer {i} bias, got {header:?}"
            )));
        }
        let bias = parse_floats(lines.next()?, rows)?;
        weights.push(weight);
        biases.push(bias);
    }
    DenseNet::from_parts(sizes, weights, biases, hidden, output)
}

/// Parses a model document.
pub fn model_from_str(text: &str) -> Result<SpectrumVae> {
    let mut lines = Lines {
        iter: text.lines(),
        current: 0,
    };
    let header = lines.next()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(Error::ModelFormat(format!("bad magic line {header:?}")));
    }
    let version: u32 = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::ModelFormat("missing format version".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let params_line = lines.expect("params")?;
    let vals: Vec<&str> = params_line.split_whitespace().collect();
    if vals.len() != 3 {
        return Err(Error::ModelFormat(format!("bad params line {params_line:?}")));
    }
    let a: f64 = vals[0]
        .parse()
        .map_err(|_| Error::ModelFormat(format!("bad a {:?}", vals[0])))?;
    let b: f64 = vals[1]
        .parse()
        .map_err(|_| Error::ModelFormat(format!("bad b {:?}", vals[1])))?;
    let k: usize = vals[2]
        .parse()
        .map_err(|_| Error::ModelFormat(format!("bad k {:?}", vals[2])))?;
    let params = SpectrumParams::new(a, b, k)?;
    let encoder = parse_net(&mut lines, "encoder")?;
    let decoder = parse_net(&mut lines, "decoder")?;
    if lines.next()? != "end" {
        return Err(Error::ModelFormat("missing end marker".into()));
    }
    SpectrumVae::new(params, encoder, decoder)
}

pub fn save_model(model: &SpectrumVae, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SpectrumVae> {
    model_from_str(&std::fs::read_to_string(path)?)
}

/// Writes a point file: header `x1,...,xD`, one row per point.
pub fn write_points_csv(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("points"));
    }
    let dim = points[0].len();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    w.write_record(&header)?;
    for p in points {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len();
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: record.len(),
            });
        }
        let row = record
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("bad float {t:?} in point file")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("point file"));
    }
    Ok(out)
}

/// Writes spectra as rows of `K` decimal values under a `z1..zK` header.
pub fn write_spectra_csv(path: &Path, spectra: &[Spectrum]) -> Result<()> {
    if spectra.is_empty() {
        return Err(Error::EmptyInput("spectra"));
    }
    let k = spectra[0].len();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=k).map(|d| format!("z{d}")).collect();
    w.write_record(&header)?;
    for z in spectra {
        let row: Vec<String> = z.values().iter().map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Generic report table.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        write!(out, "{byte:02x}").unwrap();
    }
    out
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
