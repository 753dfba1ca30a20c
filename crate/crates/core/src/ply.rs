//! Binary little-endian PLY in the common splatting property layout:
//! `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`, all
//! `float`. Normals are written as zero and ignored on load. `f_rest_*`
//! is channel-major, so `f_rest_{c·(K−1) + k−1}` is coefficient `k` of
//! channel `c`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{sh_len, GaussianSet};

fn property_names(sh_degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..3 * (sh_len(sh_degree) - 1) {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".into());
    for i in 0..3 {
        names.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names
}

pub fn to_bytes(gs: &GaussianSet) -> Result<Vec<u8>> {
    gs.validate()?;
    let names = property_names(gs.sh_degree);
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", gs.len()).as_bytes());
    for n in &names {
        out.extend_from_slice(format!("property float {n}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    let k = sh_len(gs.sh_degree);
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for i in 0..gs.len() {
        gs.positions[i].iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        let sh = gs.sh(i);
        (0..3).for_each(|c| put(sh[c * k]));
        for c in 0..3 {
            for j in 1..k {
                put(sh[c * k + j]);
            }
        }
        put(gs.opacity_logits[i]);
        gs.log_scales[i].iter().for_each(|&v| put(v));
        gs.rotations[i].iter().for_each(|&v| put(v));
    }
    Ok(out)
}

pub fn save_ply(gs: &GaussianSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(gs)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianSet> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

fn header_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::PlyHeader {
        offset,
        reason: reason.into(),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<GaussianSet> {
    let mut offset = 0usize;
    let next_line = |offset: &mut usize| -> Result<(usize, String)> {
        let start = *offset;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| header_err(start, "header ends without end_header"))?;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| header_err(start, "header line is not UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        *offset = start + rel + 1;
        Ok((start, line))
    };

    let (at, magic) = next_line(&mut offset)?;
    if magic != "ply" {
        return Err(header_err(at, "missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut format_ok = false;
    loop {
        let (at, line) = next_line(&mut offset)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => return Err(header_err(at, format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| header_err(at, format!("bad vertex count `{n}`")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "float", name] if in_vertex => props.push(name.to_string()),
            ["property", ty, _] if in_vertex => {
                return Err(header_err(at, format!("vertex property type `{ty}` unsupported (float only)")))
            }
            ["property", ..] => {}
            _ => return Err(header_err(at, format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_ok {
        return Err(header_err(0, "no format line"));
    }
    let n = count.ok_or_else(|| header_err(offset, "no vertex element"))?;
    if n == 0 {
        return Err(Error::InvalidScene("PLY has zero vertices".into()));
    }
    let index: HashMap<&str, usize> = props.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let rest = props.iter().filter(|p| p.starts_with("f_rest_")).count();
    let degree = (0u8..=3)
        .find(|&d| 3 * (sh_len(d) - 1) == rest)
        .ok_or_else(|| Error::InvalidScene(format!("{rest} f_rest properties do not match any SH degree")))?;
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::PlyMissingProperty(name.to_string()))
    };
    let pos_c = [col("x")?, col("y")?, col("z")?];
    let dc_c = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let rest_c: Vec<usize> = (0..rest).map(|i| col(&format!("f_rest_{i}"))).collect::<Result<_>>()?;
    let op_c = col("opacity")?;
    let sc_c = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot_c = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];

    let stride = props.len() * 4;
    let expected = n * stride;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(Error::PlyTruncated {
            expected,
            found: payload.len(),
        });
    }
    let k = sh_len(degree);
    let mut gs = GaussianSet {
        positions: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
        sh_coeffs: Vec::with_capacity(n * 3 * k),
        sh_degree: degree,
    };
    for i in 0..n {
        let row = &payload[i * stride..(i + 1) * stride];
        let f = |c: usize| f32::from_le_bytes([row[4 * c], row[4 * c + 1], row[4 * c + 2], row[4 * c + 3]]);
        gs.positions.push(pos_c.map(f));
        gs.rotations.push(rot_c.map(f));
        gs.log_scales.push(sc_c.map(f));
        gs.opacity_logits.push(f(op_c));
        for c in 0..3 {
            gs.sh_coeffs.push(f(dc_c[c]));
            for j in 1..k {
                gs.sh_coeffs.push(f(rest_c[c * (k - 1) + j - 1]));
            }
        }
    }
    gs.validate()?;
    Ok(gs)
}
