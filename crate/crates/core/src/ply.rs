//! Binary little-endian PLY in the layout written by the reference 3DGS
//! trainer: `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3`.
//!
//! Normals are written as zeros and ignored on load. Opacity is stored as a
//! logit on disk and as a probability in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{logit, sigmoid, SourceGaussianSet, SH_REST};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
    has_list: bool,
}

fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..SH_REST).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Vec<Element>> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::PlyFormat("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(Error::PlyFormat("missing `ply` magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    loop {
        let line = next_line(reader)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::PlyFormat(format!("unsupported format `{fmt}`")));
                }
                format_ok = true;
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::PlyFormat(format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::PlyFormat("property before element".into()))?;
                el.has_list = true;
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::PlyFormat(format!("unknown property type `{ty}`")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::PlyFormat("property before element".into()))?;
                el.properties.push((name.to_string(), ty));
            }
            _ => return Err(Error::PlyFormat(format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_ok {
        return Err(Error::PlyFormat("missing format line".into()));
    }
    Ok(elements)
}

/// Loads a 3DGS scene. Opacity logits pass through the logistic function.
pub fn load_ply(path: impl AsRef<Path>) -> Result<SourceGaussianSet> {
    let file = File::open(path)?;
    read_ply(&mut BufReader::new(file))
}

pub fn read_ply<R: BufRead>(reader: &mut R) -> Result<SourceGaussianSet> {
    let elements = read_header(reader)?;
    let mut skip = 0usize;
    let mut vertex = None;
    for el in &elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        if el.has_list {
            return Err(Error::PlyFormat(format!(
                "cannot skip list element `{}` preceding vertices",
                el.name
            )));
        }
        skip += el.count * el.properties.iter().map(|(_, t)| t.size()).sum::<usize>();
    }
    let vertex = vertex.ok_or_else(|| Error::PlyFormat("no vertex element".into()))?;
    if vertex.has_list {
        return Err(Error::PlyFormat("list properties on vertices are not supported".into()));
    }

    // Byte offset and type of every property we need, in our field order.
    let mut offsets = Vec::new();
    let mut offset = 0usize;
    let mut layout = std::collections::HashMap::new();
    for (name, ty) in &vertex.properties {
        layout.insert(name.as_str(), (offset, *ty));
        offset += ty.size();
    }
    let stride = offset;
    for name in property_names() {
        if matches!(name.as_str(), "nx" | "ny" | "nz") {
            continue;
        }
        let slot = layout
            .get(name.as_str())
            .copied()
            .ok_or_else(|| Error::MissingProperty(name.clone()))?;
        offsets.push(slot);
    }

    std::io::copy(&mut reader.by_ref().take(skip as u64), &mut std::io::sink())?;
    let n = vertex.count;
    let mut set = SourceGaussianSet::with_capacity(n);
    let mut row = vec![0u8; stride];
    let mut values = vec![0f64; offsets.len()];
    for _ in 0..n {
        reader.read_exact(&mut row)?;
        for (v, &(off, ty)) in values.iter_mut().zip(&offsets) {
            *v = ty.read(&row[off..]);
        }
        let f = |i: usize| values[i] as f32;
        set.positions.push([f(0), f(1), f(2)]);
        set.sh_dc.push([f(3), f(4), f(5)]);
        set.sh_rest.push(std::array::from_fn(|k| f(6 + k)));
        set.opacities.push(sigmoid(values[6 + SH_REST]));
        let base = 7 + SH_REST;
        set.log_scales.push([f(base), f(base + 1), f(base + 2)]);
        set.rotations.push([f(base + 3), f(base + 4), f(base + 5), f(base + 6)]);
    }
    Ok(set)
}

pub fn write_ply(set: &SourceGaussianSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<W: Write>(set: &SourceGaussianSet, w: &mut W) -> Result<()> {
    set.validate()?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", set.len()));
    for name in property_names() {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut row = Vec::with_capacity(4 * 62);
    for i in 0..set.len() {
        row.clear();
        let mut put = |v: f32| row.extend_from_slice(&v.to_le_bytes());
        set.positions[i].iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        set.sh_dc[i].iter().for_each(|&v| put(v));
        set.sh_rest[i].iter().for_each(|&v| put(v));
        put(logit(set.opacities[i]) as f32);
        set.log_scales[i].iter().for_each(|&v| put(v));
        set.rotations[i].iter().for_each(|&v| put(v));
        w.write_all(&row)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn one_vertex(opacity_logit: f32, drop: Option<&str>) -> Vec<u8> {
        let names: Vec<String> =
            property_names().into_iter().filter(|n| Some(n.as_str()) != drop).collect();
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n".to_vec();
        for n in &names {
            bytes.extend_from_slice(format!("property float {n}\n").as_bytes());
        }
        bytes.extend_from_slice(b"end_header\n");
        for n in &names {
            let v: f32 = match n.as_str() {
                "opacity" => opacity_logit,
                "rot_0" => 1.0,
                "x" => 1.5,
                _ => 0.0,
            };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn logit_zero_loads_as_half() {
        let set = read_ply(&mut Cursor::new(one_vertex(0.0, None))).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.opacities[0], 0.5);
        assert_eq!(set.positions[0], [1.5, 0.0, 0.0]);
        assert_eq!(set.rotations[0], [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_property_is_named() {
        let err = read_ply(&mut Cursor::new(one_vertex(0.0, Some("scale_1")))).unwrap_err();
        assert!(matches!(err, Error::MissingProperty(ref p) if p == "scale_1"), "{err}");
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let mut bytes = one_vertex(0.0, None);
        bytes.truncate(bytes.len() - 3);
        let err = read_ply(&mut Cursor::new(bytes)).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn empty_set_round_trips() {
        let mut buf = Vec::new();
        write_ply_to(&SourceGaussianSet::default(), &mut buf).unwrap();
        let back = read_ply(&mut Cursor::new(buf)).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn ascii_format_rejected() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n".to_vec();
        assert!(matches!(read_ply(&mut Cursor::new(bytes)), Err(Error::PlyFormat(_))));
    }
}
