//! Minimal PLY support: ASCII and binary little-endian vertex clouds.
//!
//! Only the `vertex` element is interpreted. Its `x`, `y`, `z` properties are
//! required; `nx`, `ny`, `nz` are picked up when all three are present. The
//! writer always emits binary little-endian with integer coordinates, double
//! normals and a `comment bit_depth <b>` line that the reader honours.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PointCloud, NORMAL_TOLERANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    bit_depth: Option<u32>,
    lines: usize,
}

fn parse_error(line: usize, content: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        content: content.to_string(),
        message: message.into(),
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut bit_depth = None;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        line_no += 1;
        if n == 0 {
            return Err(parse_error(line_no, "", "unexpected end of header"));
        }
        let text = String::from_utf8_lossy(&buf);
        let line = text.trim_end_matches(['\n', '\r']).trim();
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(parse_error(line_no, line, "missing 'ply' magic"));
            }
            continue;
        }
        match keyword {
            "" => {}
            "format" => {
                let kind = tokens.next().unwrap_or("");
                let version = tokens.next().unwrap_or("");
                format = Some(match (kind, version) {
                    ("ascii", "1.0") => Format::Ascii,
                    ("binary_little_endian", "1.0") => Format::BinaryLittleEndian,
                    _ => return Err(parse_error(line_no, line, "unsupported format")),
                });
            }
            "comment" => {
                if tokens.next() == Some("bit_depth") {
                    let b = tokens
                        .next()
                        .and_then(|t| t.parse::<u32>().ok())
                        .ok_or_else(|| parse_error(line_no, line, "invalid bit_depth comment"))?;
                    bit_depth = Some(b);
                }
            }
            "obj_info" => {}
            "element" => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_error(line_no, line, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| parse_error(line_no, line, "invalid element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(line_no, line, "property before element"))?;
                let ty = tokens.next().unwrap_or("");
                let property = if ty == "list" {
                    let count = tokens.next().and_then(Scalar::parse);
                    let item = tokens.next().and_then(Scalar::parse);
                    match (count, item, tokens.next()) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(parse_error(line_no, line, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| parse_error(line_no, line, "unknown property type"))?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| parse_error(line_no, line, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(property);
            }
            "end_header" => break,
            _ => return Err(parse_error(line_no, line, "unknown header keyword")),
        }
    }
    let format = format.ok_or_else(|| parse_error(line_no, "end_header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        bit_depth,
        lines: line_no,
    })
}

/// Column indices of the vertex properties we care about.
struct VertexLayout {
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element, header_lines: usize) -> Result<VertexLayout> {
    let find = |wanted: &str| {
        element
            .properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == wanted))
    };
    let mut xyz = [0; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(name).ok_or_else(|| {
            parse_error(
                header_lines,
                "end_header",
                format!("vertex element lacks property '{name}'"),
            )
        })?;
    }
    let normals = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    if element
        .properties
        .iter()
        .any(|p| matches!(p, Property::List { .. }))
    {
        return Err(parse_error(
            header_lines,
            "end_header",
            "list properties on vertex element are not supported",
        ));
    }
    Ok(VertexLayout { xyz, normals })
}

fn round_coordinate(value: f64, line: usize) -> Result<u32> {
    if !value.is_finite() {
        return Err(parse_error(
            line,
            "",
            format!("non-finite coordinate {value}"),
        ));
    }
    let rounded = (value + 0.5).floor();
    if rounded < 0.0 {
        return Err(Error::Domain(format!(
            "coordinate {value} is negative after rounding"
        )));
    }
    if rounded > u32::MAX as f64 {
        return Err(Error::Domain(format!("coordinate {value} is too large")));
    }
    Ok(rounded as u32)
}

fn unit_normal(n: [f64; 3]) -> Result<[f64; 3]> {
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if (norm - 1.0).abs() <= NORMAL_TOLERANCE {
        Ok(n)
    } else if norm > 0.0 && norm.is_finite() {
        Ok([n[0] / norm, n[1] / norm, n[2] / norm])
    } else {
        Err(Error::Domain(format!("degenerate normal {n:?}")))
    }
}

/// Reads a PLY point cloud from a byte stream.
///
/// Float coordinates are rounded half-up to integers. The bit depth comes from
/// a `comment bit_depth <b>` header line when present, otherwise it is the
/// smallest depth covering all coordinates.
pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud> {
    let mut reader = BufReader::new(reader);
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_error(header.lines, "end_header", "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_pos], header.lines)?;

    let mut raw_points = Vec::new();
    let mut raw_normals = Vec::new();
    match header.format {
        Format::Ascii => {
            let mut line_no = header.lines;
            let mut buf = String::new();
            let mut next_line = |buf: &mut String, line_no: &mut usize| -> Result<()> {
                buf.clear();
                *line_no += 1;
                if reader.read_line(buf)? == 0 {
                    return Err(parse_error(*line_no, "", "unexpected end of data"));
                }
                Ok(())
            };
            for element in &header.elements[..vertex_pos] {
                for _ in 0..element.count {
                    next_line(&mut buf, &mut line_no)?;
                }
            }
            let element = &header.elements[vertex_pos];
            for _ in 0..element.count {
                next_line(&mut buf, &mut line_no)?;
                let values: Vec<f64> = buf
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_error(line_no, buf.trim(), "invalid number"))?;
                if values.len() < element.properties.len() {
                    return Err(parse_error(line_no, buf.trim(), "too few values"));
                }
                let mut p = [0u32; 3];
                for (c, &col) in p.iter_mut().zip(&layout.xyz) {
                    *c = round_coordinate(values[col], line_no)?;
                }
                raw_points.push(p);
                if let Some(cols) = layout.normals {
                    raw_normals.push(unit_normal(cols.map(|c| values[c]))?);
                }
            }
        }
        Format::BinaryLittleEndian => {
            for element in &header.elements[..vertex_pos] {
                skip_binary_element(&mut reader, element)?;
            }
            let element = &header.elements[vertex_pos];
            let types: Vec<Scalar> = element
                .properties
                .iter()
                .map(|p| match p {
                    Property::Scalar { ty, .. } => *ty,
                    Property::List { .. } => unreachable!("rejected by vertex_layout"),
                })
                .collect();
            let offsets: Vec<usize> = types
                .iter()
                .scan(0, |acc, t| {
                    let o = *acc;
                    *acc += t.size();
                    Some(o)
                })
                .collect();
            let stride: usize = types.iter().map(|t| t.size()).sum();
            let mut record = vec![0u8; stride];
            let value = |record: &[u8], col: usize| types[col].read_le(&record[offsets[col]..]);
            for i in 0..element.count {
                reader.read_exact(&mut record).map_err(|_| {
                    parse_error(header.lines, "", format!("truncated binary vertex {i}"))
                })?;
                let mut p = [0u32; 3];
                for (c, &col) in p.iter_mut().zip(&layout.xyz) {
                    *c = round_coordinate(value(&record, col), header.lines)?;
                }
                raw_points.push(p);
                if let Some(cols) = layout.normals {
                    raw_normals.push(unit_normal(cols.map(|c| value(&record, c)))?);
                }
            }
        }
    }

    let bit_depth = header
        .bit_depth
        .unwrap_or_else(|| PointCloud::infer_bit_depth(&raw_points));
    let normals = layout.normals.map(|_| raw_normals);
    PointCloud::with_normals(raw_points, normals, bit_depth)
}

fn skip_binary_element<R: Read>(reader: &mut R, element: &Element) -> Result<()> {
    let mut buf = [0u8; 8];
    for _ in 0..element.count {
        for property in &element.properties {
            match property {
                Property::Scalar { ty, .. } => reader.read_exact(&mut buf[..ty.size()])?,
                Property::List { count, item } => {
                    reader.read_exact(&mut buf[..count.size()])?;
                    let n = count.read_le(&buf).max(0.0) as usize;
                    for _ in 0..n {
                        reader.read_exact(&mut buf[..item.size()])?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Writes `pc` as binary little-endian PLY.
pub fn write_ply<W: Write>(pc: &PointCloud, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "comment bit_depth {}", pc.bit_depth())?;
    writeln!(w, "element vertex {}", pc.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property int {axis}")?;
    }
    if pc.normals().is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(w, "property double {axis}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in pc.points().iter().enumerate() {
        for &c in p {
            w.write_all(&(c as i32).to_le_bytes())?;
        }
        if let Some(normals) = pc.normals() {
            for &c in &normals[i] {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_ply(File::open(path)?)
}

pub fn write_ply_file(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_ply(pc, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::Point;

    fn roundtrip(pc: &PointCloud) -> PointCloud {
        let mut bytes = Vec::new();
        write_ply(pc, &mut bytes).unwrap();
        read_ply(bytes.as_slice()).unwrap()
    }

    #[test]
    fn ascii_single_vertex() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        let pc = read_ply(text.as_bytes()).unwrap();
        assert_eq!(pc.points(), &[[1, 2, 3]]);
        assert_eq!(pc.bit_depth(), 2);
        assert!(pc.normals().is_none());
    }

    #[test]
    fn float_coordinates_round_half_up() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1.6 0.0 0.0\n2.5 0.49 0\n";
        let pc = read_ply(text.as_bytes()).unwrap();
        assert_eq!(pc.points(), &[[2, 0, 0], [3, 0, 0]]);
    }

    #[test]
    fn negative_coordinate_is_domain_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n-0.6 0 0\n";
        assert!(matches!(read_ply(text.as_bytes()), Err(Error::Domain(_))));
        // -0.4 rounds to zero and is accepted
        let text = text.replace("-0.6", "-0.4");
        assert_eq!(read_ply(text.as_bytes()).unwrap().points(), &[[0, 0, 0]]);
    }

    #[test]
    fn malformed_header_names_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty flot x\nend_header\n";
        match read_ply(text.as_bytes()) {
            Err(Error::Parse { line, content, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(content, "property flot x");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            read_ply("plx\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn header_bit_depth_is_used() {
        let text = "ply\nformat ascii 1.0\ncomment bit_depth 10\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n";
        assert_eq!(read_ply(text.as_bytes()).unwrap().bit_depth(), 10);
    }

    #[test]
    fn skips_elements_before_vertex() {
        let text = "ply\nformat ascii 1.0\nelement camera 1\nproperty float a\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n9\n4 5 6 0 0 1\n";
        let pc = read_ply(text.as_bytes()).unwrap();
        assert_eq!(pc.points(), &[[4, 5, 6]]);
        assert_eq!(pc.normals().unwrap(), &[[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn empty_cloud_writes_valid_ply() {
        let pc = PointCloud::new(vec![], 4).unwrap();
        let mut bytes = Vec::new();
        write_ply(&pc, &mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0"));
        assert_eq!(read_ply(bytes.as_slice()).unwrap(), pc);
    }

    #[test]
    fn normals_are_optional_in_output() {
        let pc = PointCloud::new(vec![[1, 1, 1]], 2).unwrap();
        let mut bytes = Vec::new();
        write_ply(&pc, &mut bytes).unwrap();
        assert!(!String::from_utf8_lossy(&bytes).contains("nx"));

        let with = PointCloud::with_normals(
            vec![[1, 1, 1], [0, 3, 2]],
            Some(vec![[0.6, 0.8, 0.0], [0.0, -1.0, 0.0]]),
            2,
        )
        .unwrap();
        assert_eq!(roundtrip(&with), with);
    }

    #[test]
    fn random_roundtrip_preserves_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Point> = (0..1000)
            .map(|_| {
                [
                    rng.gen_range(0..1024),
                    rng.gen_range(0..1024),
                    rng.gen_range(0..1024),
                ]
            })
            .collect();
        let pc = PointCloud::new(points, 10).unwrap();
        assert_eq!(roundtrip(&pc), pc);
    }

    #[test]
    fn binary_float_input_is_rounded() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty double z\nproperty uchar red\nend_header\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&7.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.49f64.to_le_bytes());
        bytes.push(200);
        let pc = read_ply(bytes.as_slice()).unwrap();
        assert_eq!(pc.points(), &[[2, 7, 2]]);
        assert_eq!(pc.bit_depth(), 3);
    }

    #[test]
    fn truncated_binary_is_parse_error() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty int x\nproperty int y\nproperty int z\nend_header\n".to_vec();
        bytes.extend_from_slice(&[0u8; 14]);
        assert!(matches!(
            read_ply(bytes.as_slice()),
            Err(Error::Parse { .. })
        ));
    }
}
