//! PLY reading (ASCII and binary little-endian) and writing.

use std::io::Write;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesher::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Ty {
    fn parse(s: &str) -> Option<Ty> {
        Some(match s {
            "char" | "int8" => Ty::I8,
            "uchar" | "uint8" => Ty::U8,
            "short" | "int16" => Ty::I16,
            "ushort" | "uint16" => Ty::U16,
            "int" | "int32" => Ty::I32,
            "uint" | "uint32" => Ty::U32,
            "float" | "float32" => Ty::F32,
            "double" | "float64" => Ty::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Ty::I8 | Ty::U8 => 1,
            Ty::I16 | Ty::U16 => 2,
            Ty::I32 | Ty::U32 | Ty::F32 => 4,
            Ty::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Ty::I8 => b[0] as i8 as f64,
            Ty::U8 => b[0] as f64,
            Ty::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Ty::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Ty::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Ty::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Ty::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Ty::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Ty),
    List(String, Ty, Ty),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Default)]
pub(super) struct PlyData {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
    pub faces: Vec<Vec<u32>>,
}

/// Sequential value source over either encoding.
enum Cursor<'a> {
    Ascii { tokens: std::str::SplitWhitespace<'a>, line_hint: usize },
    Binary { bytes: &'a [u8], pos: usize, base: usize },
}

impl Cursor<'_> {
    fn next(&mut self, ty: Ty, name: &str) -> Result<f64> {
        match self {
            Cursor::Ascii { tokens, line_hint } => {
                let tok = tokens.next().ok_or_else(|| {
                    Error::Corruption(format!("{name}: ASCII body ended early (after header line {line_hint})"))
                })?;
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{name}: bad PLY value {tok:?}")))
            }
            Cursor::Binary { bytes, pos, base } => {
                let n = ty.size();
                if *pos + n > bytes.len() {
                    return Err(Error::Corruption(format!(
                        "{name}: binary body truncated at byte {}",
                        *base + *pos
                    )));
                }
                let v = ty.read(&bytes[*pos..]);
                *pos += n;
                Ok(v)
            }
        }
    }
}

pub(super) fn parse(bytes: &[u8], name: &str) -> Result<PlyData> {
    let mut pos = 0;
    let mut lines = 0;
    let mut next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let s = String::from_utf8_lossy(&bytes[*pos..end]).trim().to_string();
        *pos = (end + 1).min(bytes.len());
        lines += 1;
        Some(s)
    };
    if next_line(&mut pos).as_deref() != Some("ply") {
        return Err(Error::Format(format!("{name}: missing 'ply' magic")));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 1;
    loop {
        let line = next_line(&mut pos)
            .ok_or_else(|| Error::Format(format!("{name}: header has no end_header")))?;
        line_no += 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        let err = |m: &str| Error::Format(format!("{name}:{line_no}: {m}"));
        match tok.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                binary = Some(match tok.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    Some(other) => return Err(err(&format!("unsupported format {other}"))),
                    None => return Err(err("missing format")),
                })
            }
            Some("element") => {
                let (Some(n), Some(c)) = (tok.get(1), tok.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(err("malformed element line"));
                };
                elements.push(Element { name: n.to_string(), count: c, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| err("property before element"))?;
                let prop = if tok.get(1) == Some(&"list") {
                    match (tok.get(2).and_then(|t| Ty::parse(t)), tok.get(3).and_then(|t| Ty::parse(t)), tok.get(4)) {
                        (Some(c), Some(i), Some(n)) => Property::List(n.to_string(), c, i),
                        _ => return Err(err("malformed list property")),
                    }
                } else {
                    match (tok.get(1).and_then(|t| Ty::parse(t)), tok.get(2)) {
                        (Some(t), Some(n)) => Property::Scalar(n.to_string(), t),
                        _ => return Err(err("malformed property")),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(&format!("unknown header keyword {other}"))),
        }
    }
    let binary = binary.ok_or_else(|| Error::Format(format!("{name}: missing format line")))?;
    let body = &bytes[pos..];
    let mut cur = if binary {
        Cursor::Binary { bytes: body, pos: 0, base: pos }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| Error::Format(format!("{name}: ASCII body is not UTF-8")))?;
        Cursor::Ascii { tokens: text.split_whitespace(), line_hint: line_no }
    };

    let mut out = PlyData::default();
    for el in &elements {
        let find = |n: &str| {
            el.props.iter().position(|p| matches!(p, Property::Scalar(s, _) if s == n))
        };
        let xyz = [find("x"), find("y"), find("z")];
        let nrm = [find("nx"), find("ny"), find("nz")];
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(Error::Format(format!("{name}: vertex element lacks x, y, z")));
        }
        let has_normals = is_vertex && nrm.iter().all(Option::is_some);
        if has_normals {
            out.normals = Some(Vec::with_capacity(el.count));
        }
        let mut vals = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            let mut list: Option<Vec<u32>> = None;
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(_, t) => vals[k] = cur.next(*t, name)?,
                    Property::List(pname, ct, it) => {
                        let n = cur.next(*ct, name)?;
                        if !(0.0..=1e6).contains(&n) {
                            return Err(Error::Corruption(format!("{name}: bad list length {n}")));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(cur.next(*it, name)?);
                        }
                        if is_face && (pname == "vertex_indices" || pname == "vertex_index") {
                            list = Some(items.into_iter().map(|v| v as u32).collect());
                        }
                    }
                }
            }
            if is_vertex {
                out.vertices.push(xyz.map(|i| vals[i.unwrap()]));
                if let Some(ns) = out.normals.as_mut() {
                    ns.push(nrm.map(|i| vals[i.unwrap()]));
                }
            }
            if let Some(f) = list {
                out.faces.push(f);
            }
        }
    }
    Ok(out)
}

fn header<W: Write>(w: &mut W, binary: bool, nv: usize, normals: bool, nf: Option<usize>) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format {} 1.0", if binary { "binary_little_endian" } else { "ascii" })?;
    writeln!(w, "element vertex {nv}")?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    if normals {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property double {p}")?;
        }
    }
    if let Some(nf) = nf {
        writeln!(w, "element face {nf}")?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")
}

pub(super) fn write_mesh<W: Write>(w: &mut W, mesh: &TriangleMesh, binary: bool) -> std::io::Result<()> {
    let normals = mesh.normals.as_deref();
    header(w, binary, mesh.vertices.len(), normals.is_some(), Some(mesh.triangles.len()))?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        let n: Option<&Vector3<f64>> = normals.map(|ns| &ns[i]);
        let vals = [v.x, v.y, v.z].into_iter().chain(n.into_iter().flat_map(|n| [n.x, n.y, n.z]));
        if binary {
            for x in vals {
                w.write_all(&x.to_le_bytes())?;
            }
        } else {
            let s: Vec<String> = vals.map(|x| x.to_string()).collect();
            writeln!(w, "{}", s.join(" "))?;
        }
    }
    for t in &mesh.triangles {
        if binary {
            w.write_all(&[3u8])?;
            for &i in t {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        } else {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
    }
    Ok(())
}

pub(super) fn write_points<W: Write>(w: &mut W, points: &[Point3<f64>], binary: bool) -> std::io::Result<()> {
    header(w, binary, points.len(), false, None)?;
    for p in points {
        if binary {
            for x in [p.x, p.y, p.z] {
                w.write_all(&x.to_le_bytes())?;
            }
        } else {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}
