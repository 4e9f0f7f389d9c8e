//! PCD v0.7 point clouds, ASCII and binary (little-endian).

use std::io::Write;

use nalgebra::Point3;

use super::ScanData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl Scalar {
    fn parse(ty: &str, size: usize) -> Option<Scalar> {
        Some(match (ty, size) {
            ("I", 1) => Scalar::I8,
            ("U", 1) => Scalar::U8,
            ("I", 2) => Scalar::I16,
            ("U", 2) => Scalar::U16,
            ("I", 4) => Scalar::I32,
            ("U", 4) => Scalar::U32,
            ("I", 8) => Scalar::I64,
            ("U", 8) => Scalar::U64,
            ("F", 4) => Scalar::F32,
            ("F", 8) => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::I64 | Scalar::U64 | Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::I64 => i64::from_le_bytes(b[..8].try_into().unwrap()) as f64,
            Scalar::U64 => u64::from_le_bytes(b[..8].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Field {
    name: String,
    ty: Scalar,
    /// Byte offset inside a binary record.
    offset: usize,
    /// Token index inside an ASCII line.
    column: usize,
}

const TIME_FIELDS: [&str; 4] = ["time", "t", "timestamp", "offset_time"];

pub(super) fn parse(bytes: &[u8], name: &str) -> Result<ScanData> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut fields: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut types: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut points: Option<usize> = None;
    let mut width_height: (Option<usize>, Option<usize>) = (None, None);
    let data_kind;

    let fmt_err = |line: usize, msg: String| Error::Format(format!("{name}:{line}: {msg}"));

    loop {
        if pos >= bytes.len() {
            return Err(fmt_err(line_no, "PCD header ended before DATA".into()));
        }
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| fmt_err(line_no + 1, "header is not UTF-8".into()))?
            .trim();
        pos = (end + 1).min(bytes.len());
        line_no += 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap().to_ascii_uppercase();
        let rest: Vec<&str> = tok.collect();
        let nums = |rest: &[&str]| -> Result<Vec<usize>> {
            rest.iter()
                .map(|s| s.parse::<usize>().map_err(|_| fmt_err(line_no, format!("bad number {s:?} in {key}"))))
                .collect()
        };
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => fields = rest.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = nums(&rest)?,
            "TYPE" => types = rest.iter().map(|s| s.to_ascii_uppercase()).collect(),
            "COUNT" => counts = nums(&rest)?,
            "WIDTH" => width_height.0 = nums(&rest)?.first().copied(),
            "HEIGHT" => width_height.1 = nums(&rest)?.first().copied(),
            "POINTS" => points = nums(&rest)?.first().copied(),
            "DATA" => {
                data_kind = rest.first().map(|s| s.to_ascii_lowercase()).unwrap_or_default();
                break;
            }
            other => return Err(fmt_err(line_no, format!("unknown PCD header key {other}"))),
        }
    }

    if counts.is_empty() {
        counts = vec![1; fields.len()];
    }
    if fields.is_empty() || sizes.len() != fields.len() || types.len() != fields.len() || counts.len() != fields.len() {
        return Err(fmt_err(line_no, "FIELDS/SIZE/TYPE/COUNT lengths disagree".into()));
    }
    let n = match (points, width_height) {
        (Some(p), _) => p,
        (None, (Some(w), Some(h))) => w * h,
        (None, (Some(w), None)) => w,
        _ => return Err(fmt_err(line_no, "missing POINTS/WIDTH".into())),
    };

    let mut layout = Vec::with_capacity(fields.len());
    let (mut offset, mut column) = (0, 0);
    for i in 0..fields.len() {
        let ty = Scalar::parse(&types[i], sizes[i])
            .ok_or_else(|| fmt_err(line_no, format!("unsupported type {}{}", types[i], sizes[i])))?;
        layout.push(Field {
            name: fields[i].to_ascii_lowercase(),
            ty,
            offset,
            column,
        });
        offset += ty.size() * counts[i];
        column += counts[i];
    }
    let stride = offset;
    let find = |n: &str| layout.iter().find(|f| f.name == n);
    let (fx, fy, fz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(fmt_err(line_no, "PCD lacks x, y, z fields".into())),
    };
    let ft = TIME_FIELDS.iter().find_map(|n| find(n));

    let mut raw: Vec<([f64; 3], Option<f64>)> = Vec::with_capacity(n);
    match data_kind.as_str() {
        "ascii" => {
            let text = std::str::from_utf8(&bytes[pos..])
                .map_err(|_| fmt_err(line_no, "ASCII payload is not UTF-8".into()))?;
            for (k, line) in text.lines().enumerate() {
                if raw.len() == n {
                    break;
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.is_empty() {
                    continue;
                }
                if toks.len() < column {
                    return Err(fmt_err(line_no + k + 1, format!("expected {column} values, got {}", toks.len())));
                }
                let get = |f: &Field| -> Result<f64> {
                    parse_float(toks[f.column]).ok_or_else(|| {
                        fmt_err(line_no + k + 1, format!("bad value {:?} for field {}", toks[f.column], f.name))
                    })
                };
                raw.push(([get(fx)?, get(fy)?, get(fz)?], ft.map(get).transpose()?));
            }
            if raw.len() < n {
                return Err(Error::Corruption(format!("{name}: expected {n} points, found {}", raw.len())));
            }
        }
        "binary" => {
            let payload = &bytes[pos..];
            let need = n.checked_mul(stride).ok_or_else(|| Error::Corruption(format!("{name}: size overflow")))?;
            if payload.len() < need {
                return Err(Error::Corruption(format!(
                    "{name}: binary payload has {} bytes, {need} expected (byte offset {pos})",
                    payload.len()
                )));
            }
            for rec in payload[..need].chunks_exact(stride) {
                let get = |f: &Field| f.ty.read_le(&rec[f.offset..]);
                raw.push(([get(fx), get(fy), get(fz)], ft.map(get)));
            }
        }
        "binary_compressed" => {
            return Err(Error::Format(format!("{name}: binary_compressed PCD is not supported")))
        }
        other => return Err(fmt_err(line_no, format!("unknown DATA kind {other:?}"))),
    }
    Ok(ScanData::from_raw(raw))
}

fn parse_float(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "nan" | "-nan" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

/// Writes `x y z` (F8) and, when given, a `time` field.
pub fn write<W: Write>(
    w: &mut W,
    points: &[Point3<f64>],
    times: Option<&[f64]>,
    binary: bool,
) -> std::io::Result<()> {
    let n = points.len();
    let (fields, size, ty, count) = if times.is_some() {
        ("x y z time", "8 8 8 8", "F F F F", "1 1 1 1")
    } else {
        ("x y z", "8 8 8", "F F F", "1 1 1")
    };
    write!(
        w,
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS {fields}\nSIZE {size}\nTYPE {ty}\nCOUNT {count}\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {}\n",
        if binary { "binary" } else { "ascii" }
    )?;
    for (i, p) in points.iter().enumerate() {
        let t = times.map(|t| t[i]);
        if binary {
            for v in [p.x, p.y, p.z].into_iter().chain(t) {
                w.write_all(&v.to_le_bytes())?;
            }
        } else {
            match t {
                Some(t) => writeln!(w, "{} {} {} {}", p.x, p.y, p.z, t)?,
                None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII: &str = "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\nWIDTH 3\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 3\nDATA ascii\n1.5 2 3 10\n-1 0.25 4 11\n0 0 -2.5 12\n";

    #[test]
    fn ascii_golden() {
        let s = parse(ASCII.as_bytes(), "golden.pcd").unwrap();
        assert_eq!(
            s.points,
            vec![Point3::new(1.5, 2.0, 3.0), Point3::new(-1.0, 0.25, 4.0), Point3::new(0.0, 0.0, -2.5)]
        );
        assert_eq!(s.dropped, 0);
        assert!(s.times.is_none());
    }

    #[test]
    fn nan_row_dropped() {
        let text = ASCII.replace("-1 0.25 4 11", "nan nan nan 11");
        let s = parse(text.as_bytes(), "nan.pcd").unwrap();
        assert_eq!(s.points.len(), 2);
        assert_eq!(s.dropped, 1);
    }

    #[test]
    fn binary_f32_with_time() {
        let mut bytes = b"VERSION 0.7\nFIELDS x y z t\nSIZE 4 4 4 8\nTYPE F F F F\nCOUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\nPOINTS 2\nDATA binary\n".to_vec();
        for (p, t) in [([1.0f32, 2.0, 3.0], 100.0f64), ([4.0, 5.0, 6.0], 100.1)] {
            for c in p {
                bytes.extend(c.to_le_bytes());
            }
            bytes.extend(t.to_le_bytes());
        }
        let s = parse(&bytes, "b.pcd").unwrap();
        assert_eq!(s.points[1], Point3::new(4.0, 5.0, 6.0));
        assert_eq!(s.times.unwrap(), vec![0.0, 1.0]);

        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(parse(short, "b.pcd"), Err(Error::Corruption(_))));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(parse(b"VERSION 0.7\nFIELDS x y\n", "x.pcd"), Err(Error::Format(_))));
        let no_z = "FIELDS x y\nSIZE 4 4\nTYPE F F\nCOUNT 1 1\nPOINTS 0\nDATA ascii\n";
        assert!(matches!(parse(no_z.as_bytes(), "x.pcd"), Err(Error::Format(_))));
        let bad = ASCII.replace("0 0 -2.5 12", "0 zero -2.5 12");
        let err = parse(bad.as_bytes(), "x.pcd").unwrap_err().to_string();
        assert!(err.contains("x.pcd:14"), "{err}");
    }

    #[test]
    fn write_then_read_binary_is_exact() {
        let pts = vec![Point3::new(0.1, -2.3e-7, 1e10), Point3::new(1.0 / 3.0, 2.0, -0.0)];
        let mut buf = Vec::new();
        write(&mut buf, &pts, None, true).unwrap();
        assert_eq!(parse(&buf, "w.pcd").unwrap().points, pts);
        let mut buf = Vec::new();
        write(&mut buf, &pts, Some(&[0.0, 1.0]), false).unwrap();
        let back = parse(&buf, "w.pcd").unwrap();
        assert_eq!(back.points, pts);
        assert_eq!(back.times.unwrap(), vec![0.0, 1.0]);
    }
}
