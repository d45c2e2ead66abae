//! PLY (ASCII and binary little-endian) and whitespace XYZ point files.
//!
//! Only the vertex element is read. Recognized scalar properties are x/y/z,
//! nx/ny/nz and red/green/blue; other scalar vertex properties are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Point, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    XyzText,
}

impl CloudFormat {
    /// Guesses from the extension; `.ply` files are inspected for their encoding.
    pub fn detect(path: &Path) -> Result<CloudFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let head = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]).into_owned();
                if head.contains("format ascii") {
                    Ok(CloudFormat::PlyAscii)
                } else {
                    Ok(CloudFormat::PlyBinaryLe)
                }
            }
            Some("xyz") | Some("txt") => Ok(CloudFormat::XyzText),
            _ => Err(Error::Format(format!("cannot infer point cloud format of {}", path.display()))),
        }
    }
}

/// Blue (t = 0) to red (t = 1) color ramp.
pub fn score_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

#[derive(Clone, Copy, PartialEq)]
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    binary: bool,
    vertex_count: usize,
    props: Vec<(String, Scalar)>,
    body_offset: usize,
    body_line: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let loc = |line: usize| format!("{}: line {line}", path.display());
    let mut offset = 0;
    let mut line_no = 0;
    let mut binary = None;
    let mut vertex_count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut seen_other_element = false;
    loop {
        let Some(end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(loc(line_no + 1), "header is not terminated by end_header"));
        };
        line_no += 1;
        let line = String::from_utf8_lossy(&bytes[offset..offset + end]).trim().to_string();
        offset += end + 1;
        let mut words = line.split_whitespace();
        match (line_no, words.next()) {
            (1, Some("ply")) => {}
            (1, _) => return Err(Error::parse(loc(1), "missing 'ply' magic")),
            (_, Some("format")) => {
                binary = Some(match words.next() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => {
                        return Err(Error::parse(
                            loc(line_no),
                            format!("unsupported format {}", other.unwrap_or("<none>")),
                        ))
                    }
                })
            }
            (_, Some("comment")) | (_, Some("obj_info")) | (_, None) => {}
            (_, Some("element")) => {
                let name = words.next().unwrap_or("");
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(loc(line_no), "element without a count"))?;
                if name == "vertex" {
                    if seen_other_element {
                        return Err(Error::parse(loc(line_no), "vertex must be the first element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    seen_other_element = true;
                    in_vertex = false;
                }
            }
            (_, Some("property")) => {
                let ty = words.next().unwrap_or("");
                if ty == "list" {
                    if in_vertex {
                        return Err(Error::parse(loc(line_no), "list properties on vertices are not supported"));
                    }
                    continue;
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(loc(line_no), format!("unknown property type '{ty}'")))?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(loc(line_no), "property without a name"))?;
                if in_vertex {
                    props.push((name.to_string(), scalar));
                }
            }
            (_, Some("end_header")) => break,
            (_, Some(word)) => return Err(Error::parse(loc(line_no), format!("unexpected header keyword '{word}'"))),
        }
    }
    let binary = binary.ok_or_else(|| Error::parse(loc(line_no), "missing format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| Error::parse(loc(line_no), "missing vertex element"))?;
    for axis in ["x", "y", "z"] {
        if !props.iter().any(|(n, _)| n == axis) {
            return Err(Error::parse(loc(line_no), format!("vertex has no '{axis}' property")));
        }
    }
    Ok(Header {
        binary,
        vertex_count,
        props,
        body_offset: offset,
        body_line: line_no + 1,
    })
}

struct Columns {
    pos: [usize; 3],
    normal: Option<[usize; 3]>,
    color: Option<[usize; 3]>,
}

fn columns(props: &[(String, Scalar)]) -> Columns {
    let find = |n: &str| props.iter().position(|(p, _)| p == n);
    let triple = |a: &str, b: &str, c: &str| Some([find(a)?, find(b)?, find(c)?]);
    Columns {
        pos: triple("x", "y", "z").expect("checked in header"),
        normal: triple("nx", "ny", "nz"),
        color: triple("red", "green", "blue"),
    }
}

type ColoredCloud = (PointCloud, Option<Vec<[u8; 3]>>);

fn assemble(rows: Vec<Vec<f64>>, cols: &Columns, locate: impl Fn(usize) -> String) -> Result<ColoredCloud> {
    let mut points = Vec::with_capacity(rows.len());
    let mut normals = cols.normal.map(|_| Vec::with_capacity(rows.len()));
    let mut colors = cols.color.map(|_| Vec::with_capacity(rows.len()));
    for (i, row) in rows.iter().enumerate() {
        let p = Point::new(row[cols.pos[0]], row[cols.pos[1]], row[cols.pos[2]]);
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::parse(locate(i), "non-finite coordinate"));
        }
        points.push(p);
        if let (Some(ns), Some(c)) = (normals.as_mut(), cols.normal) {
            ns.push(Point::new(row[c[0]], row[c[1]], row[c[2]]));
        }
        if let (Some(cs), Some(c)) = (colors.as_mut(), cols.color) {
            cs.push([row[c[0]] as u8, row[c[1]] as u8, row[c[2]] as u8]);
        }
    }
    Ok((
        PointCloud {
            points,
            normals,
            frame_id: "world".to_string(),
        },
        colors,
    ))
}

/// Loads a cloud and its per-point colors when the file carries them.
pub fn load_cloud_with_colors(path: &Path, format: CloudFormat) -> Result<ColoredCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::XyzText => load_xyz(&bytes, path),
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => {
            let header = parse_header(&bytes, path)?;
            if header.binary != (format == CloudFormat::PlyBinaryLe) {
                return Err(Error::parse(
                    format!("{}: line 2", path.display()),
                    "file encoding does not match the requested format",
                ));
            }
            let cols = columns(&header.props);
            if header.binary {
                let stride: usize = header.props.iter().map(|(_, s)| s.size()).sum();
                let body = &bytes[header.body_offset..];
                let need = stride * header.vertex_count;
                if body.len() < need {
                    return Err(Error::parse(
                        format!("{}: byte {}", path.display(), bytes.len()),
                        format!("truncated payload, expected {need} bytes of vertex data"),
                    ));
                }
                let rows = body[..need]
                    .chunks_exact(stride)
                    .map(|rec| {
                        let mut at = 0;
                        header
                            .props
                            .iter()
                            .map(|(_, s)| {
                                let v = s.read_le(&rec[at..]);
                                at += s.size();
                                v
                            })
                            .collect()
                    })
                    .collect();
                let base = header.body_offset;
                assemble(rows, &cols, |i| format!("{}: byte {}", path.display(), base + i * stride))
            } else {
                let text = String::from_utf8_lossy(&bytes[header.body_offset..]);
                let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
                let mut rows = Vec::with_capacity(header.vertex_count);
                let mut line_of = Vec::with_capacity(header.vertex_count);
                for _ in 0..header.vertex_count {
                    let (ln, line) = lines.next().ok_or_else(|| {
                        Error::parse(
                            format!("{}: line {}", path.display(), header.body_line + text.lines().count()),
                            format!("truncated payload, expected {} vertices", header.vertex_count),
                        )
                    })?;
                    let lineno = header.body_line + ln;
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|w| w.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(format!("{}: line {lineno}", path.display()), e.to_string()))?;
                    if vals.len() < header.props.len() {
                        return Err(Error::parse(
                            format!("{}: line {lineno}", path.display()),
                            format!("expected {} values, found {}", header.props.len(), vals.len()),
                        ));
                    }
                    rows.push(vals);
                    line_of.push(lineno);
                }
                assemble(rows, &cols, |i| format!("{}: line {}", path.display(), line_of[i]))
            }
        }
    }
}

fn load_xyz(bytes: &[u8], path: &Path) -> Result<ColoredCloud> {
    let text = String::from_utf8_lossy(bytes);
    let mut rows = Vec::new();
    let mut line_of = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(format!("{}: line {}", path.display(), i + 1), e.to_string()))?;
        if vals.len() != 3 && vals.len() != 6 {
            return Err(Error::parse(
                format!("{}: line {}", path.display(), i + 1),
                format!("expected 3 or 6 columns, found {}", vals.len()),
            ));
        }
        if *width.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::parse(format!("{}: line {}", path.display(), i + 1), "inconsistent column count"));
        }
        rows.push(vals);
        line_of.push(i + 1);
    }
    let cols = Columns {
        pos: [0, 1, 2],
        normal: (width == Some(6)).then_some([3, 4, 5]),
        color: None,
    };
    assemble(rows, &cols, |i| format!("{}: line {}", path.display(), line_of[i]))
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    load_cloud_with_colors(path, format).map(|(c, _)| c)
}

/// Writes `cloud`; positions and normals are stored as doubles so binary
/// round trips are bit-exact.
pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat, colors: Option<&[[u8; 3]]>) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::Precondition(format!("{} colors for {} points", c.len(), cloud.len())));
        }
        if format == CloudFormat::XyzText {
            return Err(Error::Precondition("XYZ text files cannot carry colors".into()));
        }
    }
    let normals = cloud.normals.as_deref();
    let bytes = match format {
        CloudFormat::XyzText => {
            let mut s = String::new();
            for (i, p) in cloud.points.iter().enumerate() {
                match normals {
                    Some(ns) => writeln!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, ns[i].x, ns[i].y, ns[i].z),
                    None => writeln!(s, "{} {} {}", p.x, p.y, p.z),
                }
                .expect("write to string");
            }
            s.into_bytes()
        }
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => {
            let binary = format == CloudFormat::PlyBinaryLe;
            let mut header = format!(
                "ply\nformat {} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
                if binary { "binary_little_endian" } else { "ascii" },
                cloud.len()
            );
            if normals.is_some() {
                header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
            }
            if colors.is_some() {
                header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
            }
            header.push_str("end_header\n");
            let mut out = header.into_bytes();
            for (i, p) in cloud.points.iter().enumerate() {
                let mut vals = vec![p.x, p.y, p.z];
                if let Some(ns) = normals {
                    vals.extend_from_slice(&[ns[i].x, ns[i].y, ns[i].z]);
                }
                if binary {
                    for v in vals {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    if let Some(cs) = colors {
                        out.extend_from_slice(&cs[i]);
                    }
                } else {
                    let mut line = vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
                    if let Some(cs) = colors {
                        write!(line, " {} {} {}", cs[i][0], cs[i][1], cs[i][2]).expect("write to string");
                    }
                    line.push('\n');
                    out.extend_from_slice(line.as_bytes());
                }
            }
            out
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ascii_ply_with_normals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment tiny\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
             property float nx\nproperty float ny\nproperty float nz\nend_header\n\
             0 0 0 0 0 1\n1 0 0 0 0 1\n0 1 0 0 0 1\n",
        )
        .unwrap();
        let c = load_cloud(&path, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.points[1], Point::new(1.0, 0.0, 0.0));
        assert_eq!(c.normals.unwrap()[2], Point::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn xyz_single_origin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        fs::write(&path, "0 0 0\n").unwrap();
        let c = load_cloud(&path, CloudFormat::XyzText).unwrap();
        assert_eq!(c.points, vec![Point::zeros()]);
        assert!(c.normals.is_none());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ply");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point> = (0..100).map(|_| Point::new(rng.random(), rng.random(), rng.random())).collect();
        let c = PointCloud::new(pts);
        save_cloud(&c, &path, CloudFormat::PlyBinaryLe, None).unwrap();
        assert_eq!(load_cloud(&path, CloudFormat::PlyBinaryLe).unwrap().points, c.points);
        save_cloud(&c, &path, CloudFormat::PlyAscii, None).unwrap();
        let back = load_cloud(&path, CloudFormat::PlyAscii).unwrap();
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn empty_cloud_writes_zero_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ply");
        save_cloud(&PointCloud::default(), &path, CloudFormat::PlyBinaryLe, None).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 0"));
        assert!(load_cloud(&path, CloudFormat::PlyBinaryLe).unwrap().is_empty());
    }

    #[test]
    fn color_ramp_endpoints() {
        assert_eq!(score_color(1.0), [255, 0, 0]);
        assert_eq!(score_color(0.0), [0, 0, 255]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let c = PointCloud::new(vec![Point::zeros(), Point::new(1.0, 0.0, 0.0)]);
        let scores = [0.2, 0.9];
        let colors: Vec<[u8; 3]> = scores.iter().map(|s| score_color((s - 0.2) / 0.7)).collect();
        save_cloud(&c, &path, CloudFormat::PlyBinaryLe, Some(&colors)).unwrap();
        let (_, back) = load_cloud_with_colors(&path, CloudFormat::PlyBinaryLe).unwrap();
        assert_eq!(back.unwrap()[1], [255, 0, 0]);
    }

    #[test]
    fn malformed_inputs_name_their_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        fs::write(&path, "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n\0\0").unwrap();
        let err = load_cloud(&path, CloudFormat::PlyBinaryLe).unwrap_err().to_string();
        assert!(err.contains("byte") && err.contains("truncated"), "{err}");

        fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n0\n").unwrap();
        let err = load_cloud(&path, CloudFormat::PlyAscii).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");

        fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 nan 0\n").unwrap();
        let err = load_cloud(&path, CloudFormat::PlyAscii).unwrap_err().to_string();
        assert!(err.contains("line 8") && err.contains("non-finite"), "{err}");
    }
}
