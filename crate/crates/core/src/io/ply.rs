//! PLY vertex tables: point clouds and Gaussian scenes.
//!
//! Reading accepts ASCII and binary little/big endian files with any scalar
//! property types; only the `vertex` element is kept. Scenes are written as
//! binary little endian with the usual Gaussian-splat property names.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianScene};
use crate::sh::{num_coeffs, MAX_COEFFS, MAX_DEGREE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn decode(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                if enc == Encoding::BinaryBe {
                    <$t>::from_be_bytes(arr) as f64
                } else {
                    <$t>::from_le_bytes(arr) as f64
                }
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// The `vertex` element of a PLY file as rows of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub comments: Vec<String>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn read_vertices(path: &Path) -> Result<VertexTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::format(path, msg);

    let mut line = String::new();
    let next_line = |r: &mut BufReader<File>, line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::format(path, "unexpected end of header"));
        }
        Ok(())
    };
    next_line(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    loop {
        next_line(&mut r, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => Encoding::BinaryBe,
                    other => return Err(bad(format!("unknown format {other}"))),
                })
            }
            ["comment", rest @ ..] => comments.push(rest.join(" ")),
            ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let count = Scalar::parse(c).ok_or_else(|| bad(format!("bad type {c}")))?;
                let item = Scalar::parse(i).ok_or_else(|| bad(format!("bad type {i}")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let t = Scalar::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), t));
            }
            _ => return Err(bad(format!("unrecognized header line '{}'", line.trim_end()))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line".into()))?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no vertex element".into()))?;

    let mut table = VertexTable {
        names: elements[vertex_pos]
            .props
            .iter()
            .filter_map(|p| match p {
                Property::Scalar(n, _) => Some(n.clone()),
                Property::List { .. } => None,
            })
            .collect(),
        rows: Vec::with_capacity(elements[vertex_pos].count),
        comments,
    };

    match encoding {
        Encoding::Ascii => {
            let mut body = String::new();
            r.read_to_string(&mut body).map_err(|e| Error::io(path, e))?;
            let mut toks = body.split_whitespace();
            let mut next = || -> Result<f64> {
                let t = toks.next().ok_or_else(|| Error::format(path, "truncated ascii body"))?;
                t.parse::<f64>().map_err(|_| Error::format(path, format!("bad number '{t}'")))
            };
            for (ei, el) in elements.iter().enumerate().take(vertex_pos + 1) {
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        match p {
                            Property::Scalar(..) => row.push(next()?),
                            Property::List { .. } => {
                                let n = next()? as usize;
                                for _ in 0..n {
                                    next()?;
                                }
                            }
                        }
                    }
                    if ei == vertex_pos {
                        table.rows.push(row);
                    }
                }
            }
        }
        Encoding::BinaryLe | Encoding::BinaryBe => {
            let mut buf = [0u8; 8];
            let mut read = |r: &mut BufReader<File>, t: Scalar| -> Result<f64> {
                r.read_exact(&mut buf[..t.size()])
                    .map_err(|_| Error::format(path, "truncated binary body"))?;
                Ok(t.decode(&buf, encoding))
            };
            for (ei, el) in elements.iter().enumerate().take(vertex_pos + 1) {
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        match *p {
                            Property::Scalar(_, t) => row.push(read(&mut r, t)?),
                            Property::List { count, item } => {
                                let n = read(&mut r, count)? as usize;
                                for _ in 0..n {
                                    read(&mut r, item)?;
                                }
                            }
                        }
                    }
                    if ei == vertex_pos {
                        table.rows.push(row);
                    }
                }
            }
        }
    }
    Ok(table)
}

/// A colored point cloud for initialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    /// Per-point RGB in `[0, 1]`, if the file had colors.
    pub colors: Option<Vec<[f64; 3]>>,
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let t = read_vertices(path)?;
    let col = |n: &str| t.column(n).ok_or_else(|| Error::format(path, format!("missing property {n}")));
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let positions = t.rows.iter().map(|r| Vector3::new(r[x], r[y], r[z])).collect();
    let rgb = ["red", "green", "blue"].map(|n| t.column(n));
    let colors = match rgb {
        [Some(r), Some(g), Some(b)] => {
            // integer colors are 0..255, float colors 0..1
            let max = t.rows.iter().flat_map(|row| [row[r], row[g], row[b]]).fold(0.0, f64::max);
            let scale = if max > 1.0 { 1.0 / 255.0 } else { 1.0 };
            Some(t.rows.iter().map(|row| [row[r] * scale, row[g] * scale, row[b] * scale]).collect())
        }
        _ => None,
    };
    Ok(PointCloud { positions, colors })
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.positions.len()
    );
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut bytes = header.into_bytes();
    for (i, p) in cloud.positions.iter().enumerate() {
        for v in p.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(c) = &cloud.colors {
            for v in c[i] {
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn scene_property_names(degree: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rest = num_coeffs(degree) - 1;
    for i in 0..3 * rest {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".into());
    for i in 0..3 {
        names.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names.push("filter_radius".into());
    names
}

/// Writes a scene as binary little-endian doubles. Higher-order SH
/// coefficients are stored channel-major (`f_rest_{c * (K-1) + k - 1}`).
pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    let names = scene_property_names(scene.sh_degree);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment sh_degree {}\nelement vertex {}\n",
        scene.sh_degree,
        scene.len()
    );
    for n in &names {
        header.push_str(&format!("property double {n}\n"));
    }
    header.push_str("end_header\n");
    let mut bytes = header.into_bytes();
    let rest = num_coeffs(scene.sh_degree) - 1;
    for g in &scene.gaussians {
        let mut row: Vec<f64> = Vec::with_capacity(names.len());
        row.extend(g.mean.iter());
        row.extend([0.0; 3]);
        row.extend(g.sh[0]);
        for c in 0..3 {
            for k in 1..=rest {
                row.push(g.sh[k][c]);
            }
        }
        row.push(g.opacity_logit);
        row.extend(g.log_scales.iter());
        row.extend(g.rotation);
        row.push(g.filter_radius);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<GaussianScene> {
    let t = read_vertices(path)?;
    let rest_count = t.names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let degree = (0..=MAX_DEGREE)
        .find(|&d| 3 * (num_coeffs(d) - 1) == rest_count)
        .ok_or_else(|| Error::format(path, format!("{rest_count} f_rest properties match no SH degree")))?;
    let col = |n: &str| t.column(n).ok_or_else(|| Error::format(path, format!("missing property {n}")));
    let pos = [col("x")?, col("y")?, col("z")?];
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let rest: Vec<usize> = (0..rest_count).map(|i| col(&format!("f_rest_{i}"))).collect::<Result<_>>()?;
    let opacity = col("opacity")?;
    let scale = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];
    let filter = t.column("filter_radius");
    let per = rest_count / 3;
    let gaussians = t
        .rows
        .iter()
        .map(|r| {
            let mut sh = [[0.0; 3]; MAX_COEFFS];
            sh[0] = dc.map(|c| r[c]);
            for c in 0..3 {
                for k in 1..=per {
                    sh[k][c] = r[rest[c * per + k - 1]];
                }
            }
            let q = rot.map(|c| r[c]);
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(qn > 0.0) {
                return Err(Error::format(path, "zero quaternion"));
            }
            Ok(Gaussian3D {
                mean: Vector3::new(r[pos[0]], r[pos[1]], r[pos[2]]),
                rotation: if (qn - 1.0).abs() < 1e-12 { q } else { q.map(|v| v / qn) },
                log_scales: Vector3::new(r[scale[0]], r[scale[1]], r[scale[2]]),
                opacity_logit: r[opacity],
                sh,
                filter_radius: filter.map_or(0.0, |c| r[c]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianScene::new(gaussians, degree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::random_gaussian_scene;

    #[test]
    fn scene_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        let mut scene = random_gaussian_scene(25, 3);
        scene.gaussians[4].filter_radius = 0.0125;
        write_scene(&path, &scene).unwrap();
        assert_eq!(read_scene(&path).unwrap(), scene);
    }

    #[test]
    fn ascii_cloud_with_faces_and_uchar_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0.5 0 0 255\n3 0 1 2\n",
        )
        .unwrap();
        let c = read_point_cloud(&path).unwrap();
        assert_eq!(c.positions.len(), 3);
        assert_eq!(c.positions[2], Vector3::new(0.0, 1.0, 0.5));
        assert_eq!(c.colors.unwrap()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn binary_cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ply");
        let cloud = PointCloud {
            positions: vec![Vector3::new(1.5, -2.0, 0.25), Vector3::new(0.0, 3.0, -1.0)],
            colors: Some(vec![[1.0, 0.0, 0.2], [0.0, 0.6, 1.0]]),
        };
        write_point_cloud(&path, &cloud).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(back.positions, cloud.positions);
        let c = back.colors.unwrap();
        assert!((c[0][2] - 0.2).abs() < 1.0 / 255.0);
    }

    #[test]
    fn big_endian_doubles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.ply");
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n".to_vec();
        for v in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(read_point_cloud(&path).unwrap().positions[0], Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n").unwrap();
        assert!(matches!(read_vertices(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "plx\n").unwrap();
        assert!(read_vertices(&path).is_err());
        std::fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n").unwrap();
        assert!(read_point_cloud(&path).is_err());
    }
}
