//! Point clouds, PLY interchange and voxel-grid downsampling.
//!
//! The PLY reader understands the `ascii 1.0` and `binary_little_endian 1.0`
//! encodings. Only `x`, `y`, `z` on the `vertex` element are required; an
//! optional `intensity` property is carried along and everything else is
//! skipped, including whole elements (faces, lists) that precede or follow
//! the vertices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("malformed PLY header at byte {offset}: {msg}")]
    Header { offset: usize, msg: String },
    #[error("truncated PLY payload at byte {offset}: {msg}")]
    Truncated { offset: usize, msg: String },
    #[error("invalid PLY value at byte {offset}: {msg}")]
    Value { offset: usize, msg: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("voxel size must be positive and finite, got {0}")]
    VoxelSize(f64),
    #[error("intensity count {intensities} does not match point count {points}")]
    IntensityLength { points: usize, intensities: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
}

/// An ordered set of 3D points in metres with optional per-point intensity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self, CloudError> {
        Self::with_intensity(points, None)
    }

    pub fn with_intensity(points: Vec<Point3<f64>>, intensity: Option<Vec<f32>>) -> Result<Self, CloudError> {
        if let Some(i) = &intensity {
            if i.len() != points.len() {
                return Err(CloudError::IntensityLength { points: points.len(), intensities: i.len() });
            }
        }
        if let Some(bad) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(CloudError::NonFinite(bad));
        }
        Ok(Self { points, intensity })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    /// Applies a rigid motion `p -> R p + t` to every point.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            points: self.points.iter().map(|p| rotation * p + translation).collect(),
            intensity: self.intensity.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VoxelGridParams {
    pub voxel_size: f64,
}

impl Default for VoxelGridParams {
    fn default() -> Self {
        Self { voxel_size: 0.2 }
    }
}

/// Integer voxel coordinate of `p`, anchored at the world origin.
pub fn voxel_index(p: &Point3<f64>, voxel_size: f64) -> [i64; 3] {
    [(p.x / voxel_size).floor() as i64, (p.y / voxel_size).floor() as i64, (p.z / voxel_size).floor() as i64]
}

/// Replaces the members of every occupied voxel by their centroid.
///
/// Output is ordered by voxel index, so it does not depend on input order.
pub fn voxel_downsample(cloud: &PointCloud, params: VoxelGridParams) -> Result<PointCloud, CloudError> {
    if !(params.voxel_size > 0.0 && params.voxel_size.is_finite()) {
        return Err(CloudError::VoxelSize(params.voxel_size));
    }
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }

    let mut bins: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        bins.entry(voxel_index(p, params.voxel_size)).or_default().push(i);
    }

    let mut points = Vec::with_capacity(bins.len());
    let mut intensity = cloud.intensity.as_ref().map(|_| Vec::with_capacity(bins.len()));
    for members in bins.values() {
        let n = members.len() as f64;
        let sum = members.iter().fold(Vector3::zeros(), |acc, &i| acc + cloud.points[i].coords);
        points.push(Point3::from(sum / n));
        if let (Some(out), Some(src)) = (intensity.as_mut(), cloud.intensity.as_ref()) {
            let s: f64 = members.iter().map(|&i| src[i] as f64).sum();
            out.push((s / n) as f32);
        }
    }
    Ok(PointCloud { points, intensity })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
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

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
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
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_err(offset: usize, msg: impl Into<String>) -> PlyError {
    PlyError::Header { offset, msg: msg.into() }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;

    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(header_err(offset, "header is not terminated by end_header"));
        };
        let line_start = offset;
        let raw = &rest[..nl];
        offset += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_start, "header line is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");

        if first {
            if line != "ply" {
                return Err(header_err(line_start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }

        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                let kind = words.next().unwrap_or("");
                let version = words.next().unwrap_or("");
                if version != "1.0" {
                    return Err(header_err(line_start, format!("unsupported PLY version '{version}'")));
                }
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(header_err(line_start, format!("unsupported format '{other}'"))),
                });
            }
            "element" => {
                let name = words.next().ok_or_else(|| header_err(line_start, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| header_err(line_start, "element count is not a non-negative integer"))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            "property" => {
                let element =
                    elements.last_mut().ok_or_else(|| header_err(line_start, "property before any element"))?;
                let ty = words.next().unwrap_or("");
                let prop = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(header_err(line_start, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| header_err(line_start, format!("unknown property type '{ty}'")))?;
                    let name = words.next().ok_or_else(|| header_err(line_start, "property without name"))?;
                    Property::Scalar { name: name.to_string(), ty }
                };
                element.properties.push(prop);
            }
            "end_header" => break,
            other => return Err(header_err(line_start, format!("unexpected header keyword '{other}'"))),
        }
    }

    let format = format.ok_or_else(|| header_err(0, "missing format line"))?;
    Ok(Header { format, elements, body_offset: offset })
}

/// Indices of x, y, z and intensity among the vertex element's properties.
struct VertexLayout {
    xyz: [usize; 3],
    intensity: Option<usize>,
}

fn vertex_layout(element: &Element, header_offset: usize) -> Result<VertexLayout, PlyError> {
    let find =
        |want: &str| element.properties.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == want));
    let mut xyz = [0usize; 3];
    for (slot, axis) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let idx =
            find(axis).ok_or_else(|| header_err(header_offset, format!("vertex element has no '{axis}' property")))?;
        if let Property::Scalar { ty, .. } = &element.properties[idx] {
            if !ty.is_float() {
                return Err(header_err(header_offset, format!("coordinate '{axis}' must be float or double")));
            }
        }
        *slot = idx;
    }
    Ok(VertexLayout { xyz, intensity: find("intensity") })
}

/// Parses a PLY byte stream into a point cloud.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_pos =
        header.elements.iter().position(|e| e.name == "vertex").ok_or_else(|| header_err(0, "no 'vertex' element"))?;
    let layout = vertex_layout(&header.elements[vertex_pos], 0)?;

    let mut points = Vec::with_capacity(header.elements[vertex_pos].count);
    let mut intensity = layout.intensity.map(|_| Vec::with_capacity(points.capacity()));
    let mut row = Vec::new();

    match header.format {
        PlyFormat::Ascii => {
            let mut tokens = AsciiTokens::new(bytes, header.body_offset);
            for (ei, element) in header.elements.iter().enumerate() {
                for _ in 0..element.count {
                    row.clear();
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { .. } => row.push(tokens.next_number()?),
                            Property::List { .. } => {
                                let n = tokens.next_count()?;
                                for _ in 0..n {
                                    tokens.next_number()?;
                                }
                                row.push(n as f64);
                            }
                        }
                    }
                    if ei == vertex_pos {
                        push_vertex(&row, &layout, tokens.offset, &mut points, &mut intensity)?;
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut offset = header.body_offset;
            for (ei, element) in header.elements.iter().enumerate() {
                for record in 0..element.count {
                    row.clear();
                    let record_start = offset;
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                let b = take(bytes, &mut offset, ty.size(), &element.name, record, record_start)?;
                                row.push(ty.read_le(b));
                            }
                            Property::List { count, item } => {
                                let b = take(bytes, &mut offset, count.size(), &element.name, record, record_start)?;
                                let n = count.read_le(b);
                                if n < 0.0 {
                                    return Err(PlyError::Value {
                                        offset: offset - count.size(),
                                        msg: "negative list length".into(),
                                    });
                                }
                                let len = n as usize * item.size();
                                take(bytes, &mut offset, len, &element.name, record, record_start)?;
                                row.push(n);
                            }
                        }
                    }
                    if ei == vertex_pos {
                        push_vertex(&row, &layout, record_start, &mut points, &mut intensity)?;
                    }
                }
            }
        }
    }

    Ok(PointCloud { points, intensity })
}

fn take<'a>(
    bytes: &'a [u8],
    offset: &mut usize,
    len: usize,
    element: &str,
    record: usize,
    record_start: usize,
) -> Result<&'a [u8], PlyError> {
    let end = offset.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| PlyError::Truncated {
        offset: record_start,
        msg: format!("{element} record {record} needs {len} more bytes, {} available", bytes.len() - *offset),
    })?;
    let slice = &bytes[*offset..end];
    *offset = end;
    Ok(slice)
}

fn push_vertex(
    row: &[f64],
    layout: &VertexLayout,
    offset: usize,
    points: &mut Vec<Point3<f64>>,
    intensity: &mut Option<Vec<f32>>,
) -> Result<(), PlyError> {
    let p = Point3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]);
    if !p.coords.iter().all(|c| c.is_finite()) {
        return Err(PlyError::Value { offset, msg: "non-finite vertex coordinate".into() });
    }
    points.push(p);
    if let (Some(out), Some(idx)) = (intensity.as_mut(), layout.intensity) {
        out.push(row[idx] as f32);
    }
    Ok(())
}

struct AsciiTokens<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> AsciiTokens<'a> {
    fn new(bytes: &'a [u8], offset: usize) -> Self {
        Self { bytes, offset }
    }

    fn next_token(&mut self) -> Result<(&'a str, usize), PlyError> {
        while self.offset < self.bytes.len() && self.bytes[self.offset].is_ascii_whitespace() {
            self.offset += 1;
        }
        let start = self.offset;
        if start >= self.bytes.len() {
            return Err(PlyError::Truncated { offset: start, msg: "unexpected end of ASCII body".into() });
        }
        while self.offset < self.bytes.len() && !self.bytes[self.offset].is_ascii_whitespace() {
            self.offset += 1;
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.offset])
            .map_err(|_| PlyError::Value { offset: start, msg: "token is not valid UTF-8".into() })?;
        Ok((tok, start))
    }

    fn next_number(&mut self) -> Result<f64, PlyError> {
        let (tok, at) = self.next_token()?;
        tok.parse::<f64>().map_err(|_| PlyError::Value { offset: at, msg: format!("'{tok}' is not a number") })
    }

    fn next_count(&mut self) -> Result<usize, PlyError> {
        let (tok, at) = self.next_token()?;
        tok.parse::<usize>().map_err(|_| PlyError::Value { offset: at, msg: format!("'{tok}' is not a list length") })
    }
}

/// Serializes a cloud. Coordinates are written as doubles so that binary
/// output parses back bit-identically; ASCII uses shortest round-trip text.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.intensity.is_some() {
        header.push_str("property float intensity\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for (i, p) in cloud.points.iter().enumerate() {
                let _ = write!(body, "{} {} {}", p.x, p.y, p.z);
                if let Some(int) = &cloud.intensity {
                    let _ = write!(body, " {}", int[i]);
                }
                body.push('\n');
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = 24 + if cloud.intensity.is_some() { 4 } else { 0 };
            out.reserve(stride * cloud.len());
            for (i, p) in cloud.points.iter().enumerate() {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(int) = &cloud.intensity {
                    out.extend_from_slice(&int[i].to_le_bytes());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_f32_ply(points: &[[f32; 3]]) -> Vec<u8> {
        let mut b = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
            points.len()
        )
        .into_bytes();
        for p in points {
            for c in p {
                b.extend_from_slice(&c.to_le_bytes());
            }
        }
        b
    }

    #[test]
    fn ascii_single_vertex() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        let cloud = parse_ply(src).unwrap();
        assert_eq!(cloud.points(), &[Point3::origin()]);
        assert!(cloud.intensity().is_none());
    }

    #[test]
    fn binary_bytes_written_by_hand() {
        // 1.5f32 = 0x3FC00000, -2.0f32 = 0xC0000000, 0.1f32 = 0x3DCCCCCD
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        b.extend_from_slice(&[0x00, 0x00, 0xC0, 0x3F, 0x00, 0x00, 0x00, 0xC0, 0xCD, 0xCC, 0xCC, 0x3D]);
        b.extend_from_slice(&[0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x00]);
        let cloud = parse_ply(&b).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points()[0], Point3::new(1.5, -2.0, f32::from_bits(0x3DCC_CCCD) as f64));
        assert_eq!(cloud.points()[1], Point3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn truncated_body_is_reported() {
        let mut b = binary_f32_ply(&[[0.0; 3], [1.0; 3], [2.0; 3]]);
        b.truncate(b.len() - 12);
        let body_start = b.len() - 24;
        match parse_ply(&b) {
            Err(PlyError::Truncated { offset, .. }) => assert_eq!(offset, body_start + 24),
            other => panic!("expected truncation, got {other:?}"),
        }

        let ascii = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1 1\n";
        assert!(matches!(parse_ply(ascii), Err(PlyError::Truncated { .. })));
    }

    #[test]
    fn integer_coordinates_rejected() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(matches!(parse_ply(src), Err(PlyError::Header { .. })));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(parse_ply(b"plx\n"), Err(PlyError::Header { offset: 0, .. })));
        assert!(matches!(
            parse_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n"),
            Err(PlyError::Header { offset: 4, .. })
        ));
        assert!(matches!(parse_ply(b"ply\nformat ascii 1.0\n"), Err(PlyError::Header { .. })));
    }

    #[test]
    fn unknown_properties_and_elements_skipped() {
        let src = b"ply\nformat ascii 1.0\ncomment scanner export\nelement vertex 2\nproperty uchar red\nproperty double x\nproperty double y\nproperty double z\nproperty float intensity\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n255 1 2 3 0.5\n0 4 5 6 0.25\n3 0 1 1\n";
        let cloud = parse_ply(src).unwrap();
        assert_eq!(cloud.points()[1], Point3::new(4.0, 5.0, 6.0));
        assert_eq!(cloud.intensity().unwrap(), &[0.5, 0.25]);

        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement face 1\nproperty list uchar int idx\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty short flags\nend_header\n".to_vec();
        bin.push(2);
        bin.extend_from_slice(&7i32.to_le_bytes());
        bin.extend_from_slice(&8i32.to_le_bytes());
        for c in [1.0f32, 2.0, 3.0] {
            bin.extend_from_slice(&c.to_le_bytes());
        }
        bin.extend_from_slice(&(-1i16).to_le_bytes());
        let cloud = parse_ply(&bin).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn empty_cloud_writes_valid_ply() {
        let empty = PointCloud::default();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = write_ply(&empty, fmt);
            assert!(String::from_utf8_lossy(&bytes).contains("element vertex 0\n"));
            assert_eq!(parse_ply(&bytes).unwrap(), empty);
        }
    }

    #[test]
    fn single_point_round_trip() {
        let cloud = PointCloud::with_intensity(vec![Point3::new(0.1, -7.25, 1e-300)], Some(vec![0.3])).unwrap();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            assert_eq!(parse_ply(&write_ply(&cloud, fmt)).unwrap(), cloud);
        }
    }

    #[test]
    fn downsample_single_point() {
        let cloud = PointCloud::new(vec![Point3::new(0.3, 0.7, -1.1)]).unwrap();
        let out = voxel_downsample(&cloud, VoxelGridParams::default()).unwrap();
        assert_eq!(out.points(), cloud.points());
    }

    #[test]
    fn downsample_centroid_and_separation() {
        let same = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0)]).unwrap();
        let out = voxel_downsample(&same, VoxelGridParams::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points()[0] - Point3::new(0.05, 0.0, 0.0)).norm() < 1e-15);

        let apart = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.3, 0.0, 0.0)]).unwrap();
        assert_eq!(voxel_downsample(&apart, VoxelGridParams::default()).unwrap().len(), 2);
    }

    #[test]
    fn downsample_errors() {
        assert_eq!(voxel_downsample(&PointCloud::default(), VoxelGridParams::default()), Err(CloudError::Empty));
        let one = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(matches!(voxel_downsample(&one, VoxelGridParams { voxel_size: 0.0 }), Err(CloudError::VoxelSize(_))));
    }

    #[test]
    fn constructor_rejects_nan() {
        assert_eq!(
            PointCloud::new(vec![Point3::origin(), Point3::new(f64::NAN, 0.0, 0.0)]),
            Err(CloudError::NonFinite(1))
        );
    }
}
