//! OBJ and PLY readers/writers.
//!
//! PLY files written here use the header tokens listed in `docs/formats.md`:
//! `double x/y/z`, optional `double nx/ny/nz`, optional `uchar red/green/blue`,
//! optional `uchar part_label`, and `property list uchar int vertex_indices`.
//! The reader accepts any scalar type for those properties, `float`/`double`
//! colors in [0,1], and `vertex_index` as an alias for the face list.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Location, Mesh, MeshError, MeshResult, PartLabel, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> MeshResult<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            _ => Err(MeshError::UnsupportedFormat(path.display().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

pub fn load_mesh(path: &Path) -> MeshResult<Mesh> {
    let bytes = fs::read(path)?;
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => load_obj(&bytes),
        MeshFormat::Ply => load_ply(&bytes),
    }
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> MeshResult<()> {
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => save_obj(mesh),
        MeshFormat::Ply => save_ply(mesh, PlyEncoding::BinaryLittleEndian),
    };
    fs::write(path, bytes)?;
    Ok(())
}

fn obj_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        format: "OBJ",
        location: Location::Line(line),
        message: message.into(),
    }
}

/// Parses positions and faces. Polygons are fan-triangulated; texture and
/// normal indices in `v/vt/vn` references are ignored.
pub fn load_obj(bytes: &[u8]) -> MeshResult<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| obj_err(0, format!("not UTF-8: {e}")))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let t = tok.next().ok_or_else(|| obj_err(lineno, "vertex needs 3 coordinates"))?;
                    *c = t
                        .parse()
                        .map_err(|_| obj_err(lineno, format!("bad coordinate '{t}'")))?;
                }
                vertices.push(Vec3::from(p));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| obj_err(lineno, format!("bad face index '{t}'")))?;
                    let resolved = match i {
                        0 => return Err(obj_err(lineno, "face index 0 is invalid in OBJ")),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved > u32::MAX as i64 {
                        return Err(MeshError::Validation(format!(
                            "line {lineno}: face index {i} out of range"
                        )));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(obj_err(lineno, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn save_obj(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::new();
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

pub fn save_ply(mesh: &Mesh, encoding: PlyEncoding) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\ncomment parttex").unwrap();
    writeln!(out, "element vertex {}", mesh.vertex_count()).unwrap();
    writeln!(out, "property double x\nproperty double y\nproperty double z").unwrap();
    if mesh.normals().is_some() {
        writeln!(out, "property double nx\nproperty double ny\nproperty double nz").unwrap();
    }
    if mesh.colors().is_some() {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue").unwrap();
    }
    if mesh.labels().is_some() {
        writeln!(out, "property uchar part_label").unwrap();
    }
    writeln!(out, "element face {}", mesh.face_count()).unwrap();
    writeln!(out, "property list uchar int vertex_indices\nend_header").unwrap();

    let to_u8 = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    for i in 0..mesh.vertex_count() {
        let mut doubles: Vec<f64> = mesh.vertices()[i].iter().copied().collect();
        if let Some(n) = mesh.normals() {
            doubles.extend(n[i].iter());
        }
        let mut bytes: Vec<u8> = Vec::new();
        if let Some(c) = mesh.colors() {
            bytes.extend(c[i].iter().map(|&x| to_u8(x)));
        }
        if let Some(l) = mesh.labels() {
            bytes.push(l[i].code());
        }
        match encoding {
            PlyEncoding::Ascii => {
                let items: Vec<String> = doubles
                    .iter()
                    .map(|d| d.to_string())
                    .chain(bytes.iter().map(|b| b.to_string()))
                    .collect();
                writeln!(out, "{}", items.join(" ")).unwrap();
            }
            PlyEncoding::BinaryLittleEndian => {
                for d in doubles {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                out.extend_from_slice(&bytes);
            }
        }
    }
    for f in mesh.faces() {
        match encoding {
            PlyEncoding::Ascii => writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap(),
            PlyEncoding::BinaryLittleEndian => {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Binary { little: bool },
}

fn ply_err(location: Location, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        format: "PLY",
        location,
        message: message.into(),
    }
}

/// Byte-oriented reader over the body of a PLY file.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: Encoding,
    line: usize,
}

impl<'a> Body<'a> {
    fn loc(&self) -> Location {
        match self.encoding {
            Encoding::Ascii => Location::Line(self.line),
            Encoding::Binary { .. } => Location::Byte(self.pos as u64),
        }
    }

    fn next_token(&mut self) -> MeshResult<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            if self.bytes[self.pos] == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(ply_err(self.loc(), "unexpected end of data"));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| ply_err(self.loc(), "non-UTF-8 token"))
    }

    fn read(&mut self, ty: Scalar) -> MeshResult<f64> {
        match self.encoding {
            Encoding::Ascii => {
                let loc = self.loc();
                let t = self.next_token()?;
                if ty.is_float() {
                    t.parse::<f64>().map_err(|_| ply_err(loc, format!("bad number '{t}'")))
                } else {
                    t.parse::<i64>()
                        .map(|v| v as f64)
                        .map_err(|_| ply_err(loc, format!("bad integer '{t}'")))
                }
            }
            Encoding::Binary { little } => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(ply_err(self.loc(), "unexpected end of binary data"));
                }
                let mut buf = [0u8; 8];
                buf[..n].copy_from_slice(&self.bytes[self.pos..self.pos + n]);
                if !little {
                    buf[..n].reverse();
                }
                self.pos += n;
                Ok(match ty {
                    Scalar::I8 => buf[0] as i8 as f64,
                    Scalar::U8 => buf[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                    Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                    Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                    Scalar::F64 => f64::from_le_bytes(buf),
                })
            }
        }
    }
}

fn parse_header(bytes: &[u8]) -> MeshResult<(Encoding, Vec<Element>, usize)> {
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| ply_err(Location::Byte(0), "missing end_header"))?;
    let mut body_start = end + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| ply_err(Location::Byte(0), "header is not UTF-8"))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(ply_err(Location::Line(1), "missing 'ply' magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines {
        let loc = Location::Line(i + 1);
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _ver] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { little: true },
                    "binary_big_endian" => Encoding::Binary { little: false },
                    other => return Err(ply_err(loc, format!("unknown format '{other}'"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| ply_err(loc, format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err(loc, "property before element"))?;
                let count = Scalar::parse(count).ok_or_else(|| ply_err(loc, "bad list count type"))?;
                let item = Scalar::parse(item).ok_or_else(|| ply_err(loc, "bad list item type"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err(loc, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| ply_err(loc, format!("bad type '{ty}'")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(ply_err(loc, format!("unrecognized header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| ply_err(Location::Line(1), "missing format line"))?;
    Ok((encoding, elements, body_start))
}

/// Parses ASCII or binary (either endianness) PLY.
pub fn load_ply(bytes: &[u8]) -> MeshResult<Mesh> {
    let (encoding, elements, body_start) = parse_header(bytes)?;
    let header_lines = bytes[..body_start].iter().filter(|&&b| b == b'\n').count();
    let mut body = Body {
        bytes,
        pos: body_start,
        encoding,
        line: header_lines + 1,
    };

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut faces = Vec::new();
    let (mut has_normals, mut has_colors, mut has_labels) = (false, false, false);

    for el in &elements {
        let idx = |n: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
        };
        let (px, py, pz) = (idx("x"), idx("y"), idx("z"));
        let normal_idx = [idx("nx"), idx("ny"), idx("nz")];
        let color_idx = [idx("red"), idx("green"), idx("blue")];
        let label_idx = idx("part_label");
        if el.name == "vertex" {
            if px.is_none() || py.is_none() || pz.is_none() {
                return Err(ply_err(Location::Line(1), "vertex element lacks x/y/z"));
            }
            has_normals = normal_idx.iter().all(Option::is_some);
            has_colors = color_idx.iter().all(Option::is_some);
            has_labels = label_idx.is_some();
        }
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            let mut face_list: Option<Vec<f64>> = None;
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => values[k] = body.read(*ty)?,
                    Property::List { name, count, item } => {
                        let loc = body.loc();
                        let n = body.read(*count)?;
                        if n < 0.0 {
                            return Err(ply_err(loc, "negative list length"));
                        }
                        let items = (0..n as usize)
                            .map(|_| body.read(*item))
                            .collect::<MeshResult<Vec<_>>>()?;
                        if name == "vertex_indices" || name == "vertex_index" {
                            face_list = Some(items);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    vertices.push(Vec3::new(values[px.unwrap()], values[py.unwrap()], values[pz.unwrap()]));
                    if has_normals {
                        normals.push(Vec3::from(normal_idx.map(|i| values[i.unwrap()])));
                    }
                    if has_colors {
                        let c = color_idx.map(|i| {
                            let i = i.unwrap();
                            match &el.props[i] {
                                Property::Scalar { ty, .. } if ty.is_float() => values[i],
                                Property::Scalar { ty: Scalar::U16, .. } => values[i] / 65535.0,
                                _ => values[i] / 255.0,
                            }
                        });
                        colors.push(Vec3::from(c));
                    }
                    if let Some(li) = label_idx {
                        let code = values[li];
                        let label = PartLabel::from_code(code as u8)
                            .filter(|_| code >= 0.0 && code.fract() == 0.0)
                            .ok_or_else(|| {
                                MeshError::Validation(format!("part_label {code} out of range"))
                            })?;
                        labels.push(label);
                    }
                }
                "face" => {
                    let list = face_list
                        .ok_or_else(|| ply_err(body.loc(), "face element lacks vertex_indices"))?;
                    if list.len() < 3 {
                        return Err(ply_err(body.loc(), "face with fewer than 3 vertices"));
                    }
                    let idx = list
                        .iter()
                        .map(|&i| {
                            if i < 0.0 || i > u32::MAX as f64 {
                                Err(MeshError::Validation(format!("face index {i} out of range")))
                            } else {
                                Ok(i as u32)
                            }
                        })
                        .collect::<MeshResult<Vec<u32>>>()?;
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }

    let mut mesh = Mesh::new(vertices, faces)?;
    if has_normals {
        // Normals written by other tools are often only approximately unit.
        let normals = normals
            .into_iter()
            .map(|n: Vec3| if n.norm() > 0.0 { n.normalize() } else { Vec3::z() })
            .collect();
        mesh = mesh.with_normals(normals)?;
    }
    if has_colors {
        mesh = mesh.with_colors(colors)?;
    }
    if has_labels {
        mesh = mesh.with_labels(labels)?;
    }
    Ok(mesh)
}
