//! STL reading and writing (ASCII and little-endian binary).

use super::{MeshError, TriangleMesh, Vec3};

const HEADER_LEN: usize = 80;
const RECORD_LEN: usize = 50;

/// Non-geometric part of a binary STL facet record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlFacetMeta {
    pub normal: [f32; 3],
    pub attribute: u16,
}

/// Parses an STL file into a raw triangle soup (three vertex slots per
/// facet, nothing merged). Embedded normals are ignored for geometry;
/// normals are recomputed from the winding.
///
/// A file is read as ASCII only when it starts with `solid` *and* its
/// length disagrees with the binary layout, since binary headers may
/// legally begin with `solid` too.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    if bytes.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let binary_consistent = bytes.len() >= HEADER_LEN + 4 && {
        let count = read_u32(bytes, HEADER_LEN) as u64;
        (HEADER_LEN as u64 + 4 + RECORD_LEN as u64 * count) == bytes.len() as u64
    };
    if bytes.starts_with(b"solid") && !binary_consistent {
        parse_ascii(bytes)
    } else {
        parse_binary(bytes)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn parse_binary(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(MeshError::TruncatedBinary {
            declared: 0,
            available: 0,
            len: bytes.len(),
        });
    }
    let declared = read_u32(bytes, HEADER_LEN) as u64;
    let available = ((bytes.len() - HEADER_LEN - 4) / RECORD_LEN) as u64;
    if declared > available {
        return Err(MeshError::TruncatedBinary {
            declared,
            available,
            len: bytes.len(),
        });
    }
    if declared == 0 {
        return Err(MeshError::EmptyMesh);
    }
    let count = declared as usize;
    let mut triangles = Vec::with_capacity(count);
    let mut meta = Vec::with_capacity(count);
    for f in 0..count {
        let rec = HEADER_LEN + 4 + f * RECORD_LEN;
        let normal = [
            read_f32(bytes, rec),
            read_f32(bytes, rec + 4),
            read_f32(bytes, rec + 8),
        ];
        let mut tri = [Vec3::ZERO; 3];
        for (v, slot) in tri.iter_mut().enumerate() {
            let at = rec + 12 + v * 12;
            *slot = Vec3::new(
                read_f32(bytes, at) as f64,
                read_f32(bytes, at + 4) as f64,
                read_f32(bytes, at + 8) as f64,
            );
            if !slot.is_finite() {
                return Err(MeshError::NonFiniteVertex { facet: f });
            }
        }
        let attribute = u16::from_le_bytes([bytes[rec + 48], bytes[rec + 49]]);
        triangles.push(tri);
        meta.push(StlFacetMeta { normal, attribute });
    }
    let mut mesh = TriangleMesh::from_triangles(&triangles);
    mesh.stl_meta = Some(meta);
    Ok(mesh)
}

struct Tokens<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    current: std::vec::IntoIter<&'a str>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            current: Vec::new().into_iter(),
            line: 0,
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        loop {
            if let Some(t) = self.current.next() {
                return Some(t);
            }
            let (i, l) = self.lines.next()?;
            self.line = i + 1;
            self.current = l.split_whitespace().collect::<Vec<_>>().into_iter();
        }
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::MalformedAscii {
            line: self.line,
            message: message.into(),
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), MeshError> {
        match self.next() {
            Some(t) if t.eq_ignore_ascii_case(word) => Ok(()),
            Some(t) => Err(self.err(format!("expected `{word}`, found `{t}`"))),
            None => Err(self.err(format!("expected `{word}`, found end of file"))),
        }
    }

    fn float(&mut self) -> Result<f64, MeshError> {
        let t = self
            .next()
            .ok_or_else(|| self.err("expected a number, found end of file"))?;
        t.parse::<f64>()
            .map_err(|_| self.err(format!("`{t}` is not a number")))
    }
}

fn parse_ascii(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        MeshError::MalformedAscii {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;
    let mut toks = Tokens::new(text);
    let mut triangles = Vec::new();
    let mut in_solid = false;
    while let Some(tok) = toks.next() {
        let lower = tok.to_ascii_lowercase();
        match lower.as_str() {
            "solid" if !in_solid => {
                in_solid = true;
                // The solid name runs to the end of the line.
                toks.current = Vec::new().into_iter();
            }
            "endsolid" if in_solid => {
                in_solid = false;
                toks.current = Vec::new().into_iter();
            }
            "facet" if in_solid => {
                toks.expect("normal")?;
                for _ in 0..3 {
                    toks.float()?;
                }
                toks.expect("outer")?;
                toks.expect("loop")?;
                let mut tri = [Vec3::ZERO; 3];
                for slot in tri.iter_mut() {
                    toks.expect("vertex")?;
                    *slot = Vec3::new(toks.float()?, toks.float()?, toks.float()?);
                    if !slot.is_finite() {
                        return Err(toks.err("non-finite vertex coordinate"));
                    }
                }
                toks.expect("endloop")?;
                toks.expect("endfacet")?;
                triangles.push(tri);
            }
            _ => return Err(toks.err(format!("unexpected token `{tok}`"))),
        }
    }
    if in_solid {
        return Err(toks.err("missing `endsolid`"));
    }
    if triangles.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    Ok(TriangleMesh::from_triangles(&triangles))
}

/// Binary STL. The 80-byte header is `header` truncated or zero-padded.
/// Facets carry the parsed normal/attribute payload when the mesh still has
/// it, otherwise the recomputed normal and a zero attribute.
pub fn write_stl_binary(mesh: &TriangleMesh, header: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + RECORD_LEN * mesh.faces.len());
    let mut head = [0u8; HEADER_LEN];
    let n = header.len().min(HEADER_LEN);
    head[..n].copy_from_slice(&header[..n]);
    out.extend_from_slice(&head);
    out.extend_from_slice(&(mesh.faces.len() as u32).to_le_bytes());
    let meta = mesh
        .stl_meta
        .as_ref()
        .filter(|m| m.len() == mesh.faces.len());
    for (i, tri) in (0..mesh.faces.len()).map(|i| (i, mesh.triangle(i))) {
        let (normal, attribute) = match meta {
            Some(m) => (m[i].normal, m[i].attribute),
            None => {
                let n = mesh.face_normals[i];
                ([n.x as f32, n.y as f32, n.z as f32], 0)
            }
        };
        for c in normal {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in tri {
            for c in v.to_array() {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&attribute.to_le_bytes());
    }
    out
}

pub fn write_stl_ascii(mesh: &TriangleMesh, name: &str) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "solid {name}");
    for i in 0..mesh.faces.len() {
        let n = mesh.face_normals[i];
        let _ = writeln!(s, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z);
        s.push_str("    outer loop\n");
        for v in mesh.triangle(i) {
            let _ = writeln!(s, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z);
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid {name}");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_FACET: &str = "solid t\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n  endloop\n endfacet\nendsolid t\n";

    fn record(normal: [f32; 3], verts: [[f32; 3]; 3], attr: u16) -> Vec<u8> {
        let mut r = Vec::new();
        for c in normal {
            r.extend_from_slice(&c.to_le_bytes());
        }
        for v in verts {
            for c in v {
                r.extend_from_slice(&c.to_le_bytes());
            }
        }
        r.extend_from_slice(&attr.to_le_bytes());
        assert_eq!(r.len(), 50);
        r
    }

    fn binary(count: u32, records: &[Vec<u8>], header: &[u8]) -> Vec<u8> {
        let mut b = vec![0u8; 80];
        b[..header.len()].copy_from_slice(header);
        b.extend_from_slice(&count.to_le_bytes());
        for r in records {
            b.extend_from_slice(r);
        }
        b
    }

    #[test]
    fn ascii_single_facet() {
        let m = parse_stl(ONE_FACET.as_bytes()).unwrap();
        assert_eq!(m.faces.len(), 1);
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.vertices[1], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(m.face_normals[0], Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn binary_two_facets_field_by_field() {
        let r0 = record([9.0, 9.0, 9.0], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 7);
        let r1 = record([0.0; 3], [[0.0, 0.0, 1.5], [0.25, -2.0, 1.0], [3.0, 1.0, -0.5]], 0);
        let bytes = binary(2, &[r0, r1], b"test header");
        let m = parse_stl(&bytes).unwrap();
        assert_eq!(m.faces.len(), 2);
        assert_eq!(m.vertices.len(), 6);
        assert_eq!(m.vertices[3], Vec3::new(0.0, 0.0, 1.5));
        assert_eq!(m.vertices[4], Vec3::new(0.25, -2.0, 1.0));
        assert_eq!(m.vertices[5], Vec3::new(3.0, 1.0, -0.5));
        // embedded normal (9,9,9) is ignored for geometry
        assert_eq!(m.face_normals[0], Vec3::new(0.0, 0.0, 1.0));
        let meta = m.stl_meta.as_ref().unwrap();
        assert_eq!(meta[0].attribute, 7);
        assert_eq!(meta[0].normal, [9.0, 9.0, 9.0]);
    }

    #[test]
    fn binary_starting_with_solid_is_still_binary() {
        let r0 = record([0.0; 3], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 0);
        let bytes = binary(1, &[r0], b"solid but actually binary");
        let m = parse_stl(&bytes).unwrap();
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn truncated_binary() {
        let r = record([0.0; 3], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 0);
        let bytes = binary(5, &[r.clone(), r.clone(), r], b"");
        assert!(matches!(
            parse_stl(&bytes),
            Err(MeshError::TruncatedBinary {
                declared: 5,
                available: 3,
                ..
            })
        ));
        assert!(matches!(
            parse_stl(&[1, 2, 3]),
            Err(MeshError::TruncatedBinary { .. })
        ));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_stl(&[]), Err(MeshError::EmptyMesh));
        assert_eq!(parse_stl(&binary(0, &[], b"")), Err(MeshError::EmptyMesh));
        assert_eq!(
            parse_stl(b"solid x\nendsolid x\n"),
            Err(MeshError::EmptyMesh)
        );
    }

    #[test]
    fn malformed_ascii_reports_line() {
        let bad = ONE_FACET.replace("vertex 1 0 0", "vertex 1 zero 0");
        match parse_stl(bad.as_bytes()) {
            Err(MeshError::MalformedAscii { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        let missing_end = ONE_FACET.replace("endsolid t\n", "");
        assert!(matches!(
            parse_stl(missing_end.as_bytes()),
            Err(MeshError::MalformedAscii { .. })
        ));
    }

    #[test]
    fn binary_round_trip_is_byte_identical() {
        let r0 = record([0.1, 0.2, 0.3], [[0.1, 0.0, 0.0], [1.0, 1e-7, 0.0], [0.0, 1.0, 3.3]], 42);
        let r1 = record([0.0; 3], [[5.0, 5.0, 5.0], [6.0, 5.0, 5.0], [5.0, 6.0, 5.0]], 65535);
        let bytes = binary(2, &[r0, r1], b"original header");
        let m = parse_stl(&bytes).unwrap();
        let out = write_stl_binary(&m, b"normalized");
        assert_eq!(out.len(), bytes.len());
        assert_eq!(&out[80..], &bytes[80..]);
    }

    #[test]
    fn ascii_writer_parses_back() {
        let m = parse_stl(ONE_FACET.as_bytes()).unwrap();
        let text = write_stl_ascii(&m, "again");
        let back = parse_stl(text.as_bytes()).unwrap();
        assert_eq!(back.vertices, m.vertices);
    }
}
