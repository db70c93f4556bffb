//! Triangle meshes: STL ingestion, vertex merging and the geometric
//! feasibility checks that gate a design's admission to the pipeline.

mod shapes;
mod stl;
mod topology;

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use shapes::{cube, cube_missing_face, cuboid, ellipsoid, icosphere};
pub use stl::{parse_stl, write_stl_ascii, write_stl_binary, StlFacetMeta};
pub use topology::{merge_vertices, surface_areas, validate_feasibility, SurfaceAreas};

/// Default vertex-merge resolution in metres.
pub const DEFAULT_MERGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("binary STL declares {declared} facets but only {available} fit in {len} bytes")]
    TruncatedBinary {
        declared: u64,
        available: u64,
        len: usize,
    },
    #[error("malformed ASCII STL at line {line}: {message}")]
    MalformedAscii { line: usize, message: String },
    #[error("STL contains no facets")]
    EmptyMesh,
    #[error("facet {facet} has a non-finite vertex coordinate")]
    NonFiniteVertex { facet: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Unit normal from vertex winding, or zero for a degenerate face.
pub fn face_normal(a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let n = (b - a).cross(c - a);
    let len = n.norm();
    if len > 0.0 && len.is_finite() {
        n * (1.0 / len)
    } else {
        Vec3::ZERO
    }
}

/// Indexed triangle mesh.
///
/// A freshly parsed mesh is a raw soup with three vertex slots per face;
/// [`merge_vertices`] turns it into a shared-vertex mesh suitable for
/// topology checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub face_normals: Vec<Vec3>,
    /// Faces dropped by vertex merging because they collapsed to fewer than
    /// three distinct vertices.
    pub collapsed_faces: usize,
    /// Per-facet STL payload that does not affect geometry (embedded normal
    /// and attribute word), kept so binary output can reproduce the input.
    /// Cleared by any operation that changes the face list.
    pub stl_meta: Option<Vec<StlFacetMeta>>,
}

impl TriangleMesh {
    /// Builds a mesh from vertices and faces, recomputing normals.
    ///
    /// Panics if a face index is out of range.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        for f in &faces {
            for &i in f {
                assert!(i < vertices.len(), "face index {i} out of range");
            }
        }
        let face_normals = faces
            .iter()
            .map(|f| face_normal(vertices[f[0]], vertices[f[1]], vertices[f[2]]))
            .collect();
        Self {
            vertices,
            faces,
            face_normals,
            collapsed_faces: 0,
            stl_meta: None,
        }
    }

    /// Raw soup with three fresh vertices per triangle.
    pub fn from_triangles(triangles: &[[Vec3; 3]]) -> Self {
        let mut vertices = Vec::with_capacity(triangles.len() * 3);
        let mut faces = Vec::with_capacity(triangles.len());
        for t in triangles {
            let base = vertices.len();
            vertices.extend_from_slice(t);
            faces.push([base, base + 1, base + 2]);
        }
        Self::new(vertices, faces)
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Copy with one face removed.
    pub fn without_face(&self, face: usize) -> Self {
        let mut faces = self.faces.clone();
        faces.remove(face);
        let mut m = TriangleMesh::new(self.vertices.clone(), faces);
        m.collapsed_faces = self.collapsed_faces;
        m
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                Vec3::new(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z)),
                Vec3::new(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z)),
            )
        }))
    }
}

/// Outcome of the watertight/manifold assessment. Surface self-intersection
/// is not checked; `self_intersection_checked` is always `false` so the gap
/// shows up in every serialized report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub is_watertight: bool,
    pub boundary_edge_count: usize,
    pub non_manifold_edge_count: usize,
    pub degenerate_face_count: usize,
    pub is_consistently_oriented: bool,
    pub vertex_count: usize,
    pub edge_count: usize,
    pub face_count: usize,
    pub euler_characteristic: i64,
    pub self_intersection_checked: bool,
}
