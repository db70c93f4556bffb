//! Vertex welding, edge-based topology checks and face areas.

use std::collections::HashMap;

use super::{FeasibilityReport, TriangleMesh, Vec3};

/// Snaps vertices to a grid of resolution `epsilon` (max-norm cells) and
/// re-indexes faces so that vertices in the same cell share one index. The
/// first vertex seen in a cell keeps its coordinates. With `epsilon == 0`
/// only bit-identical coordinates merge.
///
/// Faces left with fewer than three distinct vertices are dropped and
/// counted in `collapsed_faces`; unreferenced vertices are removed.
pub fn merge_vertices(mesh: &TriangleMesh, epsilon: f64) -> TriangleMesh {
    assert!(epsilon >= 0.0, "merge epsilon must be non-negative");
    let key = |v: Vec3| -> [i64; 3] {
        if epsilon > 0.0 {
            [
                (v.x / epsilon).round() as i64,
                (v.y / epsilon).round() as i64,
                (v.z / epsilon).round() as i64,
            ]
        } else {
            // +0.0 normalises -0.0
            [
                (v.x + 0.0).to_bits() as i64,
                (v.y + 0.0).to_bits() as i64,
                (v.z + 0.0).to_bits() as i64,
            ]
        }
    };

    let mut cell_of: HashMap<[i64; 3], usize> = HashMap::with_capacity(mesh.vertices.len());
    let mut representatives = Vec::new();
    let remap: Vec<usize> = mesh
        .vertices
        .iter()
        .map(|&v| {
            *cell_of.entry(key(v)).or_insert_with(|| {
                representatives.push(v);
                representatives.len() - 1
            })
        })
        .collect();

    let mut faces = Vec::with_capacity(mesh.faces.len());
    let mut collapsed = mesh.collapsed_faces;
    for f in &mesh.faces {
        let g = [remap[f[0]], remap[f[1]], remap[f[2]]];
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            collapsed += 1;
        } else {
            faces.push(g);
        }
    }

    // compact, preserving first-use order
    let mut new_index = vec![usize::MAX; representatives.len()];
    let mut vertices = Vec::with_capacity(representatives.len());
    for f in faces.iter_mut() {
        for i in f.iter_mut() {
            if new_index[*i] == usize::MAX {
                new_index[*i] = vertices.len();
                vertices.push(representatives[*i]);
            }
            *i = new_index[*i];
        }
    }

    let mut out = TriangleMesh::new(vertices, faces);
    out.collapsed_faces = collapsed;
    out
}

/// Edge-incidence assessment of a merged mesh. Never fails; problems are
/// reported as counts.
pub fn validate_feasibility(mesh: &TriangleMesh) -> FeasibilityReport {
    // undirected edge -> (incidences, forward traversals a<b)
    let mut edges: HashMap<(usize, usize), (usize, usize)> =
        HashMap::with_capacity(mesh.faces.len() * 3 / 2 + 1);
    for f in &mesh.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            let entry = edges.entry((a.min(b), a.max(b))).or_insert((0, 0));
            entry.0 += 1;
            if a < b {
                entry.1 += 1;
            }
        }
    }

    let mut boundary = 0;
    let mut non_manifold = 0;
    let mut oriented = true;
    for &(count, forward) in edges.values() {
        match count {
            1 => boundary += 1,
            2 => {
                if forward != 1 {
                    oriented = false;
                }
            }
            _ => non_manifold += 1,
        }
    }

    let areas = surface_areas(mesh);
    let zero_area = mesh
        .faces
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            let [a, b, c] = mesh.triangle(i);
            let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
            areas.per_face[i] <= f64::EPSILON * longest * longest
        })
        .count();

    FeasibilityReport {
        is_watertight: boundary == 0 && non_manifold == 0,
        boundary_edge_count: boundary,
        non_manifold_edge_count: non_manifold,
        degenerate_face_count: mesh.collapsed_faces + zero_area,
        is_consistently_oriented: oriented,
        vertex_count: mesh.vertices.len(),
        edge_count: edges.len(),
        face_count: mesh.faces.len(),
        euler_characteristic: mesh.vertices.len() as i64 - edges.len() as i64
            + mesh.faces.len() as i64,
        self_intersection_checked: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceAreas {
    pub per_face: Vec<f64>,
    pub total: f64,
}

pub fn surface_areas(mesh: &TriangleMesh) -> SurfaceAreas {
    let per_face: Vec<f64> = (0..mesh.faces.len())
        .map(|i| {
            let [a, b, c] = mesh.triangle(i);
            0.5 * (b - a).cross(c - a).norm()
        })
        .collect();
    let total = per_face.iter().sum();
    SurfaceAreas { per_face, total }
}
