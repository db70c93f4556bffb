//! Closed, outward-oriented primitive meshes used as fixtures and for
//! synthetic datasets.

use std::collections::HashMap;

use super::{TriangleMesh, Vec3};

/// Axis-aligned box centred at the origin, 12 triangles.
pub fn cuboid(dx: f64, dy: f64, dz: f64) -> TriangleMesh {
    let (hx, hy, hz) = (dx / 2.0, dy / 2.0, dz / 2.0);
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { -hz } else { hz },
            )
        })
        .collect();
    // each quad listed counter-clockwise seen from outside
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh::new(vertices, faces)
}

pub fn cube(side: f64) -> TriangleMesh {
    cuboid(side, side, side)
}

/// Unit cube with the two triangles of its `-z` face removed.
pub fn cube_missing_face() -> TriangleMesh {
    cube(1.0).without_face(0).without_face(0)
}

/// Subdivided icosahedron projected onto a sphere of the given radius.
/// `level` 0 has 20 faces; each level quadruples the count.
pub fn icosphere(level: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| {
        let v = Vec3::from(p);
        v * (1.0 / v.norm())
    })
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (vertices[a] + vertices[b]) * 0.5;
                vertices.push(m * (1.0 / m.norm()));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(vertices, faces)
}

/// Icosphere scaled per axis into an ellipsoid with the given semi-axes.
pub fn ellipsoid(level: u32, ax: f64, ay: f64, az: f64) -> TriangleMesh {
    let s = icosphere(level, 1.0);
    let vertices = s
        .vertices
        .iter()
        .map(|v| Vec3::new(v.x * ax, v.y * ay, v.z * az))
        .collect();
    TriangleMesh::new(vertices, s.faces)
}
