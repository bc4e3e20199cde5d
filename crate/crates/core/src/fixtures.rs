//! Procedural meshes used by tests, benches and the CLI's synthetic runs.

use std::collections::HashMap;

use crate::mesh::{Mesh, Vec3};

/// Unit cube `[0,1]^3`, 8 vertices and 12 outward-facing triangles.
///
/// Every square is split along the diagonal joining its two even-parity
/// corners (`x+y+z` even), so each corner receives the same triangle area
/// from all three of its squares.
pub fn unit_cube() -> Mesh {
    let vertices = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 1.0],
    ]
    .map(Vec3::from)
    .to_vec();
    let faces = vec![
        [0, 3, 2],
        [0, 2, 1],
        [5, 6, 7],
        [5, 7, 4],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 5],
        [2, 5, 1],
        [2, 3, 7],
        [2, 7, 6],
        [0, 4, 7],
        [0, 7, 3],
    ];
    Mesh::new(vertices, faces).expect("cube fixture is valid")
}

/// Unit-radius icosphere centered at the origin.
///
/// `subdivisions` = 0 gives the icosahedron (12 vertices); each level
/// quadruples the face count. Level 4 has 2562 vertices.
pub fn icosphere(subdivisions: u32) -> Mesh {
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
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(vertices, faces).expect("icosphere fixture is valid")
}

/// Cube `[-1,1]^3` whose six sides are independent `n`×`n` quad grids that
/// share no vertices. Returns the mesh and, per vertex, the side it belongs
/// to (0..6 in the order -x, +x, -y, +y, -z, +z).
pub fn faceted_cube(n: usize) -> (Mesh, Vec<usize>) {
    assert!(n >= 1);
    let mut vertices = Vec::new();
    let mut side_of = Vec::new();
    let mut faces = Vec::new();
    for side in 0..6 {
        let axis = side / 2;
        let sign = if side % 2 == 0 { -1.0 } else { 1.0 };
        let (u_axis, v_axis) = ((axis + 1) % 3, (axis + 2) % 3);
        let base = vertices.len() as u32;
        for j in 0..=n {
            for i in 0..=n {
                let mut p = Vec3::zeros();
                p[axis] = sign;
                p[u_axis] = -1.0 + 2.0 * i as f64 / n as f64;
                p[v_axis] = -1.0 + 2.0 * j as f64 / n as f64;
                vertices.push(p);
                side_of.push(side);
            }
        }
        let idx = |i: usize, j: usize| base + (j * (n + 1) + i) as u32;
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                // (u, v, axis) is right-handed, so CCW in (u,v) faces +axis.
                if sign > 0.0 {
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                } else {
                    faces.push([a, c, b]);
                    faces.push([a, d, c]);
                }
            }
        }
    }
    let mesh = Mesh::new(vertices, faces).expect("faceted cube fixture is valid");
    (mesh, side_of)
}

/// Flat `n`×`n` grid in the z=0 plane spanning `[-1,1]^2`, facing +z.
pub fn grid_patch(n: usize) -> Mesh {
    let mut vertices = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec3::new(
                -1.0 + 2.0 * i as f64 / n as f64,
                -1.0 + 2.0 * j as f64 / n as f64,
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    let mut faces = Vec::new();
    for j in 0..n {
        for i in 0..n {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new(vertices, faces).expect("grid fixture is valid")
}
