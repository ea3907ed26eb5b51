//! Procedural test meshes: cube, grid plane, icosphere, subdivided box, torus.
//!
//! These back the test suites and the robustness sweeps; none of them are
//! loaded from disk, so every expected quantity has a closed form.

use std::collections::HashMap;

use crate::mesh::{TriMesh, Vec3};

/// Axis-aligned unit cube, 8 vertices and 12 outward-facing triangles.
pub fn unit_cube() -> TriMesh {
    let vertices = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(1.0, 0.0, 1.0),
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(0.0, 1.0, 1.0),
    ];
    let faces = vec![
        [0, 3, 2],
        [0, 2, 1],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriMesh::new(vertices, faces).expect("cube is valid")
}

/// Flat grid in the z=0 plane with `nx` by `ny` cells, two triangles per
/// cell, normals pointing +z.
pub fn grid_plane(nx: usize, ny: usize, spacing: f64) -> TriMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let at = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // alternate the cell diagonal so the triangulation has no
            // preferred direction (keeps discrete operators isotropic)
            if (i + j) % 2 == 0 {
                faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            } else {
                faces.push([at(i, j), at(i + 1, j), at(i, j + 1)]);
                faces.push([at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
    }
    TriMesh::new(vertices, faces).expect("grid is valid")
}

/// Icosphere: subdivided icosahedron with all vertices projected onto the
/// sphere of the given radius. `subdivisions` levels give 20·4^s faces.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
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

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for (e, (a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                .into_iter()
                .enumerate()
            {
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoints.entry(key).or_insert_with(|| {
                    let m = (vertices[a] + vertices[b]).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }

    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Cube surface with each of the six faces split into `divisions`^2 cells
/// (12·divisions^2 triangles). Seam vertices are welded.
pub fn box_grid(divisions: usize, size: f64) -> TriMesh {
    assert!(divisions >= 1);
    let d = divisions;
    let step = size / d as f64;
    let mut vertices: Vec<Vec3> = Vec::new();
    // lattice coordinates are exact small integers, so welding by key is safe
    let mut lattice: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    // (origin, du, dv) with du × dv pointing outward
    let sides: [([usize; 3], [usize; 3], [usize; 3]); 6] = [
        ([0, 0, 0], [0, 1, 0], [1, 0, 0]), // z = 0
        ([0, 0, d], [1, 0, 0], [0, 1, 0]), // z = size
        ([0, 0, 0], [1, 0, 0], [0, 0, 1]), // y = 0
        ([0, d, 0], [0, 0, 1], [1, 0, 0]), // y = size
        ([0, 0, 0], [0, 0, 1], [0, 1, 0]), // x = 0
        ([d, 0, 0], [0, 1, 0], [0, 0, 1]), // x = size
    ];

    for (origin, du, dv) in sides {
        let point = |u: usize, v: usize| {
            (
                origin[0] + u * du[0] + v * dv[0],
                origin[1] + u * du[1] + v * dv[1],
                origin[2] + u * du[2] + v * dv[2],
            )
        };
        let mut index = |key: (usize, usize, usize)| {
            *lattice.entry(key).or_insert_with(|| {
                vertices.push(Vec3::new(
                    key.0 as f64 * step,
                    key.1 as f64 * step,
                    key.2 as f64 * step,
                ));
                vertices.len() - 1
            })
        };
        for u in 0..d {
            for v in 0..d {
                let p00 = index(point(u, v));
                let p10 = index(point(u + 1, v));
                let p11 = index(point(u + 1, v + 1));
                let p01 = index(point(u, v + 1));
                faces.push([p00, p10, p11]);
                faces.push([p00, p11, p01]);
            }
        }
    }
    TriMesh::new(vertices, faces).expect("box grid is valid")
}

/// Torus with `nu` segments around the major circle and `nv` around the
/// tube; 2·nu·nv triangles.
pub fn torus(major_radius: f64, minor_radius: f64, nu: usize, nv: usize) -> TriMesh {
    assert!(nu >= 3 && nv >= 3);
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let ring = major_radius + minor_radius * phi.cos();
            vertices.push(Vec3::new(
                ring * theta.cos(),
                ring * theta.sin(),
                minor_radius * phi.sin(),
            ));
        }
    }
    let at = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let p00 = at(i, j);
            let p10 = at(i + 1, j);
            let p11 = at(i + 1, j + 1);
            let p01 = at(i, j + 1);
            faces.push([p00, p10, p11]);
            faces.push([p00, p11, p01]);
        }
    }
    TriMesh::new(vertices, faces).expect("torus is valid")
}
