//! Procedural meshes used as stand-ins for the six desk objects, plus a few
//! canonical solids for tests.
//!
//! Every desk object is a cube-sphere (a subdivided cube projected onto the
//! unit sphere) pushed through a smooth radial shape map, so all of them are
//! closed genus-0 surfaces with `6·res² + 2` vertices. Lattice coordinates at
//! resolution `res` reappear bit-exactly at resolution `2·res`, which makes
//! coarse and fine templates of the same object share vertices.

use std::collections::HashMap;
use std::f64::consts::TAU;

use super::{normalize_unit_cube, AffineTransform, Face, Mesh, Point3};
use crate::{Error, Result};

pub const OBJECTS: [&str; 6] = ["scissors", "hammer", "foam_brick", "cleanser", "orange", "dice"];

pub fn tetrahedron() -> Mesh {
    Mesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
    )
    .expect("valid tetrahedron")
}

/// Axis-aligned cube spanning `[-0.5, 0.5]³`.
pub fn cube() -> Mesh {
    let (vertices, faces) = cube_sphere_lattice(1);
    let vertices = vertices
        .iter()
        .map(|l| [l[0] * 0.5, l[1] * 0.5, l[2] * 0.5])
        .collect();
    Mesh::new(vertices, faces).expect("valid cube")
}

/// Torus in the xy-plane with `major × minor` quads split into triangles.
pub fn torus(major: usize, minor: usize, major_radius: f64, minor_radius: f64) -> Mesh {
    let mut vertices = Vec::with_capacity(major * minor);
    for i in 0..major {
        let theta = TAU * i as f64 / major as f64;
        for j in 0..minor {
            let phi = TAU * j as f64 / minor as f64;
            let ring = major_radius + minor_radius * phi.cos();
            vertices.push([ring * theta.cos(), ring * theta.sin(), minor_radius * phi.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(vertices, faces).expect("valid torus")
}

/// Surface lattice of the cube `[-1, 1]³` subdivided `res` times per edge.
/// Returns lattice positions and outward-oriented triangles.
fn cube_sphere_lattice(res: usize) -> (Vec<Point3>, Vec<Face>) {
    assert!(res >= 1);
    let n = res as f64;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / n;
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::with_capacity(6 * res * res + 2);
    let mut faces = Vec::with_capacity(12 * res * res);
    let mut vid = |key: [usize; 3], vertices: &mut Vec<Point3>| -> usize {
        *index.entry(key).or_insert_with(|| {
            vertices.push([coord(key[0]), coord(key[1]), coord(key[2])]);
            vertices.len() - 1
        })
    };
    for axis in 0..3 {
        for side in [0, res] {
            // (u, v, axis) right-handed on the positive side, flipped on the negative one.
            let (u_axis, v_axis) = if side == res {
                ((axis + 1) % 3, (axis + 2) % 3)
            } else {
                ((axis + 2) % 3, (axis + 1) % 3)
            };
            let key = |a: usize, b: usize| {
                let mut k = [0; 3];
                k[axis] = side;
                k[u_axis] = a;
                k[v_axis] = b;
                k
            };
            for a in 0..res {
                for b in 0..res {
                    let p00 = vid(key(a, b), &mut vertices);
                    let p10 = vid(key(a + 1, b), &mut vertices);
                    let p11 = vid(key(a + 1, b + 1), &mut vertices);
                    let p01 = vid(key(a, b + 1), &mut vertices);
                    faces.push([p00, p10, p11]);
                    faces.push([p00, p11, p01]);
                }
            }
        }
    }
    (vertices, faces)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn superellipsoid(d: Point3, p: f64) -> Point3 {
    let norm = (d[0].abs().powf(p) + d[1].abs().powf(p) + d[2].abs().powf(p)).powf(1.0 / p);
    [d[0] / norm, d[1] / norm, d[2] / norm]
}

fn shape(name: &str, d: Point3) -> Option<Point3> {
    let [x, y, z] = d;
    Some(match name {
        "scissors" => {
            // long and flat; wide finger loops at -x, tapering blades at +x
            let taper = 1.0 - 0.7 * smoothstep(-0.2, 1.0, x);
            [2.4 * x, 0.55 * y * taper, 0.08 * z]
        }
        "hammer" => {
            // thin handle along x with a transverse head near +x
            let head = smoothstep(0.7, 0.85, x);
            [2.5 * x, y * (0.15 + 0.85 * head), z * (0.15 + 0.15 * head)]
        }
        "foam_brick" => {
            let s = superellipsoid(d, 6.0);
            [s[0], 0.7 * s[1], 0.55 * s[2]]
        }
        "cleanser" => {
            // flat bottle body with a narrowing neck at the top
            let r = 0.8 - 0.45 * smoothstep(0.4, 0.85, z);
            [x * r, 0.6 * y * r, 2.2 * z]
        }
        "orange" => [x, y, 0.9 * z],
        "dice" => superellipsoid(d, 8.0),
        _ => return None,
    })
}

/// Un-normalized desk object at the given cube-sphere resolution.
pub fn object_raw(name: &str, res: usize) -> Result<Mesh> {
    if res == 0 {
        return Err(Error::Config("fixture resolution must be at least 1".into()));
    }
    let (lattice, faces) = cube_sphere_lattice(res);
    let mut vertices = Vec::with_capacity(lattice.len());
    for l in lattice {
        let len = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        let d = [l[0] / len, l[1] / len, l[2] / len];
        let p = shape(name, d).ok_or_else(|| {
            Error::Config(format!(
                "unknown fixture object {name:?}; expected one of {OBJECTS:?}"
            ))
        })?;
        vertices.push(p);
    }
    Mesh::new(vertices, faces)
}

/// Desk object normalized to the unit cube.
pub fn object(name: &str, res: usize) -> Result<Mesh> {
    Ok(normalize_unit_cube(&object_raw(name, res)?)?.0)
}

/// Pair of templates of one object at resolutions `res` and `2·res`, both
/// normalized with the coarse template's transform. Returns the coarse mesh,
/// the fine mesh and, for every coarse vertex, the index of the fine vertex at
/// the same position.
pub fn object_pair(name: &str, res: usize) -> Result<(Mesh, Mesh, Vec<usize>)> {
    let (coarse, t): (Mesh, AffineTransform) = normalize_unit_cube(&object_raw(name, res)?)?;
    let fine = t.normalize_mesh(&object_raw(name, 2 * res)?)?;
    let mut fine_index: HashMap<[u64; 3], usize> = HashMap::new();
    for (i, p) in fine.vertices().iter().enumerate() {
        fine_index.insert(p.map(f64::to_bits), i);
    }
    let matches = coarse
        .vertices()
        .iter()
        .map(|p| {
            fine_index.get(&p.map(f64::to_bits)).copied().ok_or_else(|| {
                Error::InvalidMesh("coarse vertex has no coincident fine vertex".into())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((coarse, fine, matches))
}
