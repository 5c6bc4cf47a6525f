//! Meshes, point clouds and the geometric utilities around them.

mod chamfer;
pub mod fixtures;
pub mod io;
mod kdtree;
mod normalize;
mod sampling;
mod topology;

use std::sync::Arc;

use crate::{Error, Result};

pub use chamfer::{chamfer_bruteforce, nearest_bruteforce};
pub use kdtree::KdTree;
pub use normalize::{normalize_unit_cube, AffineTransform};
pub use sampling::{sample_surface, sample_surface_with_faces};
pub use topology::{topology_summary, TopologySummary};

pub type Point3 = [f64; 3];
pub type Face = [usize; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Triangle mesh. Faces are reference counted so that every mesh produced by
/// deforming a template shares the template's index list verbatim.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point3>,
    faces: Arc<[Face]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<Face>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces: faces.into(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex out of range ({f:?}, {n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate ({f:?})")));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// True when both meshes share the same face storage.
    pub fn shares_faces_with(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.faces, &other.faces)
    }

    /// Same faces, new positions. Fails if the vertex count changes or a
    /// position is not finite.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "vertex count changed from {} to {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Numeric(format!("deformed vertex {i} is not finite")));
        }
        Ok(Mesh {
            vertices,
            faces: Arc::clone(&self.faces),
        })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.triangle_area(f)).sum()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        bounds(&self.vertices)
    }
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces[..] == other.faces[..]
    }
}

pub(crate) fn bounds(points: &[Point3]) -> Option<(Point3, Point3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(mut lo, mut hi), p| {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        (lo, hi)
    }))
}

/// Unordered set of 3-D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateGeometry("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Numeric(format!("point {i} is not finite")));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}
