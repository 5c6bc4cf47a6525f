use serde::{Deserialize, Serialize};

use super::{Mesh, Point3};
use crate::{Error, Result};

/// Uniform scale plus translation. `to_original` maps normalized coordinates
/// back: `x = n * scale + center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub center: Point3,
    pub scale: f64,
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        center: [0.0; 3],
        scale: 1.0,
    };

    pub fn to_normalized(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
            (p[2] - self.center[2]) / self.scale,
        ]
    }

    pub fn to_original(&self, p: &Point3) -> Point3 {
        [
            p[0] * self.scale + self.center[0],
            p[1] * self.scale + self.center[1],
            p[2] * self.scale + self.center[2],
        ]
    }

    /// Apply `to_normalized` to every vertex, keeping faces.
    pub fn normalize_mesh(&self, mesh: &Mesh) -> Result<Mesh> {
        mesh.with_vertices(mesh.vertices().iter().map(|p| self.to_normalized(p)).collect())
    }
}

/// Center the bounding box at the origin and scale the longest axis to span
/// `[-0.5, 0.5]`.
pub fn normalize_unit_cube(mesh: &Mesh) -> Result<(Mesh, AffineTransform)> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::DegenerateGeometry("mesh has no vertices".into()))?;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::DegenerateGeometry(
            "all vertices coincide; cannot normalize".into(),
        ));
    }
    let t = AffineTransform {
        center: [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ],
        scale: extent,
    };
    Ok((t.normalize_mesh(mesh)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures;

    fn boxed(sx: f64, sy: f64, sz: f64, offset: f64) -> Mesh {
        let cube = fixtures::cube();
        cube.with_vertices(
            cube.vertices()
                .iter()
                .map(|p| {
                    [
                        (p[0] + 0.5) * sx + offset,
                        (p[1] + 0.5) * sy + offset,
                        (p[2] + 0.5) * sz + offset,
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cube_0_to_2() {
        let (n, t) = normalize_unit_cube(&boxed(2.0, 2.0, 2.0, 0.0)).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert_eq!(lo, [-0.5; 3]);
        assert_eq!(hi, [0.5; 3]);
        assert_eq!(t.center, [1.0; 3]);
        assert_eq!(t.scale, 2.0);
    }

    #[test]
    fn already_normalized_is_identity() {
        let m = fixtures::cube();
        let (n, t) = normalize_unit_cube(&m).unwrap();
        assert_eq!(n, m);
        assert_eq!(t, AffineTransform::IDENTITY);
    }

    #[test]
    fn elongated_box() {
        let (n, _) = normalize_unit_cube(&boxed(4.0, 1.0, 1.0, 3.0)).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert_eq!(hi[0] - lo[0], 1.0);
        assert_eq!(hi[1] - lo[1], 0.25);
        assert_eq!(hi[2] - lo[2], 0.25);
        assert_eq!(lo[1], -0.125);
    }

    #[test]
    fn transform_inverts() {
        let m = fixtures::object("cleanser", 5).unwrap();
        let (n, t) = normalize_unit_cube(&m).unwrap();
        for (a, b) in n.vertices().iter().zip(m.vertices()) {
            let back = t.to_original(a);
            for k in 0..3 {
                assert!((back[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_extent_is_degenerate() {
        let m = Mesh::new(vec![[1.0; 3]; 3], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(normalize_unit_cube(&m), Err(Error::DegenerateGeometry(_))));
    }
}
