use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Mesh, Point3};
use crate::{rng, Error, Result};

pub const LATTICE_NODES: usize = 27;

/// Thin-plate kernel `r² ln r`, zero at the origin.
#[inline]
pub fn thin_plate(r2: f64) -> f64 {
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

/// Continuous displacement field interpolating 27 lattice displacements with
/// a thin-plate RBF plus a linear polynomial.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    nodes: [Point3; LATTICE_NODES],
    displacements: [Point3; LATTICE_NODES],
    /// Kernel weight per node and output component.
    rbf_weights: [Point3; LATTICE_NODES],
    /// `[constant, x, y, z]` coefficients per output component.
    poly: [Point3; 4],
}

/// Regular 3×3×3 lattice over `[-0.5, 0.5]³`, x fastest.
pub fn lattice() -> [Point3; LATTICE_NODES] {
    let mut nodes = [[0.0; 3]; LATTICE_NODES];
    let coord = [-0.5, 0.0, 0.5];
    for (i, node) in nodes.iter_mut().enumerate() {
        *node = [coord[i % 3], coord[(i / 3) % 3], coord[i / 9]];
    }
    nodes
}

impl WarpField {
    /// Solve the interpolation system for given lattice displacements.
    pub fn from_displacements(displacements: [Point3; LATTICE_NODES]) -> Result<Self> {
        let nodes = lattice();
        let n = LATTICE_NODES;
        let size = n + 4;
        let mut a = DMatrix::<f64>::zeros(size, size);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = thin_plate(crate::geometry::dist2(&nodes[i], &nodes[j]));
            }
            let p = [1.0, nodes[i][0], nodes[i][1], nodes[i][2]];
            for (k, v) in p.iter().enumerate() {
                a[(i, n + k)] = *v;
                a[(n + k, i)] = *v;
            }
        }
        let lu = a.lu();
        let mut rbf_weights = [[0.0; 3]; LATTICE_NODES];
        let mut poly = [[0.0; 3]; 4];
        for comp in 0..3 {
            let mut rhs = DVector::<f64>::zeros(size);
            for i in 0..n {
                rhs[i] = displacements[i][comp];
            }
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Numeric("singular RBF interpolation system".into()))?;
            for i in 0..n {
                rbf_weights[i][comp] = sol[i];
            }
            for k in 0..4 {
                poly[k][comp] = sol[n + k];
            }
        }
        Ok(WarpField {
            nodes,
            displacements,
            rbf_weights,
            poly,
        })
    }

    pub fn identity() -> Self {
        Self::from_displacements([[0.0; 3]; LATTICE_NODES]).expect("lattice system is regular")
    }

    pub fn nodes(&self) -> &[Point3; LATTICE_NODES] {
        &self.nodes
    }

    pub fn node_displacements(&self) -> &[Point3; LATTICE_NODES] {
        &self.displacements
    }

    pub fn rbf_weights(&self) -> &[Point3; LATTICE_NODES] {
        &self.rbf_weights
    }

    /// `[constant, x, y, z]` polynomial coefficients per component.
    pub fn polynomial(&self) -> &[Point3; 4] {
        &self.poly
    }

    pub fn displacement_at(&self, p: &Point3) -> Point3 {
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = self.poly[0][k]
                + self.poly[1][k] * p[0]
                + self.poly[2][k] * p[1]
                + self.poly[3][k] * p[2];
        }
        for (node, w) in self.nodes.iter().zip(&self.rbf_weights) {
            let phi = thin_plate(crate::geometry::dist2(p, node));
            for k in 0..3 {
                out[k] += w[k] * phi;
            }
        }
        out
    }

    /// Largest interpolation error over the lattice nodes.
    pub fn node_residual(&self) -> f64 {
        self.nodes
            .iter()
            .zip(&self.displacements)
            .map(|(n, d)| {
                let u = self.displacement_at(n);
                (0..3).fold(0.0f64, |m, k| m.max((u[k] - d[k]).abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// Lattice displacements drawn i.i.d. from `N(0, sigma²)`.
pub fn sample_warp_field(seed: u64, sigma: f64) -> Result<WarpField> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("warp sigma must be positive, got {sigma}")));
    }
    let mut rng = rng::rng_for(seed, &[0x3a59]);
    let mut d = [[0.0; 3]; LATTICE_NODES];
    for node in d.iter_mut() {
        for c in node.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *c = sigma * z;
        }
    }
    WarpField::from_displacements(d)
}

pub fn warp_displacement(field: &WarpField, points: &[Point3]) -> Vec<Point3> {
    points.iter().map(|p| field.displacement_at(p)).collect()
}

/// Move every vertex by the field; faces are shared with the input.
pub fn apply_warp(mesh: &Mesh, field: &WarpField) -> Result<Mesh> {
    let moved = mesh
        .vertices()
        .iter()
        .map(|p| {
            let d = field.displacement_at(p);
            [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
        })
        .collect();
    mesh.with_vertices(moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dist2, fixtures, topology_summary};

    /// Independent dense Gaussian elimination with partial pivoting.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn kernel_sum_oracle(d: &[Point3; 27], q: &Point3) -> Point3 {
        let nodes = lattice();
        let phi = |r: f64| if r > 0.0 { r * r * r.ln() } else { 0.0 };
        let mut out = [0.0; 3];
        for comp in 0..3 {
            let mut a = vec![vec![0.0; 31]; 31];
            let mut b = vec![0.0; 31];
            for i in 0..27 {
                for j in 0..27 {
                    a[i][j] = phi(dist2(&nodes[i], &nodes[j]).sqrt());
                }
                let p = [1.0, nodes[i][0], nodes[i][1], nodes[i][2]];
                for k in 0..4 {
                    a[i][27 + k] = p[k];
                    a[27 + k][i] = p[k];
                }
                b[i] = d[i][comp];
            }
            let x = solve(a, b);
            let mut v = x[27] + x[28] * q[0] + x[29] * q[1] + x[30] * q[2];
            for i in 0..27 {
                v += x[i] * phi(dist2(q, &nodes[i]).sqrt());
            }
            out[comp] = v;
        }
        out
    }

    #[test]
    fn exact_at_nodes() {
        let f = sample_warp_field(1, 0.05).unwrap();
        for (n, d) in f.nodes().iter().zip(f.node_displacements()) {
            let u = warp_displacement(&f, &[*n])[0];
            for k in 0..3 {
                assert!((u[k] - d[k]).abs() < 1e-9);
            }
        }
        for seed in 0..50 {
            assert!(sample_warp_field(seed, 0.05).unwrap().node_residual() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_scales_with_sigma() {
        assert_eq!(sample_warp_field(9, 0.05).unwrap(), sample_warp_field(9, 0.05).unwrap());
        let tiny = sample_warp_field(9, 1e-12).unwrap();
        assert!(tiny.node_displacements().iter().flatten().all(|v| v.abs() < 1e-10));
        assert!(sample_warp_field(9, 0.0).is_err());
        assert!(sample_warp_field(9, -1.0).is_err());
    }

    #[test]
    fn zero_field_is_identity() {
        let f = WarpField::identity();
        for p in [[0.3, -0.2, 0.9], [2.0, 5.0, -1.0]] {
            assert_eq!(f.displacement_at(&p), [0.0; 3]);
        }
        let m = fixtures::object("dice", 4).unwrap();
        assert_eq!(apply_warp(&m, &f).unwrap(), m);
    }

    #[test]
    fn midpoint_between_two_active_nodes_matches_kernel_sum() {
        let mut d = [[0.0; 3]; 27];
        d[13] = [0.1, -0.05, 0.02]; // center node
        d[14] = [0.0, 0.08, -0.03]; // (+0.5, 0, 0)
        let f = WarpField::from_displacements(d).unwrap();
        let q = [0.25, 0.0, 0.0];
        let got = f.displacement_at(&q);
        let want = kernel_sum_oracle(&d, &q);
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-9, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn apply_warp_single_triangle_matches_oracle() {
        let d = *sample_warp_field(4, 0.05).unwrap().node_displacements();
        let f = WarpField::from_displacements(d).unwrap();
        let tri = Mesh::new(
            vec![[0.1, 0.2, -0.3], [-0.4, 0.1, 0.2], [0.3, -0.3, 0.45]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let out = apply_warp(&tri, &f).unwrap();
        for (p, q) in tri.vertices().iter().zip(out.vertices()) {
            let u = kernel_sum_oracle(&d, p);
            for k in 0..3 {
                assert!((q[k] - (p[k] + u[k])).abs() < 1e-9);
            }
        }
        assert!(out.shares_faces_with(&tri));
        assert_eq!(topology_summary(&out), topology_summary(&tri));
    }

    #[test]
    fn smooth_between_nodes() {
        let f = sample_warp_field(2, 0.05).unwrap();
        let a = f.displacement_at(&[0.1, 0.1, 0.1]);
        let b = f.displacement_at(&[0.1 + 1e-6, 0.1, 0.1]);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-5);
        }
    }
}
