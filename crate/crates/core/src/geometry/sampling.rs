use rand::Rng;

use super::{Mesh, PointCloud};
use crate::{rng, Error, Result};

/// Area-weighted uniform surface sampling.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_surface_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_surface`], also returning the face each point was drawn from.
pub fn sample_surface_with_faces(
    mesh: &Mesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if mesh.faces().is_empty() {
        return Err(Error::DegenerateGeometry("mesh has no faces".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces().len());
    let mut acc = 0.0;
    for f in 0..mesh.faces().len() {
        acc += mesh.triangle_area(f);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::DegenerateGeometry("mesh has zero surface area".into()));
    }

    let mut rng = rng::rng_for(seed, &[0x5a3d]);
    let mut points = Vec::with_capacity(n);
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        // first face whose cumulative area exceeds u; skips zero-area faces
        let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
        picked.push(f);
    }
    Ok((PointCloud::new(points)?, picked))
}
