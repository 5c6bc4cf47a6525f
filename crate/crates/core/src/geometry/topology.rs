use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Mesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub face_count: usize,
    pub euler_characteristic: i64,
    /// Every edge is shared by exactly two faces.
    pub watertight: bool,
}

pub fn topology_summary(mesh: &Mesh) -> TopologySummary {
    let mut edges: HashMap<(usize, usize), u32> = HashMap::with_capacity(mesh.faces().len() * 2);
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let v = mesh.vertices().len();
    let e = edges.len();
    let f = mesh.faces().len();
    TopologySummary {
        vertex_count: v,
        edge_count: e,
        face_count: f,
        euler_characteristic: v as i64 - e as i64 + f as i64,
        watertight: f > 0 && edges.values().all(|&c| c == 2),
    }
}
