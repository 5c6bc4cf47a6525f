//! Conditional Real-NVP over template vertices.
//!
//! Block `k` rewrites coordinate `k % 3`:
//! `z' = z·exp(s) + t`, where `s` and `t` are computed from the coordinates
//! with that column zeroed, projected to `proj_dim` features and joined with
//! the encoding. Both maps have one `relu` hidden layer; `map_s` squashes
//! its output to `2·tanh`, `map_t` leaves it unbounded.
//!
//! The first layer of each map acts on `[feat | enc]`; its weight is stored
//! split as `weight_point` (`proj_dim×H`) and `weight_enc` (`D×H`) so the
//! encoding half is computed once per cloud rather than once per vertex.

use serde::{Deserialize, Serialize};

use crate::geometry::{Mesh, Point3};
use crate::rng;
use crate::tensor::{Dense, Graph, ParamSet, Real, Tensor, Var};
use crate::{Error, Result};

/// Largest `|s|` accepted before `exp` is considered to overflow.
pub const S_LIMIT: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub blocks: usize,
    pub code_dim: usize,
    pub proj_dim: usize,
    pub hidden: usize,
}

impl FlowSpec {
    pub fn new(code_dim: usize, blocks: usize) -> Self {
        FlowSpec {
            blocks,
            code_dim,
            proj_dim: 128,
            hidden: 256,
        }
    }

    pub fn masked_dim(block: usize) -> usize {
        block % 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.code_dim == 0 || self.proj_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("flow dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Reads the architecture back from parameter shapes.
    pub fn from_params(params: &ParamSet) -> Result<Self> {
        let blocks = (0..).take_while(|&k| params.contains(&name(k, "proj.weight"))).count();
        if blocks == 0 {
            return Err(Error::Config("parameter set has no flow".into()));
        }
        let proj = params.value(&name(0, "proj.weight"))?;
        let enc = params.value(&name(0, "s_hidden.weight_enc"))?;
        Ok(FlowSpec {
            blocks,
            code_dim: enc.rows(),
            proj_dim: proj.cols(),
            hidden: enc.cols(),
        })
    }
}

fn name(block: usize, field: &str) -> String {
    format!("flow.block{block}.{field}")
}

/// Random projections and hidden layers; both output layers start at zero so
/// the flow is the identity.
pub fn init_flow(spec: &FlowSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = rng::rng_for(seed, &[rng::fnv1a(b"flow")]);
    let mut ps = ParamSet::new();
    let (p, d, h) = (spec.proj_dim, spec.code_dim, spec.hidden);
    for k in 0..spec.blocks {
        let b = 1.0 / 3f64.sqrt();
        ps.insert(name(k, "proj.weight"), Tensor::uniform(3, p, b, &mut rng), true);
        ps.insert(name(k, "proj.bias"), Tensor::uniform(1, p, b, &mut rng), true);
        for map in ["s", "t"] {
            let b = 1.0 / ((p + d) as f64).sqrt();
            ps.insert(name(k, &format!("{map}_hidden.weight_point")), Tensor::uniform(p, h, b, &mut rng), true);
            ps.insert(name(k, &format!("{map}_hidden.weight_enc")), Tensor::uniform(d, h, b, &mut rng), true);
            ps.insert(name(k, &format!("{map}_hidden.bias")), Tensor::uniform(1, h, b, &mut rng), true);
            ps.insert(name(k, &format!("{map}_out.weight")), Tensor::zeros(h, 1), true);
            ps.insert(name(k, &format!("{map}_out.bias")), Tensor::zeros(1, 1), true);
        }
    }
    Ok(ps)
}

fn map_graph(g: &mut Graph, params: &ParamSet, k: usize, map: &str, feat: Var, enc: Var) -> Result<Var> {
    let p = |g: &mut Graph, f: &str| -> Result<Var> { Ok(g.param(params.get(&name(k, &format!("{map}_{f}")))?)) };
    let wp = p(g, "hidden.weight_point")?;
    let we = p(g, "hidden.weight_enc")?;
    let b = p(g, "hidden.bias")?;
    let wo = p(g, "out.weight")?;
    let bo = p(g, "out.bias")?;
    let h = g.linear(feat, wp, Some(b))?;
    let e = g.linear(enc, we, None)?;
    let h = g.add_row(h, e)?;
    let h = g.relu(h)?;
    let o = g.linear(h, wo, Some(bo))?;
    if map == "s" {
        let o = g.tanh(o)?;
        g.scale(o, 2.0)
    } else {
        Ok(o)
    }
}

/// Records coupling block `k` on `g`. `coords` is `V×3`, `enc` is `1×D`.
pub fn coupling_graph(g: &mut Graph, params: &ParamSet, k: usize, coords: Var, enc: Var) -> Result<Var> {
    let dim = FlowSpec::masked_dim(k);
    let masked = g.mask_column(coords, dim)?;
    let pw = g.param(params.get(&name(k, "proj.weight"))?);
    let pb = g.param(params.get(&name(k, "proj.bias"))?);
    let feat = g.linear(masked, pw, Some(pb))?;
    let s = map_graph(g, params, k, "s", feat, enc)?;
    check_s(g.value(s).data().iter().copied(), k)?;
    let t = map_graph(g, params, k, "t", feat, enc)?;
    g.coupling(coords, s, t, dim)
}

/// Records the whole flow on `g`.
pub fn flow_graph(g: &mut Graph, params: &ParamSet, coords: Var, enc: Var) -> Result<Var> {
    let spec = FlowSpec::from_params(params)?;
    let ds = g.value(enc).shape();
    if ds != [1, spec.code_dim] {
        return Err(Error::shape("flow", format!("encoding {ds:?} for D={}", spec.code_dim)));
    }
    let mut x = coords;
    for k in 0..spec.blocks {
        x = coupling_graph(g, params, k, x, enc)?;
    }
    Ok(x)
}

fn check_s(s: impl Iterator<Item = f64>, block: usize) -> Result<()> {
    for v in s {
        if v.abs() > S_LIMIT || v.is_nan() {
            return Err(Error::Numeric(format!("coupling block {block}: |s| = {v} exceeds {S_LIMIT}")));
        }
    }
    Ok(())
}

/// One coupling block with the projection folded into the first layer of
/// both maps. Hidden units are laid out `[s | t]`.
#[derive(Clone, Debug)]
struct Block<T> {
    dim: usize,
    /// Unmasked coordinates and their rows of `W_proj·W_point`.
    live: [usize; 2],
    w_live: [Vec<T>; 2],
    /// `b_proj·W_point + b_hidden`.
    bias: Vec<f64>,
    enc: Dense<T>,
    out_s: Vec<T>,
    out_t: Vec<T>,
    b_s: T,
    b_t: T,
}

/// Inference flow for one float width.
#[derive(Clone, Debug)]
pub struct FlowModel<T> {
    spec: FlowSpec,
    blocks: Vec<Block<T>>,
}

/// Per-block first-layer offsets for one cloud: hidden bias plus `enc·W_enc`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    rows: Vec<Vec<T>>,
}

/// Scratch buffer for [`FlowModel`]; reuse across calls to avoid allocation.
#[derive(Clone, Debug)]
pub struct FlowWorkspace<T> {
    hidden: Vec<T>,
}

impl<T> Default for FlowWorkspace<T> {
    fn default() -> Self {
        FlowWorkspace { hidden: Vec::new() }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

impl<T: Real> FlowModel<T> {
    pub fn from_params(params: &ParamSet) -> Result<Self> {
        let spec = FlowSpec::from_params(params)?;
        let (p, h) = (spec.proj_dim, spec.hidden);
        let v = |k: usize, f: &str| params.value(&name(k, f));
        let cast = |x: &[f64]| x.iter().map(|&v| T::from_f64(v)).collect::<Vec<T>>();
        let blocks = (0..spec.blocks)
            .map(|k| {
                let dim = FlowSpec::masked_dim(k);
                let live = [(dim + 1) % 3, (dim + 2) % 3];
                let wp = v(k, "proj.weight")?.data();
                let bp = v(k, "proj.bias")?.data();
                let mut w_live = [vec![0.0; 2 * h], vec![0.0; 2 * h]];
                let mut bias = vec![0.0; 2 * h];
                let mut enc = Vec::with_capacity(spec.code_dim * 2 * h);
                let mut outs = Vec::new();
                for (half, m) in ["s", "t"].iter().enumerate() {
                    let w = v(k, &format!("{m}_hidden.weight_point"))?.data();
                    let b = v(k, &format!("{m}_hidden.bias"))?.data();
                    for j in 0..h {
                        let col = half * h + j;
                        for (l, &c) in live.iter().enumerate() {
                            w_live[l][col] = (0..p).map(|q| wp[c * p + q] * w[q * h + j]).sum();
                        }
                        bias[col] = (0..p).map(|q| bp[q] * w[q * h + j]).sum::<f64>() + b[j];
                    }
                    outs.push((
                        cast(v(k, &format!("{m}_out.weight"))?.data()),
                        T::from_f64(v(k, &format!("{m}_out.bias"))?.data()[0]),
                    ));
                }
                let (ws, wt) = (v(k, "s_hidden.weight_enc")?.data(), v(k, "t_hidden.weight_enc")?.data());
                for d in 0..spec.code_dim {
                    enc.extend_from_slice(&ws[d * h..(d + 1) * h]);
                    enc.extend_from_slice(&wt[d * h..(d + 1) * h]);
                }
                let enc = Dense::from_tensors(&Tensor::from_vec(spec.code_dim, 2 * h, enc)?, None)?;
                let (t, s) = (outs.pop().unwrap(), outs.pop().unwrap());
                Ok(Block {
                    dim,
                    live,
                    w_live: w_live.map(|w| cast(&w)),
                    bias,
                    enc,
                    out_s: s.0,
                    out_t: t.0,
                    b_s: s.1,
                    b_t: t.1,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FlowModel { spec, blocks })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn condition(&self, enc: &[T]) -> Result<Conditioning<T>> {
        if enc.len() != self.spec.code_dim {
            return Err(Error::shape(
                "flow",
                format!("encoding of length {} for D={}", enc.len(), self.spec.code_dim),
            ));
        }
        let rows = self
            .blocks
            .iter()
            .map(|b| {
                let mut r = vec![T::zero(); b.enc.outputs];
                b.enc.forward(enc, 1, &mut r);
                for (x, c) in r.iter_mut().zip(&b.bias) {
                    *x = *x + T::from_f64(*c);
                }
                r
            })
            .collect();
        Ok(Conditioning { rows })
    }

    fn run_vertex(&self, k: usize, c: &mut [T; 3], cond: &Conditioning<T>, hidden: &mut [T], dir: Direction) -> Result<()> {
        let b = &self.blocks[k];
        let h = self.spec.hidden;
        let (x0, x1) = (c[b.live[0]], c[b.live[1]]);
        for (((o, w0), w1), r) in hidden.iter_mut().zip(&b.w_live[0]).zip(&b.w_live[1]).zip(&cond.rows[k]) {
            *o = (x0 * *w0 + x1 * *w1 + *r).max(T::zero());
        }
        let s = (dot(&hidden[..h], &b.out_s) + b.b_s).tanh() * T::from_f64(2.0);
        let t = dot(&hidden[h..], &b.out_t) + b.b_t;
        check_s(std::iter::once(Real::to_f64(s)), k)?;
        let z = c[b.dim];
        c[b.dim] = match dir {
            Direction::Forward => z * s.exp() + t,
            Direction::Inverse => (z - t) * (-s).exp(),
        };
        if !c[b.dim].is_finite() {
            return Err(Error::Numeric(format!("coupling block {k} produced a non-finite coordinate")));
        }
        Ok(())
    }

    fn run(&self, blocks: &[usize], coords: &mut [[T; 3]], cond: &Conditioning<T>, ws: &mut FlowWorkspace<T>, dir: Direction) -> Result<()> {
        if let Some(&k) = blocks.iter().find(|&&k| k >= self.blocks.len()) {
            return Err(Error::Config(format!("block {k} of {}", self.blocks.len())));
        }
        if cond.rows.len() != self.blocks.len() {
            return Err(Error::shape("flow", "conditioning built for another model"));
        }
        ws.hidden.resize(2 * self.spec.hidden, T::zero());
        for c in coords.iter_mut() {
            for &k in blocks {
                self.run_vertex(k, c, cond, &mut ws.hidden, dir)?;
            }
        }
        Ok(())
    }

    pub fn coupling_forward(&self, k: usize, coords: &mut [[T; 3]], cond: &Conditioning<T>, ws: &mut FlowWorkspace<T>) -> Result<()> {
        self.run(&[k], coords, cond, ws, Direction::Forward)
    }

    pub fn coupling_inverse(&self, k: usize, coords: &mut [[T; 3]], cond: &Conditioning<T>, ws: &mut FlowWorkspace<T>) -> Result<()> {
        self.run(&[k], coords, cond, ws, Direction::Inverse)
    }

    /// All blocks in order, in place. Each vertex is independent.
    pub fn forward(&self, coords: &mut [[T; 3]], cond: &Conditioning<T>, ws: &mut FlowWorkspace<T>) -> Result<()> {
        let order: Vec<usize> = (0..self.blocks.len()).collect();
        self.run(&order, coords, cond, ws, Direction::Forward)
    }

    /// Inverse of [`FlowModel::forward`], in place.
    pub fn inverse(&self, coords: &mut [[T; 3]], cond: &Conditioning<T>, ws: &mut FlowWorkspace<T>) -> Result<()> {
        let order: Vec<usize> = (0..self.blocks.len()).rev().collect();
        self.run(&order, coords, cond, ws, Direction::Inverse)
    }
}

fn to_real<T: Real>(points: &[Point3]) -> Vec<[T; 3]> {
    points.iter().map(|p| p.map(T::from_f64)).collect()
}

fn to_f64<T: Real>(points: &[[T; 3]]) -> Vec<Point3> {
    points.iter().map(|p| p.map(Real::to_f64)).collect()
}

/// Moves template vertices through every block.
pub fn flow_deform<T: Real>(model: &FlowModel<T>, template: &[Point3], enc: &[T]) -> Result<Vec<Point3>> {
    let cond = model.condition(enc)?;
    let mut c = to_real(template);
    model.forward(&mut c, &cond, &mut FlowWorkspace::default())?;
    Ok(to_f64(&c))
}

pub fn flow_inverse<T: Real>(model: &FlowModel<T>, deformed: &[Point3], enc: &[T]) -> Result<Vec<Point3>> {
    let cond = model.condition(enc)?;
    let mut c = to_real(deformed);
    model.inverse(&mut c, &cond, &mut FlowWorkspace::default())?;
    Ok(to_f64(&c))
}

/// Deformed copy of `template` sharing its face list.
pub fn deform_mesh<T: Real>(model: &FlowModel<T>, template: &Mesh, enc: &[T]) -> Result<Mesh> {
    template.with_vertices(flow_deform(model, template.vertices(), enc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fixtures, topology_summary};
    use crate::tensor::grad_check;
    use rand::Rng;

    fn small_spec() -> FlowSpec {
        FlowSpec {
            blocks: 6,
            code_dim: 5,
            proj_dim: 8,
            hidden: 7,
        }
    }

    /// Flow with every tensor random, including the output layers.
    fn random_flow(spec: &FlowSpec, seed: u64, out_scale: f64) -> ParamSet {
        let mut ps = init_flow(spec, seed).unwrap();
        let mut r = rng::rng_for(seed, &[99]);
        let names: Vec<String> = ps.iter().filter(|p| p.name.contains("_out.")).map(|p| p.name.clone()).collect();
        for n in names {
            let p = ps.get_mut(&n).unwrap();
            p.value = Tensor::uniform(p.value.rows(), p.value.cols(), out_scale, &mut r);
        }
        ps
    }

    fn random_points(n: usize, r: &mut impl Rng) -> Vec<Point3> {
        (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect()
    }

    fn random_enc(d: usize, r: &mut impl Rng) -> Vec<f64> {
        (0..d).map(|_| r.random_range(0.0..2.0)).collect()
    }

    #[test]
    fn zero_output_layers_give_identity() {
        let spec = small_spec();
        let m = FlowModel::<f64>::from_params(&init_flow(&spec, 1).unwrap()).unwrap();
        let mut r = rng::rng_for(1, &[]);
        let pts = random_points(100, &mut r);
        let out = flow_deform(&m, &pts, &random_enc(5, &mut r)).unwrap();
        assert_eq!(out, pts);
        assert_eq!(flow_inverse(&m, &pts, &random_enc(5, &mut r)).unwrap(), pts);
    }

    #[test]
    fn hand_traced_block() {
        // masked dim 2 (block 2), proj = identity into 3 features, map_s hidden
        // passes feature 0 through relu; choose weights so that s = ln 2 and
        // t = 0.5 for the point (0.5, 0.25, 1.0).
        let spec = FlowSpec { blocks: 3, code_dim: 1, proj_dim: 3, hidden: 1 };
        let mut ps = init_flow(&spec, 0).unwrap();
        let set = |ps: &mut ParamSet, f: &str, r: usize, c: usize, v: Vec<f64>| {
            ps.get_mut(&name(2, f)).unwrap().value = Tensor::from_vec(r, c, v).unwrap();
        };
        set(&mut ps, "proj.weight", 3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        set(&mut ps, "proj.bias", 1, 3, vec![0.0; 3]);
        // hidden_s = relu(x) = 0.5 with enc weight zero; s = 2·tanh(w·0.5)
        let w = (2f64.ln() / 2.0).atanh() / 0.5;
        set(&mut ps, "s_hidden.weight_point", 3, 1, vec![1.0, 0.0, 0.0]);
        set(&mut ps, "s_hidden.weight_enc", 1, 1, vec![0.0]);
        set(&mut ps, "s_hidden.bias", 1, 1, vec![0.0]);
        set(&mut ps, "s_out.weight", 1, 1, vec![w]);
        set(&mut ps, "s_out.bias", 1, 1, vec![0.0]);
        // t = 2·y = 0.5
        set(&mut ps, "t_hidden.weight_point", 3, 1, vec![0.0, 2.0, 0.0]);
        set(&mut ps, "t_hidden.weight_enc", 1, 1, vec![0.0]);
        set(&mut ps, "t_hidden.bias", 1, 1, vec![0.0]);
        set(&mut ps, "t_out.weight", 1, 1, vec![1.0]);
        set(&mut ps, "t_out.bias", 1, 1, vec![0.0]);
        let m = FlowModel::<f64>::from_params(&ps).unwrap();
        let cond = m.condition(&[0.7]).unwrap();
        let mut ws = FlowWorkspace::default();
        let mut c = [[0.5, 0.25, 1.0]];
        m.coupling_forward(2, &mut c, &cond, &mut ws).unwrap();
        assert_eq!(c[0][0], 0.5);
        assert_eq!(c[0][1], 0.25);
        assert!((c[0][2] - 2.5).abs() < 1e-12, "{:?}", c);
        m.coupling_inverse(2, &mut c, &cond, &mut ws).unwrap();
        assert!((c[0][2] - 1.0).abs() < 1e-12);
        // the graph version agrees
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_points(&[[0.5, 0.25, 1.0]]));
        let e = g.constant(Tensor::row_vector(vec![0.7]));
        let y = coupling_graph(&mut g, &ps, 2, x, e).unwrap();
        assert!((g.value(y).get(0, 2) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn round_trip_and_locality() {
        let spec = small_spec();
        for seed in 0..5 {
            let ps = random_flow(&spec, seed, 0.5);
            let m = FlowModel::<f64>::from_params(&ps).unwrap();
            let mut r = rng::rng_for(seed, &[3]);
            let pts = random_points(1000, &mut r);
            let enc = random_enc(5, &mut r);
            let cond = m.condition(&enc).unwrap();
            let mut ws = FlowWorkspace::default();
            for k in 0..spec.blocks {
                let mut c = pts.clone();
                m.coupling_forward(k, &mut c, &cond, &mut ws).unwrap();
                let dim = FlowSpec::masked_dim(k);
                for (a, b) in c.iter().zip(&pts) {
                    for j in (0..3).filter(|&j| j != dim) {
                        assert_eq!(a[j].to_bits(), b[j].to_bits());
                    }
                }
                m.coupling_inverse(k, &mut c, &cond, &mut ws).unwrap();
                for (a, b) in c.iter().zip(&pts) {
                    assert!((a[dim] - b[dim]).abs() < 1e-9);
                }
            }
            let out = flow_deform(&m, &pts, &enc).unwrap();
            assert!(out != pts);
            let back = flow_inverse(&m, &out, &enc).unwrap();
            let err = back.iter().zip(&pts).flat_map(|(a, b)| (0..3).map(move |j| (a[j] - b[j]).abs())).fold(0.0, f64::max);
            assert!(err < 1e-9, "seed {seed}: {err}");
        }
    }

    #[test]
    fn encoding_changes_only_masked_column() {
        let spec = small_spec();
        let m = FlowModel::<f64>::from_params(&random_flow(&spec, 4, 0.5)).unwrap();
        let mut r = rng::rng_for(4, &[]);
        let pts = random_points(50, &mut r);
        let mut ws = FlowWorkspace::default();
        let (mut a, mut b) = (pts.clone(), pts.clone());
        m.coupling_forward(1, &mut a, &m.condition(&random_enc(5, &mut r)).unwrap(), &mut ws).unwrap();
        m.coupling_forward(1, &mut b, &m.condition(&random_enc(5, &mut r)).unwrap(), &mut ws).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x[0], x[2]), (y[0], y[2]));
            assert_ne!(x[1], y[1]);
        }
    }

    #[test]
    fn subset_equals_subset_of_full() {
        let spec = small_spec();
        let m = FlowModel::<f64>::from_params(&random_flow(&spec, 5, 0.5)).unwrap();
        let mut r = rng::rng_for(5, &[]);
        let pts = random_points(1500, &mut r);
        let enc = random_enc(5, &mut r);
        let full = flow_deform(&m, &pts, &enc).unwrap();
        let idx: Vec<usize> = (0..pts.len()).filter(|i| i % 7 == 3).collect();
        let sub: Vec<Point3> = idx.iter().map(|&i| pts[i]).collect();
        let out = flow_deform(&m, &sub, &enc).unwrap();
        for (o, &i) in out.iter().zip(&idx) {
            assert_eq!(*o, full[i]);
        }
    }

    #[test]
    fn factorized_first_layer_equals_concat() {
        let mut r = rng::rng_for(6, &[]);
        let feat = Tensor::uniform(9, 4, 1.0, &mut r);
        let enc = Tensor::uniform(1, 3, 1.0, &mut r);
        let wf = Tensor::uniform(4, 5, 1.0, &mut r);
        let we = Tensor::uniform(3, 5, 1.0, &mut r);
        let b = Tensor::uniform(1, 5, 1.0, &mut r);
        let stacked = Tensor::from_vec(7, 5, wf.data().iter().chain(we.data()).copied().collect()).unwrap();
        let mut g = Graph::new();
        let (f, e) = (g.constant(feat), g.constant(enc));
        let (wf, we, w, b) = (g.constant(wf), g.constant(we), g.constant(stacked), g.constant(b));
        let cat = g.concat_broadcast(f, e).unwrap();
        let direct = g.linear(cat, w, Some(b)).unwrap();
        let h = g.linear(f, wf, Some(b)).unwrap();
        let he = g.linear(e, we, None).unwrap();
        let split = g.add_row(h, he).unwrap();
        assert!(g.value(direct).max_abs_diff(g.value(split)) < 1e-14);
    }

    #[test]
    fn graph_matches_fast_path() {
        let spec = small_spec();
        for seed in 0..3 {
            let ps = random_flow(&spec, seed, 0.5);
            let mut r = rng::rng_for(seed, &[8]);
            let pts = random_points(300, &mut r);
            let enc = random_enc(5, &mut r);
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_points(&pts));
            let e = g.constant(Tensor::row_vector(enc.clone()));
            let y = flow_graph(&mut g, &ps, x, e).unwrap();
            let slow = g.value(y).to_points().unwrap();
            let fast = flow_deform(&FlowModel::<f64>::from_params(&ps).unwrap(), &pts, &enc).unwrap();
            for (a, b) in slow.iter().zip(&fast) {
                for j in 0..3 {
                    assert!((a[j] - b[j]).abs() < 1e-12);
                }
            }
            let enc32: Vec<f32> = enc.iter().map(|&v| v as f32).collect();
            let f32out = flow_deform(&FlowModel::<f32>::from_params(&ps).unwrap(), &pts, &enc32).unwrap();
            for (a, b) in slow.iter().zip(&f32out) {
                for j in 0..3 {
                    assert!((a[j] - b[j]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn coupling_block_gradient_check() {
        let spec = FlowSpec { blocks: 1, code_dim: 3, proj_dim: 4, hidden: 5 };
        for seed in 0..20 {
            let ps = random_flow(&spec, seed, 0.5);
            let names: Vec<String> = ps.iter().map(|p| p.name.clone()).collect();
            let mut r = rng::rng_for(seed, &[11]);
            let mut inputs: Vec<Tensor> = ps.iter().map(|p| p.value.clone()).collect();
            inputs.push(Tensor::from_points(&random_points(6, &mut r)));
            inputs.push(Tensor::uniform(1, 3, 1.0, &mut r));
            let weights = Tensor::uniform(6, 3, 1.0, &mut r);
            let report = grad_check(&inputs, 1e-6, |g, vars| {
                let n = names.len();
                let leaves: Vec<(String, Var)> = names.iter().cloned().zip(vars.iter().copied()).collect();
                let y = coupling_graph_on(g, &leaves, vars[n], vars[n + 1])?;
                g.weighted_sum(y, &weights)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "seed {seed}: {report:?}");
        }
    }

    /// Block 0 recorded directly on supplied leaves.
    fn coupling_graph_on(g: &mut Graph, leaves: &[(String, Var)], coords: Var, enc: Var) -> Result<Var> {
        let get = |f: &str| leaves.iter().find(|(n, _)| *n == name(0, f)).unwrap().1;
        let masked = g.mask_column(coords, 0)?;
        let feat = g.linear(masked, get("proj.weight"), Some(get("proj.bias")))?;
        let mut st = Vec::new();
        for map in ["s", "t"] {
            let h = g.linear(feat, get(&format!("{map}_hidden.weight_point")), Some(get(&format!("{map}_hidden.bias"))))?;
            let e = g.linear(enc, get(&format!("{map}_hidden.weight_enc")), None)?;
            let h = g.add_row(h, e)?;
            let h = g.relu(h)?;
            let mut o = g.linear(h, get(&format!("{map}_out.weight")), Some(get(&format!("{map}_out.bias"))))?;
            if map == "s" {
                o = g.tanh(o)?;
                o = g.scale(o, 2.0)?;
            }
            st.push(o);
        }
        g.coupling(coords, st[0], st[1], 0)
    }

    #[test]
    fn deform_mesh_keeps_faces() {
        let spec = small_spec();
        let m = FlowModel::<f64>::from_params(&random_flow(&spec, 7, 0.3)).unwrap();
        let mut r = rng::rng_for(7, &[]);
        for obj in fixtures::OBJECTS {
            let t = fixtures::object(obj, 4).unwrap();
            let d = deform_mesh(&m, &t, &random_enc(5, &mut r)).unwrap();
            assert!(d.shares_faces_with(&t));
            assert_eq!(topology_summary(&d), topology_summary(&t));
        }
        let id = FlowModel::<f64>::from_params(&init_flow(&spec, 7).unwrap()).unwrap();
        let t = fixtures::object("dice", 3).unwrap();
        assert_eq!(deform_mesh(&id, &t, &[0.1; 5]).unwrap(), t);
    }

    #[test]
    fn encoding_length_is_checked() {
        let m = FlowModel::<f64>::from_params(&init_flow(&small_spec(), 1).unwrap()).unwrap();
        assert!(matches!(m.condition(&[0.0; 4]), Err(Error::Shape { .. })));
    }
}
