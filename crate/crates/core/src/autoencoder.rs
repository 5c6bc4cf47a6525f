//! Pointwise-convolution autoencoder.
//!
//! Encoder: per-point `linear → batchnorm → relu` layers followed by a
//! max-pool over points. Decoder: fully connected layers emitting `m×3`.
//!
//! Parameter names:
//! `encoder.layer{i}.{weight,bias,bn_gamma,bn_beta,bn_running_mean,bn_running_var}`
//! and `decoder.fc{i}.{weight,bias}`. Running statistics are stored as
//! non-trainable parameters so that they travel with checkpoints.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud};
use crate::rng;
use crate::tensor::gemm::{gemm, Trans};
use crate::tensor::{
    adam_step, AdamConfig, AdamState, BatchStats, Dense, Graph, ParamSet, Real, Tensor, Var, BN_EPS,
    BN_MOMENTUM,
};
use crate::{Error, Result};

/// Points pushed through the inference encoder at a time.
const ENCODE_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeSpec {
    /// Output width of each encoder layer; the last one is the code size D.
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Number of decoded points `m`.
    pub points: usize,
}

impl AeSpec {
    pub fn new(code_dim: usize, points: usize) -> Self {
        AeSpec {
            encoder_widths: vec![64, 128, 256, code_dim],
            decoder_widths: vec![512, 1024],
            points,
        }
    }

    pub fn code_dim(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::Config("encoder widths must be nonempty and positive".into()));
        }
        if self.decoder_widths.contains(&0) || self.points == 0 {
            return Err(Error::Config("decoder widths and point count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics of the current cloud.
    Train,
    /// Stored running statistics.
    Eval,
}

fn enc_name(i: usize, field: &str) -> String {
    format!("encoder.layer{i}.{field}")
}

fn dec_name(i: usize, field: &str) -> String {
    format!("decoder.fc{i}.{field}")
}

/// Uniform `±1/√fan_in` weights and biases (the usual 1×1-conv default).
fn init_linear(ps: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    ps.insert(format!("{prefix}.weight"), Tensor::uniform(fan_in, fan_out, bound, rng), true);
    ps.insert(format!("{prefix}.bias"), Tensor::uniform(1, fan_out, bound, rng), true);
}

pub fn init_encoder(widths: &[usize], seed: u64) -> ParamSet {
    let mut rng = rng::rng_for(seed, &[rng::fnv1a(b"encoder")]);
    let mut ps = ParamSet::new();
    let mut fan_in = 3;
    for (i, &w) in widths.iter().enumerate() {
        init_linear(&mut ps, &format!("encoder.layer{i}"), fan_in, w, &mut rng);
        ps.insert(enc_name(i, "bn_gamma"), Tensor::filled(1, w, 1.0), true);
        ps.insert(enc_name(i, "bn_beta"), Tensor::zeros(1, w), true);
        ps.insert(enc_name(i, "bn_running_mean"), Tensor::zeros(1, w), false);
        ps.insert(enc_name(i, "bn_running_var"), Tensor::filled(1, w, 1.0), false);
        fan_in = w;
    }
    ps
}

pub fn init_decoder(code_dim: usize, hidden: &[usize], points: usize, seed: u64) -> ParamSet {
    let mut rng = rng::rng_for(seed, &[rng::fnv1a(b"decoder")]);
    let mut ps = ParamSet::new();
    let mut fan_in = code_dim;
    for (i, &w) in hidden.iter().chain(std::iter::once(&(3 * points))).enumerate() {
        init_linear(&mut ps, &format!("decoder.fc{i}"), fan_in, w, &mut rng);
        fan_in = w;
    }
    ps
}

pub fn init_autoencoder(spec: &AeSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut ps = init_encoder(&spec.encoder_widths, seed);
    ps.extend(init_decoder(spec.code_dim(), &spec.decoder_widths, spec.points, seed));
    Ok(ps)
}

fn count_layers(params: &ParamSet, name: impl Fn(usize) -> String) -> usize {
    (0..).take_while(|&i| params.contains(&name(i))).count()
}

pub fn encoder_layers(params: &ParamSet) -> usize {
    count_layers(params, |i| enc_name(i, "weight"))
}

fn decoder_layers(params: &ParamSet) -> usize {
    count_layers(params, |i| dec_name(i, "weight"))
}

/// Code size D of the encoder held in `params`.
pub fn code_dim(params: &ParamSet) -> Result<usize> {
    let n = encoder_layers(params);
    if n == 0 {
        return Err(Error::Config("parameter set has no encoder".into()));
    }
    Ok(params.value(&enc_name(n - 1, "weight"))?.cols())
}

/// Number of points emitted by the decoder held in `params`.
pub fn decoder_points(params: &ParamSet) -> Result<usize> {
    let n = decoder_layers(params);
    if n == 0 {
        return Err(Error::Config("parameter set has no decoder".into()));
    }
    let out = params.value(&dec_name(n - 1, "weight"))?.cols();
    if out % 3 != 0 {
        return Err(Error::Config(format!("decoder output width {out} is not a multiple of 3")));
    }
    Ok(out / 3)
}

/// Records the encoder on `g`. `cloud` is `N×3`; the result is `1×D`. In train
/// mode the batch statistics of every layer are returned for
/// [`update_running_stats`].
pub fn encode_graph(g: &mut Graph, params: &ParamSet, cloud: Var, mode: BnMode) -> Result<(Var, Vec<BatchStats>)> {
    let layers = encoder_layers(params);
    if layers == 0 {
        return Err(Error::Config("parameter set has no encoder".into()));
    }
    let mut x = cloud;
    let mut stats = Vec::new();
    for i in 0..layers {
        let w = g.param(params.get(&enc_name(i, "weight"))?);
        let b = g.param(params.get(&enc_name(i, "bias"))?);
        let gamma = g.param(params.get(&enc_name(i, "bn_gamma"))?);
        let beta = g.param(params.get(&enc_name(i, "bn_beta"))?);
        let h = g.linear(x, w, Some(b))?;
        let h = match mode {
            BnMode::Train => {
                let (h, s) = g.batchnorm_train(h, gamma, beta)?;
                stats.push(s);
                h
            }
            BnMode::Eval => {
                let mean = params.value(&enc_name(i, "bn_running_mean"))?.data().to_vec();
                let var = params.value(&enc_name(i, "bn_running_var"))?.data().to_vec();
                g.batchnorm_eval(h, gamma, beta, &mean, &var)?
            }
        };
        x = g.relu(h)?;
    }
    Ok((g.maxpool(x)?, stats))
}

/// `running ← momentum·running + (1 − momentum)·batch` for every layer.
pub fn update_running_stats(params: &mut ParamSet, stats: &[BatchStats]) -> Result<()> {
    for (i, s) in stats.iter().enumerate() {
        for (field, batch) in [("bn_running_mean", &s.mean), ("bn_running_var", &s.var)] {
            let p = params.get_mut(&enc_name(i, field))?;
            if p.value.len() != batch.len() {
                return Err(Error::shape("update_running_stats", format!("layer {i} {field}")));
            }
            for (r, b) in p.value.data_mut().iter_mut().zip(batch) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }
    Ok(())
}

/// Records the decoder on `g`: `1×D` code to `m×3` points.
pub fn decode_graph(g: &mut Graph, params: &ParamSet, code: Var, m: usize) -> Result<Var> {
    let head = decoder_points(params)?;
    if head != m {
        return Err(Error::Config(format!("decoder emits {head} points, {m} requested")));
    }
    let layers = decoder_layers(params);
    let mut x = code;
    for i in 0..layers {
        let w = g.param(params.get(&dec_name(i, "weight"))?);
        let b = g.param(params.get(&dec_name(i, "bias"))?);
        x = g.linear(x, w, Some(b))?;
        if i + 1 < layers {
            x = g.relu(x)?;
        }
    }
    g.reshape(x, m, 3)
}

/// Eval-mode encoding of a cloud, `1×D`.
pub fn encode(params: &ParamSet, cloud: &PointCloud) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_points(cloud.points()));
    let (code, _) = encode_graph(&mut g, params, x, BnMode::Eval)?;
    Ok(g.value(code).clone())
}

pub fn decode(params: &ParamSet, code: &Tensor, m: usize) -> Result<PointCloud> {
    let mut g = Graph::new();
    let c = g.constant(code.clone());
    let out = decode_graph(&mut g, params, c, m)?;
    PointCloud::new(g.value(out).to_points()?)
}

/// One pretraining step: encode (train mode) → decode → chamfer against the
/// input → backward → Adam over the autoencoder. Returns L_CDR before the
/// update.
pub fn ae_pretrain_step(
    cloud: &PointCloud,
    params: &mut ParamSet,
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<f64> {
    let target = Tensor::from_points(cloud.points());
    let mut g = Graph::new();
    let x = g.constant(target.clone());
    let (code, stats) = encode_graph(&mut g, params, x, BnMode::Train)?;
    let m = decoder_points(params)?;
    let decoded = decode_graph(&mut g, params, code, m)?;
    let loss = g.chamfer(decoded, &target)?;
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    adam_step(params, &grads.params(), state, hyper)?;
    update_running_stats(params, &stats)?;
    Ok(value)
}

/// Inference-only encoder with batchnorm folded into each layer.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    layers: Vec<Dense<T>>,
    max_width: usize,
}

impl<T: Real> Encoder<T> {
    pub fn from_params(params: &ParamSet) -> Result<Self> {
        let n = encoder_layers(params);
        if n == 0 {
            return Err(Error::Config("parameter set has no encoder".into()));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let w = params.value(&enc_name(i, "weight"))?;
            let b = params.value(&enc_name(i, "bias"))?.data();
            let gamma = params.value(&enc_name(i, "bn_gamma"))?.data();
            let beta = params.value(&enc_name(i, "bn_beta"))?.data();
            let mean = params.value(&enc_name(i, "bn_running_mean"))?.data();
            let var = params.value(&enc_name(i, "bn_running_var"))?.data();
            let cols = w.cols();
            let scale: Vec<f64> = (0..cols).map(|j| gamma[j] / (var[j] + BN_EPS).sqrt()).collect();
            let mut folded = w.clone();
            for row in folded.data_mut().chunks_exact_mut(cols) {
                for (v, s) in row.iter_mut().zip(&scale) {
                    *v *= s;
                }
            }
            let shift: Vec<f64> = (0..cols).map(|j| (b[j] - mean[j]) * scale[j] + beta[j]).collect();
            layers.push(Dense::from_tensors(&folded, Some(&Tensor::row_vector(shift)))?);
        }
        let max_width = layers.iter().map(|l| l.outputs).max().unwrap_or(0).max(3);
        Ok(Encoder { layers, max_width })
    }

    pub fn code_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Encodes `points` into `out` (length D). `scratch` is resized as needed
    /// and may be reused across calls.
    pub fn encode_into(&self, points: &[Point3], scratch: &mut Vec<T>, out: &mut [T]) -> Result<()> {
        if points.is_empty() {
            return Err(Error::shape("encode", "empty cloud"));
        }
        if out.len() != self.code_dim() {
            return Err(Error::shape("encode", format!("output length {} for D={}", out.len(), self.code_dim())));
        }
        let w = self.max_width;
        scratch.resize(2 * ENCODE_CHUNK * w, T::zero());
        let (a, b) = scratch.split_at_mut(ENCODE_CHUNK * w);
        out.fill(T::neg_infinity());
        let (first, rest) = self.layers.split_first().expect("encoder has layers");
        let (last, mid) = rest.split_last().map_or((first, &[][..]), |(l, m)| (l, m));
        for chunk in points.chunks(ENCODE_CHUNK) {
            let n = chunk.len();
            let (mut src, mut dst) = (&mut *a, &mut *b);
            if rest.is_empty() {
                for (row, p) in dst.chunks_exact_mut(3).zip(chunk) {
                    for (d, v) in row.iter_mut().zip(p) {
                        *d = T::from_f64(*v);
                    }
                }
                std::mem::swap(&mut src, &mut dst);
            } else {
                // 3-wide input: a gemm would spend its time packing
                let wt = &first.weight;
                let o = first.outputs;
                for (row, p) in src.chunks_exact_mut(o).zip(chunk) {
                    let (x, y, z) = (T::from_f64(p[0]), T::from_f64(p[1]), T::from_f64(p[2]));
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = (x * wt[j] + y * wt[o + j] + z * wt[2 * o + j] + first.bias[j]).max(T::zero());
                    }
                }
                for layer in mid {
                    layer.forward(src, n, dst);
                    for v in dst[..n * layer.outputs].iter_mut() {
                        *v = v.max(T::zero());
                    }
                    std::mem::swap(&mut src, &mut dst);
                }
            }
            // bias and relu commute with the max-pool, so they are applied once at the end
            let d = last.outputs;
            gemm(Trans::No, Trans::No, n, last.inputs, d, &src[..n * last.inputs], &last.weight, T::zero(), &mut dst[..n * d]);
            for row in dst[..n * d].chunks_exact(d) {
                for (o, v) in out.iter_mut().zip(row) {
                    if *v > *o {
                        *o = *v;
                    }
                }
            }
        }
        for (o, b) in out.iter_mut().zip(&last.bias) {
            *o = (*o + *b).max(T::zero());
        }
        Ok(())
    }

    pub fn encode(&self, points: &[Point3]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.code_dim()];
        self.encode_into(points, &mut Vec::new(), &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chamfer_bruteforce;
    use crate::tensor::grad_check;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn toy_spec() -> AeSpec {
        AeSpec {
            encoder_widths: vec![8, 16, 12],
            decoder_widths: vec![16],
            points: 24,
        }
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::rng_for(seed, &[77]);
        PointCloud::new((0..n).map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]).collect()).unwrap()
    }

    /// Params whose running statistics differ from the 0/1 defaults.
    fn warmed(seed: u64) -> ParamSet {
        let mut ps = init_autoencoder(&toy_spec(), seed).unwrap();
        let mut st = AdamState::default();
        for k in 0..3 {
            ae_pretrain_step(&random_cloud(24, k), &mut ps, &mut st, &AdamConfig::with_lr(1e-3)).unwrap();
        }
        ps
    }

    #[test]
    fn parameter_count_depends_only_on_plan() {
        let a = init_autoencoder(&AeSpec::new(256, 512), 1).unwrap();
        let b = init_autoencoder(&AeSpec::new(256, 512), 2).unwrap();
        assert_eq!(a.numel(), b.numel());
        let enc = 3 * 64 + 64 + 64 * 128 + 128 + 128 * 256 + 256 + 256 * 256 + 256;
        let bn = 4 * (64 + 128 + 256 + 256);
        let dec = 256 * 512 + 512 + 512 * 1024 + 1024 + 1024 * 1536 + 1536;
        assert_eq!(a.numel(), enc + bn + dec);
        assert_eq!(code_dim(&a).unwrap(), 256);
        assert_eq!(decoder_points(&a).unwrap(), 512);
    }

    #[test]
    fn encoding_is_permutation_invariant() {
        let ps = warmed(3);
        for seed in 0..10 {
            let cloud = random_cloud(50, seed);
            let mut pts = cloud.points().to_vec();
            pts.shuffle(&mut rng::rng_for(seed, &[5]));
            let a = encode(&ps, &cloud).unwrap();
            let b = encode(&ps, &PointCloud::new(pts).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn duplicated_points_give_same_encoding() {
        let ps = warmed(4);
        let cloud = random_cloud(20, 9);
        let doubled: Vec<Point3> = cloud.points().iter().chain(cloud.points()).copied().collect();
        assert_eq!(encode(&ps, &cloud).unwrap(), encode(&ps, &PointCloud::new(doubled).unwrap()).unwrap());
    }

    #[test]
    fn hand_traced_encoder() {
        // One layer of width 2, identity weight, running mean 0 / var 1.
        let mut ps = ParamSet::new();
        ps.insert("encoder.layer0.weight", Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(), true);
        ps.insert("encoder.layer0.bias", Tensor::row_vector(vec![0.5, -1.0]), true);
        ps.insert("encoder.layer0.bn_gamma", Tensor::row_vector(vec![2.0, 1.0]), true);
        ps.insert("encoder.layer0.bn_beta", Tensor::row_vector(vec![0.0, 0.25]), true);
        ps.insert("encoder.layer0.bn_running_mean", Tensor::row_vector(vec![0.0, 0.0]), false);
        ps.insert("encoder.layer0.bn_running_var", Tensor::row_vector(vec![1.0, 1.0]), false);
        let cloud = PointCloud::new(vec![[1.0, 2.0, 9.0], [-3.0, 0.5, 9.0]]).unwrap();
        // pre-bn rows: (1.5, 1.0), (-2.5, -0.5)
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        let rows = [[2.0 * 1.5 * k, 1.0 * k + 0.25], [2.0 * -2.5 * k, -0.5 * k + 0.25]];
        let want = [rows[0][0].max(rows[1][0]).max(0.0), rows[0][1].max(0.0).max(rows[1][1].max(0.0))];
        let got = encode(&ps, &cloud).unwrap();
        assert!((got.data()[0] - want[0]).abs() < 1e-15);
        assert!((got.data()[1] - want[1]).abs() < 1e-15);
        let fast = Encoder::<f64>::from_params(&ps).unwrap().encode(cloud.points()).unwrap();
        assert!((fast[0] - want[0]).abs() < 1e-14 && (fast[1] - want[1]).abs() < 1e-14);
    }

    #[test]
    fn zero_code_zero_weights_decode_to_bias() {
        let mut ps = init_decoder(4, &[5], 3, 1);
        for p in ["decoder.fc0.weight", "decoder.fc1.weight"] {
            let v = ps.get_mut(p).unwrap();
            v.value = Tensor::zeros(v.value.rows(), v.value.cols());
        }
        let b: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        ps.get_mut("decoder.fc1.bias").unwrap().value = Tensor::row_vector(b.clone());
        let out = decode(&ps, &Tensor::zeros(1, 4), 3).unwrap();
        let flat: Vec<f64> = out.points().iter().flatten().copied().collect();
        assert_eq!(flat, b);
        assert!(matches!(decode(&ps, &Tensor::zeros(1, 4), 4), Err(Error::Config(_))));
    }

    #[test]
    fn decoder_gradient_check() {
        for seed in 0..5 {
            let dec = init_decoder(6, &[10], 8, seed);
            let target = Tensor::from_points(random_cloud(8, seed + 100).points());
            let code = Tensor::uniform(1, 6, 1.0, &mut rng::rng_for(seed, &[1]));
            let names: Vec<String> = dec.iter().map(|p| p.name.clone()).collect();
            let inputs: Vec<Tensor> = dec.iter().map(|p| p.value.clone()).collect();
            let report = grad_check(&inputs, 1e-6, |g, vars| {
                let mut x = g.constant(code.clone());
                for i in 0..2 {
                    let w = vars[names.iter().position(|n| *n == dec_name(i, "weight")).unwrap()];
                    let b = vars[names.iter().position(|n| *n == dec_name(i, "bias")).unwrap()];
                    x = g.linear(x, w, Some(b))?;
                    if i == 0 {
                        x = g.relu(x)?;
                    }
                }
                let x = g.reshape(x, 8, 3)?;
                g.chamfer(x, &target)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut ps = init_autoencoder(&toy_spec(), 5).unwrap();
        let cloud = random_cloud(24, 1);
        let before: Vec<Tensor> = ps.with_prefix("decoder").map(|p| p.value.clone()).collect();
        let loss = ae_pretrain_step(&cloud, &mut ps, &mut AdamState::default(), &AdamConfig::with_lr(0.0)).unwrap();
        assert!(loss > 0.0);
        let after: Vec<Tensor> = ps.with_prefix("decoder").map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
        let trainable_enc: Vec<_> = ps.with_prefix("encoder").filter(|p| p.trainable).collect();
        assert!(trainable_enc.iter().all(|p| init_autoencoder(&toy_spec(), 5).unwrap().value(&p.name).unwrap() == &p.value));
    }

    #[test]
    fn loss_matches_bruteforce_oracle() {
        let mut ps = init_autoencoder(&toy_spec(), 6).unwrap();
        let cloud = random_cloud(24, 2);
        // Same forward as the step, evaluated independently.
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_points(cloud.points()));
        let (code, _) = encode_graph(&mut g, &ps, x, BnMode::Train).unwrap();
        let dec = decode_graph(&mut g, &ps, code, 24).unwrap();
        let oracle = chamfer_bruteforce(&g.value(dec).to_points().unwrap(), cloud.points());
        let loss = ae_pretrain_step(&cloud, &mut ps, &mut AdamState::default(), &AdamConfig::with_lr(1e-3)).unwrap();
        assert!((loss - oracle).abs() < 1e-9);
    }

    #[test]
    fn pretraining_decreases_loss() {
        let mut ps = init_autoencoder(&toy_spec(), 7).unwrap();
        let cloud = random_cloud(24, 3);
        let mut st = AdamState::default();
        let losses: Vec<f64> = (0..200)
            .map(|_| ae_pretrain_step(&cloud, &mut ps, &mut st, &AdamConfig::with_lr(1e-3)).unwrap())
            .collect();
        for w in 0..=150 {
            assert!(losses[w + 49] < losses[w], "window at {w}: {} vs {}", losses[w], losses[w + 49]);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut ps = init_autoencoder(&toy_spec(), 8).unwrap();
        let stats = vec![BatchStats { mean: vec![1.0; 8], var: vec![3.0; 8] }];
        update_running_stats(&mut ps, &stats).unwrap();
        assert!(ps.value("encoder.layer0.bn_running_mean").unwrap().data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert!(ps.value("encoder.layer0.bn_running_var").unwrap().data().iter().all(|&v| (v - 1.2).abs() < 1e-15));
    }

    #[test]
    fn fast_encoder_matches_graph() {
        let ps = warmed(9);
        let mut r = rng::rng_for(1, &[]);
        for seed in 0..5 {
            let cloud = random_cloud(40 + r.random_range(0..40), seed);
            let slow = encode(&ps, &cloud).unwrap();
            let fast = Encoder::<f64>::from_params(&ps).unwrap().encode(cloud.points()).unwrap();
            for (a, b) in slow.data().iter().zip(&fast) {
                assert!((a - b).abs() < 1e-12);
            }
            let f32enc = Encoder::<f32>::from_params(&ps).unwrap().encode(cloud.points()).unwrap();
            for (a, b) in slow.data().iter().zip(&f32enc) {
                assert!((a - *b as f64).abs() < 1e-4);
            }
        }
    }
}
