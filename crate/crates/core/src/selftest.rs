//! Property checks runnable from a release binary: gradient checks,
//! round trips and oracle comparisons at small sizes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autoencoder::{encode_graph, init_autoencoder, AeSpec, BnMode, Encoder};
use crate::deform::sample_warp_field;
use crate::flow::{flow_graph, init_flow, FlowModel, FlowSpec, FlowWorkspace};
use crate::geometry::{chamfer_bruteforce, Point3};
use crate::rng::rng_for;
use crate::tensor::{chamfer_forward, grad_check, AdamState, GradCheckReport, Graph, ParamSet, Tensor, Var};
use crate::train::{Checkpoint, Stage, TrainConfig};
use crate::Result;

fn rand_t(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

fn random_points(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)])
        .collect()
}

/// Central-difference reports for every differentiable op on random inputs.
pub fn op_gradient_reports(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = rng_for(seed, &[0x5e1f]);
    let x = rand_t(5, 4, &mut rng);
    let w = rand_t(4, 3, &mut rng);
    let b = rand_t(1, 3, &mut rng);
    let r3 = rand_t(5, 3, &mut rng);
    let r4 = rand_t(5, 4, &mut rng);
    let row = rand_t(1, 4, &mut rng);
    let gamma = rand_t(1, 4, &mut rng);
    let beta = rand_t(1, 4, &mut rng);
    let r1 = rand_t(1, 4, &mut rng);
    let glob = rand_t(1, 2, &mut rng);
    let r6 = rand_t(5, 6, &mut rng);
    let coords = rand_t(5, 3, &mut rng);
    let s = rand_t(5, 1, &mut rng);
    let t = rand_t(5, 1, &mut rng);
    let pred = rand_t(8, 3, &mut rng);
    let target = rand_t(6, 3, &mut rng);
    let col = (seed % 3) as usize;
    let h = 1e-5;
    Ok(vec![
        ("linear", grad_check(&[x.clone(), w, b], h, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            g.weighted_sum(y, &r3)
        })?),
        ("add_row+tanh+scale", grad_check(&[x.clone(), row], h, |g, v| {
            let y = g.add_row(v[0], v[1])?;
            let y = g.tanh(y)?;
            let y = g.scale(y, 1.7)?;
            g.weighted_sum(y, &r4)
        })?),
        ("relu", grad_check(&[x.clone()], h, |g, v| {
            let y = g.relu(v[0])?;
            g.weighted_sum(y, &r4)
        })?),
        ("batchnorm_train", grad_check(&[x.clone(), gamma.clone(), beta.clone()], h, |g, v| {
            let (y, _) = g.batchnorm_train(v[0], v[1], v[2])?;
            g.weighted_sum(y, &r4)
        })?),
        ("batchnorm_eval", grad_check(&[x.clone(), gamma, beta], h, |g, v| {
            let y = g.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3, 0.0], &[1.0, 0.5, 2.0, 0.1])?;
            g.weighted_sum(y, &r4)
        })?),
        ("maxpool", grad_check(&[x.clone()], h, |g, v| {
            let y = g.maxpool(v[0])?;
            g.weighted_sum(y, &r1)
        })?),
        ("concat_broadcast", grad_check(&[x, glob], h, |g, v| {
            let y = g.concat_broadcast(v[0], v[1])?;
            g.weighted_sum(y, &r6)
        })?),
        ("coupling+mask+reshape+sum", grad_check(&[coords, s, t], h, |g, v| {
            let y = g.coupling(v[0], v[1], v[2], col)?;
            let y = g.reshape(y, 3, 5)?;
            let y = g.reshape(y, 5, 3)?;
            let m = g.mask_column(v[0], (col + 1) % 3)?;
            let a = g.weighted_sum(y, &r3)?;
            let b = g.weighted_sum(m, &r3)?;
            let pair = g.concat_broadcast(a, b)?;
            g.sum(pair)
        })?),
        ("chamfer", grad_check(&[pred], h, |g, v| g.chamfer(v[0], &target))?),
    ])
}

/// Toy encoder + flow parameters with every weight nonzero.
pub fn toy_model(seed: u64) -> Result<ParamSet> {
    let mut ps = init_autoencoder(&AeSpec { encoder_widths: vec![8, 16], decoder_widths: vec![8], points: 16 }, seed)?;
    ps.extend(init_flow(&FlowSpec { blocks: 2, code_dim: 16, proj_dim: 8, hidden: 8 }, seed)?);
    let mut rng = rng_for(seed, &[0x70f]);
    let names: Vec<String> = ps.iter().filter(|p| p.name.contains("_out.")).map(|p| p.name.clone()).collect();
    for n in names {
        let p = ps.get_mut(&n)?;
        p.value = Tensor::uniform(p.value.rows(), p.value.cols(), 0.3, &mut rng);
    }
    Ok(ps)
}

/// Encoder (train-mode batchnorm) → flow → chamfer on a 16-point cloud,
/// checked against central differences over every trainable entry.
/// Returns the worst relative error and the distance to the nearest kink.
pub fn composite_gradient_error(seed: u64) -> Result<(f64, f64)> {
    let params = toy_model(seed)?;
    let mut rng = rng_for(seed, &[0xc0]);
    let cloud = Tensor::from_points(&random_points(16, 0.5, &mut rng));
    let template = Tensor::from_points(&random_points(10, 0.5, &mut rng));
    let target = Tensor::from_points(&random_points(12, 0.5, &mut rng));
    let loss = |ps: &ParamSet, g: &mut Graph| -> Result<Var> {
        let x = g.constant(cloud.clone());
        let (enc, _) = encode_graph(g, ps, x, BnMode::Train)?;
        let c = g.constant(template.clone());
        let pred = flow_graph(g, ps, c, enc)?;
        g.chamfer(pred, &target)
    };
    let mut g = Graph::new();
    let out = loss(&params, &mut g)?;
    let grads = g.backward(out)?.params();
    let margin = g.kink_margin();
    let scale = grads.values().fold(0.0f64, |m, t| m.max(t.max_abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let h = 1e-6;
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss(ps, &mut g)?;
        Ok(g.value(out).data()[0])
    };
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for p in params.iter().filter(|p| p.trainable) {
        // parameters outside the graph (the decoder) must have zero slope
        let zero = Tensor::zeros(p.value.rows(), p.value.cols());
        let analytic = grads.get(&p.name).unwrap_or(&zero);
        for k in 0..p.value.len() {
            let orig = p.value.data()[k];
            work.get_mut(&p.name)?.value.data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(&p.name)?.value.data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(&p.name)?.value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
    }
    Ok((worst, margin))
}

/// Largest |inverse(forward(x)) − x| over `models` random flows, each applied
/// to `points` random coordinates under a random encoding.
pub fn bijectivity_error(models: usize, points: usize, seed: u64) -> Result<f64> {
    let spec = FlowSpec { blocks: 6, code_dim: 16, proj_dim: 16, hidden: 16 };
    let mut worst = 0.0f64;
    for m in 0..models {
        let mut rng = rng_for(seed, &[0xb1, m as u64]);
        let mut ps = init_flow(&spec, rng.random())?;
        let names: Vec<String> = ps.iter().map(|p| p.name.clone()).collect();
        for n in names {
            let p = ps.get_mut(&n)?;
            p.value = Tensor::uniform(p.value.rows(), p.value.cols(), 0.5, &mut rng);
        }
        let flow = FlowModel::<f64>::from_params(&ps)?;
        let enc: Vec<f64> = (0..spec.code_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cond = flow.condition(&enc)?;
        let orig = random_points(points, 1.0, &mut rng);
        let mut x = orig.clone();
        let mut ws = FlowWorkspace::default();
        flow.forward(&mut x, &cond, &mut ws)?;
        flow.inverse(&mut x, &cond, &mut ws)?;
        for (a, b) in x.iter().zip(&orig) {
            for d in 0..3 {
                worst = worst.max((a[d] - b[d]).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest |accelerated − brute-force| chamfer over random pairs of up to
/// `max_n` points.
pub fn chamfer_oracle_error(pairs: usize, max_n: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0xcd]);
    (0..pairs)
        .map(|_| {
            let a = random_points(rng.random_range(1..=max_n), 1.0, &mut rng);
            let b = random_points(rng.random_range(1..=max_n), 1.0, &mut rng);
            (chamfer_forward(&a, &b).value - chamfer_bruteforce(&a, &b)).abs()
        })
        .fold(0.0, f64::max)
}

/// Number of clouds (out of `clouds`) whose eval-mode encoding changes under
/// a random permutation.
pub fn permutation_failures(clouds: usize, seed: u64) -> Result<usize> {
    let params = init_autoencoder(&AeSpec { encoder_widths: vec![16, 32], decoder_widths: vec![8], points: 64 }, seed)?;
    let enc = Encoder::<f64>::from_params(&params)?;
    let mut rng = rng_for(seed, &[0x9e]);
    let mut failures = 0;
    for _ in 0..clouds {
        let mut pts = random_points(rng.random_range(2..200), 1.0, &mut rng);
        let a = enc.encode(&pts)?;
        pts.shuffle(&mut rng);
        if a != enc.encode(&pts)? {
            failures += 1;
        }
    }
    Ok(failures)
}

/// Largest node residual over `fields` sampled warp fields.
pub fn rbf_node_error(fields: usize, seed: u64) -> Result<f64> {
    (0..fields as u64).try_fold(0.0f64, |m, i| Ok(m.max(sample_warp_field(seed.wrapping_add(i), 0.05)?.node_residual())))
}

/// save → load → save produces identical bytes.
pub fn checkpoint_round_trip(seed: u64) -> Result<bool> {
    let mut cfg = TrainConfig::desk(Stage::TrainFlow);
    cfg.code_dim = 16;
    cfg.blocks = 2;
    cfg.proj_dim = 8;
    cfg.flow_hidden = 8;
    cfg.encoder_hidden = vec![8];
    cfg.decoder_hidden = vec![8];
    cfg.points = 16;
    let ckpt = Checkpoint { config: cfg, params: toy_model(seed)?, optimizer: AdamState::default() };
    let bytes = ckpt.to_bytes()?;
    Ok(Checkpoint::from_bytes(&bytes)?.to_bytes()? == bytes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Reduced-size versions of the property suites. Errors count as failures.
pub fn run_all(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, r: Result<(bool, String)>| {
        out.push(match r {
            Ok((ok, d)) => check(name, ok, d),
            Err(e) => check(name, false, format!("error: {e}")),
        })
    };
    push("op gradients", (0..5).try_fold((true, String::new()), |(ok, _), s| {
        let reps = op_gradient_reports(seed.wrapping_add(s))?;
        let worst = reps.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
        Ok((ok && worst < 1e-4, format!("max rel error {worst:.2e}")))
    }));
    push("composite gradient", (|| {
        let (e, _) = composite_gradient_error(seed)?;
        Ok((e < 1e-4, format!("max rel error {e:.2e}")))
    })());
    push("flow bijectivity", (|| {
        let e = bijectivity_error(2, 500, seed)?;
        Ok((e < 1e-9, format!("max error {e:.2e}")))
    })());
    push("chamfer oracle", {
        let e = chamfer_oracle_error(20, 200, seed);
        Ok((e < 1e-12, format!("max difference {e:.2e}")))
    });
    push("permutation invariance", (|| {
        let f = permutation_failures(20, seed)?;
        Ok((f == 0, format!("{f} of 20 clouds changed")))
    })());
    push("rbf node exactness", (|| {
        let e = rbf_node_error(10, seed)?;
        Ok((e < 1e-9, format!("max residual {e:.2e}")))
    })());
    push("checkpoint round trip", checkpoint_round_trip(seed).map(|ok| (ok, String::new())));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all(1) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

}
