//! Two-stage training: autoencoder pretraining, then flow training with the
//! encoder frozen or trained jointly.

mod checkpoint;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    self, ae_pretrain_step, encode_graph, init_autoencoder, update_running_stats, AeSpec, BnMode,
};
use crate::deform::{load_samples, Sample, Split};
use crate::flow::{flow_graph, init_flow, FlowSpec};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, ParamSet, Tensor};
use crate::{rng, Error, Result};

pub use checkpoint::{Checkpoint, MAGIC, VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PretrainAe,
    TrainFlow,
    EndToEnd,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::PretrainAe => "pretrain_ae",
            Stage::TrainFlow => "train_flow",
            Stage::EndToEnd => "end_to_end",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pretrain_ae" => Ok(Stage::PretrainAe),
            "train_flow" => Ok(Stage::TrainFlow),
            "end_to_end" => Ok(Stage::EndToEnd),
            _ => Err(Error::Config(format!(
                "invalid stage {s:?} (expected pretrain_ae, train_flow or end_to_end)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub stage: Stage,
    pub encoder_frozen: bool,
    /// Encoding size D.
    pub code_dim: usize,
    /// Coupling blocks K.
    pub blocks: usize,
    pub proj_dim: usize,
    pub flow_hidden: usize,
    /// Encoder widths before the final D-wide layer.
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub ae_lr: f64,
    pub flow_lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Points per cloud; also the decoder output size.
    pub points: usize,
}

impl TrainConfig {
    /// Full-size architecture (D = 1024, hidden 256).
    pub fn paper(stage: Stage) -> Self {
        TrainConfig {
            manifest: PathBuf::new(),
            stage,
            encoder_frozen: true,
            code_dim: 1024,
            blocks: 6,
            proj_dim: 128,
            flow_hidden: 256,
            encoder_hidden: vec![64, 128, 256],
            decoder_hidden: vec![512, 1024],
            ae_lr: 1e-3,
            flow_lr: 1e-4,
            epochs: if stage == Stage::PretrainAe { 200 } else { 400 },
            seed: 0,
            points: 5000,
        }
    }

    /// Smaller configuration sized for a single CPU core.
    pub fn desk(stage: Stage) -> Self {
        TrainConfig {
            code_dim: 256,
            flow_hidden: 128,
            points: 512,
            ..Self::paper(stage)
        }
    }

    pub fn ae_spec(&self) -> AeSpec {
        let mut encoder_widths = self.encoder_hidden.clone();
        encoder_widths.push(self.code_dim);
        AeSpec {
            encoder_widths,
            decoder_widths: self.decoder_hidden.clone(),
            points: self.points,
        }
    }

    pub fn flow_spec(&self) -> FlowSpec {
        FlowSpec {
            blocks: self.blocks,
            code_dim: self.code_dim,
            proj_dim: self.proj_dim,
            hidden: self.flow_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ae_spec().validate()?;
        self.flow_spec().validate()?;
        if self.stage == Stage::EndToEnd && self.encoder_frozen {
            return Err(Error::Config("end_to_end trains the encoder; encoder_frozen must be false".into()));
        }
        for (n, lr) in [("ae_lr", self.ae_lr), ("flow_lr", self.flow_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{n} must be a non-negative number, got {lr}")));
            }
        }
        Ok(())
    }

    /// Whether the encoder is updated during flow training.
    pub fn trains_encoder(&self) -> bool {
        self.stage == Stage::EndToEnd || !self.encoder_frozen
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: Split,
    pub loss_name: String,
    pub value: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch,split,loss_name,value\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:e}\n", r.epoch, r.split, r.loss_name, r.value));
    }
    s
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::file(path, e))
}

/// Seeded visiting order for one epoch.
fn epoch_order(n: usize, seed: u64, stage: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, &[rng::fnv1a(stage.as_bytes()), epoch as u64]));
    order
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Result of a training stage.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
}

fn check_points(cfg: &TrainConfig, samples: &[Sample]) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.cloud.len() != cfg.points) {
        return Err(Error::Config(format!(
            "cloud {} has {} points, config expects {}",
            s.entry.pointcloud_path,
            s.cloud.len(),
            cfg.points
        )));
    }
    Ok(())
}

/// L_CDR of each test cloud under the current parameters (eval mode).
fn ae_eval(params: &ParamSet, samples: &[Sample]) -> Result<f64> {
    let m = autoencoder::decoder_points(params)?;
    let losses = samples
        .iter()
        .map(|s| {
            let code = autoencoder::encode(params, &s.cloud)?;
            let dec = autoencoder::decode(params, &code, m)?;
            Ok(crate::tensor::chamfer_forward(dec.points(), s.cloud.points()).value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&losses))
}

/// Pretrains the autoencoder on `train` with the chamfer reconstruction loss.
/// Per-epoch means are logged for `train` and, when nonempty, `test`.
pub fn pretrain_autoencoder(cfg: &TrainConfig, train: &[Sample], test: &[Sample]) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.stage != Stage::PretrainAe {
        return Err(Error::Config(format!("pretrain_autoencoder called with stage {}", cfg.stage)));
    }
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    check_points(cfg, train)?;
    check_points(cfg, test)?;
    let mut params = init_autoencoder(&cfg.ae_spec(), cfg.seed)?;
    let mut state = AdamState::default();
    let hyper = AdamConfig::with_lr(cfg.ae_lr);
    let mut metrics = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::with_capacity(train.len());
        for i in epoch_order(train.len(), cfg.seed, "ae", epoch) {
            let l = ae_pretrain_step(&train[i].cloud, &mut params, &mut state, &hyper)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, step {}: {e}", state.step)))?;
            losses.push(l);
        }
        metrics.push(MetricRow {
            epoch,
            split: Split::Train,
            loss_name: "L_CDR".into(),
            value: mean(&losses),
        });
        if !test.is_empty() {
            metrics.push(MetricRow {
                epoch,
                split: Split::Test,
                loss_name: "L_CDR".into(),
                value: ae_eval(&params, test)?,
            });
        }
        log_epoch(cfg, epoch, &metrics);
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            params,
            optimizer: state,
        },
        metrics,
    })
}

/// Flow training state: parameters, optimizer and cached encodings.
pub struct FlowTrainer {
    cfg: TrainConfig,
    params: ParamSet,
    state: AdamState,
    hyper: AdamConfig,
    /// Eval-mode encodings keyed by cloud path; only used with a frozen encoder.
    cache: HashMap<String, Tensor>,
}

impl FlowTrainer {
    /// Starts from the autoencoder in `ae` and a freshly initialized flow.
    pub fn new(cfg: &TrainConfig, ae: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage == Stage::PretrainAe {
            return Err(Error::Config("flow training needs stage train_flow or end_to_end".into()));
        }
        let d = autoencoder::code_dim(&ae.params)?;
        if d != cfg.code_dim {
            return Err(Error::Config(format!("autoencoder has D={d}, config asks for D={}", cfg.code_dim)));
        }
        let mut params = ParamSet::new();
        for p in ae.params.iter().filter(|p| !p.name.starts_with("flow.")) {
            params.insert(p.name.clone(), p.value.clone(), p.trainable);
        }
        params.set_trainable("decoder.", false);
        let train_enc = cfg.trains_encoder();
        let enc_names: Vec<String> = params
            .with_prefix("encoder.")
            .filter(|p| !p.name.contains("running"))
            .map(|p| p.name.clone())
            .collect();
        for n in enc_names {
            params.get_mut(&n)?.trainable = train_enc;
        }
        params.extend(init_flow(&cfg.flow_spec(), cfg.seed)?);
        Ok(FlowTrainer {
            cfg: cfg.clone(),
            params,
            state: AdamState::default(),
            hyper: AdamConfig::with_lr(cfg.flow_lr),
            cache: HashMap::new(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn cached_encoding(&mut self, s: &Sample) -> Result<Tensor> {
        if let Some(t) = self.cache.get(&s.entry.pointcloud_path) {
            return Ok(t.clone());
        }
        let t = autoencoder::encode(&self.params, &s.cloud)?;
        self.cache.insert(s.entry.pointcloud_path.clone(), t.clone());
        Ok(t)
    }

    /// One gradient step on `s`; returns L_CDD before the update.
    pub fn step(&mut self, s: &Sample) -> Result<f64> {
        let mut g = Graph::new();
        let enc = if self.cfg.trains_encoder() {
            let x = g.constant(Tensor::from_points(s.cloud.points()));
            let (code, stats) = encode_graph(&mut g, &self.params, x, BnMode::Train)?;
            update_running_stats(&mut self.params, &stats)?;
            code
        } else {
            let t = self.cached_encoding(s)?;
            g.constant(t)
        };
        let coords = g.constant(Tensor::from_points(s.template.vertices()));
        let pred = flow_graph(&mut g, &self.params, coords, enc)?;
        let loss = g.chamfer(pred, &Tensor::from_points(s.target.vertices()))?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        adam_step(&mut self.params, &grads.params(), &mut self.state, &self.hyper)?;
        Ok(value)
    }

    /// Mean L_CDD over `samples` with the current parameters (eval mode).
    pub fn evaluate(&self, samples: &[Sample]) -> Result<f64> {
        let enc = crate::autoencoder::Encoder::<f64>::from_params(&self.params)?;
        let flow = crate::flow::FlowModel::<f64>::from_params(&self.params)?;
        let losses = samples
            .iter()
            .map(|s| {
                let code = enc.encode(s.cloud.points())?;
                let pred = crate::flow::flow_deform(&flow, s.template.vertices(), &code)?;
                Ok(crate::tensor::chamfer_forward(&pred, s.target.vertices()).value)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(mean(&losses))
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            config: self.cfg,
            params: self.params,
            optimizer: self.state,
        }
    }
}

fn log_epoch(cfg: &TrainConfig, epoch: usize, metrics: &[MetricRow]) {
    let rows: Vec<String> = metrics
        .iter()
        .rev()
        .take_while(|m| m.epoch == epoch)
        .map(|m| format!("{} {} {:.4e}", m.split, m.loss_name, m.value))
        .collect();
    log::info!("{} epoch {}/{}: {}", cfg.stage, epoch + 1, cfg.epochs, rows.into_iter().rev().collect::<Vec<_>>().join(", "));
}

/// Trains the flow for `cfg.epochs` over `train` in seeded order.
pub fn train_flow(cfg: &TrainConfig, ae: &Checkpoint, train: &[Sample], test: &[Sample]) -> Result<TrainOutput> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut trainer = FlowTrainer::new(cfg, ae)?;
    let mut metrics = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::with_capacity(train.len());
        for i in epoch_order(train.len(), cfg.seed, "flow", epoch) {
            let step = trainer.state.step;
            let l = trainer
                .step(&train[i])
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, step {step}: {e}")))?;
            losses.push(l);
        }
        metrics.push(MetricRow {
            epoch,
            split: Split::Train,
            loss_name: "L_CDD".into(),
            value: mean(&losses),
        });
        if !test.is_empty() {
            metrics.push(MetricRow {
                epoch,
                split: Split::Test,
                loss_name: "L_CDD".into(),
                value: trainer.evaluate(test)?,
            });
        }
        log_epoch(cfg, epoch, &metrics);
    }
    Ok(TrainOutput {
        checkpoint: trainer.into_checkpoint(),
        metrics,
    })
}

/// Loads both splits named by `cfg.manifest`.
pub fn load_splits(cfg: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (_, all) = load_samples(&cfg.manifest, None)?;
    Ok(all.into_iter().partition(|s| s.entry.split == Split::Train))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::ManifestEntry;
    use crate::geometry::{chamfer_bruteforce, fixtures, sample_surface, Mesh};
    use crate::deform::sample_warp_field;
    use std::sync::Arc;

    fn toy_cfg(stage: Stage) -> TrainConfig {
        TrainConfig {
            code_dim: 16,
            blocks: 3,
            proj_dim: 8,
            flow_hidden: 16,
            encoder_hidden: vec![8, 16],
            decoder_hidden: vec![32],
            points: 64,
            epochs: 3,
            seed: 11,
            ..TrainConfig::desk(stage)
        }
    }

    /// Template + warped copies of a small fixture, built in memory.
    fn toy_samples(steps: usize, points: usize) -> Vec<Sample> {
        let template = Arc::new(fixtures::object("hammer", 3).unwrap());
        let field = sample_warp_field(4, 0.05).unwrap();
        let traj = crate::deform::generate_trajectory("hammer", &template, &field, steps).unwrap();
        (1..=steps)
            .map(|k| {
                let target: Mesh = traj.steps[k].clone();
                Sample {
                    entry: ManifestEntry {
                        object_id: "hammer".into(),
                        trajectory_index: 0,
                        step_index: k,
                        split: Split::Train,
                        mesh_path: format!("hammer/{k}.obj"),
                        pointcloud_path: format!("hammer/{k}.xyz"),
                        template_path: "hammer/template.obj".into(),
                    },
                    template: Arc::clone(&template),
                    cloud: sample_surface(&target, points, k as u64).unwrap(),
                    target,
                }
            })
            .collect()
    }

    fn pretrained(cfg: &TrainConfig, samples: &[Sample]) -> Checkpoint {
        let mut c = cfg.clone();
        c.stage = Stage::PretrainAe;
        pretrain_autoencoder(&c, samples, &[]).unwrap().checkpoint
    }

    #[test]
    fn ae_pretraining_is_deterministic_and_reduces_loss() {
        let cfg = TrainConfig {
            epochs: 300,
            ..toy_cfg(Stage::PretrainAe)
        };
        let samples = toy_samples(1, 64);
        let a = pretrain_autoencoder(&cfg, &samples, &[]).unwrap();
        let first = a.metrics[0].value;
        let last = a.metrics.last().unwrap().value;
        assert!(last < 0.1 * first, "{first} -> {last}");
        let short = TrainConfig { epochs: 20, ..cfg.clone() };
        let b = pretrain_autoencoder(&short, &samples, &[]).unwrap();
        let c = pretrain_autoencoder(&short, &samples, &[]).unwrap();
        let bits = |o: &TrainOutput| o.metrics.iter().map(|m| m.value.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&b), bits(&c));
        assert_eq!(b.checkpoint.to_bytes().unwrap(), c.checkpoint.to_bytes().unwrap());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig { epochs: 0, ..toy_cfg(Stage::PretrainAe) };
        let out = pretrain_autoencoder(&cfg, &toy_samples(1, 64), &[]).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.checkpoint.params, init_autoencoder(&cfg.ae_spec(), cfg.seed).unwrap());
        assert_eq!(out.checkpoint.optimizer.step, 0);
    }

    #[test]
    fn empty_split_and_bad_stage_are_config_errors() {
        let cfg = toy_cfg(Stage::PretrainAe);
        assert!(matches!(pretrain_autoencoder(&cfg, &[], &[]), Err(Error::Config(_))));
        let e2e = TrainConfig { encoder_frozen: true, ..toy_cfg(Stage::EndToEnd) };
        assert!(matches!(e2e.validate(), Err(Error::Config(_))));
        assert!(matches!(
            pretrain_autoencoder(&toy_cfg(Stage::TrainFlow), &toy_samples(1, 64), &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_start_loss_equals_template_chamfer() {
        let cfg = toy_cfg(Stage::TrainFlow);
        let samples = toy_samples(3, 64);
        let ae = pretrained(&TrainConfig { epochs: 1, ..cfg.clone() }, &samples);
        let mut tr = FlowTrainer::new(&cfg, &ae).unwrap();
        let l = tr.step(&samples[2]).unwrap();
        let want = chamfer_bruteforce(samples[2].template.vertices(), samples[2].target.vertices());
        assert!((l - want).abs() < 1e-9);
    }

    #[test]
    fn reported_loss_matches_oracle_mid_training() {
        let cfg = toy_cfg(Stage::TrainFlow);
        let samples = toy_samples(2, 64);
        let ae = pretrained(&TrainConfig { epochs: 1, ..cfg.clone() }, &samples);
        let mut tr = FlowTrainer::new(&cfg, &ae).unwrap();
        for _ in 0..5 {
            tr.step(&samples[0]).unwrap();
        }
        let enc = autoencoder::encode(tr.params(), &samples[1].cloud).unwrap();
        let flow = crate::flow::FlowModel::<f64>::from_params(tr.params()).unwrap();
        let pred = crate::flow::flow_deform(&flow, samples[1].template.vertices(), enc.data()).unwrap();
        let oracle = chamfer_bruteforce(&pred, samples[1].target.vertices());
        let l = tr.step(&samples[1]).unwrap();
        assert!((l - oracle).abs() < 1e-9);
    }

    #[test]
    fn single_pair_overfits() {
        let cfg = TrainConfig {
            epochs: 500,
            flow_lr: 3e-3,
            blocks: 6,
            proj_dim: 16,
            flow_hidden: 32,
            ..toy_cfg(Stage::TrainFlow)
        };
        let samples = toy_samples(4, 64);
        let pair = &samples[3..4];
        let ae = pretrained(&TrainConfig { epochs: 1, ..cfg.clone() }, pair);
        let out = train_flow(&cfg, &ae, pair, &[]).unwrap();
        let last = out.metrics.last().unwrap().value;
        assert!(last < 1e-4, "final L_CDD {last}, start {}", out.metrics[0].value);
    }

    #[test]
    fn frozen_encoder_is_untouched_and_unfrozen_moves() {
        let samples = toy_samples(2, 64);
        for frozen in [true, false] {
            let cfg = TrainConfig {
                encoder_frozen: frozen,
                ..toy_cfg(Stage::TrainFlow)
            };
            let ae = pretrained(&TrainConfig { epochs: 2, ..cfg.clone() }, &samples);
            let out = train_flow(&cfg, &ae, &samples, &[]).unwrap();
            let changed = ae
                .params
                .iter()
                .filter(|p| p.name.starts_with("encoder."))
                .filter(|p| out.checkpoint.params.value(&p.name).unwrap() != &p.value)
                .count();
            let decoder_same = ae
                .params
                .with_prefix("decoder.")
                .all(|p| out.checkpoint.params.value(&p.name).unwrap() == &p.value);
            assert!(decoder_same);
            if frozen {
                assert_eq!(changed, 0);
            } else {
                assert!(changed > 0);
            }
        }
    }

    #[test]
    fn d_mismatch_is_config_error() {
        let cfg = toy_cfg(Stage::TrainFlow);
        let samples = toy_samples(1, 64);
        let ae = pretrained(&cfg, &samples);
        let other = TrainConfig { code_dim: 8, ..cfg };
        assert!(matches!(FlowTrainer::new(&other, &ae), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let cfg = TrainConfig { epochs: 2, ..toy_cfg(Stage::TrainFlow) };
        let samples = toy_samples(2, 64);
        let ae = pretrained(&cfg, &samples);
        let ck = train_flow(&cfg, &ae, &samples, &[]).unwrap().checkpoint;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
        assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
        let a = autoencoder::encode(&ck.params, &samples[0].cloud).unwrap();
        let b = autoencoder::encode(&loaded.params, &samples[0].cloud).unwrap();
        assert_eq!(a, b);

        let bytes = std::fs::read(&path).unwrap();
        for cut in [3, 15, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::CheckpointVersion { found: 9, .. })));

        let k_mismatch = TrainConfig { blocks: 4, ..cfg.clone() };
        assert!(matches!(Checkpoint::load_checked(&path, &k_mismatch), Err(Error::Config(_))));
        let d_mismatch = TrainConfig { code_dim: 32, ..cfg.clone() };
        assert!(matches!(Checkpoint::load_checked(&path, &d_mismatch), Err(Error::Config(_))));
        assert!(Checkpoint::load_checked(&path, &cfg).is_ok());
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![MetricRow { epoch: 0, split: Split::Train, loss_name: "L_CDD".into(), value: 0.5 }];
        assert_eq!(metrics_csv(&rows), "epoch,split,loss_name,value\n0,train,L_CDD,5e-1\n");
    }
}
