//! Evaluation tables, adaptive-resolution check and inference benchmark.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{self, Encoder};
use crate::deform::{load_samples, DatasetId, Sample, Split};
use crate::flow::{flow_deform, FlowModel, FlowWorkspace};
use crate::geometry::{io, Mesh, Point3, PointCloud};
use crate::tensor::{chamfer_forward, ParamSet, Real};
use crate::{Error, Result};

pub const L_CDR: &str = "L_CDR";
pub const L_CDD: &str = "L_CDD";
pub const PER_VERTEX_L2: &str = "per_vertex_L2";
pub const ALL: &str = "ALL";

/// Train/test pairings of the generalization grid. Every test set is
/// restricted to the first object (scissors).
pub const EXPERIMENTS: [(&str, DatasetId, DatasetId); 4] = [
    ("Exp7", DatasetId::A, DatasetId::B),
    ("Exp8", DatasetId::B, DatasetId::B),
    ("Exp9", DatasetId::C, DatasetId::C),
    ("Exp10", DatasetId::D, DatasetId::C),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment_id: String,
    pub train_set: String,
    pub test_set: String,
    pub object_id: String,
    pub metric_name: String,
    pub value: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

const CSV_HEADER: &str = "experiment_id,train_set,test_set,object_id,metric_name,value,n_samples";

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:e},{}",
                r.experiment_id, r.train_set, r.test_set, r.object_id, r.metric_name, r.value, r.n_samples
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: "missing metrics header".into() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.into() };
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            rows.push(MetricsRow {
                experiment_id: f[0].into(),
                train_set: f[1].into(),
                test_set: f[2].into(),
                object_id: f[3].into(),
                metric_name: f[4].into(),
                value: f[5].parse().map_err(|_| bad("invalid value"))?,
                n_samples: f[6].parse().map_err(|_| bad("invalid n_samples"))?,
            });
        }
        Ok(MetricsTable { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::file(path, e))
    }

    /// Value of the first row matching `object_id` and `metric`.
    pub fn value(&self, object_id: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.object_id == object_id && r.metric_name == metric)
            .map(|r| r.value)
    }
}

type GroupKey = (String, String, String, String);

fn group(table: &MetricsTable, by_object: bool) -> Vec<MetricsRow> {
    let mut acc: BTreeMap<(GroupKey, String), (f64, usize)> = BTreeMap::new();
    let mut order: Vec<(GroupKey, String)> = Vec::new();
    for r in table.rows.iter().filter(|r| r.object_id != ALL) {
        let obj = if by_object { r.object_id.clone() } else { ALL.to_string() };
        let key = ((r.experiment_id.clone(), r.train_set.clone(), r.test_set.clone(), obj), r.metric_name.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        e.0 += r.value * r.n_samples as f64;
        e.1 += r.n_samples;
    }
    order
        .into_iter()
        .map(|key| {
            let (sum, n) = acc[&key];
            let ((experiment_id, train_set, test_set, object_id), metric_name) = key;
            MetricsRow {
                experiment_id,
                train_set,
                test_set,
                object_id,
                metric_name,
                value: sum / n as f64,
                n_samples: n,
            }
        })
        .collect()
}

/// One sample-weighted mean row per (experiment, object, metric). Rows whose
/// object is `ALL` are ignored.
pub fn per_object_breakdown(table: &MetricsTable) -> MetricsTable {
    MetricsTable { rows: group(table, true) }
}

/// Sample-weighted mean over all objects, one row per (experiment, metric).
pub fn aggregate(table: &MetricsTable) -> MetricsTable {
    MetricsTable { rows: group(table, false) }
}

/// Labels attached to every row of an evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalLabel {
    pub experiment_id: String,
    pub train_set: String,
    pub test_set: String,
}

impl EvalLabel {
    pub fn new(experiment_id: &str, train_set: &str, test_set: &str) -> Self {
        EvalLabel {
            experiment_id: experiment_id.into(),
            train_set: train_set.into(),
            test_set: test_set.into(),
        }
    }

    fn row(&self, object_id: &str, metric: &str, value: f64) -> MetricsRow {
        MetricsRow {
            experiment_id: self.experiment_id.clone(),
            train_set: self.train_set.clone(),
            test_set: self.test_set.clone(),
            object_id: object_id.into(),
            metric_name: metric.into(),
            value,
            n_samples: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Worker threads; 0 or 1 evaluates sequentially.
    pub jobs: usize,
    /// Write each predicted mesh as OBJ under this directory.
    pub dump_meshes: Option<std::path::PathBuf>,
}

/// Per-entry rows (`n_samples = 1`) plus the per-object and aggregate summary.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub entries: MetricsTable,
    pub summary: MetricsTable,
}

struct Models {
    encoder: Encoder<f64>,
    flow: FlowModel<f64>,
    decoder_points: Option<usize>,
}

fn eval_one(models: &Models, params: &ParamSet, s: &Sample, label: &EvalLabel) -> Result<(Vec<MetricsRow>, Mesh)> {
    let enc = models.encoder.encode(s.cloud.points())?;
    let pred = flow_deform(&models.flow, s.template.vertices(), &enc)?;
    let gt = s.target.vertices();
    if gt.len() != pred.len() {
        return Err(Error::InvalidMesh(format!("{}: vertex count differs from template", s.entry.mesh_path)));
    }
    let obj = &s.entry.object_id;
    let l2 = pred.iter().zip(gt).map(|(a, b)| crate::geometry::dist2(a, b)).sum::<f64>() / pred.len() as f64;
    let mut rows = vec![
        label.row(obj, L_CDD, chamfer_forward(&pred, gt).value),
        label.row(obj, PER_VERTEX_L2, l2),
    ];
    if models.decoder_points == Some(s.cloud.len()) {
        let code = crate::tensor::Tensor::row_vector(enc);
        let dec = autoencoder::decode(params, &code, s.cloud.len())?;
        rows.push(label.row(obj, L_CDR, chamfer_forward(dec.points(), s.cloud.points()).value));
    }
    Ok((rows, s.template.with_vertices(pred)?))
}

/// Encodes each cloud, deforms its template and scores the result against
/// the ground-truth deformed mesh. L_CDR is included when the parameters
/// carry a decoder sized for the clouds.
pub fn evaluate_samples(params: &ParamSet, samples: &[Sample], label: &EvalLabel, opts: &EvalOptions) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let models = Models {
        encoder: Encoder::from_params(params)?,
        flow: FlowModel::from_params(params)?,
        decoder_points: autoencoder::decoder_points(params).ok(),
    };
    let run = || -> Vec<Result<(Vec<MetricsRow>, Mesh)>> {
        samples.par_iter().map(|s| eval_one(&models, params, s, label)).collect()
    };
    let results = if opts.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    } else {
        samples.iter().map(|s| eval_one(&models, params, s, label)).collect()
    };
    let mut entries = MetricsTable::default();
    for (s, r) in samples.iter().zip(results) {
        let (rows, mesh) = r?;
        entries.rows.extend(rows);
        if let Some(dir) = &opts.dump_meshes {
            let e = &s.entry;
            let path = dir.join(format!("{}_{:04}_{:03}.obj", e.object_id, e.trajectory_index, e.step_index));
            fs::create_dir_all(dir).map_err(|err| Error::file(dir, err))?;
            io::write_mesh(path, &mesh)?;
        }
    }
    let mut summary = per_object_breakdown(&entries);
    summary.rows.extend(aggregate(&entries).rows);
    Ok(Evaluation { entries, summary })
}

/// Loads one split of a manifest (optionally one object only) and evaluates it.
pub fn evaluate(
    params: &ParamSet,
    manifest: impl AsRef<Path>,
    split: Split,
    object: Option<&str>,
    label: &EvalLabel,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let (_, mut samples) = load_samples(manifest, Some(split))?;
    if let Some(o) = object {
        samples.retain(|s| s.entry.object_id == o);
    }
    evaluate_samples(params, &samples, label, opts)
}

/// L_CDD of the undeformed template against each entry's ground truth.
pub fn identity_baseline(samples: &[Sample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| chamfer_forward(s.template.vertices(), s.target.vertices()).value)
        .collect()
}

/// Outcome of deforming two tessellations of one object with one encoding.
#[derive(Clone, Debug)]
pub struct AdaptiveResult {
    pub table: MetricsTable,
    pub low: Mesh,
    pub high: Mesh,
    /// High-res vertices whose position equals a low-res vertex bit for bit.
    pub coincident: usize,
    /// Whether all of those map to bit-identical outputs.
    pub coincident_identical: bool,
}

/// Deforms `low` and `high` templates with the encoding of `cloud`. Each
/// result is scored by L_CDD against its target point set (the ground-truth
/// deformed vertices at that resolution).
pub fn adaptive_resolution_eval(
    params: &ParamSet,
    low: (&Mesh, &[Point3]),
    high: (&Mesh, &[Point3]),
    cloud: &PointCloud,
    label: &EvalLabel,
) -> Result<AdaptiveResult> {
    let enc = Encoder::<f64>::from_params(params)?.encode(cloud.points())?;
    let flow = FlowModel::<f64>::from_params(params)?;
    let low_mesh = low.0.with_vertices(flow_deform(&flow, low.0.vertices(), &enc)?)?;
    let high_mesh = high.0.with_vertices(flow_deform(&flow, high.0.vertices(), &enc)?)?;
    let key = |p: &Point3| p.map(f64::to_bits);
    let low_out: HashMap<[u64; 3], Point3> = low
        .0
        .vertices()
        .iter()
        .zip(low_mesh.vertices())
        .map(|(v, o)| (key(v), *o))
        .collect();
    let mut coincident = 0;
    let mut identical = true;
    for (v, o) in high.0.vertices().iter().zip(high_mesh.vertices()) {
        if let Some(lo) = low_out.get(&key(v)) {
            coincident += 1;
            identical &= lo.map(f64::to_bits) == o.map(f64::to_bits);
        }
    }
    let mut table = MetricsTable::default();
    for (name, mesh, target) in [("low_res", &low_mesh, low.1), ("high_res", &high_mesh, high.1)] {
        let mut row = label.row(name, L_CDD, chamfer_forward(mesh.vertices(), target).value);
        row.experiment_id = format!("{}_v{}", label.experiment_id, mesh.vertices().len());
        table.rows.push(row);
    }
    Ok(AdaptiveResult {
        table,
        low: low_mesh,
        high: high_mesh,
        coincident,
        coincident_identical: identical,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(Precision::F32),
            "f64" | "float64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("invalid precision {s:?} (expected f32 or f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub vertex_count: usize,
    pub point_count: usize,
    #[serde(rename = "K")]
    pub blocks: usize,
    pub code_dim: usize,
    pub precision: Precision,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    pub threads: usize,
    pub mean_latency_s: f64,
    pub p50_latency_s: f64,
    pub p95_latency_s: f64,
    pub throughput_hz: f64,
    pub hardware: String,
}

pub const MIN_TIMED_ITERS: usize = 30;

/// CPU model name and logical core count, best effort.
pub fn hardware_descriptor() -> String {
    let model = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{model}; {cores} logical cores; {}", std::env::consts::OS)
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn bench_typed<T: Real>(params: &ParamSet, template: &Mesh, cloud: &PointCloud, iters: usize, warmup: usize) -> Result<Vec<f64>> {
    let encoder = Encoder::<T>::from_params(params)?;
    let flow = FlowModel::<T>::from_params(params)?;
    let base: Vec<[T; 3]> = template.vertices().iter().map(|p| p.map(T::from_f64)).collect();
    let mut coords = base.clone();
    let mut enc = vec![T::zero(); encoder.code_dim()];
    let mut scratch = Vec::new();
    let mut ws = FlowWorkspace::default();
    let mut times = Vec::with_capacity(iters);
    for i in 0..warmup + iters {
        coords.copy_from_slice(&base);
        let t0 = Instant::now();
        encoder.encode_into(cloud.points(), &mut scratch, &mut enc)?;
        let cond = flow.condition(&enc)?;
        flow.forward(&mut coords, &cond, &mut ws)?;
        let dt = t0.elapsed().as_secs_f64();
        std::hint::black_box(&coords);
        if i >= warmup {
            times.push(dt);
        }
    }
    Ok(times)
}

/// Times encode + flow on one thread after `warmup` untimed iterations.
pub fn bench_inference(
    params: &ParamSet,
    template: &Mesh,
    cloud: &PointCloud,
    iters: usize,
    warmup: usize,
    precision: Precision,
) -> Result<BenchReport> {
    if iters < MIN_TIMED_ITERS {
        return Err(Error::Config(format!("at least {MIN_TIMED_ITERS} timed iterations are required, got {iters}")));
    }
    let mut times = match precision {
        Precision::F32 => bench_typed::<f32>(params, template, cloud, iters, warmup)?,
        Precision::F64 => bench_typed::<f64>(params, template, cloud, iters, warmup)?,
    };
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let spec = crate::flow::FlowSpec::from_params(params)?;
    Ok(BenchReport {
        vertex_count: template.vertices().len(),
        point_count: cloud.len(),
        blocks: spec.blocks,
        code_dim: spec.code_dim,
        precision,
        warmup_iters: warmup,
        timed_iters: iters,
        threads: 1,
        mean_latency_s: mean,
        p50_latency_s: percentile(&times, 0.5),
        p95_latency_s: percentile(&times, 0.95),
        throughput_hz: 1.0 / mean,
        hardware: hardware_descriptor(),
    })
}
