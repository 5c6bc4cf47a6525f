//! `meshflow` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use meshflow::config::{Command, RunConfig};
use meshflow::deform::{build_dataset, DatasetManifest, ObjectSource, Split};
use meshflow::eval::{self, EvalLabel, EvalOptions, Precision};
use meshflow::flow::{deform_mesh, FlowModel};
use meshflow::autoencoder::Encoder;
use meshflow::geometry::{io, sample_surface, Mesh, PointCloud};
use meshflow::train::{self, Checkpoint};
use meshflow::{selftest, Error};

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(r: meshflow::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn cli() -> clap::Command {
    let mut app = clap::Command::new("meshflow")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Template-mesh deformation from point clouds")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat key = value config file; flags override it"),
        );
        for k in cmd.keys() {
            let mut help = k.help.to_string();
            if !k.default.is_empty() {
                help.push_str(&format!(" [default: {}]", k.default));
            }
            let mut arg = Arg::new(k.name).long(k.name.replace('_', "-")).value_name("VALUE").help(help);
            if k.name == "object" {
                arg = arg.action(ArgAction::Append);
            }
            sub = sub.arg(arg);
        }
        app = app.subcommand(sub);
    }
    app
}

fn flags(cmd: Command, m: &ArgMatches) -> Vec<(String, String)> {
    cmd.keys()
        .iter()
        .filter_map(|k| {
            m.get_many::<String>(k.name)
                .map(|vs| (k.name.to_string(), vs.cloned().collect::<Vec<_>>().join(",")))
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> meshflow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// `builtin:<name>[@res]` or a mesh file read as-is.
fn load_template(spec: &str) -> meshflow::Result<Mesh> {
    if spec.starts_with("builtin:") {
        Ok(ObjectSource::resolve(spec, 9)?.mesh)
    } else {
        io::read_mesh(spec)
    }
}

fn gen_data(cfg: &RunConfig) -> Outcome<()> {
    let spec = usage(cfg.dataset_spec())?;
    let (out, res): (PathBuf, usize) = usage((|| Ok((cfg.path("out")?, cfg.get("fixture_res")?)))())?;
    let manifest = build_dataset(&spec, &out, res)?;
    let dir = out.join(spec.dataset.to_string());
    cfg.write(dir.join("gen-data.cfg"))?;
    println!(
        "dataset {}: {} train, {} test entries -> {}",
        spec.dataset,
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        dir.join("manifest.json").display()
    );
    Ok(())
}

fn pretrain_ae(cfg: &RunConfig) -> Outcome<()> {
    let tc = usage(cfg.ae_config())?;
    let out = usage(cfg.path("out"))?;
    let (train_set, test_set) = train::load_splits(&tc)?;
    let result = train::pretrain_autoencoder(&tc, &train_set, &test_set)?;
    ensure_dir(&out)?;
    result.checkpoint.save(out.join("ae.ckpt"))?;
    train::write_metrics(out.join("metrics.csv"), &result.metrics)?;
    cfg.write(out.join("pretrain-ae.cfg"))?;
    if let Some(last) = result.metrics.last() {
        println!("final {} {} {:.6e}", last.split, last.loss_name, last.value);
    }
    println!("checkpoint -> {}", out.join("ae.ckpt").display());
    Ok(())
}

fn train_flow(cfg: &RunConfig) -> Outcome<()> {
    let (ae_path, out) = usage((|| Ok((cfg.path("ae_ckpt")?, cfg.path("out")?)))())?;
    let ae = Checkpoint::load(&ae_path)?;
    let tc = usage(cfg.flow_config(&ae.config))?;
    let (train_set, test_set) = train::load_splits(&tc)?;
    let result = train::train_flow(&tc, &ae, &train_set, &test_set)?;
    ensure_dir(&out)?;
    result.checkpoint.save(out.join("flow.ckpt"))?;
    train::write_metrics(out.join("metrics.csv"), &result.metrics)?;
    cfg.write(out.join("train-flow.cfg"))?;
    if let Some(last) = result.metrics.last() {
        println!("final {} {} {:.6e}", last.split, last.loss_name, last.value);
    }
    println!("checkpoint -> {}", out.join("flow.ckpt").display());
    Ok(())
}

fn deform_with<T: meshflow::tensor::Real>(ckpt: &Checkpoint, template: &Mesh, cloud: &PointCloud) -> meshflow::Result<Mesh> {
    let enc = Encoder::<T>::from_params(&ckpt.params)?.encode(cloud.points())?;
    deform_mesh(&FlowModel::<T>::from_params(&ckpt.params)?, template, &enc)
}

fn infer(cfg: &RunConfig) -> Outcome<()> {
    let (ckpt, template, cloud, precision, out): (PathBuf, String, PathBuf, Precision, PathBuf) =
        usage((|| Ok((cfg.path("ckpt")?, cfg.get("template")?, cfg.path("cloud")?, cfg.get("precision")?, cfg.path("out")?)))())?;
    let ckpt = Checkpoint::load(ckpt)?;
    let template = load_template(&template)?;
    let cloud = io::read_xyz(cloud)?;
    let mesh = match precision {
        Precision::F32 => deform_with::<f32>(&ckpt, &template, &cloud)?,
        Precision::F64 => deform_with::<f64>(&ckpt, &template, &cloud)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    io::write_mesh(&out, &mesh)?;
    cfg.write(out.with_extension("infer.cfg"))?;
    println!("{} vertices, {} faces -> {}", mesh.vertices().len(), mesh.faces().len(), out.display());
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Outcome<()> {
    struct Plan {
        ckpt: PathBuf,
        manifest: PathBuf,
        split: Split,
        object: Option<String>,
        experiment: String,
        train_set: Option<String>,
        jobs: usize,
        dump: Option<PathBuf>,
        out: PathBuf,
    }
    let p = usage((|| {
        Ok(Plan {
            ckpt: cfg.path("ckpt")?,
            manifest: cfg.path("manifest")?,
            split: cfg.get("split")?,
            object: cfg.opt("object")?,
            experiment: cfg.get("experiment")?,
            train_set: cfg.opt("train_set")?,
            jobs: cfg.get("jobs")?,
            dump: cfg.opt_path("dump_meshes")?,
            out: cfg.path("out")?,
        })
    })())?;
    let ckpt = Checkpoint::load(&p.ckpt)?;
    let test_id = DatasetManifest::load(&p.manifest)?.dataset_id;
    let mut object = p.object;
    if let Some((_, train_id, want)) = eval::EXPERIMENTS.iter().find(|(id, _, _)| *id == p.experiment) {
        if *want != test_id {
            return Err(Failure::Usage(format!("{} tests on dataset {want}, manifest is {test_id}", p.experiment)));
        }
        if p.train_set.is_none() {
            let trained_on = DatasetManifest::load(&ckpt.config.manifest).map(|m| m.dataset_id).ok();
            if trained_on.is_some_and(|t| t != *train_id) {
                eprintln!("warning: {} expects a model trained on {train_id}", p.experiment);
            }
        }
        object.get_or_insert_with(|| "scissors".to_string());
    }
    let train_set = p.train_set.unwrap_or_else(|| {
        DatasetManifest::load(&ckpt.config.manifest).map_or_else(|_| "unknown".to_string(), |m| m.dataset_id.to_string())
    });
    let label = EvalLabel::new(&p.experiment, &train_set, &test_id.to_string());
    let opts = EvalOptions { jobs: p.jobs, dump_meshes: p.dump };
    let result = eval::evaluate(&ckpt.params, &p.manifest, p.split, object.as_deref(), &label, &opts)?;
    ensure_dir(&p.out)?;
    result.entries.write_csv(p.out.join("entries.csv"))?;
    result.summary.write_csv(p.out.join("summary.csv"))?;
    cfg.write(p.out.join("eval.cfg"))?;
    print!("{}", result.summary.to_csv());
    Ok(())
}

fn bench(cfg: &RunConfig) -> Outcome<()> {
    type Plan = (PathBuf, String, Option<PathBuf>, usize, usize, usize, Precision, u64, PathBuf);
    let (ckpt, template, cloud, points, iters, warmup, precision, seed, out): Plan = usage((|| {
        Ok((
            cfg.path("ckpt")?,
            cfg.get("template")?,
            cfg.opt_path("cloud")?,
            cfg.get("points")?,
            cfg.get("iters")?,
            cfg.get("warmup")?,
            cfg.get("precision")?,
            cfg.get("seed")?,
            cfg.path("out")?,
        ))
    })())?;
    if iters < eval::MIN_TIMED_ITERS {
        return Err(Failure::Usage(format!("iters must be at least {}", eval::MIN_TIMED_ITERS)));
    }
    let ckpt = Checkpoint::load(ckpt)?;
    let template = load_template(&template)?;
    let cloud = match cloud {
        Some(p) => io::read_xyz(p)?,
        None => sample_surface(&template, points, seed)?,
    };
    let report = eval::bench_inference(&ckpt.params, &template, &cloud, iters, warmup, precision)?;
    ensure_dir(&out)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join("bench.json");
    fs::write(&path, format!("{json}\n")).map_err(|e| Error::file(&path, e))?;
    cfg.write(out.join("bench.cfg"))?;
    println!("{json}");
    Ok(())
}

fn run_selftest(cfg: &RunConfig) -> Outcome<bool> {
    let seed = usage(cfg.get("seed"))?;
    let checks = selftest::run_all(seed);
    for c in &checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn dispatch(m: &ArgMatches) -> Outcome<bool> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cmd: Command = usage(name.parse())?;
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    let cfg = usage(RunConfig::load(cmd, file.as_deref(), &flags(cmd, sub)))?;
    match cmd {
        Command::GenData => gen_data(&cfg),
        Command::PretrainAe => pretrain_ae(&cfg),
        Command::TrainFlow => train_flow(&cfg),
        Command::Infer => infer(&cfg),
        Command::Eval => evaluate(&cfg),
        Command::Bench => bench(&cfg),
        Command::Selftest => return run_selftest(&cfg),
    }
    .map(|()| true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&matches) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `meshflow --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
