//! Flat `key = value` run configuration.
//!
//! Every subcommand has a fixed key set with explicit defaults. Values are
//! layered defaults < config file < `MESHFLOW_SEED` (seed only, when neither
//! file nor flag sets it) < command-line flags. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::deform::{DatasetId, DatasetSpec};
use crate::train::{Stage, TrainConfig};
use crate::{Error, Result};

pub const SEED_ENV: &str = "MESHFLOW_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    GenData,
    PretrainAe,
    TrainFlow,
    Infer,
    Eval,
    Bench,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::GenData,
        Command::PretrainAe,
        Command::TrainFlow,
        Command::Infer,
        Command::Eval,
        Command::Bench,
        Command::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::PretrainAe => "pretrain-ae",
            Command::TrainFlow => "train-flow",
            Command::Infer => "infer",
            Command::Eval => "eval",
            Command::Bench => "bench",
            Command::Selftest => "selftest",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::GenData => "Generate a deformation dataset (A-D) and its manifest",
            Command::PretrainAe => "Pretrain the point-cloud autoencoder",
            Command::TrainFlow => "Train the coupling flow on top of a pretrained autoencoder",
            Command::Infer => "Deform a template mesh to fit a point cloud",
            Command::Eval => "Score a checkpoint on a dataset split",
            Command::Bench => "Time single-threaded inference",
            Command::Selftest => "Run gradient checks, round trips and oracle comparisons",
        }
    }

    /// Accepted keys with their defaults. An empty default means "unset":
    /// either required or filled in from a preset.
    pub fn keys(self) -> &'static [Key] {
        match self {
            Command::GenData => GEN_DATA,
            Command::PretrainAe => PRETRAIN_AE,
            Command::TrainFlow => TRAIN_FLOW,
            Command::Infer => INFER,
            Command::Eval => EVAL,
            Command::Bench => BENCH,
            Command::Selftest => SELFTEST,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand {s:?}")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const GEN_DATA: &[Key] = &[
    key("dataset", "A", "dataset id: A, B, C or D"),
    key("object", "", "comma-separated objects: mesh paths or builtin:<name>[@res]"),
    key("preset", "paper", "size preset: paper or desk"),
    key("trajectories", "", "trajectories per object (default from preset)"),
    key("steps", "", "steps per trajectory (default from preset)"),
    key("points", "", "points per cloud (default from preset)"),
    key("sigma", "0.05", "std-dev of lattice node displacements"),
    key("fixture_res", "9", "lattice resolution of builtin fixtures"),
    key("seed", "0", "dataset seed"),
    key("out", "data", "output root; the dataset goes under <out>/<dataset>/"),
];

const ARCH_KEYS: [Key; 9] = [
    key("preset", "paper", "architecture preset: paper or desk"),
    key("code_dim", "", "encoding size D"),
    key("blocks", "", "coupling blocks K"),
    key("proj_dim", "", "coupling projection width"),
    key("flow_hidden", "", "coupling map hidden width"),
    key("encoder_hidden", "", "encoder widths before the D-wide layer, comma-separated"),
    key("decoder_hidden", "", "decoder hidden widths, comma-separated"),
    key("points", "", "points per cloud (decoder output size)"),
    key("epochs", "", "training epochs"),
];

const PRETRAIN_AE: &[Key] = &[
    key("manifest", "", "dataset manifest.json"),
    ARCH_KEYS[0],
    ARCH_KEYS[1],
    ARCH_KEYS[2],
    ARCH_KEYS[3],
    ARCH_KEYS[4],
    ARCH_KEYS[5],
    ARCH_KEYS[6],
    ARCH_KEYS[7],
    ARCH_KEYS[8],
    key("ae_lr", "", "autoencoder learning rate"),
    key("seed", "0", "initialization and shuffling seed"),
    key("out", "runs/ae", "output directory"),
];

const TRAIN_FLOW: &[Key] = &[
    key("manifest", "", "dataset manifest.json"),
    key("ae_ckpt", "", "pretrained autoencoder checkpoint"),
    key("stage", "train_flow", "train_flow or end_to_end"),
    key("encoder_frozen", "true", "keep the encoder fixed (train_flow only)"),
    key("blocks", "", "coupling blocks K"),
    key("proj_dim", "", "coupling projection width"),
    key("flow_hidden", "", "coupling map hidden width"),
    key("flow_lr", "", "flow learning rate"),
    key("epochs", "", "training epochs"),
    key("seed", "0", "initialization and shuffling seed"),
    key("out", "runs/flow", "output directory"),
];

const INFER: &[Key] = &[
    key("ckpt", "", "trained checkpoint"),
    key("template", "", "template mesh (OBJ/OFF path or builtin:<name>[@res])"),
    key("cloud", "", "observed point cloud (XYZ)"),
    key("precision", "f64", "f32 or f64"),
    key("out", "deformed.obj", "output mesh path"),
];

const EVAL: &[Key] = &[
    key("ckpt", "", "trained checkpoint"),
    key("manifest", "", "dataset manifest.json"),
    key("split", "test", "train or test"),
    key("object", "", "only evaluate this object id (default: all; scissors for Exp7-Exp10)"),
    key("experiment", "eval", "experiment label; Exp7-Exp10 select the grid pairing"),
    key("train_set", "", "train-set label (default: the checkpoint's dataset)"),
    key("jobs", "1", "worker threads"),
    key("dump_meshes", "", "directory for predicted OBJ meshes"),
    key("out", "runs/eval", "output directory"),
];

const BENCH: &[Key] = &[
    key("ckpt", "", "trained checkpoint"),
    key("template", "", "template mesh (OBJ/OFF path or builtin:<name>[@res])"),
    key("cloud", "", "point cloud (XYZ); sampled from the template when empty"),
    key("points", "5000", "points sampled when no cloud is given"),
    key("iters", "30", "timed iterations (at least 30)"),
    key("warmup", "5", "untimed warm-up iterations"),
    key("precision", "f32", "f32 or f64"),
    key("seed", "0", "cloud sampling seed"),
    key("out", "runs/bench", "output directory"),
];

const SELFTEST: &[Key] = &[key("seed", "0", "seed for the random cases")];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got {raw:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Fully resolved configuration of one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        RunConfig {
            command,
            values: command.keys().iter().map(|k| (k.name.to_string(), k.default.to_string())).collect(),
        }
    }

    fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?} for {} ({origin})", self.command))),
        }
    }

    /// Layers file contents, the seed environment variable and flags over
    /// the defaults.
    pub fn resolve(
        command: Command,
        file: Option<&str>,
        env_seed: Option<&str>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = Self::defaults(command);
        let file_kv = file.map(parse_kv).transpose()?.unwrap_or_default();
        for (k, v) in &file_kv {
            cfg.set(k, v, "config file")?;
        }
        let explicit = |k: &str| file_kv.iter().chain(flags).any(|(n, _)| n == k);
        if let Some(s) = env_seed {
            if cfg.values.contains_key("seed") && !explicit("seed") {
                cfg.set("seed", s, SEED_ENV)?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v, "flag")?;
        }
        Ok(cfg)
    }

    /// Reads the optional config file and the environment, then resolves.
    pub fn load(command: Command, file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let text = file.map(|p| fs::read_to_string(p).map_err(|e| Error::file(p, e))).transpose()?;
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(command, text.as_deref(), env.as_deref(), flags)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("{} has no key {key:?}", self.command)))
    }

    /// Parsed value, or `None` when the value is empty.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(None);
        }
        v.parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("invalid value {v:?} for {key}: {e}")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| Error::Config(format!("{key} is required for {}", self.command)))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get::<String>(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.opt::<String>(key)?.map(PathBuf::from))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(None);
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("invalid element {s:?} in {key}: {e}")))
            })
            .collect::<Result<_>>()
            .map(Some)
    }

    fn preset_is_desk(&self) -> Result<bool> {
        match self.raw("preset")? {
            "paper" => Ok(false),
            "desk" => Ok(true),
            p => Err(Error::Config(format!("invalid preset {p:?} (expected paper or desk)"))),
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let id: DatasetId = self.get("dataset")?;
        let objects: Vec<String> = self.list("object")?.unwrap_or_default();
        let mut spec = if self.preset_is_desk()? { DatasetSpec::desk(id, objects) } else { DatasetSpec::paper(id, objects) };
        if let Some(v) = self.opt("trajectories")? {
            spec.trajectories = v;
        }
        if let Some(v) = self.opt("steps")? {
            spec.steps = v;
        }
        if let Some(v) = self.opt("points")? {
            spec.points = v;
        }
        spec.sigma = self.get("sigma")?;
        spec.seed = self.get("seed")?;
        spec.validate()?;
        Ok(spec)
    }

    /// Autoencoder pretraining config (`pretrain-ae`).
    pub fn ae_config(&self) -> Result<TrainConfig> {
        let stage = Stage::PretrainAe;
        let mut c = if self.preset_is_desk()? { TrainConfig::desk(stage) } else { TrainConfig::paper(stage) };
        c.manifest = self.path("manifest")?;
        self.apply_arch(&mut c)?;
        if let Some(v) = self.opt("ae_lr")? {
            c.ae_lr = v;
        }
        c.seed = self.get("seed")?;
        c.validate()?;
        Ok(c)
    }

    /// Flow-stage config (`train-flow`) on top of the autoencoder's config.
    pub fn flow_config(&self, ae: &TrainConfig) -> Result<TrainConfig> {
        let stage: Stage = self.get("stage")?;
        if stage == Stage::PretrainAe {
            return Err(Error::Config("train-flow needs stage train_flow or end_to_end".into()));
        }
        let defaults = TrainConfig::paper(stage);
        let mut c = TrainConfig {
            manifest: self.path("manifest")?,
            stage,
            encoder_frozen: stage == Stage::TrainFlow && self.get("encoder_frozen")?,
            epochs: defaults.epochs,
            flow_lr: defaults.flow_lr,
            seed: self.get("seed")?,
            ..ae.clone()
        };
        for (k, f) in [("blocks", &mut c.blocks), ("proj_dim", &mut c.proj_dim), ("flow_hidden", &mut c.flow_hidden), ("epochs", &mut c.epochs)] {
            if let Some(v) = self.opt(k)? {
                *f = v;
            }
        }
        if let Some(v) = self.opt("flow_lr")? {
            c.flow_lr = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn apply_arch(&self, c: &mut TrainConfig) -> Result<()> {
        for (k, f) in [
            ("code_dim", &mut c.code_dim),
            ("blocks", &mut c.blocks),
            ("proj_dim", &mut c.proj_dim),
            ("flow_hidden", &mut c.flow_hidden),
            ("points", &mut c.points),
            ("epochs", &mut c.epochs),
        ] {
            if let Some(v) = self.opt(k)? {
                *f = v;
            }
        }
        if let Some(v) = self.list("encoder_hidden")? {
            c.encoder_hidden = v;
        }
        if let Some(v) = self.list("decoder_hidden")? {
            c.decoder_hidden = v;
        }
        Ok(())
    }

    /// `key = value` lines in key order, with the subcommand as a comment.
    pub fn to_text(&self) -> String {
        let mut s = format!("# meshflow {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(kv: &[(&str, &str)]) -> Vec<(String, String)> {
        kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn layering_order() {
        let file = "seed = 3\nout = from_file # trailing comment\n";
        let c = RunConfig::resolve(Command::GenData, Some(file), Some("9"), &flags(&[("out", "from_flag")])).unwrap();
        assert_eq!(c.raw("out").unwrap(), "from_flag");
        assert_eq!(c.get::<u64>("seed").unwrap(), 3);
        let c = RunConfig::resolve(Command::GenData, None, Some("9"), &[]).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 9);
        let c = RunConfig::resolve(Command::GenData, None, Some("9"), &flags(&[("seed", "4")])).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::resolve(Command::Infer, Some("bogus = 1"), None, &[]), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::resolve(Command::Selftest, None, None, &flags(&[("out", "x")])),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse_kv("no equals sign"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn resolved_text_round_trips() {
        let c = RunConfig::resolve(Command::Eval, None, None, &flags(&[("jobs", "4")])).unwrap();
        let back = RunConfig::resolve(Command::Eval, Some(&c.to_text()), None, &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dataset_presets_and_overrides() {
        let c = RunConfig::resolve(Command::GenData, None, None, &flags(&[("object", "builtin:scissors")])).unwrap();
        let s = c.dataset_spec().unwrap();
        assert_eq!((s.trajectories, s.steps, s.points), (1, 50, 5000));
        let c = RunConfig::resolve(
            Command::GenData,
            Some("preset = desk\ndataset = D\nsteps = 7"),
            None,
            &flags(&[("object", "builtin:scissors,builtin:dice")]),
        )
        .unwrap();
        let s = c.dataset_spec().unwrap();
        assert_eq!((s.dataset, s.trajectories, s.steps, s.points), (DatasetId::D, 10, 7, 512));
        assert_eq!(s.objects.len(), 2);
        let bad = RunConfig::resolve(Command::GenData, Some("dataset = Q"), None, &[]).unwrap();
        assert!(matches!(bad.dataset_spec(), Err(Error::Config(_))));
    }

    #[test]
    fn train_configs() {
        let c = RunConfig::resolve(
            Command::PretrainAe,
            Some("preset = desk\nencoder_hidden = 8,16\ncode_dim = 32"),
            None,
            &flags(&[("manifest", "m.json")]),
        )
        .unwrap();
        let ae = c.ae_config().unwrap();
        assert_eq!((ae.code_dim, ae.encoder_hidden.clone(), ae.points), (32, vec![8, 16], 512));
        let f = RunConfig::resolve(
            Command::TrainFlow,
            Some("stage = end_to_end\nblocks = 4"),
            None,
            &flags(&[("manifest", "m.json"), ("ae_ckpt", "a")]),
        )
        .unwrap();
        let fc = f.flow_config(&ae).unwrap();
        assert_eq!((fc.stage, fc.encoder_frozen, fc.blocks, fc.code_dim, fc.epochs), (Stage::EndToEnd, false, 4, 32, 400));
        let missing = RunConfig::resolve(Command::PretrainAe, None, None, &[]).unwrap();
        assert!(missing.ae_config().is_err());
    }
}
