//! Datasets A–D.
//!
//! | id | objects | trajectories × steps | split |
//! |----|---------|----------------------|-------|
//! | A  | 1       | 1 × 50               | test = steps divisible by 5 |
//! | B  | 6       | 1 × 50               | test = steps divisible by 5 |
//! | C  | 1       | 1000 × 21            | test = last 20 % of trajectories |
//! | D  | 6       | 1000 × 21            | test = last 20 % of trajectories |
//!
//! Step indices start at 1; step 0 is the template and is never an entry.
//! Files live under `<root>/<dataset_id>/<object>/<traj>/<step>.{obj,xyz}`
//! and the manifest stores paths relative to `<root>/<dataset_id>`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_trajectory, sample_warp_field};
use crate::geometry::{fixtures, io, normalize_unit_cube, sample_surface, Mesh, PointCloud};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    A,
    B,
    C,
    D,
}

impl DatasetId {
    /// Split by step divisibility (A, B) rather than by trajectory (C, D).
    pub fn splits_by_step(self) -> bool {
        matches!(self, DatasetId::A | DatasetId::B)
    }

    pub fn single_object(self) -> bool {
        matches!(self, DatasetId::A | DatasetId::C)
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DatasetId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(DatasetId::A),
            "B" => Ok(DatasetId::B),
            "C" => Ok(DatasetId::C),
            "D" => Ok(DatasetId::D),
            _ => Err(Error::Config(format!("invalid dataset id {s:?} (expected A, B, C or D)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("invalid split {s:?} (expected train or test)"))),
        }
    }
}

/// A normalized object template with an identifier.
#[derive(Clone, Debug)]
pub struct ObjectSource {
    pub id: String,
    pub mesh: Mesh,
}

impl ObjectSource {
    /// `builtin:<name>[@res]` selects a procedural fixture; anything else is a
    /// path to an OBJ/OFF file whose stem becomes the object id.
    pub fn resolve(spec: &str, default_res: usize) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("builtin:") {
            let (name, res) = match rest.split_once('@') {
                Some((n, r)) => (
                    n,
                    r.parse()
                        .map_err(|_| Error::Config(format!("invalid fixture resolution in {spec:?}")))?,
                ),
                None => (rest, default_res),
            };
            return Ok(ObjectSource {
                id: name.to_string(),
                mesh: fixtures::object(name, res)?,
            });
        }
        let path = Path::new(spec);
        let mesh = io::read_mesh(path)?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("cannot derive object id from {spec:?}")))?
            .to_string();
        Ok(ObjectSource {
            id,
            mesh: normalize_unit_cube(&mesh)?.0,
        })
    }

    pub fn builtin(name: &str, res: usize) -> Result<Self> {
        Self::resolve(&format!("builtin:{name}@{res}"), res)
    }
}

/// Generation parameters. Paper-scale and desk-scale presets are provided;
/// every knob may be overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub dataset: DatasetId,
    pub objects: Vec<String>,
    pub seed: u64,
    pub sigma: f64,
    pub trajectories: usize,
    pub steps: usize,
    pub points: usize,
}

impl DatasetSpec {
    pub fn paper(dataset: DatasetId, objects: Vec<String>) -> Self {
        let (trajectories, steps) = if dataset.splits_by_step() { (1, 50) } else { (1000, 21) };
        DatasetSpec {
            dataset,
            objects,
            seed: 0,
            sigma: 0.05,
            trajectories,
            steps,
            points: 5000,
        }
    }

    pub fn desk(dataset: DatasetId, objects: Vec<String>) -> Self {
        let (trajectories, steps) = if dataset.splits_by_step() { (1, 10) } else { (10, 5) };
        DatasetSpec {
            trajectories,
            steps,
            points: 512,
            ..Self::paper(dataset, objects)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Config("dataset needs at least one object".into()));
        }
        if self.dataset.single_object() && self.objects.len() != 1 {
            return Err(Error::Config(format!(
                "dataset {} uses exactly one object, got {}",
                self.dataset,
                self.objects.len()
            )));
        }
        if self.trajectories == 0 || self.steps == 0 || self.points == 0 {
            return Err(Error::Config("trajectories, steps and points must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Number of leading trajectories in the train split (C, D).
    pub fn train_trajectories(&self) -> usize {
        self.trajectories * 4 / 5
    }

    pub fn split_of(&self, trajectory: usize, step: usize) -> Split {
        let test = if self.dataset.splits_by_step() {
            step % 5 == 0
        } else {
            trajectory >= self.train_trajectories()
        };
        if test {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn warp_seed(&self, object_id: &str, trajectory: usize) -> u64 {
        rng::derive_seed(self.seed, &[rng::fnv1a(object_id.as_bytes()), trajectory as u64])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub object_id: String,
    pub trajectory_index: usize,
    pub step_index: usize,
    pub split: Split,
    pub mesh_path: String,
    pub pointcloud_path: String,
    pub template_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: DatasetId,
    pub spec: DatasetSpec,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

fn template_rel(object: &str) -> String {
    format!("{object}/template.obj")
}

fn step_rel(object: &str, traj: usize, step: usize, ext: &str) -> String {
    format!("{object}/{traj:04}/{step:03}.{ext}")
}

/// Manifest implied by `spec`, without generating any geometry. `object_ids`
/// are the resolved ids of `spec.objects` in order.
pub fn plan_manifest(spec: &DatasetSpec, object_ids: &[String]) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut entries =
        Vec::with_capacity(object_ids.len() * spec.trajectories * spec.steps);
    for object in object_ids {
        for traj in 0..spec.trajectories {
            for step in 1..=spec.steps {
                entries.push(ManifestEntry {
                    object_id: object.clone(),
                    trajectory_index: traj,
                    step_index: step,
                    split: spec.split_of(traj, step),
                    mesh_path: step_rel(object, traj, step, "obj"),
                    pointcloud_path: step_rel(object, traj, step, "xyz"),
                    template_path: template_rel(object),
                });
            }
        }
    }
    Ok(DatasetManifest {
        dataset_id: spec.dataset,
        spec: spec.clone(),
        entries,
    })
}

/// Generate every trajectory, write meshes, clouds, templates and
/// `manifest.json` under `<root>/<dataset_id>/`, and return the manifest.
pub fn build_dataset(spec: &DatasetSpec, root: impl AsRef<Path>, fixture_res: usize) -> Result<DatasetManifest> {
    spec.validate()?;
    let objects: Vec<ObjectSource> = spec
        .objects
        .iter()
        .map(|o| ObjectSource::resolve(o, fixture_res))
        .collect::<Result<_>>()?;
    let ids: Vec<String> = objects.iter().map(|o| o.id.clone()).collect();
    let manifest = plan_manifest(spec, &ids)?;
    let dir = root.as_ref().join(spec.dataset.to_string());

    for obj in &objects {
        let obj_dir = dir.join(&obj.id);
        fs::create_dir_all(&obj_dir).map_err(|e| Error::file(&obj_dir, e))?;
        io::write_mesh(dir.join(template_rel(&obj.id)), &obj.mesh)?;
    }

    let jobs: Vec<(&ObjectSource, usize)> = objects
        .iter()
        .flat_map(|o| (0..spec.trajectories).map(move |t| (o, t)))
        .collect();
    jobs.par_iter()
        .map(|&(obj, traj)| -> Result<()> {
            let seed = spec.warp_seed(&obj.id, traj);
            let field = sample_warp_field(seed, spec.sigma)?;
            let trajectory = generate_trajectory(&obj.id, &obj.mesh, &field, spec.steps)?;
            let traj_dir = dir.join(format!("{}/{traj:04}", obj.id));
            fs::create_dir_all(&traj_dir).map_err(|e| Error::file(&traj_dir, e))?;
            for step in 1..=spec.steps {
                let mesh = &trajectory.steps[step];
                let cloud = sample_surface(mesh, spec.points, rng::derive_seed(seed, &[step as u64]))?;
                io::write_mesh(dir.join(step_rel(&obj.id, traj, step, "obj")), mesh)?;
                io::write_xyz(dir.join(step_rel(&obj.id, traj, step, "xyz")), &cloud)?;
            }
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;

    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// One loaded manifest entry.
#[derive(Clone, Debug)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub template: Arc<Mesh>,
    /// Ground-truth deformed mesh.
    pub target: Mesh,
    pub cloud: PointCloud,
}

/// Load all entries of one split (or every entry when `split` is `None`).
/// Templates are loaded once per path and shared.
pub fn load_samples(manifest_path: impl AsRef<Path>, split: Option<Split>) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut templates: HashMap<String, Arc<Mesh>> = HashMap::new();
    let mut samples = Vec::new();
    for e in manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
        let template = match templates.get(&e.template_path) {
            Some(t) => Arc::clone(t),
            None => {
                let t = Arc::new(io::read_mesh(dir.join(&e.template_path))?);
                templates.insert(e.template_path.clone(), Arc::clone(&t));
                t
            }
        };
        let target = io::read_mesh(dir.join(&e.mesh_path))?;
        if target.faces() != template.faces() {
            return Err(Error::InvalidMesh(format!(
                "{}: faces differ from template {}",
                e.mesh_path, e.template_path
            )));
        }
        let cloud = io::read_xyz(dir.join(&e.pointcloud_path))?;
        samples.push(Sample {
            entry: e.clone(),
            template,
            target,
            cloud,
        });
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        fixtures::OBJECTS[..n].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dataset_a_split() {
        let spec = DatasetSpec::paper(DatasetId::A, ids(1));
        let m = plan_manifest(&spec, &ids(1)).unwrap();
        assert_eq!(m.count(Split::Train), 40);
        assert_eq!(m.count(Split::Test), 10);
        let test_steps: Vec<usize> = m
            .entries
            .iter()
            .filter(|e| e.split == Split::Test)
            .map(|e| e.step_index)
            .collect();
        assert_eq!(test_steps, (1..=10).map(|k| 5 * k).collect::<Vec<_>>());
    }

    #[test]
    fn dataset_d_full_scale() {
        let spec = DatasetSpec::paper(DatasetId::D, ids(6));
        let m = plan_manifest(&spec, &ids(6)).unwrap();
        assert_eq!(m.entries.len(), 6 * 1000 * 21);
        for obj in ids(6) {
            let of = |split| {
                let mut t: Vec<usize> = m
                    .entries
                    .iter()
                    .filter(|e| e.object_id == obj && e.split == split)
                    .map(|e| e.trajectory_index)
                    .collect();
                t.dedup();
                t
            };
            assert_eq!(of(Split::Train), (0..800).collect::<Vec<_>>());
            assert_eq!(of(Split::Test), (800..1000).collect::<Vec<_>>());
        }
    }

    #[test]
    fn desk_c_split() {
        let spec = DatasetSpec::desk(DatasetId::C, ids(1));
        assert_eq!((spec.trajectories, spec.steps), (10, 5));
        assert_eq!(spec.train_trajectories(), 8);
        let m = plan_manifest(&spec, &ids(1)).unwrap();
        assert_eq!(m.count(Split::Train), 8 * 5);
        assert_eq!(m.count(Split::Test), 2 * 5);
    }

    #[test]
    fn object_count_rules_and_ids() {
        assert!(plan_manifest(&DatasetSpec::paper(DatasetId::A, ids(2)), &ids(2)).is_err());
        assert!(plan_manifest(&DatasetSpec::paper(DatasetId::B, ids(6)), &ids(6)).is_ok());
        assert!("E".parse::<DatasetId>().is_err());
        assert_eq!("c".parse::<DatasetId>().unwrap(), DatasetId::C);
    }

    #[test]
    fn build_writes_parseable_files_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = DatasetSpec::desk(DatasetId::B, vec!["builtin:scissors".into(), "builtin:dice".into()]);
        spec.steps = 5;
        spec.points = 64;
        let m = build_dataset(&spec, dir.path(), 4).unwrap();
        assert_eq!(m.entries.len(), 10);
        assert_eq!(m.count(Split::Test), 2);
        let manifest_path = dir.path().join("B/manifest.json");
        let (loaded, samples) = load_samples(&manifest_path, None).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(samples.len(), 10);
        assert!(samples.iter().all(|s| s.cloud.len() == 64));

        let first = fs::read(dir.path().join("B/scissors/0000/003.obj")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let m2 = build_dataset(&spec, dir2.path(), 4).unwrap();
        assert_eq!(m, m2);
        assert_eq!(first, fs::read(dir2.path().join("B/scissors/0000/003.obj")).unwrap());
        assert_eq!(
            fs::read(&manifest_path).unwrap(),
            fs::read(dir2.path().join("B/manifest.json")).unwrap()
        );
    }

    #[test]
    fn shared_object_gets_same_trajectory_in_a_and_b() {
        let a = DatasetSpec::desk(DatasetId::A, ids(1));
        let b = DatasetSpec::desk(DatasetId::B, ids(6));
        assert_eq!(a.warp_seed("scissors", 0), b.warp_seed("scissors", 0));
        assert_ne!(b.warp_seed("scissors", 0), b.warp_seed("hammer", 0));
    }

    #[test]
    fn missing_object_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::desk(DatasetId::A, vec!["/nonexistent/thing.obj".into()]);
        assert!(matches!(build_dataset(&spec, dir.path(), 4), Err(Error::File { .. })));
    }
}
