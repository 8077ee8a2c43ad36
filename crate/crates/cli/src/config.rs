//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use trqnet::quantum::BitString;
use trqnet::training::OptimizerConfig;

pub const SUPPORTED_QUBITS: [usize; 5] = [4, 6, 8, 10, 12];
pub const SUPPORTED_RANKS: [usize; 4] = [2, 3, 4, 6];

/// Raw settings; later insertions override earlier ones.
pub type Settings = BTreeMap<String, String>;

const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "path",
    "labels",
    "classes",
    "train_fraction",
    "train_size",
    "test_size",
    "folds",
    "qubits",
    "rank",
    "tn_layers",
    "circuit_layers",
    "max_bond",
    "init_angle",
    "readout",
    "learning_rate",
    "tn_learning_rate",
    "nu",
    "mu",
    "weight_decay",
    "beta1",
    "beta2",
    "epsilon",
    "epochs",
    "batch_size",
    "alternate",
    "seed",
    "out",
];

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_settings(text: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", n + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_settings(&text).with_context(|| format!("in config {}", path.display()))
}

/// `TRQNET_DATA_DIR`, or `data` under the working directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("TRQNET_DATA_DIR").map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Iris,
    Mnist,
    Cifar10,
}

impl DatasetKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "iris" => Ok(DatasetKind::Iris),
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            _ => bail!("unknown dataset `{s}`; expected iris, mnist or cifar10"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Iris => "iris",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn is_image(self) -> bool {
        self != DatasetKind::Iris
    }

    /// Index into the loader's class list for a user-facing class id.
    /// Iris classes are numbered 1..=3; image classes are the labels 0..=9.
    pub fn class_index(self, id: usize) -> Result<usize> {
        match self {
            DatasetKind::Iris if (1..=3).contains(&id) => Ok(id - 1),
            DatasetKind::Iris => bail!("iris class {id} out of range 1..=3"),
            _ if id <= 9 => Ok(id),
            _ => bail!("{} class {id} out of range 0..=9", self.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitMode {
    /// Stratified split with this training fraction.
    Holdout(f64),
    /// Stratified subsample of `train + test` samples.
    Subset { train: usize, test: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Iris file, MNIST image file, or CIFAR-10 batch files.
    pub paths: Vec<PathBuf>,
    /// MNIST label file.
    pub labels: Option<PathBuf>,
    /// User-facing class ids, in readout order.
    pub classes: Vec<usize>,
    pub split: SplitMode,
    pub folds: usize,
    pub qubits: usize,
    pub rank: usize,
    pub tn_layers: usize,
    pub circuit_layers: usize,
    pub max_bond: usize,
    pub init_angle: f64,
    pub readout: Option<Vec<BitString>>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub out: PathBuf,
}

fn get<T: std::str::FromStr>(s: &Settings, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match s.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e| anyhow!("invalid {key} `{v}`: {e}")),
    }
}

fn list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|p| p.trim().parse().map_err(|e| anyhow!("invalid {key} entry `{p}`: {e}")))
        .collect()
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

impl RunConfig {
    /// Resolves settings into a validated configuration. Defaults depend on
    /// the dataset and class count.
    pub fn from_settings(s: &Settings) -> Result<Self> {
        if let Some(k) = s.keys().find(|k| !KEYS.contains(&k.as_str())) {
            bail!("unknown config key `{k}`");
        }
        let dataset = DatasetKind::parse(s.get("dataset").map_or("iris", String::as_str))?;
        let data_dir = s.get("data_dir").map_or_else(default_data_dir, PathBuf::from);
        let classes: Vec<usize> = match s.get("classes") {
            Some(v) => list(v, "classes")?,
            None if dataset.is_image() => vec![3, 6],
            None => vec![1, 2, 3],
        };
        for &c in &classes {
            dataset.class_index(c)?;
        }
        if !(2..=3).contains(&classes.len()) {
            bail!("need 2 or 3 classes, got {}", classes.len());
        }
        let paths = match s.get("path") {
            Some(v) => v.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            None => default_paths(dataset, &data_dir)?,
        };
        let labels = match (dataset, s.get("labels")) {
            (_, Some(v)) => Some(PathBuf::from(v)),
            (DatasetKind::Mnist, None) => Some(data_dir.join("mnist/subset-36-labels-idx1-ubyte")),
            _ => None,
        };
        let split = match (s.get("train_size"), s.get("test_size")) {
            (None, None) => SplitMode::Holdout(get(s, "train_fraction", 0.8)?),
            (Some(_), Some(_)) => SplitMode::Subset {
                train: get(s, "train_size", 0)?,
                test: get(s, "test_size", 0)?,
            },
            _ => bail!("train_size and test_size must be given together"),
        };
        let qubits = get(s, "qubits", 4)?;
        if !SUPPORTED_QUBITS.contains(&qubits) {
            bail!("qubits {qubits} unsupported; expected one of {SUPPORTED_QUBITS:?}");
        }
        let rank = get(s, "rank", 4)?;
        if !SUPPORTED_RANKS.contains(&rank) {
            bail!("rank {rank} unsupported; expected one of {SUPPORTED_RANKS:?}");
        }
        let tn_layers = get(s, "tn_layers", 2)?;
        if tn_layers < 1 || (dataset.is_image() && tn_layers > 2) {
            bail!("tn_layers {tn_layers} unsupported for {}", dataset.name());
        }
        let readout = match s.get("readout") {
            Some(v) => Some(list(v, "readout")?),
            None => None,
        };
        let seed: u64 = s
            .get("seed")
            .ok_or_else(|| anyhow!("seed is required"))?
            .parse()
            .map_err(|e| anyhow!("invalid seed: {e}"))?;

        let (lr, tn_lr) = match (dataset.is_image(), classes.len()) {
            (true, _) => (0.01, 0.01),
            (false, 3) => (0.05, 0.02),
            (false, _) => (0.01, 0.05),
        };
        let learning_rate = get(s, "learning_rate", lr)?;
        let defaults = OptimizerConfig::default();
        let alternate = match s.get("alternate").map(String::as_str) {
            None | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|e| anyhow!("invalid alternate `{v}`: {e}"))?),
        };
        let optimizer = OptimizerConfig {
            learning_rate,
            betas: (get(s, "beta1", defaults.betas.0)?, get(s, "beta2", defaults.betas.1)?),
            epsilon: get(s, "epsilon", defaults.epsilon)?,
            weight_decay: get(s, "weight_decay", defaults.weight_decay)?,
            tn_learning_rate: get(s, "tn_learning_rate", tn_lr)?,
            nu: get(s, "nu", learning_rate)?,
            mu: get(s, "mu", learning_rate)?,
            max_epochs: get(s, "epochs", defaults.max_epochs)?,
            batch_size: get(s, "batch_size", if dataset.is_image() { 32 } else { defaults.batch_size })?,
            seed,
            alternate,
        };
        optimizer.validate()?;
        let out = s.get("out").map_or_else(|| PathBuf::from("run"), PathBuf::from);

        Ok(RunConfig {
            dataset,
            data_dir,
            paths,
            labels,
            classes,
            split,
            folds: get(s, "folds", 5)?,
            qubits,
            rank,
            tn_layers,
            circuit_layers: get(s, "circuit_layers", 2)?,
            max_bond: get(s, "max_bond", 8)?,
            init_angle: get(s, "init_angle", 0.1)?,
            readout,
            optimizer,
            seed,
            out,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_settings(&parse_settings(text)?)
    }

    /// Every resolved setting, parseable by [`RunConfig::from_text`].
    pub fn echo(&self) -> String {
        let o = &self.optimizer;
        let mut s = String::from("# trqnet config v1\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", self.dataset.name().into());
        kv("data_dir", self.data_dir.display().to_string());
        kv("path", join(&self.paths.iter().map(|p| p.display()).collect::<Vec<_>>(), ","));
        if let Some(l) = &self.labels {
            kv("labels", l.display().to_string());
        }
        kv("classes", join(&self.classes, ","));
        match self.split {
            SplitMode::Holdout(f) => kv("train_fraction", f.to_string()),
            SplitMode::Subset { train, test } => {
                kv("train_size", train.to_string());
                kv("test_size", test.to_string());
            }
        }
        kv("folds", self.folds.to_string());
        kv("qubits", self.qubits.to_string());
        kv("rank", self.rank.to_string());
        kv("tn_layers", self.tn_layers.to_string());
        kv("circuit_layers", self.circuit_layers.to_string());
        kv("max_bond", self.max_bond.to_string());
        kv("init_angle", self.init_angle.to_string());
        if let Some(r) = &self.readout {
            kv("readout", join(r, ","));
        }
        kv("learning_rate", o.learning_rate.to_string());
        kv("tn_learning_rate", o.tn_learning_rate.to_string());
        kv("nu", o.nu.to_string());
        kv("mu", o.mu.to_string());
        kv("weight_decay", o.weight_decay.to_string());
        kv("beta1", o.betas.0.to_string());
        kv("beta2", o.betas.1.to_string());
        kv("epsilon", o.epsilon.to_string());
        kv("epochs", o.max_epochs.to_string());
        kv("batch_size", o.batch_size.to_string());
        kv("alternate", o.alternate.map_or("none".into(), |a| a.to_string()));
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        s
    }

    /// Class ids joined for file and table names, e.g. `1_3`.
    pub fn class_tag(&self) -> String {
        join(&self.classes, "_")
    }
}

fn default_paths(dataset: DatasetKind, root: &Path) -> Result<Vec<PathBuf>> {
    Ok(match dataset {
        DatasetKind::Iris => vec![root.join("iris/iris.data")],
        DatasetKind::Mnist => vec![root.join("mnist/subset-36-images-idx3-ubyte")],
        DatasetKind::Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            let mut batches: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("listing {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
                })
                .collect();
            batches.sort();
            if batches.is_empty() {
                bail!("no data_batch_*.bin files in {}", dir.display());
            }
            batches
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Settings {
        parse_settings(text).unwrap()
    }

    #[test]
    fn parses_and_rejects() {
        let s = settings("# c\n\nseed = 7\nclasses=1,3\n");
        assert_eq!(s["classes"], "1,3");
        assert!(parse_settings("seed 7").unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn defaults_follow_task() {
        let c = RunConfig::from_settings(&settings("seed = 1\nclasses = 1,3\ndata_dir = d")).unwrap();
        assert_eq!(c.optimizer.tn_learning_rate, 0.05);
        assert_eq!(c.optimizer.nu, 0.01);
        assert_eq!(c.paths, vec![PathBuf::from("d/iris/iris.data")]);
        let c = RunConfig::from_settings(&settings("seed = 1\ndata_dir = d")).unwrap();
        assert_eq!(c.classes, vec![1, 2, 3]);
        assert_eq!((c.optimizer.nu, c.optimizer.tn_learning_rate), (0.05, 0.02));
        let c = RunConfig::from_settings(&settings("seed = 1\ndataset = mnist\ndata_dir = d")).unwrap();
        assert_eq!(c.classes, vec![3, 6]);
        assert_eq!(c.optimizer.batch_size, 32);
        assert!(c.labels.is_some());
    }

    #[test]
    fn validation() {
        for bad in [
            "classes = 1,3",
            "seed = 1\nqubits = 5",
            "seed = 1\nrank = 5",
            "seed = 1\nclasses = 0,1",
            "seed = 1\nclasses = 1",
            "seed = 1\nbogus = 2",
            "seed = 1\ntrain_size = 10",
            "seed = 1\nlearning_rate = -1",
            "seed = 1\ndataset = svhn",
        ] {
            assert!(RunConfig::from_settings(&settings(bad)).is_err(), "{bad}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_settings(&settings(
            "seed = 3\ndataset = mnist\ndata_dir = x\ntrain_size = 10\ntest_size = 4\nreadout = 000000,111111\nlearning_rate = 0.003\nalternate = 2",
        ))
        .unwrap();
        assert_eq!(RunConfig::from_text(&c.echo()).unwrap(), c);
    }
}
