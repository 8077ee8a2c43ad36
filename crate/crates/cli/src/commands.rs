//! The `train`, `eval`, `bench` and `simulate` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use trqnet::data::{
    filter_classes, k_fold, load_cifar10, load_iris, load_mnist, standardize, stratified_subset, to_gray28,
    train_test_split, Dataset, SplitSpec, Standardizer,
};
use trqnet::oracle::{fidelity, StateVector, MAX_QUBITS};
use trqnet::quantum::{BitString, CircuitProgram, TrState};
use trqnet::training::{evaluate, fit, Checkpoint, Evaluation, HybridModel, ModelSpec, ReadoutMap, TrainReport};

use crate::config::{DatasetKind, RunConfig, Settings, SplitMode};

pub const CHECKPOINT_FILE: &str = "model.trqn";
pub const REPORT_FILE: &str = "report.csv";
pub const ECHO_FILE: &str = "config.echo";

/// Loads the configured dataset, converts CIFAR images to 28x28 gray and
/// keeps the configured classes in readout order.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let shown = cfg.paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");
    let d = match cfg.dataset {
        DatasetKind::Iris => load_iris(&cfg.paths[0]),
        DatasetKind::Mnist => {
            let labels = cfg.labels.as_ref().context("mnist needs a labels file")?;
            load_mnist(&cfg.paths[0], labels)
        }
        DatasetKind::Cifar10 => load_cifar10(&cfg.paths).and_then(|d| d.map_features(to_gray28)),
    }
    .with_context(|| format!("loading {} data from {shown}", cfg.dataset.name()))?;
    let keep = cfg
        .classes
        .iter()
        .map(|&c| cfg.dataset.class_index(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(filter_classes(&d, &keep)?)
}

/// Standardized `(train, test)` from the configured split.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
}

fn standardized(train: &Dataset, test: &Dataset) -> Result<Prepared> {
    let (standardizer, train, mut rest) = standardize(train, &[test])?;
    Ok(Prepared {
        train,
        test: rest.remove(0),
        standardizer,
    })
}

/// Unstandardized `(train, test)` from the configured split.
pub fn split(cfg: &RunConfig, d: &Dataset) -> Result<(Dataset, Dataset)> {
    Ok(match cfg.split {
        SplitMode::Holdout(f) => train_test_split(
            d,
            &SplitSpec {
                train_fraction: f,
                folds: cfg.folds,
                seed: cfg.seed,
            },
        )?,
        SplitMode::Subset { train, test } => stratified_subset(d, train, test, cfg.seed)?,
    })
}

pub fn prepare(cfg: &RunConfig, d: &Dataset) -> Result<Prepared> {
    let (train, test) = split(cfg, d)?;
    standardized(&train, &test)
}

pub fn model_spec(cfg: &RunConfig) -> ModelSpec {
    let classes = cfg.classes.len();
    let mut spec = if cfg.dataset.is_image() {
        let mut s = ModelSpec::image(cfg.qubits, cfg.rank, classes);
        if cfg.tn_layers == 1 {
            s.layers = vec![(vec![7, 7, 16], vec![2, 2, 2])];
        }
        s
    } else {
        let mut s = ModelSpec::iris(cfg.qubits, cfg.rank, classes);
        s.layers = vec![(vec![2, 2, 2], vec![2, 2, 2]); cfg.tn_layers];
        s
    };
    spec.max_bond = cfg.max_bond;
    spec.circuit_layers = cfg.circuit_layers;
    spec.init_angle = cfg.init_angle;
    spec
}

pub fn init_model(cfg: &RunConfig, seed: u64) -> Result<HybridModel> {
    let m = HybridModel::init(&model_spec(cfg), seed)?;
    match &cfg.readout {
        None => Ok(m),
        Some(r) => Ok(HybridModel::new(
            m.tn_layers().to_vec(),
            m.bridge().clone(),
            m.circuit().clone(),
            ReadoutMap::new(r.clone())?,
            m.rank(),
        )?),
    }
}

pub struct TrainOutcome {
    pub model: HybridModel,
    pub report: TrainReport,
    pub standardizer: Standardizer,
    pub test: Evaluation,
}

/// Trains on the configured split; the test split is reported as `val_acc`.
/// The seed drives the split, the initialization and the batch order.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let d = load_dataset(cfg)?;
    let p = prepare(cfg, &d)?;
    let m = init_model(cfg, cfg.seed)?;
    let (model, report) = fit(&m, &p.train, Some(&p.test), &cfg.optimizer)?;
    let test = evaluate(&model, &p.test)?;
    Ok(TrainOutcome {
        model,
        report,
        standardizer: p.standardizer,
        test,
    })
}

/// Writes `model.trqn`, `report.csv` and `config.echo` into `cfg.out`. Each
/// file is staged under a temporary name and renamed into place.
pub fn write_run(cfg: &RunConfig, t: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let echo = cfg.echo();
    let ckpt = Checkpoint {
        model: t.model.clone(),
        standardizer: Some(t.standardizer.clone()),
        config_echo: echo.clone(),
    };
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes)?;
    let files: [(&str, Vec<u8>); 3] = [
        (CHECKPOINT_FILE, bytes),
        (REPORT_FILE, t.report.to_csv().into_bytes()),
        (ECHO_FILE, echo.into_bytes()),
    ];
    for (name, _) in &files {
        let _ = fs::remove_file(cfg.out.join(name));
    }
    for (name, data) in &files {
        let tmp = cfg.out.join(format!(".{name}.tmp"));
        fs::write(&tmp, data).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, cfg.out.join(name))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub split: &'static str,
    pub samples: usize,
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// `accuracy 0.9500` followed by the JSON metrics line.
    pub fn render(&self) -> String {
        format!(
            "accuracy {:.4}\n{}\n",
            self.accuracy,
            serde_json::to_string(self).expect("serializable")
        )
    }
}

/// Evaluates a checkpoint on a split of the data described by its config
/// echo, with `overrides` applied on top.
pub fn eval(checkpoint: &Path, overrides: &Settings, which: EvalSplit) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut settings = crate::config::parse_settings(&ckpt.config_echo)?;
    settings.extend(overrides.clone());
    let cfg = RunConfig::from_settings(&settings)?;
    let (train, test) = split(&cfg, &load_dataset(&cfg)?)?;
    let standardizer = match ckpt.standardizer {
        Some(s) => s,
        None => Standardizer::fit(&train)?,
    };
    let (name, data) = match which {
        EvalSplit::Train => ("train", train),
        EvalSplit::Test => ("test", test),
    };
    let data = standardizer.transform(&data)?;
    let e = evaluate(&ckpt.model, &data)?;
    Ok(EvalReport {
        accuracy: e.accuracy,
        split: name,
        samples: data.len(),
        classes: data.class_labels.clone(),
        confusion: e.confusion,
    })
}

/// Seed of fold `k` in a cross-validated run.
pub fn fold_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(100).wrapping_add(k as u64)
}

/// Test accuracy per fold. With one fold this is the holdout run of
/// [`train`].
pub fn cross_validate(cfg: &RunConfig) -> Result<Vec<f64>> {
    if cfg.folds <= 1 {
        return Ok(vec![train(cfg)?.test.accuracy]);
    }
    let d = load_dataset(cfg)?;
    let spec = SplitSpec {
        folds: cfg.folds,
        seed: cfg.seed,
        ..SplitSpec::default()
    };
    k_fold(&d, &spec)?
        .iter()
        .enumerate()
        .map(|(k, (train, test))| {
            let p = standardized(train, test)?;
            let seed = fold_seed(cfg.seed, k);
            let m = init_model(cfg, seed)?;
            let opt = trqnet::training::OptimizerConfig {
                seed,
                ..cfg.optimizer.clone()
            };
            let (m, _) = fit(&m, &p.train, None, &opt)?;
            Ok(evaluate(&m, &p.test)?.accuracy)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub qubits: usize,
    pub rank: usize,
    pub classes: Vec<usize>,
    pub accuracies: Vec<f64>,
}

impl BenchRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Sample standard deviation over folds, 0 for a single fold.
    pub fn sd(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

pub const BENCH_HEADER: &str = "# trqnet bench v1\nqubits,rank,classes,folds,mean_acc,sd_acc\n";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    for r in rows {
        let classes = r.classes.iter().map(usize::to_string).collect::<Vec<_>>().join(":");
        let _ = writeln!(
            s,
            "{},{},{},{},{:.4},{:.4}",
            r.qubits,
            r.rank,
            classes,
            r.accuracies.len(),
            r.mean(),
            r.sd()
        );
    }
    s
}

/// Grid cells: every combination of the `qubits`, `rank` and `pairs` lists in
/// a bench config. `pairs` holds `:`-joined class ids, e.g. `1:2,2:3`;
/// without it the `classes` setting forms the only cell.
pub fn grid_cells(grid: &Settings) -> Result<Vec<RunConfig>> {
    let split = |key: &str, default: &str| -> Vec<String> {
        grid.get(key)
            .map_or(default, String::as_str)
            .split(',')
            .map(|v| v.trim().to_string())
            .collect()
    };
    let qubits = split("qubits", "4");
    let ranks = split("rank", "4");
    let pairs: Vec<Option<String>> = match grid.get("pairs") {
        Some(p) => p.split(',').map(|v| Some(v.trim().replace(':', ","))).collect(),
        None => vec![None],
    };
    let mut base = grid.clone();
    base.remove("pairs");
    let mut cells = Vec::new();
    for q in &qubits {
        for r in &ranks {
            for p in &pairs {
                let mut s = base.clone();
                s.insert("qubits".into(), q.clone());
                s.insert("rank".into(), r.clone());
                if let Some(p) = p {
                    s.insert("classes".into(), p.clone());
                }
                let mut cfg = RunConfig::from_settings(&s)?;
                cfg.out = cfg.out.join(format!("q{}-r{}-c{}", cfg.qubits, cfg.rank, cfg.class_tag()));
                cells.push(cfg);
            }
        }
    }
    Ok(cells)
}

const CELL_FILE: &str = "result.csv";

fn read_cell(path: &Path) -> Option<Vec<f64>> {
    let text = fs::read_to_string(path).ok()?;
    text.lines().skip(1).map(|l| l.split(',').nth(1)?.parse().ok()).collect()
}

/// Runs every grid cell not already completed in `out/<cell>/result.csv`,
/// then writes `out/bench.csv`. `progress` receives one line per cell.
pub fn bench(grid: &Settings, mut progress: impl FnMut(&str)) -> Result<Vec<BenchRow>> {
    let cells = grid_cells(grid)?;
    let out = grid.get("out").map_or_else(|| PathBuf::from("run"), PathBuf::from);
    let mut rows = Vec::new();
    for cfg in cells {
        let file = cfg.out.join(CELL_FILE);
        let accuracies = match read_cell(&file) {
            Some(a) if a.len() == cfg.folds.max(1) => {
                progress(&format!("{}: done, skipped", cfg.out.display()));
                a
            }
            _ => {
                let a = cross_validate(&cfg)?;
                fs::create_dir_all(&cfg.out)?;
                let mut text = String::from("fold,accuracy\n");
                for (k, v) in a.iter().enumerate() {
                    let _ = writeln!(text, "{k},{v}");
                }
                let tmp = cfg.out.join(".result.tmp");
                fs::write(&tmp, text)?;
                fs::rename(&tmp, &file)?;
                progress(&format!("{}: mean {:.4}", cfg.out.display(), a.iter().sum::<f64>() / a.len() as f64));
                a
            }
        };
        rows.push(BenchRow {
            qubits: cfg.qubits,
            rank: cfg.rank,
            classes: cfg.classes.clone(),
            accuracies,
        });
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("bench.csv"), bench_csv(&rows))?;
    Ok(rows)
}

/// Outcome probabilities of a circuit program under the ring engine and,
/// optionally, the exact oracle. Without `outcomes`, every basis string
/// whose probability shows at four decimals is listed.
pub fn simulate(text: &str, oracle: bool, outcomes: Option<&[BitString]>) -> Result<String> {
    let p = CircuitProgram::parse(text)?;
    let (state, _) = TrState::zero(p.qubits, p.rank)?.run_ops(&p.ops)?;
    let exact = if oracle {
        if p.qubits > MAX_QUBITS {
            bail!("oracle supports at most {MAX_QUBITS} qubits");
        }
        Some(StateVector::run_program(&p)?)
    } else {
        None
    };
    let listed: Vec<BitString> = match outcomes {
        Some(o) => o.to_vec(),
        None => {
            if p.qubits > MAX_QUBITS {
                bail!("list outcomes explicitly for more than {MAX_QUBITS} qubits");
            }
            let tr = state.full_distribution()?;
            (0..tr.len())
                .filter(|&i| {
                    tr[i] >= 5e-5 || exact.as_ref().is_some_and(|e| e.amplitudes()[i].norm_sqr() >= 5e-5)
                })
                .map(|i| BitString::from_index(i, p.qubits))
                .collect()
        }
    };
    let tr = state.measure_probs(&listed)?.probabilities();
    let mut s = String::new();
    match &exact {
        None => {
            for (o, pr) in listed.iter().zip(&tr) {
                let _ = writeln!(s, "{o} {pr:.4}");
            }
        }
        Some(e) => {
            let ex = e.probs(&listed)?.probabilities();
            let _ = writeln!(s, "outcome tr oracle");
            for ((o, pr), pe) in listed.iter().zip(&tr).zip(&ex) {
                let _ = writeln!(s, "{o} {pr:.4} {pe:.4}");
            }
            let f = fidelity(&state.to_statevector()?, e.amplitudes())?;
            let _ = writeln!(s, "fidelity {f:.4}");
        }
    }
    Ok(s)
}
