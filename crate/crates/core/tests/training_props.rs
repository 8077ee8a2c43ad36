use std::f64::consts::PI;

use proptest::prelude::*;
use trqnet::data::Dataset;
use trqnet::oracle::StateVector;
use trqnet::quantum::{BitString, GateMatrix, QuanTrCircuit};
use trqnet::training::*;
use trqnet::DenseTensor;

fn model(qubits: usize, classes: usize, seed: u64) -> HybridModel {
    let spec = ModelSpec {
        init_angle: PI,
        ..ModelSpec::iris(qubits, 4, classes)
    };
    HybridModel::init(&spec, seed).unwrap()
}

fn zero_bridge(m: &HybridModel) -> HybridModel {
    HybridModel::new(
        m.tn_layers().to_vec(),
        DenseTensor::zeros(m.bridge().shape()),
        m.circuit().clone(),
        m.readout().clone(),
        m.rank(),
    )
    .unwrap()
}

#[test]
fn parameter_shift_of_single_qubit_z() {
    let z = |theta: f64| -> trqnet::Result<f64> {
        let s = StateVector::zero(1)?.apply(&[0], &GateMatrix::ry(theta)?)?;
        let p = s.probs(&["0".parse()?, "1".parse()?])?.probabilities();
        Ok(p[0] - p[1])
    };
    assert!(parameter_shift(z, 0.0).unwrap().abs() < 1e-15);
    let g = parameter_shift(z, PI / 3.0).unwrap();
    assert!((g + (PI / 3.0).sin()).abs() < 1e-10, "{g}");
}

/// Central differences (step 1e-4) of the sample loss against the
/// parameter-shift gradient for every circuit parameter.
#[test]
fn parameter_shift_matches_finite_difference() {
    let m = model(4, 2, 11);
    let x = [0.3, -0.7, 1.1, 0.2];
    for target in 0..2 {
        let g = sample_gradient(&m, &x, target, true, false).unwrap();
        for k in 0..m.circuit().param_count() {
            let h = 1e-4;
            let at = |d: f64| {
                let c = m.circuit().shifted(k, d).unwrap();
                loss(&m.with_circuit(c).unwrap().forward(&x).unwrap(), target).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((fd - g.circuit[k]).abs() <= 1e-6, "param {k}: fd {fd} vs ps {}", g.circuit[k]);
        }
    }
}

#[test]
fn encoder_chain_matches_finite_difference() {
    let m = model(4, 3, 4);
    let x = [0.5, -0.2, 0.9, -1.3];
    let target = 2;
    let t = m.trace(&x).unwrap();
    let g = encoder_grad(&m, &x, target).unwrap();
    for i in 0..t.tn_output.len() {
        let h = 1e-4;
        let at = |d: f64| {
            let mut y = t.tn_output.clone();
            y[i] += d;
            loss(&m.head_probs(&y).unwrap(), target).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!((fd - g[i]).abs() <= 1e-5, "entry {i}: fd {fd} vs {}", g[i]);
    }
    assert!(encoder_grad(&zero_bridge(&m), &x, 0).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn encoding_examples() {
    assert_eq!(encode_angles(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    let a = encode_angles(&[40.0]).unwrap()[0];
    assert!((a - PI).abs() < 1e-12);
    assert!(encode_angles(&[f64::NAN]).is_err());

    let angles = encode_angles(&[0.5, -0.5]).unwrap();
    let s = encoded_state(&angles, 2).unwrap();
    let p = s.measure_probs(&[BitString::zeros(2)]).unwrap().total();
    let c = (PI * 0.5f64.tanh() / 2.0).cos().powi(2);
    assert!((p - c * c).abs() < 1e-12);
    let o = s.measure_probs(&["1".parse::<BitString>().unwrap()]);
    assert!(o.is_err(), "outcome length must match qubits");
}

#[test]
fn zero_circuit_forward() {
    let m = zero_bridge(&model(4, 2, 1));
    let m = m.with_circuit(QuanTrCircuit::zeros(4, 2).unwrap()).unwrap();
    let p = m.forward(&[0.3, 0.1, -2.0, 4.0]).unwrap();
    assert!((p[0] - 0.731).abs() < 1e-3 && (p[1] - 0.269).abs() < 1e-3);
}

fn balanced(n: usize) -> Dataset {
    let features = (0..n).map(|i| vec![i as f64 / n as f64, 1.0 - i as f64 / n as f64]).collect();
    let labels = (0..n).map(|i| i % 2).collect();
    Dataset::new("b", features, labels, vec!["a".into(), "b".into()]).unwrap()
}

#[test]
fn evaluation_examples() {
    let m = zero_bridge(&model(4, 2, 1));
    let d = balanced(10);
    let e = evaluate(&m, &d).unwrap();
    assert_eq!(e.accuracy, 0.5);
    let col = m.predict(&d.features[0]).unwrap();
    assert!(e.confusion.iter().all(|row| row[col] == 5));

    let m = model(4, 2, 9);
    let own: Vec<usize> = d.features.iter().map(|x| m.predict(x).unwrap()).collect();
    let relabeled = Dataset::new("own", d.features.clone(), own, d.class_labels.clone()).unwrap();
    assert_eq!(evaluate(&m, &relabeled).unwrap().accuracy, 1.0);
    assert!(evaluate(&m, &d.subset(&[])).is_err());
}

#[test]
fn adam_matches_hand_trace() {
    let cfg = OptimizerConfig::default();
    let mut x = vec![1.0];
    let mut s = AdamState::new(1);
    let expect = [0.99000000005, 0.9800027459961475, 0.9700100993784];
    for e in expect {
        let (nx, ns) = adam_step(&x, &[2.0 * x[0]], &[0.01], &s, &cfg).unwrap();
        x = nx;
        s = ns;
        assert!((x[0] - e).abs() <= 1e-12, "{} vs {e}", x[0]);
    }
}

/// Linearly separable 2-feature toy set: class by the sign of `x0 + x1`.
fn separable() -> Dataset {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let t = i as f64 / 19.0;
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        features.push(vec![side * (0.8 + t), side * (0.6 - 0.5 * t)]);
        labels.push(usize::from(side < 0.0));
    }
    Dataset::new("toy", features, labels, vec!["pos".into(), "neg".into()]).unwrap()
}

#[test]
fn toy_run_separates_and_is_deterministic() {
    let spec = ModelSpec::iris(4, 4, 2);
    let m = HybridModel::init(&spec, 3).unwrap();
    let cfg = OptimizerConfig {
        seed: 3,
        ..Default::default()
    };
    let d = separable();
    let (a, ra) = fit(&m, &d, None, &cfg).unwrap();
    let (b, rb) = fit(&m, &d, None, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert!(ra.epochs.len() <= 25);
    assert!(ra.epochs.iter().any(|r| r.train_acc == 1.0), "{}", ra.to_csv());
}

#[test]
fn zero_rates_freeze_parameters() {
    let m = model(4, 2, 2);
    let cfg = OptimizerConfig {
        learning_rate: 0.0,
        nu: 0.0,
        mu: 0.0,
        tn_learning_rate: 0.0,
        ..Default::default()
    };
    let (after, report) = fit(&m, &balanced(8), None, &cfg).unwrap();
    assert_eq!(after, m);
    let first = report.epochs[0].loss;
    assert!(report.epochs.iter().all(|r| (r.loss - first).abs() < 1e-12));
}

#[test]
fn fit_rejects_bad_inputs() {
    let m = model(4, 3, 2);
    assert!(fit(&m, &balanced(8), None, &OptimizerConfig::default()).is_err());
    let m = model(4, 2, 2);
    assert!(fit(&m, &balanced(8).subset(&[]), None, &OptimizerConfig::default()).is_err());
}

#[test]
fn checkpoint_preserves_accuracy() {
    let m = model(4, 2, 8);
    let d = balanced(12);
    let c = Checkpoint {
        model: m.clone(),
        standardizer: None,
        config_echo: String::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.trqn");
    c.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(evaluate(&back.model, &d).unwrap(), evaluate(&m, &d).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_in_simplex(seed in any::<u64>(), classes in 2usize..=3, x in prop::collection::vec(-3.0f64..3.0, 4)) {
        let p = model(4, classes, seed).forward(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_shift_invariant(z in prop::collection::vec(-5.0f64..5.0, 2..=3), c in -10.0f64..10.0) {
        let a = softmax(&z);
        let b = softmax(&z.iter().map(|v| v + c).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_non_negative(p0 in 0.0f64..=1.0, target in 0usize..2) {
        let l = loss(&[p0, 1.0 - p0], target).unwrap();
        prop_assert!(l >= 0.0);
    }
}
