use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;
use trqnet::oracle::{fidelity, StateVector};
use trqnet::quantum::{run_circuit, BitString, GateMatrix, GateOp, QuanTrCircuit, TrState};
use trqnet::rng::{stream, Stream};

fn random_circuit(seed: u64, qubits: usize, layers: usize) -> QuanTrCircuit {
    let mut rng = stream(seed, Stream::Circuit);
    let params = (0..2 * qubits * layers)
        .map(|_| rng.gen_range(-PI..PI))
        .collect();
    QuanTrCircuit::new(qubits, layers, params).unwrap()
}

fn tr_fidelity(s: &TrState, o: &StateVector) -> f64 {
    fidelity(&s.to_statevector().unwrap(), o.amplitudes()).unwrap()
}

#[test]
fn ghz_chain() {
    for v in [4, 6] {
        let mut ops = vec![GateOp::Ry { qubit: 0, angle: PI / 2.0 }];
        ops.extend((0..v - 1).map(|q| GateOp::Cnot { control: q }));
        let (s, _) = TrState::zero(v, 4).unwrap().run_ops(&ops).unwrap();
        let p = s
            .measure_probs(&[BitString::zeros(v), BitString::ones(v)])
            .unwrap()
            .probabilities();
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6, "{p:?}");
    }
}

#[test]
fn classical_cnot_and_fixed_point() {
    let s = TrState::zero(4, 4)
        .unwrap()
        .apply_single_qubit(0, &GateMatrix::ry(PI).unwrap())
        .unwrap()
        .apply_two_qubit(0, &GateMatrix::cnot())
        .unwrap();
    assert!((s.measure_probs(&["1100".parse().unwrap()]).unwrap().total() - 1.0).abs() < 1e-10);

    let z = TrState::zero(4, 4).unwrap();
    let c = QuanTrCircuit::zeros(4, 2).unwrap();
    let s = run_circuit(&z, &c).unwrap();
    let o = StateVector::zero(4).unwrap();
    assert!(tr_fidelity(&s, &o) >= 1.0 - 1e-10);
    assert_eq!(run_circuit(&z, &QuanTrCircuit::zeros(4, 0).unwrap()).unwrap(), z);
}

/// Seeded V=4, r=2, B=4 layered circuit against the oracle. The recorded
/// fidelity is frozen so any change to the truncation path is noticed.
#[test]
fn seeded_layered_circuit_golden() {
    let c = random_circuit(2024, 4, 2);
    let s = run_circuit(&TrState::zero(4, 4).unwrap(), &c).unwrap();
    let o = StateVector::zero(4).unwrap().run(&c).unwrap();
    let f = tr_fidelity(&s, &o);
    assert!(f >= 0.99, "fidelity {f}");
    assert!((f - GOLDEN_V4_R2_B4).abs() < 1e-9, "fidelity {f:.15}");
}

const GOLDEN_V4_R2_B4: f64 = 1.0;

#[test]
fn truncation_monotone_in_bond() {
    // A state with genuine entanglement, replayed at B and B+2.
    let c = random_circuit(99, 6, 2);
    for b in [1usize, 2, 3, 4] {
        let (s_small, _) = TrState::zero(6, b).unwrap().run_ops(&c.ops()).unwrap();
        let mut pre_large = s_small.clone();
        pre_large = widen(&pre_large, b + 2);
        let g = GateMatrix::cnot();
        for q in 0..6 {
            let (_, e_small) = s_small.apply_two_qubit_traced(q, &g).unwrap();
            let (_, e_large) = pre_large.apply_two_qubit_traced(q, &g).unwrap();
            assert!(e_large <= e_small + 1e-12, "B={b} q={q}: {e_large} > {e_small}");
        }
    }
}

/// Embeds a rank-`B` ring in rank `B'` by zero padding; same state.
fn widen(s: &TrState, bond: usize) -> TrState {
    let b = s.bond_dim();
    let sites = (0..s.qubits())
        .map(|v| {
            let t = s.site(v);
            trqnet::ComplexTensor::from_fn(&[bond, 2, bond], |i| {
                if i[0] < b && i[2] < b {
                    t.get(&[i[0], i[1], i[2]])
                } else {
                    num_complex::Complex64::new(0.0, 0.0)
                }
            })
        })
        .collect();
    TrState::from_sites(sites).unwrap()
}

fn single_qubit_ops(qubits: usize) -> impl Strategy<Value = Vec<GateOp>> {
    prop::collection::vec((0..qubits, any::<bool>(), -7.0f64..7.0), 0..40).prop_map(|v| {
        v.into_iter()
            .map(|(qubit, y, angle)| {
                if y {
                    GateOp::Ry { qubit, angle }
                } else {
                    GateOp::Rz { qubit, angle }
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_qubit_circuits_are_exact(
        (v, ops) in (2usize..=10).prop_flat_map(|v| (Just(v), single_qubit_ops(v))),
        b in 1usize..4,
    ) {
        let (s, discarded) = TrState::zero(v, b).unwrap().run_ops(&ops).unwrap();
        let o = StateVector::zero(v).unwrap().run_ops(&ops).unwrap();
        prop_assert_eq!(discarded, 0.0);
        prop_assert!(tr_fidelity(&s, &o) >= 1.0 - 1e-10);
    }

    #[test]
    fn one_cnot_on_product_state(
        (v, ops) in (2usize..=8).prop_flat_map(|v| (Just(v), single_qubit_ops(v))),
        control in 0usize..8,
        b in 2usize..5,
    ) {
        let mut ops = ops;
        ops.push(GateOp::Cnot { control: control % v });
        let (s, _) = TrState::zero(v, b).unwrap().run_ops(&ops).unwrap();
        let o = StateVector::zero(v).unwrap().run_ops(&ops).unwrap();
        prop_assert!(tr_fidelity(&s, &o) >= 1.0 - 1e-10);
    }

    #[test]
    fn probabilities_normalized(seed in any::<u64>(), v in 2usize..=8, r in 0usize..3, b in 1usize..5) {
        let c = random_circuit(seed, v, r);
        let s = run_circuit(&TrState::zero(v, b).unwrap(), &c).unwrap();
        let total: f64 = s.full_distribution().unwrap().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);

        let o = StateVector::zero(v).unwrap().run(&c).unwrap();
        prop_assert!((o.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gates_unitary(theta in -50.0f64..50.0) {
        prop_assert!(GateMatrix::ry(theta).unwrap().unitarity_error() <= 1e-12);
        prop_assert!(GateMatrix::rz(theta).unwrap().unitarity_error() <= 1e-12);
    }

    #[test]
    fn oracle_gate_by_gate_equals_run(seed in any::<u64>(), v in 2usize..=6) {
        let c = random_circuit(seed, v, 2);
        let whole = StateVector::zero(v).unwrap().run(&c).unwrap();
        let mut stepped = StateVector::zero(v).unwrap();
        for op in c.ops() {
            stepped = stepped.run_ops(&[op]).unwrap();
        }
        for (a, b) in whole.amplitudes().iter().zip(stepped.amplitudes()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn nothing_discarded_means_exact(seed in any::<u64>(), v in 2usize..=6, b in 1usize..9) {
        let c = random_circuit(seed, v, 2);
        let (s, discarded) = TrState::zero(v, b).unwrap().run_ops(&c.ops()).unwrap();
        let o = StateVector::zero(v).unwrap().run(&c).unwrap();
        if discarded < 1e-12 {
            prop_assert!(tr_fidelity(&s, &o) >= 1.0 - 1e-8);
        }
    }
}
