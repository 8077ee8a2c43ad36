//! Exact dense statevector simulation, used as ground truth for the ring engine.

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::quantum::{BitString, CircuitProgram, GateMatrix, GateOp, MeasurementResult, QuanTrCircuit};

pub const MAX_QUBITS: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `qubits` qubits, `1 <= qubits <= 14`.
    pub fn zero(qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&qubits) {
            return invalid(format!("statevector supports 1..={MAX_QUBITS} qubits, got {qubits}"));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len();
        if n < 2 || !n.is_power_of_two() || n > 1 << MAX_QUBITS {
            return invalid(format!("amplitude count {n} is not 2^V for 1 <= V <= {MAX_QUBITS}"));
        }
        Ok(StateVector {
            qubits: n.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `g` to the listed qubits; the first listed qubit is the gate's
    /// most significant index bit.
    pub fn apply(&self, qubits: &[usize], g: &GateMatrix) -> Result<Self> {
        let mut out = self.clone();
        out.apply_in_place(qubits, g)?;
        Ok(out)
    }

    fn apply_in_place(&mut self, qubits: &[usize], g: &GateMatrix) -> Result<()> {
        if qubits.len() != g.arity() {
            return invalid(format!(
                "gate of arity {} given {} qubits",
                g.arity(),
                qubits.len()
            ));
        }
        for (i, &q) in qubits.iter().enumerate() {
            if q >= self.qubits {
                return invalid(format!("qubit {q} out of range for {} qubits", self.qubits));
            }
            if qubits[..i].contains(&q) {
                return invalid(format!("qubit {q} listed twice"));
            }
        }
        let masks: Vec<usize> = qubits.iter().map(|&q| 1 << (self.qubits - 1 - q)).collect();
        let all = masks.iter().fold(0, |a, m| a | m);
        let k = 1 << qubits.len();
        let offset = |sub: usize| -> usize {
            masks
                .iter()
                .enumerate()
                .filter(|(i, _)| sub >> (qubits.len() - 1 - i) & 1 == 1)
                .fold(0, |a, (_, m)| a | m)
        };
        let offsets: Vec<usize> = (0..k).map(offset).collect();
        let mut local = vec![Complex64::new(0.0, 0.0); k];
        for base in 0..self.amps.len() {
            if base & all != 0 {
                continue;
            }
            for (l, &o) in local.iter_mut().zip(&offsets) {
                *l = self.amps[base | o];
            }
            for (r, &o) in offsets.iter().enumerate() {
                self.amps[base | o] = (0..k).map(|c| g.at(r, c) * local[c]).sum();
            }
        }
        Ok(())
    }

    pub fn apply_op(&mut self, op: &GateOp) -> Result<()> {
        match *op {
            GateOp::Ry { qubit, angle } => self.apply_in_place(&[qubit], &GateMatrix::ry(angle)?),
            GateOp::Rz { qubit, angle } => self.apply_in_place(&[qubit], &GateMatrix::rz(angle)?),
            GateOp::Cnot { control } => {
                if control >= self.qubits {
                    return invalid(format!("qubit {control} out of range for {} qubits", self.qubits));
                }
                let target = (control + 1) % self.qubits;
                self.apply_in_place(&[control, target], &GateMatrix::cnot())
            }
        }
    }

    pub fn run_ops(&self, ops: &[GateOp]) -> Result<Self> {
        let mut s = self.clone();
        for op in ops {
            s.apply_op(op)?;
        }
        Ok(s)
    }

    pub fn run(&self, c: &QuanTrCircuit) -> Result<Self> {
        if c.qubits() != self.qubits {
            return invalid(format!(
                "circuit on {} qubits applied to a {}-qubit state",
                c.qubits(),
                self.qubits
            ));
        }
        self.run_ops(&c.ops())
    }

    /// Runs a parsed circuit program from `|0...0>`.
    pub fn run_program(p: &CircuitProgram) -> Result<Self> {
        StateVector::zero(p.qubits)?.run_ops(&p.ops)
    }

    pub fn probs(&self, outcomes: &[BitString]) -> Result<MeasurementResult> {
        let outcomes = outcomes
            .iter()
            .map(|o| {
                if o.len() != self.qubits {
                    return invalid(format!(
                        "bit string of length {} for {} qubits",
                        o.len(),
                        self.qubits
                    ));
                }
                Ok((o.clone(), self.amps[o.index()].norm_sqr()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasurementResult { outcomes })
    }
}

/// `|<a|b>|^2` for two amplitude vectors of equal length.
pub fn fidelity(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!("fidelity of vectors of length {} and {}", a.len(), b.len()));
    }
    let overlap: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    Ok(overlap.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn zero_and_guard() {
        assert_eq!(StateVector::zero(2).unwrap().amplitudes(), &[c(1.), c(0.), c(0.), c(0.)]);
        assert!(StateVector::zero(15).is_err());
        assert!(StateVector::zero(0).is_err());
    }

    #[test]
    fn flip_then_cnot() {
        let s = StateVector::zero(2).unwrap();
        let s = s.apply(&[0], &GateMatrix::ry(PI).unwrap()).unwrap();
        assert!((s.amplitudes()[2] - c(1.)).norm() < 1e-15);
        let s = s.apply(&[0, 1], &GateMatrix::cnot()).unwrap();
        assert!((s.amplitudes()[3] - c(1.)).norm() < 1e-15);
        assert!(s.apply(&[0, 0], &GateMatrix::cnot()).is_err());
        assert!(s.apply(&[2], &GateMatrix::ry(1.).unwrap()).is_err());
        assert!(s.apply(&[0, 1], &GateMatrix::ry(1.).unwrap()).is_err());
    }

    #[test]
    fn reversed_cnot_controls_second_listed() {
        // CNOT listed as [1, 0]: qubit 1 controls qubit 0.
        let s = StateVector::zero(2)
            .unwrap()
            .apply(&[1], &GateMatrix::ry(PI).unwrap())
            .unwrap()
            .apply(&[1, 0], &GateMatrix::cnot())
            .unwrap();
        assert!((s.amplitudes()[3].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bell_probabilities_exact() {
        let p = CircuitProgram::parse("QUBITS 2 RANK 2\nRY 0 pi/2\nCNOT 0\n").unwrap();
        let s = StateVector::run_program(&p).unwrap();
        let m = s.probs(&["00".parse().unwrap(), "11".parse().unwrap()]).unwrap();
        for p in m.probabilities() {
            assert!((p - 0.5).abs() < 1e-15);
        }
        let zero = StateVector::zero(2).unwrap();
        assert!((fidelity(s.amplitudes(), zero.amplitudes()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fidelity_extremes() {
        let a = StateVector::zero(3).unwrap();
        let b = a.apply(&[2], &GateMatrix::ry(PI).unwrap()).unwrap();
        assert_eq!(fidelity(a.amplitudes(), a.amplitudes()).unwrap(), 1.0);
        assert!(fidelity(a.amplitudes(), b.amplitudes()).unwrap() < 1e-30);
        assert!(fidelity(a.amplitudes(), &[c(1.)]).is_err());
    }

    #[test]
    fn zero_angle_circuit_is_identity() {
        let c = QuanTrCircuit::zeros(4, 2).unwrap();
        let s = StateVector::zero(4).unwrap().run(&c).unwrap();
        assert_eq!(s, StateVector::zero(4).unwrap());
    }
}
