//! Tensor-ring state simulation.
//!
//! A `V`-qubit state is a closed ring of site tensors `tau(v)` with axes
//! `(left-bond, physical, right-bond)`; the amplitude of a basis string is the
//! trace of the ordered product of the `B x B` slices selected by its bits.
//! Single-qubit gates act on one site exactly. A two-qubit gate on ring
//! neighbours `(q, q+1)` merges the two sites, applies the gate, and splits
//! back with an SVD that keeps the `B` largest of the `2B` singular values,
//! absorbing them into the left site. Every bond therefore keeps extent `B`.

use num_complex::Complex64;

use super::circuit::{BitString, GateOp, QuanTrCircuit};
use super::gate::{GateMatrix, UNITARY_TOL};
use crate::error::{invalid, Error, Result};
use crate::linalg::{qr, svd};
use crate::tensor::{ComplexTensor, DenseTensor, Scalar};

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Largest register [`TrState::to_statevector`] will expand.
pub const MAX_DENSE_QUBITS: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct TrState {
    bond: usize,
    /// Flat `(B, 2, B)` row-major site buffers.
    sites: Vec<Vec<C64>>,
}

/// Probabilities of the requested basis outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementResult {
    pub outcomes: Vec<(BitString, f64)>,
}

impl MeasurementResult {
    pub fn probabilities(&self) -> Vec<f64> {
        self.outcomes.iter().map(|(_, p)| *p).collect()
    }

    pub fn total(&self) -> f64 {
        self.outcomes.iter().map(|(_, p)| p).sum()
    }
}

impl TrState {
    /// `|0...0>`: every site has a single unit entry at `(0, 0, 0)`.
    pub fn zero(qubits: usize, bond: usize) -> Result<Self> {
        if qubits < 2 {
            return invalid("ring requires at least 2 qubits");
        }
        if bond < 1 {
            return invalid("bond dimension must be at least 1");
        }
        let mut site = vec![ZERO; 2 * bond * bond];
        site[0] = ONE;
        Ok(TrState {
            bond,
            sites: vec![site; qubits],
        })
    }

    pub fn from_sites(sites: Vec<ComplexTensor>) -> Result<Self> {
        if sites.len() < 2 {
            return invalid("ring requires at least 2 qubits");
        }
        let bond = sites[0].shape()[0];
        for s in &sites {
            if s.shape() != [bond, 2, bond] {
                return Err(Error::ShapeMismatch(format!(
                    "ring sites must be {bond}x2x{bond}, got {:?}",
                    s.shape()
                )));
            }
        }
        Ok(TrState {
            bond,
            sites: sites.into_iter().map(|s| s.into_data()).collect(),
        })
    }

    pub fn qubits(&self) -> usize {
        self.sites.len()
    }

    pub fn bond_dim(&self) -> usize {
        self.bond
    }

    pub fn site(&self, v: usize) -> ComplexTensor {
        DenseTensor::new(&[self.bond, 2, self.bond], self.sites[v].clone()).expect("site shape")
    }

    #[inline]
    fn at(&self, v: usize, l: usize, s: usize, r: usize) -> C64 {
        self.sites[v][(l * 2 + s) * self.bond + r]
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.qubits() {
            return invalid(format!("qubit {q} out of range for {} qubits", self.qubits()));
        }
        Ok(())
    }

    /// Contracts `g` with the physical index of site `q`.
    pub fn apply_single_qubit(&self, q: usize, g: &GateMatrix) -> Result<Self> {
        let mut out = self.clone();
        out.apply_single_in_place(q, g)?;
        Ok(out)
    }

    fn apply_single_in_place(&mut self, q: usize, g: &GateMatrix) -> Result<()> {
        self.check_qubit(q)?;
        if g.arity() != 1 {
            return invalid("expected a single-qubit gate");
        }
        if g.unitarity_error() > UNITARY_TOL {
            return invalid("gate is not unitary");
        }
        let b = self.bond;
        let (g00, g01, g10, g11) = (g.at(0, 0), g.at(0, 1), g.at(1, 0), g.at(1, 1));
        let site = &mut self.sites[q];
        for l in 0..b {
            for r in 0..b {
                let i0 = l * 2 * b + r;
                let i1 = i0 + b;
                let (a0, a1) = (site[i0], site[i1]);
                site[i0] = g00 * a0 + g01 * a1;
                site[i1] = g10 * a0 + g11 * a1;
            }
        }
        Ok(())
    }

    /// Applies a two-qubit gate to `(q, q+1 mod V)` and renormalizes.
    pub fn apply_two_qubit(&self, q: usize, g: &GateMatrix) -> Result<Self> {
        Ok(self.apply_two_qubit_traced(q, g)?.0)
    }

    /// As [`apply_two_qubit`](Self::apply_two_qubit), also returning the
    /// root-sum-square of the discarded singular values.
    pub fn apply_two_qubit_traced(&self, q: usize, g: &GateMatrix) -> Result<(Self, f64)> {
        let mut out = self.clone();
        let err = out.apply_two_in_place(q, g)?;
        out.renormalize()?;
        Ok((out, err))
    }

    /// Gate step without renormalization. Truncation is scale invariant, so
    /// deferring the normalization to the end of a gate list changes nothing
    /// but the cost.
    fn apply_two_in_place(&mut self, q: usize, g: &GateMatrix) -> Result<f64> {
        self.check_qubit(q)?;
        if g.arity() != 2 {
            return invalid("expected a two-qubit gate");
        }
        let v = self.qubits();
        let q1 = (q + 1) % v;
        self.gauge_towards(q)?;

        let b = self.bond;
        // merged[a, s, t, c] = sum_x tau_q[a, s, x] tau_q1[x, t, c]
        let mut merged = vec![ZERO; 4 * b * b];
        for a in 0..b {
            for s in 0..2 {
                for x in 0..b {
                    let w = self.at(q, a, s, x);
                    if w == ZERO {
                        continue;
                    }
                    for t in 0..2 {
                        let row = &self.sites[q1][(x * 2 + t) * b..(x * 2 + t + 1) * b];
                        let dst = ((a * 2 + s) * 2 + t) * b;
                        for (d, &y) in merged[dst..dst + b].iter_mut().zip(row) {
                            *d += w * y;
                        }
                    }
                }
            }
        }
        // gated[a, s', t', c] = sum_{s,t} U[s't', st] merged[a, s, t, c];
        // laid out row-major this is already the (a s') x (t' c) matrix
        let mut gated = vec![ZERO; 4 * b * b];
        for a in 0..b {
            for out_st in 0..4 {
                for in_st in 0..4 {
                    let u = g.at(out_st, in_st);
                    if u == ZERO {
                        continue;
                    }
                    let src = (a * 4 + in_st) * b;
                    let dst = (a * 4 + out_st) * b;
                    for c in 0..b {
                        gated[dst + c] += u * merged[src + c];
                    }
                }
            }
        }
        let m = DenseTensor::matrix(2 * b, 2 * b, gated)?;
        let f = svd(&m, Some(b))?;
        let s = &f.s;
        // left[a, s', k] = U[(a s'), k] * s_k ; right[k, t', c] = Vt[k, (t' c)]
        let mut left = f.u.into_data();
        for row in left.chunks_mut(b) {
            for (x, &sk) in row.iter_mut().zip(s) {
                *x = x.scale(sk);
            }
        }
        self.sites[q] = left;
        self.sites[q1] = f.vt.into_data();
        Ok(f.truncation_error)
    }

    /// QR gauge sweep that treats the ring as an open chain cut at the bond
    /// opposite `(q, q+1)`: sites on the far side of `q` are
    /// left-orthogonalized towards `q`, those beyond `q+1` are
    /// right-orthogonalized towards `q+1`. The represented state is unchanged.
    fn gauge_towards(&mut self, q: usize) -> Result<()> {
        let v = self.qubits();
        if v <= 2 {
            return Ok(());
        }
        let b = self.bond;
        let others: Vec<usize> = (2..v).map(|k| (q + k) % v).collect();
        let cut = others.len() / 2;
        for &site in &others[cut..] {
            let next = (site + 1) % v;
            let m = DenseTensor::matrix(2 * b, b, std::mem::take(&mut self.sites[site]))?;
            let (qm, r) = qr(&m)?;
            self.sites[site] = qm.into_data();
            let nm = DenseTensor::matrix(b, 2 * b, std::mem::take(&mut self.sites[next]))?;
            self.sites[next] = r.matmul(&nm)?.into_data();
        }
        for &site in others[..cut].iter().rev() {
            let prev = (site + v - 1) % v;
            let m = DenseTensor::matrix(b, 2 * b, std::mem::take(&mut self.sites[site]))?;
            let (qm, r) = qr(&m.adjoint()?)?;
            self.sites[site] = qm.adjoint()?.into_data();
            let pm = DenseTensor::matrix(2 * b, b, std::mem::take(&mut self.sites[prev]))?;
            self.sites[prev] = pm.matmul(&r.adjoint()?)?.into_data();
        }
        Ok(())
    }

    /// `<psi|psi>` via the ring of transfer matrices `E_v = sum_s A_s (x) conj(A_s)`.
    pub fn norm_sqr(&self) -> f64 {
        let b = self.bond;
        let d = b * b;
        let mut acc: Option<Vec<C64>> = None;
        for v in 0..self.qubits() {
            let mut e = vec![ZERO; d * d];
            for a in 0..b {
                for a2 in 0..b {
                    for s in 0..2 {
                        for c in 0..b {
                            let x = self.at(v, a, s, c);
                            if x == ZERO {
                                continue;
                            }
                            for c2 in 0..b {
                                e[(a * b + a2) * d + c * b + c2] += x * self.at(v, a2, s, c2).conj();
                            }
                        }
                    }
                }
            }
            acc = Some(match acc {
                None => e,
                Some(t) => crate::tensor::matmul_raw(&t, &e, d, d, d),
            });
        }
        let t = acc.expect("at least two sites");
        (0..d).map(|i| t[i * d + i]).fold(ZERO, |x, y| x + y).re
    }

    fn renormalize(&mut self) -> Result<()> {
        let n = self.norm_sqr();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "state collapsed to norm {n} after truncation"
            )));
        }
        let inv = 1.0 / n.sqrt();
        for x in self.sites[0].iter_mut() {
            *x = x.scale(inv);
        }
        Ok(())
    }

    /// `<bits|psi>`.
    pub fn amplitude(&self, bits: &BitString) -> Result<C64> {
        if bits.len() != self.qubits() {
            return invalid(format!(
                "bit string of length {} for {} qubits",
                bits.len(),
                self.qubits()
            ));
        }
        let b = self.bond;
        let slice = |v: usize, s: usize| -> Vec<C64> {
            let mut m = Vec::with_capacity(b * b);
            for l in 0..b {
                m.extend_from_slice(&self.sites[v][(l * 2 + s) * b..(l * 2 + s + 1) * b]);
            }
            m
        };
        let bits = bits.bits();
        let mut acc = slice(0, bits[0] as usize);
        for (v, &bit) in bits.iter().enumerate().skip(1) {
            acc = crate::tensor::matmul_raw(&acc, &slice(v, bit as usize), b, b, b);
        }
        Ok((0..b).map(|i| acc[i * b + i]).fold(ZERO, |x, y| x + y))
    }

    /// `|<lambda|psi>|^2` for each requested outcome.
    pub fn measure_probs(&self, outcomes: &[BitString]) -> Result<MeasurementResult> {
        let outcomes = outcomes
            .iter()
            .map(|o| Ok((o.clone(), self.amplitude(o)?.norm_sqr())))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasurementResult { outcomes })
    }

    /// Probabilities of all `2^V` outcomes in index order.
    pub fn full_distribution(&self) -> Result<Vec<f64>> {
        Ok(self.to_statevector()?.iter().map(|a| a.norm_sqr()).collect())
    }

    /// Dense amplitudes, qubit 0 most significant. Not renormalized.
    pub fn to_statevector(&self) -> Result<Vec<C64>> {
        let v = self.qubits();
        if v > MAX_DENSE_QUBITS {
            return invalid(format!(
                "{v} qubits exceed the {MAX_DENSE_QUBITS}-qubit dense limit"
            ));
        }
        (0..1usize << v)
            .map(|i| self.amplitude(&BitString::from_index(i, v)))
            .collect()
    }

    /// Applies one gate in place without renormalizing; returns the discarded
    /// weight measured on the running state.
    pub fn apply_op(&mut self, op: &GateOp) -> Result<f64> {
        match *op {
            GateOp::Ry { qubit, angle } => {
                self.apply_single_in_place(qubit, &GateMatrix::ry(angle)?)?;
                Ok(0.0)
            }
            GateOp::Rz { qubit, angle } => {
                self.apply_single_in_place(qubit, &GateMatrix::rz(angle)?)?;
                Ok(0.0)
            }
            GateOp::Cnot { control } => self.apply_two_in_place(control, &GateMatrix::cnot()),
        }
    }

    /// Executes a gate list and renormalizes once at the end. Also returns the
    /// summed discarded weight, measured on the running unnormalized state.
    pub fn run_ops(&self, ops: &[GateOp]) -> Result<(Self, f64)> {
        let mut s = self.clone();
        let mut discarded = 0.0;
        for op in ops {
            discarded += s.apply_op(op)?;
        }
        s.renormalize()?;
        Ok((s, discarded))
    }
}

/// Runs every layer of `c` on `s` and renormalizes.
pub fn run_circuit(s: &TrState, c: &QuanTrCircuit) -> Result<TrState> {
    if c.qubits() != s.qubits() {
        return invalid(format!(
            "circuit on {} qubits applied to a {}-qubit state",
            c.qubits(),
            s.qubits()
        ));
    }
    Ok(s.run_ops(&c.ops())?.0)
}
