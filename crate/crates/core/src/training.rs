//! Hybrid model: TN layers, fixed bridge, angle encoder, tensor-ring circuit
//! and readout; cross-entropy loss, parameter-shift and chained bond-tensor
//! gradients, Adam, and the training loop.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Standardizer};
use crate::error::{invalid, Error, Result};
use crate::mpo::{dmrg_sweep, Activation, MpoWeight, SweepObjective, TnLayer};
use crate::quantum::{BitString, GateMatrix, GateOp, QuanTrCircuit, TrState};
use crate::rng::{stream, Stream};
use crate::tensor::DenseTensor;

/// Probability clamp used by the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Basis outcomes read out as class scores, one per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutMap {
    outcomes: Vec<BitString>,
}

impl ReadoutMap {
    pub fn new(outcomes: Vec<BitString>) -> Result<Self> {
        if !(2..=3).contains(&outcomes.len()) {
            return invalid(format!("readout needs 2 or 3 outcomes, got {}", outcomes.len()));
        }
        let v = outcomes[0].len();
        for (i, o) in outcomes.iter().enumerate() {
            if o.len() != v {
                return invalid("readout outcomes must have equal length");
            }
            if outcomes[..i].contains(o) {
                return invalid(format!("readout outcome {o} listed twice"));
            }
        }
        Ok(ReadoutMap { outcomes })
    }

    /// `|0...0>` and `|1...1>`.
    pub fn binary(qubits: usize) -> Result<Self> {
        Self::new(vec![BitString::zeros(qubits), BitString::ones(qubits)])
    }

    /// The three lowest-index strings of Hamming weight one.
    pub fn ternary(qubits: usize) -> Result<Self> {
        let outcomes = (0..3)
            .map(|k| {
                if k >= qubits {
                    return invalid("ternary readout needs at least 3 qubits");
                }
                Ok(BitString::from_index(1 << k, qubits))
            })
            .collect::<Result<_>>()?;
        Self::new(outcomes)
    }

    pub fn for_classes(classes: usize, qubits: usize) -> Result<Self> {
        match classes {
            2 => Self::binary(qubits),
            3 => Self::ternary(qubits),
            k => invalid(format!("{k} classes unsupported; expected 2 or 3")),
        }
    }

    pub fn outcomes(&self) -> &[BitString] {
        &self.outcomes
    }

    pub fn classes(&self) -> usize {
        self.outcomes.len()
    }
}

/// Shapes of a [`HybridModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    /// `(in_dims, out_dims)` per TN layer.
    pub layers: Vec<(Vec<usize>, Vec<usize>)>,
    pub max_bond: usize,
    pub qubits: usize,
    pub rank: usize,
    pub circuit_layers: usize,
    pub classes: usize,
    /// Initial circuit angles are uniform in `[-init_angle, init_angle]`.
    pub init_angle: f64,
}

impl ModelSpec {
    /// Iris preset: width 8 (4 features zero-padded), two `(2,2,2)` layers.
    pub fn iris(qubits: usize, rank: usize, classes: usize) -> Self {
        ModelSpec {
            layers: vec![(vec![2, 2, 2], vec![2, 2, 2]), (vec![2, 2, 2], vec![2, 2, 2])],
            max_bond: 8,
            qubits,
            rank,
            circuit_layers: 2,
            classes,
            init_angle: 0.1,
        }
    }

    /// 28x28 image preset: `(7,7,16) -> (4,4,4) -> (2,2,2)`.
    pub fn image(qubits: usize, rank: usize, classes: usize) -> Self {
        ModelSpec {
            layers: vec![(vec![7, 7, 16], vec![4, 4, 4]), (vec![4, 4, 4], vec![2, 2, 2])],
            ..Self::iris(qubits, rank, classes)
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |(i, _)| i.iter().product())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    tn_layers: Vec<TnLayer>,
    /// `qubits x tn_output_width`, frozen.
    bridge: DenseTensor,
    circuit: QuanTrCircuit,
    readout: ReadoutMap,
    rank: usize,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Input of every TN layer (the first is the padded sample).
    pub layer_inputs: Vec<Vec<f64>>,
    /// Output of the last TN layer.
    pub tn_output: Vec<f64>,
    /// Bridge output, one feature per qubit.
    pub features: Vec<f64>,
    pub angles: Vec<f64>,
    /// Readout probabilities before the softmax.
    pub readout: Vec<f64>,
    pub probs: Vec<f64>,
}

impl HybridModel {
    pub fn new(
        tn_layers: Vec<TnLayer>,
        bridge: DenseTensor,
        circuit: QuanTrCircuit,
        readout: ReadoutMap,
        rank: usize,
    ) -> Result<Self> {
        if tn_layers.is_empty() {
            return invalid("model needs at least one TN layer");
        }
        for w in tn_layers.windows(2) {
            if w[0].weight.out_width() != w[1].weight.in_width() {
                return Err(Error::ShapeMismatch(format!(
                    "TN layer output width {} feeds input width {}",
                    w[0].weight.out_width(),
                    w[1].weight.in_width()
                )));
            }
        }
        let ns = tn_layers.last().expect("nonempty").weight.out_width();
        let (nq, bs) = bridge.dims2()?;
        if bs != ns || nq != circuit.qubits() {
            return Err(Error::ShapeMismatch(format!(
                "bridge is {nq}x{bs}, need {}x{ns}",
                circuit.qubits()
            )));
        }
        if readout.outcomes()[0].len() != nq {
            return Err(Error::ShapeMismatch("readout length differs from qubit count".into()));
        }
        if rank < 1 {
            return invalid("ring rank must be at least 1");
        }
        Ok(HybridModel {
            tn_layers,
            bridge,
            circuit,
            readout,
            rank,
        })
    }

    /// Seeded initialization: MPO sites from the `Init` stream, bridge from
    /// `Bridge` (variance `1/Ns`), circuit angles from `Circuit`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        let n = spec.layers.len();
        let tn_layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(k, (i, o))| {
                let w = MpoWeight::random(i, o, spec.max_bond, &mut rng)?;
                let act = if k + 1 < n { Activation::Relu } else { Activation::Identity };
                let width = w.out_width();
                TnLayer::new(w, vec![0.0; width], act)
            })
            .collect::<Result<Vec<_>>>()?;
        let ns = tn_layers.last().map_or(0, |l| l.weight.out_width());
        let mut rng = stream(seed, Stream::Bridge);
        let normal = Normal::new(0.0, 1.0 / (ns as f64).sqrt()).expect("finite");
        let bridge = DenseTensor::from_fn(&[spec.qubits, ns], |_| normal.sample(&mut rng));
        let mut rng = stream(seed, Stream::Circuit);
        let params = (0..2 * spec.qubits * spec.circuit_layers)
            .map(|_| {
                if spec.init_angle > 0.0 {
                    rng.gen_range(-spec.init_angle..=spec.init_angle)
                } else {
                    0.0
                }
            })
            .collect();
        let circuit = QuanTrCircuit::new(spec.qubits, spec.circuit_layers, params)?;
        let readout = ReadoutMap::for_classes(spec.classes, spec.qubits)?;
        Self::new(tn_layers, bridge, circuit, readout, spec.rank)
    }

    pub fn tn_layers(&self) -> &[TnLayer] {
        &self.tn_layers
    }

    pub fn bridge(&self) -> &DenseTensor {
        &self.bridge
    }

    pub fn circuit(&self) -> &QuanTrCircuit {
        &self.circuit
    }

    pub fn readout(&self) -> &ReadoutMap {
        &self.readout
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn qubits(&self) -> usize {
        self.circuit.qubits()
    }

    pub fn classes(&self) -> usize {
        self.readout.classes()
    }

    pub fn input_width(&self) -> usize {
        self.tn_layers[0].weight.in_width()
    }

    pub fn with_circuit(&self, circuit: QuanTrCircuit) -> Result<Self> {
        Self::new(self.tn_layers.clone(), self.bridge.clone(), circuit, self.readout.clone(), self.rank)
    }

    pub fn with_tn_layers(&self, layers: Vec<TnLayer>) -> Result<Self> {
        Self::new(layers, self.bridge.clone(), self.circuit.clone(), self.readout.clone(), self.rank)
    }

    /// Stored parameter count: MPO sites, biases and circuit angles.
    pub fn param_count(&self) -> usize {
        self.tn_layers.iter().map(TnLayer::param_count).sum::<usize>() + self.circuit.param_count()
    }

    /// Zero-pads a raw sample to the first layer's width.
    pub fn pad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.input_width();
        if x.len() > w {
            return Err(Error::ShapeMismatch(format!("sample width {} exceeds model input {w}", x.len())));
        }
        let mut v = x.to_vec();
        v.resize(w, 0.0);
        Ok(v)
    }

    pub fn tn_forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut inputs = vec![self.pad(x)?];
        for layer in &self.tn_layers {
            let y = layer.forward(inputs.last().expect("nonempty"))?;
            inputs.push(y);
        }
        Ok(inputs)
    }

    fn readout_probs(&self, angles: &[f64], circuit: &QuanTrCircuit) -> Result<Vec<f64>> {
        let mut ops = encoder_ops(angles);
        ops.extend(circuit.ops());
        self.measure(&ops)
    }

    fn measure(&self, ops: &[GateOp]) -> Result<Vec<f64>> {
        let (s, _) = TrState::zero(self.qubits(), self.rank)?.run_ops(ops)?;
        Ok(s.measure_probs(self.readout.outcomes())?.probabilities())
    }

    /// Class probabilities from a TN output: bridge, encoder, circuit,
    /// readout and softmax.
    pub fn head_probs(&self, tn_output: &[f64]) -> Result<Vec<f64>> {
        let angles = encode_angles(&self.bridge.matvec(tn_output)?)?;
        Ok(softmax(&self.readout_probs(&angles, &self.circuit)?))
    }

    pub fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        let mut layer_inputs = self.tn_forward(x)?;
        let tn_output = layer_inputs.pop().expect("nonempty");
        let features = self.bridge.matvec(&tn_output)?;
        let angles = encode_angles(&features)?;
        let readout = self.readout_probs(&angles, &self.circuit)?;
        let probs = softmax(&readout);
        Ok(ForwardTrace {
            layer_inputs,
            tn_output,
            features,
            angles,
            readout,
            probs,
        })
    }

    /// Class probabilities for one raw sample.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.probs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(predict_label(&self.forward(x)?))
    }
}

/// `theta_i = pi * tanh(f_i)`.
pub fn encode_angles(features: &[f64]) -> Result<Vec<f64>> {
    if let Some(f) = features.iter().find(|f| !f.is_finite()) {
        return invalid(format!("non-finite feature {f}"));
    }
    Ok(features.iter().map(|f| PI * f.tanh()).collect())
}

fn encode_derivative(f: f64) -> f64 {
    let t = f.tanh();
    PI * (1.0 - t * t)
}

fn encoder_ops(angles: &[f64]) -> Vec<GateOp> {
    angles
        .iter()
        .enumerate()
        .map(|(qubit, &angle)| GateOp::Ry { qubit, angle })
        .collect()
}

/// Product state with `RY(theta_i)` on qubit `i` of `|0...0>`.
pub fn encoded_state(angles: &[f64], rank: usize) -> Result<TrState> {
    let mut s = TrState::zero(angles.len(), rank)?;
    for (q, &a) in angles.iter().enumerate() {
        s = s.apply_single_qubit(q, &GateMatrix::ry(a)?)?;
    }
    Ok(s)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-sum_j [t_j ln p_j + (1 - t_j) ln(1 - p_j)]` with one-hot `t` and `p`
/// clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return invalid(format!("target {target} outside {} classes", probs.len()));
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let p = clamp(p);
            if j == target {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// `dL/dp` of [`loss`]; zero where the clamp is active.
fn loss_gradient(probs: &[f64], target: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if p != clamp(p) {
                0.0
            } else if j == target {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// `dL/dz` for readout probabilities `z` feeding the softmax.
fn readout_gradient(readout: &[f64], target: usize) -> Vec<f64> {
    let c = softmax(readout);
    let g = loss_gradient(&c, target);
    let dot: f64 = g.iter().zip(&c).map(|(a, b)| a * b).sum();
    c.iter().zip(&g).map(|(ci, gi)| ci * (gi - dot)).collect()
}

/// Argmax; ties go to the lowest class index.
pub fn predict_label(probs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    best
}

/// Binary sign readout: class 0 is `+1`, class 1 is `-1`.
pub fn predict_sign(probs: &[f64]) -> i8 {
    if predict_label(probs) == 0 {
        1
    } else {
        -1
    }
}

/// `(f(theta + pi/2) - f(theta - pi/2)) / 2`, exact for expectations under a
/// rotation generated by half a Pauli operator.
pub fn parameter_shift(f: impl Fn(f64) -> Result<f64>, theta: f64) -> Result<f64> {
    Ok(0.5 * (f(theta + FRAC_PI_2)? - f(theta - FRAC_PI_2)?))
}

/// `dL/dtheta_which` by the parameter-shift rule on every readout
/// probability, chained through the softmax and loss.
pub fn param_shift_grad(m: &HybridModel, x: &[f64], target: usize, which: usize) -> Result<f64> {
    if which >= m.circuit.param_count() {
        return invalid(format!(
            "parameter {which} out of range for {} parameters",
            m.circuit.param_count()
        ));
    }
    let t = m.trace(x)?;
    let up = readout_gradient(&t.readout, target);
    let plus = m.readout_probs(&t.angles, &m.circuit.shifted(which, FRAC_PI_2)?)?;
    let minus = m.readout_probs(&t.angles, &m.circuit.shifted(which, -FRAC_PI_2)?)?;
    Ok(up
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(u, (p, q))| u * 0.5 * (p - q))
        .sum())
}

/// Per-sample loss and gradients.
#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub loss: f64,
    pub probs: Vec<f64>,
    /// `dL/dtheta` for every circuit parameter (empty if not requested).
    pub circuit: Vec<f64>,
    /// `dL/d(TN output)` (empty if not requested).
    pub tn_output: Vec<f64>,
    pub trace: ForwardTrace,
}

/// Loss and requested gradients of one sample. Circuit gradients reuse the
/// simulated state up to each shifted gate.
pub fn sample_gradient(
    m: &HybridModel,
    x: &[f64],
    target: usize,
    want_circuit: bool,
    want_tn: bool,
) -> Result<SampleGradient> {
    let trace = m.trace(x)?;
    let loss_value = loss(&trace.probs, target)?;
    let up = readout_gradient(&trace.readout, target);
    let chain = |plus: &[f64], minus: &[f64]| -> f64 {
        up.iter()
            .zip(plus.iter().zip(minus))
            .map(|(u, (p, q))| u * 0.5 * (p - q))
            .sum()
    };

    let mut circuit = Vec::new();
    if want_circuit {
        let v = m.qubits();
        let ops = m.circuit.ops();
        // snapshots[k]: unnormalized state before ops[k]
        let mut state = encoded_state(&trace.angles, m.rank)?;
        let mut snapshots = Vec::with_capacity(ops.len());
        for op in &ops {
            snapshots.push(state.clone());
            state.apply_op(op)?;
        }
        let shifted_probs = |k: usize, delta: f64| -> Result<Vec<f64>> {
            let idx = (k / (2 * v)) * 3 * v + k % (2 * v);
            let op = match ops[idx] {
                GateOp::Ry { qubit, angle } => GateOp::Ry { qubit, angle: angle + delta },
                GateOp::Rz { qubit, angle } => GateOp::Rz { qubit, angle: angle + delta },
                GateOp::Cnot { .. } => unreachable!("parameters map to rotations"),
            };
            let mut s = snapshots[idx].clone();
            s.apply_op(&op)?;
            let (s, _) = s.run_ops(&ops[idx + 1..])?;
            Ok(s.measure_probs(m.readout.outcomes())?.probabilities())
        };
        for k in 0..m.circuit.param_count() {
            circuit.push(chain(&shifted_probs(k, FRAC_PI_2)?, &shifted_probs(k, -FRAC_PI_2)?));
        }
    }

    let mut tn_output = Vec::new();
    if want_tn {
        let mut d_feature = Vec::with_capacity(m.qubits());
        for (i, &f) in trace.features.iter().enumerate() {
            let mut a = trace.angles.clone();
            a[i] += FRAC_PI_2;
            let plus = m.readout_probs(&a, &m.circuit)?;
            a[i] -= PI;
            let minus = m.readout_probs(&a, &m.circuit)?;
            d_feature.push(chain(&plus, &minus) * encode_derivative(f));
        }
        tn_output = m.bridge.adjoint()?.matvec(&d_feature)?;
    }
    Ok(SampleGradient {
        loss: loss_value,
        probs: trace.probs.clone(),
        circuit,
        tn_output,
        trace,
    })
}

/// `dL/d(TN output)`: encoder parameter shifts scaled by `d theta / d f` and
/// mapped back through the bridge transpose.
pub fn encoder_grad(m: &HybridModel, x: &[f64], target: usize) -> Result<Vec<f64>> {
    Ok(sample_gradient(m, x, target, false, true)?.tn_output)
}

/// Upstream gradients of each TN layer's output, last layer first supplied.
fn tn_upstream(m: &HybridModel, inputs: &[Vec<f64>], last: Vec<f64>) -> Result<Vec<Vec<f64>>> {
    let n = m.tn_layers.len();
    let mut ups = vec![Vec::new(); n];
    ups[n - 1] = last;
    for l in (1..n).rev() {
        let layer = &m.tn_layers[l];
        let z = layer.pre_activation(&inputs[l])?;
        let g: Vec<f64> = ups[l]
            .iter()
            .zip(&z)
            .map(|(gi, zi)| gi * layer.activation.derivative(*zi))
            .collect();
        ups[l - 1] = layer.weight.to_matrix()?.adjoint()?.matvec(&g)?;
    }
    Ok(ups)
}

/// Sweep objective `g_s . y` with a frozen upstream gradient `g_s`.
struct Linearized<'a> {
    upstream: &'a [Vec<f64>],
}

impl SweepObjective for Linearized<'_> {
    fn loss(&self, sample: usize, output: &[f64]) -> f64 {
        self.upstream[sample].iter().zip(output).map(|(g, y)| g * y).sum()
    }

    fn gradient(&self, sample: usize, _: &[f64]) -> Vec<f64> {
        self.upstream[sample].clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Adam step size.
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Bond-tensor gradient step.
    pub tn_learning_rate: f64,
    /// Adam rate for `w_y` angles.
    pub nu: f64,
    /// Adam rate for `w_z` angles.
    pub mu: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `Some(n)`: alternate `n` quantum-only and `n` classical-only epochs.
    pub alternate: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
            weight_decay: 0.0,
            tn_learning_rate: 0.05,
            nu: 0.01,
            mu: 0.01,
            max_epochs: 25,
            batch_size: 4,
            seed: 0,
            alternate: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.learning_rate, self.tn_learning_rate, self.nu, self.mu];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return invalid("learning rates must be finite and non-negative");
        }
        if self.max_epochs < 1 || self.batch_size < 1 {
            return invalid("epochs and batch size must be at least 1");
        }
        if self.alternate == Some(0) {
            return invalid("alternation period must be at least 1");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || self.epsilon <= 0.0 {
            return invalid("betas must lie in [0, 1) and epsilon be positive");
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step with per-parameter step sizes `rates`.
/// Weight decay adds `delta * theta` to the gradient.
pub fn adam_step(
    params: &[f64],
    grads: &[f64],
    rates: &[f64],
    state: &AdamState,
    cfg: &OptimizerConfig,
) -> Result<(Vec<f64>, AdamState)> {
    let n = params.len();
    if grads.len() != n || rates.len() != n || state.m.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adam: {n} parameters, {} gradients, {} rates, {} moments",
            grads.len(),
            rates.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = cfg.betas;
    let t = state.t + 1;
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let mut next = AdamState {
        m: state.m.clone(),
        v: state.v.clone(),
        t,
    };
    let mut out = params.to_vec();
    for i in 0..n {
        let g = grads[i] + cfg.weight_decay * params[i];
        next.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        next.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = next.m[i] / c1;
        let vh = next.v[i] / c2;
        out[i] -= rates[i] * mh / (vh.sqrt() + cfg.epsilon);
    }
    Ok((out, next))
}

fn circuit_rates(c: &QuanTrCircuit, cfg: &OptimizerConfig) -> Vec<f64> {
    (0..c.param_count())
        .map(|k| match QuanTrCircuit::axis_of(k) {
            crate::quantum::RotationAxis::Y => cfg.nu,
            crate::quantum::RotationAxis::Z => cfg.mu,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_time: Duration,
}

impl TrainReport {
    pub const CSV_VERSION: u32 = 1;

    /// `epoch,loss,train_acc,val_acc` under a versioned header comment. Wall
    /// time is left out so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# trqnet report v{}\nepoch,loss,train_acc,val_acc\n", Self::CSV_VERSION);
        for r in &self.epochs {
            let val = r.val_acc.map_or(String::new(), |v| v.to_string());
            writeln!(s, "{},{},{},{}", r.epoch, r.loss, r.train_acc, val).expect("string write");
        }
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }
}

/// Accuracy and confusion counts (`confusion[true][predicted]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(m: &HybridModel, d: &Dataset) -> Result<Evaluation> {
    if d.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let k = m.classes();
    let mut confusion = vec![vec![0; k]; k];
    for (x, &y) in d.features.iter().zip(&d.labels) {
        if y >= k {
            return Err(Error::Data(format!("label {y} outside {k} model classes")));
        }
        confusion[y][m.predict(x)?] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / d.len() as f64,
        confusion,
    })
}

const EARLY_STOP_DELTA: f64 = 1e-6;
const EARLY_STOP_PATIENCE: usize = 3;

/// Mini-batch training. Each batch updates the circuit angles with Adam on
/// batch-averaged parameter-shift gradients and runs one DMRG sweep per TN
/// layer against the chained upstream gradients, all computed from the
/// pre-update model. Stops at `max_epochs` or after three consecutive
/// epochs improving the loss by less than `1e-6`.
pub fn fit(
    m: &HybridModel,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &OptimizerConfig,
) -> Result<(HybridModel, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if train.class_count() != m.classes() {
        return Err(Error::Data(format!(
            "dataset has {} classes, readout has {}",
            train.class_count(),
            m.classes()
        )));
    }
    let start = Instant::now();
    let mut model = m.clone();
    let mut adam = AdamState::new(model.circuit.param_count());
    let rates = circuit_rates(&model.circuit, cfg);
    let mut rng = stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let (quantum, classical) = match cfg.alternate {
            None => (true, true),
            Some(n) => {
                let q = ((epoch - 1) / n) % 2 == 0;
                (q, !q)
            }
        };
        let quantum = quantum && (cfg.nu > 0.0 || cfg.mu > 0.0);
        let classical = classical && cfg.tn_learning_rate > 0.0;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut circuit_grad = vec![0.0; model.circuit.param_count()];
            let n_layers = model.tn_layers.len();
            let mut layer_inputs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_layers];
            let mut upstream: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_layers];
            for &i in batch {
                let g = sample_gradient(&model, &train.features[i], train.labels[i], quantum, classical)?;
                total += g.loss;
                for (a, b) in circuit_grad.iter_mut().zip(&g.circuit) {
                    *a += b / batch.len() as f64;
                }
                if classical {
                    let ups = tn_upstream(&model, &g.trace.layer_inputs, g.tn_output)?;
                    for (l, (inp, up)) in g.trace.layer_inputs.into_iter().zip(ups).enumerate() {
                        layer_inputs[l].push(inp);
                        upstream[l].push(up);
                    }
                }
            }
            if quantum {
                let (p, s) = adam_step(model.circuit.params(), &circuit_grad, &rates, &adam, cfg)?;
                adam = s;
                model.circuit = model.circuit.with_params(p)?;
            }
            if classical {
                for l in 0..n_layers {
                    let objective = Linearized { upstream: &upstream[l] };
                    model.tn_layers[l] =
                        dmrg_sweep(&model.tn_layers[l], &layer_inputs[l], &objective, cfg.tn_learning_rate)?;
                }
            }
        }
        let epoch_loss = total / train.len() as f64;
        let train_acc = evaluate(&model, train)?.accuracy;
        let val_acc = match val {
            Some(v) if !v.is_empty() => Some(evaluate(&model, v)?.accuracy),
            _ => None,
        };
        records.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            train_acc,
            val_acc,
        });
        if best - epoch_loss < EARLY_STOP_DELTA {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= EARLY_STOP_PATIENCE {
            break;
        }
    }
    Ok((
        model,
        TrainReport {
            epochs: records,
            wall_time: start.elapsed(),
        },
    ))
}

/// A trained model with the preprocessing it expects and a free-form echo of
/// the run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: HybridModel,
    pub standardizer: Option<Standardizer>,
    pub config_echo: String,
}

const MAGIC: &[u8; 4] = b"TRQN";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<'a, W: Write>(&'a mut W);

impl<W: Write> Writer<'_, W> {
    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.0.write_all(&(v as u64).to_le_bytes())?)
    }

    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len())?;
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn dims(&mut self, d: &[usize]) -> Result<()> {
        self.u64(d.len())?;
        d.iter().try_for_each(|&x| self.u64(x))
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u64(b.len())?;
        Ok(self.0.write_all(b)?)
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn u64(&mut self) -> Result<usize> {
        let mut b = [0u8; 8];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("truncated file".into()))?;
        let v = u64::from_le_bytes(b);
        if v > 1 << 32 {
            return Err(Error::Checkpoint(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.0
                .read_exact(&mut b)
                .map_err(|_| Error::Checkpoint("truncated file".into()))?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u64()?;
        (0..n).map(|_| self.u64()).collect()
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u64()?;
        let mut b = vec![0u8; n];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("truncated file".into()))?;
        Ok(b)
    }

    fn tensor(&mut self) -> Result<DenseTensor> {
        let shape = self.dims()?;
        DenseTensor::new(&shape, self.f64s()?).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    /// `TRQN`, little-endian `u32` version, then length-prefixed little-endian
    /// arrays: TN sites and biases, bridge, ring rank, circuit angles,
    /// readout strings, standardizer and config echo.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut w = Writer(out);
        let m = &self.model;
        w.u64(m.tn_layers.len())?;
        for layer in &m.tn_layers {
            w.u64(layer.weight.max_bond())?;
            w.u64(match layer.activation {
                Activation::Relu => 0,
                Activation::Identity => 1,
            })?;
            w.u64(layer.weight.site_count())?;
            for site in layer.weight.sites() {
                w.dims(site.shape())?;
                w.f64s(site.data())?;
            }
            w.f64s(&layer.bias)?;
        }
        w.dims(m.bridge.shape())?;
        w.f64s(m.bridge.data())?;
        w.u64(m.rank)?;
        w.u64(m.circuit.qubits())?;
        w.u64(m.circuit.layers())?;
        w.f64s(m.circuit.params())?;
        w.u64(m.readout.classes())?;
        for o in m.readout.outcomes() {
            w.bytes(o.bits())?;
        }
        match &self.standardizer {
            Some(s) => {
                w.u64(1)?;
                w.f64s(&s.mean)?;
                w.f64s(&s.scale)?;
            }
            None => w.u64(0)?,
        }
        w.bytes(self.config_echo.as_bytes())?;
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 8];
        input
            .read_exact(&mut head)
            .map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &head[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(head[4..].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let bad = |e: Error| Error::Checkpoint(e.to_string());
        let mut r = Reader(input);
        let n_layers = r.u64()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let max_bond = r.u64()?;
            let activation = match r.u64()? {
                0 => Activation::Relu,
                1 => Activation::Identity,
                a => return Err(Error::Checkpoint(format!("unknown activation tag {a}"))),
            };
            let n_sites = r.u64()?;
            let sites = (0..n_sites).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
            let weight = MpoWeight::new(sites, max_bond).map_err(bad)?;
            let bias = r.f64s()?;
            layers.push(TnLayer::new(weight, bias, activation).map_err(bad)?);
        }
        let bridge = r.tensor()?;
        let rank = r.u64()?;
        let qubits = r.u64()?;
        let circuit_layers = r.u64()?;
        let circuit = QuanTrCircuit::new(qubits, circuit_layers, r.f64s()?).map_err(bad)?;
        let n_out = r.u64()?;
        let outcomes = (0..n_out)
            .map(|_| BitString::new(r.bytes()?).map_err(bad))
            .collect::<Result<Vec<_>>>()?;
        let readout = ReadoutMap::new(outcomes).map_err(bad)?;
        let standardizer = match r.u64()? {
            0 => None,
            1 => Some(Standardizer {
                mean: r.f64s()?,
                scale: r.f64s()?,
            }),
            t => return Err(Error::Checkpoint(format!("unknown standardizer tag {t}"))),
        };
        let config_echo = String::from_utf8(r.bytes()?)
            .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
        let model = HybridModel::new(layers, bridge, circuit, readout, rank).map_err(bad)?;
        Ok(Checkpoint {
            model,
            standardizer,
            config_echo,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
