use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// One gate of a circuit. `Cnot { control: q }` targets `(q + 1) mod V`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateOp {
    Ry { qubit: usize, angle: f64 },
    Rz { qubit: usize, angle: f64 },
    Cnot { control: usize },
}

/// Computational-basis outcome; character `k` is qubit `k`, and qubit 0 is
/// the most significant bit of the basis index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString(Vec<u8>);

impl BitString {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return invalid("bits must be 0 or 1");
        }
        Ok(BitString(bits))
    }

    pub fn from_index(index: usize, qubits: usize) -> Self {
        BitString((0..qubits).map(|q| ((index >> (qubits - 1 - q)) & 1) as u8).collect())
    }

    pub fn zeros(qubits: usize) -> Self {
        BitString(vec![0; qubits])
    }

    pub fn ones(qubits: usize) -> Self {
        BitString(vec![1; qubits])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => invalid(format!("bad bit string {s:?}")),
            })
            .collect::<Result<Vec<u8>>>()?;
        if bits.is_empty() {
            return invalid("empty bit string");
        }
        Ok(BitString(bits))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Layered variational circuit: per layer, `RY(w_y) RZ(w_z)` on every qubit
/// followed by the ring cascade `CNOT(0->1), ..., CNOT(V-1->0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuanTrCircuit {
    qubits: usize,
    layers: usize,
    params: Vec<f64>,
}

/// Which rotation a circuit parameter drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationAxis {
    Y,
    Z,
}

impl QuanTrCircuit {
    /// `params[(layer * V + qubit) * 2]` is `w_y`, `+ 1` is `w_z`.
    pub fn new(qubits: usize, layers: usize, params: Vec<f64>) -> Result<Self> {
        if qubits < 2 {
            return invalid("ring requires at least 2 qubits");
        }
        if params.len() != 2 * qubits * layers {
            return invalid(format!(
                "{} parameters for {qubits} qubits x {layers} layers (need {})",
                params.len(),
                2 * qubits * layers
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return invalid("circuit parameters must be finite");
        }
        Ok(QuanTrCircuit {
            qubits,
            layers,
            params,
        })
    }

    pub fn zeros(qubits: usize, layers: usize) -> Result<Self> {
        Self::new(qubits, layers, vec![0.0; 2 * qubits * layers])
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn axis_of(index: usize) -> RotationAxis {
        if index.is_multiple_of(2) {
            RotationAxis::Y
        } else {
            RotationAxis::Z
        }
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::new(self.qubits, self.layers, params)
    }

    /// Same circuit with parameter `index` moved by `delta`.
    pub fn shifted(&self, index: usize, delta: f64) -> Result<Self> {
        if index >= self.params.len() {
            return invalid(format!(
                "parameter {index} out of range for {} parameters",
                self.params.len()
            ));
        }
        let mut params = self.params.clone();
        params[index] += delta;
        self.with_params(params)
    }

    pub fn ops(&self) -> Vec<GateOp> {
        let v = self.qubits;
        let mut ops = Vec::with_capacity(self.layers * 3 * v);
        for layer in 0..self.layers {
            for q in 0..v {
                let base = (layer * v + q) * 2;
                ops.push(GateOp::Ry {
                    qubit: q,
                    angle: self.params[base],
                });
                ops.push(GateOp::Rz {
                    qubit: q,
                    angle: self.params[base + 1],
                });
            }
            ops.extend((0..v).map(|q| GateOp::Cnot { control: q }));
        }
        ops
    }
}

/// Text circuit description:
///
/// ```text
/// QUBITS 2 RANK 4
/// RY 0 pi/2
/// CNOT 0
/// ```
///
/// Angles are decimal numbers or `pi` multiples such as `-pi/4`, `3*pi/2`.
/// Blank lines and `#` comments are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitProgram {
    pub qubits: usize,
    pub rank: usize,
    pub ops: Vec<GateOp>,
}

impl CircuitProgram {
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut ops = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let Some((qubits, _)) = header else {
                match tokens.as_slice() {
                    ["QUBITS", v, "RANK", b] => {
                        let v: usize = v.parse().map_err(|_| err(format!("bad qubit count {v:?}")))?;
                        let b: usize = b.parse().map_err(|_| err(format!("bad rank {b:?}")))?;
                        if v < 1 || b < 1 {
                            return Err(err("qubit count and rank must be positive".into()));
                        }
                        header = Some((v, b));
                        continue;
                    }
                    _ => return Err(err("expected header `QUBITS <V> RANK <B>`".into())),
                }
            };
            let qubit = |tok: &str| -> Result<usize> {
                let q: usize = tok.parse().map_err(|_| err(format!("bad qubit index {tok:?}")))?;
                if q >= qubits {
                    return Err(err(format!("qubit {q} out of range for {qubits} qubits")));
                }
                Ok(q)
            };
            let op = match tokens.as_slice() {
                ["RY", q, a] => GateOp::Ry {
                    qubit: qubit(q)?,
                    angle: parse_angle(a).ok_or_else(|| err(format!("bad angle {a:?}")))?,
                },
                ["RZ", q, a] => GateOp::Rz {
                    qubit: qubit(q)?,
                    angle: parse_angle(a).ok_or_else(|| err(format!("bad angle {a:?}")))?,
                },
                ["CNOT", q] => GateOp::Cnot { control: qubit(q)? },
                [tok, ..] => return Err(err(format!("unknown gate {tok:?}"))),
                [] => unreachable!(),
            };
            ops.push(op);
        }
        let (qubits, rank) = header.ok_or(Error::Parse {
            line: 0,
            message: "missing header `QUBITS <V> RANK <B>`".into(),
        })?;
        Ok(CircuitProgram { qubits, rank, ops })
    }
}

fn parse_angle(tok: &str) -> Option<f64> {
    if let Ok(v) = tok.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let (sign, body) = match tok.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, tok),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok()?),
        None => (body, 1.0),
    };
    let factor = match num.strip_suffix("pi")? {
        "" => 1.0,
        k => k.strip_suffix('*')?.parse::<f64>().ok()?,
    };
    Some(sign * factor * std::f64::consts::PI / den)
}

impl fmt::Display for CircuitProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "QUBITS {} RANK {}", self.qubits, self.rank)?;
        for op in &self.ops {
            match op {
                GateOp::Ry { qubit, angle } => writeln!(f, "RY {qubit} {angle:?}")?,
                GateOp::Rz { qubit, angle } => writeln!(f, "RZ {qubit} {angle:?}")?,
                GateOp::Cnot { control } => writeln!(f, "CNOT {control}")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn bitstring_index_msb_first() {
        let b: BitString = "0100".parse().unwrap();
        assert_eq!(b.index(), 4);
        assert_eq!(BitString::from_index(4, 4), b);
        assert_eq!(b.to_string(), "0100");
        assert!("01x".parse::<BitString>().is_err());
    }

    #[test]
    fn circuit_layout() {
        let c = QuanTrCircuit::new(2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(
            c.ops(),
            vec![
                GateOp::Ry { qubit: 0, angle: 0.1 },
                GateOp::Rz { qubit: 0, angle: 0.2 },
                GateOp::Ry { qubit: 1, angle: 0.3 },
                GateOp::Rz { qubit: 1, angle: 0.4 },
                GateOp::Cnot { control: 0 },
                GateOp::Cnot { control: 1 },
            ]
        );
        assert_eq!(QuanTrCircuit::axis_of(3), RotationAxis::Z);
        assert!(QuanTrCircuit::new(1, 1, vec![0.0; 2]).is_err());
        assert!(QuanTrCircuit::new(4, 2, vec![0.0; 15]).is_err());
        assert!(c.shifted(4, 1.0).is_err());
        assert_eq!(QuanTrCircuit::zeros(4, 0).unwrap().ops(), vec![]);
    }

    #[test]
    fn parse_program() {
        let text = "# bell\nQUBITS 2 RANK 4\n\nRY 0 pi/2  # rotate\nCNOT 0\nRZ 1 -0.5\n";
        let p = CircuitProgram::parse(text).unwrap();
        assert_eq!(p.qubits, 2);
        assert_eq!(p.rank, 4);
        assert_eq!(
            p.ops,
            vec![
                GateOp::Ry { qubit: 0, angle: PI / 2.0 },
                GateOp::Cnot { control: 0 },
                GateOp::Rz { qubit: 1, angle: -0.5 },
            ]
        );
        assert_eq!(CircuitProgram::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn angle_forms() {
        assert_eq!(parse_angle("pi"), Some(PI));
        assert_eq!(parse_angle("-pi/4"), Some(-PI / 4.0));
        assert_eq!(parse_angle("3*pi/2"), Some(3.0 * PI / 2.0));
        assert_eq!(parse_angle("1e-3"), Some(1e-3));
        assert_eq!(parse_angle("tau"), None);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = CircuitProgram::parse("QUBITS 2 RANK 2\nRY 0 0.1\nH 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = CircuitProgram::parse("RY 0 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = CircuitProgram::parse("QUBITS 2 RANK 2\nCNOT 5\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(CircuitProgram::parse("").is_err());
    }
}
