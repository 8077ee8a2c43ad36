//! Matrix product operator layers.
//!
//! A weight matrix of shape `prod(out) x prod(in)` is stored as a chain of
//! site tensors with axes `(left-bond, in, out, right-bond)`. Neighbouring
//! sites can be merged into a bond tensor, updated by gradient descent and
//! split again with a truncated SVD; a left-to-right then right-to-left pass
//! of these local updates is a DMRG-style sweep.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{scale_columns, svd};
use crate::tensor::DenseTensor;

/// Relative threshold below which singular values are dropped on split.
const DROP_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MpoWeight {
    sites: Vec<DenseTensor>,
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    max_bond: usize,
}

/// Two neighbouring sites contracted over their shared bond, with axes
/// `(left, in_j, out_j, in_{j+1}, out_{j+1}, right)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BondTensor {
    pub site: usize,
    pub tensor: DenseTensor,
}

impl MpoWeight {
    pub fn new(sites: Vec<DenseTensor>, max_bond: usize) -> Result<Self> {
        if max_bond < 1 {
            return invalid("max-bond must be at least 1");
        }
        if sites.is_empty() {
            return invalid("an MPO needs at least one site");
        }
        let n = sites.len();
        let mut in_dims = Vec::with_capacity(n);
        let mut out_dims = Vec::with_capacity(n);
        for (k, s) in sites.iter().enumerate() {
            let &[l, i, o, r] = s.shape() else {
                return Err(Error::ShapeMismatch(format!(
                    "site {k} must have 4 axes, has shape {:?}",
                    s.shape()
                )));
            };
            if k == 0 && l != 1 {
                return Err(Error::ShapeMismatch("left boundary bond must be 1".into()));
            }
            if k == n - 1 && r != 1 {
                return Err(Error::ShapeMismatch("right boundary bond must be 1".into()));
            }
            if k > 0 && sites[k - 1].shape()[3] != l {
                return Err(Error::ShapeMismatch(format!(
                    "bond between sites {} and {k} disagrees",
                    k - 1
                )));
            }
            in_dims.push(i);
            out_dims.push(o);
        }
        Ok(MpoWeight {
            sites,
            in_dims,
            out_dims,
            max_bond,
        })
    }

    /// Factorizes `w` (`prod(out_dims) x prod(in_dims)`) left to right with
    /// successive truncated SVDs, absorbing singular values rightward.
    pub fn from_matrix(
        w: &DenseTensor,
        in_dims: &[usize],
        out_dims: &[usize],
        max_bond: usize,
    ) -> Result<Self> {
        let (rows, cols) = w.dims2()?;
        if max_bond < 1 {
            return invalid("max-bond must be at least 1");
        }
        let n = in_dims.len();
        if n < 2 || out_dims.len() != n {
            return invalid("in-dims and out-dims must have equal length of at least 2");
        }
        if rows != out_dims.iter().product::<usize>() || cols != in_dims.iter().product::<usize>()
        {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix does not match out-dims {out_dims:?} / in-dims {in_dims:?}"
            )));
        }
        // (o_0..o_{n-1}, i_0..i_{n-1}) -> (i_0, o_0, i_1, o_1, ...)
        let mut extents = out_dims.to_vec();
        extents.extend_from_slice(in_dims);
        let mut order = Vec::with_capacity(2 * n);
        for k in 0..n {
            order.push(n + k);
            order.push(k);
        }
        let mut rest = w.reshape(&extents)?.permute(&order)?;
        let mut sites = Vec::with_capacity(n);
        let mut bond = 1;
        for k in 0..n - 1 {
            let local = bond * in_dims[k] * out_dims[k];
            let m = rest.into_reshape(&[local, rest_len(&in_dims[k + 1..], &out_dims[k + 1..])])?;
            let f = svd(&m, Some(max_bond))?;
            let keep = significant(&f.s);
            let u = column_prefix(&f.u, keep);
            sites.push(u.into_reshape(&[bond, in_dims[k], out_dims[k], keep])?);
            let sv = f.s[..keep].to_vec();
            rest = crate::linalg::scale_rows(&row_prefix(&f.vt, keep), &sv);
            bond = keep;
        }
        sites.push(rest.into_reshape(&[bond, in_dims[n - 1], out_dims[n - 1], 1])?);
        MpoWeight::new(sites, max_bond)
    }

    /// Sites filled with zero-mean Gaussians, standard deviation
    /// `1/sqrt(in_k * left_bond_k)`, so entries of the represented matrix
    /// have variance `1/prod(in_dims)`. Bonds start at their cap.
    pub fn random(
        in_dims: &[usize],
        out_dims: &[usize],
        max_bond: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n = in_dims.len();
        if n == 0 || out_dims.len() != n {
            return invalid("in-dims and out-dims must have equal, nonzero length");
        }
        if max_bond < 1 {
            return invalid("max-bond must be at least 1");
        }
        let local: Vec<usize> = in_dims.iter().zip(out_dims).map(|(a, b)| a * b).collect();
        let mut bonds = vec![1usize; n + 1];
        for k in 1..n {
            let left: usize = local[..k].iter().product();
            let right: usize = local[k..].iter().product();
            bonds[k] = max_bond.min(left).min(right);
        }
        let sites = (0..n)
            .map(|k| {
                let std = 1.0 / ((in_dims[k] * bonds[k]) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                DenseTensor::from_fn(&[bonds[k], in_dims[k], out_dims[k], bonds[k + 1]], |_| {
                    normal.sample(rng)
                })
            })
            .collect();
        MpoWeight::new(sites, max_bond)
    }

    /// Site-wise identity with unit bonds.
    pub fn identity(dims: &[usize], max_bond: usize) -> Result<Self> {
        let sites = dims
            .iter()
            .map(|&d| DenseTensor::identity(d).into_reshape(&[1, d, d, 1]))
            .collect::<Result<Vec<_>>>()?;
        MpoWeight::new(sites, max_bond)
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn max_bond(&self) -> usize {
        self.max_bond
    }

    pub fn in_width(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_width(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Internal bond extents, one per neighbouring pair.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites[..self.sites.len() - 1]
            .iter()
            .map(|s| s.shape()[3])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.sites.iter().map(|s| s.len()).sum()
    }

    /// Dense `out_width x in_width` matrix represented by the chain.
    pub fn to_matrix(&self) -> Result<DenseTensor> {
        let n = self.sites.len();
        // accumulated axes: (1, i_0, o_0, ..., i_k, o_k, bond)
        let mut acc = self.sites[0].clone();
        for site in &self.sites[1..] {
            let r = acc.rank();
            acc = acc.contract(site, &[(r - 1, 0)])?;
        }
        let mut extents = Vec::with_capacity(2 * n);
        for k in 0..n {
            extents.push(self.in_dims[k]);
            extents.push(self.out_dims[k]);
        }
        let acc = acc.into_reshape(&extents)?;
        let mut order: Vec<usize> = (0..n).map(|k| 2 * k + 1).collect();
        order.extend((0..n).map(|k| 2 * k));
        acc.permute(&order)?
            .into_reshape(&[self.out_width(), self.in_width()])
    }

    /// Linear map `W x`, contracted site by site without forming `W`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_width() {
            return Err(Error::ShapeMismatch(format!(
                "input of width {} fed to an MPO expecting {}",
                x.len(),
                self.in_width()
            )));
        }
        let n = self.sites.len();
        let mut extents = vec![1];
        extents.extend_from_slice(&self.in_dims);
        // axes: (o_0..o_{k-1}, bond, i_k..i_{n-1})
        let mut state = DenseTensor::new(&extents, x.to_vec())?;
        for (k, site) in self.sites.iter().enumerate() {
            let next = state.contract(site, &[(k, 0), (k + 1, 1)])?;
            let rest = n - k - 1;
            let mut order: Vec<usize> = (0..k).collect();
            order.push(k + rest);
            order.push(k + rest + 1);
            order.extend(k..k + rest);
            state = next.permute(&order)?;
        }
        Ok(state.into_data())
    }

    pub fn merge_bond(&self, j: usize) -> Result<BondTensor> {
        if j + 1 >= self.sites.len() {
            return Err(Error::InvalidArgument(format!(
                "bond {j} out of range for {} sites",
                self.sites.len()
            )));
        }
        let tensor = self.sites[j].contract(&self.sites[j + 1], &[(3, 0)])?;
        Ok(BondTensor { site: j, tensor })
    }

    /// Replaces sites `j, j+1` with the split of `bond`.
    pub fn with_bond(&self, bond: &BondTensor) -> Result<(Self, f64)> {
        let (left, right, err) = bond.split(self.max_bond)?;
        let j = bond.site;
        if j + 1 >= self.sites.len()
            || left.shape()[0] != self.sites[j].shape()[0]
            || right.shape()[3] != self.sites[j + 1].shape()[3]
        {
            return Err(Error::ShapeMismatch(format!(
                "bond tensor does not fit sites {j}, {}",
                j + 1
            )));
        }
        let mut sites = self.sites.clone();
        sites[j] = left;
        sites[j + 1] = right;
        Ok((MpoWeight::new(sites, self.max_bond)?, err))
    }
}

fn rest_len(ins: &[usize], outs: &[usize]) -> usize {
    ins.iter().product::<usize>() * outs.iter().product::<usize>()
}

/// Number of singular values worth keeping: those above a relative floor,
/// never fewer than one.
fn significant(s: &[f64]) -> usize {
    let floor = s.first().copied().unwrap_or(0.0) * DROP_TOL;
    s.iter().filter(|&&x| x > floor).count().max(1)
}

fn column_prefix(m: &DenseTensor, k: usize) -> DenseTensor {
    let (rows, cols) = m.dims2().expect("matrix");
    DenseTensor::from_fn(&[rows, k], |ix| m.data()[ix[0] * cols + ix[1]])
}

fn row_prefix(m: &DenseTensor, k: usize) -> DenseTensor {
    let (_, cols) = m.dims2().expect("matrix");
    DenseTensor::new(&[k, cols], m.data()[..k * cols].to_vec()).expect("prefix")
}

impl BondTensor {
    /// SVD across `(left, in_j, out_j | in_{j+1}, out_{j+1}, right)`, keeping at
    /// most `max_bond` values and absorbing them into the left site. Returns
    /// the two sites and the root-sum-square of everything discarded.
    pub fn split(&self, max_bond: usize) -> Result<(DenseTensor, DenseTensor, f64)> {
        if max_bond < 1 {
            return invalid("max-bond must be at least 1");
        }
        let &[l, i0, o0, i1, o1, r] = self.tensor.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "bond tensor must have 6 axes, has {:?}",
                self.tensor.shape()
            )));
        };
        let m = self.tensor.reshape(&[l * i0 * o0, i1 * o1 * r])?;
        let f = svd(&m, Some(max_bond))?;
        let keep = significant(&f.s);
        let dropped: f64 = f.s[keep..].iter().map(|x| x * x).sum();
        let err = (f.truncation_error.powi(2) + dropped).sqrt();
        let left = scale_columns(&column_prefix(&f.u, keep), &f.s[..keep])
            .into_reshape(&[l, i0, o0, keep])?;
        let right = row_prefix(&f.vt, keep).into_reshape(&[keep, i1, o1, r])?;
        Ok((left, right, err))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = activation(W x + bias)` with `W` held as an MPO.
#[derive(Clone, Debug, PartialEq)]
pub struct TnLayer {
    pub weight: MpoWeight,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl TnLayer {
    pub fn new(weight: MpoWeight, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.out_width() {
            return Err(Error::ShapeMismatch(format!(
                "bias of length {} for output width {}",
                bias.len(),
                weight.out_width()
            )));
        }
        Ok(TnLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weight.apply(x)?;
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        Ok(z)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .pre_activation(x)?
            .into_iter()
            .map(|z| self.activation.apply(z))
            .collect())
    }

    pub fn param_count(&self) -> usize {
        self.weight.param_count() + self.bias.len()
    }
}

/// Contraction of the input `x`, the output cotangent and every site except
/// the pair `(j, j+1)`. Shaped like the bond tensor at `j`; its inner product
/// with that bond tensor equals `cotangent . (W x)`.
pub fn bond_environment(
    weight: &MpoWeight,
    j: usize,
    x: &[f64],
    cotangent: &[f64],
) -> Result<DenseTensor> {
    let n = weight.site_count();
    if j + 1 >= n {
        return Err(Error::InvalidArgument(format!("bond {j} out of range for {n} sites")));
    }
    if x.len() != weight.in_width() || cotangent.len() != weight.out_width() {
        return Err(Error::ShapeMismatch(format!(
            "environment needs input width {} and output width {}",
            weight.in_width(),
            weight.out_width()
        )));
    }
    let mut extents = vec![1];
    extents.extend_from_slice(weight.in_dims());
    extents.extend_from_slice(weight.out_dims());
    extents.push(1);
    let mut data = Vec::with_capacity(x.len() * cotangent.len());
    for &xi in x {
        data.extend(cotangent.iter().map(|&g| xi * g));
    }
    // axes: (lbond, i_lo..i_hi, o_lo..o_hi, rbond)
    let mut p = DenseTensor::new(&extents, data)?;
    let mut count = n;
    for site in &weight.sites()[..j] {
        p = site.contract(&p, &[(0, 0), (1, 1), (2, 1 + count)])?;
        count -= 1;
    }
    for site in weight.sites()[j + 2..].iter().rev() {
        let r = p.rank();
        p = p.contract(site, &[(count, 1), (2 * count, 2), (r - 1, 3)])?;
        count -= 1;
    }
    debug_assert_eq!(count, 2);
    p.permute(&[0, 1, 3, 2, 4, 5])
}

/// Weighted sum of per-sample (or per-output) environments:
/// `dL/dB = sum_s residual_s * env_s`.
pub fn bond_gradient(envs: &[DenseTensor], residuals: &[f64]) -> Result<DenseTensor> {
    if envs.is_empty() || envs.len() != residuals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} environments for {} residuals",
            envs.len(),
            residuals.len()
        )));
    }
    let mut acc = DenseTensor::zeros(envs[0].shape());
    for (env, &r) in envs.iter().zip(residuals) {
        acc = acc.zip_with(env, |a, e| a + r * e)?;
    }
    Ok(acc)
}

/// Per-sample objective seen by a sweep.
pub trait SweepObjective {
    /// Loss of sample `sample` given the layer output.
    fn loss(&self, sample: usize, output: &[f64]) -> f64;
    /// Derivative of that loss with respect to the layer output.
    fn gradient(&self, sample: usize, output: &[f64]) -> Vec<f64>;
}

/// Mean objective over a batch.
pub fn batch_loss(layer: &TnLayer, inputs: &[Vec<f64>], objective: &impl SweepObjective) -> Result<f64> {
    let mut total = 0.0;
    for (s, x) in inputs.iter().enumerate() {
        total += objective.loss(s, &layer.forward(x)?);
    }
    Ok(total / inputs.len() as f64)
}

/// Upstream gradients w.r.t. the pre-activations, one vector per sample.
fn pre_activation_grads(
    layer: &TnLayer,
    inputs: &[Vec<f64>],
    objective: &impl SweepObjective,
) -> Result<Vec<Vec<f64>>> {
    inputs
        .iter()
        .enumerate()
        .map(|(s, x)| {
            let z = layer.pre_activation(x)?;
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let g = objective.gradient(s, &y);
            Ok(g.iter()
                .zip(&z)
                .map(|(&gi, &zi)| gi * layer.activation.derivative(zi))
                .collect())
        })
        .collect()
}

/// Gradient of the mean batch objective with respect to bond `j`.
pub fn batch_bond_gradient(
    layer: &TnLayer,
    j: usize,
    inputs: &[Vec<f64>],
    objective: &impl SweepObjective,
) -> Result<DenseTensor> {
    let grads = pre_activation_grads(layer, inputs, objective)?;
    let scale = 1.0 / inputs.len() as f64;
    let mut acc: Option<DenseTensor> = None;
    for (x, g) in inputs.iter().zip(&grads) {
        let env = bond_environment(&layer.weight, j, x, g)?;
        acc = Some(match acc {
            None => env.scale(scale),
            Some(a) => a.zip_with(&env, |p, e| p + scale * e)?,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty batch".into()))
}

/// One DMRG-style sweep: bonds `0..n-1` left to right, then back. Each step
/// merges the pair, takes a gradient step of size `gamma`, and re-splits
/// under the bond cap. The bias takes one gradient step before the sweep.
pub fn dmrg_sweep(
    layer: &TnLayer,
    inputs: &[Vec<f64>],
    objective: &impl SweepObjective,
    gamma: f64,
) -> Result<TnLayer> {
    if inputs.is_empty() {
        return invalid("sweep needs a nonempty batch");
    }
    let mut layer = layer.clone();
    if gamma == 0.0 {
        // gauge-only pass: the represented matrix is unchanged
        let n = layer.weight.site_count();
        for j in sweep_order(n) {
            let b = layer.weight.merge_bond(j)?;
            layer.weight = layer.weight.with_bond(&b)?.0;
        }
        return Ok(layer);
    }

    let grads = pre_activation_grads(&layer, inputs, objective)?;
    let scale = gamma / inputs.len() as f64;
    for g in &grads {
        for (b, gi) in layer.bias.iter_mut().zip(g) {
            *b -= scale * gi;
        }
    }
    let n = layer.weight.site_count();
    for j in sweep_order(n) {
        let grad = batch_bond_gradient(&layer, j, inputs, objective)?;
        let mut b = layer.weight.merge_bond(j)?;
        b.tensor = b.tensor.zip_with(&grad, |w, g| w - gamma * g)?;
        layer.weight = layer.weight.with_bond(&b)?.0;
    }
    Ok(layer)
}

fn sweep_order(n: usize) -> impl Iterator<Item = usize> {
    let bonds = n.saturating_sub(1);
    (0..bonds).chain((0..bonds).rev())
}
