//! Small dense network for Q-value approximation: forward and backward
//! passes, Adam, squared TD losses, finite-difference checking and a
//! versioned binary checkpoint format.
//!
//! Parameters are stored flat, layer by layer: the weight matrix row-major
//! (`out x in`) followed by the bias vector.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Linear),
            2 => Ok(Activation::Softmax),
            _ => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input, hidden..., output.
    pub widths: Vec<usize>,
    /// One per layer (`widths.len() - 1`).
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// ReLU hidden layers with a linear Q-value head.
    pub fn q_network(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Linear);
        Self { widths, activations }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Shape("network needs at least one hidden layer".into()));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::Shape(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Shape("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Start of each layer's block in the flat parameter vector.
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_layers());
        let mut at = 0;
        for w in self.widths.windows(2) {
            out.push(at);
            at += w[0] * w[1] + w[1];
        }
        out
    }
}

/// A network specification with its flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `layers[0]` is the input; `layers[l + 1]` the output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// ReLU on/off pattern of every hidden unit.
    pub fn relu_mask(&self, spec: &MlpSpec) -> Vec<bool> {
        let mut mask = Vec::new();
        for (l, act) in spec.activations.iter().enumerate() {
            if *act == Activation::Relu {
                mask.extend(self.layers[l + 1].iter().map(|&x| x > 0.0));
            }
        }
        mask
    }
}

/// `C = A * B` (+ `C` when `accumulate`) on strided row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers sized for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_rows(x: &mut [f64], width: usize) {
    for row in x.chunks_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let offsets = spec.offsets();
        let params = vec![0.0; spec.num_params()];
        Ok(Self { spec, offsets, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                params.len()
            )));
        }
        let offsets = spec.offsets();
        Ok(Self { spec, offsets, params })
    }

    /// He-uniform weights, zero biases; the output layer is shrunk by
    /// `output_scale` so initial Q-values start near zero.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, output_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let last = net.spec.num_layers() - 1;
        for l in 0..net.spec.num_layers() {
            let (fan_in, fan_out) = (net.spec.widths[l], net.spec.widths[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let s = self.offsets[l];
        (&self.params[s..s + i * o], &self.params[s + i * o..s + i * o + o])
    }

    /// Forward pass over `batch` rows stored contiguously in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        let d = self.spec.input_dim();
        if batch == 0 || inputs.len() != batch * d {
            return Err(Error::Shape(format!(
                "input of length {} is not {batch} rows of width {d}",
                inputs.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.spec.widths.len());
        layers.push(inputs.to_vec());
        for l in 0..self.spec.num_layers() {
            let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let (w, b) = self.layer(l);
            let mut out = Vec::with_capacity(batch * o);
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            gemm(batch, i, o, &layers[l], i as isize, 1, w, 1, i as isize, &mut out, true);
            match self.spec.activations[l] {
                Activation::Relu => out.iter_mut().for_each(|x| *x = x.max(0.0)),
                Activation::Linear => {}
                Activation::Softmax => softmax_rows(&mut out, o),
            }
            layers.push(out);
        }
        Ok(ForwardCache { batch, layers })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_batch(input, 1)?;
        Ok(cache.layers.into_iter().last().unwrap())
    }

    /// Gradient of a scalar loss with respect to the parameters, given the
    /// loss gradient with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        let out_w = self.spec.output_dim();
        if grad_out.len() != batch * out_w {
            return Err(Error::Shape(format!(
                "output gradient of length {} for {batch} x {out_w}",
                grad_out.len()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = grad_out.to_vec();
        for l in (0..self.spec.num_layers()).rev() {
            let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let y = &cache.layers[l + 1];
            match self.spec.activations[l] {
                Activation::Relu => {
                    for (d, &v) in delta.iter_mut().zip(y) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Linear => {}
                Activation::Softmax => {
                    for (drow, srow) in delta.chunks_mut(o).zip(y.chunks(o)) {
                        let dot: f64 = drow.iter().zip(srow).map(|(a, b)| a * b).sum();
                        for (dv, sv) in drow.iter_mut().zip(srow) {
                            *dv = sv * (*dv - dot);
                        }
                    }
                }
            }
            let s = self.offsets[l];
            let x = &cache.layers[l];
            {
                let (gw, gb) = grads[s..s + i * o + o].split_at_mut(i * o);
                // dW = delta^T * x
                gemm(o, batch, i, &delta, 1, o as isize, x, i as isize, 1, gw, false);
                for row in delta.chunks(o) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut dx = vec![0.0; batch * i];
                gemm(batch, o, i, &delta, o as isize, 1, w, i as isize, 1, &mut dx, false);
                delta = dx;
            }
        }
        Ok(grads)
    }

    pub fn copy_from(&mut self, other: &Mlp) {
        self.params.copy_from_slice(&other.params);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state of {} for {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// States, chosen actions and regression targets of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    /// `len * input_dim` row-major.
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Mean squared TD error `(1/|d|) sum (Q(s,a) + Q_prev(s,a) - y)^2` and its
/// gradient with respect to `net`. The previous-step network is optional
/// and held fixed.
pub fn td_loss(net: &Mlp, prev: Option<&Mlp>, batch: &TdBatch) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} actions", batch.targets.len())));
    }
    let out_w = net.spec.output_dim();
    if let Some(&a) = batch.actions.iter().find(|&&a| a >= out_w) {
        return Err(Error::Shape(format!("action {a} outside output width {out_w}")));
    }
    let cache = net.forward_batch(&batch.states, n)?;
    let prev_out = match prev {
        Some(p) => Some(p.forward_batch(&batch.states, n)?.layers.pop().unwrap()),
        None => None,
    };
    let out = cache.output();
    let mut loss = 0.0;
    let mut grad_out = vec![0.0; n * out_w];
    for (k, (&a, &y)) in batch.actions.iter().zip(&batch.targets).enumerate() {
        let idx = k * out_w + a;
        let pred = out[idx] + prev_out.as_ref().map_or(0.0, |p| p[idx]);
        let err = pred - y;
        loss += err * err;
        grad_out[idx] = 2.0 * err / n as f64;
    }
    let grads = net.backward(&cache, &grad_out)?;
    Ok((loss / n as f64, grads))
}

/// Mean-network loss.
pub fn td_loss_mean(theta: &Mlp, theta_prev: Option<&Mlp>, batch: &TdBatch) -> Result<(f64, Vec<f64>)> {
    td_loss(theta, theta_prev, batch)
}

/// Uncertainty-network loss; same structure on the uncertainty parameters.
pub fn td_loss_uncertainty(phi: &Mlp, phi_prev: Option<&Mlp>, batch: &TdBatch) -> Result<(f64, Vec<f64>)> {
    td_loss(phi, phi_prev, batch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation changed the ReLU pattern.
    pub skipped: usize,
}

/// Compare analytic gradients with central differences on `coords`.
///
/// `loss` returns the loss and analytic gradient at the given network. A
/// coordinate is skipped when the `+h` or `-h` perturbation switches any
/// ReLU unit on the probe `inputs`, since the loss is not differentiable
/// across the kink.
pub fn finite_diff_check<F>(net: &Mlp, inputs: &[f64], batch: usize, coords: &[usize], h: f64, loss: F) -> Result<FdReport>
where
    F: Fn(&Mlp) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = loss(net)?;
    let base_mask = net.forward_batch(inputs, batch)?.relu_mask(&net.spec);
    let mut probe = net.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for &c in coords {
        if c >= net.params.len() {
            return Err(Error::Shape(format!("coordinate {c} outside {} params", net.params.len())));
        }
        let orig = net.params[c];
        probe.params[c] = orig + h;
        let mask_p = probe.forward_batch(inputs, batch)?.relu_mask(&net.spec);
        let (lp, _) = loss(&probe)?;
        probe.params[c] = orig - h;
        let mask_m = probe.forward_batch(inputs, batch)?.relu_mask(&net.spec);
        let (lm, _) = loss(&probe)?;
        probe.params[c] = orig;
        if mask_p != base_mask || mask_m != base_mask {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[c];
        let rel = (a - numeric).abs() / (a.abs() + 1e-8);
        // both vanish: absolute agreement is what matters
        let rel = if a.abs() < 1e-10 && numeric.abs() < 1e-10 { 0.0 } else { rel };
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

const MAGIC: &[u8; 8] = b"MECQNET\0";
const VERSION: u32 = 1;

/// Checkpoint layout, all little-endian:
/// magic (8 bytes), version u32, layer-width count u32, widths u64 each,
/// activation codes u8 each, parameter count u64, parameters f64 each,
/// Adam flag u8, then when set: lr, beta1, beta2, eps as f64, step u64,
/// first moments f64 each, second moments f64 each.
pub fn write_checkpoint<W: Write>(w: &mut W, net: &Mlp, adam: Option<&AdamState>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.spec.widths.len() as u32).to_le_bytes())?;
    for &x in &net.spec.widths {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    for a in &net.spec.activations {
        w.write_all(&[a.code()])?;
    }
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for p in &net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    match adam {
        None => w.write_all(&[0])?,
        Some(s) => {
            w.write_all(&[1])?;
            for x in [s.lr, s.beta1, s.beta2, s.eps] {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&s.t.to_le_bytes())?;
            for x in s.m.iter().chain(&s.v) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Mlp, Option<AdamState>)> {
    let magic: [u8; 8] = read_array(r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_widths = u32::from_le_bytes(read_array(r)?) as usize;
    if !(3..=64).contains(&n_widths) {
        return Err(Error::Checkpoint(format!("implausible layer count {n_widths}")));
    }
    let widths = (0..n_widths).map(|_| read_u64(r).map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
    let activations = (0..n_widths - 1)
        .map(|_| Activation::from_code(read_array::<1, _>(r)?[0]))
        .collect::<Result<Vec<_>>>()?;
    let spec = MlpSpec { widths, activations };
    spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = read_u64(r)? as usize;
    if n != spec.num_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match spec ({})",
            spec.num_params()
        )));
    }
    let params = read_f64s(r, n)?;
    let net = Mlp::from_params(spec, params)?;
    let adam = match read_array::<1, _>(r)?[0] {
        0 => None,
        1 => {
            let lr = read_f64(r)?;
            let beta1 = read_f64(r)?;
            let beta2 = read_f64(r)?;
            let eps = read_f64(r)?;
            let t = read_u64(r)?;
            let m = read_f64s(r, n)?;
            let v = read_f64s(r, n)?;
            Some(AdamState {
                m,
                v,
                lr,
                beta1,
                beta2,
                eps,
                t,
            })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    Ok((net, adam))
}
