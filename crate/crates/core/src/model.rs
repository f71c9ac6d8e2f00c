//! MLP encoder with a linear softmax head. Parameters live in one flat vector
//! so aggregation is plain vector arithmetic.
//!
//! Layout, per layer in order (encoder layers, then the head): the weight
//! matrix row-major as `out x in`, followed by the `out` biases.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, softmax_into, Matrix};
use crate::rng::Rng;

/// Representations with a norm below this are left unnormalized.
pub const MIN_REPR_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub num_classes: usize,
    pub normalize_repr: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    input: usize,
    output: usize,
    offset: usize,
}

impl LayerShape {
    fn weights<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.offset..self.offset + self.input * self.output]
    }

    fn bias<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.input * self.output;
        &values[start..start + self.output]
    }

    fn len(&self) -> usize {
        self.input * self.output + self.output
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.repr_dim, self.num_classes];
        if dims.iter().chain(&self.hidden_dims).any(|&d| d == 0) {
            return Err(Error::config("model", "all layer dimensions must be >= 1"));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.repr_dim);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    input: w[0],
                    output: w[1],
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }

    /// Number of encoder layers (hidden layers plus the representation layer).
    pub fn encoder_depth(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::len).sum()
    }

    /// Index range of the classifier head within the flat parameter vector.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        let head = *self.layers().last().expect("at least one layer");
        head.offset..head.offset + head.len()
    }

    /// Single-line text form used in checkpoint headers.
    pub fn descriptor(&self) -> String {
        let hidden = self
            .hidden_dims
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "dccfssl-mlp v1 input={} hidden={} repr={} classes={} normalize={} params={}",
            self.input_dim,
            if hidden.is_empty() {
                "-".to_string()
            } else {
                hidden
            },
            self.repr_dim,
            self.num_classes,
            self.normalize_repr,
            self.param_count()
        )
    }

    pub fn parse_descriptor(line: &str) -> Result<(Self, usize)> {
        let bad = |reason: String| Error::Format {
            source_name: "checkpoint".into(),
            location: "header".into(),
            reason,
        };
        let mut parts = line.split_whitespace();
        if parts.next() != Some("dccfssl-mlp") || parts.next() != Some("v1") {
            return Err(bad(format!("unrecognized header `{line}`")));
        }
        let mut fields = std::collections::HashMap::new();
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed field `{part}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|e| bad(format!("bad `{k}`: {e}")))
        };
        let hidden_dims = match get("hidden")? {
            "-" => Vec::new(),
            list => list
                .split(',')
                .map(|d| {
                    d.parse()
                        .map_err(|e| bad(format!("bad hidden dim `{d}`: {e}")))
                })
                .collect::<Result<Vec<usize>>>()?,
        };
        let normalize_repr = get("normalize")?
            .parse()
            .map_err(|e| bad(format!("bad `normalize`: {e}")))?;
        let arch = Architecture {
            input_dim: num("input")?,
            hidden_dims,
            repr_dim: num("repr")?,
            num_classes: num("classes")?,
            normalize_repr,
        };
        arch.validate()?;
        Ok((arch, num("params")?))
    }
}

/// Encoder outputs, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprBatch(pub Matrix);

impl ReprBatch {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Flat parameter vector plus the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    arch: Architecture,
}

/// Cached intermediate values of a forward pass, consumed by [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct Forward {
    layer_inputs: Vec<Matrix>,
    pre_acts: Vec<Matrix>,
    raw_norms: Vec<f64>,
    pub repr: ReprBatch,
    pub logits: Matrix,
    pub probs: Matrix,
}

/// Loss gradients with respect to the forward outputs. Either may be absent.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    pub repr: Option<&'a Matrix>,
    pub logits: Option<&'a Matrix>,
}

fn affine(input: &Matrix, layer: &LayerShape, values: &[f64]) -> Matrix {
    let w = layer.weights(values);
    let b = layer.bias(values);
    let mut out = Matrix::zeros(input.rows(), layer.output);
    for r in 0..input.rows() {
        let x = input.row(r);
        let y = out.row_mut(r);
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = b[o] + dot(&w[o * layer.input..(o + 1) * layer.input], x);
        }
    }
    out
}

/// Accumulates weight/bias gradients of one affine layer into `grad` and
/// returns the gradient with respect to the layer input.
fn affine_backward(
    input: &Matrix,
    d_out: &Matrix,
    layer: &LayerShape,
    values: &[f64],
    grad: &mut [f64],
    need_input_grad: bool,
) -> Option<Matrix> {
    let w = layer.weights(values);
    let (gw, gb) =
        grad[layer.offset..layer.offset + layer.len()].split_at_mut(layer.input * layer.output);
    let mut d_in = need_input_grad.then(|| Matrix::zeros(input.rows(), layer.input));
    for r in 0..input.rows() {
        let x = input.row(r);
        let d = d_out.row(r);
        for (o, &g) in d.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let row = &mut gw[o * layer.input..(o + 1) * layer.input];
            for (gwi, &xi) in row.iter_mut().zip(x) {
                *gwi += g * xi;
            }
            if let Some(d_in) = d_in.as_mut() {
                let wrow = &w[o * layer.input..(o + 1) * layer.input];
                for (di, &wi) in d_in.row_mut(r).iter_mut().zip(wrow) {
                    *di += g * wi;
                }
            }
        }
    }
    d_in
}

impl ModelParams {
    /// Fan-in scaled uniform weights (variance 2 / fan_in), zero biases.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut values = vec![0.0; arch.param_count()];
        for layer in arch.layers() {
            let bound = (6.0 / layer.input as f64).sqrt();
            for v in &mut values[layer.offset..layer.offset + layer.input * layer.output] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { values, arch })
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters given, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::State(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, arch })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Returns `self - lr * grad`.
    pub fn sgd_step(&self, grad: &[f64], lr: f64) -> Result<Self> {
        if grad.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, model has {}",
                grad.len(),
                self.values.len()
            )));
        }
        if lr == 0.0 {
            return Ok(self.clone());
        }
        let values = self
            .values
            .iter()
            .zip(grad)
            .map(|(v, g)| v - lr * g)
            .collect();
        Ok(Self {
            values,
            arch: self.arch.clone(),
        })
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn encode(&self, batch: &Matrix) -> (Vec<Matrix>, Vec<Matrix>, Vec<f64>, ReprBatch) {
        let layers = self.arch.layers();
        let depth = self.arch.encoder_depth();
        let mut layer_inputs = Vec::with_capacity(depth);
        let mut pre_acts = Vec::with_capacity(depth);
        let mut current = batch.clone();
        for (i, layer) in layers[..depth].iter().enumerate() {
            let pre = affine(&current, layer, &self.values);
            let next = if i + 1 < depth {
                let mut act = pre.clone();
                act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                act
            } else {
                pre.clone()
            };
            layer_inputs.push(current);
            pre_acts.push(pre);
            current = next;
        }
        let mut norms = Vec::with_capacity(current.rows());
        if self.arch.normalize_repr {
            for r in 0..current.rows() {
                let row = current.row_mut(r);
                let n = crate::matrix::norm(row);
                if n >= MIN_REPR_NORM {
                    row.iter_mut().for_each(|v| *v /= n);
                }
                norms.push(n);
            }
        }
        (layer_inputs, pre_acts, norms, ReprBatch(current))
    }

    /// Encoder pass: rectified hidden layers, linear representation layer,
    /// then optional row normalization.
    pub fn forward_encoder(&self, batch: &Matrix) -> Result<ReprBatch> {
        self.check_input(batch)?;
        Ok(self.encode(batch).3)
    }

    fn head_logits(&self, reprs: &Matrix) -> Matrix {
        let head = *self.arch.layers().last().expect("head layer");
        affine(reprs, &head, &self.values)
    }

    /// Classifier head: affine map to class logits followed by softmax.
    pub fn forward_classifier(&self, reprs: &ReprBatch) -> Result<Matrix> {
        if reprs.dim() != self.arch.repr_dim {
            return Err(Error::Shape(format!(
                "representations have {} columns, head expects {}",
                reprs.dim(),
                self.arch.repr_dim
            )));
        }
        Ok(softmax_rows(&self.head_logits(reprs.matrix())))
    }

    /// Full pass keeping everything needed for [`ModelParams::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<Forward> {
        self.check_input(batch)?;
        let (layer_inputs, pre_acts, raw_norms, repr) = self.encode(batch);
        let logits = self.head_logits(repr.matrix());
        let probs = softmax_rows(&logits);
        Ok(Forward {
            layer_inputs,
            pre_acts,
            raw_norms,
            repr,
            logits,
            probs,
        })
    }

    /// Predicted class probabilities for raw inputs.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        let reprs = self.forward_encoder(batch)?;
        self.forward_classifier(&reprs)
    }

    /// Gradient of the loss with respect to every parameter, given the loss
    /// gradients with respect to the representations and/or the logits.
    pub fn backward(&self, fwd: &Forward, upstream: Upstream<'_>) -> Result<Vec<f64>> {
        let rows = fwd.repr.rows();
        let check = |m: &Matrix, cols: usize, what: &str| -> Result<()> {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Shape(format!(
                    "{what} gradient is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        let layers = self.arch.layers();
        let depth = self.arch.encoder_depth();
        let mut grad = vec![0.0; self.values.len()];

        let mut d_repr = match upstream.repr {
            Some(g) => {
                check(g, self.arch.repr_dim, "representation")?;
                g.clone()
            }
            None => Matrix::zeros(rows, self.arch.repr_dim),
        };
        if let Some(g) = upstream.logits {
            check(g, self.arch.num_classes, "logit")?;
            let d = affine_backward(
                fwd.repr.matrix(),
                g,
                &layers[depth],
                &self.values,
                &mut grad,
                true,
            )
            .expect("input gradient requested");
            d_repr.add_assign(&d)?;
        }

        // Row normalization: z = u / |u|, so du = (dz - z (z . dz)) / |u|.
        let mut d_current = d_repr;
        if self.arch.normalize_repr {
            for r in 0..rows {
                let n = fwd.raw_norms[r];
                if n < MIN_REPR_NORM {
                    continue;
                }
                let z = fwd.repr.row(r);
                let g = d_current.row_mut(r);
                let proj = dot(z, g);
                for (gi, &zi) in g.iter_mut().zip(z) {
                    *gi = (*gi - zi * proj) / n;
                }
            }
        }

        for i in (0..depth).rev() {
            if i + 1 < depth {
                // Rectifier mask of the hidden layer's pre-activation.
                let pre = &fwd.pre_acts[i];
                for (g, &p) in d_current.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let d_in = affine_backward(
                &fwd.layer_inputs[i],
                &d_current,
                &layers[i],
                &self.values,
                &mut grad,
                i > 0,
            );
            if let Some(d) = d_in {
                d_current = d;
            }
        }
        Ok(grad)
    }

    /// Writes the descriptor line followed by little-endian f64 values.
    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128 + 8 * self.values.len());
        writeln!(out, "{}", self.arch.descriptor()).expect("write to vec");
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            source_name: "checkpoint".into(),
            location: "body".into(),
            reason,
        };
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|e| bad(e.to_string()))?;
        let (arch, count) = Architecture::parse_descriptor(header)?;
        if count != arch.param_count() {
            return Err(bad(format!(
                "header declares {count} parameters, architecture needs {}",
                arch.param_count()
            )));
        }
        let body = &bytes[newline + 1..];
        if body.len() != 8 * count {
            return Err(bad(format!(
                "expected {} bytes of values, found {}",
                8 * count,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_values(arch, values)
    }
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), out.row_mut(r));
    }
    out
}
