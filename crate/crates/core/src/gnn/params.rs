use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the two-layer GCN. Gradients and updates share this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

/// Tensor names and shapes, in flattening order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        ModelParams {
            w0: Array2::zeros((input_dim, hidden)),
            b0: Array1::zeros(hidden),
            w1: Array2::zeros((hidden, classes)),
            b1: Array1::zeros(classes),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(input_dim, hidden, classes);
        let a0 = (6.0 / (input_dim + hidden) as f64).sqrt();
        p.w0.mapv_inplace(|_| rng.random_range(-a0..a0));
        let a1 = (6.0 / (hidden + classes) as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-a1..a1));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w1.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.num_classes())
    }

    pub fn shapes(&self) -> Vec<TensorShape> {
        let t = |name: &str, shape: &[usize]| TensorShape {
            name: name.to_string(),
            shape: shape.to_vec(),
        };
        vec![
            t("w0", self.w0.shape()),
            t("b0", self.b0.shape()),
            t("w1", self.w1.shape()),
            t("b1", self.b1.shape()),
        ]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w0.dim() == other.w0.dim()
            && self.b0.dim() == other.b0.dim()
            && self.w1.dim() == other.w1.dim()
            && self.b1.dim() == other.b1.dim()
    }

    pub fn num_values(&self) -> usize {
        self.w0.len() + self.b0.len() + self.w1.len() + self.b1.len()
    }

    /// All values in flattening order (w0, b0, w1, b1; row-major).
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w0
            .iter()
            .chain(self.b0.iter())
            .chain(self.w1.iter())
            .chain(self.b1.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w0
            .iter_mut()
            .chain(self.b0.iter_mut())
            .chain(self.w1.iter_mut())
            .chain(self.b1.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Rebuilds parameters with the shape of `self` from a flat vector.
    pub fn from_flat_like(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_values() {
            return Err(Error::Contract(format!(
                "expected {} values, got {}",
                self.num_values(),
                flat.len()
            )));
        }
        let mut out = self.zeros_like();
        for (dst, src) in out.values_mut().zip(flat) {
            *dst = *src;
        }
        Ok(out)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.values_mut() {
            *a *= factor;
        }
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|x| x.is_finite())
    }

    /// Checkpoint encoding: one JSON header line followed by the values as
    /// 64-bit little-endian floats in flattening order.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        encode_framed(
            &CheckpointHeader {
                format: CHECKPOINT_FORMAT.to_string(),
                tensors: self.shapes(),
            },
            self,
        )
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (CheckpointHeader, _) = split_framed(bytes)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Message(format!(
                "unexpected checkpoint format {:?}",
                header.format
            )));
        }
        decode_payload(&header.tensors, payload)
    }
}

pub(crate) const CHECKPOINT_FORMAT: &str = "boostfgl-params/1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    tensors: Vec<TensorShape>,
}

/// Header line + little-endian payload.
pub(crate) fn encode_framed<H: Serialize>(header: &H, params: &ModelParams) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out.reserve(params.num_values() * 8);
    for x in params.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn split_framed<H: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(H, &[u8])> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Message("missing header line".into()))?;
    let header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Message(format!("bad header: {e}")))?;
    Ok((header, &bytes[newline + 1..]))
}

pub(crate) fn decode_payload(tensors: &[TensorShape], payload: &[u8]) -> Result<ModelParams> {
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.shape.clone())
            .ok_or_else(|| Error::Message(format!("missing tensor {name}")))
    };
    let (w0, b0, w1, b1) = (find("w0")?, find("b0")?, find("w1")?, find("b1")?);
    let order: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    if order != ["w0", "b0", "w1", "b1"]
        || w0.len() != 2
        || w1.len() != 2
        || b0 != [w0[1]]
        || w1[0] != w0[1]
        || b1 != [w1[1]]
    {
        return Err(Error::Message("inconsistent tensor shapes".into()));
    }
    let template = ModelParams::zeros(w0[0], w0[1], w1[1]);
    if payload.len() != template.num_values() * 8 {
        return Err(Error::Message(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            template.num_values() * 8
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    template.from_flat_like(&flat)
}
