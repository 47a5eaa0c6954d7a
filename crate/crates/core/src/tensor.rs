//! Row-major dense `f64` tensors and their on-disk formats.
//!
//! Binary format: `order` as u64 LE, then `order` extents as u64 LE, then the
//! row-major payload as f64 LE.
//!
//! Text format: a first line `shape e1 e2 ...` (just `shape` for a scalar),
//! followed by whitespace-separated values in row-major order. Lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::UniformStream;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, shape);
        }
        t
    }

    /// Entries i.i.d. uniform in [-1, 1) drawn from `stream`.
    pub fn random(shape: &[usize], stream: &mut UniformStream) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: stream.fill(n),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| acc * e + i)
    }

    /// Value of an order-0 tensor (or of any single-element tensor).
    pub fn as_scalar(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// `out.shape[k] = self.shape[perm[k]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.order())?;
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let st = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; perm.len()];
        let mut off = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[off]);
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                off += src_strides[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                off -= src_strides[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        Ok(Self {
            shape: new_shape,
            data: out,
        })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise operation on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `y += c * x`.
    pub fn axpy(&mut self, c: f64, x: &Self) {
        assert_eq!(self.shape, x.shape);
        for (y, &v) in self.data.iter_mut().zip(&x.data) {
            *y += c * v;
        }
    }

    /// ‖self − reference‖ / ‖reference‖, or the absolute difference norm when
    /// the reference is zero.
    pub fn rel_error(&self, reference: &Self) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let r = reference.norm();
        if r == 0.0 {
            diff
        } else {
            diff / r
        }
    }

    /// Splits the axes at `rows` and returns (row count, column count).
    pub fn matrix_dims(&self, rows: usize) -> (usize, usize) {
        let r = self.shape[..rows].iter().product();
        let c = self.shape[rows..].iter().product();
        (r, c)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.shape.len() as u64).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let order = u64::from_le_bytes(buf) as usize;
        if order > 64 {
            return Err(Error::invalid(format!("implausible tensor order {order}")));
        }
        let mut shape = Vec::with_capacity(order);
        for _ in 0..order {
            r.read_exact(&mut buf)?;
            shape.push(u64::from_le_bytes(buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Self::new(shape, data)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("shape");
        for e in &self.shape {
            let _ = write!(s, " {e}");
        }
        s.push('\n');
        let row = self.shape.last().copied().unwrap_or(1);
        for chunk in self.data.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|x| format!("{x:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            message: "empty tensor text".into(),
        })?;
        let mut words = header.split_whitespace();
        if words.next() != Some("shape") {
            return Err(Error::Parse {
                line: hline + 1,
                column: 1,
                message: "expected `shape` header".into(),
            });
        }
        let shape = words
            .map(|w| w.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: hline + 1,
                column: 1,
                message: format!("bad extent: {e}"),
            })?;
        let mut data = Vec::new();
        for (ln, line) in lines {
            for w in line.split_whitespace() {
                let v = w.parse::<f64>().map_err(|_| Error::Parse {
                    line: ln + 1,
                    column: line.find(w).unwrap_or(0) + 1,
                    message: format!("bad number `{w}`"),
                })?;
                data.push(v);
            }
        }
        Self::new(shape, data)
    }

    /// Parses a JSON number or nested array literal such as `[[1, 2], [3, 4]]`.
    pub fn from_json_value(v: &serde_json::Value) -> Result<Self> {
        fn walk(
            v: &serde_json::Value,
            depth: usize,
            shape: &mut Vec<usize>,
            out: &mut Vec<f64>,
        ) -> Result<()> {
            match v {
                serde_json::Value::Number(n) => {
                    if depth != shape.len() {
                        return Err(Error::shape("ragged nested array"));
                    }
                    out.push(n.as_f64().unwrap_or(f64::NAN));
                    Ok(())
                }
                serde_json::Value::Array(items) => {
                    if depth == shape.len() {
                        if !out.is_empty() {
                            return Err(Error::shape("ragged nested array"));
                        }
                        shape.push(items.len());
                    } else if depth > shape.len() || shape[depth] != items.len() {
                        return Err(Error::shape("ragged nested array"));
                    }
                    for item in items {
                        walk(item, depth + 1, shape, out)?;
                    }
                    Ok(())
                }
                other => Err(Error::invalid(format!(
                    "expected number or array, got {other}"
                ))),
            }
        }
        let mut shape = Vec::new();
        let mut data = Vec::new();
        walk(v, 0, &mut shape, &mut data)?;
        Self::new(shape, data)
    }
}

pub(crate) fn check_perm(perm: &[usize], order: usize) -> Result<()> {
    let mut seen = vec![false; order];
    if perm.len() != order {
        return Err(Error::shape(format!(
            "permutation {perm:?} for order {order}"
        )));
    }
    for &p in perm {
        if p >= order || seen[p] {
            return Err(Error::shape(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Advances a row-major multi-index; returns false after wrapping around.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}
