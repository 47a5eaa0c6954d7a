//! Dense contraction kernels.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{EinsumSpec, Label};
use crate::optimizer::path::ContractionPlan;
use crate::tensor::{strides, DenseTensor};

/// Matrices whose 1-norm condition estimate exceeds this are rejected.
pub const SINGULAR_CONDITION: f64 = 1e12;

const BLOCK: usize = 64;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major. This is the only place dense
/// multiplication happens; a tuned routine can replace it without touching
/// the callers.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i0 in (0..m).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(m);
        for p0 in (0..k).step_by(BLOCK) {
            let p1 = (p0 + BLOCK).min(k);
            for i in i0..i1 {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in p0..p1 {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (cj, &bj) in crow.iter_mut().zip(brow) {
                        *cj += aip * bj;
                    }
                }
            }
        }
    }
}

fn label_extents(t: &DenseTensor, labels: &[Label], ext: &mut HashMap<Label, usize>) -> Result<()> {
    if t.order() != labels.len() {
        return Err(Error::shape(format!(
            "tensor of shape {:?} given {} labels",
            t.shape(),
            labels.len()
        )));
    }
    for (&l, &e) in labels.iter().zip(t.shape()) {
        if let Some(&prev) = ext.get(&l) {
            if prev != e {
                return Err(Error::Inconsistent(format!(
                    "axis {l} has extents {prev} and {e}"
                )));
            }
        } else {
            ext.insert(l, e);
        }
    }
    Ok(())
}

/// Single-operand einsum: takes diagonals of repeated labels, sums labels
/// missing from `out` and permutes to `out` order.
pub fn unary(t: &DenseTensor, labels: &[Label], out: &[Label]) -> Result<DenseTensor> {
    let mut ext = HashMap::new();
    label_extents(t, labels, &mut ext)?;
    for l in out {
        if !ext.contains_key(l) {
            return Err(Error::einsum(format!("output axis {l} not in operand")));
        }
    }
    let distinct = {
        let mut u: Vec<Label> = Vec::new();
        for &l in labels {
            if !u.contains(&l) {
                u.push(l);
            }
        }
        u
    };
    if distinct.len() == labels.len() {
        if out == labels {
            return Ok(t.clone());
        }
        if out.len() == labels.len() {
            let perm: Vec<usize> = out
                .iter()
                .map(|l| labels.iter().position(|x| x == l).unwrap())
                .collect();
            return t.permute(&perm);
        }
    }
    let src_st = strides(t.shape());
    let out_shape: Vec<usize> = out.iter().map(|l| ext[l]).collect();
    let out_st = strides(&out_shape);
    // loop over distinct labels; outputs first keeps writes mostly sequential
    let mut order: Vec<Label> = out.to_vec();
    order.extend(distinct.iter().filter(|l| !out.contains(l)));
    let dims: Vec<usize> = order.iter().map(|l| ext[l]).collect();
    let sstep: Vec<usize> = order
        .iter()
        .map(|l| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, x)| *x == l)
                .map(|(p, _)| src_st[p])
                .sum()
        })
        .collect();
    let dstep: Vec<usize> = order
        .iter()
        .map(|l| out.iter().position(|x| x == l).map_or(0, |p| out_st[p]))
        .collect();
    let total: usize = dims.iter().product();
    let mut res = DenseTensor::zeros(&out_shape);
    let data = res.data_mut();
    let src = t.data();
    let mut idx = vec![0usize; dims.len()];
    let (mut so, mut doff) = (0usize, 0usize);
    for _ in 0..total {
        data[doff] += src[so];
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            so += sstep[k];
            doff += dstep[k];
            if idx[k] < dims[k] {
                break;
            }
            so -= sstep[k] * dims[k];
            doff -= dstep[k] * dims[k];
            idx[k] = 0;
        }
    }
    Ok(res)
}

/// Pairwise contraction by permuting both operands into
/// (batch, free, contracted) layouts and running batched matrix products.
pub fn contract_labels(
    a: &DenseTensor,
    la: &[Label],
    b: &DenseTensor,
    lb: &[Label],
    out: &[Label],
) -> Result<DenseTensor> {
    let mut ext = HashMap::new();
    label_extents(a, la, &mut ext)?;
    label_extents(b, lb, &mut ext)?;
    for l in out {
        if !ext.contains_key(l) {
            return Err(Error::einsum(format!("output axis {l} not in operands")));
        }
    }
    let in_a = |l: &Label| la.contains(l);
    let in_b = |l: &Label| lb.contains(l);
    let mut batch = Vec::new();
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &l in out {
        match (in_a(&l), in_b(&l)) {
            (true, true) => batch.push(l),
            (true, false) => left.push(l),
            (false, true) => right.push(l),
            (false, false) => unreachable!(),
        }
    }
    let mut contracted = Vec::new();
    for &l in la {
        if in_b(&l) && !out.contains(&l) && !contracted.contains(&l) {
            contracted.push(l);
        }
    }
    let cat = |parts: &[&[Label]]| parts.concat();
    let a2 = unary(a, la, &cat(&[&batch, &left, &contracted]))?;
    let b2 = unary(b, lb, &cat(&[&batch, &contracted, &right]))?;
    let size = |ls: &[Label]| ls.iter().map(|l| ext[l]).product::<usize>();
    let (nb, nl, nc, nr) = (size(&batch), size(&left), size(&contracted), size(&right));
    let c_labels = cat(&[&batch, &left, &right]);
    let c_shape: Vec<usize> = c_labels.iter().map(|l| ext[l]).collect();
    let mut c = DenseTensor::zeros(&c_shape);
    {
        let (ad, bd) = (a2.data(), b2.data());
        let cd = c.data_mut();
        for q in 0..nb {
            gemm(
                nl,
                nc,
                nr,
                &ad[q * nl * nc..(q + 1) * nl * nc],
                &bd[q * nc * nr..(q + 1) * nc * nr],
                &mut cd[q * nl * nr..(q + 1) * nl * nr],
            );
        }
    }
    unary(&c, &c_labels, out)
}

/// Two-operand einsum.
pub fn contract_pair(a: &DenseTensor, b: &DenseTensor, spec: &EinsumSpec) -> Result<DenseTensor> {
    if spec.arity() != 2 {
        return Err(Error::einsum(format!(
            "contract_pair needs a two-operand spec, got {spec}"
        )));
    }
    contract_labels(a, &spec.operands[0], b, &spec.operands[1], &spec.output)
}

/// Evaluates an einsum by following `plan`.
pub fn einsum(
    spec: &EinsumSpec,
    inputs: &[&DenseTensor],
    plan: &ContractionPlan,
) -> Result<DenseTensor> {
    if inputs.len() != spec.arity() {
        return Err(Error::einsum("operand count does not match spec"));
    }
    if spec.arity() == 1 {
        return unary(inputs[0], &spec.operands[0], &spec.output);
    }
    let n = inputs.len();
    let mut ssa: Vec<DenseTensor> = Vec::with_capacity(plan.steps.len());
    for (i, s) in plan.steps.iter().enumerate() {
        let r = {
            let get = |id: usize| -> (&DenseTensor, &[Label]) {
                if id < n {
                    (inputs[id], &spec.operands[id])
                } else {
                    (&ssa[id - n], &plan.steps[id - n].output)
                }
            };
            let (a, la) = get(s.lhs);
            let (b, lb) = get(s.rhs);
            let out = if i + 1 == plan.steps.len() {
                &spec.output
            } else {
                &s.output
            };
            contract_labels(a, la, b, lb, out)?
        };
        ssa.push(r);
    }
    ssa.pop()
        .ok_or_else(|| Error::einsum("empty plan for a multi-operand einsum"))
}

pub fn identity_tensor(extent: usize) -> DenseTensor {
    DenseTensor::identity(extent)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of the matricization with the first half of the axes as rows.
/// The result has the column extents followed by the row extents.
pub fn tensor_inverse(t: &DenseTensor) -> Result<DenseTensor> {
    let order = t.order();
    if order % 2 != 0 {
        return Err(Error::shape(format!("tensor inverse of odd order {order}")));
    }
    let (r, c) = t.matrix_dims(order / 2);
    if r != c {
        return Err(Error::shape(format!(
            "tensor inverse of a {r}x{c} matricization"
        )));
    }
    let m = DMatrix::from_row_slice(r, r, t.data());
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular(f64::INFINITY))?;
    let cond = norm1(&m) * norm1(&inv);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::Singular(cond));
    }
    let mut data = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            data.push(inv[(i, j)]);
        }
    }
    let mut shape = t.shape()[order / 2..].to_vec();
    shape.extend_from_slice(&t.shape()[..order / 2]);
    DenseTensor::new(shape, data)
}
