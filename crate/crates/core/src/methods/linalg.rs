//! Small dense linear algebra used by the drivers: conjugate gradient,
//! Lanczos and nalgebra wrappers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::UniformStream;
use crate::tensor::DenseTensor;

#[derive(Clone, Debug)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` given by its
/// action, starting from zero. Stops when `‖r‖ ≤ tol·‖b‖`. On
/// non-convergence the iterate with the smallest residual is returned.
pub fn conjugate_gradient<F>(
    mut matvec: F,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgResult {
            x,
            iterations: 0,
            converged: true,
            residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (rr.sqrt(), x.clone());
    for it in 1..=max_iter {
        let ap = matvec(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() < best.0 {
            best = (rr_new.sqrt(), x.clone());
        }
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(CgResult {
                x,
                iterations: it,
                converged: true,
                residual: rr_new.sqrt() / bnorm,
            });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgResult {
        x: best.1,
        iterations: max_iter,
        converged: false,
        residual: best.0 / bnorm,
    })
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending. Ties keep index
/// order and each eigenvector's largest-magnitude entry is made positive.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let n = m.nrows();
    let mut vecs = DMatrix::zeros(n, idx.len());
    let mut vals = Vec::with_capacity(idx.len());
    for (c, &k) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v = -v;
        }
        vecs.set_column(c, &v);
        vals.push(eig.eigenvalues[k]);
    }
    (vals, vecs)
}

/// The `k` eigenvectors of the largest eigenvalues, as the columns of an
/// `n×k` matrix (largest first).
pub fn leading_eigenvectors(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (_, vecs) = sym_eigen(m);
    let n = vecs.ncols();
    let mut out = DMatrix::zeros(m.nrows(), k);
    for c in 0..k {
        out.set_column(c, &vecs.column(n - 1 - c));
    }
    out
}

/// Row-major tensor data viewed as a `rows × (len/rows)` matrix.
pub fn as_matrix(t: &DenseTensor, rows: usize) -> DMatrix<f64> {
    let cols = t.len() / rows;
    DMatrix::from_row_slice(rows, cols, t.data())
}

/// Matrix back to a tensor of the given shape (row-major).
pub fn from_matrix(m: &DMatrix<f64>, shape: &[usize]) -> Result<DenseTensor> {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// Thin QR: `m = q r` with `q` of orthonormal columns.
pub fn thin_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// `rows × cols` matrix with orthonormal columns from a random draw.
pub fn random_orthonormal(
    rows: usize,
    cols: usize,
    stream: &mut UniformStream,
) -> Result<DMatrix<f64>> {
    if cols > rows {
        return Err(Error::invalid(format!(
            "cannot fit {cols} orthonormal columns in dimension {rows}"
        )));
    }
    let m = DMatrix::from_row_slice(rows, cols, &stream.fill(rows * cols));
    Ok(thin_qr(&m).0)
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub matvecs: usize,
    pub restarts: usize,
}

/// Smallest eigenpair of a symmetric operator by Lanczos with full
/// reorthogonalization, restarted from the current Ritz vector until the
/// residual `‖Av − λv‖` drops below `tol`. A breakdown before convergence
/// restarts from a fresh random vector, at most three times.
pub fn lanczos_smallest<F>(
    mut matvec: F,
    start: &[f64],
    tol: f64,
    krylov: usize,
    stream: &mut UniformStream,
) -> Result<EigenResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = start.len();
    let m = krylov.clamp(1, n);
    let mut v0 = start.to_vec();
    let mut matvecs = 0;
    let mut restarts = 0;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut found: Option<(f64, Vec<f64>)> = None;
    for _outer in 0..100 {
        let nv = norm(&v0);
        if nv == 0.0 || !nv.is_finite() {
            v0 = stream.fill(n);
            continue;
        }
        let mut basis: Vec<Vec<f64>> = vec![v0.iter().map(|x| x / nv).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut broke = false;
        for j in 0..m {
            let mut w = matvec(&basis[j])?;
            matvecs += 1;
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            // full reorthogonalization, twice for stability
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(&w, q);
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= c * qi;
                    }
                }
            }
            if j + 1 == m {
                break;
            }
            let b = norm(&w);
            if b < 1e-12 * (1.0 + a.abs()) {
                broke = true;
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let k = alpha.len();
        let t = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (vals, vecs) = sym_eigen(&t);
        let theta = vals[0];
        let mut x = vec![0.0; n];
        for (c, q) in basis.iter().take(k).enumerate() {
            let y = vecs[(c, 0)];
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi += y * qi;
            }
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let ax = matvec(&x)?;
        matvecs += 1;
        let res = norm(
            &ax.iter()
                .zip(&x)
                .map(|(a, b)| a - theta * b)
                .collect::<Vec<_>>(),
        );
        let converged = res <= tol * (1.0 + theta.abs());
        if converged && found.as_ref().is_none_or(|f: &(f64, Vec<f64>)| theta < f.0) {
            found = Some((theta, x.clone()));
        }
        if best.as_ref().is_none_or(|b| res < b.2) {
            best = Some((theta, x.clone(), res));
        }
        if broke && k < n {
            // an invariant subspace need not hold the smallest eigenvalue
            if restarts == 3 {
                break;
            }
            restarts += 1;
            v0 = stream.fill(n);
            continue;
        }
        if converged {
            break;
        }
        v0 = x;
    }
    if let Some((value, vector)) = found {
        return Ok(EigenResult {
            value,
            vector,
            matvecs,
            restarts,
        });
    }
    let (value, vector, res) = best.expect("at least one Lanczos pass");
    Err(Error::Numerical(format!(
        "Lanczos did not converge: eigenvalue {value}, residual {res:.3e} after {matvecs} products ({} entries)",
        vector.len()
    )))
}
