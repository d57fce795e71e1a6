//! Forward and backward kernels for the fixed op set: linear, RMSNorm, ReLU,
//! and the ReGLU refiner block. The slice kernels work on `[n, d]` row blocks;
//! the `Tensor` wrappers validate shapes and are what callers outside the
//! crate use.

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_at, matmul_bt, Real, ReGluBlock, Tensor};

pub fn linear_fwd<T: Real>(x: &[T], n: usize, w: &[T], b: &[T], din: usize, dout: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(&b[..dout]);
    }
    matmul(x, w, &mut y, n, din, dout, T::one());
    y
}

/// Returns `dx`; accumulates into `dw` and `db`.
#[allow(clippy::too_many_arguments)]
pub fn linear_bwd<T: Real>(
    x: &[T],
    n: usize,
    w: &[T],
    dy: &[T],
    din: usize,
    dout: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    matmul_at(x, dy, dw, n, din, dout, T::one());
    for row in dy.chunks_exact(dout) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += *d;
        }
    }
    let mut dx = vec![T::zero(); n * din];
    matmul_bt(dy, w, &mut dx, n, dout, din, T::zero());
    dx
}

/// `y = gain ⊙ x / sqrt(mean(x²) + eps)` per row; also returns the per-row inverse RMS.
pub fn rmsnorm_fwd<T: Real>(x: &[T], d: usize, gain: &[T], eps: T) -> (Vec<T>, Vec<T>) {
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut y = Vec::with_capacity(x.len());
    let mut inv = Vec::with_capacity(x.len() / d);
    for row in x.chunks_exact(d) {
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) * inv_d;
        let r = T::one() / (ms + eps).sqrt();
        inv.push(r);
        y.extend(row.iter().zip(gain).map(|(&v, &g)| g * v * r));
    }
    (y, inv)
}

pub fn rmsnorm_bwd<T: Real>(
    x: &[T],
    d: usize,
    gain: &[T],
    inv_rms: &[T],
    dy: &[T],
    dgain: &mut [T],
) -> Vec<T> {
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut dx = Vec::with_capacity(x.len());
    for ((row, drow), &r) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(inv_rms) {
        let mut dot = T::zero();
        for i in 0..d {
            dot += drow[i] * gain[i] * row[i];
            dgain[i] += drow[i] * row[i] * r;
        }
        let k = r * r * r * inv_d * dot;
        dx.extend((0..d).map(|i| gain[i] * r * drow[i] - k * row[i]));
    }
    dx
}

pub(crate) fn check_finite<T: Real>(values: &[T], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {what} at index {pos}")));
    }
    Ok(())
}

fn trailing<T: Real>(t: &Tensor<T>, want: usize, what: &str) -> Result<usize> {
    let (n, d) = t.rows_cols();
    if d != want {
        return Err(Error::Dimension(format!(
            "{what}: trailing extent {d} of shape {:?} does not match {want}",
            t.shape()
        )));
    }
    Ok(n)
}

fn with_last<T: Real>(like: &Tensor<T>, last: usize, data: Vec<T>) -> Result<Tensor<T>> {
    let mut shape = like.shape().to_vec();
    *shape.last_mut().unwrap() = last;
    Tensor::new(shape, data)
}

/// `y = xW + b` for `x: [*, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
        return Err(Error::Dimension(format!(
            "weight {:?} and bias {:?} do not form a linear layer",
            w.shape(),
            b.shape()
        )));
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let n = trailing(x, din, &format!("linear input {:?} vs weight {:?}", x.shape(), w.shape()))?;
    with_last(x, dout, linear_fwd(x.data(), n, w.data(), b.data(), din, dout))
}

pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn linear_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let n = trailing(x, din, "linear backward input")?;
    if trailing(dy, dout, "linear backward upstream")? != n {
        return Err(Error::Dimension(format!(
            "upstream {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let mut dw = vec![T::zero(); din * dout];
    let mut db = vec![T::zero(); dout];
    let dx = linear_bwd(x.data(), n, w.data(), dy.data(), din, dout, &mut dw, &mut db);
    Ok(LinearGrads {
        dx: Tensor::new(x.shape().to_vec(), dx)?,
        dw: Tensor::new(vec![din, dout], dw)?,
        db: Tensor::new(vec![dout], db)?,
    })
}

pub fn rmsnorm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = gain.numel();
    trailing(x, d, "rmsnorm input")?;
    check_finite(x.data(), "rmsnorm input")?;
    let (y, _) = rmsnorm_fwd(x.data(), d, gain.data(), eps);
    check_finite(&y, "rmsnorm output")?;
    Tensor::new(x.shape().to_vec(), y)
}

/// Returns `(dx, dgain)`.
pub fn rmsnorm_backward<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    eps: T,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = gain.numel();
    trailing(x, d, "rmsnorm input")?;
    let (_, inv) = rmsnorm_fwd(x.data(), d, gain.data(), eps);
    let mut dgain = vec![T::zero(); d];
    let dx = rmsnorm_bwd(x.data(), d, gain.data(), &inv, dy.data(), &mut dgain);
    Ok((Tensor::new(x.shape().to_vec(), dx)?, Tensor::new(vec![d], dgain)?))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|&v| v.max(T::zero())).collect(),
    )
    .expect("same shape")
}

/// Applies one ReGLU block to every row of `x: [*, d]`.
pub fn reglu_block<T: Real>(x: &Tensor<T>, block: &ReGluBlock<T>) -> Result<Tensor<T>> {
    let n = trailing(x, block.width(), "reglu block input")?;
    Tensor::new(x.shape().to_vec(), block.forward(x.data(), n))
}

/// Mean over rows of the squared error; returns the loss and `d loss / d pred`.
pub fn l2_loss<T: Real>(pred: &[T], target: &[T], rows: usize) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if rows == 0 {
        return Ok((T::zero(), Vec::new()));
    }
    let inv_n = T::one() / T::from_usize(rows).unwrap();
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t;
            loss += r * r;
            two * r * inv_n
        })
        .collect();
    Ok((loss * inv_n, grad))
}

pub fn l2_loss_tensor<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let rows = if pred.shape().len() > 1 { pred.shape()[0] } else { pred.numel() };
    Ok(l2_loss(pred.data(), target.data(), rows)?.0)
}
