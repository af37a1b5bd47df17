//! Forward passes and exact analytic backward passes for the handful of
//! operations the client models are composed of: affine map, ReLU, sigmoid,
//! layer normalization, elementwise combine, dot product.
//!
//! Each backward pass takes the cached values its forward pass produced, so a
//! stale or missing cache is unrepresentable.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Scalar, Vector};

/// `W x + b`.
pub fn affine_forward<T: Scalar>(
    w: &Matrix<T>,
    b: &Vector<T>,
    x: &Vector<T>,
) -> Result<Vector<T>> {
    if b.len() != w.rows() {
        return Err(Error::shape("affine_forward bias", w.rows(), b.len()));
    }
    let mut out = w.matvec(x)?;
    for (o, &bv) in out.as_mut_slice().iter_mut().zip(b.iter()) {
        *o += bv;
    }
    Ok(out)
}

/// Gradients of an affine map for an upstream gradient `g`:
/// `dW = g x^T`, `db = g`, `dx = W^T g`.
pub struct AffineGrads<T> {
    pub d_w: Matrix<T>,
    pub d_b: Vector<T>,
    pub d_x: Vector<T>,
}

pub fn affine_backward<T: Scalar>(
    w: &Matrix<T>,
    x: &Vector<T>,
    grad_out: &Vector<T>,
) -> Result<AffineGrads<T>> {
    if grad_out.len() != w.rows() {
        return Err(Error::shape("affine_backward", w.rows(), grad_out.len()));
    }
    let mut d_w = Matrix::zeros(w.rows(), w.cols());
    d_w.add_outer(T::one(), grad_out, x)?;
    Ok(AffineGrads {
        d_w,
        d_b: grad_out.clone(),
        d_x: w.matvec_t(grad_out)?,
    })
}

pub fn relu<T: Scalar>(x: &Vector<T>) -> Vector<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward through ReLU given the pre-activation input. The subgradient at
/// exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(pre: &Vector<T>, grad_out: &Vector<T>) -> Result<Vector<T>> {
    if pre.len() != grad_out.len() {
        return Err(Error::shape("relu_backward", pre.len(), grad_out.len()));
    }
    Ok(Vector::from_vec(
        pre.iter()
            .zip(grad_out.iter())
            .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
            .collect(),
    ))
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_vec<T: Scalar>(x: &Vector<T>) -> Vector<T> {
    x.map(sigmoid)
}

/// Backward through sigmoid given the forward output `y = sigmoid(x)`:
/// `dx = y (1 - y) g`.
pub fn sigmoid_backward<T: Scalar>(y: &Vector<T>, grad_out: &Vector<T>) -> Result<Vector<T>> {
    if y.len() != grad_out.len() {
        return Err(Error::shape("sigmoid_backward", y.len(), grad_out.len()));
    }
    Ok(Vector::from_vec(
        y.iter()
            .zip(grad_out.iter())
            .map(|(&yv, &g)| yv * (T::one() - yv) * g)
            .collect(),
    ))
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Cached values produced by [`layer_norm_forward`]; required by the
/// backward pass.
pub struct LayerNormCache<T> {
    /// Normalized input before the affine transform.
    pub x_hat: Vector<T>,
    /// `1 / sqrt(var + eps)`.
    pub inv_std: T,
}

/// Layer normalization with population (1/d) variance:
/// `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn layer_norm_forward<T: Scalar>(
    x: &Vector<T>,
    gamma: &Vector<T>,
    beta: &Vector<T>,
    eps: T,
) -> Result<(Vector<T>, LayerNormCache<T>)> {
    let d = x.len();
    if d < 2 {
        return Err(Error::invalid(format!(
            "layer_norm requires dimension >= 2, got {d}"
        )));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(
            "layer_norm affine",
            d,
            format!("gamma {} beta {}", gamma.len(), beta.len()),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    let mean = x.mean();
    let dn = T::from_f64_c(d as f64);
    let var = x
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
        / dn;
    let inv_std = T::one() / (var + eps).sqrt();
    let x_hat = x.map(|v| (v - mean) * inv_std);
    let out = Vector::from_vec(
        x_hat
            .iter()
            .zip(gamma.iter())
            .zip(beta.iter())
            .map(|((&xh, &g), &b)| g * xh + b)
            .collect(),
    );
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

pub fn layer_norm<T: Scalar>(
    x: &Vector<T>,
    gamma: &Vector<T>,
    beta: &Vector<T>,
    eps: T,
) -> Result<Vector<T>> {
    Ok(layer_norm_forward(x, gamma, beta, eps)?.0)
}

pub struct LayerNormGrads<T> {
    pub d_x: Vector<T>,
    pub d_gamma: Vector<T>,
    pub d_beta: Vector<T>,
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Vector<T>,
    grad_out: &Vector<T>,
) -> Result<LayerNormGrads<T>> {
    let d = cache.x_hat.len();
    if gamma.len() != d || grad_out.len() != d {
        return Err(Error::shape("layer_norm_backward", d, grad_out.len()));
    }
    let d_gamma = grad_out.mul(&cache.x_hat)?;
    let d_beta = grad_out.clone();
    let g_hat = grad_out.mul(gamma)?;
    let mean_g = g_hat.mean();
    let mean_g_x = g_hat.dot(&cache.x_hat)? / T::from_f64_c(d as f64);
    let d_x = Vector::from_vec(
        g_hat
            .iter()
            .zip(cache.x_hat.iter())
            .map(|(&g, &xh)| cache.inv_std * (g - mean_g - xh * mean_g_x))
            .collect(),
    );
    Ok(LayerNormGrads {
        d_x,
        d_gamma,
        d_beta,
    })
}
