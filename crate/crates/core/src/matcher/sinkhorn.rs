use nalgebra::{DMatrix, DVector};

use crate::scalar::{log_sum_exp, Real};

/// Score matrix augmented with a dustbin row and column, plus the log
/// marginals: real rows and columns carry mass 1, the dustbin row carries
/// `m` and the dustbin column `n`.
pub(crate) fn augment<T: Real>(s: &DMatrix<T>, dustbin: T) -> (DMatrix<T>, DVector<T>, DVector<T>) {
    let (n, m) = s.shape();
    let mut z = DMatrix::from_element(n + 1, m + 1, dustbin);
    z.view_mut((0, 0), (n, m)).copy_from(s);
    let mut log_mu = DVector::zeros(n + 1);
    let mut log_nu = DVector::zeros(m + 1);
    log_mu[n] = T::lit(m.max(1) as f64).ln();
    log_nu[m] = T::lit(n.max(1) as f64).ln();
    (z, log_mu, log_nu)
}

/// Log-domain potentials after every iteration, for backpropagation.
pub(crate) struct SinkhornTrace<T: Real> {
    pub z: DMatrix<T>,
    /// `us[t]`, `vs[t]` are the potentials after iteration `t + 1`.
    pub us: Vec<DVector<T>>,
    pub vs: Vec<DVector<T>>,
}

impl<T: Real> SinkhornTrace<T> {
    pub fn log_assignment(&self) -> DMatrix<T> {
        let (u, v) = (self.us.last().unwrap(), self.vs.last().unwrap());
        DMatrix::from_fn(self.z.nrows(), self.z.ncols(), |i, j| self.z[(i, j)] + u[i] + v[j])
    }
}

pub(crate) fn sinkhorn_trace<T: Real>(s: &DMatrix<T>, iters: usize, dustbin: T) -> SinkhornTrace<T> {
    let (z, log_mu, log_nu) = augment(s, dustbin);
    let (r, c) = z.shape();
    let mut v = DVector::zeros(c);
    let mut us = Vec::with_capacity(iters);
    let mut vs = Vec::with_capacity(iters);
    for _ in 0..iters.max(1) {
        let u = DVector::from_fn(r, |i, _| log_mu[i] - log_sum_exp((0..c).map(|j| z[(i, j)] + v[j])));
        v = DVector::from_fn(c, |j, _| log_nu[j] - log_sum_exp((0..r).map(|i| z[(i, j)] + u[i])));
        us.push(u);
        vs.push(v.clone());
    }
    SinkhornTrace { z, us, vs }
}

/// Log-domain Sinkhorn with a dustbin; returns the `(n+1) × (m+1)`
/// assignment. Real rows and columns sum to 1 at convergence.
pub fn sinkhorn<T: Real>(s: &DMatrix<T>, iters: usize, dustbin: T) -> DMatrix<T> {
    sinkhorn_trace(s, iters, dustbin).log_assignment().map(|v| v.exp())
}

/// Same fixed point as [`sinkhorn`] computed with exponential-domain
/// scaling vectors; falls back to the log domain if the kernel under- or
/// overflows.
pub fn sinkhorn_fast(s: &DMatrix<f64>, iters: usize, dustbin: f64) -> DMatrix<f64> {
    let (z, log_mu, log_nu) = augment(s, dustbin);
    let shift = z.max();
    if !shift.is_finite() || z.min() - shift < -600.0 {
        return sinkhorn(s, iters, dustbin);
    }
    let k = z.map(|v| (v - shift).exp());
    let kt = k.transpose();
    let mu = log_mu.map(f64::exp);
    let nu = log_nu.map(f64::exp);
    let mut b = DVector::from_element(k.ncols(), 1.0);
    let mut a = DVector::zeros(k.nrows());
    let mut kb = DVector::zeros(k.nrows());
    let mut ka = DVector::zeros(k.ncols());
    for _ in 0..iters.max(1) {
        kb.gemv(1.0, &k, &b, 0.0);
        a.zip_zip_apply(&mu, &kb, |x, m, d| *x = m / d);
        ka.gemv(1.0, &kt, &a, 0.0);
        b.zip_zip_apply(&nu, &ka, |x, m, d| *x = m / d);
        if !a.iter().chain(b.iter()).all(|v| v.is_finite() && *v > 0.0) {
            return sinkhorn(s, iters, dustbin);
        }
    }
    let mut p = k;
    for (j, mut col) in p.column_iter_mut().enumerate() {
        for (i, v) in col.iter_mut().enumerate() {
            *v *= a[i] * b[j];
        }
    }
    p
}
