//! Clamped B-splines for the flat output.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const DEFAULT_DEGREE: usize = 5;
pub const DEFAULT_N_BASIS: usize = 13;

/// Open-uniform knot vector on `[0, t_end]` with end multiplicity `degree + 1`.
pub fn clamped_knots<T: Real>(degree: usize, n_basis: usize, t_end: T) -> Vec<T> {
    assert!(n_basis > degree, "need more basis functions than the degree");
    let spans = n_basis - degree;
    let mut k = Vec::with_capacity(n_basis + degree + 1);
    k.extend(std::iter::repeat_n(T::zero(), degree + 1));
    for i in 1..spans {
        k.push(t_end * lit::<T>(i as f64) / lit::<T>(spans as f64));
    }
    k.extend(std::iter::repeat_n(t_end, degree + 1));
    k
}

/// Knot span index containing `t`; points outside the domain map to the end spans.
pub fn find_span<T: Real>(knots: &[T], degree: usize, t: T) -> usize {
    let n = knots.len() - degree - 2;
    if t >= knots[n + 1] {
        return n;
    }
    if t <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, n + 1);
    let mut mid = (lo + hi) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// Nonzero basis functions and their derivatives up to `order` at `t`.
///
/// Returns the span `s`; row `k` of the result holds `d^k B_{s-degree+j}/dt^k` for
/// `j = 0..=degree`. Evaluation outside the domain extends the end polynomials.
pub fn ders_basis<T: Real>(knots: &[T], degree: usize, t: T, order: usize) -> (usize, Vec<Vec<T>>) {
    let p = degree;
    let span = find_span(knots, p, t);
    let z = T::zero();
    let mut ndu = vec![vec![z; p + 1]; p + 1];
    let mut left = vec![z; p + 1];
    let mut right = vec![z; p + 1];
    ndu[0][0] = T::one();
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = z;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![z; p + 1]; order + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let nd = order.min(p);
    let mut a = vec![vec![z; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = T::one();
        for k in 1..=nd {
            let mut d = z;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2: usize = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d = d + a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d = d + a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = lit::<T>(p as f64);
    for (k, row) in ders.iter_mut().enumerate().take(nd + 1).skip(1) {
        for v in row.iter_mut() {
            *v = *v * fac;
        }
        fac = fac * lit::<T>((p - k) as f64);
    }
    (span, ders)
}

/// Checked basis evaluation: errors outside `[t_0, t_m]` or for `order > degree`.
pub fn basis_eval<T: Real>(knots: &[T], degree: usize, t: T, order: usize) -> Result<(usize, Vec<T>)> {
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    if !(t >= lo && t <= hi) {
        return Err(Error::Invalid(format!(
            "t = {:?} outside spline domain [{:?}, {:?}]",
            t, lo, hi
        )));
    }
    if order > degree {
        return Err(Error::Invalid("derivative order exceeds degree".into()));
    }
    let (span, mut d) = ders_basis(knots, degree, t, order);
    Ok((span, d.swap_remove(order)))
}

/// Dense row of all `n_basis` basis derivatives of order `order` at `t`.
pub fn basis_row<T: Real>(knots: &[T], degree: usize, t: T, order: usize) -> Vec<T> {
    let n = knots.len() - degree - 1;
    let (span, d) = ders_basis(knots, degree, t, order);
    let mut row = vec![T::zero(); n];
    for j in 0..=degree {
        row[span - degree + j] = d[order][j];
    }
    row
}

/// Multi-channel spline curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineTraj<T> {
    pub degree: usize,
    pub knots: Vec<T>,
    /// `coeffs[channel][i]`.
    pub coeffs: Vec<Vec<T>>,
}

impl<T: Real> BSplineTraj<T> {
    pub fn new(degree: usize, knots: Vec<T>, coeffs: Vec<Vec<T>>) -> Result<Self> {
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("knots must be non-decreasing".into()));
        }
        let n = knots.len().saturating_sub(degree + 1);
        if n == 0 || coeffs.iter().any(|c| c.len() != n) {
            return Err(Error::Invalid("coefficient count must equal knots - degree - 1".into()));
        }
        Ok(Self { degree, knots, coeffs })
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn t_end(&self) -> T {
        self.knots[self.knots.len() - 1]
    }

    /// Derivatives `0..=order` of every channel: `out[k][channel]`.
    pub fn eval(&self, t: T, order: usize) -> Vec<Vec<T>> {
        let (span, d) = ders_basis(&self.knots, self.degree, t, order);
        let mut out = vec![vec![T::zero(); self.coeffs.len()]; order + 1];
        for (k, row) in d.iter().enumerate() {
            for (ch, c) in self.coeffs.iter().enumerate() {
                let mut s = T::zero();
                for j in 0..=self.degree {
                    s = s + row[j] * c[span - self.degree + j];
                }
                out[k][ch] = s;
            }
        }
        out
    }

    /// The derivative curve as a spline of one lower degree.
    pub fn derivative(&self) -> Result<Self> {
        if self.degree == 0 {
            return Err(Error::Invalid("degree-0 spline has no derivative spline".into()));
        }
        let p = self.degree;
        let n = self.n_basis();
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                (0..n - 1)
                    .map(|i| {
                        let den = self.knots[i + p + 1] - self.knots[i + 1];
                        if den > T::zero() {
                            lit::<T>(p as f64) * (c[i + 1] - c[i]) / den
                        } else {
                            T::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        let knots = self.knots[1..self.knots.len() - 1].to_vec();
        Self::new(p - 1, knots, coeffs)
    }
}

/// Least-squares coefficients for one channel sampled at `times`.
pub fn fit_least_squares<T: Real>(knots: &[T], degree: usize, times: &[T], values: &[T]) -> Result<Vec<T>> {
    let n = knots.len() - degree - 1;
    if times.len() != values.len() {
        return Err(Error::Invalid("times and values differ in length".into()));
    }
    if times.len() < n {
        return Err(Error::Invalid(format!("need at least {n} samples, got {}", times.len())));
    }
    let a: Vec<Vec<T>> = times.iter().map(|&t| basis_row(knots, degree, t, 0)).collect();
    householder_lstsq(a, values.to_vec())
}

/// Householder QR least squares; errors on numerical rank deficiency.
fn householder_lstsq<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let m = a.len();
    let n = a[0].len();
    let mut diag = vec![T::zero(); n];
    for k in 0..n {
        let mut nrm = T::zero();
        for row in a.iter().skip(k) {
            nrm = nrm.hypot(row[k]);
        }
        if nrm == T::zero() {
            return Err(Error::Invalid("rank-deficient fit".into()));
        }
        if a[k][k] > T::zero() {
            nrm = -nrm;
        }
        for row in a.iter_mut().skip(k) {
            row[k] = row[k] / -nrm;
        }
        a[k][k] = a[k][k] + T::one();
        for j in k + 1..n {
            let mut s = T::zero();
            for row in a.iter().skip(k) {
                s = s + row[k] * row[j];
            }
            s = -s / a[k][k];
            for row in a.iter_mut().skip(k) {
                let v = row[k];
                row[j] = row[j] + s * v;
            }
        }
        let mut s = T::zero();
        for i in k..m {
            s = s + a[i][k] * b[i];
        }
        s = -s / a[k][k];
        for i in k..m {
            b[i] = b[i] + s * a[i][k];
        }
        diag[k] = nrm;
    }
    let scale = diag.iter().fold(T::zero(), |acc, d| acc.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= scale * lit(1e-12)) {
        return Err(Error::Invalid("rank-deficient fit".into()));
    }
    let mut x = vec![T::zero(); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s = s - a[k][j] * x[j];
        }
        x[k] = s / diag[k];
    }
    Ok(x)
}
