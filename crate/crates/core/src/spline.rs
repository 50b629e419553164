//! Univariate B-spline bases on `[0, 1]`.
//!
//! A [`SplineSpace`] owns an open-uniform knot vector and evaluates its
//! basis with the Cox–de Boor triangle. Inner products between basis
//! functions (or their first derivatives) over the full domain or any
//! subinterval are assembled into a [`BandedGram`] by Gauss–Legendre
//! quadrature on each knot span, which is exact for the piecewise
//! polynomial integrands involved.

use std::ops::Range;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("need at least degree + 1 = {required} basis functions, got {num_basis}")]
    TooFewBasis { num_basis: usize, required: usize },
    #[error("point {x} lies outside [0, 1]")]
    OutOfDomain { x: f64 },
    #[error("derivative order {0} is not supported (0 or 1)")]
    BadDerivOrder(u8),
    #[error("empty interval: a = {a} > b = {b}")]
    BadInterval { a: f64, b: f64 },
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed in `f64` by
/// Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Open-uniform B-spline basis of a fixed degree on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpace<T: Scalar> {
    degree: usize,
    num_basis: usize,
    knots: Vec<T>,
    quad_nodes: Vec<T>,
    quad_weights: Vec<T>,
    basis_masses: Vec<T>,
}

impl<T: Scalar> SplineSpace<T> {
    /// Open-uniform space with `num_basis` functions of the given degree.
    ///
    /// The first and last knots are repeated `degree + 1` times and the
    /// `num_basis - degree` spans are of equal width.
    pub fn new(num_basis: usize, degree: usize) -> Result<Self, SplineError> {
        if num_basis < degree + 1 {
            return Err(SplineError::TooFewBasis {
                num_basis,
                required: degree + 1,
            });
        }
        let spans = num_basis - degree;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(std::iter::repeat_n(T::zero(), degree + 1));
        for j in 1..spans {
            knots.push(T::of_usize(j) / T::of_usize(spans));
        }
        knots.extend(std::iter::repeat_n(T::one(), degree + 1));
        Self::from_knots(degree, knots)
    }

    /// Rebuilds a space from a stored knot vector (used when loading models).
    pub fn from_knots(degree: usize, knots: Vec<T>) -> Result<Self, SplineError> {
        let num_basis = knots
            .len()
            .checked_sub(degree + 1)
            .ok_or(SplineError::TooFewBasis {
                num_basis: 0,
                required: degree + 1,
            })?;
        if num_basis < degree + 1 {
            return Err(SplineError::TooFewBasis {
                num_basis,
                required: degree + 1,
            });
        }
        let (nodes, weights) = gauss_legendre(degree + 1);
        let mut space = SplineSpace {
            degree,
            num_basis,
            knots,
            quad_nodes: nodes.into_iter().map(T::of).collect(),
            quad_weights: weights.into_iter().map(T::of).collect(),
            basis_masses: Vec::new(),
        };
        space.basis_masses = space.project_piecewise_constant(&[T::one()]);
        Ok(space)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Number of Gauss–Legendre nodes used per span piece.
    pub fn quad_order(&self) -> usize {
        self.quad_nodes.len()
    }

    /// Number of (nonempty) knot spans.
    pub fn num_spans(&self) -> usize {
        self.num_basis - self.degree
    }

    /// `[left, right]` of span `j`.
    pub fn span_bounds(&self, j: usize) -> (T, T) {
        (self.knots[self.degree + j], self.knots[self.degree + j + 1])
    }

    /// `∫₀¹ B_k`, one entry per basis function.
    pub fn basis_masses(&self) -> &[T] {
        &self.basis_masses
    }

    /// Index of the span containing `x`; `x = 1` belongs to the last span.
    pub fn span_of(&self, x: T) -> usize {
        let spans = self.num_spans();
        let guess = (x * T::of_usize(spans)).floor().to_usize().unwrap_or(0);
        let mut j = guess.min(spans - 1);
        while j > 0 && x < self.knots[self.degree + j] {
            j -= 1;
        }
        while j + 1 < spans && x >= self.knots[self.degree + j + 1] {
            j += 1;
        }
        j
    }

    fn check_domain(x: T) -> Result<(), SplineError> {
        if x >= T::zero() && x <= T::one() {
            Ok(())
        } else {
            Err(SplineError::OutOfDomain { x: x.to_f64_lossy() })
        }
    }

    /// The `degree + 1` basis values (`deriv = 0`) or first derivatives
    /// (`deriv = 1`) that may be nonzero at `x`, with the index of the first.
    pub fn eval_basis(&self, x: T, deriv: u8) -> Result<(usize, Vec<T>), SplineError> {
        Self::check_domain(x)?;
        if deriv > 1 {
            return Err(SplineError::BadDerivOrder(deriv));
        }
        let mut vals = vec![T::zero(); self.degree + 1];
        let mut ders = vec![T::zero(); self.degree + 1];
        let j = self.span_of(x);
        self.eval_span(j, x, &mut vals, &mut ders);
        Ok((j, if deriv == 0 { vals } else { ders }))
    }

    /// Allocation-free evaluation for hot loops. `vals` and `ders` must
    /// have length `degree + 1`; `x` is assumed to be in `[0, 1]`.
    /// Returns the first active basis index.
    #[inline]
    pub fn eval_into(&self, x: T, vals: &mut [T], ders: &mut [T]) -> usize {
        let j = self.span_of(x);
        self.eval_span(j, x, vals, ders);
        j
    }

    /// Value-only variant of [`eval_into`](Self::eval_into).
    #[inline]
    pub fn eval_values_into(&self, x: T, vals: &mut [T]) -> usize {
        let j = self.span_of(x);
        self.triangle(j + self.degree, x, vals, None);
        j
    }

    /// Evaluates on span `j` (first active basis is `j`), filling values
    /// and first derivatives.
    pub(crate) fn eval_span(&self, j: usize, x: T, vals: &mut [T], ders: &mut [T]) {
        let p = self.degree;
        let i = j + p;
        if p == 0 {
            vals[0] = T::one();
            ders[0] = T::zero();
            return;
        }
        // Degree p-1 values are captured just before the last triangle row.
        let mut lower = [T::zero(); 16];
        let lower: &mut [T] = if p <= 16 {
            &mut lower[..p]
        } else {
            return self.eval_span_large(j, x, vals, ders);
        };
        self.triangle(i, x, vals, Some(lower));
        let u = &self.knots;
        let pf = T::of_usize(p);
        for r in 0..=p {
            let a = i - p + r;
            let mut d = T::zero();
            if r >= 1 {
                let den = u[a + p] - u[a];
                if den > T::zero() {
                    d += lower[r - 1] / den;
                }
            }
            if r < p {
                let den = u[a + p + 1] - u[a + 1];
                if den > T::zero() {
                    d -= lower[r] / den;
                }
            }
            ders[r] = pf * d;
        }
    }

    #[cold]
    fn eval_span_large(&self, j: usize, x: T, vals: &mut [T], ders: &mut [T]) {
        let p = self.degree;
        let i = j + p;
        let mut lower = vec![T::zero(); p];
        self.triangle(i, x, vals, Some(&mut lower));
        let u = &self.knots;
        let pf = T::of_usize(p);
        for r in 0..=p {
            let a = i - p + r;
            let mut d = T::zero();
            if r >= 1 && u[a + p] > u[a] {
                d += lower[r - 1] / (u[a + p] - u[a]);
            }
            if r < p && u[a + p + 1] > u[a + 1] {
                d -= lower[r] / (u[a + p + 1] - u[a + 1]);
            }
            ders[r] = pf * d;
        }
    }

    /// Cox–de Boor triangle on knot span `i` (global knot index).
    fn triangle(&self, i: usize, x: T, out: &mut [T], mut lower: Option<&mut [T]>) {
        let p = self.degree;
        let u = &self.knots;
        let mut left_buf = [T::zero(); 17];
        let mut right_buf = [T::zero(); 17];
        let mut left_v = Vec::new();
        let mut right_v = Vec::new();
        let (left, right): (&mut [T], &mut [T]) = if p >= 17 {
            left_v.resize(p + 1, T::zero());
            right_v.resize(p + 1, T::zero());
            (left_v.as_mut_slice(), right_v.as_mut_slice())
        } else {
            (&mut left_buf[..], &mut right_buf[..])
        };
        out[0] = T::one();
        for jj in 1..=p {
            if jj == p {
                if let Some(l) = lower.as_deref_mut() {
                    l.copy_from_slice(&out[..p]);
                }
            }
            left[jj] = x - u[i + 1 - jj];
            right[jj] = u[i + jj] - x;
            let mut saved = T::zero();
            for r in 0..jj {
                let temp = out[r] / (right[r + 1] + left[jj - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[jj - r] * temp;
            }
            out[jj] = saved;
        }
    }

    /// Gram matrix `G_ij = ∫_a^b B_i^(d) B_j^(d)` for `d = deriv_order`.
    pub fn gram(&self, a: T, b: T, deriv_order: u8) -> Result<BandedGram<T>, SplineError> {
        if deriv_order > 1 {
            return Err(SplineError::BadDerivOrder(deriv_order));
        }
        let (g0, g1) = self.gram_pair(a, b)?;
        Ok(if deriv_order == 0 { g0 } else { g1 })
    }

    /// Value and derivative Grams over `[a, b]` from a single pass of basis
    /// evaluations.
    pub fn gram_pair(&self, a: T, b: T) -> Result<(BandedGram<T>, BandedGram<T>), SplineError> {
        if a.is_nan() || b.is_nan() || a > b {
            return Err(SplineError::BadInterval {
                a: a.to_f64_lossy(),
                b: b.to_f64_lossy(),
            });
        }
        let a = a.max(T::zero());
        let b = b.min(T::one());
        let p = self.degree;
        let k = self.num_basis;
        let mut g0 = BandedGram::zeros(k, p, 0, (a, b));
        let mut g1 = BandedGram::zeros(k, p, 1, (a, b));
        let mut vals = vec![T::zero(); p + 1];
        let mut ders = vec![T::zero(); p + 1];
        let half = T::of(0.5);
        let mut first_span = None;
        let mut last_span = 0;
        for j in 0..self.num_spans() {
            let (l, r) = self.span_bounds(j);
            let lo = l.max(a);
            let hi = r.min(b);
            if hi <= lo {
                continue;
            }
            first_span.get_or_insert(j);
            last_span = j;
            let mid = half * (lo + hi);
            let rad = half * (hi - lo);
            for (&node, &weight) in self.quad_nodes.iter().zip(&self.quad_weights) {
                let x = mid + rad * node;
                let w = rad * weight;
                self.eval_span(j, x, &mut vals, &mut ders);
                for r0 in 0..=p {
                    let wv = w * vals[r0];
                    let wd = w * ders[r0];
                    for s0 in r0..=p {
                        let idx = (j + r0) * (p + 1) + (s0 - r0);
                        g0.values[idx] += wv * vals[s0];
                        g1.values[idx] += wd * ders[s0];
                    }
                }
            }
        }
        if let Some(f) = first_span {
            let active = f..(last_span + p + 1).min(k);
            g0.active = active.clone();
            g1.active = active;
        }
        Ok((g0, g1))
    }

    /// `∫₀¹ B_k(x) h(x) dx` for every `k`, where `h` is piecewise constant
    /// on `bin_values.len()` equal-width bins of `[0, 1]`.
    pub fn project_piecewise_constant(&self, bin_values: &[T]) -> Vec<T> {
        let p = self.degree;
        let nbins = bin_values.len();
        assert!(nbins >= 1, "need at least one bin");
        let mut out = vec![T::zero(); self.num_basis];
        let mut vals = vec![T::zero(); p + 1];
        let mut ders = vec![T::zero(); p + 1];
        let half = T::of(0.5);
        let bin_edge = |b: usize| T::of_usize(b) / T::of_usize(nbins);
        for j in 0..self.num_spans() {
            let (l, r) = self.span_bounds(j);
            if r <= l {
                continue;
            }
            // Bins that overlap this span.
            let first_bin = (l * T::of_usize(nbins)).floor().to_usize().unwrap_or(0).min(nbins - 1);
            for (bin, &hv) in bin_values.iter().enumerate().skip(first_bin) {
                let lo = l.max(bin_edge(bin));
                let hi = r.min(bin_edge(bin + 1));
                if bin_edge(bin) >= r {
                    break;
                }
                if hi <= lo {
                    continue;
                }
                let mid = half * (lo + hi);
                let rad = half * (hi - lo);
                for (&node, &weight) in self.quad_nodes.iter().zip(&self.quad_weights) {
                    let x = mid + rad * node;
                    let w = rad * weight;
                    self.eval_span(j, x, &mut vals, &mut ders);
                    for r0 in 0..=p {
                        out[j + r0] += w * vals[r0] * hv;
                    }
                }
            }
        }
        out
    }
}

/// Symmetric banded matrix of basis inner products.
///
/// Row `i` stores `G[i][i..=i+bandwidth]`; entries with `|i - j| > bandwidth`
/// vanish. `active` is the range of basis indices whose support meets the
/// integration interval; rows and columns outside it are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedGram<T: Scalar> {
    size: usize,
    bandwidth: usize,
    deriv_order: u8,
    interval: (T, T),
    values: Vec<T>,
    active: Range<usize>,
}

impl<T: Scalar> BandedGram<T> {
    fn zeros(size: usize, bandwidth: usize, deriv_order: u8, interval: (T, T)) -> Self {
        BandedGram {
            size,
            bandwidth,
            deriv_order,
            interval,
            values: vec![T::zero(); size * (bandwidth + 1)],
            active: 0..0,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn deriv_order(&self) -> u8 {
        self.deriv_order
    }

    pub fn interval(&self) -> (T, T) {
        self.interval
    }

    pub fn active(&self) -> Range<usize> {
        self.active.clone()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bandwidth || hi >= self.size {
            T::zero()
        } else {
            self.values[lo * (self.bandwidth + 1) + d]
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.size)
            .map(|i| (0..self.size).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// `out[k] = Σ_j G[k][j] c[j]` over the active range; entries of `out`
    /// outside the active range are left untouched.
    #[inline]
    pub fn apply_into(&self, c: &[T], out: &mut [T]) {
        let w = self.bandwidth + 1;
        let Range { start, end } = self.active;
        for k in start..end {
            out[k] = T::zero();
        }
        for i in start..end {
            let row = &self.values[i * w..(i + 1) * w];
            let ci = c[i];
            out[i] += row[0] * ci;
            let lim = (end - i).min(w);
            for d in 1..lim {
                let g = row[d];
                out[i] += g * c[i + d];
                out[i + d] += g * ci;
            }
        }
    }

    pub fn apply(&self, c: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.size];
        self.apply_into(c, &mut out);
        out
    }

    /// `aᵀ G b`.
    pub fn bilinear(&self, a: &[T], b: &[T]) -> T {
        let gb = self.apply(b);
        self.active.clone().fold(T::zero(), |acc, k| acc + a[k] * gb[k])
    }

    /// `cᵀ G c`.
    pub fn quad_form(&self, c: &[T]) -> T {
        self.bilinear(c, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for q in 1..=8 {
            let (x, w) = gauss_legendre(q);
            for deg in 0..2 * q {
                let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!(close(num, exact, 1e-14), "q={q} deg={deg}: {num} vs {exact}");
            }
        }
    }

    #[test]
    fn knot_vectors_match_construction() {
        let s = SplineSpace::<f64>::new(2, 0).unwrap();
        assert_eq!(s.knots(), &[0.0, 0.5, 1.0]);
        let s = SplineSpace::<f64>::new(2, 1).unwrap();
        assert_eq!(s.knots(), &[0.0, 0.0, 1.0, 1.0]);
        let s = SplineSpace::<f64>::new(100, 3).unwrap();
        assert_eq!(s.num_spans(), 97);
        assert_eq!(s.num_basis(), 100);
        assert_eq!(s.knots().len(), 104);
        assert_eq!(s.quad_order(), 4);
    }

    #[test]
    fn rejects_too_few_basis() {
        assert_eq!(
            SplineSpace::<f64>::new(3, 3).unwrap_err(),
            SplineError::TooFewBasis { num_basis: 3, required: 4 }
        );
    }

    #[test]
    fn indicator_basis_for_degree_zero() {
        let s = SplineSpace::<f64>::new(2, 0).unwrap();
        assert_eq!(s.eval_basis(0.25, 0).unwrap(), (0, vec![1.0]));
        assert_eq!(s.eval_basis(0.5, 0).unwrap(), (1, vec![1.0]));
        assert_eq!(s.eval_basis(1.0, 0).unwrap(), (1, vec![1.0]));
    }

    #[test]
    fn linear_hat_values_and_derivatives() {
        let s = SplineSpace::<f64>::new(2, 1).unwrap();
        assert_eq!(s.eval_basis(0.25, 0).unwrap(), (0, vec![0.75, 0.25]));
        assert_eq!(s.eval_basis(0.25, 1).unwrap(), (0, vec![-1.0, 1.0]));
    }

    #[test]
    fn cubic_partition_of_unity() {
        let s = SplineSpace::<f64>::new(5, 3).unwrap();
        let (_, v) = s.eval_basis(0.5, 0).unwrap();
        assert!(close(v.iter().sum(), 1.0, 1e-12));
        let (_, d) = s.eval_basis(0.5, 1).unwrap();
        assert!(close(d.iter().sum(), 0.0, 1e-12));
    }

    #[test]
    fn out_of_domain_rejected() {
        let s = SplineSpace::<f64>::new(5, 3).unwrap();
        assert!(matches!(s.eval_basis(1.5, 0), Err(SplineError::OutOfDomain { .. })));
        assert!(matches!(s.eval_basis(-1e-9, 0), Err(SplineError::OutOfDomain { .. })));
        assert!(matches!(s.eval_basis(f64::NAN, 0), Err(SplineError::OutOfDomain { .. })));
    }

    #[test]
    fn linear_grams_full_domain() {
        let s = SplineSpace::<f64>::new(2, 1).unwrap();
        let g0 = s.gram(0.0, 1.0, 0).unwrap().to_dense();
        let want = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(g0[i][j], want[i][j], 1e-15));
            }
        }
        let g1 = s.gram(0.0, 1.0, 1).unwrap().to_dense();
        let want = [[1.0, -1.0], [-1.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(g1[i][j], want[i][j], 1e-15));
            }
        }
    }

    #[test]
    fn linear_gram_half_interval() {
        // ∫₀^½ (1-x)² = 7/24, ∫₀^½ x(1-x) = 1/12, ∫₀^½ x² = 1/24.
        let s = SplineSpace::<f64>::new(2, 1).unwrap();
        let g = s.gram(0.0, 0.5, 0).unwrap().to_dense();
        assert!(close(g[0][0], 7.0 / 24.0, 1e-15));
        assert!(close(g[0][1], 1.0 / 12.0, 1e-15));
        assert!(close(g[1][0], 1.0 / 12.0, 1e-15));
        assert!(close(g[1][1], 1.0 / 24.0, 1e-15));
    }

    #[test]
    fn degenerate_and_reversed_intervals() {
        let s = SplineSpace::<f64>::new(6, 2).unwrap();
        let g = s.gram(0.3, 0.3, 0).unwrap();
        assert!(g.to_dense().iter().flatten().all(|&v| v == 0.0));
        assert!(g.active().is_empty());
        assert!(matches!(s.gram(0.6, 0.2, 0), Err(SplineError::BadInterval { .. })));
        assert!(matches!(s.gram(0.0, 1.0, 2), Err(SplineError::BadDerivOrder(2))));
    }

    #[test]
    fn derivative_gram_kernel_contains_constants() {
        let s = SplineSpace::<f64>::new(9, 3).unwrap();
        let g1 = s.gram(0.0, 1.0, 1).unwrap();
        let ones = vec![1.0; 9];
        assert!(g1.apply(&ones).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn basis_masses_match_closed_form() {
        for (k, p) in [(2, 0), (4, 1), (7, 2), (10, 3)] {
            let s = SplineSpace::<f64>::new(k, p).unwrap();
            let t = s.knots();
            for (i, &m) in s.basis_masses().iter().enumerate() {
                let exact = (t[i + p + 1] - t[i]) / (p as f64 + 1.0);
                assert!(close(m, exact, 1e-14), "k={k} p={p} i={i}");
            }
        }
    }

    #[test]
    fn interval_gram_active_range() {
        let s = SplineSpace::<f64>::new(20, 3).unwrap();
        let g = s.gram(0.4, 0.5, 0).unwrap();
        let active = g.active();
        let dense = g.to_dense();
        for i in 0..20 {
            let row_nonzero = dense[i].iter().any(|&v| v != 0.0);
            if row_nonzero {
                assert!(active.contains(&i));
            }
        }
        assert!(active.len() < 20);
    }

    #[test]
    fn works_in_single_precision() {
        let s = SplineSpace::<f32>::new(2, 1).unwrap();
        let g = s.gram(0.0, 1.0, 0).unwrap();
        assert!((g.get(0, 1) - 1.0 / 6.0).abs() < 1e-6);
    }
}
