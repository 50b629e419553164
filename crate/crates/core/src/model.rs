//! The low-rank tensor-product B-spline model
//!
//! `g(x) = Σ_r v_r Π_n g_{n,r}(x_n)`, with `g_{n,r}(t) = Σ_k c[n][r][k] B_{n,k}(t)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::scalar::{norm2, Scalar};
use crate::scaler::ScalerParams;
use crate::spline::{SplineError, SplineSpace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} coordinates, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate {index} = {value} lies outside [0, 1]")]
    OutOfDomain { index: usize, value: f64 },
    #[error("invalid model shape: {0}")]
    InvalidShape(String),
    #[error("model output is not finite")]
    NonFinite,
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("bad magic bytes: not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("file is truncated: {0}")]
    Truncated(String),
    #[error("inconsistent file contents: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters and bases of a rank-`R` model from `[0,1]^N` to `ℝ^M`.
///
/// Coefficients are stored dimension-major, `c[n][r][k]`, so that each
/// dimension's block is one contiguous `R × K_n` slab.
#[derive(Debug, Clone, PartialEq)]
pub struct TpbsModel<T: Scalar> {
    spaces: Vec<SplineSpace<T>>,
    rank: usize,
    output_dim: usize,
    coeffs: Vec<T>,
    offsets: Vec<usize>,
    out: Vec<T>,
    scaler: Option<ScalerParams>,
}

fn block_offsets<T: Scalar>(spaces: &[SplineSpace<T>], rank: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(spaces.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for s in spaces {
        acc += rank * s.num_basis();
        offsets.push(acc);
    }
    offsets
}

impl<T: Scalar> TpbsModel<T> {
    /// Model with every coefficient and output entry set to zero.
    pub fn zeros(spaces: Vec<SplineSpace<T>>, rank: usize, output_dim: usize) -> Result<Self, ModelError> {
        if spaces.is_empty() {
            return Err(ModelError::InvalidShape("input dimension must be at least 1".into()));
        }
        if rank == 0 || output_dim == 0 {
            return Err(ModelError::InvalidShape(format!(
                "rank ({rank}) and output dimension ({output_dim}) must be positive"
            )));
        }
        let offsets = block_offsets(&spaces, rank);
        Ok(TpbsModel {
            coeffs: vec![T::zero(); offsets[spaces.len()]],
            out: vec![T::zero(); rank * output_dim],
            spaces,
            rank,
            output_dim,
            offsets,
            scaler: None,
        })
    }

    /// Random initialization around the constant-one factor.
    ///
    /// Coefficients are `1 + U(-init_scale, init_scale)`, which by partition
    /// of unity keeps every factor close to 1; output vectors are
    /// `N(0, init_scale²)`.
    pub fn init(
        spaces: Vec<SplineSpace<T>>,
        rank: usize,
        output_dim: usize,
        seed: u64,
        init_scale: f64,
    ) -> Result<Self, ModelError> {
        let mut m = Self::zeros(spaces, rank, output_dim)?;
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(ModelError::InvalidShape(format!("init_scale must be finite and >= 0, got {init_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in &mut m.coeffs {
            let u: f64 = if init_scale > 0.0 {
                rng.random_range(-init_scale..=init_scale)
            } else {
                0.0
            };
            *c = T::of(1.0 + u);
        }
        if init_scale > 0.0 {
            let normal = Normal::new(0.0, init_scale).expect("valid normal");
            for v in &mut m.out {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        Ok(m)
    }

    /// Assembles a model from explicit parameters (layouts as documented on
    /// the type).
    pub fn from_parts(
        spaces: Vec<SplineSpace<T>>,
        rank: usize,
        output_dim: usize,
        coeffs: Vec<T>,
        out: Vec<T>,
    ) -> Result<Self, ModelError> {
        let mut m = Self::zeros(spaces, rank, output_dim)?;
        if coeffs.len() != m.coeffs.len() {
            return Err(ModelError::InvalidShape(format!(
                "expected {} coefficients, got {}",
                m.coeffs.len(),
                coeffs.len()
            )));
        }
        if out.len() != m.out.len() {
            return Err(ModelError::InvalidShape(format!(
                "expected {} output entries, got {}",
                m.out.len(),
                out.len()
            )));
        }
        if coeffs.iter().chain(&out).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidShape("parameters must be finite".into()));
        }
        m.coeffs = coeffs;
        m.out = out;
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.spaces.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn spaces(&self) -> &[SplineSpace<T>] {
        &self.spaces
    }

    pub fn space(&self, n: usize) -> &SplineSpace<T> {
        &self.spaces[n]
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len() + self.out.len()
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn out_vectors(&self) -> &[T] {
        &self.out
    }

    pub fn out_vectors_mut(&mut self) -> &mut [T] {
        &mut self.out
    }

    /// Both parameter blocks, mutably, for optimizers.
    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.coeffs, &mut self.out)
    }

    /// The `R × K_n` coefficient slab of dimension `n`.
    pub fn dim_block(&self, n: usize) -> &[T] {
        &self.coeffs[self.offsets[n]..self.offsets[n + 1]]
    }

    pub fn dim_offset(&self, n: usize) -> usize {
        self.offsets[n]
    }

    pub fn factor(&self, n: usize, r: usize) -> &[T] {
        let k = self.spaces[n].num_basis();
        let start = self.offsets[n] + r * k;
        &self.coeffs[start..start + k]
    }

    pub fn factor_mut(&mut self, n: usize, r: usize) -> &mut [T] {
        let k = self.spaces[n].num_basis();
        let start = self.offsets[n] + r * k;
        &mut self.coeffs[start..start + k]
    }

    pub fn out_vector(&self, r: usize) -> &[T] {
        &self.out[r * self.output_dim..(r + 1) * self.output_dim]
    }

    pub fn out_vector_mut(&mut self, r: usize) -> &mut [T] {
        let m = self.output_dim;
        &mut self.out[r * m..(r + 1) * m]
    }

    pub fn scaler(&self) -> Option<&ScalerParams> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<ScalerParams>) {
        self.scaler = scaler;
    }

    /// Checks dimension and domain of a query point.
    pub fn check_point(&self, x: &[T]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        for (index, &v) in x.iter().enumerate() {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(ModelError::OutOfDomain {
                    index,
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    /// `g_{n,r}(t)`.
    pub fn factor_value(&self, n: usize, r: usize, t: T) -> Result<T, ModelError> {
        let (first, vals) = self.spaces[n].eval_basis(t, 0)?;
        let c = self.factor(n, r);
        Ok(vals.iter().zip(&c[first..]).fold(T::zero(), |a, (&b, &c)| a + b * c))
    }

    /// Evaluates the model at `x ∈ [0,1]^N`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_point(x)?;
        let mut ws = ForwardWorkspace::new(self);
        let mut y = vec![T::zero(); self.output_dim];
        self.forward_with(x, &mut ws, &mut y);
        Ok(y)
    }

    /// Unchecked forward pass reusing caller-owned scratch space. After the
    /// call `ws` holds the per-dimension basis values and the factor values
    /// `g_{n,r}(x_n)`.
    pub fn forward_with(&self, x: &[T], ws: &mut ForwardWorkspace<T>, y: &mut [T]) {
        let n_dims = self.input_dim();
        let rank = self.rank;
        let w = ws.width;
        for n in 0..n_dims {
            let vals = &mut ws.basis[n * w..n * w + self.spaces[n].degree() + 1];
            ws.first[n] = self.spaces[n].eval_values_into(x[n], vals);
        }
        for n in 0..n_dims {
            let k = self.spaces[n].num_basis();
            let p1 = self.spaces[n].degree() + 1;
            let first = ws.first[n];
            let vals = &ws.basis[n * w..n * w + p1];
            let block = self.dim_block(n);
            for r in 0..rank {
                let c = &block[r * k + first..r * k + first + p1];
                let mut g = T::zero();
                for j in 0..p1 {
                    g += vals[j] * c[j];
                }
                ws.factors[n * rank + r] = g;
            }
        }
        for r in 0..rank {
            let mut prod = T::one();
            for n in 0..n_dims {
                prod *= ws.factors[n * rank + r];
            }
            ws.products[r] = prod;
        }
        y.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..rank {
            let pr = ws.products[r];
            for (yi, &vi) in y.iter_mut().zip(self.out_vector(r)) {
                *yi += vi * pr;
            }
        }
    }

    /// `s_r = ‖v_r‖ Π_n ‖g_{n,r}‖_{L²[0,1]}`.
    pub fn factor_norms(&self) -> Vec<T> {
        let grams: Vec<_> = self
            .spaces
            .iter()
            .map(|s| s.gram(T::zero(), T::one(), 0).expect("unit interval is valid"))
            .collect();
        (0..self.rank)
            .map(|r| {
                let mut s = norm2(self.out_vector(r));
                for (n, g) in grams.iter().enumerate() {
                    s *= g.quad_form(self.factor(n, r)).max(T::zero()).sqrt();
                }
                s
            })
            .collect()
    }
}

/// Scratch buffers for repeated forward passes.
#[derive(Debug, Clone)]
pub struct ForwardWorkspace<T: Scalar> {
    width: usize,
    pub(crate) basis: Vec<T>,
    pub(crate) first: Vec<usize>,
    pub(crate) factors: Vec<T>,
    pub(crate) products: Vec<T>,
}

impl<T: Scalar> ForwardWorkspace<T> {
    pub fn new(model: &TpbsModel<T>) -> Self {
        let width = model.spaces.iter().map(|s| s.degree() + 1).max().unwrap_or(1);
        let n = model.input_dim();
        ForwardWorkspace {
            width,
            basis: vec![T::zero(); n * width],
            first: vec![0; n],
            factors: vec![T::zero(); n * model.rank],
            products: vec![T::zero(); model.rank],
        }
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    /// `g_{n,r}(x_n)` from the last forward pass.
    pub fn factor(&self, n: usize, r: usize, rank: usize) -> T {
        self.factors[n * rank + r]
    }
}

/// Gradient (or any other parameter-shaped quantity) laid out exactly like
/// the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad<T: Scalar> {
    pub coeffs: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Scalar> ModelGrad<T> {
    pub fn zeros_like(model: &TpbsModel<T>) -> Self {
        ModelGrad {
            coeffs: vec![T::zero(); model.coeffs.len()],
            out: vec![T::zero(); model.out.len()],
        }
    }

    pub fn fill_zero(&mut self) {
        self.coeffs.iter_mut().for_each(|v| *v = T::zero());
        self.out.iter_mut().for_each(|v| *v = T::zero());
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &ModelGrad<T>) {
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
        for (a, &b) in self.out.iter_mut().zip(&other.out) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.coeffs.iter_mut().chain(self.out.iter_mut()).for_each(|v| *v *= alpha);
    }

    pub fn norm(&self) -> T {
        self.coeffs
            .iter()
            .chain(&self.out)
            .fold(T::zero(), |a, &v| a + v * v)
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.coeffs.iter().chain(self.out.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}
