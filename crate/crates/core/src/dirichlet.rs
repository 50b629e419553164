//! Dirichlet energy of tensor-product spline models.
//!
//! For `g(x) = Σ_r v_r Π_n g_{n,r}(x_n)` and a box `Π_n [a_n, b_n]`,
//!
//! ```text
//! ∫_box ‖∇g‖²_F = Σ_{r,s} (v_r·v_s) Σ_q ⟨g'_{q,r}, g'_{q,s}⟩_q Π_{n≠q} ⟨g_{n,r}, g_{n,s}⟩_n
//! ```
//!
//! where `⟨·,·⟩_n` integrates over `[a_n, b_n]`. Every inner product is a
//! banded Gram contraction of the coefficient vectors, so the energy and its
//! gradient are exact up to rounding. The products over `n ≠ q` are formed
//! from prefix/suffix scans, which never divide and so stay well defined
//! when some inner products vanish.
//!
//! The localized energy sums this integral over `ℓ∞` boxes of half-width
//! `ρ` around a set of points, clipped to the unit cube. Overlapping boxes
//! are counted once per box.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelGrad, TpbsModel};
use crate::scalar::{dot, Scalar};
use crate::spline::{BandedGram, SplineError, SplineSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("rho must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("point {index} has {got} coordinates, model expects {expected}")]
    PointDimension { index: usize, expected: usize, got: usize },
    #[error("point {index} is outside [0, 1]^N")]
    PointOutOfDomain { index: usize },
    #[error("decomposition unavailable: factor ({dim}, {component}) is identically zero")]
    ZeroFactor { dim: usize, component: usize },
    #[error("decomposition unavailable: output vector {0} is zero")]
    ZeroOutput(usize),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Localized-energy configuration: box half-width and box centers.
#[derive(Debug, Clone, PartialEq)]
pub struct LdeConfig<T: Scalar> {
    pub rho: T,
    pub points: Vec<Vec<T>>,
}

impl<T: Scalar> LdeConfig<T> {
    pub fn new(rho: T, points: Vec<Vec<T>>) -> Result<Self, EnergyError> {
        if !(rho > T::zero() && rho.is_finite()) {
            return Err(EnergyError::BadRadius(rho.to_f64_lossy()));
        }
        Ok(LdeConfig { rho, points })
    }
}

/// Value and derivative Grams of every dimension over one axis-aligned box.
#[derive(Debug, Clone)]
pub struct BoxGrams<T: Scalar> {
    dims: Vec<(BandedGram<T>, BandedGram<T>)>,
}

impl<T: Scalar> BoxGrams<T> {
    pub fn new(spaces: &[SplineSpace<T>], lower: &[T], upper: &[T]) -> Result<Self, EnergyError> {
        let dims = spaces
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(s, (&a, &b))| s.gram_pair(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BoxGrams { dims })
    }

    pub fn unit(spaces: &[SplineSpace<T>]) -> Self {
        let n = spaces.len();
        Self::new(spaces, &vec![T::zero(); n], &vec![T::one(); n]).expect("unit box is valid")
    }

    /// `[max(0, x_n − ρ), min(1, x_n + ρ)]` in every dimension.
    pub fn around(spaces: &[SplineSpace<T>], center: &[T], rho: T) -> Result<Self, EnergyError> {
        let lower: Vec<T> = center.iter().map(|&x| (x - rho).max(T::zero())).collect();
        let upper: Vec<T> = center.iter().map(|&x| (x + rho).min(T::one())).collect();
        Self::new(spaces, &lower, &upper)
    }

    pub fn dim(&self, n: usize) -> (&BandedGram<T>, &BandedGram<T>) {
        let (g0, g1) = &self.dims[n];
        (g0, g1)
    }
}

/// A fixed collection of integration boxes, precomputed for one set of
/// spline spaces. Reused across optimizer steps since the Grams depend only
/// on the boxes, not on the parameters.
#[derive(Debug, Clone)]
pub struct EnergyRegions<T: Scalar> {
    boxes: Vec<BoxGrams<T>>,
}

/// Boxes per reduction chunk. Fixed so that summation order (and therefore
/// every bit of the result) does not depend on the thread count.
const CHUNK: usize = 8;

impl<T: Scalar> EnergyRegions<T> {
    /// The whole unit cube as a single region.
    pub fn global(spaces: &[SplineSpace<T>]) -> Self {
        EnergyRegions {
            boxes: vec![BoxGrams::unit(spaces)],
        }
    }

    /// One clipped box per configured point.
    pub fn local(spaces: &[SplineSpace<T>], cfg: &LdeConfig<T>) -> Result<Self, EnergyError> {
        let n = spaces.len();
        let boxes = cfg
            .points
            .iter()
            .enumerate()
            .map(|(index, x)| {
                if x.len() != n {
                    return Err(EnergyError::PointDimension {
                        index,
                        expected: n,
                        got: x.len(),
                    });
                }
                if x.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
                    return Err(EnergyError::PointOutOfDomain { index });
                }
                BoxGrams::around(spaces, x, cfg.rho)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EnergyRegions { boxes })
    }

    pub fn from_boxes(boxes: Vec<BoxGrams<T>>) -> Self {
        EnergyRegions { boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BoxGrams<T>] {
        &self.boxes
    }

    /// Energy of each box separately.
    pub fn per_box(&self, model: &TpbsModel<T>) -> Vec<T> {
        self.boxes
            .par_iter()
            .map_init(|| PairWorkspace::new(model), |ws, b| box_energy(model, b, ws))
            .collect()
    }

    /// Sum of all box energies.
    pub fn energy(&self, model: &TpbsModel<T>) -> T {
        let idx: Vec<usize> = (0..self.boxes.len()).collect();
        self.subset_energy(model, &idx)
    }

    pub fn subset_energy(&self, model: &TpbsModel<T>, indices: &[usize]) -> T {
        let partials: Vec<T> = indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut ws = PairWorkspace::new(model);
                chunk
                    .iter()
                    .fold(T::zero(), |acc, &i| acc + box_energy(model, &self.boxes[i], &mut ws))
            })
            .collect();
        partials.into_iter().fold(T::zero(), |a, b| a + b)
    }

    /// Adds `scale · ∇(Σ_i E_i)` over the given boxes to `grad` and
    /// returns `Σ_i E_i` (unscaled).
    pub fn subset_energy_and_grad(
        &self,
        model: &TpbsModel<T>,
        indices: &[usize],
        scale: T,
        grad: &mut ModelGrad<T>,
    ) -> T {
        let partials: Vec<(T, ModelGrad<T>)> = indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut ws = PairWorkspace::new(model);
                let mut g = ModelGrad::zeros_like(model);
                let mut e = T::zero();
                for &i in chunk {
                    e += box_energy_grad(model, &self.boxes[i], &mut ws, scale, &mut g);
                }
                (e, g)
            })
            .collect();
        let mut total = T::zero();
        for (e, g) in partials {
            total += e;
            grad.axpy(T::one(), &g);
        }
        total
    }

    pub fn energy_and_grad(&self, model: &TpbsModel<T>, scale: T, grad: &mut ModelGrad<T>) -> T {
        let idx: Vec<usize> = (0..self.boxes.len()).collect();
        self.subset_energy_and_grad(model, &idx, scale, grad)
    }
}

/// Scratch space for the pairwise inner products of one box.
struct PairWorkspace<T: Scalar> {
    rank: usize,
    /// `G0 c_{n,r}` and `G1 c_{n,r}` for the current dimension, `R × K_max`.
    h0: Vec<T>,
    h1: Vec<T>,
    kmax: usize,
    /// `⟨g_{n,r}, g_{n,s}⟩` and `⟨g'_{n,r}, g'_{n,s}⟩`, `N × R × R`.
    p0: Vec<T>,
    p1: Vec<T>,
    /// Prefix/suffix scans, `(N + 1) × R × R`.
    pre_prod: Vec<T>,
    pre_d: Vec<T>,
    suf_prod: Vec<T>,
    suf_d: Vec<T>,
}

impl<T: Scalar> PairWorkspace<T> {
    fn new(model: &TpbsModel<T>) -> Self {
        let r = model.rank();
        let n = model.input_dim();
        let kmax = model.spaces().iter().map(|s| s.num_basis()).max().unwrap_or(0);
        let rr = r * r;
        PairWorkspace {
            rank: r,
            h0: vec![T::zero(); r * kmax],
            h1: vec![T::zero(); r * kmax],
            kmax,
            p0: vec![T::zero(); n * rr],
            p1: vec![T::zero(); n * rr],
            pre_prod: vec![T::zero(); (n + 1) * rr],
            pre_d: vec![T::zero(); (n + 1) * rr],
            suf_prod: vec![T::zero(); (n + 1) * rr],
            suf_d: vec![T::zero(); (n + 1) * rr],
        }
    }
}

/// Fills `H0`, `H1` for dimension `n` and the symmetric pair matrices
/// `P0[n]`, `P1[n]`. Returns false when the box has zero width in `n`.
fn dim_pairs<T: Scalar>(model: &TpbsModel<T>, bx: &BoxGrams<T>, n: usize, ws: &mut PairWorkspace<T>) -> bool {
    let (g0, g1) = bx.dim(n);
    let act = g0.active();
    let rank = ws.rank;
    let rr = rank * rank;
    let k = model.space(n).num_basis();
    let kmax = ws.kmax;
    let block = model.dim_block(n);
    if act.is_empty() {
        ws.p0[n * rr..(n + 1) * rr].iter_mut().for_each(|v| *v = T::zero());
        ws.p1[n * rr..(n + 1) * rr].iter_mut().for_each(|v| *v = T::zero());
        return false;
    }
    for r in 0..rank {
        let c = &block[r * k..(r + 1) * k];
        g0.apply_into(c, &mut ws.h0[r * kmax..r * kmax + k]);
        g1.apply_into(c, &mut ws.h1[r * kmax..r * kmax + k]);
    }
    let (lo, hi) = (act.start, act.end);
    for r in 0..rank {
        let cr = &block[r * k + lo..r * k + hi];
        for s in r..rank {
            let h0s = &ws.h0[s * kmax + lo..s * kmax + hi];
            let h1s = &ws.h1[s * kmax + lo..s * kmax + hi];
            let a = dot(cr, h0s);
            let b = dot(cr, h1s);
            ws.p0[n * rr + r * rank + s] = a;
            ws.p0[n * rr + s * rank + r] = a;
            ws.p1[n * rr + r * rank + s] = b;
            ws.p1[n * rr + s * rank + r] = b;
        }
    }
    true
}

/// `V_rs = v_r · v_s`.
fn out_gram<T: Scalar>(model: &TpbsModel<T>) -> Vec<T> {
    let rank = model.rank();
    let mut v = vec![T::zero(); rank * rank];
    for r in 0..rank {
        for s in r..rank {
            let d = dot(model.out_vector(r), model.out_vector(s));
            v[r * rank + s] = d;
            v[s * rank + r] = d;
        }
    }
    v
}

fn box_energy<T: Scalar>(model: &TpbsModel<T>, bx: &BoxGrams<T>, ws: &mut PairWorkspace<T>) -> T {
    let n_dims = model.input_dim();
    for n in 0..n_dims {
        if !dim_pairs(model, bx, n, ws) {
            return T::zero();
        }
    }
    let rank = ws.rank;
    let rr = rank * rank;
    let two = T::of(2.0);
    let mut total = T::zero();
    for r in 0..rank {
        for s in r..rank {
            let idx = r * rank + s;
            let mut prod = T::one();
            let mut d = T::zero();
            for n in 0..n_dims {
                let a = ws.p0[n * rr + idx];
                let b = ws.p1[n * rr + idx];
                d = d * a + prod * b;
                prod *= a;
            }
            let v = dot(model.out_vector(r), model.out_vector(s));
            total += if r == s { v * d } else { two * v * d };
        }
    }
    total
}

/// Energy of one box; adds `scale · ∇E` to `grad`.
fn box_energy_grad<T: Scalar>(
    model: &TpbsModel<T>,
    bx: &BoxGrams<T>,
    ws: &mut PairWorkspace<T>,
    scale: T,
    grad: &mut ModelGrad<T>,
) -> T {
    let n_dims = model.input_dim();
    let rank = ws.rank;
    let rr = rank * rank;
    // Each P0[n]/P1[n] is needed again below, together with H0/H1 of the
    // same dimension, so the per-dimension pass is repeated there.
    for n in 0..n_dims {
        if !dim_pairs(model, bx, n, ws) {
            return T::zero();
        }
    }
    // Prefix scans: pre[n] covers dims [0, n); suffix: suf[n] covers [n, N).
    for idx in 0..rr {
        ws.pre_prod[idx] = T::one();
        ws.pre_d[idx] = T::zero();
        ws.suf_prod[n_dims * rr + idx] = T::one();
        ws.suf_d[n_dims * rr + idx] = T::zero();
    }
    for n in 0..n_dims {
        for idx in 0..rr {
            let a = ws.p0[n * rr + idx];
            let b = ws.p1[n * rr + idx];
            let pp = ws.pre_prod[n * rr + idx];
            let pd = ws.pre_d[n * rr + idx];
            ws.pre_prod[(n + 1) * rr + idx] = pp * a;
            ws.pre_d[(n + 1) * rr + idx] = pd * a + pp * b;
        }
    }
    for n in (0..n_dims).rev() {
        for idx in 0..rr {
            let a = ws.p0[n * rr + idx];
            let b = ws.p1[n * rr + idx];
            let sp = ws.suf_prod[(n + 1) * rr + idx];
            let sd = ws.suf_d[(n + 1) * rr + idx];
            ws.suf_prod[n * rr + idx] = sp * a;
            ws.suf_d[n * rr + idx] = sd * a + sp * b;
        }
    }
    let vgram = out_gram(model);
    let w_all = &ws.pre_d[n_dims * rr..(n_dims + 1) * rr];
    let energy = vgram.iter().zip(w_all).fold(T::zero(), |acc, (&v, &w)| acc + v * w);

    let two_scale = T::of(2.0) * scale;
    // ∂E/∂v_r = 2 Σ_s W_rs v_s.
    let m = model.output_dim();
    for r in 0..rank {
        for s in 0..rank {
            let w = w_all[r * rank + s] * two_scale;
            if w == T::zero() {
                continue;
            }
            let vs = model.out_vector(s);
            for j in 0..m {
                grad.out[r * m + j] += w * vs[j];
            }
        }
    }
    // ∂E/∂c_{n,r} = 2 Σ_s (α^n_rs G1 c_{n,s} + β^n_rs G0 c_{n,s}),
    // α^n = V ∘ Π_{m≠n} P0[m], β^n = V ∘ D_{≠n}.
    let mut alpha = vec![T::zero(); rr];
    let mut beta = vec![T::zero(); rr];
    for n in 0..n_dims {
        for idx in 0..rr {
            let pp = ws.pre_prod[n * rr + idx];
            let pd = ws.pre_d[n * rr + idx];
            let sp = ws.suf_prod[(n + 1) * rr + idx];
            let sd = ws.suf_d[(n + 1) * rr + idx];
            alpha[idx] = vgram[idx] * pp * sp * two_scale;
            beta[idx] = vgram[idx] * (pd * sp + pp * sd) * two_scale;
        }
        // Recompute H0/H1 for dimension n (the workspace holds only the last).
        let (g0, g1) = bx.dim(n);
        let act = g0.active();
        let k = model.space(n).num_basis();
        let kmax = ws.kmax;
        let block = model.dim_block(n);
        for r in 0..rank {
            let c = &block[r * k..(r + 1) * k];
            g0.apply_into(c, &mut ws.h0[r * kmax..r * kmax + k]);
            g1.apply_into(c, &mut ws.h1[r * kmax..r * kmax + k]);
        }
        let off = model.dim_offset(n);
        for r in 0..rank {
            let gslice = &mut grad.coeffs[off + r * k + act.start..off + r * k + act.end];
            for s in 0..rank {
                let a = alpha[r * rank + s];
                let b = beta[r * rank + s];
                if a == T::zero() && b == T::zero() {
                    continue;
                }
                let h0s = &ws.h0[s * kmax + act.start..s * kmax + act.end];
                let h1s = &ws.h1[s * kmax + act.start..s * kmax + act.end];
                for ((gv, &x1), &x0) in gslice.iter_mut().zip(h1s).zip(h0s) {
                    *gv += a * x1 + b * x0;
                }
            }
        }
    }
    energy
}

/// Dirichlet energy `∫_{[0,1]^N} ‖∇g‖²_F`.
pub fn dirichlet_energy<T: Scalar>(model: &TpbsModel<T>) -> T {
    EnergyRegions::global(model.spaces()).energy(model)
}

/// Localized Dirichlet energy: sum of the box integrals around `cfg.points`.
pub fn local_dirichlet_energy<T: Scalar>(model: &TpbsModel<T>, cfg: &LdeConfig<T>) -> Result<T, EnergyError> {
    Ok(EnergyRegions::local(model.spaces(), cfg)?.energy(model))
}

/// Gradient of the global energy (`cfg = None`) or of the localized energy.
/// Returns the energy value alongside.
pub fn grad_energy<T: Scalar>(
    model: &TpbsModel<T>,
    cfg: Option<&LdeConfig<T>>,
) -> Result<(T, ModelGrad<T>), EnergyError> {
    let regions = match cfg {
        None => EnergyRegions::global(model.spaces()),
        Some(c) => EnergyRegions::local(model.spaces(), c)?,
    };
    let mut g = ModelGrad::zeros_like(model);
    let e = regions.energy_and_grad(model, T::one(), &mut g);
    Ok((e, g))
}

/// Normalized decomposition `DE = sᵀ Z s`, `Z = A⁰ ∘ A¹`.
///
/// Entries whose cosine or ratio would divide by an inner product of
/// magnitude `≤ tol_den` are marked degenerate and carry no value.
#[derive(Debug, Clone, PartialEq)]
pub struct DeDecomposition<T: Scalar> {
    pub rank: usize,
    pub s: Vec<T>,
    /// Row-major `R × R`; `None` marks a degenerate pair.
    pub a0: Vec<Option<T>>,
    pub a1: Vec<Option<T>>,
    pub z: Vec<Option<T>>,
}

impl<T: Scalar> DeDecomposition<T> {
    pub fn is_degenerate(&self) -> bool {
        self.z.iter().any(Option::is_none)
    }

    pub fn degenerate_pairs(&self) -> Vec<(usize, usize)> {
        let r = self.rank;
        (0..r * r)
            .filter(|&i| self.z[i].is_none())
            .map(|i| (i / r, i % r))
            .collect()
    }

    /// `sᵀ Z s`, if no entry is degenerate.
    pub fn quadratic_form(&self) -> Option<T> {
        let r = self.rank;
        let mut acc = T::zero();
        for i in 0..r {
            for j in 0..r {
                acc += self.s[i] * self.z[i * r + j]? * self.s[j];
            }
        }
        Some(acc)
    }

    /// Eigenvalues of `Z` in ascending order, if no entry is degenerate.
    pub fn z_eigenvalues(&self) -> Option<Vec<f64>> {
        let r = self.rank;
        let vals: Option<Vec<f64>> = self.z.iter().map(|v| v.map(|x| x.to_f64_lossy())).collect();
        let m = DMatrix::from_row_slice(r, r, &vals?);
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        Some(ev)
    }
}

pub const DEFAULT_TOL_DEN: f64 = 1e-12;

/// Computes `s`, `A⁰`, `A¹` and `Z` over the unit cube.
pub fn de_decomposition<T: Scalar>(model: &TpbsModel<T>, tol_den: T) -> Result<DeDecomposition<T>, EnergyError> {
    let n_dims = model.input_dim();
    let rank = model.rank();
    let rr = rank * rank;
    let bx = BoxGrams::unit(model.spaces());
    let mut ws = PairWorkspace::new(model);
    for n in 0..n_dims {
        dim_pairs(model, &bx, n, &mut ws);
    }
    let vgram = out_gram(model);
    for r in 0..rank {
        if vgram[r * rank + r] <= T::zero() {
            return Err(EnergyError::ZeroOutput(r));
        }
        for n in 0..n_dims {
            if ws.p0[n * rr + r * rank + r] <= T::zero() {
                return Err(EnergyError::ZeroFactor { dim: n, component: r });
            }
        }
    }
    let s: Vec<T> = (0..rank)
        .map(|r| {
            (0..n_dims).fold(vgram[r * rank + r].sqrt(), |acc, n| acc * ws.p0[n * rr + r * rank + r].sqrt())
        })
        .collect();
    let mut a0 = vec![None; rr];
    let mut a1 = vec![None; rr];
    let mut z = vec![None; rr];
    for r in 0..rank {
        for q in 0..rank {
            let idx = r * rank + q;
            let vrs = vgram[idx];
            let mut degenerate = vrs.abs() <= tol_den;
            let mut cos = vrs / (vgram[r * rank + r] * vgram[q * rank + q]).sqrt();
            let mut ratio = T::zero();
            for n in 0..n_dims {
                let p = ws.p0[n * rr + idx];
                if p.abs() <= tol_den {
                    degenerate = true;
                    break;
                }
                cos *= p / (ws.p0[n * rr + r * rank + r] * ws.p0[n * rr + q * rank + q]).sqrt();
                ratio += ws.p1[n * rr + idx] / p;
            }
            if !degenerate {
                a0[idx] = Some(cos);
                a1[idx] = Some(ratio);
                z[idx] = Some(cos * ratio);
            }
        }
    }
    Ok(DeDecomposition { rank, s, a0, a1, z })
}
