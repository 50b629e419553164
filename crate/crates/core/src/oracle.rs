//! Slow reference implementations used to cross-check the fast paths.
//!
//! Nothing here shares code with the spline, energy or marginalization
//! modules: basis functions come from the plain Cox–de Boor recursion,
//! quadrature nodes from the Golub–Welsch eigenvalue method, and integrals
//! are brute-force sums over tensor grids of points.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::DensityModel;
use crate::model::{ModelGrad, TpbsModel};
use crate::spline::SplineSpace;

/// Gauss–Legendre nodes and weights on `[-1, 1]` from the eigen-decomposition
/// of the Jacobi matrix.
pub fn golub_welsch(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(order, order);
    for i in 1..order {
        let k = i as f64;
        let b = k / (4.0 * k * k - 1.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `B_{k,p}(x)` by the textbook recursion. The last nonempty knot interval
/// is closed on the right so that the basis is defined at `x = 1`.
pub fn cox_de_boor(knots: &[f64], k: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[k], knots[k + 1]);
        let last = *knots.last().expect("knots");
        let inside = (a <= x && x < b) || (x == last && b == last && a < b);
        return if inside { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[k + p] - knots[k];
    if d1 > 0.0 {
        v += (x - knots[k]) / d1 * cox_de_boor(knots, k, p - 1, x);
    }
    let d2 = knots[k + p + 1] - knots[k + 1];
    if d2 > 0.0 {
        v += (knots[k + p + 1] - x) / d2 * cox_de_boor(knots, k + 1, p - 1, x);
    }
    v
}

/// `B'_{k,p}(x)`.
pub fn cox_de_boor_deriv(knots: &[f64], k: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return 0.0;
    }
    let pf = p as f64;
    let mut v = 0.0;
    let d1 = knots[k + p] - knots[k];
    if d1 > 0.0 {
        v += pf / d1 * cox_de_boor(knots, k, p - 1, x);
    }
    let d2 = knots[k + p + 1] - knots[k + 1];
    if d2 > 0.0 {
        v -= pf / d2 * cox_de_boor(knots, k + 1, p - 1, x);
    }
    v
}

/// `(g_{n,r}(t), g'_{n,r}(t))` via the recursion.
pub fn factor_value_deriv(model: &TpbsModel<f64>, n: usize, r: usize, t: f64) -> (f64, f64) {
    let space = model.space(n);
    let knots = space.knots();
    let p = space.degree();
    let c = model.factor(n, r);
    let mut v = 0.0;
    let mut d = 0.0;
    for (k, &ck) in c.iter().enumerate() {
        v += ck * cox_de_boor(knots, k, p, t);
        d += ck * cox_de_boor_deriv(knots, k, p, t);
    }
    (v, d)
}

/// Model output via the recursion.
pub fn forward(model: &TpbsModel<f64>, x: &[f64]) -> Vec<f64> {
    let m = model.output_dim();
    let mut y = vec![0.0; m];
    for r in 0..model.rank() {
        let prod: f64 = (0..model.input_dim())
            .map(|n| factor_value_deriv(model, n, r, x[n]).0)
            .product();
        for (yi, vi) in y.iter_mut().zip(model.out_vector(r)) {
            *yi += vi * prod;
        }
    }
    y
}

/// Quadrature nodes on `[a, b]` exact for polynomials of degree
/// `2 * order - 1` on every piece between consecutive `breaks`.
fn piecewise_nodes(breaks: &[f64], a: f64, b: f64, order: usize) -> Vec<(f64, f64)> {
    let (gx, gw) = golub_welsch(order);
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&t| t > a && t < b).collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let rad = 0.5 * (hi - lo);
        for (x, wt) in gx.iter().zip(&gw) {
            out.push((mid + rad * x, rad * wt));
        }
    }
    out
}

/// `∫_box ‖∇g‖²_F` by tensor-product Gauss quadrature, evaluating the
/// gradient pointwise. `lower`/`upper` default to the unit cube.
pub fn quadrature_energy(model: &TpbsModel<f64>, lower: Option<&[f64]>, upper: Option<&[f64]>) -> f64 {
    let n_dims = model.input_dim();
    let rank = model.rank();
    let m = model.output_dim();
    // Per dimension: nodes, weights and the factor value/derivative tables.
    let mut grids: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n_dims);
    let mut vals: Vec<Vec<Vec<(f64, f64)>>> = Vec::with_capacity(n_dims);
    for n in 0..n_dims {
        let a = lower.map_or(0.0, |l| l[n]);
        let b = upper.map_or(1.0, |u| u[n]);
        if b <= a {
            return 0.0;
        }
        let space = model.space(n);
        let nodes = piecewise_nodes(space.knots(), a, b, space.degree() + 2);
        let table = nodes
            .iter()
            .map(|&(t, _)| (0..rank).map(|r| factor_value_deriv(model, n, r, t)).collect())
            .collect();
        grids.push(nodes);
        vals.push(table);
    }
    let mut idx = vec![0usize; n_dims];
    let mut total = 0.0;
    let mut grad = vec![0.0; m * n_dims];
    loop {
        let mut w = 1.0;
        for n in 0..n_dims {
            w *= grids[n][idx[n]].1;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for r in 0..rank {
            for q in 0..n_dims {
                let mut term = vals[q][idx[q]][r].1;
                for n in 0..n_dims {
                    if n != q {
                        term *= vals[n][idx[n]][r].0;
                    }
                }
                for (j, vj) in model.out_vector(r).iter().enumerate() {
                    grad[j * n_dims + q] += vj * term;
                }
            }
        }
        total += w * grad.iter().map(|g| g * g).sum::<f64>();
        // Odometer increment.
        let mut d = 0;
        loop {
            if d == n_dims {
                return total;
            }
            idx[d] += 1;
            if idx[d] < grids[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Sum of box energies around `points`, each box clipped to the unit cube.
pub fn quadrature_local_energy(model: &TpbsModel<f64>, points: &[Vec<f64>], rho: f64) -> f64 {
    points
        .iter()
        .map(|x| {
            let lo: Vec<f64> = x.iter().map(|&v| (v - rho).max(0.0)).collect();
            let hi: Vec<f64> = x.iter().map(|&v| (v + rho).min(1.0)).collect();
            quadrature_energy(model, Some(&lo), Some(&hi))
        })
        .sum()
}

/// Brute-force marginalization over the unobserved coordinates. With a
/// density this is `∫ g p / ∫ p`; without one the measure is uniform.
pub fn quadrature_marginal(
    model: &TpbsModel<f64>,
    density: Option<&DensityModel>,
    x: &[f64],
    observed: &[bool],
) -> Vec<f64> {
    let n_dims = model.input_dim();
    let missing: Vec<usize> = (0..n_dims).filter(|&n| !observed[n]).collect();
    let grids: Vec<Vec<(f64, f64)>> = missing
        .iter()
        .map(|&n| {
            let space = model.space(n);
            let mut breaks = space.knots().to_vec();
            if let Some(d) = density {
                let k = d.bins(n);
                breaks.extend((1..k).map(|b| b as f64 / k as f64));
            }
            piecewise_nodes(&breaks, 0.0, 1.0, space.degree() + 2)
        })
        .collect();
    let m = model.output_dim();
    let mut num = vec![0.0; m];
    let mut den = 0.0;
    let mut point = x.to_vec();
    let mut idx = vec![0usize; missing.len()];
    loop {
        let mut w = 1.0;
        for (i, &n) in missing.iter().enumerate() {
            let (t, wt) = grids[i][idx[i]];
            point[n] = t;
            w *= wt;
        }
        let pw = density.map_or(1.0, |d| d.eval(&point));
        let y = forward(model, &point);
        for (a, b) in num.iter_mut().zip(&y) {
            *a += w * pw * b;
        }
        den += w * pw;
        let mut d = 0;
        loop {
            if d == missing.len() {
                return num.iter().map(|v| v / den).collect();
            }
            idx[d] += 1;
            if idx[d] < grids[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Central finite differences of `f` with respect to every parameter.
pub fn finite_difference_grad<F>(model: &TpbsModel<f64>, step: f64, mut f: F) -> ModelGrad<f64>
where
    F: FnMut(&TpbsModel<f64>) -> f64,
{
    let mut g = ModelGrad::zeros_like(model);
    let mut probe = model.clone();
    for i in 0..model.coeffs().len() {
        let orig = model.coeffs()[i];
        probe.coeffs_mut()[i] = orig + step;
        let fp = f(&probe);
        probe.coeffs_mut()[i] = orig - step;
        let fm = f(&probe);
        probe.coeffs_mut()[i] = orig;
        g.coeffs[i] = (fp - fm) / (2.0 * step);
    }
    for i in 0..model.out_vectors().len() {
        let orig = model.out_vectors()[i];
        probe.out_vectors_mut()[i] = orig + step;
        let fp = f(&probe);
        probe.out_vectors_mut()[i] = orig - step;
        let fm = f(&probe);
        probe.out_vectors_mut()[i] = orig;
        g.out[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_error(a: &ModelGrad<f64>, b: &ModelGrad<f64>, floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / b.norm().max(floor)
}

/// Size limits for [`random_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelLimits {
    pub max_dim: usize,
    pub max_rank: usize,
    pub max_basis: usize,
    pub max_degree: usize,
    pub max_outputs: usize,
}

impl Default for ModelLimits {
    fn default() -> Self {
        ModelLimits {
            max_dim: 4,
            max_rank: 5,
            max_basis: 8,
            max_degree: 3,
            max_outputs: 2,
        }
    }
}

/// A model with random sizes within `limits` and coefficients in `[-1, 1]`.
/// Knots are open-uniform or, with probability one half, have random
/// interior positions.
pub fn random_model(seed: u64, limits: ModelLimits) -> TpbsModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_dims = rng.random_range(1..=limits.max_dim);
    let rank = rng.random_range(1..=limits.max_rank);
    let m = rng.random_range(1..=limits.max_outputs);
    let spaces: Vec<SplineSpace<f64>> = (0..n_dims)
        .map(|_| {
            let p = rng.random_range(0..=limits.max_degree);
            let k = rng.random_range((p + 1).max(2)..=limits.max_basis.max(p + 2));
            if rng.random_bool(0.5) {
                SplineSpace::new(k, p).expect("valid space")
            } else {
                let interior = k - p - 1;
                let mut inner: Vec<f64> = (0..interior).map(|_| rng.random_range(0.02..0.98)).collect();
                inner.sort_by(f64::total_cmp);
                let mut knots = vec![0.0; p + 1];
                knots.extend(inner);
                knots.extend(std::iter::repeat_n(1.0, p + 1));
                SplineSpace::from_knots(p, knots).unwrap_or_else(|_| SplineSpace::new(k, p).expect("valid space"))
            }
        })
        .collect();
    let total: usize = spaces.iter().map(|s| s.num_basis() * rank).sum();
    let coeffs = (0..total).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = (0..rank * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    TpbsModel::from_parts(spaces, rank, m, coeffs, out).expect("consistent shapes")
}

/// A random point of `[0,1]^n`.
pub fn random_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}
