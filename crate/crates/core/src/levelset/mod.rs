//! Gaussian radial-basis level-set function on the element-centroid lattice.

mod pads;
mod slope;
mod stencil;

pub use pads::{SolidPads, PAD_LEVEL};
pub use slope::{edge_sum, slope_constants, solve_kappa, theta_sum, SlopeBounds};
pub use stencil::RbfStencil;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{CsrMatrix, LinearSolver, Point, SolverKind, SolverSettings};

/// Support radius of every RBF in element lengths.
pub const SUPPORT_RADIUS: f64 = 3.5;
pub(crate) const SUPPORT_RADIUS_SQ: f64 = SUPPORT_RADIUS * SUPPORT_RADIUS;
/// Number of lattice steps covered by the support along one axis.
pub(crate) const SUPPORT_CELLS: isize = 4;

/// `exp(-|x - c|^2)`, exactly zero beyond the support radius.
pub fn rbf_value(x: &Point, c: &Point) -> f64 {
    let r2: f64 = (0..3).map(|d| (x[d] - c[d]).powi(2)).sum();
    if r2 > SUPPORT_RADIUS_SQ {
        0.0
    } else {
        (-r2).exp()
    }
}

/// Logistic Heaviside approximation `1 / (1 + exp(-kappa phi))`.
pub fn heaviside(phi: f64, kappa: f64) -> f64 {
    let t = kappa * phi;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `dH/dphi = kappa H (1 - H)`.
pub fn heaviside_derivative(phi: f64, kappa: f64) -> f64 {
    let h = heaviside(phi, kappa);
    let hm = heaviside(-phi, kappa);
    kappa * h * hm
}

/// Projected density `rho0 + (1 - rho0) H(phi)`.
pub fn density_from_lsf(phi: f64, kappa: f64, rho0: f64) -> f64 {
    rho0 + (1.0 - rho0) * heaviside(phi, kappa)
}

pub fn density_derivative(phi: f64, kappa: f64, rho0: f64) -> f64 {
    (1.0 - rho0) * heaviside_derivative(phi, kappa)
}

/// Level-set function `phi(x) = sum_i exp(-|x - x_i|^2) w_i - theta` with one
/// RBF per element centroid `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfLevelSet {
    dims: Vec<usize>,
    pub weights: Vec<f64>,
    pub theta: f64,
    pub kappa: f64,
    pub w_max: f64,
}

impl RbfLevelSet {
    pub fn new(dims: &[usize], weights: Vec<f64>, w_max: f64) -> Result<Self> {
        if !(1..=3).contains(&dims.len()) || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid lattice dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if weights.len() != n {
            return Err(Error::invalid(format!(
                "{} weights for a lattice of {n} centroids",
                weights.len()
            )));
        }
        if !(w_max > 0.0) {
            return Err(Error::invalid(format!("w_max must be positive, got {w_max}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            theta: 0.0,
            kappa: 1.0,
            w_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn support_radius(&self) -> f64 {
        SUPPORT_RADIUS
    }

    pub fn centroid(&self, i: usize) -> Point {
        let ijk = lattice_ijk(&self.dims, i);
        let mut c = [0.0; 3];
        for d in 0..self.dim() {
            c[d] = ijk[d] as f64 + 0.5;
        }
        c
    }

    /// Calls `f(i, N_i(x), x - x_i)` for every centroid within the support of `x`.
    pub fn for_each_rbf(&self, x: &Point, mut f: impl FnMut(usize, f64, [f64; 3])) {
        let dim = self.dim();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for d in 0..dim {
            let n = self.dims[d] as isize;
            let c = (x[d] - 0.5).floor() as isize;
            let l = (c - SUPPORT_CELLS + 1).max(0);
            let h = (c + SUPPORT_CELLS).min(n - 1);
            if l > h {
                return;
            }
            lo[d] = l as usize;
            hi[d] = h as usize;
        }
        let nx = self.dims[0];
        let ny = if dim > 1 { self.dims[1] } else { 1 };
        for k in lo[2]..=hi[2] {
            let dz = if dim > 2 { x[2] - (k as f64 + 0.5) } else { 0.0 };
            for j in lo[1]..=hi[1] {
                let dy = if dim > 1 { x[1] - (j as f64 + 0.5) } else { 0.0 };
                let r2yz = dy * dy + dz * dz;
                if r2yz > SUPPORT_RADIUS_SQ {
                    continue;
                }
                for i in lo[0]..=hi[0] {
                    let dx = x[0] - (i as f64 + 0.5);
                    let r2 = dx * dx + r2yz;
                    if r2 <= SUPPORT_RADIUS_SQ {
                        f(i + nx * (j + ny * k), (-r2).exp(), [dx, dy, dz]);
                    }
                }
            }
        }
    }

    /// Unshifted sum `phi0(x) = sum_i N_i(x) w_i`.
    pub fn phi0(&self, x: &Point) -> f64 {
        let mut s = 0.0;
        self.for_each_rbf(x, |i, n, _| s += n * self.weights[i]);
        s
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.phi0(x) - self.theta
    }

    /// `phi(x)` and its spatial gradient.
    pub fn eval_with_gradient(&self, x: &Point) -> (f64, [f64; 3]) {
        let mut s = 0.0;
        let mut g = [0.0; 3];
        self.for_each_rbf(x, |i, n, r| {
            let wn = n * self.weights[i];
            s += wn;
            for d in 0..3 {
                g[d] -= 2.0 * r[d] * wn;
            }
        });
        (s - self.theta, g)
    }

    pub fn density(&self, x: &Point, rho0: f64) -> f64 {
        density_from_lsf(self.eval(x), self.kappa, rho0)
    }

    pub fn clamp_weights(&mut self) {
        let m = self.w_max;
        self.weights.iter_mut().for_each(|w| *w = w.clamp(-m, m));
    }
}

/// Output of the level-set extraction from a density field.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub lsf: RbfLevelSet,
    pub fit_residual: f64,
    /// Weights that exceeded `w_max` and were clamped.
    pub clamped: usize,
    /// Material volume fraction after the shift, on the threshold points.
    pub volume_fraction: f64,
}

/// Gauss points per axis and element on which the shift is solved.
pub const THRESHOLD_POINTS: usize = 8;

/// `phi0` at the `g^D` Gauss points of every lattice element, with the
/// physical quadrature weights, element by element.
pub fn lattice_phi0(lsf: &RbfLevelSet, points_per_axis: usize) -> (Vec<f64>, Vec<f64>) {
    let dims = lsf.dims();
    let dim = dims.len();
    let rule = crate::fem::QuadratureRule::gauss(points_per_axis, dim);
    let scale = 0.5f64.powi(dim as i32);
    let n: usize = dims.iter().product();
    let phi0: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|e| {
            let ijk = lattice_ijk(dims, e);
            rule.points.iter().map(move |xi| {
                let mut x = [0.0; 3];
                for d in 0..dim {
                    x[d] = ijk[d] as f64 + 0.5 * (xi[d] + 1.0);
                }
                lsf.phi0(&x)
            })
        })
        .collect();
    let weights = (0..n).flat_map(|_| rule.weights.iter().map(|w| w * scale)).collect();
    (phi0, weights)
}

/// Fit a level set to `density`, bound its weights by `w_max`, and shift it so
/// that the material volume on a [`THRESHOLD_POINTS`]-point Gauss rule per
/// element, counting `pads` as solid, equals `vf`.
pub fn extract_level_set(
    dims: &[usize],
    density: &[f64],
    vf: f64,
    kappa: f64,
    w_max: f64,
    pads: &SolidPads,
) -> Result<Extraction> {
    let fit = fit_weights(dims, density)?;
    let mut lsf = RbfLevelSet::new(dims, fit.weights, w_max)?;
    let clamped = lsf.weights.iter().filter(|w| w.abs() > w_max).count();
    lsf.clamp_weights();
    lsf.kappa = kappa;
    let (mut phi0, wts) = lattice_phi0(&lsf, THRESHOLD_POINTS);
    pads.mask(&mut phi0, THRESHOLD_POINTS.pow(dims.len() as u32));
    lsf.theta = find_threshold(&phi0, &wts, vf, kappa)?;
    let total: f64 = wts.iter().sum();
    let volume = phi0
        .iter()
        .zip(&wts)
        .map(|(&p, &w)| w * heaviside(p - lsf.theta, kappa))
        .sum::<f64>()
        / total;
    Ok(Extraction {
        lsf,
        fit_residual: fit.residual,
        clamped,
        volume_fraction: volume,
    })
}

pub(crate) fn lattice_ijk(dims: &[usize], i: usize) -> [usize; 3] {
    match dims.len() {
        1 => [i, 0, 0],
        2 => [i % dims[0], i / dims[0], 0],
        _ => [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])],
    }
}

/// Interpolation matrix `Phi_ij = N_j(x_i)` over the centroid lattice.
pub fn interpolation_matrix(dims: &[usize]) -> Result<CsrMatrix> {
    let n: usize = dims.iter().product();
    let probe = RbfLevelSet::new(dims, vec![0.0; n], 1.0)?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut cols = Vec::new();
        probe.for_each_rbf(&probe.centroid(i), |j, _, _| cols.push(j));
        rows.push(cols);
    }
    let mut m = CsrMatrix::from_row_columns(rows);
    for i in 0..n {
        let ci = probe.centroid(i);
        let mut entries = Vec::new();
        probe.for_each_rbf(&ci, |j, v, _| entries.push((j, v)));
        for (j, v) in entries {
            m.add(i, j, v);
        }
    }
    Ok(m)
}

/// Result of interpolating a density field with RBFs.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: Vec<f64>,
    /// `max |Phi w - rho|`.
    pub residual: f64,
}

/// Solve `Phi w = rho` so that the level set reproduces `density` at every centroid.
pub fn fit_weights(dims: &[usize], density: &[f64]) -> Result<FitResult> {
    let n: usize = dims.iter().product();
    if density.len() != n {
        return Err(Error::invalid(format!(
            "{} densities for a lattice of {n} centroids",
            density.len()
        )));
    }
    let phi = interpolation_matrix(dims)?;
    let mut solver = LinearSolver::new(SolverSettings {
        kind: SolverKind::Auto,
        pcg_tolerance: 1e-12,
        ..SolverSettings::default()
    });
    let weights = solver.solve(&phi, density)?;
    let r = phi.mul_vec(&weights);
    let residual = r.iter().zip(density).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if !(residual <= 1e-6) {
        return Err(Error::NotConverged { residual });
    }
    Ok(FitResult { weights, residual })
}

/// Solve for the shift `theta` such that the weighted mean of
/// `H(phi0_k - theta)` over the points equals `vf`.
pub fn find_threshold(phi0: &[f64], weights: &[f64], vf: f64, kappa: f64) -> Result<f64> {
    if phi0.is_empty() || phi0.len() != weights.len() {
        return Err(Error::invalid("threshold needs matching non-empty point data"));
    }
    if !(vf > 0.0 && vf < 1.0) || !(kappa > 0.0) {
        return Err(Error::invalid(format!("vf={vf}, kappa={kappa} out of range")));
    }
    let total: f64 = weights.iter().sum();
    let residual = |theta: f64| -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for (&p, &w) in phi0.iter().zip(weights) {
            v += w * heaviside(p - theta, kappa);
            dv -= w * heaviside_derivative(p - theta, kappa);
        }
        (v / total - vf, dv / total)
    };
    const TOL: f64 = 1e-10;
    // `+inf` entries are held solid and take no part in the start or the bracket
    let finite = || phi0.iter().zip(weights).filter(|(p, _)| p.is_finite());
    let finite_total: f64 = finite().map(|(_, w)| w).sum();
    if finite_total == 0.0 {
        return Err(Error::invalid("threshold needs at least one finite point"));
    }
    let mut theta = finite().map(|(p, w)| p * w).sum::<f64>() / finite_total;
    for _ in 0..50 {
        let (r, dr) = residual(theta);
        if r.abs() <= TOL {
            return Ok(theta);
        }
        if dr == 0.0 || !dr.is_finite() {
            break;
        }
        let next = theta - r / dr;
        if !next.is_finite() {
            break;
        }
        theta = next;
    }
    // residual is decreasing in theta; these bounds saturate H on every point
    let pmin = finite().map(|(p, _)| *p).fold(f64::INFINITY, f64::min);
    let pmax = finite().map(|(p, _)| *p).fold(f64::NEG_INFINITY, f64::max);
    let margin = 40.0 / kappa;
    let (mut lo, mut hi) = (pmin - margin, pmax + margin);
    if residual(lo).0 < 0.0 || residual(hi).0 > 0.0 {
        return Err(Error::NoSolution(format!(
            "volume fraction {vf} not attainable by shifting the level set"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (r, _) = residual(mid);
        if r.abs() <= TOL {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let r = residual(mid).0;
    if r.abs() <= 1e-6 {
        Ok(mid)
    } else {
        Err(Error::NotConverged { residual: r.abs() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rbf_values() {
        let c = [1.5, 2.5, 0.0];
        assert_eq!(rbf_value(&c, &c), 1.0);
        assert!((rbf_value(&[2.5, 2.5, 0.0], &c) - 0.36787944117144233).abs() < 1e-15);
        assert_eq!(rbf_value(&[5.5, 2.5, 0.0], &c), 0.0);
        // boundary of the support is included
        assert!(rbf_value(&[5.0, 2.5, 0.0], &c) > 0.0);
    }

    #[test]
    fn lattice_sums() {
        // 1D lattice, all weights w at a lattice point
        let w = 0.5;
        let l1 = RbfLevelSet::new(&[21], vec![w; 21], 1.0).unwrap();
        assert!((l1.eval(&[10.5, 0.0, 0.0]) - 1.7726372 * w).abs() < 1e-6);
        let l2 = RbfLevelSet::new(&[15, 15], vec![1.0; 225], 1.0).unwrap();
        let v = l2.eval(&[7.5, 7.5, 0.0]);
        // truncated at radius 3.5, so slightly below the square of the 1D sum
        let full = 1.7726372f64 * 1.7726372;
        assert!(v < full && full - v < 1e-3, "{v}");
        let zero = RbfLevelSet::new(&[4, 4], vec![0.0; 16], 1.0).unwrap();
        assert_eq!(zero.eval(&[1.3, 2.2, 0.0]), 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let w: Vec<f64> = (0..48).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
        let l = RbfLevelSet::new(&[4, 3, 4], w, 1.0).unwrap();
        let x = [1.7, 1.2, 2.9];
        let (_, g) = l.eval_with_gradient(&x);
        let h = 1e-6;
        for d in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let fd = (l.eval(&xp) - l.eval(&xm)) / (2.0 * h);
            assert!((fd - g[d]).abs() < 1e-8);
        }
    }

    #[test]
    fn heaviside_properties() {
        assert_eq!(heaviside(0.0, 25.0), 0.5);
        assert!((1.0 - heaviside(40.0, 1.0)).abs() < 1e-15);
        assert_eq!(heaviside(1e6, 25.0), 1.0);
        assert_eq!(heaviside(-1e6, 25.0), 0.0);
        assert!(heaviside_derivative(1e6, 25.0) == 0.0);
        let rho0 = 1e-8;
        assert!((density_from_lsf(0.0, 25.0, rho0) - (1.0 + rho0) / 2.0).abs() < 1e-16);
        assert_eq!(density_from_lsf(-1e3, 25.0, rho0), rho0);
        assert_eq!(density_from_lsf(1e3, 25.0, rho0), 1.0);
    }

    proptest! {
        #[test]
        fn heaviside_symmetry(phi in -50.0f64..50.0, kappa in 0.1f64..100.0) {
            prop_assert!((heaviside(phi, kappa) + heaviside(-phi, kappa) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn heaviside_derivative_fd(phi in -0.5f64..0.5, kappa in 1.0f64..40.0) {
            let h = 1e-6;
            let fd = (heaviside(phi + h, kappa) - heaviside(phi - h, kappa)) / (2.0 * h);
            prop_assert!((fd - heaviside_derivative(phi, kappa)).abs() < 1e-6 * kappa);
        }
    }

    #[test]
    fn fit_single_element() {
        let f = fit_weights(&[1, 1], &[0.7]).unwrap();
        assert!((f.weights[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn fit_uniform_interior() {
        let c = 0.4;
        let f = fit_weights(&[30, 30], &vec![c; 900]).unwrap();
        let expected = c / theta_sum().powi(2);
        let centre = 15 + 30 * 15;
        assert!(
            (f.weights[centre] - expected).abs() < 2e-3 * expected,
            "{} vs {expected}",
            f.weights[centre]
        );
    }

    #[test]
    fn fit_roundtrip() {
        let dims = [12, 9];
        let rho: Vec<f64> = (0..108).map(|i| (((i * 37) % 17) as f64 / 16.0).max(1e-3)).collect();
        let f = fit_weights(&dims, &rho).unwrap();
        assert!(f.residual <= 1e-10);
        let l = RbfLevelSet::new(&dims, f.weights, 10.0).unwrap();
        for (i, &r) in rho.iter().enumerate() {
            assert!((l.eval(&l.centroid(i)) - r).abs() < 1e-10);
        }
    }

    #[test]
    fn threshold_uniform_field() {
        let kappa = 25.0;
        for vf in [0.3, 0.5, 0.7] {
            let theta = find_threshold(&[0.2; 10], &[0.1; 10], vf, kappa).unwrap();
            let exact = 0.2 - (vf / (1.0 - vf)).ln() / kappa;
            assert!((theta - exact).abs() < 1e-9, "{theta} vs {exact}");
        }
    }

    #[test]
    fn threshold_two_level_field() {
        let phi0: Vec<f64> = (0..100).map(|i| if i < 50 { 1.0 } else { -1.0 }).collect();
        let theta = find_threshold(&phi0, &[1.0; 100], 0.5, 1e3).unwrap();
        assert!(theta > -1.0 && theta < 1.0);
        let v: f64 = phi0.iter().map(|p| heaviside(p - theta, 1e3)).sum::<f64>() / 100.0;
        assert!((v - 0.5).abs() <= 1e-6);
        // a smooth field needs the bisection fallback only when Newton stalls
        let phi0: Vec<f64> = (0..200).map(|i| (i as f64 * 0.05).sin()).collect();
        let theta = find_threshold(&phi0, &[1.0; 200], 0.25, 25.0).unwrap();
        let v: f64 = phi0.iter().map(|p| heaviside(p - theta, 25.0)).sum::<f64>() / 200.0;
        assert!((v - 0.25).abs() <= 1e-9);
    }

    #[test]
    fn threshold_rejects_bad_fraction() {
        assert!(find_threshold(&[0.0], &[1.0], 1.0, 25.0).is_err());
    }
}
