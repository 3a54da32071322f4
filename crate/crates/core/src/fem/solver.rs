//! Linear solvers for the reduced stiffness system.

use std::hash::{Hash, Hasher};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Col, Par, Side};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Largest relative residual accepted from a stalled refinement.
const REFINE_ACCEPT: f64 = 1e-8;

/// Which solver to use for `K u = f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Sparse Cholesky up to [`SolverSettings::direct_dof_limit`] unknowns, PCG above.
    #[default]
    Auto,
    Direct,
    Pcg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub kind: SolverKind,
    pub pcg_tolerance: f64,
    pub pcg_max_iterations: usize,
    pub direct_dof_limit: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            pcg_tolerance: 1e-8,
            pcg_max_iterations: 20_000,
            direct_dof_limit: 300_000,
        }
    }
}

/// Solver with a cached symbolic factorization, reused while the sparsity
/// pattern stays the same (e.g. across optimizer iterations).
#[derive(Default)]
pub struct LinearSolver {
    pub settings: SolverSettings,
    symbolic: Option<(u64, SymbolicLlt<usize>)>,
    warm_start: Option<Vec<f64>>,
}

impl std::fmt::Debug for LinearSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSolver")
            .field("settings", &self.settings)
            .field("cached_pattern", &self.symbolic.as_ref().map(|s| s.0))
            .finish()
    }
}

fn pattern_key(k: &CsrMatrix) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    k.n().hash(&mut h);
    k.row_ptr().hash(&mut h);
    k.col_idx().hash(&mut h);
    h.finish()
}

impl LinearSolver {
    pub fn new(settings: SolverSettings) -> Self {
        Self {
            settings,
            symbolic: None,
            warm_start: None,
        }
    }

    pub fn uses_direct(&self, n: usize) -> bool {
        match self.settings.kind {
            SolverKind::Direct => true,
            SolverKind::Pcg => false,
            SolverKind::Auto => n <= self.settings.direct_dof_limit,
        }
    }

    /// Solve `K x = b` for symmetric positive definite `K`.
    pub fn solve(&mut self, k: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        if k.n() == 0 {
            return Ok(Vec::new());
        }
        if self.uses_direct(k.n()) {
            self.solve_direct(k, b)
        } else {
            let x0 = self.warm_start.take().filter(|x| x.len() == k.n());
            let x = pcg(
                k,
                b,
                x0.as_deref(),
                self.settings.pcg_tolerance,
                self.settings.pcg_max_iterations,
            )?;
            self.warm_start = Some(x.clone());
            Ok(x)
        }
    }

    fn factor(&mut self, k: &CsrMatrix, values: &[f64]) -> Result<Llt<usize, f64>> {
        let n = k.n();
        // sequential factorization keeps results bit-reproducible
        faer::set_global_parallelism(Par::Seq);
        // symmetric: the CSR arrays are also a valid CSC description
        let symbolic_ref = SymbolicSparseColMatRef::new_checked(n, n, k.row_ptr(), None, k.col_idx());
        let key = pattern_key(k);
        let symbolic = match &self.symbolic {
            Some((cached, s)) if *cached == key => s.clone(),
            _ => {
                let s = SymbolicLlt::try_new(symbolic_ref, Side::Lower).map_err(|e| Error::SolverFailure {
                    reason: format!("symbolic factorization: {e:?}"),
                    unconstrained_modes: None,
                })?;
                self.symbolic = Some((key, s.clone()));
                s
            }
        };
        let mat = SparseColMatRef::new(symbolic_ref, values);
        Llt::try_new_with_symbolic(symbolic, mat, Side::Lower).map_err(|e| Error::SolverFailure {
            reason: format!("Cholesky factorization failed ({e}); matrix is not positive definite"),
            unconstrained_modes: None,
        })
    }

    fn solve_direct(&mut self, k: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let llt = self.factor(k, k.values())?;
        let x = apply_llt(&llt, b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure {
                reason: "non-finite solution".into(),
                unconstrained_modes: None,
            });
        }
        Ok(x)
    }

    /// Conjugate gradients on `K` preconditioned by the Cholesky factor of
    /// `K + 1e-8 diag(K)`.
    ///
    /// For matrices that are positive definite but too ill-conditioned for a
    /// plain factorization, e.g. stiff material attached only through near-void
    /// elements.
    pub fn solve_shifted(&mut self, k: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        const SHIFT: f64 = 1e-8;
        let mut values = k.values().to_vec();
        let (rp, ci) = (k.row_ptr(), k.col_idx());
        for i in 0..k.n() {
            for p in rp[i]..rp[i + 1] {
                if ci[p] == i {
                    values[p] *= 1.0 + SHIFT;
                }
            }
        }
        let llt = self.factor(k, &values)?;
        match preconditioned_cg(k, b, None, tol, 1000, |r, z| z.copy_from_slice(&apply_llt(&llt, r))) {
            Ok(x) => Ok(x),
            Err(e) => {
                log::debug!("shifted-preconditioned CG failed ({e}); refining instead");
                refine(k, b, tol, |r| apply_llt(&llt, r))
            }
        }
    }
}

/// Stationary iterative refinement `x += M^-1 (b - K x)`, stopped at `tol` or
/// when the residual stops shrinking.
fn refine(k: &CsrMatrix, b: &[f64], tol: f64, solve: impl Fn(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
    let bnorm = norm(b);
    let mut x = vec![0.0; k.n()];
    let mut best = f64::INFINITY;
    let mut best_x = x.clone();
    let mut stalled = 0;
    for _ in 0..500 {
        let mut r = k.mul_vec(&x);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(x);
        }
        stalled = if res < 0.999 * best { 0 } else { stalled + 1 };
        if res < best {
            best = res;
            best_x.copy_from_slice(&x);
        }
        if stalled == 10 {
            break;
        }
        for (xi, di) in x.iter_mut().zip(solve(&r)) {
            *xi += di;
        }
    }
    log::debug!("refinement stalled at relative residual {best:.3e}");
    if best <= REFINE_ACCEPT {
        Ok(best_x)
    } else {
        Err(Error::NotConverged { residual: best })
    }
}

fn apply_llt(llt: &Llt<usize, f64>, b: &[f64]) -> Vec<f64> {
    let mut x = Col::<f64>::from_fn(b.len(), |i| b[i]);
    llt.solve_in_place(x.as_mat_mut());
    (0..b.len()).map(|i| x[i]).collect()
}

/// Jacobi-preconditioned conjugate gradients with relative residual tolerance `tol`.
pub fn pcg(k: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let inv_diag: Vec<f64> = k
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    preconditioned_cg(k, b, x0, tol, max_iter, |r, z| {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&inv_diag) {
            *zi = ri * di;
        }
    })
}

fn preconditioned_cg(
    k: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    mut precond: impl FnMut(&[f64], &mut [f64]),
) -> Result<Vec<f64>> {
    let n = k.n();
    let bnorm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], |x| x.to_vec());
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut r = k.mul_vec(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for _ in 0..max_iter {
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        k.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::SolverFailure {
                reason: "matrix is not positive definite (CG breakdown)".into(),
                unconstrained_modes: None,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / bnorm;
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::NotConverged { residual: res })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 2.0;
            if i > 0 {
                d[i * n + i - 1] = -1.0;
            }
            if i + 1 < n {
                d[i * n + i + 1] = -1.0;
            }
        }
        CsrMatrix::from_dense(n, &d)
    }

    #[test]
    fn direct_and_pcg_agree() {
        let k = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut direct = LinearSolver::new(SolverSettings {
            kind: SolverKind::Direct,
            ..Default::default()
        });
        let xd = direct.solve(&k, &b).unwrap();
        let xp = pcg(&k, &b, None, 1e-12, 1000).unwrap();
        for (a, c) in xd.iter().zip(&xp) {
            assert!((a - c).abs() < 1e-8);
        }
        let r = k.mul_vec(&xd);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        // cached symbolic factorization reused on second solve
        let again = direct.solve(&k, &b).unwrap();
        assert_eq!(again, xd);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let k = CsrMatrix::from_dense(2, &[1.0, 2.0, 2.0, 1.0]);
        let mut s = LinearSolver::new(SolverSettings {
            kind: SolverKind::Direct,
            ..Default::default()
        });
        assert!(matches!(s.solve(&k, &[1.0, 0.0]), Err(Error::SolverFailure { .. })));
    }
}
