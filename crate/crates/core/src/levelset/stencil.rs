//! Precomputed RBF values for a fixed layout of points inside an element.
//!
//! Centroids sit at integer offsets from the owner element's centroid, so the
//! values `N_i(x_k)` depend only on the local layout and the offset. One table
//! serves every element that uses the layout.

use super::{SUPPORT_CELLS, SUPPORT_RADIUS_SQ};
use crate::fem::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct RbfStencil {
    dim: usize,
    num_points: usize,
    offsets: Vec<[isize; 3]>,
    /// `values[o * num_points + k] = N(x_k - (c + offsets[o]))`.
    values: Vec<f64>,
}

impl RbfStencil {
    /// `local` holds reference coordinates in `[-1, 1]^D` of the points.
    pub fn new(dim: usize, local: &[Point]) -> Self {
        let r = SUPPORT_CELLS;
        let range = |active: bool| if active { -r..=r } else { 0..=0 };
        let mut offsets = Vec::new();
        let mut values = Vec::new();
        for dz in range(dim > 2) {
            for dy in range(dim > 1) {
                for dx in range(true) {
                    let off = [dx, dy, dz];
                    let row: Vec<f64> = local
                        .iter()
                        .map(|xi| {
                            let r2: f64 = (0..dim).map(|d| (0.5 * xi[d] - off[d] as f64).powi(2)).sum();
                            if r2 > SUPPORT_RADIUS_SQ {
                                0.0
                            } else {
                                (-r2).exp()
                            }
                        })
                        .collect();
                    if row.iter().any(|&v| v != 0.0) {
                        offsets.push(off);
                        values.extend(row);
                    }
                }
            }
        }
        Self {
            dim,
            num_points: local.len(),
            offsets,
            values,
        }
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_offsets(&self) -> usize {
        self.offsets.len()
    }

    /// Calls `f(centroid index, values over points)` for every in-lattice offset.
    pub fn for_each_column(&self, dims: &[usize], owner: [usize; 3], mut f: impl FnMut(usize, &[f64])) {
        let nx = dims[0] as isize;
        let ny = if self.dim > 1 { dims[1] as isize } else { 1 };
        let nz = if self.dim > 2 { dims[2] as isize } else { 1 };
        for (o, off) in self.offsets.iter().enumerate() {
            let i = owner[0] as isize + off[0];
            let j = owner[1] as isize + off[1];
            let k = owner[2] as isize + off[2];
            if i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz {
                continue;
            }
            let idx = (i + nx * (j + ny * k)) as usize;
            f(idx, &self.values[o * self.num_points..(o + 1) * self.num_points]);
        }
    }

    /// `out[k] = sum_i N_i(x_k) w_i` for the points of the element at `owner`.
    pub fn eval(&self, dims: &[usize], owner: [usize; 3], weights: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_column(dims, owner, |i, col| {
            let w = weights[i];
            if w != 0.0 {
                for (o, n) in out.iter_mut().zip(col) {
                    *o += w * n;
                }
            }
        });
    }

    /// Transposed product: calls `f(i, sum_k coeffs[k] N_i(x_k))`.
    pub fn adjoint(&self, dims: &[usize], owner: [usize; 3], coeffs: &[f64], mut f: impl FnMut(usize, f64)) {
        self.for_each_column(dims, owner, |i, col| {
            let s: f64 = col.iter().zip(coeffs).map(|(n, c)| n * c).sum();
            f(i, s);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::super::RbfLevelSet;
    use super::*;

    #[test]
    fn matches_direct_evaluation() {
        let dims = [7, 5, 6];
        let n = 7 * 5 * 6;
        let w: Vec<f64> = (0..n).map(|i| ((i * 31 % 13) as f64 - 6.0) / 6.0).collect();
        let lsf = RbfLevelSet::new(&dims, w.clone(), 1.0).unwrap();
        let local = [[-1.0, -1.0, -1.0], [0.3, -0.7, 0.1], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        let st = RbfStencil::new(3, &local);
        for owner in [[0, 0, 0], [3, 2, 3], [6, 4, 5]] {
            let mut out = vec![0.0; local.len()];
            st.eval(&dims, owner, &w, &mut out);
            for (k, xi) in local.iter().enumerate() {
                let x = [
                    owner[0] as f64 + 0.5 + 0.5 * xi[0],
                    owner[1] as f64 + 0.5 + 0.5 * xi[1],
                    owner[2] as f64 + 0.5 + 0.5 * xi[2],
                ];
                assert!((out[k] - lsf.eval(&x)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_is_transpose() {
        let dims = [6, 6];
        let local = [[0.2, -0.4, 0.0], [-0.9, 0.9, 0.0]];
        let st = RbfStencil::new(2, &local);
        let owner = [2, 1, 0];
        let coeffs = [0.7, -1.3];
        let mut grad = vec![0.0; 36];
        st.adjoint(&dims, owner, &coeffs, |i, v| grad[i] += v);
        // <coeffs, Phi w> == <Phi^T coeffs, w> for random w
        let w: Vec<f64> = (0..36).map(|i| (i as f64 * 0.77).cos()).collect();
        let mut phi = vec![0.0; 2];
        st.eval(&dims, owner, &w, &mut phi);
        let lhs: f64 = coeffs.iter().zip(&phi).map(|(a, b)| a * b).sum();
        let rhs: f64 = grad.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }
}
