//! Isotropic linear elasticity on unit elements.

use super::basis::{ElementBasis, QuadratureRule};
use super::grid::Point;
use crate::error::{Error, Result};

/// Isotropic material. 2D problems use plane stress with unit thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(youngs_modulus > 0.0) || !(-1.0 < poisson_ratio && poisson_ratio < 0.5) {
            return Err(Error::invalid(format!(
                "material E={youngs_modulus}, nu={poisson_ratio} is not admissible"
            )));
        }
        Ok(Self {
            youngs_modulus,
            poisson_ratio,
        })
    }

    /// Lamé parameters `(lambda, mu)`; in 2D lambda is the plane-stress value.
    pub fn lame(&self, dim: usize) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let mu = e / (2.0 * (1.0 + nu));
        let lambda = if dim == 2 {
            e * nu / (1.0 - nu * nu)
        } else {
            e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        };
        (lambda, mu)
    }
}

/// Quadrature point inside an element: reference coordinates and physical weight.
///
/// Weights of all points of one element sum to the element volume (1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub xi: Point,
    pub weight: f64,
}

/// Integration points grouped by element.
#[derive(Debug, Clone, Default)]
pub struct PointSet {
    pub elements: Vec<usize>,
    /// `offsets[i]..offsets[i + 1]` are the points of `elements[i]`.
    pub offsets: Vec<usize>,
    pub points: Vec<QuadPoint>,
}

impl PointSet {
    /// The same `g^D` Gauss rule in every listed element.
    pub fn uniform(elements: &[usize], dim: usize, points_per_axis: usize) -> Self {
        let rule = QuadratureRule::gauss(points_per_axis, dim);
        let scale = 0.5f64.powi(dim as i32);
        let local: Vec<QuadPoint> = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(&xi, &w)| QuadPoint { xi, weight: w * scale })
            .collect();
        let mut set = PointSet {
            elements: elements.to_vec(),
            offsets: Vec::with_capacity(elements.len() + 1),
            points: Vec::with_capacity(elements.len() * local.len()),
        };
        set.offsets.push(0);
        for _ in elements {
            set.points.extend_from_slice(&local);
            set.offsets.push(set.points.len());
        }
        set
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn element_points(&self, slot: usize) -> &[QuadPoint] {
        &self.points[self.offsets[slot]..self.offsets[slot + 1]]
    }

    pub fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        self.offsets[slot]..self.offsets[slot + 1]
    }
}

/// Per-element kernel: evaluates stiffness contributions and strain energy
/// densities at arbitrary reference points.
#[derive(Debug, Clone)]
pub struct ElasticKernel {
    basis: ElementBasis,
    lambda: f64,
    mu: f64,
}

impl ElasticKernel {
    pub fn new(basis: ElementBasis, material: &Material) -> Self {
        let (lambda, mu) = material.lame(basis.dim());
        Self { basis, lambda, mu }
    }

    pub fn basis(&self) -> &ElementBasis {
        &self.basis
    }

    pub fn num_dofs(&self) -> usize {
        self.basis.num_nodes() * self.basis.dim()
    }

    /// `out += scale * B^T C B` evaluated at `xi` (row-major, `ndof x ndof`).
    pub fn add_point_stiffness(&self, xi: &Point, scale: f64, grads: &mut [[f64; 3]], out: &mut [f64]) {
        let dim = self.basis.dim();
        let nn = self.basis.num_nodes();
        let ndof = nn * dim;
        self.basis.physical_gradients(xi, grads);
        let (l, m) = (self.lambda * scale, self.mu * scale);
        for a in 0..nn {
            let ga = grads[a];
            for b in 0..nn {
                let gb = grads[b];
                let dot = ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2];
                for i in 0..dim {
                    let row = (a * dim + i) * ndof + b * dim;
                    for j in 0..dim {
                        let mut v = l * ga[i] * gb[j] + m * ga[j] * gb[i];
                        if i == j {
                            v += m * dot;
                        }
                        out[row + j] += v;
                    }
                }
            }
        }
    }

    /// Element stiffness `sum_k scales[k] * w_k * B_k^T C B_k`.
    pub fn element_stiffness(&self, points: &[QuadPoint], scales: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut grads = vec![[0.0; 3]; self.basis.num_nodes()];
        for (p, &s) in points.iter().zip(scales) {
            let c = p.weight * s;
            if c != 0.0 {
                self.add_point_stiffness(&p.xi, c, &mut grads, out);
            }
        }
    }

    /// Strain energy density `eps : C : eps` at `xi` for element displacements `ue`.
    pub fn energy_density(&self, xi: &Point, ue: &[f64], grads: &mut [[f64; 3]]) -> f64 {
        let dim = self.basis.dim();
        self.basis.physical_gradients(xi, grads);
        // displacement gradient H[i][j] = du_i/dx_j
        let mut h = [[0.0; 3]; 3];
        for (a, g) in grads.iter().enumerate().take(self.basis.num_nodes()) {
            for i in 0..dim {
                let u = ue[a * dim + i];
                for j in 0..dim {
                    h[i][j] += u * g[j];
                }
            }
        }
        let mut tr = 0.0;
        let mut eps_sq = 0.0;
        for i in 0..dim {
            tr += h[i][i];
            for j in 0..dim {
                let e = 0.5 * (h[i][j] + h[j][i]);
                eps_sq += e * e;
            }
        }
        self.lambda * tr * tr + 2.0 * self.mu * eps_sq
    }

    /// Solid element stiffness with a `g^D` Gauss rule.
    pub fn reference_stiffness(&self, points_per_axis: usize) -> Vec<f64> {
        let set = PointSet::uniform(&[0], self.basis.dim(), points_per_axis);
        let n = self.num_dofs();
        let mut k = vec![0.0; n * n];
        self.element_stiffness(&set.points, &vec![1.0; set.len()], &mut k);
        k
    }
}

/// `x^T A x` for a dense row-major square matrix.
pub fn quadratic_form(a: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let ri: f64 = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
        s += x[i] * ri;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form plane-stress Q4 stiffness for a unit square (classic 88-line layout,
    /// node order (0,0),(1,0),(0,1),(1,1) after reordering).
    fn analytic_q4(e: f64, nu: f64) -> Vec<f64> {
        let k = [
            0.5 - nu / 6.0,
            0.125 + nu / 8.0,
            -0.25 - nu / 12.0,
            -0.125 + 3.0 * nu / 8.0,
            -0.25 + nu / 12.0,
            -0.125 - nu / 8.0,
            nu / 6.0,
            0.125 - 3.0 * nu / 8.0,
        ];
        // 88-line node order: (0,1),(1,1),(1,0),(0,0) with y pointing down;
        // this is the counter-clockwise-from-lower-left form in y-up coordinates.
        let ke_ccw = [
            [k[0], k[1], k[2], k[3], k[4], k[5], k[6], k[7]],
            [k[1], k[0], k[7], k[6], k[5], k[4], k[3], k[2]],
            [k[2], k[7], k[0], k[5], k[6], k[3], k[4], k[1]],
            [k[3], k[6], k[5], k[0], k[7], k[2], k[1], k[4]],
            [k[4], k[5], k[6], k[7], k[0], k[1], k[2], k[3]],
            [k[5], k[4], k[3], k[2], k[1], k[0], k[7], k[6]],
            [k[6], k[3], k[4], k[1], k[2], k[7], k[0], k[5]],
            [k[7], k[2], k[1], k[4], k[3], k[6], k[5], k[0]],
        ];
        // ccw node order (0,0),(1,0),(1,1),(0,1) -> lexicographic (0,0),(1,0),(0,1),(1,1)
        let perm = [0usize, 1, 3, 2];
        let scale = e / (1.0 - nu * nu);
        let mut out = vec![0.0; 64];
        for a in 0..4 {
            for b in 0..4 {
                for i in 0..2 {
                    for j in 0..2 {
                        out[(a * 2 + i) * 8 + b * 2 + j] = scale * ke_ccw[perm[a] * 2 + i][perm[b] * 2 + j];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn q4_matches_closed_form() {
        for nu in [0.0, 0.3] {
            let mat = Material::new(1.0, nu).unwrap();
            let kern = ElasticKernel::new(ElementBasis::new(2, 1), &mat);
            let k = kern.reference_stiffness(2);
            let exact = analytic_q4(1.0, nu);
            for (a, b) in k.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b} (nu={nu})");
            }
        }
    }

    #[test]
    fn stiffness_symmetric_with_rigid_nullspace() {
        for (dim, order) in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)] {
            let kern = ElasticKernel::new(ElementBasis::new(dim, order), &Material::new(1.0, 0.3).unwrap());
            let n = kern.num_dofs();
            let k = kern.reference_stiffness(order + 1);
            for i in 0..n {
                for j in 0..n {
                    assert!((k[i * n + j] - k[j * n + i]).abs() < 1e-12);
                }
            }
            // rigid translation has zero energy
            let mut t = vec![0.0; n];
            for a in 0..n / dim {
                t[a * dim] = 1.0;
            }
            assert!(quadratic_form(&k, &t).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_density_matches_point_stiffness() {
        let kern = ElasticKernel::new(ElementBasis::new(2, 2), &Material::new(2.0, 0.25).unwrap());
        let n = kern.num_dofs();
        let ue: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.1).collect();
        let xi = [0.3, -0.6, 0.0];
        let mut grads = vec![[0.0; 3]; 9];
        let mut k = vec![0.0; n * n];
        kern.add_point_stiffness(&xi, 1.0, &mut grads, &mut k);
        let via_k = quadratic_form(&k, &ue);
        let direct = kern.energy_density(&xi, &ue, &mut grads);
        assert!((via_k - direct).abs() < 1e-12 * via_k.abs().max(1.0));
    }
}
