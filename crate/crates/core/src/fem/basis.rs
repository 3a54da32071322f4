//! Tensor-product Lagrange shape functions and Gauss-Legendre quadrature.

use super::grid::Point;

/// Nodal tensor-product basis of order `P` on the reference element `[-1, 1]^D`.
///
/// Local nodes are equispaced and ordered lexicographically with x fastest,
/// matching [`StructuredGrid::element_nodes_into`](super::StructuredGrid::element_nodes_into).
#[derive(Debug, Clone)]
pub struct ElementBasis {
    dim: usize,
    order: usize,
    nodes_1d: Vec<f64>,
}

impl ElementBasis {
    pub fn new(dim: usize, order: usize) -> Self {
        assert!((1..=3).contains(&dim) && order >= 1);
        let nodes_1d = (0..=order).map(|a| -1.0 + 2.0 * a as f64 / order as f64).collect();
        Self { dim, order, nodes_1d }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_nodes(&self) -> usize {
        (self.order + 1).pow(self.dim as u32)
    }

    fn lagrange_1d(&self, t: f64, values: &mut [f64], derivs: &mut [f64]) {
        let n = self.order + 1;
        let xs = &self.nodes_1d;
        for a in 0..n {
            let mut v = 1.0;
            let mut denom = 1.0;
            for b in 0..n {
                if b != a {
                    v *= t - xs[b];
                    denom *= xs[a] - xs[b];
                }
            }
            let mut dv = 0.0;
            for skip in 0..n {
                if skip == a {
                    continue;
                }
                let mut term = 1.0;
                for b in 0..n {
                    if b != a && b != skip {
                        term *= t - xs[b];
                    }
                }
                dv += term;
            }
            values[a] = v / denom;
            derivs[a] = dv / denom;
        }
    }

    /// Shape function values and reference-coordinate gradients at `xi`.
    pub fn eval(&self, xi: &Point, values: &mut [f64], grads: &mut [[f64; 3]]) {
        let n = self.order + 1;
        let mut v1 = [[0.0; 8]; 3];
        let mut d1 = [[0.0; 8]; 3];
        for d in 0..self.dim {
            self.lagrange_1d(xi[d], &mut v1[d][..n], &mut d1[d][..n]);
        }
        let (nz, ny) = match self.dim {
            1 => (1, 1),
            2 => (1, n),
            _ => (n, n),
        };
        let mut idx = 0;
        for c in 0..nz {
            for b in 0..ny {
                for a in 0..n {
                    let (vx, vy, vz) = (
                        v1[0][a],
                        if self.dim > 1 { v1[1][b] } else { 1.0 },
                        if self.dim > 2 { v1[2][c] } else { 1.0 },
                    );
                    values[idx] = vx * vy * vz;
                    grads[idx] = [
                        d1[0][a] * vy * vz,
                        if self.dim > 1 { vx * d1[1][b] * vz } else { 0.0 },
                        if self.dim > 2 { vx * vy * d1[2][c] } else { 0.0 },
                    ];
                    idx += 1;
                }
            }
        }
    }

    /// Physical gradients on a unit element (reference gradients scaled by 2).
    pub fn physical_gradients(&self, xi: &Point, grads: &mut [[f64; 3]]) {
        let mut values = vec![0.0; self.num_nodes()];
        self.eval(xi, &mut values, grads);
        for g in grads.iter_mut() {
            for c in g.iter_mut() {
                *c *= 2.0;
            }
        }
    }
}

/// Gauss-Legendre points and weights on `[-1, 1]` with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Tensor-product Gauss rule on `[-1, 1]^D`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss(points_per_axis: usize, dim: usize) -> Self {
        let (x, w) = gauss_legendre(points_per_axis);
        let g = points_per_axis;
        let (nz, ny) = match dim {
            1 => (1, 1),
            2 => (1, g),
            _ => (g, g),
        };
        let mut points = Vec::with_capacity(g.pow(dim as u32));
        let mut weights = Vec::with_capacity(points.capacity());
        for c in 0..nz {
            for b in 0..ny {
                for a in 0..g {
                    let mut p = [0.0; 3];
                    let mut wt = w[a];
                    p[0] = x[a];
                    if dim > 1 {
                        p[1] = x[b];
                        wt *= w[b];
                    }
                    if dim > 2 {
                        p[2] = x[c];
                        wt *= w[c];
                    }
                    points.push(p);
                    weights.push(wt);
                }
            }
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_exactness() {
        for g in 1..=8 {
            let (x, w) = gauss_legendre(g);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..(2 * g) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                assert!((approx - exact).abs() < 1e-13, "g={g} deg={deg}");
            }
        }
    }

    #[test]
    fn known_two_point_rule() {
        let (x, w) = gauss_legendre(2);
        assert!((x[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tensor_weights_sum_to_volume() {
        for dim in 1..=3 {
            for g in 1..=4 {
                let q = QuadratureRule::gauss(g, dim);
                let s: f64 = q.weights.iter().sum();
                assert!((s - 2f64.powi(dim as i32)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for dim in 1..=3 {
            for order in 1..=4 {
                let b = ElementBasis::new(dim, order);
                let mut v = vec![0.0; b.num_nodes()];
                let mut g = vec![[0.0; 3]; b.num_nodes()];
                for xi in [[-1.0, -1.0, -1.0], [0.3, -0.7, 0.1], [0.99, 0.2, -0.5]] {
                    b.eval(&xi, &mut v, &mut g);
                    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    for d in 0..3 {
                        assert!(g.iter().map(|gi| gi[d]).sum::<f64>().abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn kronecker_property() {
        let b = ElementBasis::new(2, 2);
        let mut v = vec![0.0; 9];
        let mut g = vec![[0.0; 3]; 9];
        let pts = [-1.0, 0.0, 1.0];
        for j in 0..3 {
            for i in 0..3 {
                b.eval(&[pts[i], pts[j], 0.0], &mut v, &mut g);
                for (a, &va) in v.iter().enumerate() {
                    let expect = if a == i + 3 * j { 1.0 } else { 0.0 };
                    assert!((va - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = ElementBasis::new(3, 2);
        let n = b.num_nodes();
        let (mut v, mut vp, mut vm) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut g = vec![[0.0; 3]; n];
        let mut scratch = vec![[0.0; 3]; n];
        let xi = [0.21, -0.43, 0.67];
        b.eval(&xi, &mut v, &mut g);
        let h = 1e-6;
        for d in 0..3 {
            let mut xp = xi;
            let mut xm = xi;
            xp[d] += h;
            xm[d] -= h;
            b.eval(&xp, &mut vp, &mut scratch);
            b.eval(&xm, &mut vm, &mut scratch);
            for a in 0..n {
                let fd = (vp[a] - vm[a]) / (2.0 * h);
                assert!((fd - g[a][d]).abs() < 1e-8);
            }
        }
    }
}
