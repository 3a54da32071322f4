//! Bounds on level-set slope and the matching Heaviside steepness.

use crate::error::{Error, Result};

const TRUNCATION: i32 = 6;

/// `sum_{k=-6..6} exp(-k^2)`: value of a unit-weight 1D lattice sum at a lattice point.
pub fn theta_sum() -> f64 {
    (-TRUNCATION..=TRUNCATION).map(|k| (-(k * k) as f64).exp()).sum()
}

/// `4 sum_{k=0..6} (k + 1/2) exp(-(k + 1/2)^2)`: largest 1D slope of a lattice
/// sum with unit-bounded weights, attained midway between centroids.
pub fn edge_sum() -> f64 {
    4.0 * (0..=TRUNCATION)
        .map(|k| {
            let r = k as f64 + 0.5;
            r * (-r * r).exp()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeBounds {
    /// Largest attainable `|phi0|`.
    pub phi_max: f64,
    /// Largest attainable `|grad phi|`.
    pub grad_max: f64,
    /// Mean spacing of integration points in a refined cell.
    pub delta_x: f64,
    /// Largest `|phi|` within `delta_x / 2` of the zero contour.
    pub phi_ip: f64,
    /// Required minimum of `d rho / d phi` at those points.
    pub dmin: f64,
}

pub fn slope_constants(dim: usize, w_max: f64, order: usize, qt: u32, dmin: f64) -> Result<SlopeBounds> {
    if !(1..=3).contains(&dim) || !(w_max > 0.0) || order == 0 || !(dmin > 0.0) {
        return Err(Error::invalid(format!(
            "slope bounds need D in 1..=3 and positive w_max, P, dmin (got D={dim}, w_max={w_max}, P={order}, dmin={dmin})"
        )));
    }
    let phi_max = theta_sum().powi(dim as i32) * w_max;
    let grad_max = edge_sum() / theta_sum() * phi_max;
    let delta_x = 0.5f64.powi(qt as i32) / (order as f64 + 1.0);
    Ok(SlopeBounds {
        phi_max,
        grad_max,
        delta_x,
        phi_ip: grad_max * delta_x / 2.0,
        dmin,
    })
}

/// `(1 - rho0) kappa H(kappa phi_ip) (1 - H(kappa phi_ip))` as a function of `t = kappa phi_ip`.
fn slope_at(t: f64, phi_ip: f64, rho0: f64) -> f64 {
    let h = super::heaviside(t, 1.0);
    let hm = super::heaviside(-t, 1.0);
    (1.0 - rho0) * t / phi_ip * h * hm
}

/// Both roots `(smaller, larger)` of `d rho / d phi (phi_ip) = dmin` in kappa.
pub(crate) fn kappa_roots(bounds: &SlopeBounds, rho0: f64) -> Result<(f64, f64)> {
    let (phi_ip, dmin) = (bounds.phi_ip, bounds.dmin);
    if !(phi_ip > 0.0) {
        return Err(Error::invalid(format!("phi_ip must be positive, got {phi_ip}")));
    }
    // t h (1-h) is unimodal on t > 0; locate its peak by golden section
    let g = |t: f64| slope_at(t, phi_ip, rho0);
    let (mut a, mut b) = (0.0f64, 20.0f64);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if g(c) > g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t_peak = 0.5 * (a + b);
    let peak = g(t_peak);
    if dmin > peak {
        return Err(Error::NoSolution(format!(
            "dmin = {dmin} exceeds the attainable maximum {peak:.6} for phi_ip = {phi_ip:.6}"
        )));
    }
    let bisect = |mut lo: f64, mut hi: f64, rising: bool| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (g(mid) < dmin) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let mut t_hi = 2.0 * t_peak;
    while g(t_hi) > dmin {
        t_hi *= 2.0;
    }
    let small = bisect(0.0, t_peak, true);
    let large = bisect(t_peak, t_hi, false);
    Ok((small / phi_ip, large / phi_ip))
}

/// Steepest Heaviside that still keeps `d rho / d phi >= dmin` within `delta_x / 2`
/// of the boundary.
pub fn solve_kappa(bounds: &SlopeBounds, rho0: f64) -> Result<f64> {
    if bounds.phi_ip == 0.0 {
        return Ok(4.0 * bounds.dmin / (1.0 - rho0));
    }
    kappa_roots(bounds, rho0).map(|r| r.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_constants() {
        assert!((theta_sum() - 1.7726).abs() < 1e-4);
        assert!((edge_sum() - 2.2094).abs() < 1e-4);
        assert!((edge_sum() / theta_sum() - 1.2464).abs() < 1e-3);
        // oracle: theta_3(0, e^-1) = sqrt(pi) * theta_3(0, e^-pi^2) to double precision
        let jacobi = std::f64::consts::PI.sqrt() * (1.0 + 2.0 * (-std::f64::consts::PI.powi(2)).exp());
        assert!((theta_sum() - jacobi).abs() < 1e-12);
    }

    #[test]
    fn bounds_for_2d_preset() {
        let b = slope_constants(2, 0.5, 2, 1, 0.5).unwrap();
        assert!((b.delta_x - 1.0 / 6.0).abs() < 1e-15);
        assert!((b.grad_max - 1.958).abs() < 1e-3, "{}", b.grad_max);
        assert!((b.phi_ip - 0.1632).abs() < 1e-4, "{}", b.phi_ip);
        assert!((b.grad_max / b.phi_max - 1.2464).abs() < 1e-3);
    }

    #[test]
    fn kappa_for_2d_preset() {
        let b = slope_constants(2, 0.5, 2, 1, 0.5).unwrap();
        let k = solve_kappa(&b, 1e-8).unwrap();
        assert!((20.0..=30.0).contains(&k), "{k}");
        // both roots satisfy the defining equation
        let (lo, hi) = kappa_roots(&b, 1e-8).unwrap();
        for r in [lo, hi] {
            assert!((slope_at(r * b.phi_ip, b.phi_ip, 1e-8) - 0.5).abs() < 1e-9);
        }
        assert!(lo < hi && hi == k);
        // frozen value from an independent Brent root of the same equation
        assert!((k - 23.258145535656865).abs() < 1e-9, "{k}");
    }

    #[test]
    fn kappa_decreases_with_w_max() {
        let mut prev = f64::INFINITY;
        for w in [0.25, 0.5, 1.0] {
            let b = slope_constants(2, w, 2, 1, 0.5).unwrap();
            let k = solve_kappa(&b, 1e-8).unwrap();
            assert!(k < prev);
            prev = k;
        }
        let b1 = slope_constants(2, 0.5, 2, 1, 0.5).unwrap();
        let b2 = slope_constants(2, 1.0, 2, 1, 0.5).unwrap();
        assert!((b2.phi_ip - 2.0 * b1.phi_ip).abs() < 1e-14);
    }

    #[test]
    fn small_phi_ip_limit() {
        // the lower root tends to the sigmoid-peak value 4 dmin / (1 - rho0)
        let mut b = slope_constants(2, 0.5, 2, 1, 0.5).unwrap();
        b.phi_ip = 1e-6;
        let (lo, _) = kappa_roots(&b, 1e-8).unwrap();
        assert!((lo - 2.0).abs() < 1e-6, "{lo}");
        b.phi_ip = 0.0;
        assert_eq!(solve_kappa(&b, 1e-8).unwrap(), 4.0 * 0.5 / (1.0 - 1e-8));
    }

    #[test]
    fn unattainable_dmin() {
        let b = slope_constants(2, 0.5, 2, 1, 50.0).unwrap();
        assert!(matches!(solve_kappa(&b, 1e-8), Err(Error::NoSolution(_))));
    }
}
