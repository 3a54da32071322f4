//! Geometry and data artifacts: iso-contours, iso-surfaces, field files, history.

mod contour;
mod fields;
mod surface;

pub use contour::{marching_squares, ContourSet, Polyline};
pub use fields::{
    read_density, read_history_csv, read_level_set, write_density, write_density_csv, write_history_csv,
    write_level_set, write_level_set_csv,
};
pub use surface::{marching_cubes, SurfaceMesh};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Point;
use crate::levelset::RbfLevelSet;

/// Regular sampling lattice: node `(i, j, k)` sits at `origin + spacing * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub dim: usize,
    pub origin: Point,
    pub spacing: f64,
    /// Nodes per axis (1 on unused axes).
    pub counts: [usize; 3],
}

impl Lattice {
    pub fn new(dim: usize, origin: Point, spacing: f64, counts: [usize; 3]) -> Result<Self> {
        if !(2..=3).contains(&dim) || !(spacing > 0.0) || counts[..dim].iter().any(|&c| c < 2) {
            return Err(Error::invalid(format!(
                "lattice needs D in 2..=3, positive spacing and >= 2 nodes per axis (D={dim}, h={spacing}, {counts:?})"
            )));
        }
        Ok(Self {
            dim,
            origin,
            spacing,
            counts,
        })
    }

    /// Lattice covering the box `[0, dims]` with `per_element` samples per
    /// element length, padded by one node on every side and shifted by half a
    /// spacing so that no node lies on the box faces.
    pub fn around_domain(dims: &[usize], per_element: usize) -> Result<Self> {
        let dim = dims.len();
        if per_element == 0 {
            return Err(Error::invalid("sampling needs at least one sample per element"));
        }
        let h = 1.0 / per_element as f64;
        let mut origin = [0.0; 3];
        let mut counts = [1usize; 3];
        for d in 0..dim {
            origin[d] = -1.5 * h;
            counts[d] = dims[d] * per_element + 3;
        }
        Self::new(dim, origin, h, counts)
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point {
        let h = self.spacing;
        let mut p = [0.0; 3];
        p[0] = self.origin[0] + h * i as f64;
        p[1] = self.origin[1] + h * j as f64;
        if self.dim > 2 {
            p[2] = self.origin[2] + h * k as f64;
        }
        p
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    /// `f` at every node, x fastest.
    pub fn sample(&self, f: &(impl Fn(&Point) -> f64 + Sync)) -> Vec<f64> {
        let [nx, ny, _] = self.counts;
        (0..self.num_nodes())
            .into_par_iter()
            .map(|n| self.node(n % nx, (n / nx) % ny, n / (nx * ny)))
            .map(|p| f(&p))
            .collect()
    }
}

/// `min(f(x), distance to the box faces)` (positive inside the box), so that
/// iso-surfaces of the result are closed at the domain boundary.
pub fn clip_to_box<'a>(dims: &'a [usize], f: impl Fn(&Point) -> f64 + Sync + 'a) -> impl Fn(&Point) -> f64 + Sync + 'a {
    move |x: &Point| {
        let mut v = f(x);
        for (d, &n) in dims.iter().enumerate() {
            v = v.min(x[d]).min(n as f64 - x[d]);
        }
        v
    }
}

/// Find the zero of `f` on the segment `a`-`b` (values `fa`, `fb` of opposite
/// sign) by Illinois regula falsi.
pub(crate) fn refine_root(f: &impl Fn(&Point) -> f64, a: Point, b: Point, fa: f64, fb: f64) -> Point {
    let at = |t: f64| -> Point { std::array::from_fn(|d| a[d] + t * (b[d] - a[d])) };
    let (mut t0, mut t1, mut f0, mut f1) = (0.0f64, 1.0f64, fa, fb);
    if f0 == 0.0 {
        return a;
    }
    if f1 == 0.0 {
        return b;
    }
    let mut t = f0 / (f0 - f1);
    let mut side = 0i8;
    for _ in 0..60 {
        t = (t0 * f1 - t1 * f0) / (f1 - f0);
        let ft = f(&at(t));
        if ft == 0.0 || (t1 - t0).abs() < 1e-14 {
            break;
        }
        if (ft > 0.0) == (f0 > 0.0) {
            t0 = t;
            f0 = ft;
            if side == -1 {
                f1 *= 0.5;
            }
            side = -1;
        } else {
            t1 = t;
            f1 = ft;
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        }
    }
    at(t)
}

/// Zero contour of a 2D level set, closed at the domain boundary.
pub fn level_set_contour(lsf: &RbfLevelSet, per_element: usize) -> Result<ContourSet> {
    if lsf.dim() != 2 {
        return Err(Error::invalid("contours need a 2D level set"));
    }
    let lattice = Lattice::around_domain(lsf.dims(), per_element)?;
    let f = clip_to_box(lsf.dims(), |x: &Point| lsf.eval(x));
    marching_squares(&f, &lattice)
}

/// Zero iso-surface of a 3D level set, closed at the domain boundary.
pub fn level_set_surface(lsf: &RbfLevelSet, per_element: usize) -> Result<SurfaceMesh> {
    if lsf.dim() != 3 {
        return Err(Error::invalid("surfaces need a 3D level set"));
    }
    let lattice = Lattice::around_domain(lsf.dims(), per_element)?;
    let f = clip_to_box(lsf.dims(), |x: &Point| lsf.eval(x));
    marching_cubes(&f, &lattice)
}

/// Piecewise-constant interpolation of an element density field, minus `iso`.
pub fn density_function<'a>(dims: &'a [usize], values: &'a [f64], iso: f64) -> impl Fn(&Point) -> f64 + Sync + 'a {
    move |x: &Point| {
        let mut idx = 0;
        let mut stride = 1;
        for (d, &n) in dims.iter().enumerate() {
            let c = (x[d].floor().max(0.0) as usize).min(n - 1);
            idx += c * stride;
            stride *= n;
        }
        values[idx] - iso
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}
