//! Solid elements under concentrated loads and supports.

use crate::fem::{LoadCase, Point};

/// Level-set value reported inside pads by [`SolidPads::union`].
pub const PAD_LEVEL: f64 = 1.0;

const TOL: f64 = 1e-9;

/// Lattice elements held solid regardless of the level set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolidPads {
    dims: Vec<usize>,
    elements: Vec<usize>,
}

impl SolidPads {
    pub fn none(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            elements: Vec::new(),
        }
    }

    /// Every element whose closed box meets a point load or support (or, in
    /// 3D, a line one).
    pub fn from_load_case(dims: &[usize], loads: &LoadCase) -> Self {
        let dim = dims.len();
        let selectors = loads.concentrated(dim);
        let n: usize = dims.iter().product();
        let elements = (0..n)
            .filter(|&e| {
                let ijk = super::lattice_ijk(dims, e);
                selectors.iter().any(|s| {
                    [s.x, s.y, s.z][..dim]
                        .iter()
                        .zip(ijk)
                        .all(|(v, i)| v.is_none_or(|v| v >= i as f64 - TOL && v <= (i + 1) as f64 + TOL))
                })
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            elements,
        }
    }

    /// Sorted element indices.
    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains_element(&self, e: usize) -> bool {
        self.elements.binary_search(&e).is_ok()
    }

    /// Whether `x` lies in the closed box of a pad element.
    pub fn contains(&self, x: &Point) -> bool {
        if self.elements.is_empty() {
            return false;
        }
        let dim = self.dims.len();
        let mut range = [(0usize, 0usize); 3];
        for d in 0..dim {
            let top = self.dims[d] as f64;
            if x[d] < -TOL || x[d] > top + TOL {
                return false;
            }
            let lo = (x[d] - TOL).floor().max(0.0) as usize;
            let hi = ((x[d] + TOL).floor() as usize).min(self.dims[d] - 1);
            range[d] = (lo, hi);
        }
        let (nx, ny) = (self.dims[0], self.dims.get(1).copied().unwrap_or(1));
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    if self.contains_element(i + nx * (j + ny * k)) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Set the values of pad elements to `+inf` in an element-major array with
    /// `per_element` entries per lattice element.
    pub fn mask(&self, values: &mut [f64], per_element: usize) {
        for &e in &self.elements {
            values[e * per_element..(e + 1) * per_element].fill(f64::INFINITY);
        }
    }

    /// `f` raised to at least [`PAD_LEVEL`] inside pads.
    pub fn union<'a, F>(&'a self, f: F) -> impl Fn(&Point) -> f64 + Sync + 'a
    where
        F: Fn(&Point) -> f64 + Sync + 'a,
    {
        move |x: &Point| {
            let v = f(x);
            if self.contains(x) {
                v.max(PAD_LEVEL)
            } else {
                v
            }
        }
    }
}
