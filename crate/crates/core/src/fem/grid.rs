//! Structured grid of unit square/cube elements with tensor-product node numbering.

use crate::error::{Error, Result};

/// A point in up to three dimensions. Unused trailing components are zero.
pub type Point = [f64; 3];

/// Structured grid of `dims[0] x dims[1] (x dims[2])` elements with edge length 1.
///
/// Nodes of an order-`P` element sit on a regular `(P+1)^D` lattice, so the
/// global node lattice has `P * dims[i] + 1` nodes along axis `i`. Both
/// elements and nodes are numbered with the x index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid {
    dims: Vec<usize>,
    order: usize,
    nodes_per_axis: Vec<usize>,
}

impl StructuredGrid {
    pub fn new(dims: &[usize], order: usize) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::invalid(format!(
                "grid must be 2D or 3D, got {} axes",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("element counts must be positive, got {dims:?}")));
        }
        if !(1..=4).contains(&order) {
            return Err(Error::invalid(format!("basis order must be in 1..=4, got {order}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            order,
            nodes_per_axis: dims.iter().map(|&d| order * d + 1).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis.iter().product()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_nodes() * self.dim()
    }

    pub fn nodes_per_element(&self) -> usize {
        (self.order + 1).pow(self.dim() as u32)
    }

    pub fn dofs_per_element(&self) -> usize {
        self.nodes_per_element() * self.dim()
    }

    /// Domain extent (equal to the element counts since h = 1).
    pub fn extent(&self) -> Point {
        let mut e = [0.0; 3];
        for (i, &d) in self.dims.iter().enumerate() {
            e[i] = d as f64;
        }
        e
    }

    pub fn element_index(&self, ijk: [usize; 3]) -> usize {
        match self.dim() {
            2 => ijk[0] + self.dims[0] * ijk[1],
            _ => ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2]),
        }
    }

    pub fn element_ijk(&self, e: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        match self.dim() {
            2 => [e % nx, e / nx, 0],
            _ => [e % nx, (e / nx) % ny, e / (nx * ny)],
        }
    }

    /// Lower corner of element `e`.
    pub fn element_origin(&self, e: usize) -> Point {
        let ijk = self.element_ijk(e);
        [ijk[0] as f64, ijk[1] as f64, ijk[2] as f64]
    }

    pub fn centroid(&self, e: usize) -> Point {
        let mut c = self.element_origin(e);
        for v in c.iter_mut().take(self.dim()) {
            *v += 0.5;
        }
        c
    }

    /// Map reference coordinates in `[-1, 1]^D` of element `e` to physical space.
    pub fn to_physical(&self, e: usize, xi: &Point) -> Point {
        let mut x = self.element_origin(e);
        for d in 0..self.dim() {
            x[d] += 0.5 * (xi[d] + 1.0);
        }
        x
    }

    pub fn node_index(&self, ijk: [usize; 3]) -> usize {
        let n = &self.nodes_per_axis;
        match self.dim() {
            2 => ijk[0] + n[0] * ijk[1],
            _ => ijk[0] + n[0] * (ijk[1] + n[1] * ijk[2]),
        }
    }

    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let n = &self.nodes_per_axis;
        match self.dim() {
            2 => [node % n[0], node / n[0], 0],
            _ => [node % n[0], (node / n[0]) % n[1], node / (n[0] * n[1])],
        }
    }

    pub fn node_position(&self, node: usize) -> Point {
        let ijk = self.node_ijk(node);
        let p = self.order as f64;
        let mut x = [0.0; 3];
        for d in 0..self.dim() {
            x[d] = ijk[d] as f64 / p;
        }
        x
    }

    /// Global node indices of element `e` in local lexicographic order (x fastest).
    pub fn element_nodes_into(&self, e: usize, out: &mut Vec<usize>) {
        out.clear();
        let ijk = self.element_ijk(e);
        let p = self.order;
        let base = [ijk[0] * p, ijk[1] * p, ijk[2] * p];
        let kmax = if self.dim() == 3 { p } else { 0 };
        for c in 0..=kmax {
            for b in 0..=p {
                for a in 0..=p {
                    out.push(self.node_index([base[0] + a, base[1] + b, base[2] + c]));
                }
            }
        }
    }

    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.nodes_per_element());
        self.element_nodes_into(e, &mut v);
        v
    }

    /// Global DOF indices of element `e`: node-major, component-minor.
    pub fn element_dofs_into(&self, e: usize, nodes: &mut Vec<usize>, out: &mut Vec<usize>) {
        self.element_nodes_into(e, nodes);
        let d = self.dim();
        out.clear();
        for &n in nodes.iter() {
            for c in 0..d {
                out.push(n * d + c);
            }
        }
    }

    /// Elements within Chebyshev distance 1 of `e` (excluding `e`).
    pub fn neighbors(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        let ijk = self.element_ijk(e);
        let d3 = self.dim() == 3;
        let range = move |i: usize, n: usize| i.saturating_sub(1)..=(i + 1).min(n - 1);
        let zs = if d3 { range(ijk[2], self.dims[2]) } else { 0..=0 };
        zs.flat_map(move |z| {
            range(ijk[1], self.dims[1]).flat_map(move |y| range(ijk[0], self.dims[0]).map(move |x| [x, y, z]))
        })
        .filter(move |&n| n != ijk)
        .map(move |n| self.element_index(n))
    }

    /// Element containing point `x` (points on shared faces go to the upper element).
    pub fn locate(&self, x: &Point) -> Option<usize> {
        let mut ijk = [0usize; 3];
        for d in 0..self.dim() {
            if !(0.0..=self.dims[d] as f64).contains(&x[d]) {
                return None;
            }
            ijk[d] = (x[d].floor() as usize).min(self.dims[d] - 1);
        }
        Some(self.element_index(ijk))
    }

    /// Same grid with a different basis order.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        Self::new(&self.dims, order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let g = StructuredGrid::new(&[64, 32], 1).unwrap();
        assert_eq!(g.num_elements(), 2048);
        assert_eq!(g.num_nodes(), 65 * 33);
        let g = StructuredGrid::new(&[2, 2], 2).unwrap();
        assert_eq!(g.num_elements(), 4);
        assert_eq!(g.num_nodes(), 25);
        let g = StructuredGrid::new(&[64, 10, 32], 1).unwrap();
        assert_eq!(g.num_elements(), 20480);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(StructuredGrid::new(&[0, 3], 1).is_err());
        assert!(StructuredGrid::new(&[3], 1).is_err());
        assert!(StructuredGrid::new(&[3, 3], 0).is_err());
        assert!(StructuredGrid::new(&[3, 3], 5).is_err());
    }

    #[test]
    fn element_nodes_increasing() {
        for (dims, p) in [(vec![3, 2], 1), (vec![3, 2], 2), (vec![2, 3, 2], 2), (vec![2, 2, 2], 3)] {
            let g = StructuredGrid::new(&dims, p).unwrap();
            for e in 0..g.num_elements() {
                let nodes = g.element_nodes(e);
                assert_eq!(nodes.len(), g.nodes_per_element());
                assert!(nodes.windows(2).all(|w| w[0] < w[1]));
                // first and last nodes are the element's corners
                let o = g.element_origin(e);
                assert_eq!(g.node_position(nodes[0]), o);
                let last = g.node_position(*nodes.last().unwrap());
                for d in 0..g.dim() {
                    assert_eq!(last[d], o[d] + 1.0);
                }
            }
        }
    }

    #[test]
    fn neighbor_counts() {
        let g = StructuredGrid::new(&[4, 4], 1).unwrap();
        assert_eq!(g.neighbors(0).count(), 3);
        assert_eq!(g.neighbors(g.element_index([1, 1, 0])).count(), 8);
        let g = StructuredGrid::new(&[3, 3, 3], 1).unwrap();
        assert_eq!(g.neighbors(g.element_index([1, 1, 1])).count(), 26);
    }
}
