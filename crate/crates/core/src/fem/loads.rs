//! Point loads and supports defined by geometric node selectors.

use serde::{Deserialize, Serialize};

use super::grid::StructuredGrid;
use crate::error::{Error, Result};

/// Selects grid nodes by fixing any subset of their coordinates.
///
/// `{x = 0}` selects the plane x = 0, `{x = 0, y = 32}` a line (or a single
/// node in 2D), and fixing all coordinates selects one node.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSelector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

impl NodeSelector {
    pub fn at(x: Option<f64>, y: Option<f64>, z: Option<f64>) -> Self {
        Self { x, y, z }
    }

    pub fn point2(x: f64, y: f64) -> Self {
        Self::at(Some(x), Some(y), None)
    }

    pub fn point3(x: f64, y: f64, z: f64) -> Self {
        Self::at(Some(x), Some(y), Some(z))
    }

    pub fn matches(&self, p: &[f64; 3]) -> bool {
        const TOL: f64 = 1e-9;
        [self.x, self.y, self.z]
            .iter()
            .zip(p)
            .all(|(s, &c)| s.is_none_or(|v| (v - c).abs() <= TOL))
    }

    /// Number of unconstrained coordinates among the first `dim`.
    pub fn free_axes(&self, dim: usize) -> usize {
        [self.x, self.y, self.z][..dim].iter().filter(|v| v.is_none()).count()
    }

    pub fn select(&self, grid: &StructuredGrid) -> Vec<usize> {
        (0..grid.num_nodes())
            .filter(|&n| self.matches(&grid.node_position(n)))
            .collect()
    }
}

impl std::fmt::Display for NodeSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = [("x", self.x), ("y", self.y), ("z", self.z)]
            .iter()
            .filter_map(|(n, v)| v.map(|v| format!("{n}={v}")))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Force `magnitude` in direction `component` applied to every selected node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLoad {
    pub at: NodeSelector,
    pub component: usize,
    pub magnitude: f64,
}

/// Homogeneous Dirichlet condition on the listed components of every selected node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Support {
    pub at: NodeSelector,
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadCase {
    #[serde(default)]
    pub loads: Vec<PointLoad>,
    #[serde(default)]
    pub supports: Vec<Support>,
}

/// A load case mapped to the DOFs of a particular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLoads {
    /// Global load vector.
    pub force: Vec<f64>,
    /// Sorted, unique fixed DOFs (prescribed value zero).
    pub fixed: Vec<usize>,
}

impl ResolvedLoads {
    pub fn loaded_nodes(&self, dim: usize) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .force
            .iter()
            .enumerate()
            .filter(|(_, f)| **f != 0.0)
            .map(|(d, _)| d / dim)
            .collect();
        nodes.dedup();
        nodes
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            force: self.force.iter().map(|f| f * factor).collect(),
            fixed: self.fixed.clone(),
        }
    }
}

impl LoadCase {
    /// Selectors of point loads and supports, and in 3D also line ones:
    /// those leaving at most `dim - 2` coordinates free.
    pub fn concentrated(&self, dim: usize) -> Vec<NodeSelector> {
        let limit = dim.saturating_sub(2);
        self.loads
            .iter()
            .map(|l| l.at)
            .chain(self.supports.iter().map(|s| s.at))
            .filter(|sel| sel.free_axes(dim) <= limit)
            .collect()
    }

    pub fn resolve(&self, grid: &StructuredGrid) -> Result<ResolvedLoads> {
        let dim = grid.dim();
        let mut force = vec![0.0; grid.num_dofs()];
        for (i, load) in self.loads.iter().enumerate() {
            if load.component >= dim {
                return Err(Error::config(
                    format!("loads[{i}].component"),
                    format!("component {} out of range for {dim}D", load.component),
                ));
            }
            let nodes = load.at.select(grid);
            if nodes.is_empty() {
                return Err(Error::config(
                    format!("loads[{i}].at"),
                    format!("selector {} matches no grid node", load.at),
                ));
            }
            for n in nodes {
                force[n * dim + load.component] += load.magnitude;
            }
        }
        let mut fixed = Vec::new();
        for (i, sup) in self.supports.iter().enumerate() {
            if let Some(&c) = sup.components.iter().find(|&&c| c >= dim) {
                return Err(Error::config(
                    format!("supports[{i}].components"),
                    format!("component {c} out of range for {dim}D"),
                ));
            }
            let nodes = sup.at.select(grid);
            if nodes.is_empty() {
                return Err(Error::config(
                    format!("supports[{i}].at"),
                    format!("selector {} matches no grid node", sup.at),
                ));
            }
            for n in nodes {
                fixed.extend(sup.components.iter().map(|&c| n * dim + c));
            }
        }
        fixed.sort_unstable();
        fixed.dedup();
        if fixed.is_empty() {
            return Err(Error::config("supports", "load case has no supports"));
        }
        Ok(ResolvedLoads { force, fixed })
    }
}
