//! Global stiffness assembly, boundary conditions, solve and compliance.

use rayon::prelude::*;

use super::element::{ElasticKernel, PointSet};
use super::grid::StructuredGrid;
use super::loads::ResolvedLoads;
use super::solver::{norm, LinearSolver};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

const ELIMINATED: usize = usize::MAX;
const CHUNK: usize = 512;

/// Numbering of the unknowns that survive elimination of fixed DOFs and of
/// DOFs not touched by any active element.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    reduced: Vec<usize>,
    free: Vec<usize>,
}

impl DofMap {
    pub fn new(grid: &StructuredGrid, active: &[usize], fixed: &[usize]) -> Self {
        let dim = grid.dim();
        let mut touched = vec![false; grid.num_nodes()];
        let mut nodes = Vec::new();
        for &e in active {
            grid.element_nodes_into(e, &mut nodes);
            for &n in &nodes {
                touched[n] = true;
            }
        }
        let mut reduced = vec![ELIMINATED; grid.num_dofs()];
        for (n, &t) in touched.iter().enumerate() {
            if t {
                for c in 0..dim {
                    reduced[n * dim + c] = 0;
                }
            }
        }
        for &d in fixed {
            reduced[d] = ELIMINATED;
        }
        let mut free = Vec::new();
        for (d, r) in reduced.iter_mut().enumerate() {
            if *r != ELIMINATED {
                *r = free.len();
                free.push(d);
            }
        }
        Self { reduced, free }
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn num_global(&self) -> usize {
        self.reduced.len()
    }

    pub fn reduced(&self, global: usize) -> Option<usize> {
        let r = self.reduced[global];
        (r != ELIMINATED).then_some(r)
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn restrict(&self, global: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| global[d]).collect()
    }

    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.reduced.len()];
        for (&d, &v) in self.free.iter().zip(reduced) {
            out[d] = v;
        }
        out
    }
}

/// Assembled (and possibly solved) reduced system `K u = f`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub dofs: DofMap,
    /// Reduced stiffness over free DOFs.
    pub stiffness: CsrMatrix,
    /// Global load vector.
    pub load: Vec<f64>,
    pub fixed_dofs: Vec<usize>,
    /// Global displacement vector, zero on eliminated DOFs.
    pub displacement: Option<Vec<f64>>,
    pub active_elements: Vec<usize>,
}

fn build_pattern(grid: &StructuredGrid, active: &[usize], dofs: &DofMap) -> CsrMatrix {
    let dim = grid.dim();
    let mut node_adj: Vec<Vec<usize>> = vec![Vec::new(); grid.num_nodes()];
    let mut nodes = Vec::new();
    for &e in active {
        grid.element_nodes_into(e, &mut nodes);
        for &a in &nodes {
            node_adj[a].extend_from_slice(&nodes);
        }
    }
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dofs.num_free()];
    for (a, adj) in node_adj.iter_mut().enumerate() {
        if adj.is_empty() {
            continue;
        }
        adj.sort_unstable();
        adj.dedup();
        for i in 0..dim {
            let Some(r) = dofs.reduced(a * dim + i) else { continue };
            let row = &mut rows[r];
            for &b in adj.iter() {
                for j in 0..dim {
                    if let Some(c) = dofs.reduced(b * dim + j) {
                        row.push(c);
                    }
                }
            }
        }
    }
    CsrMatrix::from_row_columns(rows)
}

/// Assemble from per-element dense matrices produced by `element_matrix(slot, out)`,
/// where `slot` indexes `active`. Element matrices are computed in parallel and
/// scattered in element order, so results are bit-reproducible.
pub fn assemble_with<F>(
    grid: &StructuredGrid,
    active: &[usize],
    loads: &ResolvedLoads,
    element_matrix: F,
) -> Result<LinearSystem>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let dofs = DofMap::new(grid, active, &loads.fixed);
    for (d, &f) in loads.force.iter().enumerate() {
        if f != 0.0 && dofs.reduced(d).is_none() && loads.fixed.binary_search(&d).is_err() {
            return Err(Error::Assembly(format!(
                "load on DOF {d} is not attached to any active element"
            )));
        }
    }
    let mut k = build_pattern(grid, active, &dofs);
    let ndof = grid.dofs_per_element();
    for start in (0..active.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(active.len());
        let mats: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|slot| {
                let mut m = vec![0.0; ndof * ndof];
                element_matrix(slot, &mut m).map(|_| m)
            })
            .collect::<Result<_>>()?;
        let mut nodes = Vec::new();
        let mut edofs = Vec::new();
        for (slot, m) in (start..end).zip(&mats) {
            grid.element_dofs_into(active[slot], &mut nodes, &mut edofs);
            let red: Vec<Option<usize>> = edofs.iter().map(|&d| dofs.reduced(d)).collect();
            for (a, ra) in red.iter().enumerate() {
                let Some(ra) = *ra else { continue };
                for (b, rb) in red.iter().enumerate() {
                    if let Some(rb) = *rb {
                        let v = m[a * ndof + b];
                        if v != 0.0 {
                            k.add(ra, rb, v);
                        }
                    }
                }
            }
        }
    }
    Ok(LinearSystem {
        dofs,
        stiffness: k,
        load: loads.force.clone(),
        fixed_dofs: loads.fixed.clone(),
        displacement: None,
        active_elements: active.to_vec(),
    })
}

/// `K = sum_k rho_k^p * w_k * B_k^T C B_k` over the integration points of every
/// element in `points`.
pub fn assemble_stiffness(
    grid: &StructuredGrid,
    kernel: &ElasticKernel,
    points: &PointSet,
    densities: &[f64],
    penal: f64,
    loads: &ResolvedLoads,
) -> Result<LinearSystem> {
    if densities.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} densities for {} integration points",
            densities.len(),
            points.len()
        )));
    }
    if let Some(bad) = densities.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("density {bad} outside [0, 1]")));
    }
    for (slot, &e) in points.elements.iter().enumerate() {
        if points.element_points(slot).is_empty() {
            return Err(Error::Assembly(format!("active element {e} has no integration points")));
        }
    }
    assemble_with(grid, &points.elements, loads, |slot, out| {
        let range = points.slot_range(slot);
        let scales: Vec<f64> = densities[range.clone()].iter().map(|r| r.powf(penal)).collect();
        kernel.element_stiffness(&points.points[range], &scales, out);
        Ok(())
    })
}

/// Element-constant scaling of a reference element matrix: `K_e = scale_e * K0`.
pub fn assemble_scaled(
    grid: &StructuredGrid,
    reference: &[f64],
    active: &[usize],
    scales: &[f64],
    loads: &ResolvedLoads,
) -> Result<LinearSystem> {
    assemble_with(grid, active, loads, |slot, out| {
        let s = scales[slot];
        for (o, r) in out.iter_mut().zip(reference) {
            *o = s * r;
        }
        Ok(())
    })
}

impl LinearSystem {
    pub fn reduced_load(&self) -> Vec<f64> {
        self.dofs.restrict(&self.load)
    }

    /// Solve for the displacement. Accepts `||K u - f|| <= 1e-8 ||f||`, or a
    /// normwise backward error below `1e-12` when soft regions make `u` huge.
    pub fn solve(&mut self, grid: &StructuredGrid, solver: &mut LinearSolver) -> Result<&[f64]> {
        let f = self.reduced_load();
        let fnorm = norm(&f);
        if fnorm == 0.0 {
            self.displacement = Some(vec![0.0; self.dofs.num_global()]);
            return Ok(self.displacement.as_deref().unwrap());
        }
        let attach_modes = |e: Error| match e {
            Error::SolverFailure { reason, .. } => Error::SolverFailure {
                reason,
                unconstrained_modes: Some(unconstrained_rigid_modes(grid, &self.active_elements, &self.fixed_dofs)),
            },
            other => other,
        };
        let mut shifted = false;
        let mut u = match solver.solve(&self.stiffness, &f) {
            Err(Error::SolverFailure { reason, .. }) if solver.uses_direct(f.len()) => {
                let modes = unconstrained_rigid_modes(grid, &self.active_elements, &self.fixed_dofs);
                if modes > 0 {
                    return Err(Error::SolverFailure {
                        reason,
                        unconstrained_modes: Some(modes),
                    });
                }
                log::debug!("{reason}; retrying with a shifted preconditioner");
                shifted = true;
                solver.solve_shifted(&self.stiffness, &f, 1e-10).map_err(attach_modes)?
            }
            other => other.map_err(attach_modes)?,
        };
        let knorm = self.stiffness.norm_inf();
        let accept = |res: f64, u: &[f64]| res <= 1e-8 * fnorm || res <= 1e-12 * (knorm * norm(u) + fnorm);
        let mut res = self.residual_norm(&u, &f);
        let mut steps = 0;
        while !accept(res, &u) {
            if steps == 3 {
                return Err(attach_modes(Error::SolverFailure {
                    reason: format!("relative residual {:.3e} after refinement", res / fnorm),
                    unconstrained_modes: None,
                }));
            }
            steps += 1;
            let r: Vec<f64> = {
                let ku = self.stiffness.mul_vec(&u);
                f.iter().zip(&ku).map(|(a, b)| a - b).collect()
            };
            let du = if shifted {
                solver.solve_shifted(&self.stiffness, &r, 1e-10)
            } else {
                solver.solve(&self.stiffness, &r)
            }
            .map_err(attach_modes)?;
            for (ui, di) in u.iter_mut().zip(&du) {
                *ui += di;
            }
            res = self.residual_norm(&u, &f);
        }
        self.displacement = Some(self.dofs.expand(&u));
        Ok(self.displacement.as_deref().unwrap())
    }

    fn residual_norm(&self, u: &[f64], f: &[f64]) -> f64 {
        let ku = self.stiffness.mul_vec(u);
        ku.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn displacement(&self) -> Result<&[f64]> {
        self.displacement
            .as_deref()
            .ok_or_else(|| Error::invalid("system has not been solved"))
    }

    /// Compliance `f^T u`.
    pub fn compliance(&self) -> Result<f64> {
        let u = self.displacement()?;
        Ok(self.load.iter().zip(u).map(|(f, u)| f * u).sum())
    }

    /// Displacements of the DOFs of element `e`.
    pub fn element_displacement(&self, grid: &StructuredGrid, e: usize, out: &mut Vec<f64>) -> Result<()> {
        let u = self.displacement()?;
        let mut nodes = Vec::new();
        let mut edofs = Vec::new();
        grid.element_dofs_into(e, &mut nodes, &mut edofs);
        out.clear();
        out.extend(edofs.iter().map(|&d| u[d]));
        Ok(())
    }
}

/// Solve `system` with a fresh solver and return the compliance.
pub fn solve_and_compliance(
    grid: &StructuredGrid,
    system: &mut LinearSystem,
    solver: &mut LinearSolver,
) -> Result<f64> {
    system.solve(grid, solver)?;
    system.compliance()
}

/// Connected components of `active` elements (elements sharing a node are connected).
pub fn element_components(grid: &StructuredGrid, active: &[usize]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..active.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut owner = vec![usize::MAX; grid.num_nodes()];
    let mut nodes = Vec::new();
    for (slot, &e) in active.iter().enumerate() {
        grid.element_nodes_into(e, &mut nodes);
        for &n in &nodes {
            if owner[n] == usize::MAX {
                owner[n] = slot;
            } else {
                let (a, b) = (find(&mut parent, owner[n]), find(&mut parent, slot));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index = vec![usize::MAX; active.len()];
    for slot in 0..active.len() {
        let r = find(&mut parent, slot);
        if index[r] == usize::MAX {
            index[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[index[r]].push(active[slot]);
    }
    groups
}

/// Number of rigid-body modes left unconstrained by `fixed` over all
/// connected components of `active`.
pub fn unconstrained_rigid_modes(grid: &StructuredGrid, active: &[usize], fixed: &[usize]) -> usize {
    element_components(grid, active)
        .iter()
        .map(|comp| component_free_modes(grid, comp, fixed))
        .sum()
}

/// Rigid-body modes of the element set `comp` (assumed connected) that
/// `fixed` does not restrain.
pub fn component_free_modes(grid: &StructuredGrid, comp: &[usize], fixed: &[usize]) -> usize {
    let dim = grid.dim();
    let nmodes = if dim == 2 { 3 } else { 6 };
    let mut in_comp = vec![false; grid.num_nodes()];
    let mut nodes = Vec::new();
    for &e in comp {
        grid.element_nodes_into(e, &mut nodes);
        for &n in &nodes {
            in_comp[n] = true;
        }
    }
    // rows: rigid modes evaluated at each fixed DOF of this component
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &d in fixed {
        let (n, c) = (d / dim, d % dim);
        if !in_comp[n] {
            continue;
        }
        let x = grid.node_position(n);
        let mut row = vec![0.0; nmodes];
        row[c] = 1.0;
        if dim == 2 {
            row[2] = if c == 0 { -x[1] } else { x[0] };
        } else {
            // rotations about x, y, z: omega x r
            match c {
                0 => {
                    row[4] = x[2];
                    row[5] = -x[1];
                }
                1 => {
                    row[3] = -x[2];
                    row[5] = x[0];
                }
                _ => {
                    row[3] = x[1];
                    row[4] = -x[0];
                }
            }
        }
        rows.push(row);
    }
    nmodes - matrix_rank(&mut rows, nmodes)
}

fn matrix_rank(rows: &mut [Vec<f64>], ncols: usize) -> usize {
    let scale = rows.iter().flat_map(|r| r.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let mut rank = 0;
    for col in 0..ncols {
        let pivot = (rank..rows.len()).max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs()));
        let Some(p) = pivot else { break };
        if rows[p][col].abs() <= tol {
            continue;
        }
        rows.swap(rank, p);
        for r in rank + 1..rows.len() {
            let factor = rows[r][col] / rows[rank][col];
            for c in col..ncols {
                let v = rows[rank][c];
                rows[r][c] -= factor * v;
            }
        }
        rank += 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::basis::ElementBasis;
    use crate::fem::element::{quadratic_form, Material};
    use crate::fem::loads::{LoadCase, NodeSelector, PointLoad, Support};
    use crate::fem::solver::{SolverKind, SolverSettings};

    fn cantilever(dims: &[usize]) -> LoadCase {
        let (nx, ny) = (dims[0] as f64, dims[1] as f64);
        LoadCase {
            loads: vec![PointLoad {
                at: NodeSelector::point2(nx, ny),
                component: 1,
                magnitude: -1.0,
            }],
            supports: vec![Support {
                at: NodeSelector::at(Some(0.0), None, None),
                components: vec![0, 1],
            }],
        }
    }

    fn direct() -> LinearSolver {
        LinearSolver::new(SolverSettings {
            kind: SolverKind::Direct,
            ..Default::default()
        })
    }

    /// Naive dense Gaussian elimination for the oracle solve.
    fn dense_solve(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a[i * n..(i + 1) * n].to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=n {
                        let v = m[c][k];
                        m[r][k] -= f * v;
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n] / m[i][i]).collect()
    }

    #[test]
    fn single_element_against_dense_solve() {
        let grid = StructuredGrid::new(&[1, 1], 1).unwrap();
        let kernel = ElasticKernel::new(ElementBasis::new(2, 1), &Material::new(1.0, 0.0).unwrap());
        let lc = LoadCase {
            loads: vec![PointLoad {
                at: NodeSelector::point2(1.0, 1.0),
                component: 1,
                magnitude: 1.0,
            }],
            supports: vec![Support {
                at: NodeSelector::at(None, Some(0.0), None),
                components: vec![0, 1],
            }],
        };
        let loads = lc.resolve(&grid).unwrap();
        let pts = PointSet::uniform(&[0], 2, 2);
        let mut sys = assemble_stiffness(&grid, &kernel, &pts, &[1.0; 4], 3.0, &loads).unwrap();
        let u = sys.solve(&grid, &mut direct()).unwrap().to_vec();
        // oracle: the 8x8 matrix with fixed rows/cols removed (free dofs 4..8)
        let k0 = kernel.reference_stiffness(2);
        let free = [4usize, 5, 6, 7];
        let kr: Vec<f64> = free
            .iter()
            .flat_map(|&i| free.iter().map(|&j| (i, j)).collect::<Vec<_>>())
            .map(|(i, j)| k0[i * 8 + j])
            .collect();
        let fr: Vec<f64> = free.iter().map(|&i| loads.force[i]).collect();
        let ur = dense_solve(4, &kr, &fr);
        for (k, &d) in free.iter().enumerate() {
            assert!((u[d] - ur[k]).abs() < 1e-12);
        }
        for d in 0..4 {
            assert_eq!(u[d], 0.0);
        }
    }

    #[test]
    fn scaling_laws() {
        let grid = StructuredGrid::new(&[4, 3], 1).unwrap();
        let kernel = ElasticKernel::new(ElementBasis::new(2, 1), &Material::new(1.0, 0.3).unwrap());
        let loads = cantilever(grid.dims()).resolve(&grid).unwrap();
        let active: Vec<usize> = (0..grid.num_elements()).collect();
        let pts = PointSet::uniform(&active, 2, 2);
        let solve = |dens: f64, loads: &ResolvedLoads| {
            let mut s = assemble_stiffness(&grid, &kernel, &pts, &vec![dens; pts.len()], 3.0, loads).unwrap();
            s.solve(&grid, &mut direct()).unwrap();
            s
        };
        let base = solve(1.0, &loads);
        let c = base.compliance().unwrap();
        assert!(c > 0.0);
        // density 0.5 with p = 3 scales every element by exactly 0.125
        let half = solve(0.5, &loads);
        let kh = half.stiffness.values();
        for (a, b) in kh.iter().zip(base.stiffness.values()) {
            assert!((a - 0.125 * b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert!((half.compliance().unwrap() - 8.0 * c).abs() < 1e-9 * c);
        // void floor: 1e-8^3
        let void = assemble_stiffness(&grid, &kernel, &pts, &vec![1e-8; pts.len()], 3.0, &loads).unwrap();
        for (a, b) in void.stiffness.values().iter().zip(base.stiffness.values()) {
            assert!((a - 1e-24 * b).abs() <= 1e-12 * (1e-24 * b).abs() + 1e-40);
        }
        // load doubling: u doubles, C quadruples
        let twice = solve(1.0, &loads.scaled(2.0));
        assert!((twice.compliance().unwrap() - 4.0 * c).abs() < 1e-9 * c);
        for (a, b) in twice.displacement().unwrap().iter().zip(base.displacement().unwrap()) {
            assert!((a - 2.0 * b).abs() < 1e-10);
        }
        // zero load
        let zero = solve(1.0, &loads.scaled(0.0));
        assert_eq!(zero.compliance().unwrap(), 0.0);
    }

    #[test]
    fn compliance_equals_element_energy_sum() {
        let grid = StructuredGrid::new(&[5, 3], 2).unwrap();
        let kernel = ElasticKernel::new(ElementBasis::new(2, 2), &Material::new(1.0, 0.3).unwrap());
        let loads = cantilever(grid.dims()).resolve(&grid).unwrap();
        let active: Vec<usize> = (0..grid.num_elements()).collect();
        let pts = PointSet::uniform(&active, 2, 3);
        let dens: Vec<f64> = (0..pts.len())
            .map(|k| 0.2 + 0.8 * ((k * 37 % 11) as f64 / 10.0))
            .collect();
        let mut sys = assemble_stiffness(&grid, &kernel, &pts, &dens, 3.0, &loads).unwrap();
        let c = solve_and_compliance(&grid, &mut sys, &mut direct()).unwrap();
        let n = kernel.num_dofs();
        let mut ke = vec![0.0; n * n];
        let mut ue = Vec::new();
        let mut sum = 0.0;
        for (slot, &e) in pts.elements.iter().enumerate() {
            let r = pts.slot_range(slot);
            let s: Vec<f64> = dens[r.clone()].iter().map(|d| d.powi(3)).collect();
            kernel.element_stiffness(&pts.points[r], &s, &mut ke);
            sys.element_displacement(&grid, e, &mut ue).unwrap();
            sum += quadratic_form(&ke, &ue);
        }
        assert!((sum - c).abs() < 1e-8 * c);
        assert!(sys.stiffness.asymmetry() <= 1e-10 * sys.stiffness.max_abs());
    }

    #[test]
    fn patch_test_constant_strain() {
        // Prescribed linear displacement on the boundary reproduces constant strain inside.
        for order in 1..=3 {
            let grid = StructuredGrid::new(&[3, 2], order).unwrap();
            let kernel = ElasticKernel::new(ElementBasis::new(2, order), &Material::new(1.0, 0.3).unwrap());
            let exact = |x: [f64; 3]| [1e-3 * x[0] + 2e-3 * x[1], -5e-4 * x[0] + 3e-3 * x[1]];
            // fix all boundary DOFs, solve K_ff u_f = -K_fb u_b by lifting
            let dim = 2;
            let mut fixed = Vec::new();
            let mut ub = vec![0.0; grid.num_dofs()];
            for n in 0..grid.num_nodes() {
                let x = grid.node_position(n);
                let on_boundary = x[0] == 0.0 || x[1] == 0.0 || x[0] == 3.0 || x[1] == 2.0;
                if on_boundary {
                    let v = exact(x);
                    for c in 0..dim {
                        fixed.push(n * dim + c);
                        ub[n * dim + c] = v[c];
                    }
                }
            }
            let active: Vec<usize> = (0..grid.num_elements()).collect();
            let pts = PointSet::uniform(&active, 2, order + 1);
            // full (unreduced) stiffness to compute the lifting load
            let free_all = ResolvedLoads {
                force: vec![0.0; grid.num_dofs()],
                fixed: vec![],
            };
            let full = assemble_stiffness(&grid, &kernel, &pts, &vec![1.0; pts.len()], 3.0, &free_all).unwrap();
            let kub = full.stiffness.mul_vec(&ub);
            let loads = ResolvedLoads {
                force: kub.iter().map(|v| -v).collect(),
                fixed: fixed.clone(),
            };
            let mut sys = assemble_stiffness(&grid, &kernel, &pts, &vec![1.0; pts.len()], 3.0, &loads).unwrap();
            let u = sys.solve(&grid, &mut direct()).unwrap();
            for n in 0..grid.num_nodes() {
                let x = grid.node_position(n);
                let v = exact(x);
                for c in 0..dim {
                    let total = u[n * dim + c] + ub[n * dim + c];
                    assert!((total - v[c]).abs() < 1e-10, "order {order} node {n}");
                }
            }
        }
    }

    #[test]
    fn higher_order_is_more_flexible() {
        let mut comps = Vec::new();
        for order in [1, 2] {
            let grid = StructuredGrid::new(&[8, 4], order).unwrap();
            let kernel = ElasticKernel::new(ElementBasis::new(2, order), &Material::new(1.0, 0.0).unwrap());
            let loads = cantilever(grid.dims()).resolve(&grid).unwrap();
            let active: Vec<usize> = (0..grid.num_elements()).collect();
            let pts = PointSet::uniform(&active, 2, order + 1);
            let mut sys = assemble_stiffness(&grid, &kernel, &pts, &vec![1.0; pts.len()], 3.0, &loads).unwrap();
            comps.push(solve_and_compliance(&grid, &mut sys, &mut direct()).unwrap());
        }
        // nested spaces: the richer space minimizes potential energy further
        assert!(comps[1] >= comps[0]);
    }

    #[test]
    fn unsupported_structure_reports_modes() {
        let grid = StructuredGrid::new(&[2, 2], 1).unwrap();
        let kernel = ElasticKernel::new(ElementBasis::new(2, 1), &Material::new(1.0, 0.0).unwrap());
        // a single fixed DOF leaves two rigid modes
        let loads = ResolvedLoads {
            force: {
                let mut f = vec![0.0; grid.num_dofs()];
                f[grid.num_dofs() - 1] = 1.0;
                f
            },
            fixed: vec![0],
        };
        let active: Vec<usize> = (0..4).collect();
        assert_eq!(unconstrained_rigid_modes(&grid, &active, &loads.fixed), 2);
        let pts = PointSet::uniform(&active, 2, 2);
        let mut sys = assemble_stiffness(&grid, &kernel, &pts, &[1.0; 16], 3.0, &loads).unwrap();
        match sys.solve(&grid, &mut direct()) {
            Err(Error::SolverFailure {
                unconstrained_modes: Some(2),
                ..
            }) => {}
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn assembly_errors() {
        let grid = StructuredGrid::new(&[2, 1], 1).unwrap();
        let kernel = ElasticKernel::new(ElementBasis::new(2, 1), &Material::new(1.0, 0.0).unwrap());
        let loads = cantilever(grid.dims()).resolve(&grid).unwrap();
        let pts = PointSet::uniform(&[0, 1], 2, 2);
        assert!(matches!(
            assemble_stiffness(&grid, &kernel, &pts, &[1.5; 8], 3.0, &loads),
            Err(Error::InvalidArgument(_))
        ));
        let mut empty = pts.clone();
        empty.offsets = vec![0, 0, 4];
        empty.points.truncate(4);
        assert!(matches!(
            assemble_stiffness(&grid, &kernel, &empty, &[1.0; 4], 3.0, &loads),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn components_split_on_gaps() {
        let grid = StructuredGrid::new(&[5, 1], 1).unwrap();
        let comps = element_components(&grid, &[0, 1, 3, 4]);
        assert_eq!(comps, vec![vec![0, 1], vec![3, 4]]);
    }
}
