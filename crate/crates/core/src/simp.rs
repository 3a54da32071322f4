//! Density-based compliance minimization (SIMP) with a volume constraint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_scaled, ElasticKernel, ElementBasis, LinearSolver, LinearSystem, LoadCase, Material, SolverSettings,
    StructuredGrid,
};
use crate::history::HistoryRow;
use crate::mma::{MmaSettings, MmaState};

/// Per-element design densities on a structured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.is_empty() || n == 0 || values.len() != n {
            return Err(Error::invalid(format!("{} densities for dims {dims:?}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("density {v} outside [0, 1]")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            values,
        })
    }

    pub fn uniform(dims: &[usize], value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpConfig {
    pub penal: f64,
    pub volume_fraction: f64,
    pub filter_radius: f64,
    pub iterations: usize,
    pub material: Material,
    pub rho_min: f64,
    pub move_limit: f64,
}

impl Default for SimpConfig {
    fn default() -> Self {
        Self {
            penal: 3.0,
            volume_fraction: 0.4,
            filter_radius: 1.5,
            iterations: 100,
            material: Material {
                youngs_modulus: 1.0,
                poisson_ratio: 0.3,
            },
            rho_min: 1e-8,
            move_limit: 0.2,
        }
    }
}

impl SimpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penal >= 1.0) {
            return Err(Error::config("penal", "penalization must be >= 1"));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::config("volume_fraction", "must lie in (0, 1]"));
        }
        if !(self.filter_radius >= 1.0) {
            return Err(Error::config("filter_radius", "must be >= 1 element length"));
        }
        if !(self.rho_min > 0.0 && self.rho_min < 1.0) {
            return Err(Error::config("rho_min", "must lie in (0, 1)"));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::config("move_limit", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Solid bilinear (trilinear) element matrix with a 2-point Gauss rule.
pub fn solid_element_matrix(dim: usize, material: &Material) -> Vec<f64> {
    ElasticKernel::new(ElementBasis::new(dim, 1), material).reference_stiffness(2)
}

/// `u_e^T K0 u_e` for every element.
pub fn element_energies(grid: &StructuredGrid, system: &LinearSystem, k0: &[f64]) -> Result<Vec<f64>> {
    let u = system.displacement()?;
    let ndof = grid.dofs_per_element();
    Ok((0..grid.num_elements())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new(), vec![0.0; ndof]),
            |(nodes, dofs, ue), e| {
                grid.element_dofs_into(e, nodes, dofs);
                for (v, &d) in ue.iter_mut().zip(dofs.iter()) {
                    *v = u[d];
                }
                crate::fem::quadratic_form(k0, ue)
            },
        )
        .collect())
}

/// Stiffness factor `e_min + (1 - e_min) rho^p`; `e_min` is the void floor.
pub fn stiffness_scale(rho: f64, penal: f64, e_min: f64) -> f64 {
    e_min + (1.0 - e_min) * rho.powf(penal)
}

/// `dC/drho_e = -p (1 - e_min) rho_e^(p-1) u_e^T K0 u_e`.
pub fn compliance_sensitivity_rho(rho: &[f64], energies: &[f64], penal: f64, e_min: f64) -> Vec<f64> {
    rho.iter()
        .zip(energies)
        .map(|(r, en)| -penal * (1.0 - e_min) * r.powf(penal - 1.0) * en)
        .collect()
}

/// Density-weighted mesh-independency filter with hat weights `max(0, r_min - dist)`.
pub fn sensitivity_filter(dims: &[usize], rho: &[f64], dc: &[f64], r_min: f64) -> Vec<f64> {
    if r_min < 1.0 {
        return dc.to_vec();
    }
    let dim = dims.len();
    let reach = r_min.ceil() as isize - 1;
    let ext = |d: usize| if d < dim { dims[d] as isize } else { 1 };
    let (nx, ny, nz) = (ext(0), ext(1), ext(2));
    let zr = if dim == 3 { reach } else { 0 };
    (0..rho.len())
        .into_par_iter()
        .map(|e| {
            let e = e as isize;
            let (i, j, k) = (e % nx, (e / nx) % ny, e / (nx * ny));
            let mut num = 0.0;
            let mut den = 0.0;
            for c in (k - zr).max(0)..=(k + zr).min(nz - 1) {
                for b in (j - reach).max(0)..=(j + reach).min(ny - 1) {
                    for a in (i - reach).max(0)..=(i + reach).min(nx - 1) {
                        let dist = (((a - i).pow(2) + (b - j).pow(2) + (c - k).pow(2)) as f64).sqrt();
                        let h = r_min - dist;
                        if h > 0.0 {
                            let f = (a + nx * (b + ny * c)) as usize;
                            num += h * rho[f] * dc[f];
                            den += h;
                        }
                    }
                }
            }
            num / (rho[e as usize].max(1e-3) * den)
        })
        .collect()
}

/// Normalized volume constraint `V / V_max - 1` and its (constant) gradient.
pub fn volume_value_and_gradient(rho: &[f64], volume_fraction: f64) -> (f64, Vec<f64>) {
    let vmax = volume_fraction * rho.len() as f64;
    let g = rho.iter().sum::<f64>() / vmax - 1.0;
    (g, vec![1.0 / vmax; rho.len()])
}

/// Result of the density optimization.
#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub field: DensityField,
    /// Compliance of the initial uniform design.
    pub initial_compliance: f64,
    pub history: Vec<HistoryRow>,
}

/// Finite element model used by the density stage: P=1 elements, one density per
/// element, stiffness `rho_min + (1 - rho_min) rho^p`.
#[derive(Debug)]
pub struct SimpModel {
    pub grid: StructuredGrid,
    k0: Vec<f64>,
    loads: crate::fem::ResolvedLoads,
    active: Vec<usize>,
    penal: f64,
    e_min: f64,
    solver: LinearSolver,
}

impl SimpModel {
    pub fn new(dims: &[usize], loads: &LoadCase, config: &SimpConfig, solver: SolverSettings) -> Result<Self> {
        let grid = StructuredGrid::new(dims, 1)?;
        let resolved = loads.resolve(&grid)?;
        Ok(Self {
            k0: solid_element_matrix(grid.dim(), &config.material),
            active: (0..grid.num_elements()).collect(),
            loads: resolved,
            penal: config.penal,
            e_min: config.rho_min,
            solver: LinearSolver::new(solver),
            grid,
        })
    }

    /// Compliance and raw sensitivities for densities `rho`.
    pub fn analyze(&mut self, rho: &[f64]) -> Result<(f64, Vec<f64>)> {
        let scales: Vec<f64> = rho
            .iter()
            .map(|&r| stiffness_scale(r, self.penal, self.e_min))
            .collect();
        let mut sys = assemble_scaled(&self.grid, &self.k0, &self.active, &scales, &self.loads)?;
        sys.solve(&self.grid, &mut self.solver)?;
        let c = sys.compliance()?;
        let energies = element_energies(&self.grid, &sys, &self.k0)?;
        Ok((c, compliance_sensitivity_rho(rho, &energies, self.penal, self.e_min)))
    }
}

/// Run the fixed-length density optimization from the uniform design `rho = V_f`.
pub fn run_stage1(
    dims: &[usize],
    loads: &LoadCase,
    config: &SimpConfig,
    solver: SolverSettings,
) -> Result<Stage1Result> {
    config.validate()?;
    let mut model = SimpModel::new(dims, loads, config, solver)?;
    let n = model.grid.num_elements();
    let vf = config.volume_fraction;
    let mut rho = vec![vf.max(config.rho_min); n];
    let xmin = vec![config.rho_min; n];
    let xmax = vec![1.0; n];
    let mut mma = MmaState::new(n, MmaSettings::with_move_limit(config.move_limit));
    let (c0, mut dc) = model.analyze(&rho).map_err(|e| e.at_iteration("stage 1", 0))?;
    if !(c0 > 0.0) {
        return Err(Error::DegenerateDesign(format!(
            "initial compliance {c0} is not positive; check loads"
        )));
    }
    let mut history = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let filtered = sensitivity_filter(dims, &rho, &dc, config.filter_radius);
        let df: Vec<f64> = filtered.iter().map(|v| v / c0).collect();
        let (g, dg) = volume_value_and_gradient(&rho, vf);
        rho = mma
            .update(&rho, &df, g, &dg, &xmin, &xmax)
            .map_err(|e| e.at_iteration("stage 1", it))?;
        let (c, next_dc) = model.analyze(&rho).map_err(|e| e.at_iteration("stage 1", it))?;
        dc = next_dc;
        let ratio = rho.iter().sum::<f64>() / (vf * n as f64);
        log::debug!("stage 1 it {it:3}: C = {c:.6e}, V/Vmax = {ratio:.5}");
        history.push(HistoryRow {
            stage: 1,
            iteration: it,
            compliance: c,
            volume_ratio: ratio,
        });
    }
    Ok(Stage1Result {
        field: DensityField::new(dims, rho)?,
        initial_compliance: c0,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{NodeSelector, PointLoad, Support};

    pub(crate) fn cantilever(nx: usize, ny: usize) -> LoadCase {
        LoadCase {
            loads: vec![PointLoad {
                at: NodeSelector::point2(nx as f64, ny as f64 / 2.0),
                component: 1,
                magnitude: -1.0,
            }],
            supports: vec![Support {
                at: NodeSelector::at(Some(0.0), None, None),
                components: vec![0, 1],
            }],
        }
    }

    fn mbb(nx: usize, ny: usize) -> LoadCase {
        LoadCase {
            loads: vec![PointLoad {
                at: NodeSelector::point2(0.0, ny as f64),
                component: 1,
                magnitude: -1.0,
            }],
            supports: vec![
                Support {
                    at: NodeSelector::at(Some(0.0), None, None),
                    components: vec![0],
                },
                Support {
                    at: NodeSelector::point2(nx as f64, 0.0),
                    components: vec![1],
                },
            ],
        }
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        let cfg = SimpConfig::default();
        let mut model = SimpModel::new(&[4, 4], &cantilever(4, 4), &cfg, SolverSettings::default()).unwrap();
        let rho: Vec<f64> = (0..16).map(|i| 0.3 + 0.04 * i as f64).collect();
        let (_, dc) = model.analyze(&rho).unwrap();
        let h = 1e-6;
        for e in 0..16 {
            let mut rp = rho.clone();
            let mut rm = rho.clone();
            rp[e] += h;
            rm[e] -= h;
            let fd = (model.analyze(&rp).unwrap().0 - model.analyze(&rm).unwrap().0) / (2.0 * h);
            assert!((fd - dc[e]).abs() < 1e-4 * dc[e].abs(), "e={e}: {fd} vs {}", dc[e]);
            assert!(dc[e] <= 0.0);
        }
    }

    #[test]
    fn unloaded_element_has_zero_sensitivity() {
        // elements right of a fully clamped column carry no load
        let lc = LoadCase {
            loads: vec![PointLoad {
                at: NodeSelector::point2(1.0, 2.0),
                component: 1,
                magnitude: -1.0,
            }],
            supports: vec![
                Support {
                    at: NodeSelector::at(Some(0.0), None, None),
                    components: vec![0, 1],
                },
                Support {
                    at: NodeSelector::at(Some(2.0), None, None),
                    components: vec![0, 1],
                },
            ],
        };
        let mut model = SimpModel::new(&[4, 2], &lc, &SimpConfig::default(), SolverSettings::default()).unwrap();
        let (_, dc) = model.analyze(&[0.5; 8]).unwrap();
        for e in [3usize, 7] {
            assert!(dc[e].abs() < 1e-14, "{}", dc[e]);
        }
    }

    #[test]
    fn filter_behaviour() {
        let dims = [5, 5];
        let rho = vec![0.5; 25];
        assert_eq!(sensitivity_filter(&dims, &rho, &[-2.0; 25], 1.5), vec![-2.0; 25]);
        let spike: Vec<f64> = (0..25).map(|i| if i == 12 { -1.0 } else { 0.0 }).collect();
        assert_eq!(sensitivity_filter(&dims, &rho, &spike, 0.9), spike);
        let out = sensitivity_filter(&dims, &rho, &spike, 1.5);
        // hand-computed stencil: centre weight 1.5, edge 0.5, diagonal 1.5 - sqrt 2
        let diag = 1.5 - 2f64.sqrt();
        let interior_sum = 1.5 + 4.0 * 0.5 + 4.0 * diag;
        assert!((out[12] + 1.5 / interior_sum).abs() < 1e-15);
        assert!((out[7] + 0.5 / interior_sum).abs() < 1e-15);
        assert!((out[6] + diag / interior_sum).abs() < 1e-15);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn volume_constraint_values() {
        let (g, dg) = volume_value_and_gradient(&[0.4; 10], 0.4);
        assert!(g.abs() < 1e-15);
        assert!((dg[0] - 0.25).abs() < 1e-15);
        assert!((volume_value_and_gradient(&[1.0; 10], 0.4).0 - 1.5).abs() < 1e-12);
        assert!((volume_value_and_gradient(&[1e-8; 10], 0.4).0 + 1.0).abs() < 1e-7);
    }

    #[test]
    fn desk_mbb_improves() {
        let cfg = SimpConfig {
            volume_fraction: 0.5,
            iterations: 40,
            ..SimpConfig::default()
        };
        let r = run_stage1(&[8, 4], &mbb(8, 4), &cfg, SolverSettings::default()).unwrap();
        let last = r.history.last().unwrap();
        assert!(
            last.compliance < 0.7 * r.initial_compliance,
            "{} vs {}",
            last.compliance,
            r.initial_compliance
        );
        assert!((last.volume_ratio - 1.0).abs() < 1e-3);
        assert!(r.field.values.iter().all(|&v| (1e-8..=1.0).contains(&v)));
    }

    #[test]
    fn full_volume_goes_solid() {
        let cfg = SimpConfig {
            volume_fraction: 1.0,
            iterations: 15,
            ..SimpConfig::default()
        };
        let r = run_stage1(&[6, 4], &cantilever(6, 4), &cfg, SolverSettings::default()).unwrap();
        assert!(r.field.values.iter().all(|&v| v > 1.0 - 1e-9));
    }

    #[test]
    fn deterministic() {
        let cfg = SimpConfig {
            iterations: 5,
            ..SimpConfig::default()
        };
        let a = run_stage1(&[10, 5], &mbb(10, 5), &cfg, SolverSettings::default()).unwrap();
        let b = run_stage1(&[10, 5], &mbb(10, 5), &cfg, SolverSettings::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.field, b.field);
    }
}
