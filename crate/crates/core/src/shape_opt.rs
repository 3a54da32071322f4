//! Level-set shape optimization on the Finite Cell fabric.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fcm::{Anchors, FcmDomain, FcmSettings};
use crate::fem::{
    assemble_stiffness, ElasticKernel, ElementBasis, LinearSolver, LinearSystem, LoadCase, Material, PointSet,
    ResolvedLoads, SolverSettings, StructuredGrid,
};
use crate::history::HistoryRow;
use crate::levelset::{density_derivative, density_from_lsf, heaviside, heaviside_derivative, RbfLevelSet, SolidPads};
use crate::mma::{MmaSettings, MmaState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeOptConfig {
    pub order: usize,
    pub fcm: FcmSettings,
    pub iterations_per_phase: usize,
    pub phases: usize,
    pub penal: f64,
    pub rho0: f64,
    pub volume_fraction: f64,
    pub move_limit: f64,
    pub material: Material,
}

impl Default for ShapeOptConfig {
    fn default() -> Self {
        Self {
            order: 2,
            fcm: FcmSettings::default(),
            iterations_per_phase: 10,
            phases: 2,
            penal: 3.0,
            rho0: 1e-8,
            volume_fraction: 0.4,
            move_limit: 0.1,
            material: Material {
                youngs_modulus: 1.0,
                poisson_ratio: 0.3,
            },
        }
    }
}

/// `d phi / d w` restricted to the integration points of a domain: row `k`
/// holds `N_i(x_k)` for the RBFs supported at point `k`.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityMap<'a> {
    grid: &'a StructuredGrid,
    domain: &'a FcmDomain,
}

impl<'a> SensitivityMap<'a> {
    pub fn new(grid: &'a StructuredGrid, domain: &'a FcmDomain) -> Self {
        Self { grid, domain }
    }

    /// `phi0_k = sum_i N_i(x_k) w_i`.
    pub fn forward(&self, weights: &[f64]) -> Vec<f64> {
        let lsf_dims = self.grid.dims();
        let mut out = vec![0.0; self.domain.num_points()];
        let offsets = &self.domain.points.offsets;
        let mut chunks = Vec::with_capacity(self.domain.active.len());
        let mut rest = out.as_mut_slice();
        for slot in 0..self.domain.active.len() {
            let (head, tail) = rest.split_at_mut(offsets[slot + 1] - offsets[slot]);
            chunks.push((slot, head));
            rest = tail;
        }
        chunks.into_par_iter().for_each(|(slot, chunk)| {
            let e = self.domain.active[slot];
            self.domain
                .layout(slot)
                .stencil
                .eval(lsf_dims, self.grid.element_ijk(e), weights, chunk);
        });
        out
    }

    /// `g_i = sum_k N_i(x_k) coeffs_k` for every `coeffs` vector, accumulated in
    /// element order for reproducibility.
    pub fn transpose<const M: usize>(&self, coeffs: [&[f64]; M]) -> [Vec<f64>; M] {
        let dims = self.grid.dims();
        let n: usize = dims.iter().product();
        let parts: Vec<Vec<(usize, [f64; M])>> = (0..self.domain.active.len())
            .into_par_iter()
            .map(|slot| {
                let e = self.domain.active[slot];
                let range = self.domain.points.slot_range(slot);
                let stencil = &self.domain.layout(slot).stencil;
                let mut local = Vec::with_capacity(stencil.num_offsets());
                stencil.for_each_column(dims, self.grid.element_ijk(e), |i, col| {
                    let mut s = [0.0; M];
                    for (m, c) in coeffs.iter().enumerate() {
                        s[m] = col.iter().zip(&c[range.clone()]).map(|(a, b)| a * b).sum();
                    }
                    local.push((i, s));
                });
                local
            })
            .collect();
        let mut out: [Vec<f64>; M] = std::array::from_fn(|_| vec![0.0; n]);
        for part in parts {
            for (i, s) in part {
                for m in 0..M {
                    out[m][i] += s[m];
                }
            }
        }
        out
    }
}

/// State of one finite cell analysis.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub compliance: f64,
    /// Material volume over the design domain volume.
    pub volume_fraction: f64,
    pub system: LinearSystem,
    /// Level-set value at each integration point, `+inf` inside solid pads.
    pub phi: Vec<f64>,
    pub rho_hat: Vec<f64>,
}

/// Finite cell model of one load case on a fixed grid.
#[derive(Debug)]
pub struct ShapeModel {
    pub grid: StructuredGrid,
    pub config: ShapeOptConfig,
    pub domain: FcmDomain,
    kernel: ElasticKernel,
    loads: ResolvedLoads,
    anchors: Anchors,
    solver: LinearSolver,
}

impl ShapeModel {
    pub fn new(
        dims: &[usize],
        loads: &LoadCase,
        config: ShapeOptConfig,
        solver: SolverSettings,
        lsf: &RbfLevelSet,
    ) -> Result<Self> {
        let grid = StructuredGrid::new(dims, config.order)?;
        if lsf.dims() != dims {
            return Err(Error::invalid(format!(
                "level set lattice {:?} does not match grid {dims:?}",
                lsf.dims()
            )));
        }
        let resolved = loads.resolve(&grid)?;
        let mut anchors = Anchors::from_loads(&grid, &resolved);
        anchors.pads = SolidPads::from_load_case(dims, loads);
        anchors.protected_elements.extend_from_slice(anchors.pads.elements());
        anchors.protected_elements.sort_unstable();
        anchors.protected_elements.dedup();
        let domain = FcmDomain::build(&grid, lsf, config.fcm, &anchors)?;
        Ok(Self {
            kernel: ElasticKernel::new(ElementBasis::new(grid.dim(), config.order), &config.material),
            grid,
            config,
            domain,
            loads: resolved,
            anchors,
            solver: LinearSolver::new(solver),
        })
    }

    /// Reclassify elements and rebuild the integration cells for `lsf`.
    pub fn rebuild(&mut self, lsf: &RbfLevelSet) -> Result<()> {
        self.domain = FcmDomain::build(&self.grid, lsf, self.config.fcm, &self.anchors)?;
        Ok(())
    }

    /// Elements held solid under concentrated loads and supports.
    pub fn pads(&self) -> &SolidPads {
        &self.anchors.pads
    }

    pub fn sensitivity_map(&self) -> SensitivityMap<'_> {
        SensitivityMap::new(&self.grid, &self.domain)
    }

    /// Assemble and solve with point densities `rho0 + (1 - rho0) H(phi)`.
    /// Fails with [`Error::BandEscape`] when the boundary left the refined band.
    pub fn analyze(&mut self, lsf: &RbfLevelSet) -> Result<Analysis> {
        let escapes = self.domain.band_escapes(&self.grid, lsf, &self.anchors.pads);
        if escapes > 0 {
            return Err(Error::BandEscape { count: escapes });
        }
        self.analyze_unchecked(lsf)
    }

    fn analyze_unchecked(&mut self, lsf: &RbfLevelSet) -> Result<Analysis> {
        let phi0 = self.sensitivity_map().forward(&lsf.weights);
        let mut phi: Vec<f64> = phi0.iter().map(|p| p - lsf.theta).collect();
        for (slot, &e) in self.domain.active.iter().enumerate() {
            if self.anchors.pads.contains_element(e) {
                phi[self.domain.points.slot_range(slot)].fill(f64::INFINITY);
            }
        }
        let (kappa, rho0) = (lsf.kappa, self.config.rho0);
        let rho_hat: Vec<f64> = phi.iter().map(|&p| density_from_lsf(p, kappa, rho0)).collect();
        let mut system = assemble_stiffness(
            &self.grid,
            &self.kernel,
            &self.domain.points,
            &rho_hat,
            self.config.penal,
            &self.loads,
        )?;
        system.solve(&self.grid, &mut self.solver)?;
        let compliance = system.compliance()?;
        let volume: f64 = self
            .domain
            .points
            .points
            .iter()
            .zip(&phi)
            .map(|(p, &f)| p.weight * heaviside(f, kappa))
            .sum();
        Ok(Analysis {
            compliance,
            volume_fraction: volume / self.grid.num_elements() as f64,
            system,
            phi,
            rho_hat,
        })
    }

    /// `(dC/dw, dV/dw)` where `V` is the material volume fraction.
    pub fn sensitivities(&self, lsf: &RbfLevelSet, analysis: &Analysis) -> Result<(Vec<f64>, Vec<f64>)> {
        let u = analysis.system.displacement()?;
        let (kappa, rho0, penal) = (lsf.kappa, self.config.rho0, self.config.penal);
        let n_elem = self.grid.num_elements() as f64;
        let npts = self.domain.num_points();
        let mut dc_coeff = vec![0.0; npts];
        let mut dv_coeff = vec![0.0; npts];
        let ndof = self.grid.dofs_per_element();
        let nn = self.grid.nodes_per_element();
        let pts = &self.domain.points;
        let per_slot: Vec<(Vec<f64>, Vec<f64>)> = (0..self.domain.active.len())
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new(), vec![0.0; ndof], vec![[0.0; 3]; nn]),
                |(nodes, dofs, ue, grads), slot| {
                    let e = self.domain.active[slot];
                    self.grid.element_dofs_into(e, nodes, dofs);
                    for (v, &d) in ue.iter_mut().zip(dofs.iter()) {
                        *v = u[d];
                    }
                    let range = pts.slot_range(slot);
                    let mut dc = Vec::with_capacity(range.len());
                    let mut dv = Vec::with_capacity(range.len());
                    for (k, p) in range.zip(pts.element_points(slot)) {
                        let phi = analysis.phi[k];
                        let dh = heaviside_derivative(phi, kappa);
                        if dh == 0.0 {
                            dc.push(0.0);
                            dv.push(0.0);
                            continue;
                        }
                        let energy = self.kernel.energy_density(&p.xi, ue, grads);
                        let drho = density_derivative(phi, kappa, rho0);
                        let r = analysis.rho_hat[k];
                        dc.push(-penal * r.powf(penal - 1.0) * p.weight * energy * drho);
                        dv.push(p.weight * dh / n_elem);
                    }
                    (dc, dv)
                },
            )
            .collect();
        for (slot, (dc, dv)) in per_slot.into_iter().enumerate() {
            let r = pts.slot_range(slot);
            dc_coeff[r.clone()].copy_from_slice(&dc);
            dv_coeff[r].copy_from_slice(&dv);
        }
        let [dc_dw, dv_dw] = self.sensitivity_map().transpose([&dc_coeff, &dv_coeff]);
        Ok((dc_dw, dv_dw))
    }
}

/// Compliance of a per-element density field evaluated with order-`order`
/// elements and a `g^D` Gauss rule.
pub fn evaluate_element_densities(
    dims: &[usize],
    loads: &LoadCase,
    densities: &[f64],
    order: usize,
    points_per_axis: usize,
    material: &Material,
    penal: f64,
    solver: SolverSettings,
) -> Result<f64> {
    let grid = StructuredGrid::new(dims, order)?;
    let resolved = loads.resolve(&grid)?;
    let kernel = ElasticKernel::new(ElementBasis::new(grid.dim(), order), material);
    let active: Vec<usize> = (0..grid.num_elements()).collect();
    let pts = PointSet::uniform(&active, grid.dim(), points_per_axis);
    let per_point = points_per_axis.pow(grid.dim() as u32);
    let rho: Vec<f64> = densities
        .iter()
        .flat_map(|&r| std::iter::repeat_n(r, per_point))
        .collect();
    let mut sys = assemble_stiffness(&grid, &kernel, &pts, &rho, penal, &resolved)?;
    sys.solve(&grid, &mut LinearSolver::new(solver))?;
    sys.compliance()
}

#[derive(Debug, Clone)]
pub struct Stage3Result {
    pub lsf: RbfLevelSet,
    pub history: Vec<HistoryRow>,
    pub initial_compliance: f64,
    pub initial_volume_fraction: f64,
    pub final_compliance: f64,
    pub final_volume_fraction: f64,
    pub rebuilds: usize,
    pub band_escapes: usize,
}

/// Analyze, rebuilding the band first if the boundary escaped it.
fn analyze_or_rebuild(model: &mut ShapeModel, lsf: &RbfLevelSet, escapes: &mut usize) -> Result<Analysis> {
    match model.analyze(lsf) {
        Err(Error::BandEscape { count }) => {
            log::warn!("boundary left the integration band in {count} element(s); rebuilding");
            *escapes += 1;
            model.rebuild(lsf)?;
            model.analyze_unchecked(lsf)
        }
        other => other,
    }
}

/// Optimize the RBF weights of `lsf` (shift and steepness fixed) for minimum
/// compliance subject to the volume fraction, rebuilding the band between phases.
pub fn run_stage3(
    lsf: &RbfLevelSet,
    dims: &[usize],
    loads: &LoadCase,
    config: ShapeOptConfig,
    solver: SolverSettings,
) -> Result<Stage3Result> {
    let mut lsf = lsf.clone();
    let mut model = ShapeModel::new(dims, loads, config, solver, &lsf)?;
    let mut escapes = 0;
    let mut analysis = analyze_or_rebuild(&mut model, &lsf, &mut escapes).map_err(|e| e.at_iteration("stage 3", 0))?;
    let c0 = analysis.compliance;
    let v0 = analysis.volume_fraction;
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::DegenerateDesign(format!("initial compliance {c0}")));
    }
    let n = lsf.weights.len();
    let xmin = vec![-lsf.w_max; n];
    let xmax = vec![lsf.w_max; n];
    let mut mma = MmaState::new(n, MmaSettings::with_move_limit(config.move_limit));
    let vf = config.volume_fraction;
    let mut history = Vec::new();
    let mut rebuilds = 0;
    let mut it = 0;
    for phase in 0..config.phases {
        if phase > 0 && config.iterations_per_phase > 0 {
            model.rebuild(&lsf).map_err(|e| e.at_iteration("stage 3", it))?;
            rebuilds += 1;
            analysis = model
                .analyze_unchecked(&lsf)
                .map_err(|e| e.at_iteration("stage 3", it))?;
        }
        for _ in 0..config.iterations_per_phase {
            it += 1;
            let at = |e: Error| e.at_iteration("stage 3", it);
            let (dc, dv) = model.sensitivities(&lsf, &analysis).map_err(at)?;
            let df: Vec<f64> = dc.iter().map(|v| v / c0).collect();
            let g = analysis.volume_fraction / vf - 1.0;
            let dg: Vec<f64> = dv.iter().map(|v| v / vf).collect();
            lsf.weights = mma.update(&lsf.weights, &df, g, &dg, &xmin, &xmax).map_err(at)?;
            lsf.clamp_weights();
            analysis = analyze_or_rebuild(&mut model, &lsf, &mut escapes).map_err(at)?;
            log::debug!(
                "stage 3 it {it:3}: C = {:.6e}, V/Vmax = {:.5}",
                analysis.compliance,
                analysis.volume_fraction / vf
            );
            history.push(HistoryRow {
                stage: 3,
                iteration: it,
                compliance: analysis.compliance,
                volume_ratio: analysis.volume_fraction / vf,
            });
        }
    }
    Ok(Stage3Result {
        final_compliance: analysis.compliance,
        final_volume_fraction: analysis.volume_fraction,
        lsf,
        history,
        initial_compliance: c0,
        initial_volume_fraction: v0,
        rebuilds,
        band_escapes: escapes,
    })
}
