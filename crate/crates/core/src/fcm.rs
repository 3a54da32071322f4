//! Finite Cell integration fabric for an implicit geometry: element
//! classification, dyadic refinement of the boundary band, and integration points.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Point;
use crate::fem::{component_free_modes, element_components, PointSet, QuadPoint, QuadratureRule, StructuredGrid};
use crate::levelset::{RbfLevelSet, RbfStencil, SolidPads, PAD_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementClass {
    /// Contains a sign change of the level set.
    Cut,
    /// Chebyshev neighbor of a cut element.
    Band,
    /// Active, away from the boundary.
    Interior,
    /// Far void; excluded from the analysis.
    Discarded,
    /// Material not connected to any support; excluded from the analysis.
    Detached,
}

impl ElementClass {
    pub fn is_refined(self) -> bool {
        matches!(self, ElementClass::Cut | ElementClass::Band)
    }

    pub fn is_active(self) -> bool {
        !matches!(self, ElementClass::Discarded | ElementClass::Detached)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementClass::Cut => "cut",
            ElementClass::Band => "band",
            ElementClass::Interior => "interior",
            ElementClass::Discarded => "discarded",
            ElementClass::Detached => "detached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcmSettings {
    /// Refinement depth of cut and band elements.
    pub qt: u32,
    /// Gauss points per axis in every cell.
    pub points_per_axis: usize,
}

impl Default for FcmSettings {
    fn default() -> Self {
        Self {
            qt: 1,
            points_per_axis: 3,
        }
    }
}

/// Dyadic sub-box of an element's reference domain `[-1, 1]^D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationCell {
    pub center: Point,
    pub half_width: f64,
    pub level: u32,
}

/// Cells and integration points shared by all elements with the same refinement.
#[derive(Debug, Clone)]
pub struct CellLayout {
    pub cells: Vec<IntegrationCell>,
    pub points: Vec<QuadPoint>,
    pub stencil: RbfStencil,
}

impl CellLayout {
    pub fn uniform(dim: usize, level: u32, points_per_axis: usize) -> Self {
        let per_axis = 1usize << level;
        let hw = 1.0 / per_axis as f64;
        let rule = QuadratureRule::gauss(points_per_axis, dim);
        let jac = (0.5 * hw).powi(dim as i32);
        let mut cells = Vec::new();
        let mut points = Vec::new();
        let kz = if dim == 3 { per_axis } else { 1 };
        for k in 0..kz {
            for j in 0..per_axis {
                for i in 0..per_axis {
                    let idx = [i, j, k];
                    let mut center = [0.0; 3];
                    for d in 0..dim {
                        center[d] = -1.0 + hw * (2 * idx[d] + 1) as f64;
                    }
                    cells.push(IntegrationCell {
                        center,
                        half_width: hw,
                        level,
                    });
                    for (p, &w) in rule.points.iter().zip(&rule.weights) {
                        let mut xi = [0.0; 3];
                        for d in 0..dim {
                            xi[d] = center[d] + hw * p[d];
                        }
                        points.push(QuadPoint { xi, weight: w * jac });
                    }
                }
            }
        }
        let local: Vec<Point> = points.iter().map(|p| p.xi).collect();
        Self {
            cells,
            stencil: RbfStencil::new(dim, &local),
            points,
        }
    }
}

/// Reference coordinates of the classification samples: the `3^D` lattice of
/// corners, edge and face midpoints, and center.
pub fn sample_points(dim: usize) -> Vec<Point> {
    let v = [-1.0, 0.0, 1.0];
    let zs: &[f64] = if dim == 3 { &v } else { &[0.0] };
    let mut out = Vec::new();
    for &z in zs {
        for &y in &v {
            for &x in &v {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// [`sample_lsf`] with samples inside `pads` raised to at least [`PAD_LEVEL`].
pub fn sample_geometry(lsf: &RbfLevelSet, pads: &SolidPads) -> Vec<f64> {
    let mut out = sample_lsf(lsf);
    if pads.is_empty() {
        return out;
    }
    let dims = lsf.dims();
    let dim = dims.len();
    let local = sample_points(dim);
    let n: usize = dims.iter().product();
    let ns = local.len();
    for e in 0..n {
        let ijk = crate::levelset::lattice_ijk(dims, e);
        for (v, xi) in out[e * ns..(e + 1) * ns].iter_mut().zip(&local) {
            let mut x = [0.0; 3];
            for d in 0..dim {
                x[d] = ijk[d] as f64 + 0.5 * (xi[d] + 1.0);
            }
            if pads.contains(&x) {
                *v = v.max(PAD_LEVEL);
            }
        }
    }
    out
}

/// Level-set values at the classification samples of every element (element-major).
pub fn sample_lsf(lsf: &RbfLevelSet) -> Vec<f64> {
    let dims = lsf.dims().to_vec();
    let dim = dims.len();
    let stencil = RbfStencil::new(dim, &sample_points(dim));
    let ns = stencil.num_points();
    let n: usize = dims.iter().product();
    let mut out = vec![0.0; n * ns];
    out.par_chunks_mut(ns).enumerate().for_each(|(e, chunk)| {
        stencil.eval(&dims, crate::levelset::lattice_ijk(&dims, e), &lsf.weights, chunk);
        chunk.iter_mut().for_each(|v| *v -= lsf.theta);
    });
    out
}

/// Classify elements from per-element sample values (`samples_per_element` each).
/// Elements in `protected` are never discarded.
pub fn classify_elements(grid: &StructuredGrid, samples: &[f64], protected: &[usize]) -> Vec<ElementClass> {
    let n = grid.num_elements();
    let ns = samples.len() / n;
    let mut classes = vec![ElementClass::Interior; n];
    let mut all_negative = vec![false; n];
    for e in 0..n {
        let s = &samples[e * ns..(e + 1) * ns];
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo < 0.0 && hi >= 0.0 {
            classes[e] = ElementClass::Cut;
        }
        all_negative[e] = hi < 0.0;
    }
    for e in 0..n {
        if classes[e] == ElementClass::Cut {
            for nb in grid.neighbors(e) {
                if classes[nb] != ElementClass::Cut {
                    classes[nb] = ElementClass::Band;
                }
            }
        }
    }
    for e in 0..n {
        if classes[e] == ElementClass::Interior && all_negative[e] {
            classes[e] = ElementClass::Discarded;
        }
    }
    for &e in protected {
        if classes[e] == ElementClass::Discarded {
            classes[e] = ElementClass::Interior;
        }
    }
    classes
}

/// Which elements must stay in the analysis and which nodes anchor it.
#[derive(Debug, Clone, Default)]
pub struct Anchors {
    /// Elements kept active regardless of the geometry (e.g. those carrying loads).
    pub protected_elements: Vec<usize>,
    /// Sorted fixed DOFs; active components they do not fully restrain are
    /// detached.
    pub fixed_dofs: Vec<usize>,
    /// Solid elements; classification sees the level set joined with them.
    pub pads: SolidPads,
}

impl Anchors {
    /// Elements touching any loaded node, and the fixed DOFs.
    pub fn from_loads(grid: &StructuredGrid, loads: &crate::fem::ResolvedLoads) -> Self {
        let dim = grid.dim();
        let loaded = loads.loaded_nodes(dim);
        let mut protected = Vec::new();
        let mut nodes = Vec::new();
        for e in 0..grid.num_elements() {
            grid.element_nodes_into(e, &mut nodes);
            if nodes.iter().any(|n| loaded.binary_search(n).is_ok()) {
                protected.push(e);
            }
        }
        Self {
            protected_elements: protected,
            fixed_dofs: loads.fixed.clone(),
            pads: SolidPads::none(grid.dims()),
        }
    }
}

/// Integration fabric for the current geometry.
#[derive(Debug, Clone)]
pub struct FcmDomain {
    pub settings: FcmSettings,
    pub classes: Vec<ElementClass>,
    /// Sorted active element indices.
    pub active: Vec<usize>,
    pub discarded: Vec<usize>,
    /// `layouts[0]` is the unrefined cell, `layouts[1]` the level-`qt` tiling.
    pub layouts: [CellLayout; 2],
    /// Layout index per active slot.
    pub slot_layout: Vec<u8>,
    pub points: PointSet,
}

impl FcmDomain {
    /// Classify the elements against `lsf` and build cells and points.
    pub fn build(grid: &StructuredGrid, lsf: &RbfLevelSet, settings: FcmSettings, anchors: &Anchors) -> Result<Self> {
        let samples = sample_geometry(lsf, &anchors.pads);
        Self::from_samples(grid, &samples, settings, anchors)
    }

    pub fn from_samples(
        grid: &StructuredGrid,
        samples: &[f64],
        settings: FcmSettings,
        anchors: &Anchors,
    ) -> Result<Self> {
        if settings.points_per_axis == 0 {
            return Err(Error::invalid("at least one Gauss point per axis is required"));
        }
        let mut classes = classify_elements(grid, samples, &anchors.protected_elements);
        let mut active: Vec<usize> = (0..grid.num_elements()).filter(|&e| classes[e].is_active()).collect();
        if !anchors.fixed_dofs.is_empty() {
            for comp in element_components(grid, &active) {
                if component_free_modes(grid, &comp, &anchors.fixed_dofs) > 0 {
                    for e in comp {
                        classes[e] = ElementClass::Detached;
                    }
                }
            }
            active.retain(|&e| classes[e].is_active());
        }
        if active.is_empty() {
            return Err(Error::DegenerateDesign("no active elements remain".into()));
        }
        let discarded = (0..grid.num_elements()).filter(|&e| !classes[e].is_active()).collect();
        let dim = grid.dim();
        let layouts = [
            CellLayout::uniform(dim, 0, settings.points_per_axis),
            CellLayout::uniform(dim, settings.qt, settings.points_per_axis),
        ];
        let slot_layout: Vec<u8> = active.iter().map(|&e| classes[e].is_refined() as u8).collect();
        let mut points = PointSet {
            elements: active.clone(),
            offsets: Vec::with_capacity(active.len() + 1),
            points: Vec::new(),
        };
        points.offsets.push(0);
        for &l in &slot_layout {
            points.points.extend_from_slice(&layouts[l as usize].points);
            points.offsets.push(points.points.len());
        }
        Ok(Self {
            settings,
            classes,
            active,
            discarded,
            layouts,
            slot_layout,
            points,
        })
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn layout(&self, slot: usize) -> &CellLayout {
        &self.layouts[self.slot_layout[slot] as usize]
    }

    /// Level-set values at every integration point.
    pub fn eval_lsf(&self, grid: &StructuredGrid, lsf: &RbfLevelSet) -> Vec<f64> {
        let mut out = vec![0.0; self.num_points()];
        let dims = grid.dims();
        let chunks: Vec<(usize, &mut [f64])> = {
            let mut rest = out.as_mut_slice();
            let mut v = Vec::with_capacity(self.active.len());
            for slot in 0..self.active.len() {
                let len = self.points.offsets[slot + 1] - self.points.offsets[slot];
                let (head, tail) = rest.split_at_mut(len);
                v.push((slot, head));
                rest = tail;
            }
            v
        };
        chunks.into_par_iter().for_each(|(slot, chunk)| {
            let e = self.active[slot];
            self.layout(slot)
                .stencil
                .eval(dims, grid.element_ijk(e), &lsf.weights, chunk);
            chunk.iter_mut().for_each(|v| *v -= lsf.theta);
        });
        out
    }

    /// Number of elements where the boundary left the refined band: a sign
    /// change inside an unrefined active element, or non-negative level set in
    /// a discarded one.
    pub fn band_escapes(&self, grid: &StructuredGrid, lsf: &RbfLevelSet, pads: &SolidPads) -> usize {
        let samples = sample_geometry(lsf, pads);
        let ns = samples.len() / grid.num_elements();
        (0..grid.num_elements())
            .filter(|&e| {
                let s = &samples[e * ns..(e + 1) * ns];
                let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                match self.classes[e] {
                    ElementClass::Interior => lo < 0.0 && hi >= 0.0,
                    ElementClass::Discarded => hi >= 0.0,
                    _ => false,
                }
            })
            .count()
    }

    /// Integration cells as CSV: one row per cell.
    pub fn cells_csv(&self, grid: &StructuredGrid) -> String {
        let mut s = String::from("element,class,level,center_x,center_y,center_z,half_width,points\n");
        let ppc = self.settings.points_per_axis.pow(grid.dim() as u32);
        for (slot, &e) in self.active.iter().enumerate() {
            for cell in &self.layout(slot).cells {
                let x = grid.to_physical(e, &cell.center);
                let _ = writeln!(
                    s,
                    "{e},{},{},{},{},{},{},{ppc}",
                    self.classes[e].as_str(),
                    cell.level,
                    x[0],
                    x[1],
                    x[2],
                    0.5 * cell.half_width
                );
            }
        }
        for &e in &self.discarded {
            let x = grid.centroid(e);
            let _ = writeln!(s, "{e},{},0,{},{},{},0.5,0", self.classes[e].as_str(), x[0], x[1], x[2]);
        }
        s
    }
}
