//! Discretization studies: element order and quadtree depth.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{reference_compliance, run_pipeline, RunConfig, RunOptions, DENSITY_FILE, STAGE3_FILE};
use crate::error::{Error, Result};
use crate::export::{io_err, read_density, read_level_set};
use crate::fcm::FcmSettings;
use crate::levelset::RbfLevelSet;
use crate::shape_opt::{evaluate_element_densities, ShapeModel};

/// Gauss points per axis used by the order study.
pub const P_STUDY_POINTS: usize = 8;
/// Quadtree depth for level-set designs in the order study.
pub const P_STUDY_QT: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// P = 1..=4 on the Stage 1 and Stage 3 designs, 8 points per axis,
    /// level sets at quadtree depth 4.
    Order,
    /// qt = 1..=4 on the Stage 3 design.
    Quadtree,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Order => "p-order",
            Study::Quadtree => "quadtree",
        }
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p-order" | "p" => Ok(Study::Order),
            "quadtree" | "qt" => Ok(Study::Quadtree),
            _ => Err(Error::config(
                "study",
                format!("unknown study `{s}` (expected p-order or quadtree)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    /// `stage1` or `stage3`.
    pub design: &'static str,
    pub order: usize,
    pub qt: u32,
    pub points_per_axis: usize,
    pub compliance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub study: Study,
    pub c_ref: f64,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn compliances(&self, design: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.design == design)
            .map(|r| r.compliance)
            .collect()
    }

    /// `(max - min) / min` of a design's compliances.
    pub fn spread(&self, design: &str) -> f64 {
        let c = self.compliances(design);
        let (lo, hi) = c
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        (hi - lo) / lo
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("design,order,qt,points_per_axis,compliance,c_over_cref\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.design,
                r.order,
                r.qt,
                r.points_per_axis,
                r.compliance,
                r.compliance / self.c_ref
            );
        }
        s
    }
}

/// Finite cell compliance of a fixed level set.
pub fn evaluate_level_set(
    config: &RunConfig,
    lsf: &RbfLevelSet,
    order: usize,
    qt: u32,
    points_per_axis: usize,
) -> Result<f64> {
    let mut cfg = config.shape_opt();
    cfg.order = order;
    cfg.fcm = FcmSettings { qt, points_per_axis };
    let mut model = ShapeModel::new(&config.dims, &config.load_case, cfg, config.solver(), lsf)?;
    Ok(model.analyze(lsf)?.compliance)
}

/// Evaluate the designs in `out_dir` (running the pipeline there first if
/// they are missing) and write `study_<name>.csv`.
pub fn run_study(config: &RunConfig, study: Study, out_dir: &Path) -> Result<StudyTable> {
    config.validate()?;
    let (density_path, lsf_path) = (out_dir.join(DENSITY_FILE), out_dir.join(STAGE3_FILE));
    if !density_path.exists() || !lsf_path.exists() {
        log::info!(
            "{} study: designs missing in {}, running the pipeline",
            study.name(),
            out_dir.display()
        );
        run_pipeline(config, &RunOptions::new(out_dir))?;
    }
    let lsf = read_level_set(&lsf_path)?;
    let density = read_density(&density_path)?;
    if lsf.dims() != config.dims.as_slice() || density.dims() != config.dims.as_slice() {
        return Err(Error::Format {
            path: out_dir.to_path_buf(),
            message: format!("stored designs do not match the configured grid {:?}", config.dims),
        });
    }
    let c_ref = reference_compliance(config)?;
    let s3 = &config.stage3;
    let mut rows = Vec::new();
    match study {
        Study::Order => {
            for order in 1..=4 {
                let g = P_STUDY_POINTS;
                log::info!("p-order study: P = {order}");
                let c1 = evaluate_element_densities(
                    &config.dims,
                    &config.load_case,
                    &density.values,
                    order,
                    g,
                    &config.material(),
                    config.penal,
                    config.solver(),
                )?;
                rows.push(StudyRow {
                    design: "stage1",
                    order,
                    qt: 0,
                    points_per_axis: g,
                    compliance: c1,
                });
                rows.push(StudyRow {
                    design: "stage3",
                    order,
                    qt: P_STUDY_QT,
                    points_per_axis: g,
                    compliance: evaluate_level_set(config, &lsf, order, P_STUDY_QT, g)?,
                });
            }
        }
        Study::Quadtree => {
            for qt in 1..=4 {
                log::info!("quadtree study: qt = {qt}");
                rows.push(StudyRow {
                    design: "stage3",
                    order: s3.order,
                    qt,
                    points_per_axis: s3.points_per_axis,
                    compliance: evaluate_level_set(config, &lsf, s3.order, qt, s3.points_per_axis)?,
                });
            }
        }
    }
    let table = StudyTable { study, c_ref, rows };
    let path = out_dir.join(format!("study_{}.csv", study.name().replace('-', "_")));
    std::fs::write(&path, table.to_csv()).map_err(io_err(&path))?;
    Ok(table)
}
