//! Method of Moving Asymptotes for box-bounded minimization with a single
//! inequality constraint `g(x) <= 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmaSettings {
    /// Maximum step per iteration as a fraction of the box width.
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_decrease: f64,
    pub asy_increase: f64,
    pub albefa: f64,
    /// Penalty on the artificial constraint-relaxation variable.
    pub relaxation_penalty: f64,
    pub regularization: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        Self {
            move_limit: 0.2,
            asy_init: 0.5,
            asy_decrease: 0.7,
            asy_increase: 1.2,
            albefa: 0.1,
            relaxation_penalty: 1e4,
            regularization: 1e-5,
        }
    }
}

impl MmaSettings {
    pub fn with_move_limit(move_limit: f64) -> Self {
        Self {
            move_limit,
            ..Self::default()
        }
    }
}

/// Optimizer state carried between iterations.
#[derive(Debug, Clone)]
pub struct MmaState {
    pub settings: MmaSettings,
    iteration: usize,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
}

/// Convex separable approximation around the current iterate.
struct Subproblem {
    low: Vec<f64>,
    upp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p1: Vec<f64>,
    q1: Vec<f64>,
    /// Constant part of the constraint approximation.
    r1: f64,
}

impl Subproblem {
    fn x_of(&self, lambda: f64, j: usize) -> f64 {
        let sp = (self.p0[j] + lambda * self.p1[j]).sqrt();
        let sq = (self.q0[j] + lambda * self.q1[j]).sqrt();
        let x = (self.low[j] * sp + self.upp[j] * sq) / (sp + sq);
        x.clamp(self.alpha[j], self.beta[j])
    }

    fn constraint(&self, x: &[f64]) -> f64 {
        self.r1
            + x.iter()
                .enumerate()
                .map(|(j, &xj)| self.p1[j] / (self.upp[j] - xj) + self.q1[j] / (xj - self.low[j]))
                .sum::<f64>()
    }

    fn primal(&self, lambda: f64) -> Vec<f64> {
        (0..self.low.len()).map(|j| self.x_of(lambda, j)).collect()
    }
}

impl MmaState {
    pub fn new(n: usize, settings: MmaSettings) -> Self {
        Self {
            settings,
            iteration: 0,
            low: vec![0.0; n],
            upp: vec![0.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn lower_asymptotes(&self) -> &[f64] {
        &self.low
    }

    pub fn upper_asymptotes(&self) -> &[f64] {
        &self.upp
    }

    /// One MMA step from `x` given objective gradient `df`, constraint value `g`
    /// and its gradient `dg`. Returns the next iterate.
    pub fn update(
        &mut self,
        x: &[f64],
        df: &[f64],
        g: f64,
        dg: &[f64],
        xmin: &[f64],
        xmax: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.low.len();
        if [x.len(), df.len(), dg.len(), xmin.len(), xmax.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::invalid(format!("MMA expects {n} variables")));
        }
        if !g.is_finite() || x.iter().chain(df).chain(dg).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite MMA input"));
        }
        if let Some(j) = (0..n).find(|&j| !(xmin[j] <= xmax[j]) || x[j] < xmin[j] || x[j] > xmax[j]) {
            return Err(Error::invalid(format!(
                "variable {j}: x={} outside box [{}, {}]",
                x[j], xmin[j], xmax[j]
            )));
        }
        self.iteration += 1;
        let sub = self.build_subproblem(x, df, g, dg, xmin, xmax);
        let lambda = solve_dual(&sub, self.settings.relaxation_penalty)?;
        let xnew = sub.primal(lambda);
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        self.low = sub.low;
        self.upp = sub.upp;
        Ok(xnew)
    }

    fn build_subproblem(&self, x: &[f64], df: &[f64], g: f64, dg: &[f64], xmin: &[f64], xmax: &[f64]) -> Subproblem {
        let s = &self.settings;
        let n = x.len();
        let mut low = vec![0.0; n];
        let mut upp = vec![0.0; n];
        for j in 0..n {
            let width = xmax[j] - xmin[j];
            if self.iteration <= 2 {
                low[j] = x[j] - s.asy_init * width;
                upp[j] = x[j] + s.asy_init * width;
            } else {
                let trend = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if trend < 0.0 {
                    s.asy_decrease
                } else if trend > 0.0 {
                    s.asy_increase
                } else {
                    1.0
                };
                low[j] = x[j] - factor * (self.xold1[j] - self.low[j]);
                upp[j] = x[j] + factor * (self.upp[j] - self.xold1[j]);
                low[j] = low[j].clamp(x[j] - 10.0 * width, x[j] - 0.01 * width);
                upp[j] = upp[j].clamp(x[j] + 0.01 * width, x[j] + 10.0 * width);
            }
            if width == 0.0 {
                low[j] = x[j] - 1.0;
                upp[j] = x[j] + 1.0;
            }
        }
        let f_scale = max_abs(df);
        let g_scale = max_abs(dg);
        let mut sub = Subproblem {
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
            p0: vec![0.0; n],
            q0: vec![0.0; n],
            p1: vec![0.0; n],
            q1: vec![0.0; n],
            r1: g,
            low,
            upp,
        };
        for j in 0..n {
            let (l, u) = (sub.low[j], sub.upp[j]);
            let width = xmax[j] - xmin[j];
            let step = s.move_limit * width;
            sub.alpha[j] = xmin[j].max(l + s.albefa * (x[j] - l)).max(x[j] - step);
            sub.beta[j] = xmax[j].min(u - s.albefa * (u - x[j])).min(x[j] + step);
            let inv_width = 1.0 / width.max(1e-5);
            let (ux2, xl2) = ((u - x[j]).powi(2), (x[j] - l).powi(2));
            let reg0 = s.regularization * f_scale * inv_width;
            let reg1 = s.regularization * g_scale * inv_width;
            let (fp, fm) = (df[j].max(0.0), (-df[j]).max(0.0));
            let (gp, gm) = (dg[j].max(0.0), (-dg[j]).max(0.0));
            sub.p0[j] = ux2 * (1.001 * fp + 0.001 * fm + reg0);
            sub.q0[j] = xl2 * (0.001 * fp + 1.001 * fm + reg0);
            sub.p1[j] = ux2 * (1.001 * gp + 0.001 * gm + reg1);
            sub.q1[j] = xl2 * (0.001 * gp + 1.001 * gm + reg1);
            sub.r1 -= sub.p1[j] / (u - x[j]) + sub.q1[j] / (x[j] - l);
        }
        sub
    }
}

fn max_abs(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Maximize the concave dual over `lambda >= 0`. Its derivative is
/// `g~(x(lambda)) - y(lambda)` with `y = max(0, lambda - c)` (unit quadratic
/// weight on the relaxation variable); it is non-increasing in `lambda`.
fn solve_dual(sub: &Subproblem, c: f64) -> Result<f64> {
    let slope = |lambda: f64| sub.constraint(&sub.primal(lambda)) - (lambda - c).max(0.0);
    if slope(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while slope(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Optimizer("MMA dual could not be bracketed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let residual = slope(lambda);
    let scale = 1.0 + lambda;
    if !residual.is_finite() || (hi - lo > 1e-10 * scale && residual.abs() > 1e-8) {
        return Err(Error::Optimizer(format!(
            "MMA dual did not converge (residual {residual:.3e})"
        )));
    }
    Ok(lambda)
}
