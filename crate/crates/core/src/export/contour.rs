//! Marching squares and SVG output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{io_err, refine_root, Lattice};
use crate::error::{Error, Result};
use crate::fem::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let n = self.points.len();
        let segs = if self.closed { n } else { n.saturating_sub(1) };
        (0..segs)
            .map(|i| {
                let (a, b) = (self.points[i], self.points[(i + 1) % n]);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum()
    }

    /// Largest direction change (radians) between consecutive segments, over
    /// vertices accepted by `include`. Zero-length segments are skipped.
    pub fn max_turning_angle(&self, include: impl Fn(&[f64; 2]) -> bool) -> f64 {
        let pts: Vec<[f64; 2]> = {
            let mut v: Vec<[f64; 2]> = Vec::with_capacity(self.points.len());
            for p in &self.points {
                if v.last().is_none_or(|q| (q[0] - p[0]).hypot(q[1] - p[1]) > 1e-12) {
                    v.push(*p);
                }
            }
            v
        };
        let n = pts.len();
        if n < 3 {
            return 0.0;
        }
        let range = if self.closed { 0..n } else { 1..n - 1 };
        range
            .filter(|&i| include(&pts[i]))
            .map(|i| {
                let a = pts[(i + n - 1) % n];
                let b = pts[i];
                let c = pts[(i + 1) % n];
                let (u, v) = ([b[0] - a[0], b[1] - a[1]], [c[0] - b[0], c[1] - b[1]]);
                let cross = u[0] * v[1] - u[1] * v[0];
                let dot = u[0] * v[0] + u[1] * v[1];
                cross.atan2(dot).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Polylines of a 2D zero contour; solid (positive side) lies to the right of
/// the traversal direction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContourSet {
    pub polylines: Vec<Polyline>,
}

impl ContourSet {
    pub fn length(&self) -> f64 {
        self.polylines.iter().map(Polyline::length).sum()
    }

    pub fn num_points(&self) -> usize {
        self.polylines.iter().map(|p| p.points.len()).sum()
    }

    /// Filled SVG drawing of the region enclosed by closed polylines, in a
    /// frame of `width x height` element lengths (y up).
    pub fn to_svg(&self, width: f64, height: f64) -> String {
        const SCALE: f64 = 10.0;
        let mut s = String::new();
        let (w, h) = (width * SCALE, height * SCALE);
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(
            s,
            r##"  <rect x="0" y="0" width="{w}" height="{h}" fill="white" stroke="#999" stroke-width="0.5"/>"##
        );
        let mut d = String::new();
        for p in &self.polylines {
            for (i, q) in p.points.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.4} {:.4} ",
                    if i == 0 { "M" } else { "L" },
                    q[0] * SCALE,
                    h - q[1] * SCALE
                );
            }
            if p.closed {
                d.push_str("Z ");
            }
        }
        let _ = writeln!(
            s,
            r##"  <path d="{}" fill="#1f1f1f" fill-rule="evenodd" stroke="black" stroke-width="0.5"/>"##,
            d.trim_end()
        );
        s.push_str("</svg>\n");
        s
    }

    pub fn write_svg(&self, path: &Path, width: f64, height: f64) -> Result<()> {
        std::fs::write(path, self.to_svg(width, height)).map_err(io_err(path))
    }
}

/// Zero contour of `f` sampled on `lattice` (2D). Saddle cells are resolved by
/// the sign of the mean corner value; crossings are refined against `f`.
pub fn marching_squares(f: &(impl Fn(&Point) -> f64 + Sync), lattice: &Lattice) -> Result<ContourSet> {
    if lattice.dim != 2 {
        return Err(Error::invalid("marching squares needs a 2D lattice"));
    }
    let values = lattice.sample(f);
    let [nx, ny, _] = lattice.counts;
    let edge_id = |i: usize, j: usize, e: usize| -> usize {
        match e {
            0 => 2 * lattice.index(i, j, 0),
            1 => 2 * lattice.index(i + 1, j, 0) + 1,
            2 => 2 * lattice.index(i, j + 1, 0),
            _ => 2 * lattice.index(i, j, 0) + 1,
        }
    };
    // directed segments (from edge, to edge), cell by cell
    let segments: Vec<(usize, usize)> = (0..(nx - 1) * (ny - 1))
        .into_par_iter()
        .flat_map_iter(|c| {
            let (i, j) = (c % (nx - 1), c / (nx - 1));
            let v = [
                values[lattice.index(i, j, 0)],
                values[lattice.index(i + 1, j, 0)],
                values[lattice.index(i + 1, j + 1, 0)],
                values[lattice.index(i, j + 1, 0)],
            ];
            let inside = v.map(|x| x > 0.0);
            // cell edges bottom, right, top, left walked counter-clockwise from the
            // lower-left corner; crossings are (edge, entering solid)
            let walk = [(0usize, 0usize, 1usize), (1, 1, 2), (2, 2, 3), (3, 3, 0)];
            let crossings: Vec<(usize, bool)> = walk
                .iter()
                .filter(|&&(_, a, b)| inside[a] != inside[b])
                .map(|&(e, _, b)| (e, inside[b]))
                .collect();
            let m = crossings.len();
            let connect = m == 4 && v.iter().sum::<f64>() > 0.0;
            let mut out = Vec::with_capacity(2);
            for (n, &(e, entering)) in crossings.iter().enumerate() {
                if entering {
                    // pair with the neighbouring leaving crossing
                    let partner = if connect {
                        crossings[(n + m - 1) % m].0
                    } else {
                        crossings[(n + 1) % m].0
                    };
                    out.push((edge_id(i, j, e), edge_id(i, j, partner)));
                }
            }
            out.into_iter()
        })
        .collect();
    if segments.is_empty() {
        return Ok(ContourSet::default());
    }
    // crossing points, one per lattice edge
    let mut edges: Vec<usize> = segments.iter().flat_map(|&(a, b)| [a, b]).collect();
    edges.sort_unstable();
    edges.dedup();
    let points: Vec<[f64; 2]> = edges
        .par_iter()
        .map(|&id| {
            let node = id / 2;
            let (i, j) = (node % nx, node / nx);
            let (i2, j2) = if id % 2 == 0 { (i + 1, j) } else { (i, j + 1) };
            let p = refine_root(
                f,
                lattice.node(i, j, 0),
                lattice.node(i2, j2, 0),
                values[lattice.index(i, j, 0)],
                values[lattice.index(i2, j2, 0)],
            );
            [p[0], p[1]]
        })
        .collect();
    let vertex = |id: usize| edges.binary_search(&id).unwrap();
    // chain segments into polylines
    let next: HashMap<usize, usize> = segments.iter().map(|&(a, b)| (vertex(a), vertex(b))).collect();
    let has_prev: std::collections::HashSet<usize> = segments.iter().map(|&(_, b)| vertex(b)).collect();
    let mut starts: Vec<usize> = next.keys().copied().filter(|v| !has_prev.contains(v)).collect();
    starts.sort_unstable();
    let mut visited = vec![false; edges.len()];
    let mut polylines = Vec::new();
    let trace = |start: usize, visited: &mut Vec<bool>| -> Polyline {
        let mut pts = vec![points[start]];
        visited[start] = true;
        let mut cur = start;
        while let Some(&n) = next.get(&cur) {
            if n == start {
                return Polyline {
                    points: pts,
                    closed: true,
                };
            }
            if visited[n] {
                break;
            }
            visited[n] = true;
            pts.push(points[n]);
            cur = n;
        }
        Polyline {
            points: pts,
            closed: false,
        }
    };
    for s in starts {
        polylines.push(trace(s, &mut visited));
    }
    for v in 0..edges.len() {
        if !visited[v] && next.contains_key(&v) {
            polylines.push(trace(v, &mut visited));
        }
    }
    Ok(ContourSet { polylines })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_lattice(n: usize, side: f64) -> Lattice {
        Lattice::new(2, [0.0; 3], side / (n - 1) as f64, [n, n, 1]).unwrap()
    }

    #[test]
    fn circle_perimeter() {
        let r = 0.3;
        let f = |x: &Point| r - (x[0] - 0.5).hypot(x[1] - 0.5);
        let c = marching_squares(&f, &square_lattice(256, 1.0)).unwrap();
        assert_eq!(c.polylines.len(), 1);
        assert!(c.polylines[0].closed);
        let exact = 2.0 * std::f64::consts::PI * r;
        assert!((c.length() - exact).abs() < 0.01 * exact, "{}", c.length());
        for p in &c.polylines[0].points {
            assert!(f(&[p[0], p[1], 0.0]).abs() < 1e-9);
        }
        // solid on the right: clockwise traversal, negative signed area
        let pts = &c.polylines[0].points;
        let area: f64 = (0..pts.len())
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0;
        assert!(area < 0.0 && (area.abs() - std::f64::consts::PI * r * r).abs() < 0.01);
    }

    #[test]
    fn half_plane_is_one_straight_line() {
        let f = |x: &Point| x[0] - 0.37;
        let c = marching_squares(&f, &square_lattice(17, 1.0)).unwrap();
        assert_eq!(c.polylines.len(), 1);
        let p = &c.polylines[0];
        assert!(!p.closed);
        assert_eq!(p.points.len(), 17);
        assert!(p.points.iter().all(|q| (q[0] - 0.37).abs() < 1e-12));
        assert!(p.max_turning_angle(|_| true) < 1e-9);
    }

    #[test]
    fn no_crossing_is_empty() {
        let c = marching_squares(&|_: &Point| 1.0, &square_lattice(5, 1.0)).unwrap();
        assert!(c.polylines.is_empty());
        assert!(c.to_svg(1.0, 1.0).contains("<svg"));
    }

    #[test]
    fn saddle_uses_cell_mean() {
        // solid corners (0,0) and (1,1); the cell mean decides whether they join
        let ends = |bias: f64| -> Vec<[[f64; 2]; 2]> {
            let f = move |x: &Point| (x[0] - 0.5) * (x[1] - 0.5) * 4.0 + bias;
            let c = marching_squares(&f, &square_lattice(2, 1.0)).unwrap();
            c.polylines
                .iter()
                .map(|p| [p.points[0], *p.points.last().unwrap()])
                .collect()
        };
        let on = |q: [f64; 2], axis: usize, v: f64| (q[axis] - v).abs() < 1e-12;
        // separated: a segment cuts off corner (0,0), running left edge -> bottom edge
        let sep = ends(-0.2);
        assert_eq!(sep.len(), 2);
        assert!(sep.iter().any(|e| on(e[0], 0, 0.0) && on(e[1], 1, 0.0)));
        // joined: a segment cuts off the void corner (1,0), right edge -> bottom edge
        let joined = ends(0.2);
        assert_eq!(joined.len(), 2);
        assert!(joined.iter().any(|e| on(e[0], 0, 1.0) && on(e[1], 1, 0.0)));
    }
}
