//! Marching cubes, binary STL, and closed-mesh measures.

use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::{io_err, refine_root, Lattice};
use crate::error::{Error, Result};
use crate::fem::Point;

/// Triangle mesh with outward-oriented (counter-clockwise seen from outside)
/// triangles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl SurfaceMesh {
    fn corners(&self, t: &[u32; 3]) -> [[f64; 3]; 3] {
        t.map(|v| self.vertices[v as usize])
    }

    /// Twice-area normal of triangle `t`.
    fn normal(&self, t: &[u32; 3]) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        cross(sub(b, a), sub(c, a))
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| 0.5 * norm3(self.normal(t))).sum()
    }

    /// Enclosed volume by the divergence theorem.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let n = cross(b, c);
                a[0] * n[0] + a[1] * n[1] + a[2] * n[2]
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn degenerate_triangles(&self, min_area: f64) -> usize {
        self.triangles
            .iter()
            .filter(|t| 0.5 * norm3(self.normal(t)) <= min_area)
            .count()
    }

    /// Directed edges that are not matched by exactly one opposite edge. Zero
    /// for a closed, consistently oriented, edge-manifold mesh.
    pub fn unmatched_edges(&self) -> usize {
        let mut directed: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        directed.sort_unstable();
        let mut bad = 0;
        for (n, &(a, b)) in directed.iter().enumerate() {
            let dup = (n > 0 && directed[n - 1] == (a, b)) || directed.get(n + 1) == Some(&(a, b));
            let twin = directed.binary_search(&(b, a)).is_ok();
            if dup || !twin || a == b {
                bad += 1;
            }
        }
        bad
    }

    pub fn is_watertight(&self) -> bool {
        self.unmatched_edges() == 0
    }

    /// Binary STL: 80-byte header, little-endian `u32` count, then 50-byte
    /// records (normal, three vertices as `f32`, zero attribute word).
    pub fn to_stl(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(84 + 50 * self.triangles.len());
        let mut header = [0u8; 80];
        let tag = b"topopost binary STL";
        header[..tag.len()].copy_from_slice(tag);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for t in &self.triangles {
            let n = self.normal(t);
            let len = norm3(n);
            let unit = if len > 0.0 { n.map(|v| v / len) } else { [0.0; 3] };
            for v in unit.iter().chain(self.corners(t).iter().flatten()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    pub fn write_stl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        f.write_all(&self.to_stl()).map_err(io_err(path))?;
        f.flush().map_err(io_err(path))
    }

    /// Parse a binary STL, welding vertices with bit-identical coordinates.
    pub fn from_stl(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 84 {
            return Err(format!("{} bytes is shorter than an STL header", bytes.len()));
        }
        let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        if bytes.len() != 84 + 50 * n {
            return Err(format!(
                "{} triangles need {} bytes, found {}",
                n,
                84 + 50 * n,
                bytes.len()
            ));
        }
        let mut index = std::collections::HashMap::new();
        let mut mesh = SurfaceMesh::default();
        for r in 0..n {
            let rec = &bytes[84 + 50 * r..84 + 50 * (r + 1)];
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            let mut tri = [0u32; 3];
            for (c, slot) in tri.iter_mut().enumerate() {
                let p = [f(3 + 3 * c), f(4 + 3 * c), f(5 + 3 * c)];
                let key = p.map(f32::to_bits);
                *slot = *index.entry(key).or_insert_with(|| {
                    mesh.vertices.push(p.map(f64::from));
                    (mesh.vertices.len() - 1) as u32
                });
            }
            mesh.triangles.push(tri);
        }
        Ok(mesh)
    }

    pub fn read_stl(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_stl(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Cube corner `c` has offsets `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as `(start corner, axis)`.
fn cube_edges() -> [(usize, usize); 12] {
    let mut e = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                e[n] = (c, axis);
                n += 1;
            }
        }
    }
    e
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    cube_edges().iter().position(|&e| e == (lo, axis)).unwrap()
}

/// Triangles (as cube-edge triples) for each of the 256 inside/outside corner
/// patterns. Built from oriented crossing segments on the six faces; on faces
/// with two diagonal solid corners the solid corners are kept apart, which
/// depends only on the face and so matches the neighbouring cube.
fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // faces as corner cycles, counter-clockwise seen from outside the cube
        let mut faces = Vec::with_capacity(6);
        for axis in 0..3 {
            let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in 0..2 {
                let corner = |u: usize, v: usize| (side << axis) | (u << b) | (v << c);
                let mut cyc = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                if side == 0 {
                    cyc.reverse();
                }
                faces.push(cyc);
            }
        }
        (0..256usize)
            .map(|case| {
                let inside = |c: usize| case & (1 << c) != 0;
                let mut next = [usize::MAX; 12];
                for cyc in &faces {
                    let crossings: Vec<(usize, bool)> = (0..4)
                        .filter(|&k| inside(cyc[k]) != inside(cyc[(k + 1) % 4]))
                        .map(|k| (edge_between(cyc[k], cyc[(k + 1) % 4]), inside(cyc[(k + 1) % 4])))
                        .collect();
                    let m = crossings.len();
                    for (n, &(e, entering)) in crossings.iter().enumerate() {
                        if entering {
                            next[e] = crossings[(n + 1) % m].0;
                        }
                    }
                }
                let mut tris = Vec::new();
                let mut seen = [false; 12];
                for start in 0..12 {
                    if next[start] == usize::MAX || seen[start] {
                        continue;
                    }
                    let mut lp = vec![start];
                    seen[start] = true;
                    let mut cur = next[start];
                    while cur != start {
                        seen[cur] = true;
                        lp.push(cur);
                        cur = next[cur];
                    }
                    for k in 1..lp.len() - 1 {
                        tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
                    }
                }
                tris
            })
            .collect()
    })
}

/// Zero iso-surface of `f` sampled on `lattice` (3D), with crossings refined
/// against `f`. Normals point from the positive side to the negative side.
pub fn marching_cubes(f: &(impl Fn(&Point) -> f64 + Sync), lattice: &Lattice) -> Result<SurfaceMesh> {
    if lattice.dim != 3 {
        return Err(Error::invalid("marching cubes needs a 3D lattice"));
    }
    let values = lattice.sample(f);
    let [nx, ny, nz] = lattice.counts;
    let table = case_table();
    let edges = cube_edges();
    let cells = (nx - 1) * (ny - 1) * (nz - 1);
    // global id of a lattice edge: 3 * start node + axis
    let tri_edges: Vec<[usize; 3]> = (0..cells)
        .into_par_iter()
        .flat_map_iter(|c| {
            let i = c % (nx - 1);
            let j = (c / (nx - 1)) % (ny - 1);
            let k = c / ((nx - 1) * (ny - 1));
            let node = |corner: usize| {
                let o = corner_offset(corner);
                lattice.index(i + o[0], j + o[1], k + o[2])
            };
            let case = (0..8).fold(0usize, |acc, corner| {
                acc | (((values[node(corner)] > 0.0) as usize) << corner)
            });
            table[case]
                .iter()
                .map(|t| t.map(|e| 3 * node(edges[e as usize].0) + edges[e as usize].1))
                .collect::<Vec<_>>()
                .into_iter()
        })
        .collect();
    let mut ids: Vec<usize> = tri_edges.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let vertices: Vec<[f64; 3]> = ids
        .par_iter()
        .map(|&id| {
            let (n, axis) = (id / 3, id % 3);
            let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
            let mut o = [i, j, k];
            o[axis] += 1;
            refine_root(
                f,
                lattice.node(i, j, k),
                lattice.node(o[0], o[1], o[2]),
                values[n],
                values[lattice.index(o[0], o[1], o[2])],
            )
        })
        .collect();
    let triangles = tri_edges
        .iter()
        .map(|t| t.map(|id| ids.binary_search(&id).unwrap() as u32))
        .collect();
    Ok(SurfaceMesh { vertices, triangles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_complementary_and_closed() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        for (case, tris) in t.iter().enumerate() {
            // every crossing edge appears, and the triangle fan has no stray edges
            let crossing = cube_edges()
                .iter()
                .filter(|&&(c, a)| ((case >> c) & 1) != ((case >> (c | (1 << a))) & 1))
                .count();
            let used: std::collections::BTreeSet<u8> = tris.iter().flatten().copied().collect();
            assert_eq!(used.len(), crossing, "case {case}");
            assert!(tris.len() <= 12);
        }
    }

    #[test]
    fn single_corner_orientation() {
        // solid around the origin corner only: normal points away from it
        let f = |x: &Point| 0.5 - (x[0] + x[1] + x[2]);
        let l = Lattice::new(3, [0.0; 3], 1.0, [2, 2, 2]).unwrap();
        let m = marching_cubes(&f, &l).unwrap();
        assert_eq!(m.triangles.len(), 1);
        let n = m.normal(&m.triangles[0]);
        assert!(n.iter().all(|&v| v > 0.0));
    }

    fn sphere_mesh(n: usize, r: f64) -> SurfaceMesh {
        let f = move |x: &Point| r - ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + (x[2] - 0.5).powi(2)).sqrt();
        let l = Lattice::new(3, [0.0; 3], 1.0 / (n - 1) as f64, [n, n, n]).unwrap();
        marching_cubes(&f, &l).unwrap()
    }

    #[test]
    fn sphere_area_volume_and_closure() {
        let r = 0.35;
        let m = sphere_mesh(64, r);
        let pi = std::f64::consts::PI;
        let (a, v) = (4.0 * pi * r * r, 4.0 / 3.0 * pi * r.powi(3));
        assert!((m.area() - a).abs() < 0.02 * a, "area {} vs {a}", m.area());
        assert!((m.volume() - v).abs() < 0.02 * v, "volume {} vs {v}", m.volume());
        assert!(m.is_watertight());
        assert_eq!(m.degenerate_triangles(1e-12), 0);
    }

    #[test]
    fn constant_field_is_empty() {
        let l = Lattice::new(3, [0.0; 3], 0.5, [4, 4, 4]).unwrap();
        let m = marching_cubes(&|_: &Point| 1.0, &l).unwrap();
        assert!(m.triangles.is_empty());
        let bytes = m.to_stl();
        assert_eq!(bytes.len(), 84);
        assert_eq!(SurfaceMesh::from_stl(&bytes).unwrap().triangles.len(), 0);
    }

    #[test]
    fn saddles_stay_closed() {
        // random fields exercise every ambiguous configuration
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let vals: Vec<f64> = (0..8 * 8 * 8).map(|_| rnd()).collect();
        // piecewise-constant lookup makes the sampled values exactly `vals`
        let f = |x: &Point| {
            let idx = |v: f64| ((v + 0.5).floor() as isize).clamp(0, 7) as usize;
            let (i, j, k) = (idx(x[0]), idx(x[1]), idx(x[2]));
            if i == 0 || j == 0 || k == 0 || i == 7 || j == 7 || k == 7 {
                -1.0
            } else {
                vals[i + 8 * (j + 8 * k)]
            }
        };
        let l = Lattice::new(3, [0.0; 3], 1.0, [8, 8, 8]).unwrap();
        let m = marching_cubes(&f, &l).unwrap();
        assert!(!m.triangles.is_empty());
        assert!(m.is_watertight());
        assert!(m.volume() > 0.0);
    }

    #[test]
    fn stl_roundtrip() {
        let m = sphere_mesh(12, 0.3);
        let back = SurfaceMesh::from_stl(&m.to_stl()).unwrap();
        assert_eq!(back.triangles.len(), m.triangles.len());
        assert!(back.is_watertight());
        assert!((back.volume() - m.volume()).abs() < 1e-5);
        assert!(SurfaceMesh::from_stl(&[0u8; 90]).is_err());
    }
}
