//! Tetrahedral meshes of axis-aligned boxes.
//!
//! The structured generator splits every sub-cube of an `n × n × n` grid into
//! six tetrahedra sharing the main diagonal (Kuhn/Freudenthal subdivision).
//! All sub-cubes use the same diagonal direction, so the result is conforming
//! without any parity alternation.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use crate::{Error, Result, Vec3};

/// Below this volume a tetrahedron is treated as degenerate.
pub const DEGENERATE_VOLUME: f64 = 1e-14;

/// Tolerance used to decide whether a node lies on the clamped face.
const FACE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TetMesh {
    nodes: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    dirichlet: Vec<bool>,
    dirichlet_nodes: Vec<usize>,
    h_max: f64,
    node_weights: Vec<f64>,
    geometry: Vec<ElementGeometry>,
}

/// Volume and barycentric gradients of one P1 element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub volume: f64,
    pub gradients: [Vec3; 4],
}

impl ElementGeometry {
    /// Geometry of the tetrahedron with the given vertices. Negative
    /// orientation is reported through the sign of `volume`.
    pub fn from_vertices(v: [Vec3; 4]) -> Self {
        let jac = nalgebra::Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
        let det = jac.determinant();
        let volume = det / 6.0;
        let gradients = match jac.try_inverse() {
            Some(inv) => {
                let g1 = inv.row(0).transpose();
                let g2 = inv.row(1).transpose();
                let g3 = inv.row(2).transpose();
                [-(g1 + g2 + g3), g1, g2, g3]
            }
            None => [Vec3::zeros(); 4],
        };
        ElementGeometry { volume, gradients }
    }
}

impl TetMesh {
    /// Mesh of `[0, side]³` with `n³` sub-cubes, six tetrahedra each.
    ///
    /// # Panics
    ///
    /// If `n == 0` or `side` is not a positive finite number.
    pub fn structured_cube(n: usize, side: f64) -> Self {
        Self::structured_box(n, side).expect("structured cube meshes are never degenerate")
    }

    fn structured_box(n: usize, side: f64) -> Result<Self> {
        assert!(n >= 1, "structured_cube needs n >= 1");
        assert!(side.is_finite() && side > 0.0, "side must be positive");
        let np = n + 1;
        let h = side / n as f64;
        let index = |i: usize, j: usize, k: usize| i + np * (j + np * k);

        let mut nodes = Vec::with_capacity(np * np * np);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    nodes.push(Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h));
                }
            }
        }

        // Each permutation of the axes gives one monotone lattice path from
        // corner (0,0,0) to corner (1,1,1).
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut tets = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for perm in PERMS {
                        let mut corner = [i, j, k];
                        let mut tet = [index(i, j, k), 0, 0, 0];
                        for (slot, &axis) in perm.iter().enumerate() {
                            corner[axis] += 1;
                            tet[slot + 1] = index(corner[0], corner[1], corner[2]);
                        }
                        tets.push(tet);
                    }
                }
            }
        }
        Self::from_parts(nodes, tets)
    }

    /// Builds a mesh from raw parts. Elements are reoriented to positive
    /// volume and the clamped set is the face `x = min x`.
    pub fn from_parts(nodes: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        if nodes.is_empty() || tets.is_empty() {
            return Err(Error::Mesh("mesh needs at least one node and one tet".into()));
        }
        let mut geometry = Vec::with_capacity(tets.len());
        let mut node_weights = vec![0.0; nodes.len()];
        let mut h_max: f64 = 0.0;
        for (t, tet) in tets.iter_mut().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&a| a >= nodes.len()) {
                return Err(Error::Mesh(format!("tet {t} references node {bad}")));
            }
            let mut geo = ElementGeometry::from_vertices(tet.map(|a| nodes[a]));
            if geo.volume < 0.0 {
                tet.swap(2, 3);
                geo = ElementGeometry::from_vertices(tet.map(|a| nodes[a]));
            }
            if geo.volume < DEGENERATE_VOLUME {
                return Err(Error::DegenerateElement {
                    tet: t,
                    volume: geo.volume,
                });
            }
            for a in 0..4 {
                node_weights[tet[a]] += 0.25 * geo.volume;
                for b in a + 1..4 {
                    h_max = h_max.max((nodes[tet[a]] - nodes[tet[b]]).norm());
                }
            }
            geometry.push(geo);
        }
        let x_min = nodes.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let dirichlet: Vec<bool> = nodes.iter().map(|p| (p.x - x_min).abs() <= FACE_TOL).collect();
        let dirichlet_nodes = (0..nodes.len()).filter(|&z| dirichlet[z]).collect();
        Ok(TetMesh {
            nodes,
            tets,
            dirichlet,
            dirichlet_nodes,
            h_max,
            node_weights,
            geometry,
        })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    /// Longest edge over all elements.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Lumped volume per node: a quarter of the volume of every incident tet.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Indices of the clamped nodes (face `x = min x`), ascending.
    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet_nodes
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.dirichlet[node]
    }

    pub fn volume(&self) -> f64 {
        self.geometry.iter().map(|g| g.volume).sum()
    }

    /// Volume and the four constant barycentric gradients of element `tet`.
    pub fn element_geometry(&self, tet: usize) -> &ElementGeometry {
        &self.geometry[tet]
    }

    pub fn geometries(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    /// Sorted node adjacency including the diagonal (the sparsity pattern of
    /// every scalar P1 operator).
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.num_nodes()).map(|z| vec![z]).collect();
        for tet in &self.tets {
            for &a in tet {
                for &b in tet {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        adj
    }

    /// Writes the plain-text debug dump: `nodes N tets M`, coordinates, tets,
    /// then the clamped node list on one line.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {} tets {}", self.num_nodes(), self.num_tets());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
        }
        for t in &self.tets {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        let list: Vec<String> = self.dirichlet_nodes.iter().map(|z| z.to_string()).collect();
        let _ = writeln!(s, "{}", list.join(" "));
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io("writing mesh dump", e))
    }

    /// Reads a dump written by [`TetMesh::write_dump`]. The clamped list in
    /// the file must agree with the `x = min x` rule.
    pub fn read_dump<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::io("reading mesh dump", e)),
                None => Err(Error::Mesh(format!("unexpected end of dump while reading {what}"))),
            }
        };
        let header = next("header")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (nn, nt) = match fields.as_slice() {
            ["nodes", n, "tets", m] => (
                n.parse::<usize>().map_err(|e| Error::Mesh(e.to_string()))?,
                m.parse::<usize>().map_err(|e| Error::Mesh(e.to_string()))?,
            ),
            _ => return Err(Error::Mesh(format!("bad header `{header}`"))),
        };
        let parse_err = |l: &str| Error::Mesh(format!("bad line `{l}`"));
        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let l = next("node")?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(&l))?;
            if v.len() != 3 {
                return Err(parse_err(&l));
            }
            nodes.push(Vec3::new(v[0], v[1], v[2]));
        }
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let l = next("tet")?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(&l))?;
            if v.len() != 4 {
                return Err(parse_err(&l));
            }
            tets.push([v[0], v[1], v[2], v[3]]);
        }
        let l = next("dirichlet list")?;
        let listed: Vec<usize> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(&l))?;
        let mesh = Self::from_parts(nodes, tets)?;
        if listed != mesh.dirichlet_nodes {
            return Err(Error::Mesh("clamped node list does not match the x = min face".into()));
        }
        Ok(mesh)
    }
}
