//! Pipe geometry, the three-subdomain overlapping split and structured P1
//! triangulations.
//!
//! Axis conventions: `x` runs along the flow (length `L`), `y` across it
//! (width `H`). Lattice node `(i, j)` sits at `(x0 + i*hx, y0 + j*hy)` and has
//! index `i*(ny+1) + j`, which keeps the matrix bandwidth at `ny + 2`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COLUMN_TOL: f64 = 1e-9;

/// Cross-flow width, axial length and the four cut abscissas `L1 < L2 < L3 < L4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeGeometry {
    pub width: f64,
    pub length: f64,
    pub cuts: [f64; 4],
}

impl PipeGeometry {
    pub fn new(width: f64, length: f64, cuts: [f64; 4]) -> Result<Self> {
        let g = Self { width, length, cuts };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let [l1, l2, l3, l4] = self.cuts;
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("width must be positive, got {}", self.width)));
        }
        let checks = [
            (0.0 < l1, "0 < L1"),
            (l1 < l2, "L1 < L2"),
            (l2 < l3, "L2 < L3"),
            (l3 < l4, "L3 < L4"),
            (l4 < self.length, "L4 < L"),
        ];
        for (ok, name) in checks {
            if !ok {
                return Err(Error::Config(format!(
                    "cut ordering violated: {name} (cuts {:?}, L = {})",
                    self.cuts, self.length
                )));
            }
        }
        Ok(())
    }

    /// Overlap lengths `(L2 - L1, L4 - L3)`.
    pub fn overlaps(&self) -> (f64, f64) {
        (self.cuts[1] - self.cuts[0], self.cuts[3] - self.cuts[2])
    }
}

/// Axis-aligned rectangle `(x0, x1) x (y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// The four Schwarz interfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterfaceId {
    /// Left boundary of the middle subdomain, `x = L1`.
    #[serde(rename = "2in")]
    In2,
    /// Right boundary of the middle subdomain, `x = L4`.
    #[serde(rename = "2out")]
    Out2,
    /// Right boundary of the inlet subdomain, `x = L2`.
    #[serde(rename = "1out")]
    Out1,
    /// Left boundary of the outlet subdomain, `x = L3`.
    #[serde(rename = "3in")]
    In3,
}

impl InterfaceId {
    pub const ALL: [InterfaceId; 4] = [Self::In2, Self::Out2, Self::Out1, Self::In3];

    pub fn index(self) -> usize {
        match self {
            Self::In2 => 0,
            Self::Out2 => 1,
            Self::Out1 => 2,
            Self::In3 => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::In2 => "2in",
            Self::Out2 => "2out",
            Self::Out1 => "1out",
            Self::In3 => "3in",
        }
    }
}

impl fmt::Display for InterfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Three overlapping subdomain rectangles and the interface abscissas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub geometry: PipeGeometry,
    pub omega: [Rectangle; 3],
}

impl Decomposition {
    pub fn interface_x(&self, id: InterfaceId) -> f64 {
        let c = self.geometry.cuts;
        match id {
            InterfaceId::In2 => c[0],
            InterfaceId::Out1 => c[1],
            InterfaceId::In3 => c[2],
            InterfaceId::Out2 => c[3],
        }
    }

    pub fn full_domain(&self) -> Rectangle {
        Rectangle::new(0.0, self.geometry.length, 0.0, self.geometry.width)
    }
}

pub fn build_pipe_decomposition(geometry: &PipeGeometry) -> Result<Decomposition> {
    geometry.validate()?;
    let [l1, l2, l3, l4] = geometry.cuts;
    let h = geometry.width;
    Ok(Decomposition {
        geometry: *geometry,
        omega: [
            Rectangle::new(0.0, l2, 0.0, h),
            Rectangle::new(l1, l4, 0.0, h),
            Rectangle::new(l3, geometry.length, 0.0, h),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Inlet,
    Outlet,
    Side,
    InterfaceLeft,
    InterfaceRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// Structured P1 triangulation of a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    rect: Rectangle,
    nx: usize,
    ny: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
}

/// Builds an `nx x ny` cell lattice, each cell cut along its lower-left to
/// upper-right diagonal. Left edge is tagged inlet, right edge outlet,
/// bottom and top are sides; use [`Mesh::retag`] to change the ends.
pub fn build_structured_mesh(rect: Rectangle, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Config(format!(
            "mesh subdivision counts must be at least 1 (nx = {nx}, ny = {ny})"
        )));
    }
    if !(rect.width() > 0.0 && rect.height() > 0.0) {
        return Err(Error::Config(format!("degenerate rectangle {rect:?}")));
    }
    let hx = rect.width() / nx as f64;
    let hy = rect.height() / ny as f64;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        let x = if i == nx { rect.x1 } else { rect.x0 + i as f64 * hx };
        for j in 0..=ny {
            let y = if j == ny { rect.y1 } else { rect.y0 + j as f64 * hy };
            nodes.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| i * (ny + 1) + j;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut boundary = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary.push(BoundaryEdge { nodes: [id(i, 0), id(i + 1, 0)], tag: BoundaryTag::Side });
        boundary.push(BoundaryEdge { nodes: [id(i, ny), id(i + 1, ny)], tag: BoundaryTag::Side });
    }
    for j in 0..ny {
        boundary.push(BoundaryEdge { nodes: [id(0, j), id(0, j + 1)], tag: BoundaryTag::Inlet });
        boundary.push(BoundaryEdge { nodes: [id(nx, j), id(nx, j + 1)], tag: BoundaryTag::Outlet });
    }
    Ok(Mesh { rect, nx, ny, nodes, triangles, boundary })
}

impl Mesh {
    /// Replaces the tags of the left (`x = x0`) and right (`x = x1`) edges.
    pub fn retag(mut self, left: BoundaryTag, right: BoundaryTag) -> Self {
        let nx = self.nx;
        let ny = self.ny;
        for e in &mut self.boundary {
            let i0 = e.nodes[0] / (ny + 1);
            let i1 = e.nodes[1] / (ny + 1);
            if i0 == i1 && i0 == 0 {
                e.tag = left;
            } else if i0 == i1 && i0 == nx {
                e.tag = right;
            }
        }
        self
    }

    pub fn rect(&self) -> Rectangle {
        self.rect
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.rect.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.height() / self.ny as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    /// Signed area of triangle `t` (positive for counter-clockwise ordering).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Sorted, deduplicated nodes on edges carrying `tag`.
    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Lattice column index of abscissa `x`, if `x` lies on a node column.
    pub fn column_of(&self, x: f64) -> Result<usize> {
        let s = (x - self.rect.x0) / self.hx();
        let i = s.round();
        let scale = self.rect.x1.abs().max(self.rect.x0.abs()).max(1.0);
        if i < 0.0 || i > self.nx as f64 || (x - (self.rect.x0 + i * self.hx())).abs() > COLUMN_TOL * scale {
            return Err(Error::Geometry(format!(
                "x = {x} is not a node column of the mesh on [{}, {}] with hx = {}",
                self.rect.x0,
                self.rect.x1,
                self.hx()
            )));
        }
        Ok(i as usize)
    }

    /// Plain-text dump: node count, `x y` lines, triangle count, index triples.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{} {}", p[0], p[1])?;
        }
        writeln!(w, "{}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Nodes of a vertical mesh line ordered by increasing `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceIndex {
    pub x: f64,
    pub nodes: Vec<usize>,
    pub y: Vec<f64>,
    pub spacing: f64,
}

impl TraceIndex {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gathers the nodal values of `field` along this line.
    pub fn restrict(&self, field: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&n| field[n]).collect()
    }
}

pub fn extract_interface_nodes(mesh: &Mesh, x: f64) -> Result<TraceIndex> {
    let i = mesh.column_of(x)?;
    let nodes: Vec<usize> = (0..=mesh.ny).map(|j| mesh.node_index(i, j)).collect();
    let y = nodes.iter().map(|&n| mesh.nodes[n][1]).collect();
    Ok(TraceIndex { x, nodes, y, spacing: mesh.hy() })
}
