//! P1 assembly for `-div(a grad u) + beta . grad u + c u = f`, Dirichlet
//! handling, solvers, field norms and interface inner products.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{BoundaryTag, InterfaceId, Mesh, TraceIndex};
use crate::linalg::{bicgstab, BandedLu, CsrMatrix};

/// Constant coefficients of the advection-reaction-diffusion operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemCoefficients {
    pub diffusion: f64,
    pub velocity: [f64; 2],
    pub reaction: f64,
    /// Robin coefficient on Robin segments.
    pub robin: f64,
    pub source: f64,
    /// Neumann/Robin datum on natural-boundary segments.
    pub neumann: f64,
    /// Cross-flow width used for the Peclet number.
    pub width: f64,
}

impl ProblemCoefficients {
    pub fn advection_diffusion(diffusion: f64, velocity: [f64; 2], width: f64) -> Self {
        Self { diffusion, velocity, reaction: 0.0, robin: 0.0, source: 0.0, neumann: 0.0, width }
    }

    /// `|beta| H / a`.
    pub fn peclet(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1]) * self.width / self.diffusion
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > 0.0) {
            return Err(Error::Coefficient(format!("diffusion must be positive, got {}", self.diffusion)));
        }
        if self.reaction < 0.0 {
            return Err(Error::Coefficient(format!("reaction must be nonnegative, got {}", self.reaction)));
        }
        if self.robin < 0.0 {
            return Err(Error::Coefficient(format!("Robin coefficient must be nonnegative, got {}", self.robin)));
        }
        let all = [self.velocity[0], self.velocity[1], self.source, self.neumann, self.width];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Coefficient("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Largest `|beta| h / (2a)` over the mesh cells.
    pub fn cell_peclet(&self, mesh: &Mesh) -> f64 {
        self.velocity[0].hypot(self.velocity[1]) * mesh.hx().max(mesh.hy()) / (2.0 * self.diffusion)
    }
}

/// Linear system before and after Dirichlet constraints. The unconstrained
/// matrix is kept; constraints are applied when solving.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dirichlet: Vec<Option<f64>>,
}

impl SparseSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn constrained_mask(&self) -> Vec<bool> {
        self.dirichlet.iter().map(Option::is_some).collect()
    }

    /// Matrix with constrained rows replaced by identity rows.
    pub fn constrained_matrix(&self) -> CsrMatrix {
        self.matrix.with_identity_rows(&self.constrained_mask())
    }

    pub fn constrained_rhs(&self) -> Vec<f64> {
        self.rhs
            .iter()
            .zip(&self.dirichlet)
            .map(|(b, d)| d.unwrap_or(*b))
            .collect()
    }

    /// Prescribes `values[k]` at `nodes[k]`. A node that is already
    /// constrained to a different value (beyond 1e-12) is an error.
    pub fn apply_dirichlet(&mut self, nodes: &[usize], values: &[f64]) -> Result<()> {
        check_len(nodes.len(), values.len())?;
        for (&n, &v) in nodes.iter().zip(values) {
            if n >= self.dim() {
                return Err(Error::Dimension { expected: self.dim(), found: n + 1 });
            }
            match self.dirichlet[n] {
                Some(old) if (old - v).abs() > 1e-12 => {
                    return Err(Error::ConstraintConflict { node: n, first: old, second: v })
                }
                _ => self.dirichlet[n] = Some(v),
            }
        }
        Ok(())
    }

    /// Constrains every node on edges tagged `tag` to `profile(x, y)`.
    pub fn apply_dirichlet_tag(&mut self, mesh: &Mesh, tag: BoundaryTag, profile: impl Fn(f64, f64) -> f64) -> Result<()> {
        let nodes = mesh.boundary_nodes(tag);
        let values: Vec<f64> = nodes.iter().map(|&n| profile(mesh.nodes()[n][0], mesh.nodes()[n][1])).collect();
        self.apply_dirichlet(&nodes, &values)
    }
}

/// Galerkin P1 system. Diffusion and advection are integrated exactly,
/// reaction and Robin terms use the exact P1 mass matrices.
pub fn assemble_ard_system(
    mesh: &Mesh,
    coeffs: &ProblemCoefficients,
    neumann: &[BoundaryTag],
    robin: &[BoundaryTag],
) -> Result<SparseSystem> {
    coeffs.validate()?;
    let n = mesh.node_count();
    let nodes = mesh.nodes();
    let mut trip = Vec::with_capacity(mesh.triangles().len() * 9);
    let mut rhs = vec![0.0; n];
    let [bx, by] = coeffs.velocity;
    for tri in mesh.triangles() {
        let p = tri.map(|v| nodes[v]);
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        let mut grad = [[0.0; 2]; 3];
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            grad[i] = [(p[j][1] - p[k][1]) / (2.0 * area), (p[k][0] - p[j][0]) / (2.0 * area)];
        }
        for i in 0..3 {
            for j in 0..3 {
                let stiff = coeffs.diffusion * area * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]);
                let adv = (bx * grad[j][0] + by * grad[j][1]) * area / 3.0;
                let mass = coeffs.reaction * area / 12.0 * if i == j { 2.0 } else { 1.0 };
                trip.push((tri[i], tri[j], stiff + adv + mass));
            }
            rhs[tri[i]] += coeffs.source * area / 3.0;
        }
    }
    for e in mesh.boundary_edges() {
        let is_neumann = neumann.contains(&e.tag);
        let is_robin = robin.contains(&e.tag);
        if !(is_neumann || is_robin) {
            continue;
        }
        let [a, b] = e.nodes;
        let len = (nodes[a][0] - nodes[b][0]).hypot(nodes[a][1] - nodes[b][1]);
        rhs[a] += coeffs.neumann * len / 2.0;
        rhs[b] += coeffs.neumann * len / 2.0;
        if is_robin && coeffs.robin != 0.0 {
            let g = coeffs.robin * len / 6.0;
            trip.push((a, a, 2.0 * g));
            trip.push((b, b, 2.0 * g));
            trip.push((a, b, g));
            trip.push((b, a, g));
        }
    }
    Ok(SparseSystem { matrix: CsrMatrix::from_triplets(n, trip), rhs, dirichlet: vec![None; n] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    #[default]
    Direct,
    Bicgstab,
}

/// Solves the constrained system.
pub fn solve_linear(system: &SparseSystem, method: SolveMethod, tol: f64) -> Result<Vec<f64>> {
    let a = system.constrained_matrix();
    let b = system.constrained_rhs();
    let mut x = match method {
        SolveMethod::Direct => BandedLu::factor(&a)?.solve(&b)?,
        SolveMethod::Bicgstab => bicgstab(&a, &b, tol, 10 * a.dim().max(1))?.0,
    };
    // pivoting may reorder identity rows; restore the prescribed values bit for bit
    for (xi, d) in x.iter_mut().zip(&system.dirichlet) {
        if let Some(v) = d {
            *xi = *v;
        }
    }
    Ok(x)
}

thread_local! {
    static OMEGA2_SOLVES: Cell<usize> = const { Cell::new(0) };
}

/// Number of solves performed on this thread by solvers flagged as
/// middle-subdomain solvers.
pub fn omega2_solve_count() -> usize {
    OMEGA2_SOLVES.with(Cell::get)
}

/// A factorized subdomain operator with a fixed set of Dirichlet nodes.
///
/// Locked nodes (inlet, sides) keep the values given at construction;
/// interface nodes receive new values on every solve. Locked values win
/// where the two sets meet.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    lu: BandedLu,
    base_rhs: Vec<f64>,
    locked: Vec<bool>,
    interface: Vec<bool>,
    counts_as_omega2: bool,
}

impl DirichletSolver {
    /// `system` must already carry the locked constraints.
    pub fn new(system: &SparseSystem, interface_nodes: &[usize], counts_as_omega2: bool) -> Result<Self> {
        let locked = system.constrained_mask();
        let mut mask = locked.clone();
        for &n in interface_nodes {
            mask[n] = true;
        }
        let lu = BandedLu::factor(&system.matrix.with_identity_rows(&mask))?;
        let mut base_rhs = system.constrained_rhs();
        for &n in interface_nodes {
            if !locked[n] {
                base_rhs[n] = 0.0;
            }
        }
        let mut interface = vec![false; locked.len()];
        for &n in interface_nodes {
            interface[n] = true;
        }
        Ok(Self { lu, base_rhs, locked, interface, counts_as_omega2 })
    }

    pub fn dim(&self) -> usize {
        self.base_rhs.len()
    }

    /// Solves with `data` prescribed on the interface lines. With
    /// `homogeneous`, source, Neumann and locked values are taken as zero.
    pub fn solve(&self, data: &[(&TraceIndex, &[f64])], homogeneous: bool) -> Result<Vec<f64>> {
        let mut rhs = if homogeneous { vec![0.0; self.dim()] } else { self.base_rhs.clone() };
        for (trace, values) in data {
            check_len(trace.len(), values.len())?;
            for (&n, &v) in trace.nodes.iter().zip(values.iter()) {
                if !self.locked[n] {
                    if !self.interface[n] {
                        return Err(Error::Geometry(format!("node {n} is not an interface node of this solver")));
                    }
                    rhs[n] = v;
                }
            }
        }
        if self.counts_as_omega2 {
            OMEGA2_SOLVES.with(|c| c.set(c.get() + 1));
        }
        let mut x = self.lu.solve(&rhs)?;
        for (n, xi) in x.iter_mut().enumerate() {
            if self.locked[n] || self.interface[n] {
                *xi = rhs[n];
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormKind {
    L2,
    #[default]
    H1,
}

/// Mass and stiffness matrices of a mesh, for Galerkin-consistent norms.
#[derive(Debug, Clone)]
pub struct NormOperator {
    mass: CsrMatrix,
    stiffness: CsrMatrix,
}

impl NormOperator {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.node_count();
        let nodes = mesh.nodes();
        let mut m = Vec::with_capacity(mesh.triangles().len() * 9);
        let mut k = Vec::with_capacity(mesh.triangles().len() * 9);
        for tri in mesh.triangles() {
            let p = tri.map(|v| nodes[v]);
            let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
            let mut grad = [[0.0; 2]; 3];
            for i in 0..3 {
                let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                grad[i] = [(p[j][1] - p[l][1]) / (2.0 * area), (p[l][0] - p[j][0]) / (2.0 * area)];
            }
            for i in 0..3 {
                for j in 0..3 {
                    m.push((tri[i], tri[j], area / 12.0 * if i == j { 2.0 } else { 1.0 }));
                    k.push((tri[i], tri[j], area * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1])));
                }
            }
        }
        Self { mass: CsrMatrix::from_triplets(n, m), stiffness: CsrMatrix::from_triplets(n, k) }
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn norm(&self, field: &[f64], kind: NormKind) -> Result<f64> {
        check_len(self.dim(), field.len())?;
        let l2 = self.mass.bilinear(field, field);
        let total = match kind {
            NormKind::L2 => l2,
            NormKind::H1 => l2 + self.stiffness.bilinear(field, field),
        };
        Ok(total.max(0.0).sqrt())
    }

    /// Norm of `a - b`.
    pub fn distance(&self, a: &[f64], b: &[f64], kind: NormKind) -> Result<f64> {
        check_len(a.len(), b.len())?;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&d, kind)
    }
}

pub fn field_norm(field: &[f64], mesh: &Mesh, kind: NormKind) -> Result<f64> {
    NormOperator::new(mesh).norm(field, kind)
}

/// Nodal interface inner products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum InnerProductKind {
    L2d,
    #[default]
    H1d,
}

/// Values of a field on one interface line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceVector {
    pub interface: InterfaceId,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl TraceVector {
    pub fn new(interface: InterfaceId, spacing: f64, values: Vec<f64>) -> Self {
        Self { interface, spacing, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `h sum v w` plus, for `H1d`, `h sum (dv/h)(dw/h)`.
pub fn trace_dot(v: &[f64], w: &[f64], spacing: f64, kind: InnerProductKind) -> Result<f64> {
    check_len(v.len(), w.len())?;
    let mut s: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() * spacing;
    if kind == InnerProductKind::H1d {
        let d: f64 = v
            .windows(2)
            .zip(w.windows(2))
            .map(|(a, b)| (a[1] - a[0]) * (b[1] - b[0]))
            .sum();
        s += d / spacing;
    }
    Ok(s)
}

pub fn trace_inner_product(u: &TraceVector, v: &TraceVector, kind: InnerProductKind) -> Result<f64> {
    if u.interface != v.interface {
        return Err(Error::Geometry(format!("traces live on different interfaces ({} and {})", u.interface, v.interface)));
    }
    trace_dot(&u.values, &v.values, u.spacing, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_structured_mesh, Rectangle};

    fn all_dirichlet(mesh: &Mesh, sys: &mut SparseSystem, f: impl Fn(f64, f64) -> f64 + Copy) {
        for tag in [BoundaryTag::Inlet, BoundaryTag::Outlet, BoundaryTag::Side] {
            sys.apply_dirichlet_tag(mesh, tag, f).unwrap();
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 2.0, 0.0, 1.0), 6, 4).unwrap();
        let c = ProblemCoefficients::advection_diffusion(1.0, [0.0, 0.0], 1.0);
        let mut sys = assemble_ard_system(&mesh, &c, &[], &[]).unwrap();
        all_dirichlet(&mesh, &mut sys, |_, _| 0.0);
        let u = solve_linear(&sys, SolveMethod::Direct, 1e-10).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_field_is_reproduced() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 3.0, 0.0, 2.0), 9, 5).unwrap();
        let mut c = ProblemCoefficients::advection_diffusion(1.0, [2.5, 0.2], 2.0);
        c.source = 2.5;
        let mut sys = assemble_ard_system(&mesh, &c, &[], &[]).unwrap();
        all_dirichlet(&mesh, &mut sys, |x, _| x);
        for method in [SolveMethod::Direct, SolveMethod::Bicgstab] {
            let u = solve_linear(&sys, method, 1e-13).unwrap();
            for (p, v) in mesh.nodes().iter().zip(&u) {
                assert!((v - p[0]).abs() < 1e-10, "{} vs {}", v, p[0]);
            }
        }
    }

    #[test]
    fn negative_coefficients_are_rejected() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0), 1, 1).unwrap();
        let mut c = ProblemCoefficients::advection_diffusion(0.0, [0.0, 0.0], 1.0);
        assert!(matches!(assemble_ard_system(&mesh, &c, &[], &[]), Err(Error::Coefficient(_))));
        c.diffusion = 1.0;
        c.reaction = -1.0;
        assert!(matches!(assemble_ard_system(&mesh, &c, &[], &[]), Err(Error::Coefficient(_))));
        c.reaction = 0.0;
        c.robin = -0.5;
        assert!(matches!(assemble_ard_system(&mesh, &c, &[], &[]), Err(Error::Coefficient(_))));
    }

    #[test]
    fn conflicting_dirichlet_values_error() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0), 2, 2).unwrap();
        let c = ProblemCoefficients::advection_diffusion(1.0, [0.0, 0.0], 1.0);
        let mut sys = assemble_ard_system(&mesh, &c, &[], &[]).unwrap();
        sys.apply_dirichlet_tag(&mesh, BoundaryTag::Inlet, |_, _| 1.0).unwrap();
        let err = sys.apply_dirichlet_tag(&mesh, BoundaryTag::Inlet, |_, _| 2.0).unwrap_err();
        assert!(matches!(err, Error::ConstraintConflict { .. }));
    }

    #[test]
    fn parabolic_inlet_agrees_with_sides_at_corners() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 4.0, 0.0, 5.0), 4, 10).unwrap();
        let c = ProblemCoefficients::advection_diffusion(1.0, [1.0, 0.2], 5.0);
        let mut sys = assemble_ard_system(&mesh, &c, &[BoundaryTag::Outlet], &[]).unwrap();
        sys.apply_dirichlet_tag(&mesh, BoundaryTag::Side, |_, _| 0.0).unwrap();
        sys.apply_dirichlet_tag(&mesh, BoundaryTag::Inlet, |_, y| 4.0 / 25.0 * y * (5.0 - y)).unwrap();
    }

    #[test]
    fn constrained_values_appear_exactly() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 2.0, 0.0, 1.0), 8, 4).unwrap();
        let c = ProblemCoefficients::advection_diffusion(0.7, [3.0, -0.4], 1.0);
        let mut sys = assemble_ard_system(&mesh, &c, &[BoundaryTag::Outlet], &[]).unwrap();
        sys.apply_dirichlet_tag(&mesh, BoundaryTag::Side, |_, _| 0.0).unwrap();
        sys.apply_dirichlet_tag(&mesh, BoundaryTag::Inlet, |_, y| y * (1.0 - y)).unwrap();
        let u = solve_linear(&sys, SolveMethod::Direct, 0.0).unwrap();
        for (i, d) in sys.dirichlet.iter().enumerate() {
            if let Some(v) = d {
                assert_eq!(u[i], *v);
            }
        }
    }

    #[test]
    fn robin_term_adds_edge_mass() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0), 1, 1).unwrap();
        let mut c = ProblemCoefficients::advection_diffusion(1.0, [0.0, 0.0], 1.0);
        let plain = assemble_ard_system(&mesh, &c, &[], &[]).unwrap();
        c.robin = 3.0;
        let robin = assemble_ard_system(&mesh, &c, &[], &[BoundaryTag::Outlet]).unwrap();
        // outlet edge of length 1 between nodes 2 and 3
        assert!((robin.matrix.get(2, 2) - plain.matrix.get(2, 2) - 1.0).abs() < 1e-14);
        assert!((robin.matrix.get(2, 3) - plain.matrix.get(2, 3) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn symmetric_without_advection() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 2.0, 0.0, 1.0), 5, 3).unwrap();
        let mut c = ProblemCoefficients::advection_diffusion(1.3, [0.0, 0.0], 1.0);
        c.reaction = 0.5;
        let sys = assemble_ard_system(&mesh, &c, &[], &[]).unwrap();
        assert!(sys.matrix.is_symmetric(1e-14));
        c.velocity = [1.0, 0.0];
        let sys = assemble_ard_system(&mesh, &c, &[], &[]).unwrap();
        assert!(!sys.matrix.is_symmetric(1e-14));
    }

    #[test]
    fn norms_of_simple_fields() {
        let mesh = build_structured_mesh(Rectangle::new(0.0, 2.0, 0.0, 3.0), 4, 6).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        assert!((field_norm(&ones, &mesh, NormKind::L2).unwrap() - 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(field_norm(&vec![0.0; mesh.node_count()], &mesh, NormKind::H1).unwrap(), 0.0);

        let unit = build_structured_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0), 1, 1).unwrap();
        let x: Vec<f64> = unit.nodes().iter().map(|p| p[0]).collect();
        let h1 = field_norm(&x, &unit, NormKind::H1).unwrap();
        let l2 = field_norm(&x, &unit, NormKind::L2).unwrap();
        assert!((l2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!((h1 - (1.0f64 + 1.0 / 3.0).sqrt()).abs() < 1e-14);
        assert!(matches!(field_norm(&x[..3], &unit, NormKind::L2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn trace_products_match_hand_sums() {
        let m = 10;
        let h = 5.0 / m as f64;
        let ones = vec![1.0; m + 1];
        let l2 = trace_dot(&ones, &ones, h, InnerProductKind::L2d).unwrap();
        assert!((l2 - (5.0 + h)).abs() < 1e-14);
        assert_eq!(l2, trace_dot(&ones, &ones, h, InnerProductKind::H1d).unwrap());

        let ramp: Vec<f64> = (0..=5).map(|k| k as f64).collect();
        assert!((trace_dot(&ramp, &ramp, 1.0, InnerProductKind::L2d).unwrap() - 55.0).abs() < 1e-12);
        assert!((trace_dot(&ramp, &ramp, 1.0, InnerProductKind::H1d).unwrap() - 60.0).abs() < 1e-12);
        assert!(trace_dot(&ramp, &ones, 1.0, InnerProductKind::L2d).is_err());

        let a = TraceVector::new(InterfaceId::In2, 1.0, ramp.clone());
        let b = TraceVector::new(InterfaceId::In2, 1.0, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        let a2 = TraceVector::new(InterfaceId::In2, 1.0, ramp.iter().map(|v| 2.0 * v).collect());
        let p = trace_inner_product(&a, &b, InnerProductKind::H1d).unwrap();
        let p2 = trace_inner_product(&a2, &b, InnerProductKind::H1d).unwrap();
        assert!((p2 - 2.0 * p).abs() < 1e-14 * p.abs().max(1.0));
        let c = TraceVector::new(InterfaceId::Out2, 1.0, ramp);
        assert!(trace_inner_product(&a, &c, InnerProductKind::L2d).is_err());
    }
}
