//! The pipe model problem: physical data, the parameter-to-velocity map,
//! subdomain meshes and their factorized solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_ard_system, solve_linear, DirichletSolver, NormOperator, ProblemCoefficients, SolveMethod, SparseSystem,
};
use crate::geometry::{
    build_pipe_decomposition, build_structured_mesh, extract_interface_nodes, BoundaryTag, Decomposition, InterfaceId,
    Mesh, PipeGeometry, Rectangle, TraceIndex,
};

/// How the swept scalar parameter enters the velocity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterMap {
    /// `beta = (p, beta_y)`.
    #[default]
    AxialVelocity,
    /// `p = |beta| H / a` with `beta_y` fixed.
    Peclet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InletProfile {
    /// `4 y (H - y) / H^2`, vanishing at both walls.
    #[default]
    Parabolic,
    Constant { value: f64 },
}

impl InletProfile {
    pub fn eval(&self, y: f64, width: f64) -> f64 {
        match *self {
            InletProfile::Parabolic => 4.0 * y * (width - y) / (width * width),
            InletProfile::Constant { value } => value,
        }
    }

    pub fn id(&self) -> String {
        match self {
            InletProfile::Parabolic => "parabolic".into(),
            InletProfile::Constant { value } => format!("constant:{value}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub diffusion: f64,
    pub beta_y: f64,
    #[serde(default)]
    pub source: f64,
    #[serde(default)]
    pub inlet: InletProfile,
    #[serde(default)]
    pub parameter: ParameterMap,
}

impl Default for Physics {
    fn default() -> Self {
        Self { diffusion: 1.0, beta_y: 0.2, source: 0.0, inlet: InletProfile::Parabolic, parameter: ParameterMap::AxialVelocity }
    }
}

/// Lattice resolution shared by all meshes. The middle subdomain may use a
/// finer axial spacing `hx / omega2_refinement`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub hx: f64,
    pub ny: usize,
    #[serde(default = "one")]
    pub omega2_refinement: usize,
}

fn one() -> usize {
    1
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { hx: 0.1, ny: 50, omega2_refinement: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubdomainKind {
    Monolithic,
    Omega1,
    Omega2,
    Omega3,
}

impl SubdomainKind {
    /// Interfaces on which this subdomain receives Dirichlet data.
    pub fn dirichlet_interfaces(self) -> &'static [InterfaceId] {
        match self {
            SubdomainKind::Monolithic => &[],
            SubdomainKind::Omega1 => &[InterfaceId::Out1],
            SubdomainKind::Omega2 => &[InterfaceId::In2, InterfaceId::Out2],
            SubdomainKind::Omega3 => &[InterfaceId::In3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeProblem {
    pub geometry: PipeGeometry,
    pub physics: Physics,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub solver: SolveMethod,
}

impl PipeProblem {
    pub fn decomposition(&self) -> Result<Decomposition> {
        build_pipe_decomposition(&self.geometry)
    }

    pub fn coefficients(&self, parameter: f64) -> Result<ProblemCoefficients> {
        let p = &self.physics;
        if !parameter.is_finite() {
            return Err(Error::Parameter(format!("parameter {parameter} is not finite")));
        }
        let bx = match p.parameter {
            ParameterMap::AxialVelocity => parameter,
            ParameterMap::Peclet => {
                let speed = parameter * p.diffusion / self.geometry.width;
                let sq = speed * speed - p.beta_y * p.beta_y;
                if sq < 0.0 {
                    return Err(Error::Parameter(format!(
                        "Peclet number {parameter} is below the transverse contribution |beta_y| H / a"
                    )));
                }
                sq.sqrt()
            }
        };
        let mut c = ProblemCoefficients::advection_diffusion(p.diffusion, [bx, p.beta_y], self.geometry.width);
        c.source = p.source;
        c.validate()?;
        Ok(c)
    }

    pub fn rect(&self, kind: SubdomainKind) -> Result<Rectangle> {
        let d = self.decomposition()?;
        Ok(match kind {
            SubdomainKind::Monolithic => d.full_domain(),
            SubdomainKind::Omega1 => d.omega[0],
            SubdomainKind::Omega2 => d.omega[1],
            SubdomainKind::Omega3 => d.omega[2],
        })
    }

    pub fn build_mesh(&self, kind: SubdomainKind) -> Result<Mesh> {
        let rect = self.rect(kind)?;
        let mut hx = self.mesh.hx;
        if kind == SubdomainKind::Omega2 {
            if self.mesh.omega2_refinement == 0 {
                return Err(Error::Config("omega2_refinement must be at least 1".into()));
            }
            hx /= self.mesh.omega2_refinement as f64;
        }
        if !(hx > 0.0) {
            return Err(Error::Config(format!("mesh spacing hx must be positive, got {hx}")));
        }
        let cells = rect.width() / hx;
        let nx = cells.round();
        if (cells - nx).abs() > 1e-6 || nx < 1.0 {
            return Err(Error::Geometry(format!(
                "subdomain [{}, {}] is not a whole number of cells of width {hx}",
                rect.x0, rect.x1
            )));
        }
        let mesh = build_structured_mesh(rect, nx as usize, self.mesh.ny)?;
        Ok(match kind {
            SubdomainKind::Monolithic => mesh,
            SubdomainKind::Omega1 => mesh.retag(BoundaryTag::Inlet, BoundaryTag::InterfaceRight),
            SubdomainKind::Omega2 => mesh.retag(BoundaryTag::InterfaceLeft, BoundaryTag::InterfaceRight),
            SubdomainKind::Omega3 => mesh.retag(BoundaryTag::InterfaceLeft, BoundaryTag::Outlet),
        })
    }

    /// Assembled system with inlet and side values imposed.
    pub fn system(&self, mesh: &Mesh, coeffs: &ProblemCoefficients) -> Result<SparseSystem> {
        let mut sys = assemble_ard_system(mesh, coeffs, &[BoundaryTag::Outlet], &[])?;
        sys.apply_dirichlet_tag(mesh, BoundaryTag::Side, |_, _| 0.0)?;
        let width = self.geometry.width;
        let inlet = self.physics.inlet;
        sys.apply_dirichlet_tag(mesh, BoundaryTag::Inlet, |_, y| inlet.eval(y, width))?;
        Ok(sys)
    }
}

/// A subdomain mesh with its factorized operator, norms and interface lines.
#[derive(Debug, Clone)]
pub struct Subdomain {
    pub kind: SubdomainKind,
    pub mesh: Mesh,
    pub solver: DirichletSolver,
    pub norms: NormOperator,
    traces: Vec<(InterfaceId, TraceIndex)>,
}

impl Subdomain {
    pub fn new(problem: &PipeProblem, kind: SubdomainKind, coeffs: &ProblemCoefficients) -> Result<Self> {
        let mesh = problem.build_mesh(kind)?;
        let cell_pe = coeffs.cell_peclet(&mesh);
        if cell_pe > 1.0 {
            log::warn!("{kind:?}: cell Peclet number {cell_pe:.3} exceeds 1; the Galerkin solution may oscillate");
        }
        let decomposition = problem.decomposition()?;
        let rect = mesh.rect();
        let mut traces = Vec::new();
        for id in InterfaceId::ALL {
            let x = decomposition.interface_x(id);
            if x >= rect.x0 - 1e-12 && x <= rect.x1 + 1e-12 {
                traces.push((id, extract_interface_nodes(&mesh, x)?));
            }
        }
        let system = problem.system(&mesh, coeffs)?;
        let mut interface_nodes = Vec::new();
        for id in kind.dirichlet_interfaces() {
            let t = traces.iter().find(|(i, _)| i == id).map(|(_, t)| t).expect("interface inside subdomain");
            interface_nodes.extend_from_slice(&t.nodes);
        }
        let solver = DirichletSolver::new(&system, &interface_nodes, kind == SubdomainKind::Omega2)?;
        let norms = NormOperator::new(&mesh);
        Ok(Self { kind, mesh, solver, norms, traces })
    }

    pub fn trace(&self, id: InterfaceId) -> &TraceIndex {
        self.traces
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, t)| t)
            .unwrap_or_else(|| panic!("{id} is not inside {:?}", self.kind))
    }

    pub fn has_trace(&self, id: InterfaceId) -> bool {
        self.traces.iter().any(|(i, _)| *i == id)
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }
}

/// Solution on the undecomposed domain.
#[derive(Debug, Clone)]
pub struct MonolithicSolution {
    pub mesh: Mesh,
    pub field: Vec<f64>,
    pub norms: NormOperator,
}

impl MonolithicSolution {
    /// Values of the reference at the nodes of `mesh`, which must share the
    /// row spacing and lie on the reference lattice or its horizontal edges.
    pub fn restrict_to(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        restrict_field(&self.mesh, &self.field, mesh)
    }

    pub fn trace(&self, x: f64) -> Result<Vec<f64>> {
        let t = extract_interface_nodes(&self.mesh, x)?;
        Ok(t.restrict(&self.field))
    }
}

pub fn solve_monolithic(problem: &PipeProblem, coeffs: &ProblemCoefficients) -> Result<MonolithicSolution> {
    let mesh = problem.build_mesh(SubdomainKind::Monolithic)?;
    let system = problem.system(&mesh, coeffs)?;
    let field = solve_linear(&system, problem.solver, 1e-10)?;
    let norms = NormOperator::new(&mesh);
    Ok(MonolithicSolution { mesh, field, norms })
}

/// Evaluates the P1 field `(source, values)` at the nodes of `target`.
/// Nodes must sit on source node rows; along a row the P1 field is linear
/// between columns.
pub fn restrict_field(source: &Mesh, values: &[f64], target: &Mesh) -> Result<Vec<f64>> {
    if source.ny() != target.ny() || (source.hy() - target.hy()).abs() > 1e-12 * source.hy() {
        return Err(Error::Geometry("meshes do not share node rows".into()));
    }
    let src = source.rect();
    let hx = source.hx();
    let mut out = Vec::with_capacity(target.node_count());
    for (n, p) in target.nodes().iter().enumerate() {
        let j = n % (target.ny() + 1);
        let s = (p[0] - src.x0) / hx;
        let nearest = s.round();
        if (s - nearest).abs() < 1e-8 && nearest >= 0.0 && nearest <= source.nx() as f64 {
            out.push(values[source.node_index(nearest as usize, j)]);
            continue;
        }
        if s < 0.0 || s > source.nx() as f64 {
            return Err(Error::Geometry(format!("x = {} is outside the source mesh", p[0])));
        }
        let i = s.floor() as usize;
        let t = s - i as f64;
        let a = values[source.node_index(i, j)];
        let b = values[source.node_index(i + 1, j)];
        out.push((1.0 - t) * a + t * b);
    }
    Ok(out)
}
