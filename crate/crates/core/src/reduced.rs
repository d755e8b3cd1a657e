//! Online alternating iteration on the outer subdomains only, with the
//! middle subdomain replaced by a trace map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{omega2_solve_count, trace_dot, NormKind};
use crate::geometry::InterfaceId;
use crate::problem::{solve_monolithic, PipeProblem, Subdomain, SubdomainKind};
use crate::rom::RomArtifact;
use crate::schwarz::{InitRule, SchwarzOptions, SchwarzReport, SweepRecord};

/// `(trace on 2in, trace on 2out) -> (trace on 1out, trace on 3in)` at a fixed parameter.
pub trait TraceMap {
    fn map(&self, in2: &[f64], out2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    fn extrapolated(&self) -> bool {
        false
    }
}

pub struct RomTraceMap<'a> {
    pub rom: &'a RomArtifact,
    pub parameter: f64,
}

impl TraceMap for RomTraceMap<'_> {
    fn map(&self, in2: &[f64], out2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.rom.evaluate(in2, out2, self.parameter)
    }

    fn extrapolated(&self) -> bool {
        self.rom.is_extrapolated(self.parameter)
    }
}

/// Exact trace map by a middle-subdomain solve. Test and offline use only.
pub struct ExactTauOracle {
    pub parameter: f64,
    pub omega2: Subdomain,
}

impl ExactTauOracle {
    pub fn new(problem: &PipeProblem, parameter: f64) -> Result<Self> {
        let coeffs = problem.coefficients(parameter)?;
        Ok(Self { parameter, omega2: Subdomain::new(problem, SubdomainKind::Omega2, &coeffs)? })
    }
}

impl TraceMap for ExactTauOracle {
    fn map(&self, in2: &[f64], out2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &self.omega2;
        let u2 = s.solver.solve(&[(s.trace(InterfaceId::In2), in2), (s.trace(InterfaceId::Out2), out2)], false)?;
        Ok((s.trace(InterfaceId::Out1).restrict(&u2), s.trace(InterfaceId::In3).restrict(&u2)))
    }
}

/// Outer subdomain operators and the monolithic reference restricted to them.
pub struct ReducedSetup {
    pub parameter: f64,
    pub omega1: Subdomain,
    pub omega3: Subdomain,
    pub reference: [Vec<f64>; 2],
    reference_norm: [f64; 2],
}

impl ReducedSetup {
    pub fn new(problem: &PipeProblem, parameter: f64) -> Result<Self> {
        let coeffs = problem.coefficients(parameter)?;
        let omega1 = Subdomain::new(problem, SubdomainKind::Omega1, &coeffs)?;
        let omega3 = Subdomain::new(problem, SubdomainKind::Omega3, &coeffs)?;
        let mono = solve_monolithic(problem, &coeffs)?;
        let reference = [mono.restrict_to(&omega1.mesh)?, mono.restrict_to(&omega3.mesh)?];
        let reference_norm = [
            omega1.norms.norm(&reference[0], NormKind::L2)?,
            omega3.norms.norm(&reference[1], NormKind::L2)?,
        ];
        Ok(Self { parameter, omega1, omega3, reference, reference_norm })
    }

    /// Relative L2 errors of `(u1, u3)` against the reference.
    pub fn relative_errors(&self, u1: &[f64], u3: &[f64]) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        for (i, (s, u)) in [(&self.omega1, u1), (&self.omega3, u3)].into_iter().enumerate() {
            if self.reference_norm[i] == 0.0 {
                return Err(Error::UndefinedError(format!("reference vanishes on the {} subdomain", ["first", "third"][i])));
            }
            out[i] = s.norms.distance(u, &self.reference[i], NormKind::L2)? / self.reference_norm[i];
        }
        Ok(out)
    }

    fn initial_traces(&self, init: InitRule) -> (Vec<f64>, Vec<f64>) {
        let t1 = self.omega1.trace(InterfaceId::Out1);
        let t3 = self.omega3.trace(InterfaceId::In3);
        match init {
            InitRule::Zero => (vec![0.0; t1.len()], vec![0.0; t3.len()]),
            InitRule::Constant { value } => (vec![value; t1.len()], vec![value; t3.len()]),
            InitRule::ScaledReference { factor } => (
                t1.restrict(&self.reference[0]).iter().map(|v| factor * v).collect(),
                t3.restrict(&self.reference[1]).iter().map(|v| factor * v).collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedSummary {
    #[serde(rename = "Pe")]
    pub parameter: f64,
    pub sweeps: usize,
    #[serde(rename = "relL2_omega1")]
    pub rel_l2_omega1: f64,
    #[serde(rename = "relL2_omega3")]
    pub rel_l2_omega3: f64,
    pub extrapolated: bool,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ReducedReport {
    /// Fields are `[u1, empty, u3]`; the middle iterate is never formed.
    pub report: SchwarzReport,
    pub summary: ReducedSummary,
    pub omega2_solves: usize,
}

/// `u^0` solves the outer problems with the initial interface data; each
/// sweep sends `(u1^k on 2in, u3^k on 2out)` through `map` and re-solves.
/// Stops when the summed H1 gap of the outer fields drops below `opts.tol`.
pub fn run_reduced_schwarz(setup: &ReducedSetup, map: &dyn TraceMap, opts: &SchwarzOptions) -> Result<ReducedReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter("the stopping threshold must be positive".into()));
    }
    let before = omega2_solve_count();
    let (s1, s3) = (&setup.omega1, &setup.omega3);
    let (t1, t3) = setup.initial_traces(opts.init);
    let mut u1 = s1.solver.solve(&[(s1.trace(InterfaceId::Out1), &t1)], false)?;
    let mut u3 = s3.solver.solve(&[(s3.trace(InterfaceId::In3), &t3)], false)?;
    let mut records = Vec::new();
    let mut converged = false;
    let mut prev: Option<f64> = None;
    let mut cutoff = 0.0;
    for sweep in 1..=opts.max_sweeps {
        let in2 = s1.trace(InterfaceId::In2).restrict(&u1);
        let out2 = s3.trace(InterfaceId::Out2).restrict(&u3);
        let (t1, t3) = map.map(&in2, &out2)?;
        let n1 = s1.solver.solve(&[(s1.trace(InterfaceId::Out1), &t1)], false)?;
        let n3 = s3.solver.solve(&[(s3.trace(InterfaceId::In3), &t3)], false)?;
        let e_l2 = s1.norms.distance(&n1, &u1, NormKind::L2)? + s3.norms.distance(&n3, &u3, NormKind::L2)?;
        let e_h1 = s1.norms.distance(&n1, &u1, NormKind::H1)? + s3.norms.distance(&n3, &u3, NormKind::H1)?;
        let size = s1.norms.norm(&n1, opts.norm)? + s3.norms.norm(&n3, opts.norm)?;
        cutoff = 10.0 * f64::EPSILON * size;
        let err = match opts.norm {
            NormKind::L2 => e_l2,
            NormKind::H1 => e_h1,
        };
        let ratio = match prev {
            Some(p) if p > cutoff && err > cutoff => Some(p / err),
            _ => None,
        };
        let [r1, r3] = setup.relative_errors(&n1, &n3)?;
        records.push(SweepRecord { sweep, e_l2, e_h1, ratio, relerr: [Some(r1), None, Some(r3)], mu: 0.0 });
        u1 = n1;
        u3 = n3;
        prev = Some(err);
        if err < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "reduced Schwarz at parameter {} stopped after {} sweeps without reaching {:e}",
            setup.parameter,
            records.len(),
            opts.tol
        );
    }
    let [rel1, rel3] = setup.relative_errors(&u1, &u3)?;
    let summary = ReducedSummary {
        parameter: setup.parameter,
        sweeps: records.len(),
        rel_l2_omega1: rel1,
        rel_l2_omega3: rel3,
        extrapolated: map.extrapolated(),
        converged,
    };
    let report = SchwarzReport {
        parameter: setup.parameter,
        mu: 0.0,
        norm: opts.norm,
        records,
        converged,
        fields: [u1, Vec::new(), u3],
        omega2_traces: Vec::new(),
        cutoff,
    };
    Ok(ReducedReport { report, summary, omega2_solves: omega2_solve_count() - before })
}

pub fn write_summary_csv<W: std::io::Write>(w: W, rows: &[ReducedSummary]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["Pe", "sweeps", "relL2_omega1", "relL2_omega3", "extrapolated", "converged"])?;
    for r in rows {
        csv.write_record([
            format!("{}", r.parameter),
            r.sweeps.to_string(),
            format!("{:e}", r.rel_l2_omega1),
            format!("{:e}", r.rel_l2_omega3),
            r.extrapolated.to_string(),
            r.converged.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Largest relative discrepancy between the reduced and the exact trace
/// maps over `samples` points drawn uniformly from the coefficient box of
/// the artifact, measured in the basis inner product on each output interface.
pub fn estimate_trace_error(rom: &RomArtifact, oracle: &ExactTauOracle, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = &rom.training.bounds;
    let l_in = rom.basis(InterfaceId::In2).dim();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let alpha: Vec<f64> =
            bounds.iter().map(|b| if b[1] > b[0] { rng.random_range(b[0]..=b[1]) } else { b[0] }).collect();
        let in2 = rom.basis(InterfaceId::In2).reconstruct(&alpha[..l_in])?;
        let out2 = rom.basis(InterfaceId::Out2).reconstruct(&alpha[l_in..])?;
        let exact = oracle.map(&in2, &out2)?;
        let approx = rom.evaluate(&in2, &out2, oracle.parameter)?;
        for (id, e, a) in [(InterfaceId::Out1, &exact.0, &approx.0), (InterfaceId::In3, &exact.1, &approx.1)] {
            let b = rom.basis(id);
            let diff: Vec<f64> = e.iter().zip(a).map(|(x, y)| x - y).collect();
            let num = trace_dot(&diff, &diff, b.spacing, b.kind)?.sqrt();
            let den = trace_dot(e, e, b.spacing, b.kind)?.sqrt();
            if den > 0.0 {
                worst = worst.max(num / den);
            }
        }
    }
    Ok(worst)
}
