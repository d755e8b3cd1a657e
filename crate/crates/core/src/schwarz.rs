//! Alternating Schwarz on the three overlapping subdomains, contraction
//! estimates and the perturbed-transmission variant.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{NormKind, ProblemCoefficients};
use crate::geometry::InterfaceId;
use crate::problem::{solve_monolithic, MonolithicSolution, PipeProblem, Subdomain, SubdomainKind};

/// Error-form gaps below this are dominated by underflow in the squared norms.
const ERROR_FORM_FLOOR: f64 = 1e-140;

/// Starting field on every subdomain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum InitRule {
    Zero,
    Constant { value: f64 },
    ScaledReference { factor: f64 },
}

impl Default for InitRule {
    fn default() -> Self {
        InitRule::ScaledReference { factor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchwarzOptions {
    pub init: InitRule,
    pub tol: f64,
    pub max_sweeps: usize,
    pub norm: NormKind,
}

impl Default for SchwarzOptions {
    fn default() -> Self {
        Self { init: InitRule::default(), tol: 1e-6, max_sweeps: 50, norm: NormKind::H1 }
    }
}

/// One row of the per-iteration report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub e_l2: f64,
    pub e_h1: f64,
    /// `e(k-1) / e(k)` in the selected norm, when both exceed the cutoff.
    pub ratio: Option<f64>,
    pub relerr: [Option<f64>; 3],
    pub mu: f64,
}

impl SweepRecord {
    pub fn error(&self, norm: NormKind) -> f64 {
        match norm {
            NormKind::L2 => self.e_l2,
            NormKind::H1 => self.e_h1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchwarzReport {
    pub parameter: f64,
    pub mu: f64,
    pub norm: NormKind,
    pub records: Vec<SweepRecord>,
    pub converged: bool,
    /// Final fields on the three subdomain meshes.
    pub fields: [Vec<f64>; 3],
    /// Traces of the middle iterate, ordered as [`InterfaceId::ALL`], per sweep.
    pub omega2_traces: Vec<[Vec<f64>; 4]>,
    /// Errors at or below this level carry no ratio information.
    pub cutoff: f64,
}

impl SchwarzReport {
    pub fn sweeps(&self) -> usize {
        self.records.len()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error(self.norm)).collect()
    }

    pub fn final_relerr(&self) -> [Option<f64>; 3] {
        self.records.last().map(|r| r.relerr).unwrap_or([None; 3])
    }

    /// Columns: sweep, e_L2, e_H1, ratio, relerr_omega1..3, mu.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_sweep_csv(w, &self.records)
    }
}

pub fn write_sweep_csv<W: Write>(w: W, records: &[SweepRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["sweep", "e_L2", "e_H1", "ratio", "relerr_omega1", "relerr_omega2", "relerr_omega3", "mu"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in records {
        csv.write_record([
            r.sweep.to_string(),
            format!("{:e}", r.e_l2),
            format!("{:e}", r.e_h1),
            opt(r.ratio),
            opt(r.relerr[0]),
            opt(r.relerr[1]),
            opt(r.relerr[2]),
            format!("{:e}", r.mu),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Subdomain operators, the monolithic reference and its restrictions for
/// one parameter value.
#[derive(Debug, Clone)]
pub struct FullOrderModel {
    pub parameter: f64,
    pub coefficients: ProblemCoefficients,
    pub omega: [Subdomain; 3],
    pub reference: MonolithicSolution,
    reference_on: [Vec<f64>; 3],
    reference_norm: [f64; 3],
}

enum Mode<'a> {
    Normal,
    /// Homogeneous data started from `init - reference`.
    ErrorForm,
    Perturbed(f64, &'a mut ChaCha8Rng),
}

impl FullOrderModel {
    pub fn new(problem: &PipeProblem, parameter: f64) -> Result<Self> {
        let coefficients = problem.coefficients(parameter)?;
        let omega = [
            Subdomain::new(problem, SubdomainKind::Omega1, &coefficients)?,
            Subdomain::new(problem, SubdomainKind::Omega2, &coefficients)?,
            Subdomain::new(problem, SubdomainKind::Omega3, &coefficients)?,
        ];
        let reference = solve_monolithic(problem, &coefficients)?;
        let reference_on = [
            reference.restrict_to(&omega[0].mesh)?,
            reference.restrict_to(&omega[1].mesh)?,
            reference.restrict_to(&omega[2].mesh)?,
        ];
        let mut reference_norm = [0.0; 3];
        for i in 0..3 {
            reference_norm[i] = omega[i].norms.norm(&reference_on[i], NormKind::L2)?;
        }
        Ok(Self { parameter, coefficients, omega, reference, reference_on, reference_norm })
    }

    pub fn reference_on(&self, i: usize) -> &[f64] {
        &self.reference_on[i]
    }

    /// Relative L2 error of `field` against the reference on subdomain `i`.
    pub fn relative_error(&self, i: usize, field: &[f64]) -> Result<f64> {
        if self.reference_norm[i] == 0.0 {
            return Err(Error::UndefinedError(format!("reference vanishes on subdomain {}", i + 1)));
        }
        Ok(self.omega[i].norms.distance(field, &self.reference_on[i], NormKind::L2)? / self.reference_norm[i])
    }

    fn init_fields(&self, init: InitRule) -> [Vec<f64>; 3] {
        std::array::from_fn(|i| {
            let n = self.omega[i].node_count();
            match init {
                InitRule::Zero => vec![0.0; n],
                InitRule::Constant { value } => vec![value; n],
                InitRule::ScaledReference { factor } => self.reference_on[i].iter().map(|v| factor * v).collect(),
            }
        })
    }

    pub fn run(&self, opts: &SchwarzOptions) -> Result<SchwarzReport> {
        self.drive(opts, Mode::Normal)
    }

    /// Same sweeps on the error `u_i - u` with homogeneous data. Gaps then
    /// decay without a round-off floor, which keeps contraction estimates
    /// meaningful when the iteration converges in very few sweeps.
    pub fn run_error_form(&self, opts: &SchwarzOptions) -> Result<SchwarzReport> {
        self.drive(opts, Mode::ErrorForm)
    }

    /// Every transmitted trace is multiplied nodally by `1 + mu r`,
    /// `r ~ U[-1, 1]`, drawn from a generator seeded with `seed`.
    pub fn run_perturbed(&self, opts: &SchwarzOptions, mu: f64, seed: u64) -> Result<SchwarzReport> {
        if !(mu >= 0.0) {
            return Err(Error::Parameter(format!("perturbation magnitude must be nonnegative, got {mu}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.drive(opts, Mode::Perturbed(mu, &mut rng))
    }

    fn drive(&self, opts: &SchwarzOptions, mut mode: Mode<'_>) -> Result<SchwarzReport> {
        if !(opts.tol >= 0.0) {
            return Err(Error::Parameter("tolerance must be nonnegative".into()));
        }
        let [s1, s2, s3] = &self.omega;
        let homogeneous = matches!(mode, Mode::ErrorForm);
        let mu = match mode {
            Mode::Perturbed(mu, _) => mu,
            _ => 0.0,
        };
        let mut u = self.init_fields(opts.init);
        if homogeneous {
            for (i, ui) in u.iter_mut().enumerate() {
                for (v, r) in ui.iter_mut().zip(&self.reference_on[i]) {
                    *v -= r;
                }
            }
        }
        let mut perturb = |values: Vec<f64>| -> Vec<f64> {
            match &mut mode {
                Mode::Perturbed(mu, rng) if *mu > 0.0 => {
                    values.into_iter().map(|v| v * (1.0 + *mu * rng.random_range(-1.0..=1.0))).collect()
                }
                _ => values,
            }
        };

        let mut records = Vec::new();
        let mut omega2_traces = Vec::new();
        let mut converged = false;
        let mut prev_error: Option<f64> = None;
        let mut cutoff = 0.0;
        for sweep in 1..=opts.max_sweeps {
            let t1 = perturb(s2.trace(InterfaceId::Out1).restrict(&u[1]));
            let t3 = perturb(s2.trace(InterfaceId::In3).restrict(&u[1]));
            let u1 = s1.solver.solve(&[(s1.trace(InterfaceId::Out1), &t1)], homogeneous)?;
            let u3 = s3.solver.solve(&[(s3.trace(InterfaceId::In3), &t3)], homogeneous)?;
            let t2in = perturb(s1.trace(InterfaceId::In2).restrict(&u1));
            let t2out = perturb(s3.trace(InterfaceId::Out2).restrict(&u3));
            let u2 = s2.solver.solve(
                &[(s2.trace(InterfaceId::In2), &t2in), (s2.trace(InterfaceId::Out2), &t2out)],
                homogeneous,
            )?;
            let new = [u1, u2, u3];
            let (mut e_l2, mut e_h1, mut size) = (0.0, 0.0, 0.0);
            for i in 0..3 {
                e_l2 += self.omega[i].norms.distance(&new[i], &u[i], NormKind::L2)?;
                e_h1 += self.omega[i].norms.distance(&new[i], &u[i], NormKind::H1)?;
                size += self.omega[i].norms.norm(&new[i], opts.norm)?;
            }
            let relerr = if homogeneous {
                [None; 3]
            } else {
                std::array::from_fn(|i| self.relative_error(i, &new[i]).ok())
            };
            cutoff = if homogeneous { ERROR_FORM_FLOOR } else { 10.0 * f64::EPSILON * size };
            let err = match opts.norm {
                NormKind::L2 => e_l2,
                NormKind::H1 => e_h1,
            };
            let ratio = match prev_error {
                Some(p) if p > cutoff && err > cutoff => Some(p / err),
                _ => None,
            };
            omega2_traces.push(InterfaceId::ALL.map(|id| s2.trace(id).restrict(&new[1])));
            records.push(SweepRecord { sweep, e_l2, e_h1, ratio, relerr, mu });
            u = new;
            prev_error = Some(err);
            if err < opts.tol || (homogeneous && err <= cutoff) {
                converged = err < opts.tol;
                break;
            }
        }
        if !converged {
            log::warn!(
                "Schwarz at parameter {} stopped after {} sweeps without reaching {:e}",
                self.parameter,
                records.len(),
                opts.tol
            );
        }
        Ok(SchwarzReport {
            parameter: self.parameter,
            mu,
            norm: opts.norm,
            records,
            converged,
            fields: u,
            omega2_traces,
            cutoff,
        })
    }
}

/// Fitted contraction `rho_fit` (geometric mean of `e(k+1)/e(k)`) with the
/// per-step ratios `e(k)/e(k+1)` it was fitted from.
#[derive(Debug, Clone, PartialEq)]
pub struct Contraction {
    pub rho_fit: f64,
    pub ratios: Vec<f64>,
}

/// Fits over the errors above `cutoff`, ignoring the first `skip` of them.
pub fn fit_contraction(errors: &[f64], cutoff: f64, skip: usize) -> Result<Contraction> {
    let valid: Vec<f64> = errors.iter().copied().take_while(|e| *e > cutoff).skip(skip).collect();
    if valid.len() < 3 {
        return Err(Error::Estimation(format!(
            "need at least 3 errors above {cutoff:e}, found {}",
            valid.len()
        )));
    }
    let ratios: Vec<f64> = valid.windows(2).map(|w| w[0] / w[1]).collect();
    let log_mean = valid.windows(2).map(|w| (w[1] / w[0]).ln()).sum::<f64>() / ratios.len() as f64;
    Ok(Contraction { rho_fit: log_mean.exp(), ratios })
}

pub fn estimate_contraction(report: &SchwarzReport) -> Result<Contraction> {
    fit_contraction(&report.errors(), report.cutoff, 0)
}

/// Median of the errors over the second half of the run.
pub fn plateau_level(report: &SchwarzReport) -> Result<f64> {
    let e = report.errors();
    if e.len() < 2 {
        return Err(Error::Estimation("too few sweeps for a plateau".into()));
    }
    let mut tail: Vec<f64> = e[e.len() / 2..].to_vec();
    tail.sort_by(f64::total_cmp);
    let m = tail.len();
    Ok(if m % 2 == 1 { tail[m / 2] } else { 0.5 * (tail[m / 2 - 1] + tail[m / 2]) })
}
