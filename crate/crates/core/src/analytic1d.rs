//! Closed-form 1D advection-diffusion: exact solution, exact trace map and a
//! three-subdomain Schwarz iteration on interface scalars.
//!
//! For the rate table the Peclet number is taken as `beta / (2 eps)`, so a
//! run at `pe` uses `eps = 1`, `beta = 2 pe`. With that scaling the per-sweep
//! contraction of the three-domain iteration is close to `exp(2 delta pe)`.

use std::cell::Cell;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `-eps u'' + beta u' = f` on `(left, right)` with `u(left) = gamma`,
/// `u(right) = mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params1D {
    pub eps: f64,
    pub beta: f64,
    pub source: f64,
    pub left: f64,
    pub right: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl Params1D {
    pub fn new(eps: f64, beta: f64, source: f64, left: f64, right: f64, gamma: f64, mu: f64) -> Self {
        Self { eps, beta, source, left, right, gamma, mu }
    }

    /// `eps = 1`, `beta = 2 pe` on `(0, 1)` with zero data.
    pub fn for_peclet(pe: f64) -> Self {
        Self::new(1.0, 2.0 * pe, 0.0, 0.0, 1.0, 0.0, 0.0)
    }

    pub fn peclet(&self) -> f64 {
        self.beta.abs() / (2.0 * self.eps)
    }

    fn on(&self, left: f64, right: f64, gamma: f64, mu: f64) -> Self {
        Self { left, right, gamma, mu, ..*self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.beta == 0.0 || !self.beta.is_finite() {
            return Err(Error::Parameter("beta must be finite and nonzero".into()));
        }
        if !(self.left < self.right) {
            return Err(Error::Parameter(format!("interval ({}, {}) is empty", self.left, self.right)));
        }
        Ok(())
    }
}

/// `expm1(s (x - k)) / expm1(s (l - k))` without overflow.
fn boundary_layer(s: f64, x: f64, k: f64, l: f64) -> f64 {
    let total = s * (l - k);
    if total > 40.0 {
        (s * (x - l)).exp() * (-(-s * (x - k)).exp_m1()) / (-(-total).exp_m1())
    } else {
        (s * (x - k)).exp_m1() / total.exp_m1()
    }
}

pub fn exact_solution_1d(x: f64, p: &Params1D) -> Result<f64> {
    p.validate()?;
    if x < p.left - 1e-12 || x > p.right + 1e-12 {
        return Err(Error::Parameter(format!("x = {x} outside ({}, {})", p.left, p.right)));
    }
    let s = p.beta / p.eps;
    let span = p.right - p.left;
    let d = (p.beta * (p.mu - p.gamma) - p.source * span) / p.beta;
    Ok(p.gamma + p.source / p.beta * (x - p.left) + d * boundary_layer(s, x, p.left, p.right))
}

/// Solution on `(left, right)` with `u(left) = gamma` and `eps u'(right) = 0`.
pub fn outlet_solution_1d(x: f64, p: &Params1D) -> Result<f64> {
    p.validate()?;
    let s = p.beta / p.eps;
    let c = -p.source * p.eps / (p.beta * p.beta);
    // c * (exp(s(x-right)) - exp(-s(right-left)))
    let layer = c * ((s * (x - p.right)).exp() - (-s * (p.right - p.left)).exp());
    Ok(p.gamma + p.source / p.beta * (x - p.left) + layer)
}

thread_local! {
    static TRACE_MAP_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Calls of [`exact_trace_map_1d`] on this thread.
pub fn trace_map_calls() -> usize {
    TRACE_MAP_CALLS.with(Cell::get)
}

/// Values at `cuts[1]` and `cuts[2]` of the solution on `(cuts[0], cuts[3])`
/// with end values `gamma`, `mu`.
pub fn exact_trace_map_1d(gamma: f64, mu: f64, cuts: [f64; 4], p: &Params1D) -> Result<(f64, f64)> {
    let [l1, l2, l3, l4] = cuts;
    if !(l1 < l2 && l2 <= l3 && l3 < l4) {
        return Err(Error::Parameter(format!("cuts must satisfy L1 < L2 <= L3 < L4, got {cuts:?}")));
    }
    TRACE_MAP_CALLS.with(|c| c.set(c.get() + 1));
    let q = p.on(l1, l4, gamma, mu);
    Ok((exact_solution_1d(l2, &q)?, exact_solution_1d(l3, &q)?))
}

/// Geometry and data of a 1D three-subdomain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schwarz1DSetup {
    pub params: Params1D,
    /// Value at `x = 0`; the right end `length` is natural.
    pub inlet: f64,
    pub cuts: [f64; 4],
    pub length: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub use_exact_tau: bool,
}

impl Schwarz1DSetup {
    /// Overlaps `delta` at both ends, unit gaps elsewhere and a short first
    /// cut so that the inlet-side subdomain is almost entirely overlap.
    pub fn for_rate_table(pe: f64, delta: f64) -> Self {
        let l1 = 0.02;
        let l2 = l1 + delta;
        let l3 = l2 + 1.0;
        let l4 = l3 + delta;
        Self {
            params: Params1D::for_peclet(pe),
            inlet: 1.0,
            cuts: [l1, l2, l3, l4],
            length: l4 + 1.0,
            tol: 1e-250,
            max_sweeps: 40,
            use_exact_tau: false,
        }
    }

    pub fn overlap(&self) -> f64 {
        self.cuts[1] - self.cuts[0]
    }
}

/// Interface values `(u1(L1), u2(L2), u2(L3), u3(L4))` per sweep and the
/// gaps between consecutive sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport1D {
    pub pe: f64,
    pub delta: f64,
    pub iterates: Vec<[f64; 4]>,
    /// `e(k)`: sum of absolute changes of the four interface values.
    pub errors: Vec<f64>,
    /// `e(k) / e(k+1)`.
    pub ratios: Vec<f64>,
    pub log_ratio_over_2delta: Vec<f64>,
    /// Middle-interval solves that did not go through the trace map.
    pub omega2_evaluations: usize,
    pub converged: bool,
    pub diverged: bool,
}

struct Sweeper<'a> {
    setup: &'a Schwarz1DSetup,
    omega2_evaluations: usize,
}

impl Sweeper<'_> {
    /// One sweep from the middle traces `(b, c)`; returns all four values.
    fn sweep(&mut self, b: f64, c: f64, homogeneous: bool) -> Result<[f64; 4]> {
        let s = self.setup;
        let [l1, l2, l3, l4] = s.cuts;
        let mut p = s.params;
        if homogeneous {
            p.source = 0.0;
        }
        let inlet = if homogeneous { 0.0 } else { s.inlet };
        let a = exact_solution_1d(l1, &p.on(0.0, l2, inlet, b))?;
        let d = outlet_solution_1d(l4, &p.on(l3, s.length, c, 0.0))?;
        let (b2, c2) = if s.use_exact_tau {
            exact_trace_map_1d(a, d, s.cuts, &p)?
        } else {
            self.omega2_evaluations += 1;
            let q = p.on(l1, l4, a, d);
            (exact_solution_1d(l2, &q)?, exact_solution_1d(l3, &q)?)
        };
        Ok([a, b2, c2, d])
    }
}

/// Alternating Schwarz from `u2 = 0`. Gaps are propagated through the
/// homogeneous sweep so they stay exact far below round-off of the iterates.
pub fn run_schwarz_1d(setup: &Schwarz1DSetup) -> Result<RateReport1D> {
    let [l1, l2, l3, l4] = setup.cuts;
    if !(0.0 < l1 && l1 < l2 && l2 < l3 && l3 < l4 && l4 < setup.length) {
        return Err(Error::Parameter(format!("cuts {:?} not ordered inside (0, {})", setup.cuts, setup.length)));
    }
    if ((l2 - l1) - (l4 - l3)).abs() > 1e-12 * (l2 - l1) {
        return Err(Error::Parameter("both overlaps must have the same length".into()));
    }
    setup.params.validate()?;
    let mut sw = Sweeper { setup, omega2_evaluations: 0 };
    let mut iterates = vec![sw.sweep(0.0, 0.0, false)?];
    let mut errors = Vec::new();
    let mut gap: Option<[f64; 4]> = None;
    let mut converged = false;
    for _ in 1..setup.max_sweeps {
        let last = *iterates.last().unwrap();
        let next = sw.sweep(last[1], last[2], false)?;
        let g = match gap {
            None => std::array::from_fn(|i| next[i] - last[i]),
            Some(g) => sw.sweep(g[1], g[2], true)?,
        };
        iterates.push(next);
        let e: f64 = g.iter().map(|v| v.abs()).sum();
        errors.push(e);
        gap = Some(g);
        if !e.is_finite() {
            break;
        }
        if e < setup.tol {
            converged = true;
            break;
        }
    }
    let ratios: Vec<f64> = errors.windows(2).filter(|w| w[1] > 0.0).map(|w| w[0] / w[1]).collect();
    let delta = setup.overlap();
    let log_ratio_over_2delta = ratios.iter().map(|r| r.ln() / (2.0 * delta)).collect();
    let tail = &ratios[ratios.len().min(2)..];
    let diverged = !tail.is_empty() && tail.iter().all(|r| *r < 1.0);
    Ok(RateReport1D {
        pe: setup.params.peclet(),
        delta,
        iterates,
        errors,
        ratios,
        log_ratio_over_2delta,
        omega2_evaluations: sw.omega2_evaluations,
        converged,
        diverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub pe: f64,
    pub delta: f64,
    pub rho: f64,
    pub log_rho_over_2delta: f64,
    pub rel_dev: f64,
}

/// Fitted per-sweep contraction `rho` (as `e(k)/e(k+1)`) for every
/// `(pe, delta)` pair, in list order. The first two ratios are transient
/// and left out of the fit.
pub fn reproduce_rate_table(pe_list: &[f64], delta_list: &[f64]) -> Result<Vec<RateRow>> {
    if pe_list.is_empty() || delta_list.is_empty() {
        return Err(Error::Parameter("Peclet and overlap lists must be nonempty".into()));
    }
    let mut rows = Vec::new();
    for &pe in pe_list {
        for &delta in delta_list {
            let report = run_schwarz_1d(&Schwarz1DSetup::for_rate_table(pe, delta))?;
            if report.diverged {
                return Err(Error::Estimation(format!("1D Schwarz diverged at Pe = {pe}, delta = {delta}")));
            }
            let fit = crate::schwarz::fit_contraction(&report.errors, 1e-250, 2)?;
            let rho = 1.0 / fit.rho_fit;
            let lr = rho.ln() / (2.0 * delta);
            rows.push(RateRow { pe, delta, rho, log_rho_over_2delta: lr, rel_dev: (lr - pe).abs() / pe });
        }
    }
    Ok(rows)
}

pub fn write_rate_table<W: Write>(w: W, rows: &[RateRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["Pe", "delta", "rho", "log_rho_over_2delta", "rel_dev"])?;
    for r in rows {
        csv.write_record([
            r.pe.to_string(),
            r.delta.to_string(),
            format!("{:e}", r.rho),
            format!("{:.6}", r.log_rho_over_2delta),
            format!("{:.6}", r.rel_dev),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Upwind-free central finite differences on a uniform grid.
    fn fd_solve(p: &Params1D, n: usize) -> Vec<f64> {
        let h = (p.right - p.left) / n as f64;
        let m = n - 1;
        let lo = -p.eps / (h * h) - p.beta / (2.0 * h);
        let di = 2.0 * p.eps / (h * h);
        let up = -p.eps / (h * h) + p.beta / (2.0 * h);
        let mut b = vec![p.source; m];
        b[0] -= lo * p.gamma;
        b[m - 1] -= up * p.mu;
        // Thomas algorithm
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        c[0] = up / di;
        d[0] = b[0] / di;
        for i in 1..m {
            let den = di - lo * c[i - 1];
            c[i] = up / den;
            d[i] = (b[i] - lo * d[i - 1]) / den;
        }
        let mut x = vec![0.0; m];
        x[m - 1] = d[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        let mut out = vec![p.gamma];
        out.extend(x);
        out.push(p.mu);
        out
    }

    #[test]
    fn zero_data_zero_solution() {
        let p = Params1D::new(1.0, 3.0, 0.0, 0.0, 2.0, 0.0, 0.0);
        for k in 0..=10 {
            assert_eq!(exact_solution_1d(0.2 * k as f64, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn end_values_are_interpolated() {
        for beta in [-40.0, -1.0, 0.5, 7.0, 300.0] {
            let p = Params1D::new(0.8, beta, 1.3, -1.0, 2.5, 0.3, -2.0);
            assert!((exact_solution_1d(-1.0, &p).unwrap() - 0.3).abs() < 1e-12);
            assert!((exact_solution_1d(2.5, &p).unwrap() + 2.0).abs() < 1e-12);
        }
        let p = Params1D::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        assert!(matches!(exact_solution_1d(0.5, &p), Err(Error::Parameter(_))));
    }

    #[test]
    fn midpoint_value_and_fd_cross_check() {
        let p = Params1D::new(1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let e = std::f64::consts::E;
        let v = exact_solution_1d(0.5, &p).unwrap();
        assert!((v - (0.5f64.exp() - 1.0) / (e - 1.0)).abs() < 1e-15);
        let n = 4000;
        let fd = fd_solve(&p, n);
        assert!((fd[n / 2] - v).abs() < 1e-8);
    }

    #[test]
    fn satisfies_the_ode() {
        let p = Params1D::new(0.7, 2.5, 1.5, 0.0, 3.0, 1.0, -0.5);
        let h = 1e-4;
        for k in 1..30 {
            let x = 0.1 * k as f64;
            let u = |t| exact_solution_1d(t, &p).unwrap();
            let d2 = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
            let d1 = (u(x + h) - u(x - h)) / (2.0 * h);
            assert!((-p.eps * d2 + p.beta * d1 - p.source).abs() < 1e-6 * (1.0 + u(x).abs()), "x = {x}");
        }
    }

    #[test]
    fn outlet_solution_has_zero_flux() {
        let p = Params1D::new(1.0, 3.0, 2.0, 1.0, 4.0, 0.7, 0.0);
        let h = 1e-6;
        let r = outlet_solution_1d(4.0, &p).unwrap();
        let l = outlet_solution_1d(4.0 - h, &p).unwrap();
        assert!(((r - l) / h).abs() < 1e-5);
        assert!((outlet_solution_1d(1.0, &p).unwrap() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn trace_map_is_affine_and_matches_fd() {
        let p = Params1D::new(1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let cuts = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(exact_trace_map_1d(0.0, 0.0, cuts, &p).unwrap(), (0.0, 0.0));
        let t1 = exact_trace_map_1d(1.0, -0.5, cuts, &p).unwrap();
        let t2 = exact_trace_map_1d(0.3, 2.0, cuts, &p).unwrap();
        let t = exact_trace_map_1d(2.0 * 1.0 - 3.0 * 0.3, 2.0 * -0.5 - 3.0 * 2.0, cuts, &p).unwrap();
        assert!((t.0 - (2.0 * t1.0 - 3.0 * t2.0)).abs() < 1e-12);
        assert!((t.1 - (2.0 * t1.1 - 3.0 * t2.1)).abs() < 1e-12);

        let (b, c) = exact_trace_map_1d(1.0, 2.0, cuts, &p).unwrap();
        let n = 3000;
        let fd = fd_solve(&Params1D::new(1.0, 1.0, 0.0, 1.0, 4.0, 1.0, 2.0), n);
        assert!((fd[n / 3] - b).abs() < 1e-6);
        assert!((fd[2 * n / 3] - c).abs() < 1e-6);
        assert!(exact_trace_map_1d(1.0, 2.0, [1.0, 3.0, 2.0, 4.0], &p).is_err());
    }

    #[test]
    fn exact_tau_mode_reproduces_iterates() {
        let mut s = Schwarz1DSetup::for_rate_table(2.0, 1.0);
        let plain = run_schwarz_1d(&s).unwrap();
        s.use_exact_tau = true;
        let before = trace_map_calls();
        let tau = run_schwarz_1d(&s).unwrap();
        assert!(trace_map_calls() > before);
        assert_eq!(tau.omega2_evaluations, 0);
        assert!(plain.omega2_evaluations > 0);
        assert_eq!(plain.iterates.len(), tau.iterates.len());
        for (a, b) in plain.iterates.iter().zip(&tau.iterates) {
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ratios_settle_after_transient() {
        for (pe, delta) in [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)] {
            let r = run_schwarz_1d(&Schwarz1DSetup::for_rate_table(pe, delta)).unwrap();
            let tail = &r.ratios[2..];
            assert!(tail.len() >= 3);
            let (lo, hi) = tail.iter().fold((f64::MAX, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
            assert!(hi / lo < 1.05, "Pe {pe} delta {delta}: {tail:?}");
        }
    }

    #[test]
    fn single_cell_table() {
        let rows = reproduce_rate_table(&[2.0], &[2.0]).unwrap();
        assert_eq!(rows.len(), 1);
        // reference value 2.1407e3; the table law gives exp(8) = 2981
        assert!(rows[0].rho > 1.5e3 && rows[0].rho < 4.5e3, "{}", rows[0].rho);
        assert!(reproduce_rate_table(&[], &[1.0]).is_err());
    }
}
