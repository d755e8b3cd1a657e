//! Proper orthogonal decomposition of interface traces by the method of
//! snapshots.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{trace_dot, InnerProductKind, TraceVector};
use crate::geometry::InterfaceId;

/// Orthonormal modes of one interface under `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub interface: InterfaceId,
    pub kind: InnerProductKind,
    pub sigma: f64,
    pub spacing: f64,
    /// All Gram eigenvalues, descending, negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
    /// Fraction of the eigenvalue sum kept by the retained modes.
    pub energy: f64,
    pub modes: Vec<Vec<f64>>,
}

/// Smallest `l` with `sum(lambda[..l]) >= (1 - sigma) * sum(lambda)`.
pub fn energy_rank(eigenvalues: &[f64], sigma: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let target = (1.0 - sigma) * total;
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc >= target {
            return i + 1;
        }
    }
    eigenvalues.len()
}

pub fn compute_pod_basis(
    snapshots: &[Vec<f64>],
    interface: InterfaceId,
    spacing: f64,
    kind: InnerProductKind,
    sigma: f64,
) -> Result<PodBasis> {
    if snapshots.is_empty() {
        return Err(Error::DegenerateBasis(format!("no snapshots on interface {interface}")));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::Parameter(format!("truncation sigma must lie in (0, 1), got {sigma}")));
    }
    let m = snapshots[0].len();
    for s in snapshots {
        check_len(m, s.len())?;
    }
    let n = snapshots.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = trace_dot(&snapshots[i], &snapshots[j], spacing, kind)?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateBasis(format!("all snapshots on interface {interface} vanish")));
    }
    let rank = energy_rank(&eigenvalues, sigma);
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for (j, &k) in order.iter().take(rank).enumerate() {
        let scale = 1.0 / eigenvalues[j].sqrt();
        let mut phi = vec![0.0; m];
        for (i, s) in snapshots.iter().enumerate() {
            let a = eig.eigenvectors[(i, k)] * scale;
            for (p, v) in phi.iter_mut().zip(s) {
                *p += a * v;
            }
        }
        // one Gram-Schmidt pass against earlier modes removes accumulated drift
        for prev in &modes {
            let c = trace_dot(&phi, prev, spacing, kind)?;
            for (p, q) in phi.iter_mut().zip(prev) {
                *p -= c * q;
            }
        }
        let norm = trace_dot(&phi, &phi, spacing, kind)?.sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateBasis(format!("mode {} on interface {interface} vanishes", j + 1)));
        }
        let peak = phi.iter().fold(0.0f64, |best, v| if v.abs() > best.abs() { *v } else { best });
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        for p in &mut phi {
            *p *= sign / norm;
        }
        modes.push(phi);
    }
    let energy = eigenvalues[..rank].iter().sum::<f64>() / total;
    Ok(PodBasis { interface, kind, sigma, spacing, eigenvalues, energy, modes })
}

impl PodBasis {
    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn trace_len(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        trace_dot(a, b, self.spacing, self.kind)
    }

    /// Latent coefficients `((trace, phi_j))`.
    pub fn project(&self, trace: &[f64]) -> Result<Vec<f64>> {
        check_len(self.trace_len(), trace.len())?;
        self.modes.iter().map(|phi| self.inner(trace, phi)).collect()
    }

    pub fn reconstruct(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), coefficients.len())?;
        let mut out = vec![0.0; self.trace_len()];
        for (c, phi) in coefficients.iter().zip(&self.modes) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += c * p;
            }
        }
        Ok(out)
    }

    pub fn project_trace(&self, trace: &TraceVector) -> Result<Vec<f64>> {
        if trace.interface != self.interface {
            return Err(Error::Compatibility(format!(
                "trace on {} projected onto the basis of {}",
                trace.interface, self.interface
            )));
        }
        self.project(&trace.values)
    }

    pub fn reconstruct_trace(&self, coefficients: &[f64]) -> Result<TraceVector> {
        Ok(TraceVector::new(self.interface, self.spacing, self.reconstruct(coefficients)?))
    }

    /// Largest deviation of the mode Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.modes.iter().enumerate() {
            for (j, b) in self.modes.iter().enumerate() {
                let g = self.inner(a, b).unwrap_or(f64::NAN);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_snapshots_give_one_mode() {
        let s = vec![0.0, 1.0, 3.0, 2.0, 0.0];
        let snaps = vec![s.clone(); 6];
        let b = compute_pod_basis(&snaps, InterfaceId::In2, 0.5, InnerProductKind::H1d, 1e-5).unwrap();
        assert_eq!(b.dim(), 1);
        for l in &b.eigenvalues[1..] {
            assert!(*l <= 1e-12 * b.eigenvalues[0]);
        }
        let norm = b.inner(&s, &s).unwrap().sqrt();
        for (p, v) in b.modes[0].iter().zip(&s) {
            assert!((p - v / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_gram() {
        let snaps = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]];
        let b = compute_pod_basis(&snaps, InterfaceId::Out1, 1.0, InnerProductKind::L2d, 0.3).unwrap();
        assert!((b.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((b.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert_eq!(b.dim(), 1);
        assert!((b.energy - 0.75).abs() < 1e-12);
        let b = compute_pod_basis(&snaps, InterfaceId::Out1, 1.0, InnerProductKind::L2d, 0.2).unwrap();
        assert_eq!(b.dim(), 2);
    }

    #[test]
    fn zero_snapshots_are_degenerate() {
        let snaps = vec![vec![0.0; 4]; 3];
        let err = compute_pod_basis(&snaps, InterfaceId::In3, 1.0, InnerProductKind::L2d, 0.1).unwrap_err();
        assert!(matches!(err, Error::DegenerateBasis(_)));
    }

    #[test]
    fn projection_identities() {
        let snaps: Vec<Vec<f64>> = (0..5)
            .map(|k| (0..9).map(|i| ((i * (k + 1)) as f64 * 0.3).sin() + k as f64 * 0.1).collect())
            .collect();
        let b = compute_pod_basis(&snaps, InterfaceId::Out2, 0.25, InnerProductKind::H1d, 1e-12).unwrap();
        assert!(b.dim() >= 2);
        assert!(b.orthonormality_defect() < 1e-10);
        let e1 = b.reconstruct(&[1.0, 0.0].iter().chain(std::iter::repeat(&0.0)).take(b.dim()).copied().collect::<Vec<_>>()).unwrap();
        assert_eq!(e1, b.modes[0]);
        let t: Vec<f64> = b.modes[0].iter().zip(&b.modes[1]).map(|(p, q)| 2.0 * p - 3.0 * q).collect();
        let a = b.project(&t).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-10 && (a[1] + 3.0).abs() < 1e-10);
        let back = b.reconstruct(&a).unwrap();
        for (x, y) in back.iter().zip(&t) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(b.project(&t[..4]).is_err());
    }

    #[test]
    fn energy_rank_is_minimal() {
        assert_eq!(energy_rank(&[3.0, 1.0], 0.3), 1);
        assert_eq!(energy_rank(&[3.0, 1.0], 0.2), 2);
        assert_eq!(energy_rank(&[1.0, 0.0, 0.0], 1e-5), 1);
    }
}
