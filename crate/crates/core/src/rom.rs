//! Offline construction of the reduced trace map: snapshots from full-order
//! runs, POD bases, the latent dataset (snapshot rows plus enrichment rows
//! from middle-subdomain solves), network training and the persisted
//! artifact.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{InnerProductKind, TraceVector};
use crate::geometry::InterfaceId;
use crate::network::{train_latent_map, LatentMap, TrainSettings};
use crate::pod::{compute_pod_basis, PodBasis};
use crate::problem::{ParameterMap, PipeProblem, Subdomain, SubdomainKind};
use crate::schwarz::{FullOrderModel, SchwarzOptions};

pub const ARTIFACT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub parameter: f64,
    pub sweep: usize,
    pub values: Vec<f64>,
}

/// Middle-iterate traces per interface, ordered as [`InterfaceId::ALL`].
/// Entry `k` of every interface comes from the same run and sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub interfaces: [Vec<Snapshot>; 4],
    pub spacing: f64,
    pub d_train: Vec<f64>,
    pub offline_tol: f64,
    /// Parameters whose runs did not reach the threshold.
    pub excluded: Vec<f64>,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.interfaces[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.interfaces[0].is_empty()
    }

    pub fn values(&self, id: InterfaceId) -> Vec<Vec<f64>> {
        self.interfaces[id.index()].iter().map(|s| s.values.clone()).collect()
    }
}

pub(crate) fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn collect_snapshots(
    problem: &PipeProblem,
    d_train: &[f64],
    opts: &SchwarzOptions,
    workers: usize,
) -> Result<SnapshotSet> {
    if d_train.is_empty() {
        return Err(Error::Parameter("the training set is empty".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter("the offline threshold must be positive".into()));
    }
    let runs: Vec<Result<(f64, Option<Vec<[Vec<f64>; 4]>>)>> = in_pool(workers, || {
        d_train
            .par_iter()
            .map(|&p| {
                let model = FullOrderModel::new(problem, p)?;
                let report = model.run(opts)?;
                Ok((p, report.converged.then_some(report.omega2_traces)))
            })
            .collect()
    })?;
    let mut interfaces: [Vec<Snapshot>; 4] = Default::default();
    let mut excluded = Vec::new();
    for run in runs {
        let (p, traces) = run?;
        match traces {
            Some(traces) => {
                for (k, sweep) in traces.into_iter().enumerate() {
                    for (i, values) in sweep.into_iter().enumerate() {
                        interfaces[i].push(Snapshot { parameter: p, sweep: k + 1, values });
                    }
                }
            }
            None => {
                log::warn!("training run at parameter {p} did not converge and is excluded");
                excluded.push(p);
            }
        }
    }
    if interfaces[0].is_empty() {
        return Err(Error::Estimation("no training run converged".into()));
    }
    Ok(SnapshotSet {
        interfaces,
        spacing: problem.geometry.width / problem.mesh.ny as f64,
        d_train: d_train.to_vec(),
        offline_tol: opts.tol,
        excluded,
    })
}

/// One basis per interface, ordered as [`InterfaceId::ALL`].
pub fn compute_bases(set: &SnapshotSet, kind: InnerProductKind, sigma: f64) -> Result<Vec<PodBasis>> {
    InterfaceId::ALL
        .iter()
        .map(|&id| compute_pod_basis(&set.values(id), id, set.spacing, kind, sigma))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSource {
    Snapshot,
    Enrichment,
}

/// Rows `(alpha_2in, alpha_2out, parameter) -> (alpha_1out, alpha_3in)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentDataset {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub source: Vec<RowSource>,
}

impl LatentDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn count(&self, source: RowSource) -> usize {
        self.source.iter().filter(|s| **s == source).count()
    }

    pub fn extend(&mut self, other: LatentDataset) {
        self.inputs.extend(other.inputs);
        self.outputs.extend(other.outputs);
        self.source.extend(other.source);
    }
}

fn basis(bases: &[PodBasis], id: InterfaceId) -> &PodBasis {
    &bases[id.index()]
}

pub fn snapshot_rows(set: &SnapshotSet, bases: &[PodBasis]) -> Result<LatentDataset> {
    let mut ds = LatentDataset::default();
    for k in 0..set.len() {
        let get = |id: InterfaceId| basis(bases, id).project(&set.interfaces[id.index()][k].values);
        let p = set.interfaces[0][k].parameter;
        let mut input = get(InterfaceId::In2)?;
        input.extend(get(InterfaceId::Out2)?);
        input.push(p);
        let mut output = get(InterfaceId::Out1)?;
        output.extend(get(InterfaceId::In3)?);
        ds.inputs.push(input);
        ds.outputs.push(output);
        ds.source.push(RowSource::Snapshot);
    }
    Ok(ds)
}

/// Per-dimension `[min, max]` of the input latent coefficients (parameter
/// column excluded) over `rows`.
pub fn coefficient_bounds(rows: &LatentDataset) -> Vec<[f64; 2]> {
    let d = rows.inputs.first().map_or(0, |r| r.len() - 1);
    let mut b = vec![[f64::INFINITY, f64::NEG_INFINITY]; d];
    for r in &rows.inputs {
        for (j, v) in r[..d].iter().enumerate() {
            b[j][0] = b[j][0].min(*v);
            b[j][1] = b[j][1].max(*v);
        }
    }
    b
}

/// `count` equally spaced points of `[lo, hi]`; a single point sits at the centre.
pub fn grid_points(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Grid counts per latent input dimension; the last listed count repeats
/// when an interface has more modes than listed counts.
pub fn expand_grid_counts(grid_counts: &[Vec<usize>], bases: &[PodBasis]) -> Result<Vec<usize>> {
    if grid_counts.len() != 2 {
        return Err(Error::Config("grid counts need one list per input interface (2in, 2out)".into()));
    }
    let mut out = Vec::new();
    for (list, id) in grid_counts.iter().zip([InterfaceId::In2, InterfaceId::Out2]) {
        if list.is_empty() || list.contains(&0) {
            return Err(Error::Config("grid counts must be at least 1".into()));
        }
        for j in 0..basis(bases, id).dim() {
            out.push(list[j.min(list.len() - 1)]);
        }
    }
    Ok(out)
}

/// Projected middle-subdomain responses for one parameter: the particular
/// response (zero interface data) and one homogeneous response per input mode.
#[derive(Debug, Clone)]
pub struct EnrichmentResponses {
    pub parameter: f64,
    pub particular: Vec<f64>,
    pub per_mode: Vec<Vec<f64>>,
}

impl EnrichmentResponses {
    pub fn compute(problem: &PipeProblem, bases: &[PodBasis], parameter: f64) -> Result<Self> {
        let coeffs = problem.coefficients(parameter)?;
        let omega2 = Subdomain::new(problem, SubdomainKind::Omega2, &coeffs)?;
        let (t_in, t_out) = (omega2.trace(InterfaceId::In2), omega2.trace(InterfaceId::Out2));
        let project = |u: &[f64]| -> Result<Vec<f64>> {
            let mut v = basis(bases, InterfaceId::Out1).project(&omega2.trace(InterfaceId::Out1).restrict(u))?;
            v.extend(basis(bases, InterfaceId::In3).project(&omega2.trace(InterfaceId::In3).restrict(u))?);
            Ok(v)
        };
        let zero_in = vec![0.0; t_in.len()];
        let zero_out = vec![0.0; t_out.len()];
        let particular = project(&omega2.solver.solve(&[(t_in, &zero_in), (t_out, &zero_out)], false)?)?;
        let mut per_mode = Vec::new();
        for phi in &basis(bases, InterfaceId::In2).modes {
            per_mode.push(project(&omega2.solver.solve(&[(t_in, phi), (t_out, &zero_out)], true)?)?);
        }
        for phi in &basis(bases, InterfaceId::Out2).modes {
            per_mode.push(project(&omega2.solver.solve(&[(t_in, &zero_in), (t_out, phi)], true)?)?);
        }
        Ok(Self { parameter, particular, per_mode })
    }

    /// Output coefficients for input coefficients `alpha` by superposition.
    pub fn combine(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        check_len(self.per_mode.len(), alpha.len())?;
        let mut out = self.particular.clone();
        for (a, r) in alpha.iter().zip(&self.per_mode) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += a * v;
            }
        }
        Ok(out)
    }
}

/// Enrichment rows on the tensor grid spanned by `bounds` and `counts`, for
/// every parameter in `d_tilde`. Middle-subdomain solves are linear in the
/// boundary data, so each parameter needs one factorization and
/// `1 + (number of input modes)` solves; grid rows are then superposed.
pub fn build_enrichment_dataset(
    problem: &PipeProblem,
    bases: &[PodBasis],
    bounds: &[[f64; 2]],
    counts: &[usize],
    d_tilde: &[f64],
    workers: usize,
) -> Result<LatentDataset> {
    check_len(bounds.len(), counts.len())?;
    if bounds.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("coefficient bounds must be finite".into()));
    }
    let axes: Vec<Vec<f64>> = bounds.iter().zip(counts).map(|(b, &c)| grid_points(b[0], b[1], c)).collect();
    let responses: Vec<Result<EnrichmentResponses>> = in_pool(workers, || {
        d_tilde.par_iter().map(|&p| EnrichmentResponses::compute(problem, bases, p)).collect()
    })?;
    let mut ds = LatentDataset::default();
    let total: usize = counts.iter().product();
    for r in responses {
        let r = match r {
            Ok(r) => r,
            Err(e) => {
                log::warn!("enrichment solve failed and its rows are skipped: {e}");
                continue;
            }
        };
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            let alpha: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
            let output = r.combine(&alpha)?;
            let mut input = alpha;
            input.push(r.parameter);
            ds.inputs.push(input);
            ds.outputs.push(output);
            ds.source.push(RowSource::Enrichment);
            // odometer, last axis fastest
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFingerprint {
    pub width: f64,
    pub length: f64,
    pub cuts: [f64; 4],
    pub interface_nodes: [usize; 4],
}

impl GeometryFingerprint {
    pub fn of(problem: &PipeProblem) -> Self {
        let g = &problem.geometry;
        Self { width: g.width, length: g.length, cuts: g.cuts, interface_nodes: [problem.mesh.ny + 1; 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFingerprint {
    pub diffusion: f64,
    pub beta_y: f64,
    pub source: f64,
    pub inlet: String,
    pub parameter: ParameterMap,
}

impl ProblemFingerprint {
    pub fn of(problem: &PipeProblem) -> Self {
        let p = &problem.physics;
        Self { diffusion: p.diffusion, beta_y: p.beta_y, source: p.source, inlet: p.inlet.id(), parameter: p.parameter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub d_train: Vec<f64>,
    pub d_tilde: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub offline_tol: f64,
    pub enrichment: bool,
    pub bounds: Vec<[f64; 2]>,
    pub snapshot_rows: usize,
    pub enrichment_rows: usize,
    pub excluded: Vec<f64>,
    pub omega2_refinement: usize,
    pub settings: TrainSettings,
    pub loss: TrainingLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLoss {
    pub train: f64,
    pub validation: f64,
}

/// Everything needed to evaluate the reduced trace map online.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomArtifact {
    pub version: u64,
    pub geometry: GeometryFingerprint,
    pub problem: ProblemFingerprint,
    pub bases: Vec<PodBasis>,
    pub network: LatentMap,
    pub training: TrainingRecord,
}

/// Reduced-map output traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TauOutput {
    pub out1: TraceVector,
    pub in3: TraceVector,
    pub extrapolated: bool,
}

impl RomArtifact {
    pub fn basis(&self, id: InterfaceId) -> &PodBasis {
        &self.bases[id.index()]
    }

    pub fn ranks(&self) -> [usize; 4] {
        InterfaceId::ALL.map(|id| self.basis(id).dim())
    }

    pub fn check_compatible(&self, problem: &PipeProblem) -> Result<()> {
        let g = GeometryFingerprint::of(problem);
        if g != self.geometry {
            return Err(Error::Compatibility(format!(
                "artifact geometry {:?} does not match the configured geometry {:?}",
                self.geometry, g
            )));
        }
        let p = ProblemFingerprint::of(problem);
        if p != self.problem {
            return Err(Error::Compatibility(format!(
                "artifact physics {:?} does not match the configured physics {:?}",
                self.problem, p
            )));
        }
        Ok(())
    }

    pub fn is_extrapolated(&self, parameter: f64) -> bool {
        let lo = self.training.d_train.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.training.d_train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        parameter < lo || parameter > hi
    }

    /// Reduced map on raw nodal traces.
    pub fn evaluate(&self, in2: &[f64], out2: &[f64], parameter: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        for (values, id) in [(in2, InterfaceId::In2), (out2, InterfaceId::Out2)] {
            if values.len() != self.geometry.interface_nodes[id.index()] {
                return Err(Error::Compatibility(format!(
                    "trace on {id} has {} nodes, the artifact expects {}",
                    values.len(),
                    self.geometry.interface_nodes[id.index()]
                )));
            }
        }
        let mut input = self.basis(InterfaceId::In2).project(in2)?;
        input.extend(self.basis(InterfaceId::Out2).project(out2)?);
        input.push(parameter);
        let latent = self.network.evaluate(&input)?;
        let l1 = self.basis(InterfaceId::Out1).dim();
        Ok((
            self.basis(InterfaceId::Out1).reconstruct(&latent[..l1])?,
            self.basis(InterfaceId::In3).reconstruct(&latent[l1..])?,
        ))
    }

    pub fn evaluate_traces(&self, in2: &TraceVector, out2: &TraceVector, parameter: f64) -> Result<TauOutput> {
        if in2.interface != InterfaceId::In2 || out2.interface != InterfaceId::Out2 {
            return Err(Error::Compatibility("reduced map inputs must live on 2in and 2out".into()));
        }
        let (a, b) = self.evaluate(&in2.values, &out2.values, parameter)?;
        Ok(TauOutput {
            out1: TraceVector::new(InterfaceId::Out1, self.basis(InterfaceId::Out1).spacing, a),
            in3: TraceVector::new(InterfaceId::In3, self.basis(InterfaceId::In3).spacing, b),
            extrapolated: self.is_extrapolated(parameter),
        })
    }

    /// Floating-point operations of one reduced-map evaluation. Depends on
    /// interface node counts, ranks and network size only.
    pub fn tau_flops(&self) -> usize {
        let per_inner = |b: &PodBasis| {
            let m = b.trace_len();
            match b.kind {
                InnerProductKind::L2d => 2 * m,
                InnerProductKind::H1d => 2 * m + 3 * m.saturating_sub(1) + 2,
            }
        };
        let mut flops = self.network.flops();
        for id in [InterfaceId::In2, InterfaceId::Out2] {
            flops += self.basis(id).dim() * per_inner(self.basis(id));
        }
        for id in [InterfaceId::Out1, InterfaceId::In3] {
            flops += self.basis(id).dim() * 2 * self.basis(id).trace_len();
        }
        flops
    }
}

pub fn evaluate_tau_tilde(rom: &RomArtifact, in2: &TraceVector, out2: &TraceVector, parameter: f64) -> Result<TauOutput> {
    rom.evaluate_traces(in2, out2, parameter)
}

pub fn rom_to_string(rom: &RomArtifact) -> Result<String> {
    serde_json::to_string_pretty(rom).map_err(|e| Error::Parse(e.to_string()))
}

pub fn rom_from_str(text: &str) -> Result<RomArtifact> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Parse("artifact has no integer version field".into()))?;
    if version != ARTIFACT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: ARTIFACT_VERSION });
    }
    serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes through a temporary file so a failed write leaves no partial artifact.
pub fn save_rom(rom: &RomArtifact, path: &Path) -> Result<()> {
    let text = rom_to_string(rom)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_rom(path: &Path) -> Result<RomArtifact> {
    rom_from_str(&std::fs::read_to_string(path)?)
}

/// Settings of the complete offline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSettings {
    pub d_train: Vec<f64>,
    pub d_tilde: Vec<f64>,
    pub grid_counts: Vec<Vec<usize>>,
    pub sigma: f64,
    pub kind: InnerProductKind,
    pub schwarz: SchwarzOptions,
    pub enrichment: bool,
    pub network: TrainSettings,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOutput {
    pub artifact: RomArtifact,
    pub snapshots: SnapshotSet,
    pub dataset: LatentDataset,
}

pub fn run_offline(problem: &PipeProblem, settings: &OfflineSettings) -> Result<OfflineOutput> {
    let snapshots = collect_snapshots(problem, &settings.d_train, &settings.schwarz, settings.workers)?;
    let bases = compute_bases(&snapshots, settings.kind, settings.sigma)?;
    let mut dataset = snapshot_rows(&snapshots, &bases)?;
    let bounds = coefficient_bounds(&dataset);
    let counts = expand_grid_counts(&settings.grid_counts, &bases)?;
    if settings.enrichment {
        let extra = build_enrichment_dataset(problem, &bases, &bounds, &counts, &settings.d_tilde, settings.workers)?;
        dataset.extend(extra);
    }
    let network = train_latent_map(&dataset.inputs, &dataset.outputs, &settings.network)?;
    let training = TrainingRecord {
        d_train: settings.d_train.clone(),
        d_tilde: if settings.enrichment { settings.d_tilde.clone() } else { Vec::new() },
        grid_counts: counts,
        offline_tol: settings.schwarz.tol,
        enrichment: settings.enrichment,
        bounds,
        snapshot_rows: dataset.count(RowSource::Snapshot),
        enrichment_rows: dataset.count(RowSource::Enrichment),
        excluded: snapshots.excluded.clone(),
        omega2_refinement: problem.mesh.omega2_refinement,
        settings: settings.network,
        loss: TrainingLoss { train: network.loss.train, validation: network.loss.validation },
    };
    let artifact = RomArtifact {
        version: ARTIFACT_VERSION,
        geometry: GeometryFingerprint::of(problem),
        problem: ProblemFingerprint::of(problem),
        bases,
        network,
        training,
    };
    Ok(OfflineOutput { artifact, snapshots, dataset })
}
