//! Grid-based sparse recovery for partly calibrated arrays.
//!
//! Three equivalent formulations are provided: the mixed nuclear/l1 norm
//! problem on the extended signal `Q` ([`solve_lnuc1`]) and the two compact
//! semidefinite forms in the block-diagonal matrix `S`
//! ([`solve_cobras_snapshot_form`], [`solve_cobras_covariance_form`]).

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::Serialize;

use crate::array_model::{block_matrix_unchecked, full_steering_matrix, ArrayGeometry, FrequencyGrid};
use crate::conic::{solve, BlockDiagPSD, BlockId, ConicProblem, ConicSolution, SolveStatus, SolverOptions, Term};
use crate::linalg::{hermitian_eigh, hpd_solve, svd_sorted, trace_re};
use crate::signal_sim::{SampleCovariance, SnapshotMatrix};
use crate::{CMatrix, CVector, CobrasError, Result, C64};

/// Default relative support threshold of the spectrum.
pub const DEFAULT_PEAK_THRESHOLD: f64 = 1e-2;

/// Solver settings shared by the estimators.
#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub solver: SolverOptions,
    /// A max-iterations result is accepted when all residuals are below this.
    pub accept_residual: f64,
    pub peak_threshold: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            accept_residual: 1e-4,
            peak_threshold: DEFAULT_PEAK_THRESHOLD,
        }
    }
}

impl EstimatorOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            solver: SolverOptions::with_tolerance(tolerance),
            accept_residual: (tolerance * 1e3).max(1e-4),
            ..Self::default()
        }
    }

    pub(crate) fn run(&self, problem: &ConicProblem) -> Result<ConicSolution> {
        let sol = solve(problem, &self.solver)?;
        if sol.status != SolveStatus::Optimal {
            log::debug!(
                "solver stopped with {} after {} iterations (max residual {:.2e})",
                sol.status,
                sol.iterations,
                sol.max_residual()
            );
        }
        sol.require_within(self.accept_residual)
    }
}

/// Solver residuals attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

impl From<&ConicSolution> for SolveReport {
    fn from(s: &ConicSolution) -> Self {
        Self {
            status: s.status,
            iterations: s.iterations,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            gap: s.gap,
        }
    }
}

/// `K` stacked `P x N` blocks `Q_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSignal {
    blocks: Vec<CMatrix>,
}

impl ExtendedSignal {
    pub fn new(blocks: Vec<CMatrix>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            if blocks.iter().any(|b| b.shape() != first.shape()) {
                return Err(CobrasError::InvalidInput(
                    "extended signal blocks differ in shape".into(),
                ));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &CMatrix {
        &self.blocks[k]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `KP x N` stacked matrix.
    pub fn stacked(&self) -> CMatrix {
        let Some(first) = self.blocks.first() else {
            return CMatrix::zeros(0, 0);
        };
        let (p, n) = first.shape();
        let mut out = CMatrix::zeros(p * self.blocks.len(), n);
        for (k, b) in self.blocks.iter().enumerate() {
            out.view_mut((k * p, 0), (p, n)).copy_from(b);
        }
        out
    }
}

pub fn l21_norm(x: &CMatrix) -> f64 {
    x.row_iter().map(|r| r.norm()).sum()
}

pub fn nuclear_norm(q: &CMatrix) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    q.singular_values().iter().sum()
}

pub fn lnuc1_norm(q: &ExtendedSignal) -> f64 {
    q.blocks.iter().map(nuclear_norm).sum()
}

/// Balanced factors `Gamma = U Sigma^(1/2)`, `G = Sigma^(1/2) V^H` of a
/// thin SVD, so that `(|Gamma|_F^2 + |G|_F^2) / 2` equals the nuclear norm.
pub fn lemma1_factors(q: &CMatrix) -> (CMatrix, CMatrix) {
    let (p, n) = q.shape();
    let r = p.min(n);
    if r == 0 {
        return (CMatrix::zeros(p, 0), CMatrix::zeros(0, n));
    }
    let (mut u, s, mut vt) = svd_sorted(q);
    for (i, sv) in s.iter().enumerate() {
        let root = sv.max(0.0).sqrt();
        u.column_mut(i).scale_mut(root);
        vt.row_mut(i).scale_mut(root);
    }
    (u, vt)
}

/// Per-grid-point sparse dictionary blocks: `rows[k][i]` lists the non-zero
/// `(column, value)` pairs of row `i` of the `M x P` block `B_k`.
#[derive(Debug, Clone)]
pub(crate) struct Atoms {
    pub(crate) m: usize,
    pub(crate) p: usize,
    pub(crate) blocks: Vec<CMatrix>,
    rows: Vec<Vec<Vec<(usize, C64)>>>,
}

impl Atoms {
    pub(crate) fn from_blocks(blocks: Vec<CMatrix>) -> Self {
        let (m, p) = blocks.first().map_or((0, 0), |b| b.shape());
        let rows = blocks
            .iter()
            .map(|b| {
                (0..m)
                    .map(|i| {
                        (0..p)
                            .filter(|&q| b[(i, q)] != C64::new(0.0, 0.0))
                            .map(|q| (q, b[(i, q)]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { m, p, blocks, rows }
    }

    pub(crate) fn subarray(geom: &ArrayGeometry, grid: &FrequencyGrid) -> Self {
        Self::from_blocks(
            grid.points()
                .iter()
                .map(|&nu| block_matrix_unchecked(geom, nu))
                .collect(),
        )
    }

    fn calibrated(geom: &ArrayGeometry, grid: &FrequencyGrid) -> Result<Self> {
        let a = full_steering_matrix(geom, grid.points())?;
        Ok(Self::from_blocks(
            a.column_iter()
                .map(|c| CMatrix::from_column_slice(c.nrows(), 1, c.as_slice()))
                .collect(),
        ))
    }

    fn len(&self) -> usize {
        self.blocks.len()
    }

    /// `sum_k B_k S_k B_k^H + lambda I`.
    pub(crate) fn model_covariance(&self, s: &[CMatrix], lambda: f64) -> CMatrix {
        let mut w = CMatrix::identity(self.m, self.m).scale(lambda);
        for (b, sk) in self.blocks.iter().zip(s) {
            if sk.iter().all(|v| *v == C64::new(0.0, 0.0)) {
                continue;
            }
            w += b * sk * b.adjoint();
        }
        w
    }

    /// Adds `X[r0 + i, r0 + j] - sum_k (B_k S_k B_k^H)_ij = lambda delta_ij`.
    fn add_model_constraint(
        &self,
        problem: &mut ConicProblem,
        x0: BlockId,
        r0: usize,
        s_blocks: &[BlockId],
        lambda: f64,
    ) {
        let rhs = CMatrix::identity(self.m, self.m).scale(lambda);
        problem.add_hermitian_equality(x0, r0, r0, &rhs, |i, j| {
            let mut terms = Vec::new();
            for (k, rows) in self.rows.iter().enumerate() {
                for &(p, bi) in &rows[i] {
                    for &(q, bj) in &rows[j] {
                        terms.push(Term::new(s_blocks[k], p, q, -(bi * bj.conj())));
                    }
                }
            }
            terms
        });
    }

    fn add_s_blocks(&self, problem: &mut ConicProblem) -> Vec<BlockId> {
        (0..self.len())
            .map(|k| {
                let id = problem.add_block(format!("S{k}"), self.p);
                for q in 0..self.p {
                    problem.add_objective(Term::real(id, q, q, 1.0));
                }
                id
            })
            .collect()
    }
}

/// `Tr((B S B^H + lambda I)^{-1} R) + Tr(S)`.
pub(crate) fn covariance_objective(atoms: &Atoms, s: &[CMatrix], r: &CMatrix, lambda: f64) -> Result<f64> {
    let w = atoms.model_covariance(s, lambda);
    let sol = hpd_solve(&w, r).ok_or_else(|| CobrasError::Numerical("model covariance is singular".into()))?;
    Ok(trace_re(&sol) + s.iter().map(trace_re).sum::<f64>())
}

/// Result of a compact SDP solve.
#[derive(Debug, Clone)]
pub struct CompactSolution {
    pub s_hat: BlockDiagPSD,
    /// `Z_N` (snapshot form) or `Z_M` (covariance form).
    pub z: CMatrix,
    /// `Tr((B S B^H + lambda I)^{-1} R) + Tr(S)` evaluated at `S_hat`.
    pub objective: f64,
    pub report: SolveReport,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(CobrasError::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )))
    }
}

fn check_rows(rows: usize, geom: &ArrayGeometry) -> Result<()> {
    if rows != geom.num_sensors() {
        return Err(CobrasError::InvalidInput(format!(
            "data has {rows} rows but the array has {} sensors",
            geom.num_sensors()
        )));
    }
    Ok(())
}

fn psd_blocks(sol: &ConicSolution, ids: &[BlockId]) -> Result<BlockDiagPSD> {
    BlockDiagPSD::project(ids.iter().map(|&id| sol.block(id).clone()).collect())
}

fn covariance_form(r: &CMatrix, atoms: &Atoms, lambda: f64, opts: &EstimatorOptions) -> Result<CompactSolution> {
    let m = atoms.m;
    let mut problem = ConicProblem::new();
    let x0 = problem.add_block("X0", 2 * m);
    let s_ids = atoms.add_s_blocks(&mut problem);
    problem.add_objective_matrix(x0, 0, 0, r);
    for i in 0..m {
        for j in 0..m {
            let rhs = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            problem.add_complex_equality(&[Term::real(x0, i, m + j, 1.0)], rhs);
        }
    }
    atoms.add_model_constraint(&mut problem, x0, m, &s_ids, lambda);
    let sol = opts.run(&problem)?;
    let s_hat = psd_blocks(&sol, &s_ids)?;
    let z = sol.block(x0).view((0, 0), (m, m)).into_owned();
    let objective = covariance_objective(atoms, s_hat.blocks(), r, lambda)?;
    Ok(CompactSolution {
        s_hat,
        z,
        objective,
        report: SolveReport::from(&sol),
    })
}

/// Covariance form: `min Tr(Z R) + Tr(S)` subject to
/// `[[Z, I], [I, B S B^H + lambda I]] PSD`. Preferred when `N >= M`.
pub fn solve_cobras_covariance_form(
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<CompactSolution> {
    check_lambda(lambda)?;
    check_rows(r_hat.data.nrows(), geom)?;
    covariance_form(&r_hat.data, &Atoms::subarray(geom, grid), lambda, opts)
}

/// Snapshot form: `min Tr(Z)/N + Tr(S)` subject to
/// `[[Z, Y^H], [Y, B S B^H + lambda I]] PSD`. Preferred when `N < M`.
pub fn solve_cobras_snapshot_form(
    y: &SnapshotMatrix,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<CompactSolution> {
    check_lambda(lambda)?;
    check_rows(y.data.nrows(), geom)?;
    let atoms = Atoms::subarray(geom, grid);
    let (m, n) = y.data.shape();
    let mut problem = ConicProblem::new();
    let x0 = problem.add_block("X0", n + m);
    let s_ids = atoms.add_s_blocks(&mut problem);
    for i in 0..n {
        problem.add_objective(Term::real(x0, i, i, 1.0 / n as f64));
    }
    for a in 0..m {
        for t in 0..n {
            problem.add_complex_equality(&[Term::real(x0, n + a, t, 1.0)], y.data[(a, t)]);
        }
    }
    atoms.add_model_constraint(&mut problem, x0, n, &s_ids, lambda);
    let sol = opts.run(&problem)?;
    let s_hat = psd_blocks(&sol, &s_ids)?;
    let z = sol.block(x0).view((0, 0), (n, n)).into_owned();
    let r = (&y.data * y.data.adjoint()).unscale(n as f64);
    let objective = covariance_objective(&atoms, s_hat.blocks(), &r, lambda)?;
    Ok(CompactSolution {
        s_hat,
        z,
        objective,
        report: SolveReport::from(&sol),
    })
}

/// `1/2 |B Q - Y|_F^2 + lambda sqrt(N) |Q|_{*,1}`.
pub fn lnuc1_objective(
    q: &ExtendedSignal,
    y: &SnapshotMatrix,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
) -> f64 {
    let atoms = Atoms::subarray(geom, grid);
    let mut resid = -y.data.clone();
    for (b, qk) in atoms.blocks.iter().zip(q.blocks()) {
        resid += b * qk;
    }
    let n = y.num_snapshots() as f64;
    0.5 * resid.norm_squared() + lambda * n.sqrt() * lnuc1_norm(q)
}

/// Reference mixed-norm problem
/// `min 1/2 |B Q - Y|_F^2 + lambda sqrt(N) sum_k |Q_k|_*`, solved with one
/// `(P+N)` PSD block per grid point and a Schur-complement block for the
/// quadratic term. Returns `Q_hat` and the objective evaluated at it.
pub fn solve_lnuc1(
    y: &SnapshotMatrix,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<(ExtendedSignal, f64)> {
    let (q, _) = solve_lnuc1_with_report(y, geom, grid, lambda, opts)?;
    let objective = lnuc1_objective(&q, y, geom, grid, lambda);
    Ok((q, objective))
}

pub fn solve_lnuc1_with_report(
    y: &SnapshotMatrix,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<(ExtendedSignal, SolveReport)> {
    check_lambda(lambda)?;
    check_rows(y.data.nrows(), geom)?;
    let atoms = Atoms::subarray(geom, grid);
    let (m, n) = y.data.shape();
    let p = atoms.p;
    let weight = 0.5 * lambda * (n as f64).sqrt();

    let mut problem = ConicProblem::new();
    // T = [[T11, E^H], [E, I]] with E = Y - B Q.
    let t = problem.add_block("T", n + m);
    for i in 0..n {
        problem.add_objective(Term::real(t, i, i, 0.5));
    }
    let g_ids: Vec<BlockId> = (0..atoms.len())
        .map(|k| {
            let id = problem.add_block(format!("G{k}"), p + n);
            for i in 0..p + n {
                problem.add_objective(Term::real(id, i, i, weight));
            }
            id
        })
        .collect();
    problem.add_hermitian_equality(t, n, n, &CMatrix::identity(m, m), |_, _| Vec::new());
    for a in 0..m {
        for s in 0..n {
            let mut terms = vec![Term::real(t, n + a, s, 1.0)];
            for (k, rows) in atoms.rows.iter().enumerate() {
                for &(q, b) in &rows[a] {
                    terms.push(Term::new(g_ids[k], q, p + s, b));
                }
            }
            problem.add_complex_equality(&terms, y.data[(a, s)]);
        }
    }
    let sol = opts.run(&problem)?;
    let blocks = g_ids
        .iter()
        .map(|&id| sol.block(id).view((0, p), (p, n)).into_owned())
        .collect();
    Ok((ExtendedSignal::new(blocks)?, SolveReport::from(&sol)))
}

/// `Q_hat = S B^H (B S B^H + lambda I)^{-1} Y`, block by block.
pub fn recover_extended_signal(
    s_hat: &BlockDiagPSD,
    y: &SnapshotMatrix,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
) -> Result<ExtendedSignal> {
    check_lambda(lambda)?;
    check_rows(y.data.nrows(), geom)?;
    let atoms = Atoms::subarray(geom, grid);
    if s_hat.len() != atoms.len() {
        return Err(CobrasError::InvalidInput("S has the wrong number of blocks".into()));
    }
    let w = atoms.model_covariance(s_hat.blocks(), lambda);
    let wy = hpd_solve(&w, &y.data).ok_or_else(|| CobrasError::Numerical("model covariance is singular".into()))?;
    let blocks = atoms
        .blocks
        .iter()
        .zip(s_hat.blocks())
        .map(|(b, s)| s * (b.adjoint() * &wy))
        .collect();
    ExtendedSignal::new(blocks)
}

/// `p_k = max(Tr S_k, 0)`.
pub fn block_spectrum(s_hat: &BlockDiagPSD) -> Vec<f64> {
    s_hat.blocks().iter().map(|b| trace_re(b).max(0.0)).collect()
}

/// Chosen grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakSelection {
    pub indices: Vec<usize>,
    pub frequencies: Vec<f64>,
    /// How many of the indices were drawn at random to reach `L`.
    pub padded: usize,
}

/// Local maxima above `threshold * max(spectrum)`, strongest first. A run of
/// equal values counts as one maximum (reported at its lowest index) when it
/// is strictly above both neighbours; the grid ends are not wrapped.
pub fn threshold_peaks(spectrum: &[f64], threshold: f64) -> Vec<usize> {
    let max = spectrum.iter().copied().fold(0.0f64, f64::max);
    let floor = threshold * max;
    let mut peaks = Vec::new();
    let k = spectrum.len();
    let mut start = 0;
    while start < k {
        let v = spectrum[start];
        let mut end = start;
        while end + 1 < k && spectrum[end + 1] == v {
            end += 1;
        }
        let left = start == 0 || spectrum[start - 1] < v;
        let right = end + 1 == k || spectrum[end + 1] < v;
        if left && right && v > floor && v > 0.0 {
            peaks.push(start);
        }
        start = end + 1;
    }
    peaks.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    peaks
}

/// The `L` strongest peaks; missing ones are filled with random unused grid
/// points.
pub fn select_peaks<R: Rng + ?Sized>(
    spectrum: &[f64],
    grid: &FrequencyGrid,
    l: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<PeakSelection> {
    if l == 0 {
        return Err(CobrasError::InvalidInput("number of sources must be at least 1".into()));
    }
    if spectrum.len() != grid.len() {
        return Err(CobrasError::InvalidInput("spectrum and grid lengths differ".into()));
    }
    if l > grid.len() {
        return Err(CobrasError::InvalidInput("more sources than grid points".into()));
    }
    let mut indices = threshold_peaks(spectrum, threshold);
    indices.truncate(l);
    let found = indices.len();
    if found < l {
        let extra = (0..grid.len())
            .filter(|i| !indices.contains(i))
            .choose_multiple(rng, l - found);
        indices.extend(extra);
    }
    Ok(PeakSelection {
        frequencies: indices.iter().map(|&i| grid.points()[i]).collect(),
        indices,
        padded: l - found,
    })
}

/// Waveform `x_hat` and normalised shift vector `phi_hat` from the dominant
/// singular triple of `Q_k`.
pub fn recover_waveforms_and_shifts(q_k: &CMatrix) -> Result<(CVector, CVector)> {
    if q_k.is_empty() {
        return Err(CobrasError::InvalidInput("empty block".into()));
    }
    let (u, s, vt) = svd_sorted(q_k);
    let lead = u[(0, 0)];
    if s[0] == 0.0 || lead.norm() <= 1e-12 {
        return Err(CobrasError::DegenerateShift(if s[0] == 0.0 {
            0.0
        } else {
            lead.norm()
        }));
    }
    let phi = CVector::from_iterator(u.nrows(), u.column(0).iter().map(|v| v / lead));
    let mut phi = phi;
    phi[0] = C64::new(1.0, 0.0);
    let x = CVector::from_iterator(vt.ncols(), vt.row(0).iter().map(|v| v * lead * s[0]));
    Ok((x, phi))
}

/// Shift estimate from the principal eigenvector of `S_k` (the dominant left
/// singular vector of `Q_k` when only the covariance is available).
pub fn shift_from_block(s_k: &CMatrix) -> Result<CVector> {
    let (vals, vecs) = hermitian_eigh(s_k);
    let last = vals.len() - 1;
    let lead = vecs[(0, last)];
    if vals[last] <= 0.0 || lead.norm() <= 1e-12 {
        return Err(CobrasError::DegenerateShift(lead.norm()));
    }
    let mut phi = CVector::from_iterator(vals.len(), vecs.column(last).iter().map(|v| v / lead));
    phi[0] = C64::new(1.0, 0.0);
    Ok(phi)
}

/// Diagonal minimiser of `Tr((A S A^H + lambda I)^{-1} R) + Tr(S)` for a fully
/// calibrated array (all displacements and offsets known).
pub fn solve_sparrow_fca(
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_rows(r_hat.data.nrows(), geom)?;
    let atoms = Atoms::calibrated(geom, grid)?;
    let sol = covariance_form(&r_hat.data, &atoms, lambda, opts)?;
    Ok(sol.s_hat.blocks().iter().map(|b| b[(0, 0)].re.max(0.0)).collect())
}

/// Measurements handed to the grid estimator.
#[derive(Debug, Clone)]
pub enum GridData {
    Snapshots(SnapshotMatrix),
    Covariance(SampleCovariance),
}

impl GridData {
    pub fn num_snapshots(&self) -> usize {
        match self {
            GridData::Snapshots(y) => y.num_snapshots(),
            GridData::Covariance(r) => r.snapshots,
        }
    }
}

/// Complete grid-based estimate.
#[derive(Debug, Clone)]
pub struct GridEstimate {
    pub spectrum: Vec<f64>,
    pub support: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub s_hat: BlockDiagPSD,
    pub q_hat: Option<ExtendedSignal>,
    pub waveforms: Vec<CVector>,
    pub shifts: Vec<CVector>,
    pub lambda: f64,
    pub objective: f64,
    pub padded: usize,
    pub report: SolveReport,
}

#[derive(Serialize)]
struct GridEstimateDocument<'a> {
    spectrum: &'a [f64],
    support: &'a [usize],
    frequencies: &'a [f64],
    shifts: Vec<Vec<[f64; 2]>>,
    objective: f64,
    lambda: f64,
    padded: usize,
    residuals: &'a SolveReport,
}

impl GridEstimate {
    pub fn to_json(&self) -> Result<String> {
        let doc = GridEstimateDocument {
            spectrum: &self.spectrum,
            support: &self.support,
            frequencies: &self.frequencies,
            shifts: self
                .shifts
                .iter()
                .map(|s| s.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
            objective: self.objective,
            lambda: self.lambda,
            padded: self.padded,
            residuals: &self.report,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

fn unit_shift(p: usize) -> CVector {
    let mut v = CVector::zeros(p);
    v[0] = C64::new(1.0, 0.0);
    v
}

/// Runs the compact SDP (snapshot form when `N < M` and snapshots are
/// available, covariance form otherwise), picks `L` peaks and recovers the
/// shifts. Waveforms are only produced from snapshot data.
pub fn estimate_grid<R: Rng + ?Sized>(
    data: &GridData,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    num_sources: usize,
    opts: &EstimatorOptions,
    rng: &mut R,
) -> Result<GridEstimate> {
    let m = geom.num_sensors();
    let sol = match data {
        GridData::Snapshots(y) if y.num_snapshots() < m => solve_cobras_snapshot_form(y, geom, grid, lambda, opts)?,
        GridData::Snapshots(y) => {
            let r = crate::signal_sim::sample_covariance(y);
            solve_cobras_covariance_form(&r, geom, grid, lambda, opts)?
        }
        GridData::Covariance(r) => solve_cobras_covariance_form(r, geom, grid, lambda, opts)?,
    };
    let spectrum = block_spectrum(&sol.s_hat);
    let peaks = select_peaks(&spectrum, grid, num_sources, opts.peak_threshold, rng)?;
    let p = geom.num_subarrays();

    let mut waveforms = Vec::new();
    let mut shifts = Vec::new();
    let q_hat = match data {
        GridData::Snapshots(y) => {
            let q = recover_extended_signal(&sol.s_hat, y, geom, grid, lambda)?;
            for &k in &peaks.indices {
                match recover_waveforms_and_shifts(q.block(k)) {
                    Ok((x, phi)) => {
                        waveforms.push(x);
                        shifts.push(phi);
                    }
                    Err(_) => {
                        waveforms.push(CVector::zeros(y.num_snapshots()));
                        shifts.push(unit_shift(p));
                    }
                }
            }
            Some(q)
        }
        GridData::Covariance(_) => {
            for &k in &peaks.indices {
                shifts.push(shift_from_block(sol.s_hat.block(k)).unwrap_or_else(|_| unit_shift(p)));
            }
            None
        }
    };

    Ok(GridEstimate {
        spectrum,
        support: peaks.indices,
        frequencies: peaks.frequencies,
        s_hat: sol.s_hat,
        q_hat,
        waveforms,
        shifts,
        lambda,
        objective: sol.objective,
        padded: peaks.padded,
        report: sol.report,
    })
}
