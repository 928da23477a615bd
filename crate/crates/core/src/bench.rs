//! Monte Carlo scenarios and error metrics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{shift_vector, ArrayGeometry, FrequencyGrid};
use crate::cobras_grid::{
    estimate_grid, recover_waveforms_and_shifts, select_peaks, solve_lnuc1_with_report, EstimatorOptions, GridData,
    SolveReport,
};
use crate::gridless::estimate_gridless;
use crate::signal_sim::{
    sample_covariance, select_lambda, simulate_snapshots_with, trial_rng, Correlation, SourceScenario,
};
use crate::{CVector, CobrasError, Result, C64};

/// Shortest distance between two spatial frequencies on the periodic
/// interval `[-1, 1)`.
pub fn wrap_distance(mu1: f64, mu2: f64) -> f64 {
    let d = (mu1 - mu2).rem_euclid(2.0);
    d.min(2.0 - d)
}

/// Minimum-cost assignment of estimates to true frequencies under squared
/// wrap-around distance. Entry `l` is the estimate matched to `truth[l]`.
pub fn match_estimates(truth: &[f64], estimates: &[f64]) -> Vec<usize> {
    let l = truth.len();
    assert_eq!(l, estimates.len(), "need one estimate per source");
    assert!(l < 20, "assignment is exponential in the number of sources");
    let cost = |i: usize, j: usize| wrap_distance(truth[i], estimates[j]).powi(2);
    // best[mask]: cheapest way to assign truth[0..popcount(mask)] to the
    // estimates in mask.
    let full = 1usize << l;
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if !best[mask].is_finite() {
            continue;
        }
        let i = mask.count_ones() as usize;
        if i == l {
            continue;
        }
        for j in 0..l {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                let c = best[mask] + cost(i, j);
                if c < best[next] {
                    best[next] = c;
                    choice[next] = j;
                }
            }
        }
    }
    let mut out = vec![0; l];
    let mut mask = full - 1;
    for i in (0..l).rev() {
        let j = choice[mask];
        out[i] = j;
        mask &= !(1 << j);
    }
    out
}

/// Estimated frequencies and shifts reordered to match `truth`.
fn matched(truth: &[f64], trial: &TrialResult) -> (Vec<f64>, Vec<CVector>) {
    let order = match_estimates(truth, &trial.frequencies);
    (
        order.iter().map(|&j| trial.frequencies[j]).collect(),
        order.iter().filter_map(|&j| trial.shifts.get(j).cloned()).collect(),
    )
}

/// `sqrt(1/(LT) sum_t sum_l |mu_l - mu_hat_l(t)|^2)` after assignment.
pub fn rmse_frequencies(truth: &[f64], trials: &[TrialResult]) -> f64 {
    if trials.is_empty() || truth.is_empty() {
        return f64::NAN;
    }
    let total: f64 = trials
        .iter()
        .map(|t| {
            let (est, _) = matched(truth, t);
            truth
                .iter()
                .zip(&est)
                .map(|(a, b)| wrap_distance(*a, *b).powi(2))
                .sum::<f64>()
        })
        .sum();
    (total / (truth.len() * trials.len()) as f64).sqrt()
}

/// `sqrt(1/L sum_l (mu_l - mean_t mu_hat_l(t))^2)` after assignment.
pub fn bias_frequencies(truth: &[f64], trials: &[TrialResult]) -> f64 {
    if trials.is_empty() || truth.is_empty() {
        return f64::NAN;
    }
    let mut means = vec![0.0; truth.len()];
    for t in trials {
        let (est, _) = matched(truth, t);
        for (m, e) in means.iter_mut().zip(est) {
            *m += e;
        }
    }
    let t = trials.len() as f64;
    let total: f64 = truth
        .iter()
        .zip(&means)
        .map(|(mu, m)| wrap_distance(*mu, m / t).powi(2))
        .sum();
    (total / truth.len() as f64).sqrt()
}

/// `sqrt(1/(LT(P-1)) sum_t sum_l |phi_l - phi_hat_l(t)|^2)`, with the
/// estimates paired to the truth by the frequency assignment. Zero for a
/// single subarray.
pub fn rmse_shifts(truth: &[f64], truth_phi: &[CVector], trials: &[TrialResult]) -> f64 {
    if trials.is_empty() || truth.is_empty() {
        return f64::NAN;
    }
    let p = truth_phi.first().map_or(1, |v| v.len());
    if p <= 1 {
        return 0.0;
    }
    let total: f64 = trials
        .iter()
        .map(|t| {
            let (_, shifts) = matched(truth, t);
            truth_phi
                .iter()
                .zip(&shifts)
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
        })
        .sum();
    (total / (truth.len() * trials.len() * (p - 1)) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    CobrasGrid,
    CobrasGridless,
    Lnuc1Reference,
}

impl std::str::FromStr for Estimator {
    type Err = CobrasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cobras-grid" => Ok(Estimator::CobrasGrid),
            "cobras-gridless" => Ok(Estimator::CobrasGridless),
            "lnuc1-reference" => Ok(Estimator::Lnuc1Reference),
            other => Err(CobrasError::InvalidInput(format!("unknown estimator {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    Snapshots,
    Snr,
    /// `mu_2 = mu_1 - value`.
    Separation,
    Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Inline geometry or a path to a geometry document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Inline(ArrayGeometry),
    Path(PathBuf),
}

fn default_grid_size() -> usize {
    400
}

fn default_trials() -> usize {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub geometry: GeometrySource,
    pub scenario: SourceScenario,
    pub estimator: Estimator,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub sweep: Sweep,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Solver tolerance; defaults per estimator (see
    /// [`ScenarioConfig::effective_tolerance`]).
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Overrides the noise-based regularisation parameter.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// When false the runtime column is written as zero so that repeated
    /// runs produce identical files.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
}

impl ScenarioConfig {
    /// Reads a config; a relative geometry path is resolved against the
    /// config's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: ScenarioConfig = serde_json::from_str(&text)?;
        if let GeometrySource::Path(p) = &config.geometry {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.geometry = GeometrySource::Path(base.join(p));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.values.is_empty() {
            return Err(CobrasError::InvalidInput("sweep needs at least one value".into()));
        }
        if self.trials == 0 {
            return Err(CobrasError::InvalidInput("need at least one trial".into()));
        }
        if self.grid_size == 0 {
            return Err(CobrasError::InvalidInput("grid size must be positive".into()));
        }
        if !(self.effective_tolerance() > 0.0) {
            return Err(CobrasError::InvalidInput("tolerance must be positive".into()));
        }
        if self.scenario.frequencies.is_empty() {
            return Err(CobrasError::InvalidInput("need at least one source".into()));
        }
        for &v in &self.sweep.values {
            self.scenario_at(v)?.covariance_template()?;
        }
        Ok(())
    }

    pub fn load_geometry(&self) -> Result<ArrayGeometry> {
        match &self.geometry {
            GeometrySource::Inline(g) => Ok(g.clone()),
            GeometrySource::Path(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        }
    }

    /// Source scenario with the sweep variable set to `value`.
    pub fn scenario_at(&self, value: f64) -> Result<SourceScenario> {
        let mut s = self.scenario.clone();
        match self.sweep.variable {
            SweepVariable::Snapshots => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(CobrasError::InvalidInput(format!(
                        "snapshot count {value} is not a positive integer"
                    )));
                }
                s.snapshots = value as usize;
            }
            SweepVariable::Snr => s.snr_db = value,
            SweepVariable::Separation => {
                if s.frequencies.len() < 2 {
                    return Err(CobrasError::InvalidInput("separation sweep needs two sources".into()));
                }
                let mu2 = s.frequencies[0] - value;
                if !(-1.0..1.0).contains(&mu2) {
                    return Err(CobrasError::InvalidInput(format!("separation {value} leaves [-1, 1)")));
                }
                s.frequencies[1] = mu2;
            }
            SweepVariable::Correlation => s.correlation = Correlation::Coefficient(value),
        }
        Ok(s)
    }

    /// Configured tolerance, or 1e-5 for the grid SDPs and 1e-7 for the
    /// gridless dual. The gridless dual needs the tighter value: an inexact
    /// dual lets the polynomial exceed one on a short arc, which splits a
    /// double root into two nearby roots at the same source.
    pub fn effective_tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(match self.estimator {
            Estimator::CobrasGridless => 1e-7,
            Estimator::CobrasGrid | Estimator::Lnuc1Reference => 1e-5,
        })
    }

    pub fn estimator_options(&self) -> EstimatorOptions {
        EstimatorOptions::with_tolerance(self.effective_tolerance())
    }

    fn lambda_for(&self, scenario: &SourceScenario, geom: &ArrayGeometry) -> f64 {
        self.lambda
            .unwrap_or_else(|| select_lambda(scenario.noise_variance().sqrt(), geom))
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    /// Random stream the trial was drawn from.
    pub stream: u64,
    pub frequencies: Vec<f64>,
    pub shifts: Vec<CVector>,
    pub runtime_s: f64,
    pub report: SolveReport,
}

/// One line of the result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub rmse: f64,
    pub bias: f64,
    pub rmse_phi: f64,
    pub failures: usize,
    pub mean_runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub rows: Vec<SweepRow>,
    /// Successful trials per sweep value, in trial order.
    pub trials: Vec<Vec<TrialResult>>,
}

impl ScenarioResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        for row in &self.rows {
            writer
                .serialize(row)
                .map_err(|e| CobrasError::Io(std::io::Error::other(e)))?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn stream_id(sweep_index: usize, trial: usize) -> u64 {
    ((sweep_index as u64) << 32) | trial as u64
}

fn unit_shift(p: usize) -> CVector {
    let mut v = CVector::zeros(p);
    v[0] = C64::new(1.0, 0.0);
    v
}

/// Simulates one trial and runs the configured estimator.
pub fn run_trial(
    config: &ScenarioConfig,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    scenario: &SourceScenario,
    sweep_index: usize,
    trial: usize,
) -> Result<TrialResult> {
    let stream = stream_id(sweep_index, trial);
    let mut rng = trial_rng(config.seed, stream);
    let y = simulate_snapshots_with(geom, scenario, &mut rng)?;
    let lambda = config.lambda_for(scenario, geom);
    let opts = config.estimator_options();
    let l = scenario.num_sources();
    let start = Instant::now();
    let (frequencies, shifts, report) = match config.estimator {
        Estimator::CobrasGrid => {
            let est = estimate_grid(&GridData::Snapshots(y), geom, grid, lambda, l, &opts, &mut rng)?;
            (est.frequencies, est.shifts, est.report)
        }
        Estimator::CobrasGridless => {
            let r = sample_covariance(&y);
            let est = estimate_gridless(&r, geom, lambda, l, &opts, &mut rng)?;
            (est.frequencies, est.shifts, est.certificate.dual.report)
        }
        Estimator::Lnuc1Reference => {
            let (q, report) = solve_lnuc1_with_report(&y, geom, grid, lambda, &opts)?;
            let spectrum: Vec<f64> = q.blocks().iter().map(|b| b.norm()).collect();
            let peaks = select_peaks(&spectrum, grid, l, opts.peak_threshold, &mut rng)?;
            let shifts = peaks
                .indices
                .iter()
                .map(|&k| {
                    recover_waveforms_and_shifts(q.block(k))
                        .map(|(_, phi)| phi)
                        .unwrap_or_else(|_| unit_shift(geom.num_subarrays()))
                })
                .collect();
            (peaks.frequencies, shifts, report)
        }
    };
    Ok(TrialResult {
        trial,
        stream,
        frequencies,
        shifts,
        runtime_s: start.elapsed().as_secs_f64(),
        report,
    })
}

/// True shift vectors, normalised to a unit first entry.
pub fn true_shifts(geom: &ArrayGeometry, frequencies: &[f64]) -> Result<Vec<CVector>> {
    frequencies
        .iter()
        .map(|&mu| {
            let phi = shift_vector(geom, mu)?;
            let lead = phi[0];
            Ok(phi.map(|v| v / lead))
        })
        .collect()
}

/// Runs every sweep value for `trials` trials. Trials run in parallel and
/// are aggregated in trial order. Failed trials are counted and excluded;
/// the run aborts when more than 10% of the trials of a sweep value fail.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let geom = config.load_geometry()?;
    let grid = FrequencyGrid::uniform(config.grid_size)?;
    let mut rows = Vec::new();
    let mut all_trials = Vec::new();
    for (si, &value) in config.sweep.values.iter().enumerate() {
        let scenario = config.scenario_at(value)?;
        let outcomes: Vec<Result<TrialResult>> = (0..config.trials)
            .into_par_iter()
            .map(|t| run_trial(config, &geom, &grid, &scenario, si, t))
            .collect();
        let mut trials = Vec::with_capacity(outcomes.len());
        let mut failures = 0;
        for (t, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(r) => trials.push(r),
                Err(e) => {
                    log::warn!("sweep value {value}, trial {t} failed: {e}");
                    failures += 1;
                }
            }
        }
        if failures * 10 > config.trials {
            return Err(CobrasError::Aborted {
                failures,
                trials: config.trials,
            });
        }
        let truth = &scenario.frequencies;
        let phi = true_shifts(&geom, truth)?;
        let mean_runtime_s = if config.record_runtime {
            trials.iter().map(|t| t.runtime_s).sum::<f64>() / trials.len() as f64
        } else {
            0.0
        };
        rows.push(SweepRow {
            sweep_value: value,
            rmse: rmse_frequencies(truth, &trials),
            bias: bias_frequencies(truth, &trials),
            rmse_phi: rmse_shifts(truth, &phi, &trials),
            failures,
            mean_runtime_s,
        });
        log::info!(
            "sweep value {value}: rmse {:.3e} over {} trials",
            rows.last().map_or(f64::NAN, |r| r.rmse),
            trials.len()
        );
        all_trials.push(trials);
    }
    Ok(ScenarioResult {
        rows,
        trials: all_trials,
    })
}

/// Spectrum of the first trial at the first sweep value: `(nu_k, p_k)`
/// pairs. For the gridless estimator this is the largest eigenvalue of the
/// dual polynomial `M(z)` on the grid, which touches one at the estimates.
pub fn spectrum(config: &ScenarioConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    let geom = config.load_geometry()?;
    let grid = FrequencyGrid::uniform(config.grid_size)?;
    let scenario = config.scenario_at(config.sweep.values[0])?;
    let mut rng = trial_rng(config.seed, stream_id(0, 0));
    let y = simulate_snapshots_with(&geom, &scenario, &mut rng)?;
    let lambda = config.lambda_for(&scenario, &geom);
    let opts = config.estimator_options();
    let l = scenario.num_sources();
    let values: Vec<f64> = match config.estimator {
        Estimator::CobrasGrid => {
            estimate_grid(&GridData::Snapshots(y), &geom, &grid, lambda, l, &opts, &mut rng)?.spectrum
        }
        Estimator::Lnuc1Reference => {
            let (q, _) = solve_lnuc1_with_report(&y, &geom, &grid, lambda, &opts)?;
            q.blocks().iter().map(|b| b.norm()).collect()
        }
        Estimator::CobrasGridless => {
            let est = estimate_gridless(&sample_covariance(&y), &geom, lambda, l, &opts, &mut rng)?;
            let delta = est.certificate.decomposition.delta;
            grid.points()
                .iter()
                .map(|&nu| 1.0 - est.polynomial.slackness(std::f64::consts::PI * nu * delta))
                .collect()
        }
    };
    Ok(grid.points().iter().copied().zip(values).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trial(frequencies: Vec<f64>, shifts: Vec<CVector>) -> TrialResult {
        TrialResult {
            trial: 0,
            stream: 0,
            frequencies,
            shifts,
            runtime_s: 0.0,
            report: SolveReport {
                status: crate::conic::SolveStatus::Optimal,
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                gap: 0.0,
            },
        }
    }

    fn cv(v: &[(f64, f64)]) -> CVector {
        CVector::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    #[test]
    fn wrap_distance_examples() {
        assert_eq!(wrap_distance(0.3, 0.3), 0.0);
        assert_abs_diff_eq!(wrap_distance(0.9, -0.9), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_distance(0.5011, 0.4672), 0.0339, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_distance(-1.0, 0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn assignment_prefers_cheapest_pairing() {
        assert_eq!(match_estimates(&[0.1, 0.5], &[0.52, 0.09]), vec![1, 0]);
        assert_eq!(match_estimates(&[0.95, -0.5], &[-0.49, -0.97]), vec![1, 0]);
        assert_eq!(match_estimates(&[0.2], &[0.7]), vec![0]);
    }

    #[test]
    fn rmse_examples() {
        let truth = [0.1];
        assert_eq!(rmse_frequencies(&truth, &[trial(vec![0.1], vec![])]), 0.0);
        assert_abs_diff_eq!(
            rmse_frequencies(&truth, &[trial(vec![0.11], vec![])]),
            0.01,
            epsilon = 1e-12
        );

        let truth = [0.2, -0.4];
        let trials = [trial(vec![-0.41, 0.23], vec![]), trial(vec![0.18, -0.4], vec![])];
        let oracle = ((0.03f64.powi(2) + 0.01f64.powi(2) + 0.02f64.powi(2)) / 4.0).sqrt();
        assert_abs_diff_eq!(rmse_frequencies(&truth, &trials), oracle, epsilon = 1e-12);
    }

    #[test]
    fn bias_examples() {
        let truth = [0.3];
        let sym = [trial(vec![0.31], vec![]), trial(vec![0.29], vec![])];
        assert_abs_diff_eq!(bias_frequencies(&truth, &sym), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            bias_frequencies(&truth, &[trial(vec![0.305], vec![])]),
            0.005,
            epsilon = 1e-12
        );

        let truth = [0.2, -0.4];
        let trials = [
            trial(vec![0.21, -0.42], vec![]),
            trial(vec![-0.41, 0.23], vec![]),
            trial(vec![0.2, -0.37], vec![]),
        ];
        // means: 0.2 + 0.04/3, -0.4 + 0.0
        let oracle = (((0.04f64 / 3.0).powi(2) + 0.0) / 2.0).sqrt();
        assert_abs_diff_eq!(bias_frequencies(&truth, &trials), oracle, epsilon = 1e-12);
    }

    #[test]
    fn single_trial_rmse_equals_bias() {
        let truth = [0.2, -0.4, 0.7];
        let t = [trial(vec![0.69, -0.43, 0.25], vec![])];
        assert_abs_diff_eq!(
            rmse_frequencies(&truth, &t),
            bias_frequencies(&truth, &t),
            epsilon = 1e-15
        );
    }

    #[test]
    fn shift_rmse_examples() {
        let truth = [0.1];
        let phi = vec![cv(&[(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)])];
        assert_eq!(rmse_shifts(&truth, &phi, &[trial(vec![0.1], phi.clone())]), 0.0);
        let e = 0.3;
        let off = vec![cv(&[(1.0, 0.0), (0.0, 1.0 + e), (-1.0, 0.0)])];
        assert_abs_diff_eq!(
            rmse_shifts(&truth, &phi, &[trial(vec![0.1], off)]),
            e / 2f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn shift_rmse_follows_frequency_assignment() {
        let truth = [0.1, 0.6];
        let phi = vec![cv(&[(1.0, 0.0), (1.0, 0.0)]), cv(&[(1.0, 0.0), (-1.0, 0.0)])];
        let swapped = trial(vec![0.6, 0.1], vec![phi[1].clone(), phi[0].clone()]);
        assert_eq!(rmse_shifts(&truth, &phi, &[swapped]), 0.0);
        let t = trial(vec![0.1, 0.6], vec![cv(&[(1.0, 0.0), (0.0, 1.0)]), phi[1].clone()]);
        // |1 - i|^2 = 2, L T (P-1) = 2
        assert_abs_diff_eq!(rmse_shifts(&truth, &phi, &[t]), 1.0, epsilon = 1e-12);
    }

    fn config_json(estimator: &str) -> String {
        format!(
            r#"{{
                "geometry": {{"subarrays": [[0.0, 1.0, 2.0], [0.0, 1.0]], "displacements": [4.0]}},
                "scenario": {{"frequencies": [0.3], "snr_db": 40.0, "snapshots": 20}},
                "estimator": "{estimator}",
                "grid_size": 40,
                "trials": 1,
                "sweep": {{"variable": "snapshots", "values": [20]}},
                "seed": 3,
                "record_runtime": false
            }}"#
        )
    }

    #[test]
    fn noiseless_on_grid_source_has_zero_error() {
        let config: ScenarioConfig = serde_json::from_str(&config_json("cobras-grid")).unwrap();
        let result = run_scenario(&config).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.rows[0].failures, 0);
        assert_eq!(result.rows[0].rmse, 0.0);
        assert_eq!(result.rows[0].bias, 0.0);
        // The regularisation shrinks the modulus of the smaller subarray's
        // shift by a few percent; the phase is exact.
        let phi = &result.trials[0][0].shifts[0];
        let truth = true_shifts(&config.load_geometry().unwrap(), &[0.3]).unwrap();
        assert!((phi[1].arg() - truth[0][1].arg()).abs() < 1e-3);
        assert!(result.rows[0].rmse_phi < 0.05);
    }

    #[test]
    fn runs_are_reproducible() {
        let mut config: ScenarioConfig = serde_json::from_str(&config_json("cobras-gridless")).unwrap();
        config.trials = 3;
        config.scenario.snr_db = 5.0;
        config.sweep = Sweep {
            variable: SweepVariable::Snr,
            values: vec![0.0, 10.0],
        };
        let mut a = Vec::new();
        run_scenario(&config).unwrap().write_csv(&mut a).unwrap();
        let mut b = Vec::new();
        run_scenario(&config).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("sweep_value,rmse,bias,rmse_phi,failures,mean_runtime_s\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn sweep_variables_modify_the_scenario() {
        let mut config: ScenarioConfig = serde_json::from_str(&config_json("cobras-grid")).unwrap();
        config.scenario.frequencies = vec![0.5, 0.1];
        config.sweep.variable = SweepVariable::Separation;
        assert_eq!(config.scenario_at(0.3).unwrap().frequencies[1], 0.5 - 0.3);
        assert!(config.scenario_at(1.6).is_err());
        config.sweep.variable = SweepVariable::Correlation;
        assert_eq!(
            config.scenario_at(0.5).unwrap().correlation,
            Correlation::Coefficient(0.5)
        );
        config.sweep.variable = SweepVariable::Snapshots;
        assert!(config.scenario_at(2.5).is_err());
        config.sweep.values.clear();
        assert!(config.validate().is_err());
    }

    #[test]
    fn estimator_names_parse() {
        assert_eq!("cobras-grid".parse::<Estimator>().unwrap(), Estimator::CobrasGrid);
        assert_eq!(
            "lnuc1-reference".parse::<Estimator>().unwrap(),
            Estimator::Lnuc1Reference
        );
        assert!("music".parse::<Estimator>().is_err());
    }

    proptest! {
        #[test]
        fn metrics_ignore_source_order(
            truth in proptest::collection::vec(-1.0f64..1.0, 1..5),
            noise in proptest::collection::vec(-0.05f64..0.05, 5),
            rot in 0usize..5,
        ) {
            let l = truth.len();
            let est: Vec<f64> = truth.iter().zip(&noise).map(|(t, n)| t + n).collect();
            let mut shuffled = est.clone();
            shuffled.rotate_left(rot % l);
            let mut truth_shuffled = truth.clone();
            truth_shuffled.rotate_right(rot % l);
            let base = [trial(est, vec![])];
            let a = rmse_frequencies(&truth, &base);
            let b = rmse_frequencies(&truth, &[trial(shuffled.clone(), vec![])]);
            let c = rmse_frequencies(&truth_shuffled, &[trial(shuffled, vec![])]);
            prop_assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }

        #[test]
        fn wrap_distance_is_bounded(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let d = wrap_distance(a, b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - wrap_distance(b, a)).abs() < 1e-15);
        }
    }
}
