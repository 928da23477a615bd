//! Synthetic measurements for partly calibrated arrays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array_model::{full_steering_matrix, ArrayGeometry};
use crate::linalg::{hermitian_eigh, hermitian_map};
use crate::{CMatrix, CobrasError, Result, C64};

/// Source correlation: a common real coefficient for every pair, or a full
/// Hermitian template given as rows of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Correlation {
    Coefficient(f64),
    Matrix(Vec<Vec<[f64; 2]>>),
}

impl Default for Correlation {
    fn default() -> Self {
        Correlation::Coefficient(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScenario {
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub correlation: Correlation,
    pub snr_db: f64,
    pub snapshots: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SourceScenario {
    pub fn num_sources(&self) -> usize {
        self.frequencies.len()
    }

    /// Unit-diagonal source covariance template.
    pub fn covariance_template(&self) -> Result<CMatrix> {
        let l = self.num_sources();
        match &self.correlation {
            Correlation::Coefficient(rho) => source_covariance(l, *rho),
            Correlation::Matrix(rows) => {
                if rows.len() != l || rows.iter().any(|r| r.len() != l) {
                    return Err(CobrasError::InvalidInput(format!(
                        "correlation template must be {l}x{l}"
                    )));
                }
                let e = CMatrix::from_fn(l, l, |i, j| C64::new(rows[i][j][0], rows[i][j][1]));
                if (&e - e.adjoint()).norm() > 1e-12 {
                    return Err(CobrasError::InvalidInput(
                        "correlation template is not Hermitian".into(),
                    ));
                }
                if e.diagonal().iter().any(|d| (d - C64::new(1.0, 0.0)).norm() > 1e-12) {
                    return Err(CobrasError::InvalidInput(
                        "correlation template needs unit diagonal".into(),
                    ));
                }
                if hermitian_eigh(&e).0[0] < -1e-10 {
                    return Err(CobrasError::InvalidInput("correlation template is not PSD".into()));
                }
                Ok(e)
            }
        }
    }

    /// Noise variance `sigma^2` for the configured SNR.
    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }
}

/// `sigma^2 = 10^(-SNR/10)` for unit-power sources.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Measurement matrix `Y` (`M x N`).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: CMatrix,
}

impl SnapshotMatrix {
    pub fn new(data: CMatrix) -> Result<Self> {
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(CobrasError::InvalidInput("non-finite snapshot".into()));
        }
        Ok(Self { data })
    }

    pub fn num_snapshots(&self) -> usize {
        self.data.ncols()
    }
}

/// Sample covariance `YY^H / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    pub data: CMatrix,
    pub snapshots: usize,
}

/// Equicorrelated unit-diagonal template: `[[1, rho], [rho, 1]]` for two
/// sources.
pub fn source_covariance(l: usize, rho: f64) -> Result<CMatrix> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(CobrasError::InvalidInput(format!("correlation {rho} outside [0, 1]")));
    }
    if l == 0 {
        return Err(CobrasError::InvalidInput("need at least one source".into()));
    }
    Ok(CMatrix::from_fn(l, l, |i, j| {
        C64::new(if i == j { 1.0 } else { rho }, 0.0)
    }))
}

/// Matrix of i.i.d. standard circular complex Gaussian entries.
pub fn random_complex_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    })
}

/// Random generator for trial `stream` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `Y = A Psi + N` using the scenario seed.
pub fn simulate_snapshots(geom: &ArrayGeometry, scenario: &SourceScenario) -> Result<SnapshotMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    simulate_snapshots_with(geom, scenario, &mut rng)
}

pub fn simulate_snapshots_with<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    scenario: &SourceScenario,
    rng: &mut R,
) -> Result<SnapshotMatrix> {
    if scenario.snapshots == 0 {
        return Err(CobrasError::InvalidInput("need at least one snapshot".into()));
    }
    let a = full_steering_matrix(geom, &scenario.frequencies)?;
    let template = scenario.covariance_template()?;
    let root = hermitian_map(&template, |v| v.max(0.0).sqrt());
    let n = scenario.snapshots;
    let psi = root * random_complex_matrix(scenario.num_sources(), n, rng);
    let sigma = scenario.noise_variance().sqrt();
    let noise = random_complex_matrix(geom.num_sensors(), n, rng).scale(sigma);
    SnapshotMatrix::new(a * psi + noise)
}

pub fn sample_covariance(y: &SnapshotMatrix) -> SampleCovariance {
    let n = y.num_snapshots();
    let r = (&y.data * y.data.adjoint()).unscale(n as f64);
    SampleCovariance {
        data: (&r + r.adjoint()).scale(0.5),
        snapshots: n,
    }
}

/// Regularisation heuristic `lambda = sigma * sqrt(max_p M_p * ln M)`.
pub fn select_lambda(sigma: f64, geom: &ArrayGeometry) -> f64 {
    let largest = geom.subarray_sizes().into_iter().max().unwrap_or(1) as f64;
    let m = geom.num_sensors() as f64;
    sigma * (largest * m.ln()).sqrt()
}
