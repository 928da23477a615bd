//! Array geometry and the factorised steering model of a partly calibrated
//! array.
//!
//! All positions are expressed in half signal wavelengths, so a sensor at
//! position `r` responds to spatial frequency `mu` with phase `exp(j*pi*mu*r)`.
//! The same `pi` factor is used for intra-subarray positions and for the
//! subarray displacements, which makes `r = rho + eta` a phase identity.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{CMatrix, CVector, CobrasError, Result, C64};

/// Relative tolerance used when testing positions for integer multiples of a
/// baseline.
pub const BASELINE_TOLERANCE: f64 = 1e-9;
/// Smallest baseline searched by [`common_baseline_decomposition`].
pub const DEFAULT_MIN_BASELINE: f64 = 1e-3;

fn check_frequency(mu: f64) -> Result<()> {
    if !mu.is_finite() || !(-1.0..1.0).contains(&mu) {
        return Err(CobrasError::Domain(format!("spatial frequency {mu} outside [-1, 1)")));
    }
    Ok(())
}

/// Sensor positions of one internally calibrated subarray, relative to its
/// first sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SubarrayGeometry {
    intra_positions: Vec<f64>,
}

impl SubarrayGeometry {
    pub fn new(intra_positions: Vec<f64>) -> Result<Self> {
        match intra_positions.first() {
            None => {
                return Err(CobrasError::InvalidInput(
                    "subarray must contain at least one sensor".into(),
                ))
            }
            Some(&first) if first != 0.0 => {
                return Err(CobrasError::InvalidInput(format!(
                    "first intra-subarray position must be 0, got {first}"
                )))
            }
            _ => {}
        }
        if intra_positions.iter().any(|p| !p.is_finite()) {
            return Err(CobrasError::InvalidInput("non-finite sensor position".into()));
        }
        if intra_positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CobrasError::InvalidInput(
                "intra-subarray positions must be strictly increasing".into(),
            ));
        }
        Ok(Self { intra_positions })
    }

    pub fn positions(&self) -> &[f64] {
        &self.intra_positions
    }

    pub fn len(&self) -> usize {
        self.intra_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intra_positions.is_empty()
    }
}

impl<'de> Deserialize<'de> for SubarrayGeometry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        SubarrayGeometry::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Complete partly calibrated array: subarrays, unknown displacements and
/// gain/phase offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryDocument", into = "GeometryDocument")]
pub struct ArrayGeometry {
    subarrays: Vec<SubarrayGeometry>,
    /// Displacements of subarrays 2..P relative to subarray 1.
    displacements: Vec<f64>,
    /// Offsets of all P subarrays; the first is exactly one.
    offsets: Vec<C64>,
}

/// JSON layout of a geometry: offsets are `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeometryDocument {
    subarrays: Vec<Vec<f64>>,
    #[serde(default)]
    displacements: Vec<f64>,
    #[serde(default)]
    offsets: Option<Vec<[f64; 2]>>,
}

impl TryFrom<GeometryDocument> for ArrayGeometry {
    type Error = CobrasError;

    fn try_from(doc: GeometryDocument) -> Result<Self> {
        let subarrays = doc
            .subarrays
            .into_iter()
            .map(SubarrayGeometry::new)
            .collect::<Result<Vec<_>>>()?;
        let offsets = doc
            .offsets
            .map(|o| o.into_iter().map(|[re, im]| C64::new(re, im)).collect());
        ArrayGeometry::new(subarrays, doc.displacements, offsets)
    }
}

impl From<ArrayGeometry> for GeometryDocument {
    fn from(g: ArrayGeometry) -> Self {
        GeometryDocument {
            subarrays: g.subarrays.into_iter().map(|s| s.intra_positions).collect(),
            displacements: g.displacements,
            offsets: Some(g.offsets.into_iter().map(|c| [c.re, c.im]).collect()),
        }
    }
}

impl ArrayGeometry {
    /// Builds a geometry. `offsets` defaults to all ones; when given, its
    /// first entry must be exactly `1 + 0j`.
    pub fn new(subarrays: Vec<SubarrayGeometry>, displacements: Vec<f64>, offsets: Option<Vec<C64>>) -> Result<Self> {
        let p = subarrays.len();
        if p == 0 {
            return Err(CobrasError::InvalidInput("geometry needs at least one subarray".into()));
        }
        if displacements.len() != p - 1 {
            return Err(CobrasError::InvalidInput(format!(
                "expected {} displacements for {p} subarrays, got {}",
                p - 1,
                displacements.len()
            )));
        }
        if displacements.iter().any(|d| !d.is_finite()) {
            return Err(CobrasError::InvalidInput("non-finite displacement".into()));
        }
        let offsets = offsets.unwrap_or_else(|| vec![C64::new(1.0, 0.0); p]);
        if offsets.len() != p {
            return Err(CobrasError::InvalidInput(format!(
                "expected {p} offsets, got {}",
                offsets.len()
            )));
        }
        if offsets[0] != C64::new(1.0, 0.0) {
            return Err(CobrasError::InvalidInput(
                "offset of the reference subarray must be exactly 1".into(),
            ));
        }
        Ok(Self {
            subarrays,
            displacements,
            offsets,
        })
    }

    /// Single fully calibrated subarray.
    pub fn single(intra_positions: Vec<f64>) -> Result<Self> {
        Self::new(vec![SubarrayGeometry::new(intra_positions)?], vec![], None)
    }

    /// Builds a geometry from global sensor positions per subarray, the form
    /// used when describing measurement campaigns (`r = rho + eta`).
    pub fn from_global_positions(groups: &[Vec<f64>], offsets: Option<Vec<C64>>) -> Result<Self> {
        let first = groups
            .first()
            .and_then(|g| g.first())
            .copied()
            .ok_or_else(|| CobrasError::InvalidInput("empty geometry".into()))?;
        let mut subarrays = Vec::with_capacity(groups.len());
        let mut displacements = Vec::with_capacity(groups.len().saturating_sub(1));
        for (i, g) in groups.iter().enumerate() {
            let origin = *g
                .first()
                .ok_or_else(|| CobrasError::InvalidInput("empty subarray".into()))?;
            subarrays.push(SubarrayGeometry::new(g.iter().map(|r| r - origin).collect())?);
            if i > 0 {
                displacements.push(origin - first);
            }
        }
        Self::new(subarrays, displacements, offsets)
    }

    pub fn subarrays(&self) -> &[SubarrayGeometry] {
        &self.subarrays
    }

    pub fn displacements(&self) -> &[f64] {
        &self.displacements
    }

    pub fn offsets(&self) -> &[C64] {
        &self.offsets
    }

    /// Number of subarrays `P`.
    pub fn num_subarrays(&self) -> usize {
        self.subarrays.len()
    }

    /// Total number of sensors `M`.
    pub fn num_sensors(&self) -> usize {
        self.subarrays.iter().map(SubarrayGeometry::len).sum()
    }

    pub fn subarray_sizes(&self) -> Vec<usize> {
        self.subarrays.iter().map(SubarrayGeometry::len).collect()
    }

    /// Displacement of subarray `p` (zero for the reference subarray).
    pub fn displacement(&self, p: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            self.displacements[p - 1]
        }
    }

    /// For every sensor (in stacking order) the index of its subarray.
    pub fn sensor_subarray(&self) -> Vec<usize> {
        self.subarrays
            .iter()
            .enumerate()
            .flat_map(|(p, s)| std::iter::repeat_n(p, s.len()))
            .collect()
    }

    /// Global sensor positions `r = rho + eta`.
    pub fn global_positions(&self) -> Vec<f64> {
        self.subarrays
            .iter()
            .enumerate()
            .flat_map(|(p, s)| {
                let eta = self.displacement(p);
                s.positions().iter().map(move |r| r + eta)
            })
            .collect()
    }

    /// Steering entries of every sensor within its own subarray; the
    /// non-zero values of the subarray block matrix in stacking order.
    pub(crate) fn intra_phases(&self, mu: f64) -> Vec<C64> {
        self.subarrays
            .iter()
            .flat_map(|s| s.positions().iter().map(move |&r| C64::from_polar(1.0, PI * mu * r)))
            .collect()
    }
}

/// Sampled field of view.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(CobrasError::InvalidInput("frequency grid is empty".into()));
        }
        for &p in &points {
            check_frequency(p)?;
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CobrasError::InvalidInput("grid must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// Uniform grid `nu_k = -1 + 2k/K`, `k = 0..K`.
    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(CobrasError::InvalidInput("grid size must be positive".into()));
        }
        Self::new((0..size).map(|k| -1.0 + 2.0 * k as f64 / size as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl<'de> Deserialize<'de> for FrequencyGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        FrequencyGrid::new(Vec::<f64>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Integer lattice structure of a common-baseline geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDecomposition {
    pub delta: f64,
    /// Per subarray, `d_m` such that `rho_m = delta * d_m`.
    pub exponents: Vec<Vec<usize>>,
    /// Largest exponent `D`.
    pub degree: usize,
}

impl BaselineDecomposition {
    /// Flattened exponents in sensor stacking order.
    pub fn sensor_exponents(&self) -> Vec<usize> {
        self.exponents.iter().flatten().copied().collect()
    }
}

/// Steering vector `b(mu)` of one subarray.
pub fn subarray_steering_vector(sub: &SubarrayGeometry, mu: f64) -> Result<CVector> {
    check_frequency(mu)?;
    Ok(CVector::from_iterator(
        sub.len(),
        sub.positions().iter().map(|&r| C64::from_polar(1.0, PI * mu * r)),
    ))
}

/// Block-diagonal `M x P` matrix of subarray steering vectors.
pub fn subarray_block_matrix(geom: &ArrayGeometry, mu: f64) -> Result<CMatrix> {
    check_frequency(mu)?;
    Ok(block_matrix_unchecked(geom, mu))
}

pub(crate) fn block_matrix_unchecked(geom: &ArrayGeometry, mu: f64) -> CMatrix {
    let mut out = CMatrix::zeros(geom.num_sensors(), geom.num_subarrays());
    for (row, (p, v)) in geom
        .sensor_subarray()
        .into_iter()
        .zip(geom.intra_phases(mu))
        .enumerate()
    {
        out[(row, p)] = v;
    }
    out
}

/// Overcomplete `M x PK` subarray dictionary; column `k*P + p` holds
/// `b^(p)(nu_k)` on the rows of subarray `p`.
pub fn dictionary_matrix(geom: &ArrayGeometry, grid: &FrequencyGrid) -> CMatrix {
    let p = geom.num_subarrays();
    let mut out = CMatrix::zeros(geom.num_sensors(), p * grid.len());
    for (k, &nu) in grid.points().iter().enumerate() {
        let block = block_matrix_unchecked(geom, nu);
        out.columns_mut(k * p, p).copy_from(&block);
    }
    out
}

/// Subarray shift vector `phi(mu, eta)`.
pub fn shift_vector(geom: &ArrayGeometry, mu: f64) -> Result<CVector> {
    check_frequency(mu)?;
    Ok(shift_vector_unchecked(geom, mu))
}

pub(crate) fn shift_vector_unchecked(geom: &ArrayGeometry, mu: f64) -> CVector {
    CVector::from_iterator(
        geom.num_subarrays(),
        (0..geom.num_subarrays()).map(|p| {
            if p == 0 {
                C64::new(1.0, 0.0)
            } else {
                geom.offsets[p] * C64::from_polar(1.0, PI * mu * geom.displacement(p))
            }
        }),
    )
}

/// `PL x L` block-diagonal matrix of shift vectors.
pub fn shift_matrix(geom: &ArrayGeometry, mus: &[f64]) -> Result<CMatrix> {
    let p = geom.num_subarrays();
    let mut out = CMatrix::zeros(p * mus.len(), mus.len());
    for (l, &mu) in mus.iter().enumerate() {
        out.view_mut((l * p, l), (p, 1)).copy_from(&shift_vector(geom, mu)?);
    }
    Ok(out)
}

/// Full array steering matrix `A(mu, eta) = B(mu) Phi(mu, eta)`.
pub fn full_steering_matrix(geom: &ArrayGeometry, mus: &[f64]) -> Result<CMatrix> {
    let mut out = CMatrix::zeros(geom.num_sensors(), mus.len());
    for (l, &mu) in mus.iter().enumerate() {
        let col = subarray_block_matrix(geom, mu)? * shift_vector_unchecked(geom, mu);
        out.set_column(l, &col);
    }
    Ok(out)
}

/// Finds the largest baseline `delta >= min_delta` such that every
/// intra-subarray position is an integer multiple of it. Returns `None` when
/// no such baseline exists.
pub fn common_baseline_decomposition(geom: &ArrayGeometry, min_delta: f64) -> Option<BaselineDecomposition> {
    let positive: Vec<f64> = geom
        .subarrays()
        .iter()
        .flat_map(|s| s.positions().iter().copied())
        .filter(|&r| r > 0.0)
        .collect();
    let fits = |delta: f64| {
        positive.iter().all(|&r| {
            let q = r / delta;
            (delta * q.round() - r).abs() <= BASELINE_TOLERANCE * r.max(1.0)
        })
    };
    let delta = match positive.iter().copied().reduce(f64::min) {
        // Single-sensor subarrays only: any baseline works.
        None => 1.0,
        Some(smallest) => {
            let slack = 1.0 + 1e-9;
            let max_divisor = (smallest * slack / min_delta).floor() as usize;
            (1..=max_divisor)
                .map(|n| smallest / n as f64)
                .find(|&d| d * slack >= min_delta && fits(d))?
        }
    };
    let exponents: Vec<Vec<usize>> = geom
        .subarrays()
        .iter()
        .map(|s| s.positions().iter().map(|&r| (r / delta).round() as usize).collect())
        .collect();
    let degree = exponents.iter().flatten().copied().max().unwrap_or(0);
    Some(BaselineDecomposition {
        delta,
        exponents,
        degree,
    })
}

/// 0/1 selection matrix `J` (`M x (D+1)P`) with `B(z) = J Omega(z)`.
pub fn selection_matrix_j(geom: &ArrayGeometry, dec: &BaselineDecomposition) -> DMatrix<f64> {
    let p_count = geom.num_subarrays();
    let mut j = DMatrix::zeros(geom.num_sensors(), (dec.degree + 1) * p_count);
    for (row, (p, d)) in geom
        .sensor_subarray()
        .into_iter()
        .zip(dec.sensor_exponents())
        .enumerate()
    {
        j[(row, d * p_count + p)] = 1.0;
    }
    j
}

/// Stacked `[I, zI, ..., z^D I]^T` of size `(D+1)P x P`.
pub fn omega_matrix(z: C64, degree: usize, p: usize) -> CMatrix {
    let mut out = CMatrix::zeros((degree + 1) * p, p);
    let mut power = C64::new(1.0, 0.0);
    for d in 0..=degree {
        for i in 0..p {
            out[(d * p + i, i)] = power;
        }
        power *= z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fig2_geometry() -> ArrayGeometry {
        ArrayGeometry::from_global_positions(
            &[
                vec![0.0, 0.6, 2.3],
                vec![12.2, 13.0],
                vec![21.5, 22.8, 23.6],
                vec![37.6, 38.5, 41.1],
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn steering_vector_examples() {
        let s = SubarrayGeometry::new(vec![0.0, 1.0, 2.0]).unwrap();
        let v = subarray_steering_vector(&s, 0.0).unwrap();
        assert!(v.iter().all(|c| (*c - C64::new(1.0, 0.0)).norm() < 1e-15));

        let s = SubarrayGeometry::new(vec![0.0, 1.0]).unwrap();
        // mu = 1 is outside the half-open range; its alias -1 gives the same phase.
        let v = subarray_steering_vector(&s, -1.0).unwrap();
        assert_abs_diff_eq!((v[1] - C64::new(-1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);

        let s = SubarrayGeometry::new(vec![0.0, 0.6, 2.3]).unwrap();
        let v = subarray_steering_vector(&s, 0.5).unwrap();
        assert_eq!(v[0], C64::new(1.0, 0.0));
        assert_abs_diff_eq!((v[1] - C64::from_polar(1.0, 0.3 * PI)).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((v[2] - C64::from_polar(1.0, 1.15 * PI)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn frequency_domain_is_enforced() {
        let s = SubarrayGeometry::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(subarray_steering_vector(&s, 1.0), Err(CobrasError::Domain(_))));
        assert!(subarray_steering_vector(&s, -1.0).is_ok());
        assert!(FrequencyGrid::new(vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn subarray_validation() {
        assert!(SubarrayGeometry::new(vec![0.1, 1.0]).is_err());
        assert!(SubarrayGeometry::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(SubarrayGeometry::new(vec![]).is_err());
        let subs = vec![SubarrayGeometry::new(vec![0.0]).unwrap(); 2];
        assert!(ArrayGeometry::new(subs.clone(), vec![], None).is_err());
        let bad = Some(vec![C64::new(0.5, 0.0), C64::new(1.0, 0.0)]);
        assert!(ArrayGeometry::new(subs, vec![3.0], bad).is_err());
    }

    #[test]
    fn block_matrix_single_subarray_is_steering_vector() {
        let g = ArrayGeometry::single(vec![0.0, 1.0, 3.0]).unwrap();
        let b = subarray_block_matrix(&g, 0.3).unwrap();
        let v = subarray_steering_vector(&g.subarrays()[0], 0.3).unwrap();
        assert_eq!(b.ncols(), 1);
        assert_eq!(b.column(0), v.column(0));
    }

    #[test]
    fn block_matrix_at_zero_is_membership_indicator() {
        let g = fig2_geometry();
        let b = subarray_block_matrix(&g, 0.0).unwrap();
        let owner = g.sensor_subarray();
        for i in 0..g.num_sensors() {
            for p in 0..g.num_subarrays() {
                let expected = if owner[i] == p { 1.0 } else { 0.0 };
                assert_eq!(b[(i, p)], C64::new(expected, 0.0));
            }
        }
    }

    #[test]
    fn dictionary_index_bookkeeping() {
        let g = ArrayGeometry::from_global_positions(
            &[vec![0.0, 1.0, 3.0], vec![17.4, 18.4, 19.4, 21.4], vec![24.8, 25.8]],
            None,
        )
        .unwrap();
        let grid = FrequencyGrid::uniform(10).unwrap();
        let dict = dictionary_matrix(&g, &grid);
        assert_eq!(dict.shape(), (9, 30));
        let mut row0 = 0;
        for p in 0..3 {
            let sub = &g.subarrays()[p];
            for (k, &nu) in grid.points().iter().enumerate() {
                let b = subarray_steering_vector(sub, nu).unwrap();
                let col = dict.column(k * 3 + p);
                for i in 0..9 {
                    let expected = if i >= row0 && i < row0 + sub.len() {
                        b[i - row0]
                    } else {
                        C64::new(0.0, 0.0)
                    };
                    assert_eq!(col[i], expected);
                }
            }
            row0 += sub.len();
        }
        let single = dictionary_matrix(&g, &FrequencyGrid::new(vec![0.25]).unwrap());
        assert_eq!(single, subarray_block_matrix(&g, 0.25).unwrap());
    }

    #[test]
    fn shift_vector_examples() {
        let g = ArrayGeometry::from_global_positions(
            &[vec![0.0, 1.0, 2.0], vec![10.0, 11.0, 12.0], vec![25.0, 26.0, 27.0]],
            None,
        )
        .unwrap();
        let phi = shift_vector(&g, 0.2).unwrap();
        let expected = [1.0, 1.0, -1.0];
        for (a, e) in phi.iter().zip(expected) {
            assert_abs_diff_eq!((a - C64::new(e, 0.0)).norm(), 0.0, epsilon = 1e-12);
        }

        let alpha = vec![
            C64::new(1.0, 0.0),
            C64::from_polar(0.7, 2.0 * PI / 3.0),
            C64::from_polar(1.2, PI / 4.0),
        ];
        let g = ArrayGeometry::from_global_positions(
            &[vec![0.0, 1.0, 3.0], vec![17.4, 18.4, 19.4, 21.4], vec![24.8, 25.8]],
            Some(alpha.clone()),
        )
        .unwrap();
        let phi = shift_vector(&g, 0.0).unwrap();
        for (a, e) in phi.iter().zip(&alpha) {
            assert_abs_diff_eq!((a - e).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn shift_matrix_structure() {
        let g = fig2_geometry();
        let mus = [0.1, -0.4];
        let phi = shift_matrix(&g, &mus).unwrap();
        assert_eq!(phi.shape(), (8, 2));
        for (l, &mu) in mus.iter().enumerate() {
            let v = shift_vector(&g, mu).unwrap();
            for r in 0..8 {
                let expected = if r / 4 == l { v[r % 4] } else { C64::new(0.0, 0.0) };
                assert_eq!(phi[(r, l)], expected);
            }
        }
    }

    #[test]
    fn full_steering_matches_global_positions() {
        let g = fig2_geometry();
        let mus = [0.5011, 0.4672, -0.2007];
        let a = full_steering_matrix(&g, &mus).unwrap();
        let r = g.global_positions();
        for (l, &mu) in mus.iter().enumerate() {
            for (i, &ri) in r.iter().enumerate() {
                let e = C64::from_polar(1.0, PI * mu * ri);
                assert_abs_diff_eq!((a[(i, l)] - e).norm(), 0.0, epsilon = 1e-12);
            }
        }
        // Both sides of the factorisation.
        let b = {
            let mut b = CMatrix::zeros(g.num_sensors(), 4 * mus.len());
            for (l, &mu) in mus.iter().enumerate() {
                b.columns_mut(4 * l, 4)
                    .copy_from(&subarray_block_matrix(&g, mu).unwrap());
            }
            b
        };
        let prod = b * shift_matrix(&g, &mus).unwrap();
        assert!((prod - a).norm() < 1e-12);
    }

    #[test]
    fn baseline_decomposition_examples() {
        let g = ArrayGeometry::single(vec![0.0, 1.0, 4.0]).unwrap();
        let d = common_baseline_decomposition(&g, DEFAULT_MIN_BASELINE).unwrap();
        assert_eq!(d.delta, 1.0);
        assert_eq!(d.exponents, vec![vec![0, 1, 4]]);
        assert_eq!(d.degree, 4);

        let g = ArrayGeometry::from_global_positions(&[vec![0.0, 0.5, 1.5], vec![4.0, 4.5, 5.5]], None).unwrap();
        let d = common_baseline_decomposition(&g, DEFAULT_MIN_BASELINE).unwrap();
        assert_abs_diff_eq!(d.delta, 0.5, epsilon = 1e-12);
        assert_eq!(d.exponents[0], vec![0, 1, 3]);

        let g = fig2_geometry();
        assert!(common_baseline_decomposition(&g, 0.5).is_none());
        let d = common_baseline_decomposition(&g, 0.1).unwrap();
        assert_abs_diff_eq!(d.delta, 0.1, epsilon = 1e-12);
        let d = common_baseline_decomposition(&g, DEFAULT_MIN_BASELINE).unwrap();
        assert_abs_diff_eq!(d.delta, 0.1, epsilon = 1e-12);
        assert_eq!(d.degree, 35);
        for (sub, exps) in g.subarrays().iter().zip(&d.exponents) {
            for (&r, &e) in sub.positions().iter().zip(exps) {
                assert!((d.delta * e as f64 - r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn selection_matrix_examples() {
        let g = ArrayGeometry::single(vec![0.0, 1.0]).unwrap();
        let d = common_baseline_decomposition(&g, DEFAULT_MIN_BASELINE).unwrap();
        let j = selection_matrix_j(&g, &d);
        assert_eq!(j, DMatrix::<f64>::identity(2, 2));

        let ula = ArrayGeometry::from_global_positions(
            &[vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0], vec![6.0, 7.0, 8.0]],
            None,
        )
        .unwrap();
        let d = common_baseline_decomposition(&ula, DEFAULT_MIN_BASELINE).unwrap();
        let j = selection_matrix_j(&ula, &d);
        for r in 0..j.nrows() {
            assert_eq!(j.row(r).sum(), 1.0);
        }
        for c in 0..j.ncols() {
            assert!(j.column(c).sum() <= 1.0);
        }
        let jc = j.map(|x| C64::new(x, 0.0));
        for mu in [-0.93, -0.41, 0.0, 0.377, 0.88] {
            let z = C64::from_polar(1.0, PI * mu * d.delta);
            let lhs = &jc * omega_matrix(z, d.degree, 3);
            let rhs = subarray_block_matrix(&ula, mu).unwrap();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn geometry_json_round_trip() {
        let json = r#"{"subarrays": [[0, 1, 3], [0, 1, 2, 4], [0, 1]],
                       "displacements": [17.4, 24.8],
                       "offsets": [[1, 0], [-0.35, 0.606], [0.848, 0.848]]}"#;
        let g: ArrayGeometry = serde_json::from_str(json).unwrap();
        assert_eq!(g.num_sensors(), 9);
        assert_eq!(g.subarray_sizes(), vec![3, 4, 2]);
        let back: ArrayGeometry = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"subarrays": [[0.5, 1]], "displacements": []}"#;
        assert!(serde_json::from_str::<ArrayGeometry>(bad).is_err());
    }
}
