//! Dual certificates and gridless estimation for common-baseline arrays.
//!
//! The dual of the covariance-form problem bounds the matrix polynomial
//! `M(z) = B^H(z) Y0 B(z)` by the identity. On a grid this is one small LMI
//! per grid point ([`solve_grid_dual`]); for subarrays on a common baseline
//! the continuum version is enforced through a Gram matrix `H`
//! ([`solve_gridless_dual`]). Frequencies are the unit-circle roots of
//! `det(I - M(z))`.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::array_model::{
    block_matrix_unchecked, common_baseline_decomposition, selection_matrix_j, ArrayGeometry, BaselineDecomposition,
    FrequencyGrid, DEFAULT_MIN_BASELINE,
};
use crate::cobras_grid::{solve_cobras_covariance_form, Atoms, EstimatorOptions, SolveReport};
use crate::conic::{BlockDiagPSD, BlockId, ConicProblem, FreeVar, HermitianMatrix, Term};
use crate::linalg::{hermitian_eigh, trace_re};
use crate::signal_sim::SampleCovariance;
use crate::{CMatrix, CVector, CobrasError, Result, C64};

/// Angular distance below which two roots are treated as one.
pub const ROOT_MERGE_TOLERANCE: f64 = 1e-4;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Dual variables `(Y0, Y1)` of the covariance-form problem.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    pub upsilon0: HermitianMatrix,
    pub upsilon1: CMatrix,
    /// `-2 Re Tr(Y1) - lambda Tr(Y0)`.
    pub objective: f64,
    pub report: SolveReport,
}

impl DualCertificate {
    /// `I - B^H(nu) Y0 B(nu)`.
    pub fn slackness_matrix(&self, geom: &ArrayGeometry, nu: f64) -> CMatrix {
        let b = block_matrix_unchecked(geom, nu);
        let p = b.ncols();
        CMatrix::identity(p, p) - b.adjoint() * self.upsilon0.as_matrix() * b
    }

    /// Smallest eigenvalue of `[[R, Y1], [Y1^H, Y0]]`.
    pub fn feasibility(&self, r_hat: &CMatrix) -> f64 {
        let m = r_hat.nrows();
        let mut big = CMatrix::zeros(2 * m, 2 * m);
        big.view_mut((0, 0), (m, m)).copy_from(r_hat);
        big.view_mut((0, m), (m, m)).copy_from(&self.upsilon1);
        big.view_mut((m, 0), (m, m)).copy_from(&self.upsilon1.adjoint());
        big.view_mut((m, m), (m, m)).copy_from(self.upsilon0.as_matrix());
        hermitian_eigh(&big).0[0]
    }
}

/// Gram matrix `H` of the constant polynomial together with the dual
/// variables of the gridless problem.
#[derive(Debug, Clone)]
pub struct GramCertificate {
    pub h: HermitianMatrix,
    pub dual: DualCertificate,
    pub decomposition: BaselineDecomposition,
}

/// Violations of the Gram certificate constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GramResiduals {
    /// `max |blktr(H) - I|`.
    pub trace: f64,
    /// `max_{i != 0} |blktr(Xi_i H)|`.
    pub off_diagonal: f64,
    /// Smallest eigenvalue of `H - J^H Y0 J`.
    pub min_eigenvalue: f64,
}

impl GramCertificate {
    pub fn residuals(&self, geom: &ArrayGeometry) -> GramResiduals {
        let p = geom.num_subarrays();
        let d = self.decomposition.degree as isize;
        let h = self.h.as_matrix();
        let mut trace = 0.0f64;
        let mut off = 0.0f64;
        for i in -d..=d {
            let k = block_trace_unchecked(h, p, i);
            if i == 0 {
                trace = (k - CMatrix::identity(p, p)).camax();
            } else {
                off = off.max(k.camax());
            }
        }
        let j = gram_selection(geom, &self.decomposition);
        let f = j.adjoint() * self.dual.upsilon0.as_matrix() * &j;
        GramResiduals {
            trace,
            off_diagonal: off,
            min_eigenvalue: hermitian_eigh(&(h - f)).0[0],
        }
    }
}

/// Trigonometric matrix polynomial `sum_{i=-D}^{D} K_i z^i` with
/// `K_{-i} = K_i^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPolynomial {
    coefficients: Vec<CMatrix>,
}

impl MatrixPolynomial {
    /// Builds from `K_{-D}, ..., K_D`.
    pub fn new(coefficients: Vec<CMatrix>) -> Result<Self> {
        if coefficients.len() % 2 == 0 {
            return Err(CobrasError::InvalidInput("need an odd number of coefficients".into()));
        }
        let p = coefficients[0].nrows();
        if coefficients.iter().any(|c| c.shape() != (p, p)) {
            return Err(CobrasError::InvalidInput(
                "coefficients must be square and equal in size".into(),
            ));
        }
        let n = coefficients.len();
        let scale = coefficients.iter().map(|c| c.camax()).fold(1.0, f64::max);
        for i in 0..n {
            if (&coefficients[i] - coefficients[n - 1 - i].adjoint()).camax() > 1e-10 * scale {
                return Err(CobrasError::InvalidInput(
                    "coefficients are not Hermitian symmetric".into(),
                ));
            }
        }
        Ok(Self { coefficients })
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() / 2
    }

    pub fn size(&self) -> usize {
        self.coefficients[0].nrows()
    }

    /// `K_i` for `i` in `-D..=D`.
    pub fn coefficient(&self, i: isize) -> &CMatrix {
        &self.coefficients[(i + self.degree() as isize) as usize]
    }

    pub fn evaluate(&self, z: C64) -> CMatrix {
        let d = self.degree() as i32;
        let mut out = CMatrix::zeros(self.size(), self.size());
        for (idx, k) in self.coefficients.iter().enumerate() {
            out += k * z.powi(idx as i32 - d);
        }
        out
    }

    /// Smallest eigenvalue of `I - M(e^{j theta})`.
    pub fn slackness(&self, theta: f64) -> f64 {
        let p = self.size();
        let m = CMatrix::identity(p, p) - self.evaluate(C64::from_polar(1.0, theta));
        hermitian_eigh(&m).0[0]
    }

    /// Derivative of [`Self::slackness`] where the smallest eigenvalue is
    /// simple.
    fn slackness_derivative(&self, theta: f64) -> f64 {
        let p = self.size();
        let z = C64::from_polar(1.0, theta);
        let d = self.degree() as i32;
        let m = CMatrix::identity(p, p) - self.evaluate(z);
        let (_, vecs) = hermitian_eigh(&m);
        let v = vecs.column(0);
        let mut dm = CMatrix::zeros(p, p);
        for (idx, k) in self.coefficients.iter().enumerate() {
            let i = idx as i32 - d;
            dm += k * (I * i as f64 * z.powi(i));
        }
        -(v.adjoint() * dm * v)[(0, 0)].re
    }

    /// Local minimiser of [`Self::slackness`] near `theta`.
    fn polish(&self, theta: f64, window: f64) -> f64 {
        let coarse = golden_min(|t| self.slackness(t), theta - window, theta + window, 1e-7);
        // Bisection on the derivative resolves flat minima to full precision.
        let (mut a, mut b) = (coarse - 1e-6, coarse + 1e-6);
        if self.slackness_derivative(a) >= 0.0 || self.slackness_derivative(b) <= 0.0 {
            return coarse;
        }
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if self.slackness_derivative(mid) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Sum of the `P x P` blocks on block diagonal `i` of `F`, i.e. the
/// coefficient of `z^i` in `Omega^H(z) F Omega(z)`.
pub fn block_trace(f: &CMatrix, p: usize, i: isize) -> Result<CMatrix> {
    if p == 0 || f.nrows() != f.ncols() || f.nrows() % p != 0 {
        return Err(CobrasError::InvalidInput(format!(
            "matrix of size {}x{} is not made of {p}x{p} blocks",
            f.nrows(),
            f.ncols()
        )));
    }
    let d = (f.nrows() / p) as isize - 1;
    if i.abs() > d {
        return Err(CobrasError::InvalidInput(format!(
            "block diagonal {i} outside [-{d}, {d}]"
        )));
    }
    Ok(block_trace_unchecked(f, p, i))
}

fn block_trace_unchecked(f: &CMatrix, p: usize, i: isize) -> CMatrix {
    let blocks = (f.nrows() / p) as isize;
    let mut out = CMatrix::zeros(p, p);
    for a in 0..blocks {
        let b = a + i;
        if (0..blocks).contains(&b) {
            out += f.view((a as usize * p, b as usize * p), (p, p));
        }
    }
    out
}

fn gram_selection(geom: &ArrayGeometry, dec: &BaselineDecomposition) -> CMatrix {
    selection_matrix_j(geom, dec).map(|v| C64::new(v, 0.0))
}

fn decomposition(geom: &ArrayGeometry) -> Result<BaselineDecomposition> {
    common_baseline_decomposition(geom, DEFAULT_MIN_BASELINE)
        .ok_or_else(|| CobrasError::NotApplicable("subarray positions do not share a common baseline".into()))
}

fn check_inputs(r_hat: &SampleCovariance, geom: &ArrayGeometry, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CobrasError::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if r_hat.data.nrows() != geom.num_sensors() {
        return Err(CobrasError::InvalidInput(format!(
            "covariance has {} rows but the array has {} sensors",
            r_hat.data.nrows(),
            geom.num_sensors()
        )));
    }
    Ok(())
}

fn dual_objective(u0: &CMatrix, u1: &CMatrix, lambda: f64) -> f64 {
    -2.0 * trace_re(u1) - lambda * trace_re(u0)
}

/// Free variables of a Hermitian `M x M` matrix: diagonal, then real and
/// imaginary parts of the upper triangle.
struct HermitianVars {
    diag: Vec<FreeVar>,
    upper: Vec<(usize, usize, FreeVar, FreeVar)>,
}

/// Grid dual: `max -2 Re Tr(Y1) - lambda Tr(Y0)` subject to
/// `[[R, Y1], [Y1^H, Y0]] PSD` and `I - B_k^H Y0 B_k PSD` for every grid
/// point. Also returns the multipliers of the per-grid-point constraints,
/// which form the primal block-diagonal `S`.
pub fn solve_grid_dual_with_primal(
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<(DualCertificate, BlockDiagPSD)> {
    check_inputs(r_hat, geom, lambda)?;
    let m = geom.num_sensors();
    let p = geom.num_subarrays();
    let atoms = Atoms::subarray(geom, grid);
    let mut problem = ConicProblem::new();
    let x1 = problem.add_block("X1", 2 * m);
    let t_ids: Vec<BlockId> = (0..grid.len()).map(|k| problem.add_block(format!("T{k}"), p)).collect();

    let mut constant = CMatrix::zeros(2 * m, 2 * m);
    constant.view_mut((0, 0), (m, m)).copy_from(&r_hat.data);
    problem.set_lmi_constant(x1, &constant);
    for &t in &t_ids {
        problem.set_lmi_constant(t, &CMatrix::identity(p, p));
    }

    let y0 = HermitianVars {
        diag: (0..m).map(|_| problem.add_free_variable(-lambda)).collect(),
        upper: (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, problem.add_free_variable(0.0), problem.add_free_variable(0.0)))
            .collect(),
    };
    let mut y1 = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let obj = if i == j { -2.0 } else { 0.0 };
            let re = problem.add_free_variable(obj);
            let im = problem.add_free_variable(0.0);
            problem.add_lmi_entry(re, x1, i, m + j, ONE);
            problem.add_lmi_entry(im, x1, i, m + j, I);
            y1.push((i, j, re, im));
        }
    }

    // Y0 enters the top block directly and every T_k through -B_k^H Y0 B_k.
    let sub = geom.sensor_subarray();
    for (i, &v) in y0.diag.iter().enumerate() {
        problem.add_lmi_entry(v, x1, m + i, m + i, ONE);
        for (k, &t) in t_ids.iter().enumerate() {
            let b = atoms.blocks[k][(i, sub[i])];
            problem.add_lmi_entry(v, t, sub[i], sub[i], -b.conj() * b);
        }
    }
    for &(i, j, re, im) in &y0.upper {
        problem.add_lmi_entry(re, x1, m + i, m + j, ONE);
        problem.add_lmi_entry(im, x1, m + i, m + j, I);
        let (pi, pj) = (sub[i], sub[j]);
        for (k, &t) in t_ids.iter().enumerate() {
            let bi = atoms.blocks[k][(i, pi)];
            let bj = atoms.blocks[k][(j, pj)];
            // Y0_ij = a + jb and Y0_ji = a - jb contribute to entries
            // (pi, pj) and (pj, pi) of B^H Y0 B.
            let c = bi.conj() * bj;
            if pi == pj {
                problem.add_lmi_entry(re, t, pi, pi, -(c + c.conj()));
                problem.add_lmi_entry(im, t, pi, pi, -(I * c - I * c.conj()));
            } else {
                problem.add_lmi_entry(re, t, pi, pj, -c);
                problem.add_lmi_entry(im, t, pi, pj, -(I * c));
            }
        }
    }

    let sol = opts.run(&problem)?;
    let mut u0 = CMatrix::zeros(m, m);
    for (i, &v) in y0.diag.iter().enumerate() {
        u0[(i, i)] = C64::new(sol.variable(v), 0.0);
    }
    for &(i, j, re, im) in &y0.upper {
        let v = C64::new(sol.variable(re), sol.variable(im));
        u0[(i, j)] = v;
        u0[(j, i)] = v.conj();
    }
    let mut u1 = CMatrix::zeros(m, m);
    for &(i, j, re, im) in &y1 {
        u1[(i, j)] = C64::new(sol.variable(re), sol.variable(im));
    }
    let s_hat = BlockDiagPSD::project(t_ids.iter().map(|&t| sol.block(t).clone()).collect())?;
    let certificate = DualCertificate {
        objective: dual_objective(&u0, &u1, lambda),
        upsilon0: HermitianMatrix::symmetrize(&u0),
        upsilon1: u1,
        report: SolveReport::from(&sol),
    };
    Ok((certificate, s_hat))
}

/// Grid dual certificate; see [`solve_grid_dual_with_primal`].
pub fn solve_grid_dual(
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<DualCertificate> {
    solve_grid_dual_with_primal(r_hat, geom, grid, lambda, opts).map(|(c, _)| c)
}

/// `Tr(S_k (I - B_k^H Y0 B_k))` for every grid point.
pub fn complementary_slackness(
    cert: &DualCertificate,
    s_hat: &BlockDiagPSD,
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
) -> Vec<f64> {
    grid.points()
        .iter()
        .zip(s_hat.blocks())
        .map(|(&nu, s)| trace_re(&(s * cert.slackness_matrix(geom, nu))))
        .collect()
}

/// Gridless dual: the per-grid-point constraints of the grid dual are
/// replaced by `H - J^H Y0 J PSD` with `blktr(H) = I` and
/// `blktr(Xi_i H) = 0` for `i != 0`, which enforces `M(z) <= I` on the whole
/// unit circle.
pub fn solve_gridless_dual(
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    lambda: f64,
    opts: &EstimatorOptions,
) -> Result<GramCertificate> {
    check_inputs(r_hat, geom, lambda)?;
    let dec = decomposition(geom)?;
    let m = geom.num_sensors();
    let p = geom.num_subarrays();
    let d = dec.degree;
    let n = (d + 1) * p;

    let mut problem = ConicProblem::new();
    let x1 = problem.add_block("X1", 2 * m);
    let x2 = problem.add_block("X2", n);
    for i in 0..m {
        problem.add_objective(Term::real(x1, i, m + i, 2.0));
        problem.add_objective(Term::real(x1, m + i, m + i, lambda));
    }
    problem.add_hermitian_equality(x1, 0, 0, &r_hat.data, |_, _| Vec::new());

    // Column of J selected by each sensor.
    let sub = geom.sensor_subarray();
    let exps = dec.sensor_exponents();
    for i in 0..=d {
        for a in 0..p {
            let start = if i == 0 { a } else { 0 };
            for b in start..p {
                let mut terms = Vec::new();
                for blk in 0..=(d - i) {
                    terms.push(Term::real(x2, blk * p + a, (blk + i) * p + b, 1.0));
                }
                for s in 0..m {
                    for t in 0..m {
                        if sub[s] == a && sub[t] == b && exps[t] as isize - exps[s] as isize == i as isize {
                            terms.push(Term::real(x1, m + s, m + t, 1.0));
                        }
                    }
                }
                let target = if i == 0 && a == b { 1.0 } else { 0.0 };
                if i == 0 && a == b {
                    problem.add_real_equality(&terms, target);
                } else {
                    problem.add_complex_equality(&terms, C64::new(target, 0.0));
                }
            }
        }
    }

    let sol = opts.run(&problem)?;
    let x1v = sol.block(x1);
    let u0 = x1v.view((m, m), (m, m)).into_owned();
    let u1 = x1v.view((0, m), (m, m)).into_owned();
    let j = gram_selection(geom, &dec);
    let h = sol.block(x2) + j.adjoint() * &u0 * &j;
    let dual = DualCertificate {
        objective: dual_objective(&u0, &u1, lambda),
        upsilon0: HermitianMatrix::symmetrize(&u0),
        upsilon1: u1,
        report: SolveReport::from(&sol),
    };
    Ok(GramCertificate {
        h: HermitianMatrix::symmetrize(&h),
        dual,
        decomposition: dec,
    })
}

/// `M(z) = B^H(z) Y0 B(z)` with coefficients `K_i = blktr(Xi_i J^H Y0 J)`.
pub fn dual_polynomial(cert: &DualCertificate, geom: &ArrayGeometry) -> Result<MatrixPolynomial> {
    let dec = decomposition(geom)?;
    Ok(polynomial_from(cert, geom, &dec))
}

fn polynomial_from(cert: &DualCertificate, geom: &ArrayGeometry, dec: &BaselineDecomposition) -> MatrixPolynomial {
    let p = geom.num_subarrays();
    let j = gram_selection(geom, dec);
    let f = j.adjoint() * cert.upsilon0.as_matrix() * &j;
    let d = dec.degree as isize;
    let mut coefficients: Vec<CMatrix> = (-d..=d).map(|i| block_trace_unchecked(&f, p, i)).collect();
    // Exact Hermitian symmetry of the sequence.
    let n = coefficients.len();
    for i in 0..n / 2 {
        let avg = (&coefficients[n - 1 - i] + coefficients[i].adjoint()).scale(0.5);
        coefficients[i] = avg.adjoint();
        coefficients[n - 1 - i] = avg;
    }
    let mid = n / 2;
    coefficients[mid] = (&coefficients[mid] + coefficients[mid].adjoint()).scale(0.5);
    MatrixPolynomial { coefficients }
}

type Poly = Vec<C64>;

fn poly_mul(a: &[C64], b: &[C64]) -> Poly {
    let mut out = vec![ZERO; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == ZERO {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_axpy(acc: &mut Poly, sign: f64, b: &[C64]) {
    if acc.len() < b.len() {
        acc.resize(b.len(), ZERO);
    }
    for (a, v) in acc.iter_mut().zip(b) {
        *a += v * sign;
    }
}

/// Coefficients (ascending powers) of `det(z^D (I - M(z)))`, a polynomial of
/// degree at most `2DP`, by cofactor expansion with memoised minors.
pub fn determinant_polynomial(poly: &MatrixPolynomial) -> Vec<C64> {
    let p = poly.size();
    let d = poly.degree();
    let entries: Vec<Vec<Poly>> = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| {
                    let mut e: Poly = (0..=2 * d).map(|idx| -poly.coefficients[idx][(a, b)]).collect();
                    if a == b {
                        e[d] += ONE;
                    }
                    e
                })
                .collect()
        })
        .collect();
    let mut memo: HashMap<u32, Poly> = HashMap::new();
    minor_det(&entries, 0, 0, &mut memo)
}

fn minor_det(entries: &[Vec<Poly>], row: usize, used: u32, memo: &mut HashMap<u32, Poly>) -> Poly {
    let p = entries.len();
    if row == p {
        return vec![ONE];
    }
    if let Some(v) = memo.get(&used) {
        return v.clone();
    }
    let mut acc: Poly = vec![ZERO];
    let mut sign = 1.0;
    for col in 0..p {
        if used & (1 << col) != 0 {
            continue;
        }
        let sub = minor_det(entries, row + 1, used | (1 << col), memo);
        poly_axpy(&mut acc, sign, &poly_mul(&entries[row][col], &sub));
        sign = -sign;
    }
    memo.insert(used, acc.clone());
    acc
}

/// All roots of a polynomial given in ascending powers, via the
/// eigenvalues of its companion matrix.
pub fn polynomial_roots(coeffs: &[C64]) -> Vec<C64> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let mut hi = coeffs.len() - 1;
    while coeffs[hi].norm() <= 1e-13 * scale {
        hi -= 1;
    }
    let mut lo = 0;
    while coeffs[lo].norm() <= 1e-13 * scale {
        lo += 1;
    }
    let mut roots = vec![ZERO; lo];
    let n = hi - lo;
    if n == 0 {
        return roots;
    }
    let lead = coeffs[hi];
    let mut companion = CMatrix::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = ONE;
    }
    for i in 0..n {
        companion[(i, n - 1)] = -coeffs[lo + i] / lead;
    }
    let eig = companion
        .schur()
        .eigenvalues()
        .expect("complex Schur form always yields eigenvalues");
    roots.extend(eig.iter().copied());
    roots
}

/// A unit-circle root candidate of `det(I - M(z))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualRoot {
    /// Root after projection onto the unit circle.
    #[serde(serialize_with = "serialize_c64")]
    pub z: C64,
    pub angle: f64,
    /// Modulus of the raw root before projection.
    pub modulus: f64,
    /// Smallest eigenvalue of `I - M(z)` at the projected root.
    pub slackness: f64,
}

fn serialize_c64<S: serde::Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// Roots selected from the determinant polynomial.
#[derive(Debug, Clone)]
pub struct RootSelection {
    pub roots: Vec<DualRoot>,
    /// Every root of the determinant polynomial.
    pub all_roots: Vec<C64>,
    /// Fewer than the requested number of distinct root pairs were found.
    pub underestimated: bool,
}

fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Golden-section minimisation of `f` on `[a, b]`.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Finds the roots of `det(z^D (I - M(z)))`, polishes their angles by
/// locally minimising the smallest eigenvalue of `I - M(e^{j theta})`,
/// merges roots closer than [`ROOT_MERGE_TOLERANCE`] (conjugate-reciprocal
/// pairs and split double roots) and keeps the `L` closest to the unit
/// circle.
pub fn root_dual_polynomial(poly: &MatrixPolynomial, num_sources: usize) -> Result<RootSelection> {
    let (mut picked, all_roots) = ranked_roots(poly)?;
    let underestimated = picked.len() < num_sources;
    picked.truncate(num_sources);
    Ok(RootSelection {
        roots: picked,
        all_roots,
        underestimated,
    })
}

/// All distinct roots (one per merged cluster) ranked by distance from the
/// unit circle, then slackness; also returns the raw roots.
fn ranked_roots(poly: &MatrixPolynomial) -> Result<(Vec<DualRoot>, Vec<C64>)> {
    if poly.degree() == 0 {
        return Err(CobrasError::InvalidInput("polynomial degree must be at least 1".into()));
    }
    let all_roots = polynomial_roots(&determinant_polynomial(poly));
    let mut candidates: Vec<(f64, C64)> = all_roots
        .iter()
        .filter(|z| z.norm() > 0.0 && z.norm().is_finite())
        .map(|&z| (z.norm().ln().abs(), z))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut picked: Vec<DualRoot> = Vec::new();
    for (dist, z) in candidates {
        let theta = z.arg();
        let window = (4.0 * dist).clamp(0.02, 0.1);
        let polished = wrap_angle(poly.polish(theta, window));
        let close = |r: &DualRoot| wrap_angle(r.angle - polished).abs() < ROOT_MERGE_TOLERANCE;
        if let Some(existing) = picked.iter_mut().find(|r| close(r)) {
            existing.modulus = if (existing.modulus.ln()).abs() <= dist {
                existing.modulus
            } else {
                z.norm()
            };
            continue;
        }
        picked.push(DualRoot {
            z: C64::from_polar(1.0, polished),
            angle: polished,
            modulus: z.norm(),
            slackness: poly.slackness(polished),
        });
    }
    picked.sort_by(|a, b| {
        a.modulus
            .ln()
            .abs()
            .total_cmp(&b.modulus.ln().abs())
            .then(a.slackness.total_cmp(&b.slackness))
    });
    Ok((picked, all_roots))
}

/// Keeps the `num_sources` candidates with the largest power. The compact
/// problem is re-solved on the frequencies of the best `2 L` candidates;
/// by complementary slackness its support lies among the touching points
/// of the dual polynomial, so the block traces rank them. Breaks ties the
/// circle distance cannot, such as a ghost touching point between two
/// coherent sources.
fn select_by_power(
    ranked: Vec<DualRoot>,
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    delta: f64,
    lambda: f64,
    num_sources: usize,
    opts: &EstimatorOptions,
) -> Result<Vec<DualRoot>> {
    if ranked.len() <= num_sources {
        return Ok(ranked);
    }
    let mut pool: Vec<DualRoot> = ranked.into_iter().take(2 * num_sources).collect();
    let zs: Vec<C64> = pool.iter().map(|r| r.z).collect();
    let nus = frequencies_from_roots(&zs, delta)?.frequencies;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| nus[a].total_cmp(&nus[b]));
    let grid = FrequencyGrid::new(order.iter().map(|&i| nus[i]).collect())?;
    let sol = solve_cobras_covariance_form(r_hat, geom, &grid, lambda, opts)?;
    let mut power = vec![0.0; pool.len()];
    for (k, &i) in order.iter().enumerate() {
        power[i] = trace_re(sol.s_hat.block(k));
    }
    log::debug!("candidate powers {power:?}");
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    idx.truncate(num_sources);
    idx.sort_unstable();
    let mut keep = vec![false; pool.len()];
    for i in idx {
        keep[i] = true;
    }
    let mut flags = keep.into_iter();
    pool.retain(|_| flags.next().unwrap_or(false));
    Ok(pool)
}

/// Spatial frequencies of unit-circle roots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootFrequencies {
    pub frequencies: Vec<f64>,
    /// Per root, every frequency in `[-1, 1)` mapping to the same root. Only
    /// populated when the baseline exceeds half a wavelength.
    pub aliases: Vec<Vec<f64>>,
    pub ambiguous: bool,
}

fn wrap_frequency(nu: f64) -> f64 {
    let w = (nu + 1.0).rem_euclid(2.0) - 1.0;
    if w >= 1.0 {
        w - 2.0
    } else {
        w
    }
}

/// `nu = angle(z) / (pi delta)` wrapped into `[-1, 1)`.
pub fn frequencies_from_roots(roots: &[C64], delta: f64) -> Result<RootFrequencies> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(CobrasError::InvalidInput(format!(
            "baseline must be positive, got {delta}"
        )));
    }
    let frequencies: Vec<f64> = roots.iter().map(|z| wrap_frequency(z.arg() / (PI * delta))).collect();
    let ambiguous = delta > 1.0 + 1e-12;
    let aliases = if ambiguous {
        log::warn!("baseline {delta} exceeds half a wavelength; root frequencies are ambiguous");
        frequencies
            .iter()
            .map(|&nu| {
                let period = 2.0 / delta;
                let mut all: Vec<f64> = (-(delta.ceil() as i64) - 1..=delta.ceil() as i64 + 1)
                    .map(|n| nu + n as f64 * period)
                    .filter(|v| (-1.0..1.0).contains(v))
                    .collect();
                all.sort_by(f64::total_cmp);
                all.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
                all
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RootFrequencies {
        frequencies,
        aliases,
        ambiguous,
    })
}

/// Shift vector at a root: null vector of `I - M(z)` normalised to a unit
/// first entry.
pub fn shift_from_root(poly: &MatrixPolynomial, z: C64) -> Result<CVector> {
    let p = poly.size();
    let (_, vecs) = hermitian_eigh(&(CMatrix::identity(p, p) - poly.evaluate(z)));
    let lead = vecs[(0, 0)];
    if lead.norm() <= 1e-12 {
        return Err(CobrasError::DegenerateShift(lead.norm()));
    }
    let mut phi = CVector::from_iterator(p, vecs.column(0).iter().map(|v| v / lead));
    phi[0] = ONE;
    Ok(phi)
}

/// Complete gridless estimate.
#[derive(Debug, Clone)]
pub struct GridlessEstimate {
    pub frequencies: Vec<f64>,
    pub shifts: Vec<CVector>,
    pub roots: Vec<DualRoot>,
    pub all_roots: Vec<C64>,
    pub certificate: GramCertificate,
    pub polynomial: MatrixPolynomial,
    pub lambda: f64,
    pub underestimated: bool,
    /// Number of frequencies drawn at random because too few roots were found.
    pub padded: usize,
    pub aliases: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CoefficientDocument {
    index: isize,
    entries: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct GridlessDocument<'a> {
    frequencies: &'a [f64],
    shifts: Vec<Vec<[f64; 2]>>,
    objective: f64,
    lambda: f64,
    delta: f64,
    degree: usize,
    upsilon0_eigenvalues: Vec<f64>,
    coefficients: Vec<CoefficientDocument>,
    roots: &'a [DualRoot],
    all_roots: Vec<[f64; 2]>,
    gram: GramResiduals,
    underestimated: bool,
    padded: usize,
    aliases: &'a [Vec<f64>],
    residuals: &'a SolveReport,
}

fn complex_rows(x: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    x.row_iter().map(|r| r.iter().map(|c| [c.re, c.im]).collect()).collect()
}

impl GridlessEstimate {
    /// Diagnostic document with the certificate, polynomial coefficients and
    /// root table.
    pub fn to_json(&self, geom: &ArrayGeometry) -> Result<String> {
        let d = self.polynomial.degree() as isize;
        let doc = GridlessDocument {
            frequencies: &self.frequencies,
            shifts: self
                .shifts
                .iter()
                .map(|s| s.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
            objective: self.certificate.dual.objective,
            lambda: self.lambda,
            delta: self.certificate.decomposition.delta,
            degree: self.certificate.decomposition.degree,
            upsilon0_eigenvalues: hermitian_eigh(self.certificate.dual.upsilon0.as_matrix()).0,
            coefficients: (-d..=d)
                .map(|i| CoefficientDocument {
                    index: i,
                    entries: complex_rows(self.polynomial.coefficient(i)),
                })
                .collect(),
            roots: &self.roots,
            all_roots: self.all_roots.iter().map(|z| [z.re, z.im]).collect(),
            gram: self.certificate.residuals(geom),
            underestimated: self.underestimated,
            padded: self.padded,
            aliases: &self.aliases,
            residuals: &self.certificate.dual.report,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Solves the gridless dual, roots the dual polynomial and recovers `L`
/// frequencies and shift vectors. Missing roots are replaced by uniformly
/// drawn frequencies with unit shifts.
pub fn estimate_gridless<R: Rng + ?Sized>(
    r_hat: &SampleCovariance,
    geom: &ArrayGeometry,
    lambda: f64,
    num_sources: usize,
    opts: &EstimatorOptions,
    rng: &mut R,
) -> Result<GridlessEstimate> {
    let certificate = solve_gridless_dual(r_hat, geom, lambda, opts)?;
    let dec = certificate.decomposition.clone();
    if dec.degree == 0 {
        return Err(CobrasError::NotApplicable(
            "subarrays of a single sensor carry no polynomial".into(),
        ));
    }
    let polynomial = polynomial_from(&certificate.dual, geom, &dec);
    let (ranked, all_roots) = ranked_roots(&polynomial)?;
    let underestimated = ranked.len() < num_sources;
    let roots = select_by_power(ranked, r_hat, geom, dec.delta, lambda, num_sources, opts)?;
    let zs: Vec<C64> = roots.iter().map(|r| r.z).collect();
    let freqs = frequencies_from_roots(&zs, dec.delta)?;
    let p = geom.num_subarrays();
    let mut shifts: Vec<CVector> = zs
        .iter()
        .map(|&z| {
            shift_from_root(&polynomial, z).unwrap_or_else(|_| {
                let mut v = CVector::zeros(p);
                v[0] = ONE;
                v
            })
        })
        .collect();
    let mut frequencies = freqs.frequencies;
    let padded = num_sources.saturating_sub(frequencies.len());
    for _ in 0..padded {
        frequencies.push(rng.random_range(-1.0..1.0));
        let mut v = CVector::zeros(p);
        v[0] = ONE;
        shifts.push(v);
    }
    Ok(GridlessEstimate {
        frequencies,
        shifts,
        roots,
        all_roots,
        polynomial,
        lambda,
        underestimated,
        padded,
        aliases: freqs.aliases,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{full_steering_matrix, omega_matrix, subarray_block_matrix};
    use crate::signal_sim::{random_complex_matrix, trial_rng};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ula() -> ArrayGeometry {
        ArrayGeometry::from_global_positions(&[vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0], vec![6.0, 7.0, 8.0]], None)
            .unwrap()
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let g = random_complex_matrix(n, n, &mut trial_rng(seed, 0));
        (&g + g.adjoint()).scale(0.5)
    }

    fn certificate(u0: CMatrix) -> DualCertificate {
        let m = u0.nrows();
        DualCertificate {
            upsilon0: HermitianMatrix::new(u0).unwrap(),
            upsilon1: CMatrix::zeros(m, m),
            objective: 0.0,
            report: SolveReport {
                status: crate::conic::SolveStatus::Optimal,
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                gap: 0.0,
            },
        }
    }

    fn covariance(geom: &ArrayGeometry, mus: &[f64], noise: f64) -> SampleCovariance {
        let a = full_steering_matrix(geom, mus).unwrap();
        let m = geom.num_sensors();
        SampleCovariance {
            data: &a * a.adjoint() + CMatrix::identity(m, m).scale(noise),
            snapshots: 100,
        }
    }

    #[test]
    fn block_trace_of_identity() {
        let f = CMatrix::identity(6, 6);
        assert_eq!(block_trace(&f, 2, 0).unwrap(), CMatrix::identity(2, 2).scale(3.0));
        assert_eq!(block_trace(&f, 2, 1).unwrap(), CMatrix::zeros(2, 2));
        assert_eq!(block_trace(&f, 2, -2).unwrap(), CMatrix::zeros(2, 2));
        assert!(block_trace(&f, 2, 3).is_err());
        assert!(block_trace(&f, 4, 0).is_err());
    }

    #[test]
    fn block_traces_reconstruct_gram_form() {
        let (p, d) = (2, 3);
        let f = random_complex_matrix((d + 1) * p, (d + 1) * p, &mut trial_rng(4, 0));
        let mut rng = trial_rng(4, 1);
        for _ in 0..5 {
            let z = C64::from_polar(1.0, rng.random_range(-PI..PI));
            let omega = omega_matrix(z, d, p);
            let direct = omega.adjoint() * &f * &omega;
            let mut series = CMatrix::zeros(p, p);
            for i in -(d as isize)..=d as isize {
                series += block_trace(&f, p, i).unwrap() * z.powi(i as i32);
            }
            assert!((direct - series).camax() < 1e-10);
        }
    }

    #[test]
    fn constant_gram_matrix_is_feasible() {
        let (p, d) = (3, 2);
        let h = CMatrix::identity((d + 1) * p, (d + 1) * p).scale(1.0 / (d + 1) as f64);
        let mut rng = trial_rng(8, 0);
        for _ in 0..5 {
            let omega = omega_matrix(C64::from_polar(1.0, rng.random_range(-PI..PI)), d, p);
            assert!((omega.adjoint() * &h * &omega - CMatrix::identity(p, p)).camax() < 1e-8);
        }
    }

    #[test]
    fn polynomial_examples() {
        let g = ula();
        let zero = dual_polynomial(&certificate(CMatrix::zeros(9, 9)), &g).unwrap();
        for i in -2..=2 {
            assert_eq!(zero.coefficient(i).camax(), 0.0);
        }

        let single = ArrayGeometry::single(vec![0.0, 1.0]).unwrap();
        let poly = dual_polynomial(&certificate(CMatrix::identity(2, 2)), &single).unwrap();
        assert_eq!(poly.degree(), 1);
        assert_abs_diff_eq!(poly.coefficient(0)[(0, 0)].re, 2.0, epsilon = 1e-15);
        assert_eq!(poly.coefficient(1).camax(), 0.0);
        // |1 + z|^2 = 2 + z + 1/z
        let ones = CMatrix::from_element(2, 2, ONE);
        let poly = dual_polynomial(&certificate(ones), &single).unwrap();
        assert_abs_diff_eq!(poly.coefficient(0)[(0, 0)].re, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(poly.coefficient(1)[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(poly.coefficient(-1)[(0, 0)].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn polynomial_matches_pointwise_evaluation() {
        let g = ula();
        let u0 = random_hermitian(9, 12);
        let poly = dual_polynomial(&certificate(u0.clone()), &g).unwrap();
        let mut rng = trial_rng(12, 1);
        for _ in 0..10 {
            let mu: f64 = rng.random_range(-1.0..1.0);
            let b = subarray_block_matrix(&g, mu).unwrap();
            let direct = b.adjoint() * &u0 * &b;
            let z = C64::from_polar(1.0, PI * mu);
            assert!((poly.evaluate(z) - direct).camax() < 1e-10);
            let e = poly.evaluate(z);
            assert!((&e - e.adjoint()).camax() < 1e-12);
        }
    }

    #[test]
    fn polynomial_rejects_asymmetric_coefficients() {
        let k = vec![CMatrix::identity(1, 1), CMatrix::zeros(1, 1), CMatrix::zeros(1, 1)];
        assert!(MatrixPolynomial::new(k).is_err());
        assert!(MatrixPolynomial::new(vec![CMatrix::zeros(1, 1); 2]).is_err());
    }

    #[test]
    fn double_root_at_one() {
        let half = CMatrix::from_element(1, 1, C64::new(0.5, 0.0));
        let poly = MatrixPolynomial::new(vec![half.clone(), CMatrix::zeros(1, 1), half]).unwrap();
        let det = determinant_polynomial(&poly);
        assert_eq!(det.len(), 3);
        assert_abs_diff_eq!(det[0].re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(det[1].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(det[2].re, -0.5, epsilon = 1e-15);
        let sel = root_dual_polynomial(&poly, 1).unwrap();
        assert!(!sel.underestimated);
        assert_abs_diff_eq!(sel.roots[0].angle, 0.0, epsilon = 1e-8);
        assert!(sel.roots[0].slackness.abs() < 1e-12);
        let more = root_dual_polynomial(&poly, 2).unwrap();
        assert!(more.underestimated);
        assert_eq!(more.roots.len(), 1);
    }

    #[test]
    fn determinant_matches_direct_evaluation() {
        let g = ula();
        let poly = dual_polynomial(&certificate(random_hermitian(9, 5).scale(0.1)), &g).unwrap();
        let det = determinant_polynomial(&poly);
        assert!(det.len() <= 2 * 2 * 3 + 1);
        let z = C64::new(0.3, 0.8);
        let direct = (CMatrix::identity(3, 3) - poly.evaluate(z))
            .scale_mut_ret(z.powi(2))
            .determinant();
        let horner = det.iter().rev().fold(ZERO, |acc, c| acc * z + c);
        assert!((direct - horner).norm() < 1e-10 * (1.0 + direct.norm()));
    }

    trait ScaleRet {
        fn scale_mut_ret(self, s: C64) -> CMatrix;
    }

    impl ScaleRet for CMatrix {
        fn scale_mut_ret(self, s: C64) -> CMatrix {
            self.map(|v| v * s)
        }
    }

    #[test]
    fn roots_of_a_strictly_feasible_polynomial_pair_up() {
        let g = ula();
        let u0 = random_hermitian(9, 21);
        let u0 = (&u0 * u0.adjoint()).scale(0.001);
        let poly = dual_polynomial(&certificate(u0), &g).unwrap();
        let roots = polynomial_roots(&determinant_polynomial(&poly));
        assert!(!roots.is_empty());
        for z in &roots {
            assert!((z.norm() - 1.0).abs() > 1e-3);
            let partner = C64::new(1.0, 0.0) / z.conj();
            let best = roots.iter().map(|w| (w - partner).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6 * (1.0 + partner.norm()), "no partner for {z}");
        }
    }

    #[test]
    fn frequency_inversion_examples() {
        let f = frequencies_from_roots(&[C64::new(1.0, 0.0), C64::from_polar(1.0, PI / 2.0)], 1.0).unwrap();
        assert_abs_diff_eq!(f.frequencies[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.frequencies[1], 0.5, epsilon = 1e-15);
        assert!(!f.ambiguous);
        let f = frequencies_from_roots(&[C64::from_polar(1.0, PI * 0.505 * 0.5)], 0.5).unwrap();
        assert_abs_diff_eq!(f.frequencies[0], 0.505, epsilon = 1e-12);
        let f = frequencies_from_roots(&[C64::from_polar(1.0, PI * 0.2 * 2.0)], 2.0).unwrap();
        assert!(f.ambiguous);
        assert_eq!(f.aliases[0].len(), 2);
        assert!(f.aliases[0].iter().any(|v| (v - 0.2).abs() < 1e-12));
        assert!(f.aliases[0].iter().any(|v| (v + 0.8).abs() < 1e-12));
        assert!(frequencies_from_roots(&[], 0.0).is_err());
    }

    #[test]
    fn zero_covariance_duals_vanish() {
        let g = ula();
        let r = SampleCovariance {
            data: CMatrix::zeros(9, 9),
            snapshots: 10,
        };
        let grid = FrequencyGrid::uniform(20).unwrap();
        let opts = EstimatorOptions::default();
        let grid_cert = solve_grid_dual(&r, &g, &grid, 1.0, &opts).unwrap();
        assert!(grid_cert.objective.abs() < 1e-5);
        assert!(grid_cert.upsilon0.as_matrix().camax() < 1e-4);
        assert!(grid_cert.upsilon1.camax() < 1e-4);
        let gram = solve_gridless_dual(&r, &g, 1.0, &opts).unwrap();
        assert!(gram.dual.objective.abs() < 1e-5);
        let res = gram.residuals(&g);
        assert!(res.trace < 1e-6 && res.off_diagonal < 1e-6 && res.min_eigenvalue > -1e-6);
    }

    #[test]
    fn grid_dual_closes_the_gap_with_slackness() {
        let g = ArrayGeometry::from_global_positions(&[vec![0.0, 1.0, 2.5], vec![5.3, 6.3, 7.1]], None).unwrap();
        let grid = FrequencyGrid::uniform(30).unwrap();
        let r = covariance(&g, &[-0.3, 0.4], 0.1);
        let lambda = 0.5;
        let opts = EstimatorOptions::default();
        let (cert, s_hat) = solve_grid_dual_with_primal(&r, &g, &grid, lambda, &opts).unwrap();
        let primal = solve_cobras_covariance_form(&r, &g, &grid, lambda, &opts).unwrap();
        let rel = (cert.objective - primal.objective).abs() / (1.0 + primal.objective.abs());
        assert!(rel < 1e-4, "dual {} primal {}", cert.objective, primal.objective);
        assert!(cert.feasibility(&r.data) > -1e-5);
        for (k, cs) in complementary_slackness(&cert, &s_hat, &g, &grid).iter().enumerate() {
            assert!(cs.abs() <= 1e-4 * (1.0 + trace_re(s_hat.block(k))), "k={k}: {cs}");
            let min_eig = hermitian_eigh(&cert.slackness_matrix(&g, grid.points()[k])).0[0];
            assert!(min_eig > -1e-5);
            if trace_re(primal.s_hat.block(k)) > 1e-3 {
                assert!(min_eig <= 1e-4);
            }
        }
    }

    #[test]
    fn gridless_dual_is_bounded_by_grid_dual() {
        let g = ula();
        let r = covariance(&g, &[0.505, 0.205], 0.1);
        let lambda = 0.5;
        let opts = EstimatorOptions::default();
        let gram = solve_gridless_dual(&r, &g, lambda, &opts).unwrap();
        let grid = FrequencyGrid::uniform(50).unwrap();
        let grid_cert = solve_grid_dual(&r, &g, &grid, lambda, &opts).unwrap();
        assert!(gram.dual.objective <= grid_cert.objective + 1e-5);
        let res = gram.residuals(&g);
        assert!(
            res.trace < 1e-6 && res.off_diagonal < 1e-6 && res.min_eigenvalue > -1e-6,
            "{res:?}"
        );
    }

    #[test]
    fn gridless_recovers_noiseless_sources() {
        let g = ula();
        let truth = [0.505, 0.205];
        let r = covariance(&g, &truth, 0.0);
        let opts = EstimatorOptions::default();
        let est = estimate_gridless(&r, &g, 0.1, 2, &opts, &mut trial_rng(0, 0)).unwrap();
        assert_eq!(est.padded, 0);
        let mut f = est.frequencies.clone();
        f.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in f.iter().zip(truth) {
            assert!((a - b).abs() < 1e-3, "{f:?}");
        }
        for (phi, &nu) in est.shifts.iter().zip(&est.frequencies) {
            let mu = if (nu - truth[0]).abs() < 0.1 {
                truth[0]
            } else {
                truth[1]
            };
            assert_eq!(phi[0], ONE);
            for p in 1..3 {
                let expected = C64::from_polar(1.0, PI * mu * 3.0 * p as f64);
                assert!((phi[p] - expected).norm() < 2e-2, "{phi} {expected}");
            }
        }
        let json = est.to_json(&g).unwrap();
        assert!(json.contains("upsilon0_eigenvalues"));
    }

    #[test]
    fn power_ranking_skips_ghost_between_coherent_sources() {
        // Seed chosen so that the dual touches the circle at 0.09, 0.29 and
        // 0.52; circle distance alone picked the ghost at 0.29.
        use crate::signal_sim::{sample_covariance, select_lambda, simulate_snapshots, Correlation, SourceScenario};
        let offsets = vec![
            ONE,
            C64::from_polar(0.7, 2.0 * PI / 3.0),
            C64::from_polar(1.2, PI / 4.0),
        ];
        let g = ArrayGeometry::from_global_positions(
            &[vec![0.0, 1.0, 3.0], vec![17.4, 18.4, 19.4, 21.4], vec![24.8, 25.8]],
            Some(offsets),
        )
        .unwrap();
        let scenario = SourceScenario {
            frequencies: vec![0.505, 0.105],
            correlation: Correlation::Coefficient(1.0),
            snr_db: 0.0,
            snapshots: 30,
            seed: 1005,
        };
        let r = sample_covariance(&simulate_snapshots(&g, &scenario).unwrap());
        let lambda = select_lambda(1.0, &g);
        let est = estimate_gridless(&r, &g, lambda, 2, &EstimatorOptions::default(), &mut trial_rng(5, 1)).unwrap();
        let mut f = est.frequencies.clone();
        f.sort_by(f64::total_cmp);
        assert!((f[0] - 0.105).abs() < 0.05 && (f[1] - 0.505).abs() < 0.05, "{f:?}");
        let (ranked, _) = ranked_roots(&est.polynomial).unwrap();
        assert!(ranked.len() > 2);
    }

    #[test]
    fn gridless_rejects_irregular_geometry() {
        let g = ArrayGeometry::from_global_positions(&[vec![0.0, 1.0, 2.0 + 1e-4 * PI], vec![5.0, 6.0]], None).unwrap();
        let r = covariance(&g, &[0.1], 0.1);
        assert!(matches!(
            solve_gridless_dual(&r, &g, 1.0, &EstimatorOptions::default()),
            Err(CobrasError::NotApplicable(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hermitian_gram_reconstruction(seed in 0u64..1000, p in 1usize..4, d in 1usize..4) {
            let f = random_hermitian((d + 1) * p, seed);
            let mut rng = trial_rng(seed, 7);
            for _ in 0..10 {
                let z = C64::from_polar(1.0, rng.random_range(-PI..PI));
                let omega = omega_matrix(z, d, p);
                let mut series = CMatrix::zeros(p, p);
                for i in -(d as isize)..=d as isize {
                    series += block_trace(&f, p, i).unwrap() * z.powi(i as i32);
                }
                prop_assert!((omega.adjoint() * &f * &omega - series).camax() < 1e-10);
            }
        }
    }
}
