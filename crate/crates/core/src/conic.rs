//! Small conic solver for complex semidefinite programs.
//!
//! Problems are stored in the standard primal form
//!
//! ```text
//! minimise  <C, X>   subject to  A(X) = b,  X = diag(X_1, ..., X_B),  X_i Hermitian PSD
//! ```
//!
//! with dual `maximise b^T y  subject to  C - A^*(y) = S  PSD`. Every Hermitian
//! block is stored as a real vector of length `n^2`: the `n` diagonal entries
//! followed by `(sqrt2 Re X_ij, sqrt2 Im X_ij)` for `i < j`. In these
//! coordinates the Euclidean inner product equals `Re tr(X Y)`.
//!
//! The solver is an alternating direction augmented Lagrangian method on the
//! dual with over-relaxation, row equilibration and residual balancing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linalg::{from_real_embedding, hermitian_eigh, hermitian_map, real_embedding};
use crate::{CMatrix, CobrasError, Result, C64};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const HERMITIAN_TOLERANCE: f64 = 1e-12;

/// Hermitian matrix wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(x: CMatrix) -> Result<Self> {
        if !x.is_square() {
            return Err(CobrasError::InvalidInput("Hermitian matrix must be square".into()));
        }
        let scale = 1.0 + x.norm();
        if (&x - x.adjoint()).norm() > HERMITIAN_TOLERANCE * scale {
            return Err(CobrasError::InvalidInput("matrix is not Hermitian".into()));
        }
        Ok(Self(x))
    }

    /// Hermitian part of an arbitrary square matrix.
    pub fn symmetrize(x: &CMatrix) -> Self {
        Self(crate::linalg::hermitian_part(x))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        hermitian_eigh(&self.0).0[0]
    }
}

/// `K` Hermitian PSD blocks of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagPSD {
    blocks: Vec<CMatrix>,
    block_size: usize,
}

impl BlockDiagPSD {
    pub fn new(blocks: Vec<CMatrix>) -> Result<Self> {
        let block_size = blocks.first().map_or(0, |b| b.nrows());
        for b in &blocks {
            if b.nrows() != block_size || b.ncols() != block_size {
                return Err(CobrasError::InvalidInput("blocks must share one square size".into()));
            }
            let h = HermitianMatrix::new(b.clone())?;
            if h.min_eigenvalue() < -1e-8 * b.norm().max(1e-100) {
                return Err(CobrasError::InvalidInput(format!(
                    "block is not PSD (min eigenvalue {:.3e}, norm {:.3e})",
                    h.min_eigenvalue(),
                    b.norm()
                )));
            }
        }
        Ok(Self { blocks, block_size })
    }

    /// Builds the blocks from Hermitian matrices, clipping negative
    /// eigenvalues to zero.
    pub fn project(blocks: Vec<CMatrix>) -> Result<Self> {
        let clipped = blocks
            .into_iter()
            .map(|b| {
                HermitianMatrix::new(b).map(|h| {
                    if h.dim() == 0 {
                        h.into_matrix()
                    } else {
                        hermitian_map(h.as_matrix(), |v| v.max(0.0))
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clipped)
    }

    pub fn zeros(count: usize, block_size: usize) -> Self {
        Self {
            blocks: vec![CMatrix::zeros(block_size, block_size); count],
            block_size,
        }
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

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(crate::linalg::trace_re).sum()
    }
}

/// Real embedding `[[Re X, -Im X], [Im X, Re X]]` of a Hermitian matrix.
pub fn embed_hermitian(x: &CMatrix) -> Result<DMatrix<f64>> {
    let h = HermitianMatrix::new(x.clone())?;
    Ok(real_embedding(h.as_matrix()))
}

/// PSD square root with negative eigenvalues clipped to zero.
pub fn psd_sqrt(x: &CMatrix) -> Result<CMatrix> {
    let h = HermitianMatrix::new(x.clone())?;
    if h.dim() == 0 {
        return Ok(x.clone());
    }
    let (values, _) = hermitian_eigh(h.as_matrix());
    if values[0] < -1e-6 * x.norm() {
        return Err(CobrasError::Domain(format!(
            "matrix is not PSD (min eigenvalue {:.3e})",
            values[0]
        )));
    }
    Ok(hermitian_map(h.as_matrix(), |v| v.max(0.0).sqrt()))
}

/// Handle to a PSD block of a [`ConicProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub usize);

/// Handle to a free scalar variable of an LMI-form problem (one equality row
/// of the underlying standard form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FreeVar(pub usize);

/// One term `c * X[i, j]` of a linear expression in block entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub block: BlockId,
    pub row: usize,
    pub col: usize,
    pub coeff: C64,
}

impl Term {
    pub fn new(block: BlockId, row: usize, col: usize, coeff: C64) -> Self {
        Self { block, row, col, coeff }
    }

    pub fn real(block: BlockId, row: usize, col: usize, coeff: f64) -> Self {
        Self::new(block, row, col, C64::new(coeff, 0.0))
    }
}

#[derive(Debug, Clone)]
struct Block {
    name: String,
    dim: usize,
    offset: usize,
}

/// Linear conic program over a product of Hermitian PSD cones.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    blocks: Vec<Block>,
    nvar: usize,
    objective: BTreeMap<usize, f64>,
    objective_constant: f64,
    rows: Vec<BTreeMap<usize, f64>>,
    rhs: Vec<f64>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: impl Into<String>, dim: usize) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(Block {
            name: name.into(),
            dim,
            offset: self.nvar,
        });
        self.nvar += dim * dim;
        id
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_variables(&self) -> usize {
        self.nvar
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn block_dim(&self, id: BlockId) -> usize {
        self.blocks[id.0].dim
    }

    /// Adds `Re(c * X[i, j])` to the objective.
    pub fn add_objective(&mut self, term: Term) {
        let coeffs = self.term_coefficients(&term);
        for (col, v) in coeffs {
            *self.objective.entry(col).or_insert(0.0) += v;
        }
    }

    /// Adds `Re tr(C X_block)` to the objective for a Hermitian `C`.
    pub fn add_objective_matrix(&mut self, block: BlockId, r0: usize, c0: usize, c: &CMatrix) {
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                if c[(j, i)] != C64::new(0.0, 0.0) {
                    self.add_objective(Term::new(block, r0 + i, c0 + j, c[(j, i)]));
                }
            }
        }
    }

    pub fn add_objective_constant(&mut self, value: f64) {
        self.objective_constant += value;
    }

    /// Adds the real constraint `Re(sum c X_ij) = rhs`.
    pub fn add_real_equality(&mut self, terms: &[Term], rhs: f64) -> usize {
        let mut row = BTreeMap::new();
        for t in terms {
            for (col, v) in self.term_coefficients(t) {
                *row.entry(col).or_insert(0.0) += v;
            }
        }
        self.rows.push(row);
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    /// Adds the complex constraint `sum c X_ij = rhs` as two real rows.
    pub fn add_complex_equality(&mut self, terms: &[Term], rhs: C64) -> (usize, usize) {
        let re = self.add_real_equality(terms, rhs.re);
        let rotated: Vec<Term> = terms
            .iter()
            .map(|t| Term {
                coeff: t.coeff * C64::new(0.0, -1.0),
                ..*t
            })
            .collect();
        let im = self.add_real_equality(&rotated, rhs.im);
        (re, im)
    }

    /// Constrains the Hermitian sub-block of `block` at `(r0, c0)` plus the
    /// extra Hermitian expression generated by `extra(i, j)` to equal `rhs`.
    /// Only the upper triangle `i <= j` is imposed.
    pub fn add_hermitian_equality<F>(&mut self, block: BlockId, r0: usize, c0: usize, rhs: &CMatrix, mut extra: F)
    where
        F: FnMut(usize, usize) -> Vec<Term>,
    {
        let n = rhs.nrows();
        for i in 0..n {
            for j in i..n {
                let mut terms = vec![Term::real(block, r0 + i, c0 + j, 1.0)];
                terms.extend(extra(i, j));
                if i == j {
                    self.add_real_equality(&terms, rhs[(i, i)].re);
                } else {
                    self.add_complex_equality(&terms, rhs[(i, j)]);
                }
            }
        }
    }

    /// Adds a free variable for the linear-matrix-inequality view of the
    /// problem: `maximise sum b_j y_j subject to C_i + sum y_j F_ij PSD`. The
    /// constant `C_i` of an LMI block is set with [`Self::set_lmi_constant`].
    pub fn add_free_variable(&mut self, objective: f64) -> FreeVar {
        self.rows.push(BTreeMap::new());
        self.rhs.push(objective);
        FreeVar(self.rows.len() - 1)
    }

    /// `F[i, j] += value` and, for `i != j`, `F[j, i] += conj(value)`. On the
    /// diagonal only the real part is used.
    pub fn add_lmi_entry(&mut self, var: FreeVar, block: BlockId, i: usize, j: usize, value: C64) {
        let b = &self.blocks[block.0];
        let row = &mut self.rows[var.0];
        if i == j {
            *row.entry(b.offset + i).or_insert(0.0) -= value.re;
            return;
        }
        let (lo, hi, v) = if i < j { (i, j, value) } else { (j, i, value.conj()) };
        let (u, w) = pair_index(b.dim, b.offset, lo, hi);
        *row.entry(u).or_insert(0.0) -= SQRT2 * v.re;
        *row.entry(w).or_insert(0.0) -= SQRT2 * v.im;
    }

    /// Sets the constant term of an LMI block (adds `Re tr(C X)` to the
    /// standard-form objective).
    pub fn set_lmi_constant(&mut self, block: BlockId, c: &CMatrix) {
        self.add_objective_matrix(block, 0, 0, c);
    }

    fn term_coefficients(&self, t: &Term) -> Vec<(usize, f64)> {
        let b = &self.blocks[t.block.0];
        assert!(t.row < b.dim && t.col < b.dim, "term outside block {}", b.name);
        let c = t.coeff;
        if t.row == t.col {
            return vec![(b.offset + t.row, c.re)];
        }
        let (lo, hi) = (t.row.min(t.col), t.row.max(t.col));
        let (u, v) = pair_index(b.dim, b.offset, lo, hi);
        let sign = if t.row < t.col { -1.0 } else { 1.0 };
        vec![(u, c.re / SQRT2), (v, sign * c.im / SQRT2)]
    }

    /// Writes a plain-text description: block layout, objective, equality
    /// triplets and right-hand side.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# svec layout: diagonal, then (sqrt2 Re, sqrt2 Im) for i<j")?;
        write!(w, "cones")?;
        for b in &self.blocks {
            write!(w, " {}:{}", b.name, b.dim)?;
        }
        writeln!(w)?;
        writeln!(w, "variables {}", self.nvar)?;
        writeln!(w, "constraints {}", self.rows.len())?;
        writeln!(w, "objective_constant {:e}", self.objective_constant)?;
        for (col, v) in &self.objective {
            writeln!(w, "c {col} {v:e}")?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            for (col, v) in row {
                writeln!(w, "a {r} {col} {v:e}")?;
            }
        }
        for (r, v) in self.rhs.iter().enumerate() {
            writeln!(w, "b {r} {v:e}")?;
        }
        Ok(())
    }

    fn svec_to_matrix(&self, id: usize, x: &[f64]) -> CMatrix {
        let b = &self.blocks[id];
        svec_to_hermitian(b.dim, &x[b.offset..b.offset + b.dim * b.dim])
    }
}

fn pair_index(dim: usize, offset: usize, lo: usize, hi: usize) -> (usize, usize) {
    // Pairs (lo, hi) with lo < hi enumerated row by row.
    let before = lo * (2 * dim - lo - 1) / 2;
    let k = before + (hi - lo - 1);
    let u = offset + dim + 2 * k;
    (u, u + 1)
}

fn svec_to_hermitian(n: usize, v: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    let mut k = n;
    for i in 0..n {
        m[(i, i)] = C64::new(v[i], 0.0);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let z = C64::new(v[k], v[k + 1]) / SQRT2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

fn hermitian_to_svec(m: &CMatrix, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = n;
    for i in 0..n {
        out[i] = m[(i, i)].re;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let z = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            out[k] = SQRT2 * z.re;
            out[k + 1] = SQRT2 * z.im;
            k += 2;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    InfeasibleDetected,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::InfeasibleDetected => "infeasible-detected",
        };
        f.write_str(s)
    }
}

/// Primal, multiplier and slack vectors in svec coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicIterate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Over-relaxation factor in `(0, 2)`.
    pub relaxation: f64,
    /// Initial penalty parameter.
    pub penalty: f64,
    pub adaptive_penalty: bool,
    /// Anderson acceleration memory; 0 disables acceleration.
    pub anderson_memory: usize,
    pub initial: Option<ConicIterate>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 50_000,
            relaxation: 1.6,
            penalty: 1.0,
            adaptive_penalty: true,
            anderson_memory: 10,
            initial: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    names: Vec<String>,
    /// Primal blocks, projected onto the cone.
    pub primal: Vec<CMatrix>,
    /// Dual slack blocks `C - A^*(y)`, projected onto the cone.
    pub slack: Vec<CMatrix>,
    /// Equality multipliers (the LMI variables for LMI-form problems).
    pub multipliers: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub iterate: ConicIterate,
    /// Normalised direction when infeasibility was flagged.
    pub certificate: Option<Vec<f64>>,
}

impl ConicSolution {
    pub fn block(&self, id: BlockId) -> &CMatrix {
        &self.primal[id.0]
    }

    pub fn slack_block(&self, id: BlockId) -> &CMatrix {
        &self.slack[id.0]
    }

    pub fn block_by_name(&self, name: &str) -> Option<&CMatrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.primal[i])
    }

    pub fn variable(&self, var: FreeVar) -> f64 {
        self.multipliers[var.0]
    }

    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.gap)
    }

    /// Converts a non-optimal status into an error.
    pub fn require_optimal(self) -> Result<Self> {
        if self.status == SolveStatus::Optimal {
            Ok(self)
        } else {
            Err(CobrasError::Solver {
                status: self.status,
                primal_residual: self.primal_residual,
                dual_residual: self.dual_residual,
                gap: self.gap,
            })
        }
    }

    /// Accepts a max-iterations result whose residuals are within `loose`.
    pub fn require_within(self, loose: f64) -> Result<Self> {
        if self.status == SolveStatus::Optimal
            || (self.status == SolveStatus::MaxIterations && self.max_residual() <= loose)
        {
            Ok(self)
        } else {
            Err(CobrasError::Solver {
                status: self.status,
                primal_residual: self.primal_residual,
                dual_residual: self.dual_residual,
                gap: self.gap,
            })
        }
    }
}

/// Sparse row-major matrix.
struct Sparse {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    fn new(rows: Vec<Vec<(usize, f64)>>, ncols: usize) -> Self {
        let mut cols = vec![Vec::new(); ncols];
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                cols[c].push((r, v));
            }
        }
        Self { rows, cols }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(c, v)| v * x[c]).sum();
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(&self.cols) {
            *o = col.iter().map(|&(r, v)| v * y[r]).sum();
        }
    }

    fn gram(&self) -> DMatrix<f64> {
        let m = self.rows.len();
        let mut g = DMatrix::zeros(m, m);
        for col in &self.cols {
            for &(r1, v1) in col {
                for &(r2, v2) in col {
                    if r2 >= r1 {
                        g[(r1, r2)] += v1 * v2;
                    }
                }
            }
        }
        g.fill_lower_triangle_with_upper_triangle();
        g
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct Projector {
    layout: Vec<(usize, usize)>,
}

impl Projector {
    fn project(&self, v: &[f64], out: &mut [f64]) {
        for &(offset, dim) in &self.layout {
            let len = dim * dim;
            project_block(dim, &v[offset..offset + len], &mut out[offset..offset + len]);
        }
    }
}

fn project_block(dim: usize, v: &[f64], out: &mut [f64]) {
    if dim == 1 {
        out[0] = v[0].max(0.0);
        return;
    }
    let h = svec_to_hermitian(dim, v);
    let e = real_embedding(&h);
    if Cholesky::new(e.clone()).is_some() {
        out.copy_from_slice(v);
        return;
    }
    if Cholesky::new(-&e).is_some() {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let eig = SymmetricEigen::new(e);
    let mut p = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 0.0 {
            let u = eig.eigenvectors.column(k);
            p.ger(lambda, &u, &u, 1.0);
        }
    }
    hermitian_to_svec(&from_real_embedding(&p), out);
}

/// Normalises every constraint row. Returns the scaled rows and the row
/// factors (zero for empty rows).
fn equilibrate(problem: &ConicProblem) -> Result<(Vec<Vec<(usize, f64)>>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(problem.rows.len());
    let mut row_scale = Vec::with_capacity(problem.rows.len());
    for (r, row) in problem.rows.iter().enumerate() {
        let entries: Vec<(usize, f64)> = row.iter().map(|(&c, &v)| (c, v)).filter(|&(_, v)| v != 0.0).collect();
        let n = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            if problem.rhs[r] != 0.0 {
                return Err(CobrasError::InvalidInput(format!(
                    "empty constraint row {r} with nonzero rhs"
                )));
            }
            rows.push(entries);
            row_scale.push(0.0);
        } else {
            rows.push(entries.into_iter().map(|(c, v)| (c, v / n)).collect());
            row_scale.push(1.0 / n);
        }
    }
    Ok((rows, row_scale))
}

fn factor_gram(gram: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(gram.clone()) {
        return Ok(ch);
    }
    let scale = gram.diagonal().iter().fold(0.0f64, |a, &b| a.max(b)).max(1.0);
    let mut ridge = 1e-12 * scale;
    while ridge < 1e-4 * scale {
        let mut g = gram.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(g) {
            log::debug!("constraint Gram matrix regularised with ridge {ridge:e}");
            return Ok(ch);
        }
        ridge *= 100.0;
    }
    Err(CobrasError::Numerical("constraint matrix is rank deficient".into()))
}

struct Workspace {
    tmp: Vec<f64>,
    aty: Vec<f64>,
    v: Vec<f64>,
    rhs_m: Vec<f64>,
    rhs: DVector<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            tmp: vec![0.0; n],
            aty: vec![0.0; n],
            v: vec![0.0; n],
            rhs_m: vec![0.0; m],
            rhs: DVector::zeros(m),
        }
    }
}

struct StepContext<'a> {
    a: &'a Sparse,
    chol: &'a Cholesky<f64, Dyn>,
    projector: &'a Projector,
    b: &'a [f64],
    c: &'a [f64],
    relaxation: f64,
}

impl StepContext<'_> {
    /// One relaxed iteration on the stacked state `(x, s)`. Returns the norm
    /// of the dual residual `c - A^T y - s_new`.
    fn step(&self, mu: f64, z: &[f64], out: &mut [f64], y: &mut [f64], ws: &mut Workspace) -> f64 {
        let n = self.c.len();
        let (x, s) = z.split_at(n);
        for i in 0..n {
            ws.tmp[i] = self.c[i] - s[i] - mu * x[i];
        }
        self.a.apply(&ws.tmp, &mut ws.rhs_m);
        for (r, v) in ws.rhs_m.iter().enumerate() {
            ws.rhs[r] = v + mu * self.b[r];
        }
        self.chol.solve_mut(&mut ws.rhs);
        y.copy_from_slice(ws.rhs.as_slice());
        self.a.apply_adjoint(y, &mut ws.aty);
        for i in 0..n {
            ws.v[i] = self.c[i] - ws.aty[i] - mu * x[i];
        }
        let (xo, so) = out.split_at_mut(n);
        self.projector.project(&ws.v, so);
        let gamma = self.relaxation;
        let mut dres = 0.0;
        for i in 0..n {
            let target = (so[i] - ws.v[i]) / mu;
            xo[i] = (1.0 - gamma) * x[i] + gamma * target;
            let r = ws.v[i] + mu * x[i] - so[i];
            dres += r * r;
        }
        dres.sqrt()
    }
}

/// Type-II Anderson acceleration of a fixed-point iteration.
struct Anderson {
    memory: usize,
    /// `dz + dg` per slot, the extrapolation direction.
    dsum: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
    dots: DMatrix<f64>,
    order: std::collections::VecDeque<usize>,
    prev_z: Vec<f64>,
    prev_g: Vec<f64>,
    has_prev: bool,
}

impl Anderson {
    fn new(memory: usize, dim: usize) -> Self {
        let slots = memory.max(1);
        Self {
            memory,
            dsum: vec![vec![0.0; dim]; slots],
            dg: vec![vec![0.0; dim]; slots],
            dots: DMatrix::zeros(slots, slots),
            order: std::collections::VecDeque::new(),
            prev_z: vec![0.0; dim],
            prev_g: vec![0.0; dim],
            has_prev: false,
        }
    }

    fn reset(&mut self) {
        self.order.clear();
        self.has_prev = false;
    }

    fn push(&mut self, z: &[f64], g: &[f64]) {
        if self.memory == 0 {
            return;
        }
        if self.has_prev {
            let slot = if self.order.len() == self.memory {
                self.order.pop_front().unwrap()
            } else {
                (0..self.memory).find(|s| !self.order.contains(s)).unwrap()
            };
            let (dsum, dg) = (&mut self.dsum[slot], &mut self.dg[slot]);
            for i in 0..z.len() {
                let dgi = g[i] - self.prev_g[i];
                dg[i] = dgi;
                dsum[i] = z[i] - self.prev_z[i] + dgi;
            }
            self.order.push_back(slot);
            for &other in &self.order {
                let d = dot(&self.dg[slot], &self.dg[other]);
                self.dots[(slot, other)] = d;
                self.dots[(other, slot)] = d;
            }
        }
        self.prev_z.copy_from_slice(z);
        self.prev_g.copy_from_slice(g);
        self.has_prev = true;
    }

    fn extrapolate(&self, tz: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let k = self.order.len();
        if k == 0 {
            return None;
        }
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut trace = 0.0;
        for (i, &si) in self.order.iter().enumerate() {
            for (j, &sj) in self.order.iter().enumerate() {
                h[(i, j)] = self.dots[(si, sj)];
            }
            trace += h[(i, i)];
            rhs[i] = dot(&self.dg[si], g);
        }
        let reg = 1e-10 * trace.max(f64::MIN_POSITIVE);
        for i in 0..k {
            h[(i, i)] += reg;
        }
        let weights = Cholesky::new(h)?.solve(&rhs);
        if weights.iter().any(|w| !w.is_finite()) || weights.norm() > 1e4 {
            return None;
        }
        let mut out = tz.to_vec();
        for (w, &slot) in weights.iter().zip(&self.order) {
            for (o, d) in out.iter_mut().zip(&self.dsum[slot]) {
                *o -= w * d;
            }
        }
        Some(out)
    }
}

/// Solves the conic program.
pub fn solve(problem: &ConicProblem, options: &SolverOptions) -> Result<ConicSolution> {
    let nvar = problem.nvar;
    let m = problem.rows.len();
    if nvar == 0 {
        return Err(CobrasError::InvalidInput("problem has no variables".into()));
    }

    let (rows, row_scale) = equilibrate(problem)?;
    let mut b: Vec<f64> = problem.rhs.iter().zip(&row_scale).map(|(v, d)| v * d).collect();
    let mut c = vec![0.0; nvar];
    for (&col, &v) in &problem.objective {
        c[col] = v;
    }
    let b_scale = norm(&b).max(1.0);
    let c_scale = norm(&c).max(1.0);
    b.iter_mut().for_each(|v| *v /= b_scale);
    c.iter_mut().for_each(|v| *v /= c_scale);

    let a = Sparse::new(rows, nvar);
    // Empty rows get a unit diagonal so the Gram matrix stays invertible.
    let mut gram = a.gram();
    for r in 0..m {
        if row_scale[r] == 0.0 {
            gram[(r, r)] = 1.0;
        }
    }
    let chol = factor_gram(gram)?;
    let projector = Projector {
        layout: problem.blocks.iter().map(|b| (b.offset, b.dim)).collect(),
    };

    let norm_b = norm(&b);
    let norm_c = norm(&c);

    let (x, mut y, s) = match &options.initial {
        Some(it) if it.x.len() == nvar && it.y.len() == m && it.s.len() == nvar => {
            // Bring the supplied iterate into scaled coordinates.
            let x = it.x.iter().map(|v| v / b_scale).collect();
            let y =
                it.y.iter()
                    .zip(&row_scale)
                    .map(|(v, &d)| if d > 0.0 { v / (d * c_scale) } else { 0.0 })
                    .collect();
            let s = it.s.iter().map(|v| v / c_scale).collect();
            (x, y, s)
        }
        _ => (vec![0.0; nvar], vec![0.0; m], vec![0.0; nvar]),
    };

    let mut mu = options.penalty;
    let tol = options.tolerance;
    let ctx = StepContext {
        a: &a,
        chol: &chol,
        projector: &projector,
        b: &b,
        c: &c,
        relaxation: options.relaxation,
    };
    let mut ws = Workspace::new(nvar, m);

    let mut z: Vec<f64> = x.iter().chain(s.iter()).copied().collect();
    let mut tz = vec![0.0; 2 * nvar];
    let mut fallback = vec![0.0; 2 * nvar];
    let mut g = vec![0.0; 2 * nvar];
    let mut anderson = Anderson::new(options.anderson_memory, 2 * nvar);
    let mut extrapolated = false;
    let mut last_g_norm = f64::INFINITY;
    let mut ax = vec![0.0; m];

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut certificate = None;
    let mut pres = f64::INFINITY;
    let mut dres = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut balance = 0i32;

    for it in 0..options.max_iterations {
        iterations = it + 1;
        let mut dres_abs = ctx.step(mu, &z, &mut tz, &mut y, &mut ws);
        for i in 0..2 * nvar {
            g[i] = tz[i] - z[i];
        }
        let mut g_norm = norm(&g);
        if extrapolated && !(g_norm <= last_g_norm) {
            // Reject the extrapolated point and continue from the plain step.
            z.copy_from_slice(&fallback);
            anderson.reset();
            dres_abs = ctx.step(mu, &z, &mut tz, &mut y, &mut ws);
            for i in 0..2 * nvar {
                g[i] = tz[i] - z[i];
            }
            g_norm = norm(&g);
        }

        let xt = &tz[..nvar];
        dres = dres_abs / (1.0 + norm_c);
        let pobj = dot(&c, xt);
        let dobj = dot(&b, &y);
        gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let check = (dres <= tol && gap <= tol) || it % 10 == 0;
        if check {
            a.apply(xt, &mut ax);
            let p_err: f64 = ax.iter().zip(&b).map(|(u, w)| (u - w) * (u - w)).sum::<f64>().sqrt();
            pres = p_err / (1.0 + norm_b);
        }

        if !(pres.is_finite() && dres.is_finite() && g_norm.is_finite()) {
            status = SolveStatus::InfeasibleDetected;
            break;
        }
        let xn = norm(xt);
        let yn = norm(&y);
        if xn > 1e12 || yn > 1e12 {
            status = SolveStatus::InfeasibleDetected;
            let (dir, n) = if yn > xn { (&y[..], yn) } else { (xt, xn) };
            certificate = Some(dir.iter().map(|v| v / n).collect());
            break;
        }
        if check && pres <= tol && dres <= tol && gap <= tol {
            status = SolveStatus::Optimal;
            break;
        }
        if check {
            let worst = pres.max(dres).max(gap);
            if best.as_ref().is_none_or(|bst| worst < bst.0) {
                best = Some((worst, tz.clone(), y.clone()));
            }
        }

        let mut new_mu = mu;
        if options.adaptive_penalty && check {
            if pres > 5.0 * dres {
                balance += 1;
            } else if dres > 5.0 * pres {
                balance -= 1;
            } else {
                balance = 0;
            }
            if balance > 5 {
                new_mu = (mu * 2.0).min(1e6);
                balance = 0;
            } else if balance < -5 {
                new_mu = (mu / 2.0).max(1e-6);
                balance = 0;
            }
        }

        if new_mu != mu {
            mu = new_mu;
            anderson.reset();
            z.copy_from_slice(&tz);
            extrapolated = false;
            last_g_norm = f64::INFINITY;
            continue;
        }
        anderson.push(&z, &g);
        last_g_norm = g_norm;
        match anderson.extrapolate(&tz, &g) {
            Some(next) => {
                fallback.copy_from_slice(&tz);
                z = next;
                extrapolated = true;
            }
            None => {
                z.copy_from_slice(&tz);
                extrapolated = false;
            }
        }
    }

    if status == SolveStatus::MaxIterations {
        if let Some((worst, bz, by)) = best {
            if worst < pres.max(dres).max(gap) {
                tz = bz;
                y = by;
            }
        }
    }
    let (x, s) = tz.split_at(nvar);
    let (x, s) = (x.to_vec(), s.to_vec());
    let mut tmp_n = vec![0.0; nvar];
    let mut aty = vec![0.0; nvar];

    // Final cone projections and residuals in scaled coordinates.
    let mut xp = vec![0.0; nvar];
    projector.project(&x, &mut xp);
    let mut sp = vec![0.0; nvar];
    projector.project(&s, &mut sp);
    a.apply(&xp, &mut ax);
    let p_err: Vec<f64> = ax.iter().zip(&b).map(|(u, w)| u - w).collect();
    let pres_f = norm(&p_err) / (1.0 + norm_b);
    a.apply_adjoint(&y, &mut aty);
    for i in 0..nvar {
        tmp_n[i] = c[i] - aty[i] - sp[i];
    }
    let dres_f = norm(&tmp_n) / (1.0 + norm_c);
    let pobj = dot(&c, &xp);
    let dobj = dot(&b, &y);
    let gap_f = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    if status == SolveStatus::Optimal && pres_f.max(dres_f).max(gap_f) > tol {
        // Projection of the relaxed iterate can nudge residuals above the target.
        pres = pres.max(pres_f);
        dres = dres.max(dres_f);
        gap = gap.max(gap_f);
        if pres_f.max(dres_f).max(gap_f) > 10.0 * tol {
            status = SolveStatus::MaxIterations;
        }
    } else {
        pres = pres_f;
        dres = dres_f;
        gap = gap_f;
    }

    // Undo scaling.
    let total = b_scale * c_scale;
    let x_out: Vec<f64> = xp.iter().map(|v| v * b_scale).collect();
    let s_out: Vec<f64> = sp.iter().map(|v| v * c_scale).collect();
    let y_out: Vec<f64> = y.iter().zip(&row_scale).map(|(v, &d)| v * d * c_scale).collect();
    let primal: Vec<CMatrix> = (0..problem.blocks.len())
        .map(|i| problem.svec_to_matrix(i, &x_out))
        .collect();
    let slack: Vec<CMatrix> = (0..problem.blocks.len())
        .map(|i| problem.svec_to_matrix(i, &s_out))
        .collect();

    Ok(ConicSolution {
        names: problem.blocks.iter().map(|b| b.name.clone()).collect(),
        primal,
        slack,
        multipliers: y_out.clone(),
        primal_objective: pobj * total + problem.objective_constant,
        dual_objective: dobj * total + problem.objective_constant,
        primal_residual: pres,
        dual_residual: dres,
        gap,
        status,
        iterations,
        iterate: ConicIterate {
            x: x_out,
            y: y_out,
            s: s_out,
        },
        certificate,
    })
}
