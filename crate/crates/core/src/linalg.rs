//! Compressed sparse row storage, block composition and the direct solve.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular pivot at index {index}")]
    SingularPivot { index: usize },
    #[error("linear solve residual {residual:e} exceeds bound {bound:e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
    #[error("sparse factorization failed: {0}")]
    Backend(String),
}

/// Row-compressed sparse matrix. Column indices are strictly increasing
/// within each row and no stored value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, LinalgError> {
        for &(row, col, _) in triplets {
            if row >= nrows || col >= ncols {
                return Err(LinalgError::IndexOutOfRange {
                    row,
                    col,
                    rows: nrows,
                    cols: ncols,
                });
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut offsets = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        let mut k = 0;
        while k < order.len() {
            let (r, c, _) = triplets[order[k]];
            let mut sum = 0.0;
            while k < order.len() && triplets[order[k]].0 == r && triplets[order[k]].1 == c {
                sum += triplets[order[k]].2;
                k += 1;
            }
            if sum != 0.0 {
                cols.push(c);
                vals.push(sum);
                offsets[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            offsets[r + 1] += offsets[r];
        }
        Ok(Self {
            nrows,
            ncols,
            offsets,
            cols,
            vals,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            offsets: vec![0; nrows + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t).expect("diagonal indices in range")
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Result<Self, LinalgError> {
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(LinalgError::ShapeMismatch(format!(
                    "dense row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            t.extend(row.iter().enumerate().map(|(j, &v)| (i, j, v)));
        }
        Self::from_triplets(rows.len(), ncols, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("transpose indices in range")
    }

    pub fn scaled(&self, s: f64) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (i, j, s * v)).collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("same pattern")
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let t: Vec<_> = self.triplets().chain(other.triplets()).collect();
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "vector length must match column count");
        (0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Fixes the unknowns listed in `fixed` to the given values: their rows
    /// become identity rows, their columns are moved to the right-hand side.
    pub fn eliminate(&self, fixed: &[(usize, f64)], rhs: &mut [f64]) -> Self {
        assert_eq!(self.nrows, self.ncols, "elimination needs a square matrix");
        assert_eq!(rhs.len(), self.nrows, "rhs length must match");
        let mut value = vec![None; self.ncols];
        for &(i, v) in fixed {
            value[i] = Some(v);
        }
        let mut t = Vec::with_capacity(self.nnz());
        for (i, j, a) in self.triplets() {
            if value[i].is_some() {
                continue;
            }
            match value[j] {
                Some(v) => rhs[i] -= a * v,
                None => t.push((i, j, a)),
            }
        }
        for &(i, v) in fixed {
            t.push((i, i, 1.0));
            rhs[i] = v;
        }
        Self::from_triplets(self.nrows, self.ncols, &t).expect("indices already validated")
    }
}

/// Square grid of optional blocks with matching right-hand-side segments.
/// Several contributions to the same slot are summed.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    sizes: Vec<usize>,
    blocks: Vec<(usize, usize, SparseMatrix, bool)>,
    rhs: Vec<Vec<f64>>,
}

impl BlockSystem {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            blocks: Vec::new(),
            rhs: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn check(&self, i: usize, j: usize, shape: (usize, usize)) -> Result<(), LinalgError> {
        if i >= self.sizes.len() || j >= self.sizes.len() {
            return Err(LinalgError::ShapeMismatch(format!(
                "no block slot ({i}, {j})"
            )));
        }
        if shape != (self.sizes[i], self.sizes[j]) {
            return Err(LinalgError::ShapeMismatch(format!(
                "block ({i}, {j}) must be {}x{}, got {}x{}",
                self.sizes[i], self.sizes[j], shape.0, shape.1
            )));
        }
        Ok(())
    }

    /// Adds `m` to slot `(i, j)`.
    pub fn add_block(&mut self, i: usize, j: usize, m: SparseMatrix) -> Result<(), LinalgError> {
        self.check(i, j, m.shape())?;
        self.blocks.push((i, j, m, false));
        Ok(())
    }

    /// Adds the transpose of `m` to slot `(i, j)`.
    pub fn add_block_transposed(
        &mut self,
        i: usize,
        j: usize,
        m: SparseMatrix,
    ) -> Result<(), LinalgError> {
        self.check(i, j, (m.ncols(), m.nrows()))?;
        self.blocks.push((i, j, m, true));
        Ok(())
    }

    /// Adds `v` to right-hand-side segment `i`.
    pub fn add_rhs(&mut self, i: usize, v: &[f64]) -> Result<(), LinalgError> {
        if i >= self.sizes.len() || v.len() != self.sizes[i] {
            return Err(LinalgError::ShapeMismatch(format!(
                "rhs segment {i} has length {}, got {}",
                self.sizes.get(i).copied().unwrap_or(0),
                v.len()
            )));
        }
        for (a, b) in self.rhs[i].iter_mut().zip(v) {
            *a += b;
        }
        Ok(())
    }

    pub fn offset(&self, i: usize) -> usize {
        self.sizes[..i].iter().sum()
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Global matrix and right-hand side of a block system.
pub fn assemble_blocks(system: &BlockSystem) -> Result<(SparseMatrix, Vec<f64>), LinalgError> {
    let n = system.total_size();
    let offsets: Vec<usize> = (0..system.sizes.len()).map(|i| system.offset(i)).collect();
    let mut t = Vec::with_capacity(system.blocks.iter().map(|b| b.2.nnz()).sum());
    for (i, j, m, transposed) in &system.blocks {
        let (ro, co) = (offsets[*i], offsets[*j]);
        for (r, c, v) in m.triplets() {
            if *transposed {
                t.push((ro + c, co + r, v));
            } else {
                t.push((ro + r, co + c, v));
            }
        }
    }
    let a = SparseMatrix::from_triplets(n, n, &t)?;
    let rhs = system.rhs.concat();
    Ok((a, rhs))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Ratio of largest to smallest row 2-norm above which rows and columns are
/// rescaled before factorization.
pub const EQUILIBRATION_THRESHOLD: f64 = 1e8;

/// Relative residual factor of the solve contract.
pub const RESIDUAL_FACTOR: f64 = 1e-10;

struct Factor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

impl Factor {
    fn new(a: &SparseMatrix) -> Result<Self, LinalgError> {
        let n = a.nrows();
        let row_norms: Vec<f64> = (0..n).map(|i| norm2(a.row(i).1)).collect();
        if let Some(i) = row_norms.iter().position(|&r| r == 0.0) {
            return Err(LinalgError::SingularPivot { index: i });
        }
        let max = row_norms.iter().cloned().fold(0.0, f64::max);
        let min = row_norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let (row_scale, col_scale) = if max / min > EQUILIBRATION_THRESHOLD {
            let rs: Vec<f64> = row_norms.iter().map(|r| 1.0 / r).collect();
            let mut col = vec![0.0f64; n];
            for (i, j, v) in a.triplets() {
                col[j] = col[j].max((v * rs[i]).abs());
            }
            if let Some(j) = col.iter().position(|&c| c == 0.0) {
                return Err(LinalgError::SingularPivot { index: j });
            }
            (rs, col.iter().map(|c| 1.0 / c).collect())
        } else {
            (vec![1.0; n], vec![1.0; n])
        };
        let trips: Vec<Triplet<usize, usize, f64>> = a
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v * row_scale[i] * col_scale[j]))
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| LinalgError::Backend(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => {
                LinalgError::SingularPivot { index }
            }
            other => LinalgError::Backend(format!("{other:?}")),
        })?;
        Ok(Self {
            lu,
            row_scale,
            col_scale,
        })
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i] * self.row_scale[i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..n).map(|i| rhs[(i, 0)] * self.col_scale[i]).collect()
    }
}

/// Solves `A x = b` by sparse LU with partial pivoting.
///
/// Guarantees `|Ax - b| <= 1e-10 (|A|_F |x| + |b|)`; up to three steps of
/// iterative refinement are taken to reach it.
pub fn solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::ShapeMismatch(format!(
            "solve needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.len() != a.nrows() {
        return Err(LinalgError::ShapeMismatch(format!(
            "rhs length {} does not match {} rows",
            b.len(),
            a.nrows()
        )));
    }
    if b.is_empty() {
        return Ok(Vec::new());
    }
    let factor = Factor::new(a)?;
    let mut x = factor.apply(b);
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::SingularPivot { index: i });
    }
    let a_norm = a.frobenius_norm();
    let b_norm = norm2(b);
    let mut residual = 0.0;
    let mut bound = 0.0;
    for _ in 0..4 {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        residual = norm2(&r);
        bound = RESIDUAL_FACTOR * (a_norm * norm2(&x) + b_norm);
        if residual <= bound {
            return Ok(x);
        }
        let dx = factor.apply(&r);
        if dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
    }
    Err(LinalgError::ResidualTooLarge { residual, bound })
}

/// Dense least-squares solution of `min |sum_j c_j cols[j] - rhs|` by a
/// column-pivoted QR. Returns `None` when the result is not finite.
pub fn least_squares(cols: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    use faer::linalg::solvers::SolveLstsq;
    let n = rhs.len();
    let m = cols.len();
    if m == 0 || m > n || cols.iter().any(|c| c.len() != n) {
        return None;
    }
    let a = faer::Mat::<f64>::from_fn(n, m, |i, j| cols[j][i]);
    let b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = a.col_piv_qr().solve_lstsq(&b);
    let out: Vec<f64> = (0..m).map(|j| x[(j, 0)]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}
