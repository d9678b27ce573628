//! Compressed sparse row storage, a Jacobi-preconditioned conjugate
//! gradient solver and a sparse Cholesky wrapper.
//!
//! Reductions (dot products, norms) are summed over fixed-size chunks in a
//! fixed order so that results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix with the given per-row sorted, deduplicated column
    /// pattern and zero values.
    pub fn from_pattern(pattern: &[Vec<u32>]) -> Self {
        let mut row_ptr = Vec::with_capacity(pattern.len() + 1);
        row_ptr.push(0);
        let nnz: usize = pattern.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        for row in pattern {
            debug_assert!(row.windows(2).all(|w| w[0] < w[1]));
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            nrows: pattern.len(),
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    /// Builds from unsorted `(col, value)` lists per row; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let nrows = rows.len();
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<u32> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            nrows,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Adds `v` at `(i, j)`; the entry must be part of the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: u32, v: f64) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        let k = self.cols[r.clone()]
            .binary_search(&j)
            .expect("entry outside sparsity pattern");
        self.vals[r.start + k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, ys)| {
            let base = c * CHUNK;
            for (k, yi) in ys.iter_mut().enumerate() {
                let i = base + k;
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[p] * x[self.cols[p] as usize];
                }
                *yi = s;
            }
        });
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c as usize)] = v;
            }
        }
        m
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Sparse Cholesky factorization, reused across right-hand sides.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    Pcg,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual `||b - Ax|| / ||b||` at which iteration stops
    /// (PCG) or that a direct solve must reach.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: LinearSolver,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iterations: 20_000,
            method: LinearSolver::Cholesky,
        }
    }
}

/// Nested dissection ordering of the rows of a structurally symmetric
/// matrix whose rows carry lattice coordinates. Cut planes are chosen
/// geometrically; rows on one side that still couple to the other side (for
/// example through periodic wrap-around) are moved into the separator.
pub fn nested_dissection(a: &CsrMatrix, coords: &[[u32; 3]]) -> Vec<usize> {
    const LEAF: usize = 192;
    let n = a.nrows();
    let mut side = vec![0u8; n];
    let mut out = Vec::with_capacity(n);
    let mut stack: Vec<(Vec<u32>, bool)> = vec![((0..n as u32).collect(), false)];
    // entries flagged `true` are separators waiting to be emitted after
    // both halves
    while let Some((ids, emit)) = stack.pop() {
        if emit || ids.len() <= LEAF {
            out.extend(ids.iter().map(|&i| i as usize));
            continue;
        }
        let mut lo = [u32::MAX; 3];
        let mut hi = [0u32; 3];
        for &i in &ids {
            let c = coords[i as usize];
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        let axis = (0..3).max_by_key(|&k| (hi[k] - lo[k], 3 - k)).unwrap();
        if hi[axis] == lo[axis] {
            out.extend(ids.iter().map(|&i| i as usize));
            continue;
        }
        let mut vals: Vec<u32> = ids.iter().map(|&i| coords[i as usize][axis]).collect();
        let m = vals.len() / 2;
        let mid = *vals.select_nth_unstable(m).1;
        for &i in &ids {
            let c = coords[i as usize][axis];
            side[i as usize] = match c.cmp(&mid) {
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 3,
            };
        }
        for &i in &ids {
            if side[i as usize] == 1 {
                let (cols, _) = a.row(i as usize);
                if cols.iter().any(|&j| side[j as usize] == 2) {
                    side[i as usize] = 3;
                }
            }
        }
        let (mut left, mut right, mut sep) = (Vec::new(), Vec::new(), Vec::new());
        for &i in &ids {
            match side[i as usize] {
                1 => left.push(i),
                2 => right.push(i),
                _ => sep.push(i),
            }
            side[i as usize] = 0;
        }
        if sep.len() == ids.len() {
            out.extend(ids.iter().map(|&i| i as usize));
            continue;
        }
        stack.push((sep, true));
        stack.push((right, false));
        stack.push((left, false));
    }
    out
}

/// Cholesky factor of a symmetric positive definite CSR matrix.
pub struct Cholesky {
    symbolic: faer::sparse::linalg::cholesky::SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl std::fmt::Debug for Cholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Cholesky {{ nnz: {} }}", self.values.len())
    }
}

impl Cholesky {
    /// Factorizes `a`; with `coords` the fill-reducing ordering is
    /// [`nested_dissection`], otherwise approximate minimum degree.
    pub fn factor(a: &CsrMatrix, coords: Option<&[[u32; 3]]>) -> Result<Self> {
        use faer::dyn_stack::{GlobalPodBuffer, PodStack};
        use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, SymmetricOrdering};
        use faer::sparse::{SparseColMat, SymbolicSparseColMat};
        let failure = || Error::SolverFailure {
            iterations: 0,
            residual: f64::NAN,
            load_state: None,
        };
        let n = a.nrows();
        // the upper part of row i is the lower part of column i
        let mut col_ptrs = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        col_ptrs.push(0usize);
        for i in 0..n {
            let (c, v) = a.row(i);
            let start = c.partition_point(|&j| (j as usize) < i);
            rows.extend(c[start..].iter().map(|&j| j as usize));
            vals.extend_from_slice(&v[start..]);
            col_ptrs.push(rows.len());
        }
        let m = SparseColMat::<usize, f64>::new(SymbolicSparseColMat::new_checked(n, n, col_ptrs, None, rows), vals);

        let perm = coords.map(|c| {
            let forward = nested_dissection(a, c);
            let mut inverse = vec![0usize; n];
            for (k, &i) in forward.iter().enumerate() {
                inverse[i] = k;
            }
            faer::perm::Perm::new_checked(forward.into_boxed_slice(), inverse.into_boxed_slice())
        });
        let ordering = match &perm {
            Some(p) => SymmetricOrdering::Custom(p.as_ref()),
            None => SymmetricOrdering::Amd,
        };
        let symbolic = factorize_symbolic_cholesky(m.symbolic(), faer::Side::Lower, ordering, Default::default())
            .map_err(|_| failure())?;
        let par = faer::get_global_parallelism();
        let req = symbolic.factorize_numeric_llt_req::<f64>(par).map_err(|_| failure())?;
        let mut values = vec![0.0; symbolic.len_values()];
        symbolic
            .factorize_numeric_llt::<f64>(
                &mut values,
                m.as_ref(),
                faer::Side::Lower,
                Default::default(),
                par,
                PodStack::new(&mut GlobalPodBuffer::new(req)),
            )
            .map_err(|_| failure())?;
        Ok(Cholesky { symbolic, values })
    }

    /// Number of stored entries of the factor.
    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    fn solve_in_place(&self, rhs: &mut faer::Mat<f64>) {
        use faer::dyn_stack::{GlobalPodBuffer, PodStack};
        use faer::sparse::linalg::cholesky::LltRef;
        let par = faer::get_global_parallelism();
        let req = self
            .symbolic
            .solve_in_place_req::<f64>(rhs.ncols())
            .expect("workspace size");
        LltRef::<usize, f64>::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            faer::Conj::No,
            rhs.as_mut(),
            par,
            PodStack::new(&mut GlobalPodBuffer::new(req)),
        );
    }

    /// Solves `A x = b`, with up to two steps of iterative refinement when the
    /// residual exceeds `opts.tolerance`.
    pub fn solve(&self, a: &CsrMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
        let n = b.len();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    relative_residual: 0.0,
                },
            ));
        }
        let mut r = b.to_vec();
        let mut ax = vec![0.0; n];
        let mut rel = 1.0;
        for step in 0..3 {
            let mut rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
            self.solve_in_place(&mut rhs);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += rhs.read(i, 0);
            }
            a.mul_vec(&x, &mut ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
            rel = dot(&r, &r).sqrt() / bnorm;
            if rel <= opts.tolerance {
                return Ok((
                    x,
                    SolveStats {
                        iterations: step + 1,
                        relative_residual: rel,
                    },
                ));
            }
        }
        Err(Error::SolverFailure {
            iterations: 3,
            residual: rel,
            load_state: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from zero.
pub fn pcg(a: &CsrMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.nrows();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = opts.tolerance * bnorm;
    let mut rnorm = bnorm;
    for it in 0..opts.max_iterations {
        a.mul_vec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::SolverFailure {
                iterations: it,
                residual: rnorm / bnorm,
                load_state: None,
            });
        }
        let alpha = rz / pq;
        x.par_iter_mut()
            .zip(r.par_iter_mut())
            .zip(p.par_iter().zip(q.par_iter()))
            .for_each(|((x, r), (p, q))| {
                *x += alpha * p;
                *r -= alpha * q;
            });
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: rnorm / bnorm,
                },
            ));
        }
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(z, (r, d))| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::SolverFailure {
        iterations: opts.max_iterations,
        residual: rnorm / bnorm,
        load_state: None,
    })
}
