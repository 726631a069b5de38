//! Sparse direct solver wrapper: LU factorisation with symbolic reuse across
//! refactorisations that keep the same sparsity pattern.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};

use crate::error::SimError;

/// Direct solver holding on to the symbolic analysis so repeated numeric
/// factorisations of the same pattern stay cheap.
pub struct DirectSolver {
    symbolic: Option<SymbolicLu<usize>>,
    lu: Option<Lu<usize, f64>>,
    n: usize,
    /// Column pointers and row indices of the analysed pattern. The numeric
    /// factorisation is only valid for this exact pattern, and conditionally
    /// assembled tangent terms can change it between increments.
    pattern: (Vec<usize>, Vec<usize>),
}

impl DirectSolver {
    pub fn new() -> Self {
        DirectSolver {
            symbolic: None,
            lu: None,
            n: 0,
            pattern: (Vec::new(), Vec::new()),
        }
    }

    /// Forget the symbolic analysis (pattern changed, e.g. after insertion).
    pub fn invalidate_pattern(&mut self) {
        self.symbolic = None;
        self.lu = None;
        self.pattern = (Vec::new(), Vec::new());
    }

    pub fn is_factorized(&self) -> bool {
        self.lu.is_some()
    }

    /// Assemble the triplets into CSC and factorize.
    pub fn factorize(
        &mut self,
        n: usize,
        triplets: &[Triplet<usize, usize, f64>],
    ) -> Result<(), SimError> {
        let mat = SparseColMat::try_new_from_triplets(n, n, triplets)
            .map_err(|e| SimError::LinearSolve(format!("matrix creation: {e:?}")))?;
        let same_pattern = self.n == n
            && self.pattern.0 == mat.symbolic().col_ptr()
            && self.pattern.1 == mat.symbolic().row_idx();
        if self.symbolic.is_none() || !same_pattern {
            self.symbolic = Some(
                SymbolicLu::try_new(mat.symbolic())
                    .map_err(|e| SimError::LinearSolve(format!("symbolic analysis: {e:?}")))?,
            );
            self.n = n;
            self.pattern = (
                mat.symbolic().col_ptr().to_vec(),
                mat.symbolic().row_idx().to_vec(),
            );
        }
        let sym = self.symbolic.clone().unwrap();
        self.lu = Some(
            Lu::try_new_with_symbolic(sym, mat.as_ref())
                .map_err(|e| SimError::LinearSolve(format!("numeric factorization: {e:?}")))?,
        );
        Ok(())
    }

    /// Solve in place; `rhs` becomes the solution.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<(), SimError> {
        let lu = self
            .lu
            .as_ref()
            .ok_or_else(|| SimError::LinearSolve("solve before factorization".into()))?;
        assert_eq!(rhs.len(), self.n);
        let mut mat = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        lu.solve_in_place(mat.as_mut());
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = mat[(i, 0)];
        }
        Ok(())
    }
}
