//! Exact scalar, vector, and matrix operations of the MinMax algebra, plus the
//! scan-composition monoid and its action.
//!
//! The algebra works over finite reals only: `a ⊕ b := max(a, b)` and
//! `a ⊙ b := min(a, b)`. Both are selections, so every result is bit-identical
//! to one of its operands and all laws (associativity, commutativity,
//! distributivity of ⊙ over ⊕) hold exactly in floating point. NaN and
//! infinities are rejected at the API boundary; the monoid identity built from
//! value bounds stands in for ±∞.

use crate::{Error, Result};

/// `a ⊕ b = max(a, b)`. Ties return the left operand.
#[inline(always)]
pub fn oplus(a: f64, b: f64) -> f64 {
    if b > a {
        b
    } else {
        a
    }
}

/// `a ⊙ b = min(a, b)`. Ties return the left operand.
#[inline(always)]
pub fn odot(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

/// A finite real, the element type of the algebra.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MmScalar(f64);

impl MmScalar {
    /// Rejects NaN and ±∞; the algebra is defined over ℝ only.
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(MmScalar(value))
        } else {
            Err(Error::Domain(format!("MmScalar must be finite, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn oplus(self, other: MmScalar) -> MmScalar {
        MmScalar(oplus(self.0, other.0))
    }

    pub fn odot(self, other: MmScalar) -> MmScalar {
        MmScalar(odot(self.0, other.0))
    }
}

/// Dense row-major matrix over finite reals. Vectors are `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MmMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("matrix entry must be finite, got {bad}")));
        }
        Ok(MmMatrix { rows, cols, data })
    }

    /// Column vector from a slice.
    pub fn column(entries: &[f64]) -> Result<Self> {
        MmMatrix::new(entries.len(), 1, entries.to_vec())
    }

    /// Constant-filled matrix.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        MmMatrix::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("matrix entry must be finite, got {value}")));
        }
        self.data[i * self.cols + j] = value;
        Ok(())
    }

    /// MinMax matrix product: `C[i,j] = ⊕_k A[i,k] ⊙ B[k,j]`.
    ///
    /// The ⊕-reduction folds left over k; the result is independent of the
    /// fold order because ⊕ is an exact associative selection.
    pub fn matmul(&self, other: &MmMatrix) -> Result<MmMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul inner dims disagree: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, p, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * p..(i + 1) * p];
            for j in 0..n {
                let mut acc = odot(row[0], other.data[j]);
                for k in 1..p {
                    acc = oplus(acc, odot(row[k], other.data[k * n + j]));
                }
                out[i * n + j] = acc;
            }
        }
        MmMatrix::new(m, n, out)
    }

    /// Entrywise ⊕.
    pub fn oplus(&self, other: &MmMatrix) -> Result<MmMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "entrywise ⊕ shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| oplus(a, b))
            .collect();
        MmMatrix::new(self.rows, self.cols, data)
    }

    /// Smallest and largest entry.
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = self.data[0];
        let mut hi = self.data[0];
        for &v in &self.data[1..] {
            lo = odot(lo, v);
            hi = oplus(hi, v);
        }
        (lo, hi)
    }
}

/// Value bounds `[v_min, v_max]` a monoid identity is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonoidBounds {
    v_min: f64,
    v_max: f64,
}

impl MonoidBounds {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self> {
        if !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::Domain("bounds must be finite".into()));
        }
        if v_min > v_max {
            return Err(Error::Domain(format!("bounds inverted: {v_min} > {v_max}")));
        }
        Ok(MonoidBounds { v_min, v_max })
    }

    /// Tight bounds covering every value in the iterator.
    pub fn covering<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        let mut it = values.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::Domain("bounds need at least one value".into()))?;
        let (mut lo, mut hi) = (first, first);
        for v in it {
            lo = odot(lo, v);
            hi = oplus(hi, v);
        }
        MonoidBounds::new(lo, hi)
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn contains(&self, v: f64) -> bool {
        self.v_min <= v && v <= self.v_max
    }
}

/// One recurrence step `⟨A, b⟩`, an element of the MinMax scan monoid.
///
/// Its action on a state is `x ↦ (A ⊗ x) ⊕ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPair {
    a: MmMatrix,
    b: MmMatrix,
}

impl StepPair {
    pub fn new(a: MmMatrix, b: MmMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Shape(format!("A must be square, got {}x{}", a.rows(), a.cols())));
        }
        if b.cols() != 1 || b.rows() != a.rows() {
            return Err(Error::Shape(format!(
                "b must be {}x1, got {}x{}",
                a.rows(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(StepPair { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &MmMatrix {
        &self.a
    }

    pub fn b(&self) -> &MmMatrix {
        &self.b
    }

    /// Monoid composition `self ⊛ other := ⟨A₂ ⊗ A₁, (A₂ ⊗ b₁) ⊕ b₂⟩`
    /// (`self` is applied first). Satisfies
    /// `apply(self ⊛ other, x) = apply(other, apply(self, x))`.
    pub fn compose(&self, other: &StepPair) -> Result<StepPair> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "compose dims disagree: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let a = other.a.matmul(&self.a)?;
        let b = other.a.matmul(&self.b)?.oplus(&other.b)?;
        StepPair::new(a, b)
    }

    /// Default monoid action: `(A ⊗ x) ⊕ b`.
    pub fn apply(&self, x: &MmMatrix) -> Result<MmMatrix> {
        if x.cols() != 1 || x.rows() != self.dim() {
            return Err(Error::Shape(format!(
                "apply expects {}x1 state, got {}x{}",
                self.dim(),
                x.rows(),
                x.cols()
            )));
        }
        self.a.matmul(x)?.oplus(&self.b)
    }

    /// Monoid identity over `[v_min, v_max]`: `E` has `v_max` on the diagonal
    /// and `v_min` elsewhere, `e` is all `v_min`. Neutral on both sides for
    /// any element whose entries lie within the bounds.
    pub fn identity(bounds: MonoidBounds, n: usize) -> Result<StepPair> {
        if n == 0 {
            return Err(Error::Domain("identity needs dimension >= 1".into()));
        }
        let mut e = MmMatrix::filled(n, n, bounds.v_min())?;
        for i in 0..n {
            e.set(i, i, bounds.v_max())?;
        }
        let b = MmMatrix::filled(n, 1, bounds.v_min())?;
        StepPair::new(e, b)
    }
}
