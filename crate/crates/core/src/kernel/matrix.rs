use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_horizon, check_tau, Real};
use crate::error::{PsuError, Result};

/// Lower-triangular Toeplitz leak operator `A` with `A[i][j] = (1/tau)(1 - 1/tau)^(i-j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakMatrix<F> {
    entries: Array2<F>,
    tau: f64,
}

impl<F: Real> LeakMatrix<F> {
    pub fn entries(&self) -> &Array2<F> {
        &self.entries
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.entries.view()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> usize {
        self.entries.nrows()
    }
}

/// Strictly-lower-triangular reset operator `B` with `B[i][j] = v_th (1 - 1/tau)^(i-j)` for `i > j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResetMatrix<F> {
    entries: Array2<F>,
    tau: f64,
    v_th: f64,
}

impl<F: Real> ResetMatrix<F> {
    pub fn entries(&self) -> &Array2<F> {
        &self.entries
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.entries.view()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn v_th(&self) -> f64 {
        self.v_th
    }

    pub fn horizon(&self) -> usize {
        self.entries.nrows()
    }
}

/// Entries are evaluated in `f64` and rounded once to `F`.
pub fn build_leak_matrix<F: Real>(tau: f64, horizon: usize) -> Result<LeakMatrix<F>> {
    check_tau(tau)?;
    check_horizon(horizon)?;
    let decay = 1.0 - 1.0 / tau;
    let entries = Array2::from_shape_fn((horizon, horizon), |(i, j)| {
        if i >= j {
            F::of(decay.powi((i - j) as i32) / tau)
        } else {
            F::zero()
        }
    });
    Ok(LeakMatrix { entries, tau })
}

pub fn build_reset_matrix<F: Real>(tau: f64, v_th: f64, horizon: usize) -> Result<ResetMatrix<F>> {
    check_tau(tau)?;
    check_horizon(horizon)?;
    if !(v_th.is_finite() && v_th > 0.0) {
        return Err(PsuError::Domain(format!(
            "v_th must be finite and > 0, got {v_th}"
        )));
    }
    let decay = 1.0 - 1.0 / tau;
    let entries = Array2::from_shape_fn((horizon, horizon), |(i, j)| {
        if i > j {
            F::of(v_th * decay.powi((i - j) as i32))
        } else {
            F::zero()
        }
    });
    Ok(ResetMatrix { entries, tau, v_th })
}

/// Zeroes every strictly-upper entry. Idempotent.
pub fn apply_causal_mask<F: Real>(matrix: &Array2<F>) -> Array2<F> {
    let mut out = matrix.clone();
    mask_in_place(&mut out);
    out
}

pub(crate) fn mask_in_place<F: Real>(matrix: &mut Array2<F>) {
    for ((i, j), v) in matrix.indexed_iter_mut() {
        if j > i {
            *v = F::zero();
        }
    }
}

pub fn is_lower_triangular<F: Real>(matrix: ArrayView2<'_, F>) -> bool {
    matrix
        .indexed_iter()
        .all(|((i, j), v)| j <= i || *v == F::zero())
}

/// Rejects square matrices with a nonzero strictly-upper entry.
pub fn check_lower_triangular<F: Real>(matrix: ArrayView2<'_, F>) -> Result<()> {
    if matrix.nrows() != matrix.ncols() {
        return Err(PsuError::Shape(format!(
            "kernel must be square, got [{}, {}]",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    match matrix
        .indexed_iter()
        .find(|((i, j), v)| j > i && **v != F::zero())
    {
        Some(((row, col), value)) => Err(PsuError::NotCausal {
            row,
            col,
            value: value.as_f64(),
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelRole {
    /// Replaces `A` in the leak-integrate branch (IPSU).
    InputAware,
    /// Replaces `A` inside the sigmoid spike estimate (RPSU).
    ResetAware,
}

/// Trainable `T x T` kernel that stays lower triangular across updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableKernel<F> {
    entries: Array2<F>,
    role: KernelRole,
}

impl<F: Real> LearnableKernel<F> {
    /// Starts from the analytic leak operator, so the variant initially equals PSU.
    pub fn from_leak(leak: &LeakMatrix<F>, role: KernelRole) -> Self {
        Self {
            entries: leak.entries.clone(),
            role,
        }
    }

    /// Masks `entries` on the way in.
    pub fn from_entries(entries: Array2<F>, role: KernelRole) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(PsuError::Shape(format!(
                "learnable kernel must be square, got [{}, {}]",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let mut entries = entries;
        mask_in_place(&mut entries);
        Ok(Self { entries, role })
    }

    pub fn entries(&self) -> &Array2<F> {
        &self.entries
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.entries.view()
    }

    pub fn role(&self) -> KernelRole {
        self.role
    }

    pub fn horizon(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of free (on-or-below diagonal) entries: `T(T+1)/2`.
    pub fn free_parameters(&self) -> usize {
        let t = self.horizon();
        t * (t + 1) / 2
    }

    /// Applies an in-place update and re-imposes the causal mask afterwards.
    pub fn update(&mut self, f: impl FnOnce(&mut Array2<F>)) {
        f(&mut self.entries);
        mask_in_place(&mut self.entries);
    }

    /// Raw access for optimizers; callers must follow up with [`Self::enforce_mask`].
    pub(crate) fn entries_mut(&mut self) -> &mut Array2<F> {
        &mut self.entries
    }

    pub(crate) fn enforce_mask(&mut self) {
        mask_in_place(&mut self.entries);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn leak_matrix_tau2() {
        let a = build_leak_matrix::<f64>(2.0, 4).unwrap();
        let col: Vec<f64> = a.entries().column(0).to_vec();
        assert_eq!(col, vec![0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(a.entries()[[0, 3]], 0.0);
        let single = build_leak_matrix::<f64>(2.0, 1).unwrap();
        assert_eq!(single.entries(), &array![[0.5]]);
    }

    #[test]
    fn leak_matrix_symbolic_first_column() {
        let tau: f64 = 3.7;
        let a = build_leak_matrix::<f64>(tau, 4).unwrap();
        let expected = [
            1.0 / tau,
            (tau - 1.0) / tau.powi(2),
            (tau - 1.0).powi(2) / tau.powi(3),
            (tau - 1.0).powi(3) / tau.powi(4),
        ];
        for (got, want) in a.entries().column(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn reset_matrix_tau2() {
        let b = build_reset_matrix::<f64>(2.0, 1.0, 4).unwrap();
        assert_eq!(b.entries().column(0).to_vec(), vec![0.0, 0.5, 0.25, 0.125]);
        let b1 = build_reset_matrix::<f64>(5.0, 0.3, 1).unwrap();
        assert_eq!(b1.entries(), &array![[0.0]]);
    }

    #[test]
    fn reset_matrix_bands() {
        let (tau, v_th) = (3.0, 0.8);
        let b = build_reset_matrix::<f64>(tau, v_th, 4).unwrap();
        let r = 1.0 - 1.0 / tau;
        for i in 1..4 {
            assert!((b.entries()[[i, i - 1]] - v_th * r).abs() < 1e-15);
            assert_eq!(b.entries()[[i, i]], 0.0);
        }
        for i in 2..4 {
            assert!((b.entries()[[i, i - 2]] - v_th * r * r).abs() < 1e-15);
        }
    }

    #[test]
    fn builders_reject_bad_domain() {
        assert!(matches!(
            build_leak_matrix::<f64>(1.0, 4),
            Err(PsuError::Domain(_))
        ));
        assert!(build_leak_matrix::<f64>(0.5, 4).is_err());
        assert!(build_leak_matrix::<f64>(2.0, 0).is_err());
        assert!(build_reset_matrix::<f64>(2.0, 0.0, 4).is_err());
        assert!(build_reset_matrix::<f64>(2.0, 1.0, 0).is_err());
    }

    #[test]
    fn causal_mask_examples() {
        let eye = Array2::<f64>::eye(3);
        assert_eq!(apply_causal_mask(&eye), eye);
        let ones = Array2::<f64>::ones((3, 3));
        assert_eq!(
            apply_causal_mask(&ones),
            array![[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]
        );
        let a = build_leak_matrix::<f64>(2.0, 6).unwrap();
        assert_eq!(&apply_causal_mask(a.entries()), a.entries());
    }

    #[test]
    fn lower_triangular_check() {
        assert!(check_lower_triangular(array![[1.0, 0.0], [2.0, 3.0]].view()).is_ok());
        let err = check_lower_triangular(array![[1.0, 0.5], [2.0, 3.0]].view()).unwrap_err();
        assert!(matches!(err, PsuError::NotCausal { row: 0, col: 1, .. }));
        assert!(check_lower_triangular(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn learnable_kernel_stays_masked() {
        let a = build_leak_matrix::<f64>(2.0, 5).unwrap();
        let mut k = LearnableKernel::from_leak(&a, KernelRole::InputAware);
        assert_eq!(k.entries(), a.entries());
        assert_eq!(k.free_parameters(), 15);
        k.update(|m| m.mapv_inplace(|v| v + 1.0));
        assert!(is_lower_triangular(k.view()));
        assert_eq!(k.entries()[[4, 4]], 1.5);
    }

    proptest! {
        #[test]
        fn leak_and_reset_follow_band_recurrence(tau in 1.01f64..20.0, v_th in 0.01f64..5.0, t in 1usize..24) {
            let a = build_leak_matrix::<f64>(tau, t).unwrap();
            let b = build_reset_matrix::<f64>(tau, v_th, t).unwrap();
            let r = 1.0 - 1.0 / tau;
            for i in 0..t {
                prop_assert_eq!(a.entries()[[i, i]], 1.0 / tau);
                for j in 0..i {
                    let a_rec = r * a.entries()[[i - 1, j]];
                    prop_assert!((a.entries()[[i, j]] - a_rec).abs() <= 1e-12 * a_rec.abs().max(1e-300));
                    if j + 1 < i {
                        let b_rec = r * b.entries()[[i - 1, j]];
                        prop_assert!((b.entries()[[i, j]] - b_rec).abs() <= 1e-12 * b_rec.abs().max(1e-300));
                    }
                    // Toeplitz: depends only on i - j.
                    prop_assert_eq!(a.entries()[[i, j]], a.entries()[[i - j, 0]]);
                    prop_assert_eq!(b.entries()[[i, j]], b.entries()[[i - j, 0]]);
                }
            }
        }

        #[test]
        fn causal_mask_is_a_projection(values in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let m = Array2::from_shape_vec((4, 4), values).unwrap();
            let once = apply_causal_mask(&m);
            prop_assert!(is_lower_triangular(once.view()));
            prop_assert_eq!(apply_causal_mask(&once), once.clone());
            for i in 0..4 {
                for j in 0..=i {
                    prop_assert_eq!(once[[i, j]], m[[i, j]]);
                }
            }
        }
    }
}
