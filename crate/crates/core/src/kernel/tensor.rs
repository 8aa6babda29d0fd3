use ndarray::{Array2, ArrayView2};

use super::Real;
use crate::error::{PsuError, Result};

fn check_finite<F: Real>(data: &Array2<F>, what: &str) -> Result<()> {
    if let Some(((t, n), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(PsuError::InvalidValue(format!(
            "{what} entry ({t}, {n}) is not finite: {v}"
        )));
    }
    Ok(())
}

/// Synaptic currents `I` laid out as `[T, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentTensor<F> {
    data: Array2<F>,
}

impl<F: Real> CurrentTensor<F> {
    pub fn new(data: Array2<F>) -> Result<Self> {
        check_finite(&data, "current")?;
        Ok(Self { data })
    }

    pub fn from_shape_vec(horizon: usize, width: usize, values: Vec<F>) -> Result<Self> {
        let data = Array2::from_shape_vec((horizon, width), values)
            .map_err(|e| PsuError::Shape(format!("current tensor [{horizon}, {width}]: {e}")))?;
        Self::new(data)
    }

    pub fn zeros(horizon: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((horizon, width)),
        }
    }

    pub fn horizon(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<F> {
        self.data
    }
}

/// Binary spike outputs `S` laid out as `[T, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor<F> {
    data: Array2<F>,
}

impl<F: Real> SpikeTensor<F> {
    pub fn new(data: Array2<F>) -> Result<Self> {
        if let Some(((t, n), v)) = data
            .indexed_iter()
            .find(|(_, v)| **v != F::zero() && **v != F::one())
        {
            return Err(PsuError::InvalidValue(format!(
                "spike entry ({t}, {n}) is not binary: {v}"
            )));
        }
        Ok(Self { data })
    }

    /// Caller guarantees every entry is exactly 0 or 1.
    pub(crate) fn from_binary(data: Array2<F>) -> Self {
        debug_assert!(data.iter().all(|v| *v == F::zero() || *v == F::one()));
        Self { data }
    }

    pub fn horizon(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<F> {
        self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v == F::one()).count()
    }
}

/// Pre-decision membrane potentials `V`, `[T, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MembraneTrace<F> {
    data: Array2<F>,
}

impl<F: Real> MembraneTrace<F> {
    pub(crate) fn from_array(data: Array2<F>) -> Self {
        Self { data }
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<F> {
        self.data
    }
}

/// Fraction of `[T, N]` slots carrying a spike. Empty tensors report 0.
pub fn firing_rate<F: Real>(spikes: &SpikeTensor<F>) -> f64 {
    let total = spikes.data.len();
    if total == 0 {
        return 0.0;
    }
    spikes.count() as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn firing_rate_examples() {
        let zeros = SpikeTensor::new(Array2::<f64>::zeros((3, 4))).unwrap();
        assert_eq!(firing_rate(&zeros), 0.0);
        let ones = SpikeTensor::new(Array2::<f64>::ones((3, 4))).unwrap();
        assert_eq!(firing_rate(&ones), 1.0);
        let one_of_four = SpikeTensor::new(array![[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(firing_rate(&one_of_four), 0.25);
    }

    #[test]
    fn rejects_invalid_contents() {
        assert!(SpikeTensor::new(array![[0.5f64]]).is_err());
        assert!(CurrentTensor::new(array![[f64::NAN]]).is_err());
        assert!(CurrentTensor::<f64>::from_shape_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
