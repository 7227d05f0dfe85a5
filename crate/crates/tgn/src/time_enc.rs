use diffnum::{Real, Tape, Tensor};

use crate::error::{ModelError, Result};

/// Learnable harmonic time encoding: φ(Δt) = cos(ω·Δt + b), elementwise over
/// a frequency ladder. Frequencies start at a geometric spread covering ten
/// decades so both small and large gaps resolve before any training.
pub struct TimeEncoder {
    /// Frequencies, shape [1, dim].
    pub omega: Tensor,
    /// Phases, shape [dim].
    pub phase: Tensor,
    dim: usize,
}

impl TimeEncoder {
    pub fn new(dim: usize) -> Self {
        let omega: Vec<Real> = (0..dim)
            .map(|i| {
                let exponent = if dim == 1 {
                    0.0
                } else {
                    9.0 * i as f64 / (dim - 1) as f64
                };
                (10f64.powf(-exponent)) as Real
            })
            .collect();
        TimeEncoder {
            omega: Tensor::param(&[1, dim], omega).expect("valid shape"),
            phase: Tensor::param(&[dim], vec![0.0; dim]).expect("valid shape"),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Encode a column of non-negative time deltas into a (n, dim) tensor.
    /// A negative delta means causality broke upstream and is rejected.
    pub fn encode(&self, tape: &Tape, deltas: &[f64]) -> Result<Tensor> {
        if let Some(&bad) = deltas.iter().find(|&&d| d < 0.0 || !d.is_finite()) {
            return Err(ModelError::Config(format!(
                "negative or non-finite time delta {bad}"
            )));
        }
        let col = Tensor::new(&[deltas.len(), 1], deltas.iter().map(|&d| d as Real).collect())?;
        let scaled = tape.matmul(&col, &self.omega)?;
        let shifted = tape.add_row(&scaled, &self.phase)?;
        Ok(tape.cos(&shifted))
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor)> {
        vec![("omega", self.omega.clone()), ("phase", self.phase.clone())]
    }
}
