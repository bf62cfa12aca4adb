use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Source of the standard-normal draws used by latent sampling.
pub trait Noise {
    /// A `rows×cols` matrix, filled row-major.
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Array2<f64>;
}

/// Seeded Gaussian noise.
#[derive(Clone, Debug)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Noise for GaussianNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut self.rng))
    }
}

/// Every draw equals the same constant; `ConstNoise(0.0)` samples at the mean.
#[derive(Clone, Copy, Debug)]
pub struct ConstNoise(pub f64);

impl Noise for ConstNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_elem((rows, cols), self.0)
    }
}
