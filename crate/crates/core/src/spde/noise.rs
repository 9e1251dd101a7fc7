use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::Grid;

/// Generator for path `stream` of the master seed `seed`. Streams of one
/// seed are independent ChaCha sequences.
pub(crate) fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard Gaussians `xi[i][j]`, one per time step `i < nt` and node
/// `j <= nx`. The white-noise increment over a cell is `xi sqrt(dt dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    grid: Grid,
    seed: u64,
    stream: u64,
    xi: Vec<f64>,
}

impl NoisePath {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn stream(&self) -> u64 {
        self.stream
    }
    pub fn values(&self) -> &[f64] {
        &self.xi
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.xi[i * n..(i + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.xi.iter().sum::<f64>() / self.xi.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.xi.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (self.xi.len() - 1) as f64
    }

    /// Sample correlation with another lattice of the same size.
    pub fn correlation(&self, other: &NoisePath) -> f64 {
        let (ma, mb) = (self.mean(), other.mean());
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (a, b) in self.xi.iter().zip(&other.xi) {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        sab / (saa * sbb).sqrt()
    }
}

/// Noise lattice of stream 0 of `seed`.
pub fn sample_noise(grid: &Grid, seed: u64) -> NoisePath {
    sample_noise_stream(grid, seed, 0)
}

/// Noise lattice of path `stream` under master seed `seed`; identical to
/// what the ensemble runners draw for that path.
pub fn sample_noise_stream(grid: &Grid, seed: u64, stream: u64) -> NoisePath {
    let mut src = NoiseSource::Stream(path_rng(seed, stream));
    let n = grid.n_nodes();
    let mut xi = vec![0.0; grid.nt() * n];
    for (i, row) in xi.chunks_mut(n).enumerate() {
        src.fill_row(i, row);
    }
    NoisePath { grid: *grid, seed, stream, xi }
}

/// Row-by-row supply of Gaussians, either drawn on the fly or replayed.
#[allow(clippy::large_enum_variant)]
pub(crate) enum NoiseSource<'a> {
    Stream(ChaCha8Rng),
    Stored(&'a NoisePath),
}

impl NoiseSource<'_> {
    #[inline]
    pub(crate) fn fill_row(&mut self, i: usize, out: &mut [f64]) {
        match self {
            NoiseSource::Stream(rng) => out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            NoiseSource::Stored(p) => out.copy_from_slice(p.row(i)),
        }
    }
}
