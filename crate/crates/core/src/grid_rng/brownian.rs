use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TimeGrid;
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::linalg;
use crate::par;

/// `n_paths` sampled Brownian paths of dimension `dim` on a uniform grid.
///
/// The increment for `(path, step, coordinate)` is a pure function of
/// `(seed, path, step, coordinate)`: the ChaCha stream is selected by the path
/// index and the word position by the step and coordinate. Paths therefore do
/// not depend on evaluation order or worker count, and two bundles built from
/// the same seed share their noise path for path.
#[derive(Debug, Clone)]
pub struct BrownianBundle {
    grid: TimeGrid,
    dim: usize,
    seed: u64,
    /// Row `p`, column `step*dim + k`.
    increments: PathArray,
    /// Row `p`, column `node*dim + k`; node 0 is zero.
    levels: PathArray,
    moment_matched: bool,
}

/// Words consumed per normal draw: two `u64` uniforms.
const WORDS_PER_DRAW: u128 = 4;

fn normal_at(rng: &mut ChaCha8Rng, slot: u128) -> f64 {
    rng.set_word_pos(slot * WORDS_PER_DRAW);
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn sample_brownian(grid: &TimeGrid, n_paths: usize, dim: usize, seed: u64) -> Result<BrownianBundle> {
    if n_paths == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::config("Brownian dimension must be at least 1"));
    }
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    let increments = PathArray::from_fn(n_paths, n * dim, |p, row| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        for (slot, v) in row.iter_mut().enumerate() {
            *v = sd * normal_at(&mut rng, slot as u128);
        }
    });
    Ok(BrownianBundle::from_increments(*grid, dim, seed, increments, false))
}

impl BrownianBundle {
    fn from_increments(grid: TimeGrid, dim: usize, seed: u64, increments: PathArray, moment_matched: bool) -> Self {
        let n = grid.n_steps();
        let levels = PathArray::from_fn(increments.n_paths(), (n + 1) * dim, |p, row| {
            let inc = increments.row(p);
            for step in 0..n {
                for k in 0..dim {
                    row[(step + 1) * dim + k] = row[step * dim + k] + inc[step * dim + k];
                }
            }
        });
        BrownianBundle {
            grid,
            dim,
            seed,
            increments,
            levels,
            moment_matched,
        }
    }

    /// Moment-matched copy: increments are centered and whitened so that
    /// their sample mean is zero and their sample covariance is exactly
    /// `dt * I` across all steps and coordinates.
    pub fn moment_matched(&self) -> Result<BrownianBundle> {
        let w = self.increments.n_cols();
        let m = self.n_paths();
        if m <= 2 * w {
            return Err(Error::config(format!(
                "moment matching needs more than {} paths",
                2 * w
            )));
        }
        let means = self.increments.column_means();
        let inc = &self.increments;
        let cov_sum = par::sum_vec(m, w * w, |p, acc| {
            let row = inc.row(p);
            for a in 0..w {
                let ra = row[a] - means[a];
                for b in 0..=a {
                    acc[a * w + b] += ra * (row[b] - means[b]);
                }
            }
        });
        let dt = self.grid.dt();
        let mut cov = vec![0.0; w * w];
        for a in 0..w {
            for b in 0..=a {
                let v = cov_sum[a * w + b] / (m as f64 * dt);
                cov[a * w + b] = v;
                cov[b * w + a] = v;
            }
        }
        let l = linalg::cholesky(&cov, w).ok_or(Error::Conditioning { path: 0, pivot: 0.0 })?;
        let increments = PathArray::from_fn(m, w, |p, row| {
            let src = inc.row(p);
            // Solve L y = (x - mean).
            for a in 0..w {
                let mut v = src[a] - means[a];
                for b in 0..a {
                    v -= l[a * w + b] * row[b];
                }
                row[a] = v / l[a * w + a];
            }
        });
        Ok(BrownianBundle::from_increments(self.grid, self.dim, self.seed, increments, true))
    }

    pub fn is_moment_matched(&self) -> bool {
        self.moment_matched
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.increments.n_paths()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Increment `B(t_{step+1}) - B(t_step)` of coordinate `k`.
    #[inline]
    pub fn db(&self, path: usize, step: usize, k: usize) -> f64 {
        self.increments.get(path, step * self.dim + k)
    }

    /// `B_k(t_node)`.
    #[inline]
    pub fn b(&self, path: usize, node: usize, k: usize) -> f64 {
        self.levels.get(path, node * self.dim + k)
    }

    pub fn increments(&self) -> &PathArray {
        &self.increments
    }

    /// Writes `path,step,dim,dB` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path,step,dim,dB")?;
        for p in 0..self.n_paths() {
            for step in 0..self.grid.n_steps() {
                for k in 0..self.dim {
                    writeln!(w, "{p},{step},{k},{:e}", self.db(p, step, k))?;
                }
            }
        }
        Ok(())
    }

    /// Sample mean of `f(path)`.
    pub fn mean<F>(&self, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        par::mean(self.n_paths(), f)
    }
}
