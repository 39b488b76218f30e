//! Deterministic Gaussian sampling on counter-based substreams.
//!
//! ChaCha8 keyed by the experiment's 64-bit seed; independent substreams per
//! replica via `set_stream`, with disjoint stream-id ranges for disorder and
//! magnetization draws so the two never overlap. Normals come from the
//! Marsaglia polar method (fixed per build for reproducibility).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a substream is used for; keeps seed spaces disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Disorder,
    Magnetization,
    /// Free-form auxiliary draws (initial vectors for iterative solvers).
    Aux,
}

impl StreamKind {
    fn base(self) -> u64 {
        match self {
            StreamKind::Disorder => 0,
            StreamKind::Magnetization => 1 << 32,
            StreamKind::Aux => 2 << 32,
        }
    }
}

/// A deterministic stream of standard normals.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, kind: StreamKind, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(kind.base() ^ index);
        Self { rng, spare: None }
    }

    #[inline]
    fn uniform_open(&mut self) -> f64 {
        // (0,1] scaled to (-1,1); 53-bit mantissa from the top bits
        ((self.rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64
    }

    /// One standard normal draw (Marsaglia polar).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform_open() - 1.0;
            let v = 2.0 * self.uniform_open() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for slot in out {
            *slot = self.next_normal();
        }
    }
}
