//! Deterministic random streams.
//!
//! Every random quantity is drawn from a ChaCha8 generator keyed by
//! `(seed, domain)` and positioned on an explicit stream number. Stream 0
//! of a domain is reserved for shared draws (e.g. class means) and stream
//! `1 + i` belongs to agent `i`, so adding agents never perturbs the draws
//! of existing ones.
//!
//! Normals use the Box–Muller transform and Gamma variates use the
//! Marsaglia–Tsang squeeze method, both on top of the ChaCha stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent randomness domains. The value is mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Graph = 0x6772_6170_6800_0001,
    Partition = 0x7061_7274_0000_0002,
    Features = 0x6665_6174_0000_0003,
    Init = 0x696e_6974_0000_0004,
    Problem = 0x7072_6f62_0000_0005,
    Sampling = 0x7361_6d70_0000_0006,
    Spectral = 0x7370_6563_0000_0007,
    ActiveSet = 0x6163_7476_0000_0008,
}

/// Generator for `(seed, domain)` positioned on `stream`.
pub fn stream_rng(seed: u64, domain: Domain, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain as u64);
    rng.set_stream(stream);
    rng
}

/// Box–Muller normal sampler. Draws come in pairs; the second value of a
/// pair is cached and returned by the next call.
#[derive(Debug, Clone)]
pub struct Gaussian<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> Gaussian<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.sample();
        }
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

/// Gamma(shape, 1) variate by Marsaglia–Tsang. For `shape < 1` the boost
/// `Gamma(a) = Gamma(a + 1) * U^(1/a)` is applied.
pub fn gamma<R: Rng>(g: &mut Gaussian<R>, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boosted = gamma(g, shape + 1.0);
        let u = 1.0 - g.rng_mut().random::<f64>();
        return boosted * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = g.sample();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = g.rng_mut().random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u > 0.0 && u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}
