use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};

use crate::error::{Error, Result};

/// A seeded random stream identified by `(base_seed, stream_id)`.
///
/// The key is derived from `base_seed` and the ChaCha stream counter from
/// `stream_id`, so any stream can be opened directly without replaying
/// earlier ones. Monte Carlo trials each open their own child stream, which
/// makes results independent of evaluation order and thread count.
#[derive(Clone, Debug)]
pub struct SimRng {
    base_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(base_seed);
        inner.set_stream(stream_id);
        Self {
            base_seed,
            stream_id,
            inner,
        }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Opens the `index`-th child stream under the same base seed.
    pub fn child(&self, index: u64) -> SimRng {
        SimRng::new(self.base_seed, mix(self.stream_id, index))
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits, in [0, 1).
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(self)
    }

    /// Circularly-symmetric complex Gaussian with total variance `var`.
    pub fn complex_normal(&mut self, var: f64) -> num_complex::Complex64 {
        let s = (0.5 * var).sqrt();
        num_complex::Complex64::new(s * self.standard_normal(), s * self.standard_normal())
    }
}

// splitmix64 finalizer over the pair.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn sample_poisson(mean: f64, rng: &mut SimRng) -> Result<u64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::domain(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

/// Sampler for `||h||^2` under MRT over `M` antennas with i.i.d. unit-mean
/// Rayleigh entries, i.e. Erlang(M, 1).
#[derive(Clone, Debug)]
pub struct ErlangSampler {
    shape: u32,
    gamma: Option<Gamma<f64>>,
}

impl ErlangSampler {
    pub fn new(antennas: u32) -> Result<Self> {
        if antennas < 1 {
            return Err(Error::domain("antenna count must be >= 1"));
        }
        let gamma = if antennas == 1 {
            None
        } else {
            Some(Gamma::new(antennas as f64, 1.0).map_err(|e| Error::domain(e.to_string()))?)
        };
        Ok(Self {
            shape: antennas,
            gamma,
        })
    }

    pub fn shape(&self) -> u32 {
        self.shape
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match &self.gamma {
            None => Exp1.sample(rng),
            Some(g) => g.sample(rng),
        }
    }
}

pub fn sample_channel_gain(antennas: u32, rng: &mut SimRng) -> Result<f64> {
    Ok(ErlangSampler::new(antennas)?.sample(rng))
}
