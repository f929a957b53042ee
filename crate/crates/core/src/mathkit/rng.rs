/// Counter-based uniform random stream.
///
/// Every variate is a pure function of `(seed, stream_index, draw_index)`,
/// so any draw can be regenerated without replaying the sequence. Per-pixel
/// streams make renders independent of thread scheduling, and replaying a
/// stream gives common random numbers for finite-difference checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_index: u64,
    counter: u64,
}

const STREAM_MUL: u64 = 0xd1b5_4a32_d192_ed03;
const DRAW_MUL: u64 = 0xaef1_7502_108e_f2d9;

#[inline]
fn mix64(mut z: u64) -> u64 {
    // SplitMix64 finalizer.
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        RngStream { seed, stream_index, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Number of variates drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Raw 64 random bits for draw `index`.
    #[inline]
    pub fn bits_at(&self, index: u64) -> u64 {
        let h = mix64(self.seed);
        let h = mix64(h ^ self.stream_index.wrapping_mul(STREAM_MUL));
        mix64(h ^ index.wrapping_mul(DRAW_MUL))
    }

    /// Uniform variate in `[0, 1)` for draw `index`, without advancing.
    #[inline]
    pub fn uniform_at(&self, index: u64) -> f64 {
        (self.bits_at(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let u = self.uniform_at(self.counter);
        self.counter += 1;
        u
    }

    /// Uniform integer in `0..n` (n > 0).
    pub fn next_below(&mut self, n: u64) -> u64 {
        let bits = self.bits_at(self.counter);
        self.counter += 1;
        ((bits as u128 * n as u128) >> 64) as u64
    }
}
