//! Stable 64-bit mixing, independent of the std hasher (which may change between releases).

#[inline]
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive accumulator of 64-bit words.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mixer(u64);

impl Mixer {
    pub(crate) fn new(seed: u64) -> Self {
        Mixer(splitmix64(seed))
    }

    #[inline]
    pub(crate) fn push(&mut self, word: u64) {
        self.0 = splitmix64(self.0 ^ word.rotate_left(23)).wrapping_add(word);
    }

    pub(crate) fn finish(self) -> u64 {
        splitmix64(self.0)
    }
}
