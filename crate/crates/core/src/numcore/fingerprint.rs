use super::Tensor;

/// FNV-1a over discrete forward-pass decisions (relu masks, sampler
/// cells, indicator values). Two evaluations with equal fingerprints went
/// through the same piecewise-smooth region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn push_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    /// Mixes in the `x > 0` pattern of a relu pre-activation.
    pub fn push_mask(&mut self, pre: &Tensor) {
        let mut word = 0u64;
        for (i, &x) in pre.data().iter().enumerate() {
            if x > 0.0 {
                word |= 1 << (i % 64);
            }
            if i % 64 == 63 {
                self.push_u64(word);
                word = 0;
            }
        }
        self.push_u64(word);
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}
