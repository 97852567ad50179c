use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Deterministic stream for `seed`; identical seeds give bit-identical draws.
pub fn make_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Named experiment axes that own an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Channel,
    Noise,
    Precoder,
    Pilot,
    Covariance,
    Partition,
    ModelInit,
    TransmissionNoise,
    Batch,
    Dropout,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Channel => 1,
            Stream::Noise => 2,
            Stream::Precoder => 3,
            Stream::Pilot => 4,
            Stream::Covariance => 5,
            Stream::Partition => 6,
            Stream::ModelInit => 7,
            Stream::TransmissionNoise => 8,
            Stream::Batch => 9,
            Stream::Dropout => 10,
        }
    }
}

/// Splits one root seed into independent child streams.
///
/// A child is addressed by a [`Stream`] name plus an index path (trial, user,
/// round, ...). All children share the root key and differ in the ChaCha
/// stream id, so their keystreams never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngFactory {
    root_seed: u64,
}

impl RngFactory {
    pub fn new(root_seed: u64) -> Self {
        Self { root_seed }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream(&self, name: Stream, path: &[u64]) -> SimRng {
        let mut id = splitmix64(name.tag());
        for &p in path {
            id = splitmix64(id ^ p);
        }
        let mut rng = make_rng(self.root_seed);
        rng.set_stream(id);
        rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
