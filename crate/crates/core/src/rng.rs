//! Counter-based random streams.
//!
//! Every stochastic node draws from its own stream keyed by
//! `(root_seed, batch_index, node_name)`. The generator is Philox-4x32-10,
//! so a stream's state is just its key plus a 128-bit block counter and two
//! streams never share mutable state. This is what makes batch evaluation
//! independent of worker count and scheduling order.
//!
//! Draw budgets are fixed: one uniform or one standard normal consumes
//! exactly one counter block.

use sha2::{Digest, Sha256};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline(always)]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// The Philox-4x32 bijection with 10 rounds.
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        c = philox_round(c, k);
    }
    c
}

/// SHA-256 over `root_seed ‖ batch_index ‖ node_name` (little-endian integers,
/// UTF-8 name). Shared by stream keying and external-simulator seeds.
pub fn stream_digest(root_seed: u64, batch_index: u64, node_name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root_seed.to_le_bytes());
    h.update(batch_index.to_le_bytes());
    h.update(node_name.as_bytes());
    h.finalize().into()
}

/// 64-bit seed handed to external simulators for a given batch and node.
pub fn derived_seed(root_seed: u64, batch_index: u64, node_name: &str) -> u64 {
    let d = stream_digest(root_seed, batch_index, node_name);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// A keyed Philox stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    root_seed: u64,
    batch_index: u64,
    node_name: String,
    key: [u32; 2],
    counter: u128,
}

impl RngStream {
    pub fn new(root_seed: u64, batch_index: u64, node_name: &str) -> Self {
        let d = stream_digest(root_seed, batch_index, node_name);
        let key = [
            u32::from_le_bytes(d[0..4].try_into().expect("4 bytes")),
            u32::from_le_bytes(d[4..8].try_into().expect("4 bytes")),
        ];
        Self {
            root_seed,
            batch_index,
            node_name: node_name.to_string(),
            key,
            counter: 0,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn batch_index(&self) -> u64 {
        self.batch_index
    }

    pub fn node_name(&self) -> &str {
        &self.node_name
    }

    /// Number of blocks consumed so far.
    pub fn counter(&self) -> u128 {
        self.counter
    }

    pub fn key(&self) -> [u32; 2] {
        self.key
    }

    /// Produces the next 128-bit block and advances the counter by one.
    pub fn next_block(&mut self) -> [u32; 4] {
        let c = self.counter;
        let ctr = [c as u32, (c >> 32) as u32, (c >> 64) as u32, (c >> 96) as u32];
        self.counter = self.counter.wrapping_add(1);
        philox4x32_10(ctr, self.key)
    }

    pub fn next_u64(&mut self) -> u64 {
        let b = self.next_block();
        (u64::from(b[0]) << 32) | u64::from(b[1])
    }

    /// Uniform double in `[0, 1)` from the 53 high bits of one block.
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Standard normal via Box–Muller on the two halves of one block.
    pub fn standard_normal(&mut self) -> f64 {
        let b = self.next_block();
        let u1 = to_unit((u64::from(b[0]) << 32) | u64::from(b[1]));
        let u2 = to_unit((u64::from(b[2]) << 32) | u64::from(b[3]));
        // 1 - u1 lies in (0, 1], so the log is finite.
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n` (n > 0), one block per draw.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = (self.uniform() * n as f64) as usize;
        i.min(n - 1)
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Convenience constructor mirroring the free-function form.
pub fn rng_stream(root_seed: u64, batch_index: u64, node_name: &str) -> RngStream {
    RngStream::new(root_seed, batch_index, node_name)
}
