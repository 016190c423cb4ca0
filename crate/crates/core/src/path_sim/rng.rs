use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based substream for path `index`: the key comes from `seed`, the
/// stream id from `index`, so paths can be generated in any order.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
