use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for trial `stream` of a run seeded with `seed`.
pub(crate) fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
