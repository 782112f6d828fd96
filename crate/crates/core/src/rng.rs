//! Explicitly seeded random number generation. No global RNG state is used anywhere.

use rand::SeedableRng;

use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Environment variable overriding the default seed of command-line runs.
pub const SEED_ENV: &str = "CARDIOKEY_SEED";

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The seed from `CARDIOKEY_SEED`, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}
