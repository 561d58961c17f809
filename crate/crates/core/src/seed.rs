//! Seed derivation.
//!
//! Every random component takes its own seed derived from one top-level seed,
//! so adding draws to one component never shifts another.
//!
//! | component      | derived seed                  |
//! |----------------|-------------------------------|
//! | corpus         | `derive(seed, "corpus")`      |
//! | retrieval set  | `derive(seed, "retrieval")`   |
//! | model init     | `derive(seed, "model")`       |
//! | batch sampling | `derive(seed, "batches")`     |
//! | router noise   | `derive(seed, "router")`      |
//! | mock endpoint i| `mix(derive(seed, "mock"), i)`|

/// One round of the SplitMix64 output function.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a named component, using FNV-1a over the label.
pub fn derive(seed: u64, label: &str) -> u64 {
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    });
    mix(seed, h)
}
