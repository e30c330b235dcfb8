//! Shared fixtures for the criterion benches.

use lcot_core::codec::{fit_codebook, trajectory_deltas, Codebook};
use lcot_core::nn::ParamStore;
use lcot_core::policy::{Policy, PolicyConfig};
use lcot_core::sim::{generate_dataset, Clip, SimConfig, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub clips: Vec<Clip>,
    pub codebook: Codebook,
    pub policy: Policy,
    pub store: ParamStore,
}

/// Eight training clips per category, a 256-code codebook and a default-sized policy.
pub fn fixture() -> Fixture {
    let sim = SimConfig { train_per_category: 8, ..SimConfig::default() };
    let clips = generate_dataset(&sim, Split::Train, 1).expect("dataset").clips;
    let deltas: Vec<_> = clips.iter().flat_map(|c| trajectory_deltas(&c.ego_future)).collect();
    let codebook = fit_codebook(&deltas, 256, 1, 10, 10.0).expect("codebook");
    let (policy, store) = Policy::new(&PolicyConfig::default(), codebook.len(), &mut ChaCha8Rng::seed_from_u64(1)).expect("policy");
    Fixture { clips, codebook, policy, store }
}
