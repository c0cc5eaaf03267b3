//! Feature fixtures, dataset splits, batching and synthetic data.

pub mod fixture;
pub mod split;
pub mod synth;

pub use fixture::{
    decode_fixture, encode_fixture, read_fixture, write_fixture, FeatureRecord, Fixture,
    FixtureError, Label,
};
pub use split::{batches, DatasetManifest, Split, SplitDataset};
pub use synth::{planted_directions, synth_generate, SyntheticSpec};
