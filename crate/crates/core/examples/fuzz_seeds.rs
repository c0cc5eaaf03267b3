//! Writes the checked-in fuzz corpus seeds: `cargo run -p mvir-core --example fuzz_seeds -- fuzz/corpus`.

use std::fs;
use std::path::PathBuf;

use mvir_core::checkpoint::model_bytes;
use mvir_core::config::{ModelConfig, RunConfig};
use mvir_core::data::{encode_fixture, synth_generate, DatasetManifest, SyntheticSpec};
use mvir_core::model::MvirModel;

type Res = Result<(), Box<dyn std::error::Error>>;

fn main() -> Res {
    let root = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "fuzz/corpus".into()),
    );
    let write = |target: &str, name: &str, bytes: &[u8]| -> Res {
        let dir = root.join(target);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("seed_{name}")), bytes)?;
        Ok(())
    };

    let spec = SyntheticSpec {
        fake_count: 2,
        real_count: 2,
        regions: 3,
        image_channels: 4,
        text_channels: 3,
        min_tokens: 1,
        max_tokens: 3,
        ..SyntheticSpec::desk()
    };
    let fixture = synth_generate(&spec);
    write("fixture_decode", "small", &encode_fixture(&fixture)?)?;
    let mut empty = fixture.clone();
    empty.records.clear();
    write("fixture_decode", "empty", &encode_fixture(&empty)?)?;

    let model = MvirModel::new(ModelConfig::tiny(4, 3), 1)?;
    write("checkpoint_decode", "tiny", &model_bytes(&model))?;
    let no_mva = ModelConfig {
        variant: mvir_core::config::Variant::NoMva,
        ..ModelConfig::tiny(4, 3)
    };
    write(
        "checkpoint_decode",
        "no_mva",
        &model_bytes(&MvirModel::new(no_mva, 2)?),
    )?;

    let manifest = DatasetManifest::assign(
        fixture.records.iter().map(|r| r.id.as_str()),
        42,
        [0.5, 0.25, 0.25],
    )?;
    write("manifest_parse", "small", manifest.to_text().as_bytes())?;

    write(
        "config_parse",
        "default",
        RunConfig::default().to_json().as_bytes(),
    )?;
    write(
        "config_parse",
        "partial",
        br#"{"name": "x", "model": {"views": 4, "decision": "average"}}"#,
    )?;
    Ok(())
}
