use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use mvir_core::ablation::{run_ablation, run_sweep, AblationVariant, SweepAxis};
use mvir_core::autodiff::{grad_check, Tape, Tensor, Var, DEFAULT_STEP};
use mvir_core::checkpoint::{load_params, model_bytes};
use mvir_core::config::{DecisionRule, RunConfig};
use mvir_core::data::{
    encode_fixture, read_fixture, synth_generate, DatasetManifest, FeatureRecord, Fixture, Label,
    SplitDataset,
};
use mvir_core::metrics::metrics_csv;
use mvir_core::model::MvirModel;
use mvir_core::nn::{Binding, Dropout};
use mvir_core::train::{evaluate, train_with};
use mvir_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Common, DecisionFlag};

/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            message: message.into(),
            code: 2,
        }
    }

    pub fn one_line(&self) -> String {
        format!("error: {}: {}", self.kind, self.message.replace('\n', " "))
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Config(_) => ("config", 2),
            Error::Usage(_) => ("usage", 2),
            Error::Dimension { .. } | Error::Module { .. } => ("dimension", 1),
            Error::NonFinite(_) => ("non_finite", 1),
            Error::Fixture(_) => ("fixture", 1),
            Error::Checkpoint(_) => ("checkpoint", 1),
            Error::Io { .. } => ("io", 1),
        };
        Self {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

type CmdResult = Result<ExitCode, CliError>;

fn detail(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Usage(m) => m,
        other => other.to_string(),
    }
}

/// Loads, applies overrides and validates; `extra` adds command-specific checks.
fn load_config(
    common: &Common,
    decision: Option<&DecisionFlag>,
    extra: impl FnOnce(&RunConfig, &mut Vec<String>),
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    let mut issues = Vec::new();
    if let Ok(seed) = std::env::var("MVIR_SEED") {
        match seed.trim().parse::<u64>() {
            Ok(s) => cfg.train.seed = s,
            Err(_) => issues.push(format!("MVIR_SEED: {seed:?} is not an unsigned integer")),
        }
    }
    if let Some(rule) = decision.and_then(|d| d.decision.as_deref()) {
        match rule.parse::<DecisionRule>() {
            Ok(r) => cfg.model.decision = r,
            Err(e) => issues.push(format!("--decision: {}", detail(e))),
        }
    }
    issues.extend(cfg.issues());
    extra(&cfg, &mut issues);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::invalid(issues.join("; ")))
    }
}

fn require_fixture(cfg: &RunConfig, issues: &mut Vec<String>) {
    match &cfg.data.fixture {
        None => issues.push("data.fixture: required for this command".into()),
        Some(p) if !p.is_file() => {
            issues.push(format!("data.fixture: {} does not exist", p.display()))
        }
        Some(_) => {}
    }
    if let Some(p) = &cfg.data.manifest {
        if !p.is_file() {
            issues.push(format!("data.manifest: {} does not exist", p.display()));
        }
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<SplitDataset, CliError> {
    let path = cfg.data.fixture.as_ref().expect("validated");
    let fixture = read_fixture(path)?;
    let m = &cfg.model;
    if fixture.image_channels != m.image_channels || fixture.text_channels != m.text_channels {
        return Err(CliError::invalid(format!(
            "fixture {} has {}/{} image/text channels, model expects {}/{}",
            path.display(),
            fixture.image_channels,
            fixture.text_channels,
            m.image_channels,
            m.text_channels
        )));
    }
    Ok(match &cfg.data.manifest {
        Some(p) => SplitDataset::from_manifest(&fixture, &DatasetManifest::read(p)?)?,
        None => SplitDataset::split(&fixture, cfg.data.split_seed, cfg.data.ratios)?,
    })
}

/// Writes every file only after all of them have been computed.
fn write_outputs(files: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    for (path, bytes) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        kind: "io",
        message: format!("{}: {e}", path.display()),
        code: 1,
    }
}

pub fn synth(common: &Common) -> CmdResult {
    let cfg = load_config(common, None, |_, _| {})?;
    let dir = cfg.run_dir();
    let fixture_path = cfg
        .data
        .fixture
        .clone()
        .unwrap_or_else(|| dir.join("fixture.mvirfeat"));
    let manifest_path = cfg
        .data
        .manifest
        .clone()
        .unwrap_or_else(|| dir.join("manifest.tsv"));
    let fixture: Fixture = synth_generate(&cfg.synth);
    let mut manifest = DatasetManifest::assign(
        fixture.records.iter().map(|r| r.id.as_str()),
        cfg.data.split_seed,
        cfg.data.ratios,
    )?;
    manifest.fixtures.push(fixture_path.clone());
    write_outputs(&[
        (fixture_path.clone(), encode_fixture(&fixture)?),
        (manifest_path.clone(), manifest.to_text().into_bytes()),
    ])?;
    let fake = fixture
        .records
        .iter()
        .filter(|r| r.label == Label::Fake)
        .count();
    println!(
        "wrote {} records ({fake} fake) to {} and manifest {}",
        fixture.records.len(),
        fixture_path.display(),
        manifest_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(common: &Common, decision: &DecisionFlag) -> CmdResult {
    let cfg = load_config(common, Some(decision), require_fixture)?;
    let data = load_dataset(&cfg)?;
    let model = MvirModel::new(cfg.model.clone(), cfg.train.seed)?;
    let census = model.census();
    let out = train_with(&data, model, &cfg.train, |e| {
        let val = e
            .val
            .map(|m| format!(" val_acc {:.4}", m.accuracy))
            .unwrap_or_default();
        eprintln!("epoch {} train_loss {:.6}{val}", e.epoch, e.train_loss);
    })?;
    let (test_loss, test) = evaluate(&out.model, &data.test)?;
    let mut log = format!(
        "records train {} val {} test {}\nparameters {census}\n",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    log.push_str(&out.log_text());
    let _ = writeln!(
        log,
        "test_loss {test_loss:.6} test_acc {:.4}",
        test.accuracy
    );
    let csv = metrics_csv([(cfg.model.variant.name(), &test)]);

    let dir = cfg.run_dir();
    write_outputs(&[
        (dir.join("config.json"), cfg.to_json().into_bytes()),
        (dir.join("params.mvir"), model_bytes(&out.model)),
        (dir.join("metrics.csv"), csv.clone().into_bytes()),
        (dir.join("log.txt"), log.into_bytes()),
    ])?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn eval(common: &Common, decision: &DecisionFlag, checkpoint: &Path) -> CmdResult {
    let cfg = load_config(common, Some(decision), |cfg, issues| {
        require_fixture(cfg, issues);
        if !checkpoint.is_file() {
            issues.push(format!(
                "--checkpoint: {} does not exist",
                checkpoint.display()
            ));
        }
    })?;
    let data = load_dataset(&cfg)?;
    let model = load_params(cfg.model.clone(), checkpoint)?;
    let (_, test) = evaluate(&model, &data.test)?;
    let csv = metrics_csv([(cfg.model.variant.name(), &test)]);
    write_outputs(&[(
        cfg.run_dir().join("eval_metrics.csv"),
        csv.clone().into_bytes(),
    )])?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn random_record(
    rng: &mut ChaCha8Rng,
    regions: usize,
    tokens: usize,
    ci: usize,
    ct: usize,
) -> FeatureRecord {
    let mut tensor = |rows: usize, cols: usize| {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .expect("shape")
    };
    FeatureRecord {
        id: "gradcheck".into(),
        label: Label::Fake,
        image_features: tensor(regions, ci),
        text_features: tensor(tokens, ct),
    }
}

pub fn gradcheck(common: &Common) -> CmdResult {
    let cfg = load_config(common, None, |_, _| {})?;
    // Smooth decision rule, dropout off: every checked point is differentiable.
    let model_cfg = mvir_core::config::ModelConfig {
        dropout: 0.0,
        decision: DecisionRule::Average,
        ..cfg.model.clone()
    };
    let model = MvirModel::new(model_cfg, cfg.train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let record = random_record(
        &mut rng,
        3,
        4,
        cfg.model.image_channels,
        cfg.model.text_channels,
    );
    let f = |tape: &mut Tape, vars: &[Var]| {
        let bind = Binding::from_vars(vars.to_vec());
        let out = model.forward_with(tape, &bind, &record, &mut Dropout::eval())?;
        tape.bce(out.fake_prob, record.label.as_f64())
    };
    let report = grad_check(f, model.store.tensors(), DEFAULT_STEP)?;
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    let (pi, ei) = report.worst;
    let text = format!(
        "max_rel_error {:.3e}\nworst {}[{ei}]\nelements {}\ntolerance {GRADCHECK_TOLERANCE:e}\nresult {}\n",
        report.max_rel_error,
        model.store.names()[pi],
        report.elements_checked,
        if pass { "PASS" } else { "FAIL" }
    );
    write_outputs(&[(
        cfg.run_dir().join("gradcheck.txt"),
        text.clone().into_bytes(),
    )])?;
    print!("{text}");
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn ablate(common: &Common, decision: &DecisionFlag) -> CmdResult {
    let cfg = load_config(common, Some(decision), require_fixture)?;
    let data = load_dataset(&cfg)?;
    let table = run_ablation(&data, &cfg.model, &cfg.train, &AblationVariant::ALL)?;
    let csv = table.to_csv();
    write_outputs(&[(cfg.run_dir().join("ablation.csv"), csv.clone().into_bytes())])?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(common: &Common, decision: &DecisionFlag, axis: &str, values: &[usize]) -> CmdResult {
    let mut parsed = None;
    let cfg = load_config(common, Some(decision), |cfg, issues| {
        require_fixture(cfg, issues);
        match axis.parse::<SweepAxis>() {
            Ok(a) => {
                for &v in values {
                    let mut cell = Vec::new();
                    a.apply(&cfg.model, v)
                        .validate_into(&format!("--values {v}: model"), &mut cell);
                    issues.extend(cell);
                }
                parsed = Some(a);
            }
            Err(e) => issues.push(format!("--axis: {}", detail(e))),
        }
    })?;
    let axis = parsed.expect("validated");
    let data = load_dataset(&cfg)?;
    let table = run_sweep(&data, &cfg.model, &cfg.train, axis, values)?;
    let csv = table.to_csv();
    write_outputs(&[(
        cfg.run_dir().join(format!("sweep_{}.csv", axis.name())),
        csv.clone().into_bytes(),
    )])?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}
