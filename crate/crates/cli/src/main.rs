use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{Map, Value};

use fmpn_core::dataset::{align_samples, load_manifest, AugmentPolicy, DatasetManifest, LandmarkTemplate};
use fmpn_core::evaluation::{predict_faces, run_ablation, transfer_masks, EvalReport, RunConfig};
use fmpn_core::maskgen::{generate_mask_bank, MaskBank};
use fmpn_core::networks::{BackboneRegistry, Checkpoint, FmpnModel};
use fmpn_core::synth::{generate, verify_separability, SynthSpec};
use fmpn_core::training::{fit, TrainingSet, Variant};
use fmpn_core::{FmpnError, Result};

#[derive(Parser)]
#[command(name = "fmpn", version, about = "Facial motion masks, mask-guided expression training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face corpus with manifest and spec.
    Synth {
        /// `default` or a JSON spec file.
        #[arg(long, default_value = "default")]
        spec: String,
        #[command(flatten)]
        common: Common,
    },
    /// Build the per-class motion mask bank of a manifest.
    GenMasks {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on every sample of a manifest.
    Train {
        /// Write a checkpoint every N epochs (0: final checkpoint only).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Subject-independent k-fold cross-validation of one variant.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate every variant (or only `--variant`) and summarize.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate on a target manifest using a mask bank from another corpus.
    Transfer {
        #[command(flatten)]
        common: Common,
    },
    /// Predict the class of every manifest sample with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file; flags and overrides take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Mask bank directory; generated from the manifest when omitted.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    /// full, no_lG or baseline_cnn.
    #[arg(long)]
    variant: Option<String>,
    /// JSON object mapping target class names to bank class names.
    #[arg(long = "class-map")]
    class_map: Option<PathBuf>,
    /// Built-in defaults underneath the config file: standard or desk.
    #[arg(long, default_value = "standard")]
    preset: String,
    /// `key=value` overrides; dotted keys reach nested fields (augment.crop_size=48).
    overrides: Vec<String>,
}

const DEFAULT_MANIFEST: &str = "synth/manifest.csv";

/// Keys accepted in config files besides the run config itself.
const CLI_KEYS: [&str; 5] = ["manifest", "bank", "out", "variant", "class_map"];

struct Resolved {
    run: RunConfig,
    manifest: PathBuf,
    bank: Option<PathBuf>,
    out: PathBuf,
    folds: usize,
    variant: Option<Variant>,
    class_map: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> FmpnError {
    FmpnError::Config(msg.into())
}

fn read_json(path: &Path) -> Result<Value> {
    if !path.is_file() {
        return Err(config_error(format!("config file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| config_error(format!("override {key}: {part} is not inside an object")))?;
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| config_error(format!("override \"{o}\" is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_dotted(root, key.trim(), value)?;
    }
    Ok(())
}

/// Names present in `value` but absent from `reference`, as dotted paths.
fn unknown_keys(value: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(v), Value::Object(r)) = (value, reference) {
        for (k, sub) in v {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                Some(rsub) => unknown_keys(sub, rsub, &path, out),
                None => out.push(path),
            }
        }
    }
}

fn preset(name: &str) -> Result<RunConfig> {
    match name {
        "standard" => Ok(RunConfig::default()),
        "desk" => Ok(RunConfig::desk()),
        other => Err(config_error(format!("unknown preset \"{other}\" (expected standard or desk)"))),
    }
}

/// Built-in defaults < config file < `key=value` overrides < flags.
fn resolve(command: &str, common: &Common, default_out: &str) -> Result<Resolved> {
    let defaults = preset(&common.preset)?;
    let reference = serde_json::to_value(&defaults)?;
    let mut value = reference.clone();
    if let Some(path) = &common.config {
        merge(&mut value, read_json(path)?);
    }
    apply_overrides(&mut value, &common.overrides)?;
    let map = value.as_object_mut().expect("config is an object");
    let mut flag = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            map.insert(key.to_string(), v);
        }
    };
    let path_value = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::String(p.display().to_string()));
    flag("seed", common.seed.map(Value::from));
    flag("folds", common.folds.map(Value::from));
    flag("manifest", path_value(&common.manifest));
    flag("bank", path_value(&common.bank));
    flag("out", path_value(&common.out));
    flag("variant", common.variant.clone().map(Value::String));
    flag("class_map", path_value(&common.class_map));

    let mut cli = Map::new();
    for key in CLI_KEYS {
        if let Some(v) = map.remove(key) {
            cli.insert(key.to_string(), v);
        }
    }
    let mut unknown = Vec::new();
    unknown_keys(&value, &reference, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(config_error(format!("unknown config keys: {}", unknown.join(", "))));
    }
    let run: RunConfig = serde_json::from_value(value)?;
    run.validate()?;

    let text = |key: &str| -> Result<Option<String>> {
        match cli.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(config_error(format!("{key} must be a string, got {other}"))),
        }
    };
    let variant = text("variant")?.map(|v| Variant::parse(&v)).transpose()?;
    let resolved = Resolved {
        manifest: PathBuf::from(text("manifest")?.unwrap_or_else(|| DEFAULT_MANIFEST.into())),
        bank: text("bank")?.map(PathBuf::from),
        out: PathBuf::from(text("out")?.unwrap_or_else(|| default_out.into())),
        folds: run.folds,
        variant,
        class_map: text("class_map")?.map(PathBuf::from),
        run,
    };
    eprintln!(
        "fmpn {command}: defaults={} < config={} < overrides={:?} < flags",
        common.preset,
        common.config.as_ref().map_or("none".into(), |p| p.display().to_string()),
        common.overrides
    );
    eprintln!("fmpn {command}: effective config {}", serde_json::to_string(&resolved.run)?);
    Ok(resolved)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| FmpnError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FmpnError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_bank(r: &Resolved, manifest: &DatasetManifest) -> Result<MaskBank> {
    match &r.bank {
        Some(dir) => MaskBank::load(dir),
        None => {
            eprintln!("no --bank given, building masks from {}", r.manifest.display());
            generate_mask_bank(manifest, &LandmarkTemplate::default())
        }
    }
}

fn synth(spec_arg: &str, common: &Common) -> Result<()> {
    let mut value = if spec_arg == "default" {
        serde_json::to_value(SynthSpec::default())?
    } else {
        let mut v = serde_json::to_value(SynthSpec::default())?;
        merge(&mut v, read_json(Path::new(spec_arg))?);
        v
    };
    apply_overrides(&mut value, &common.overrides)?;
    if let Some(seed) = common.seed {
        value["seed"] = Value::from(seed);
    }
    let spec: SynthSpec = serde_json::from_value(value)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    let manifest = generate(&spec, &out)?;
    let separable = verify_separability(&manifest)?;
    eprintln!(
        "wrote {} expressive faces of {} subjects to {} (separable: {separable})",
        manifest.samples.len(),
        spec.subjects,
        out.display()
    );
    Ok(())
}

fn gen_masks(common: &Common) -> Result<()> {
    let r = resolve("gen-masks", common, "masks")?;
    let manifest = load_manifest(&r.manifest)?;
    let bank = generate_mask_bank(&manifest, &LandmarkTemplate::default())?;
    bank.save(&r.out)?;
    eprintln!("wrote {} masks to {}", bank.num_classes(), r.out.display());
    Ok(())
}

fn train(checkpoint_every: usize, common: &Common) -> Result<()> {
    let r = resolve("train", common, "runs/train")?;
    let variant = r.variant.unwrap_or(Variant::Full);
    let manifest = load_manifest(&r.manifest)?;
    let bank = load_bank(&r, &manifest)?;
    let faces = align_samples(&manifest, &LandmarkTemplate::default())?;
    let set = TrainingSet::new(faces, &bank)?;
    let registry = BackboneRegistry::default();
    let seed = r.run.train.seed;
    let mut model = FmpnModel::init(&r.run.model_spec(manifest.num_classes()), seed, &registry)?;
    if let Some(path) = &r.run.pretrained_backbone {
        model.load_pretrained_backbone(&Checkpoint::load(path)?)?;
    }
    create_dir(&r.out)?;
    let ckpt_dir = r.out.join("checkpoints");
    if checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let history = fit(&mut model, &set, &r.run.train, variant, r.run.pretrain_fmg, &mut |m, rec| {
        eprintln!(
            "epoch {:>4} stage {} l_total {:.6} train_acc {}",
            rec.epoch,
            rec.stage,
            rec.l_total,
            rec.train_acc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        if checkpoint_every > 0 && (rec.epoch + 1) % checkpoint_every == 0 {
            m.to_checkpoint(seed, rec.epoch + 1)
                .save(&ckpt_dir.join(format!("epoch_{:04}.ckpt", rec.epoch + 1)))?;
        }
        Ok(())
    })?;
    write(&r.out.join("history.csv"), history.to_csv())?;
    model
        .to_checkpoint(seed, history.records.len())
        .save(&r.out.join("model.ckpt"))?;
    write(&r.out.join("config.json"), serde_json::to_string_pretty(&r.run)?)?;
    eprintln!("wrote history.csv and model.ckpt to {}", r.out.display());
    Ok(())
}

fn print_report(label: &str, report: &EvalReport) {
    println!(
        "{label}: mean_accuracy {:.4} (uniform {:.4}) folds {:?}",
        report.mean_accuracy, report.uniform_mean_accuracy, report.per_fold_accuracy
    );
}

fn eval(common: &Common) -> Result<()> {
    let r = resolve("eval", common, "runs/eval")?;
    let variant = r.variant.unwrap_or(Variant::Full);
    let manifest = load_manifest(&r.manifest)?;
    let bank = load_bank(&r, &manifest)?;
    let report = run_ablation(&manifest, &bank, &r.run, variant, r.folds)?;
    report.save(&r.out)?;
    print_report(variant.name(), &report);
    Ok(())
}

fn ablate(common: &Common) -> Result<()> {
    let r = resolve("ablate", common, "runs/ablate")?;
    let manifest = load_manifest(&r.manifest)?;
    let bank = load_bank(&r, &manifest)?;
    let variants = match r.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut summary = String::from("variant,mean_accuracy,uniform_mean_accuracy,fmg_evaluations\n");
    for v in variants {
        let report = run_ablation(&manifest, &bank, &r.run, v, r.folds)?;
        report.save(&r.out.join(v.name()))?;
        print_report(v.name(), &report);
        summary.push_str(&format!(
            "{},{},{},{}\n",
            v.name(),
            report.mean_accuracy,
            report.uniform_mean_accuracy,
            report.fmg_evaluations
        ));
    }
    write(&r.out.join("summary.csv"), summary)
}

fn transfer(common: &Common) -> Result<()> {
    let r = resolve("transfer", common, "runs/transfer")?;
    let bank_dir = r
        .bank
        .as_ref()
        .ok_or_else(|| FmpnError::Argument("transfer needs --bank with the source corpus masks".into()))?;
    let bank = MaskBank::load(bank_dir)?;
    let manifest = load_manifest(&r.manifest)?;
    let class_map: HashMap<String, String> = match &r.class_map {
        Some(path) => serde_json::from_value(read_json(path)?)?,
        None => HashMap::new(),
    };
    let report = transfer_masks(&bank, &manifest, &r.run, &class_map, r.folds)?;
    report.save(&r.out)?;
    print_report("transfer", &report);
    Ok(())
}

fn predict(checkpoint: &Path, common: &Common) -> Result<()> {
    let r = resolve("predict", common, "runs/predict")?;
    let variant = r.variant.unwrap_or(Variant::Full);
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut model = FmpnModel::from_checkpoint(&ckpt, &BackboneRegistry::default())?;
    let manifest = load_manifest(&r.manifest)?;
    let faces = align_samples(&manifest, &LandmarkTemplate::default())?;
    let policy = AugmentPolicy {
        crop_size: ckpt.header.spec.backbone.input_size,
        ..AugmentPolicy::default()
    }
    .eval();
    let refs: Vec<_> = faces.iter().collect();
    let preds = predict_faces(&mut model, &refs, &policy, variant.uses_fmg(), r.run.eval_batch_size)?;
    let mut csv = String::from("path,label,predicted\n");
    let mut correct = 0;
    for (s, &p) in manifest.samples.iter().zip(&preds) {
        correct += usize::from(s.label == p);
        csv.push_str(&format!(
            "{},{},{}\n",
            s.image_path, manifest.class_names[s.label], manifest.class_names[p]
        ));
    }
    create_dir(&r.out)?;
    write(&r.out.join("predictions.csv"), csv)?;
    println!("accuracy {:.4} on {} samples", correct as f64 / preds.len().max(1) as f64, preds.len());
    Ok(())
}

fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var("FMPN_NUM_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_error(format!("FMPN_NUM_WORKERS must be a positive integer, got \"{raw}\"")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    match &cli.command {
        Command::Synth { spec, common } => synth(spec, common),
        Command::GenMasks { common } => gen_masks(common),
        Command::Train {
            checkpoint_every,
            common,
        } => train(*checkpoint_every, common),
        Command::Eval { common } => eval(common),
        Command::Ablate { common } => ablate(common),
        Command::Transfer { common } => transfer(common),
        Command::Predict { checkpoint, common } => predict(checkpoint, common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_help());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
