use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use distaudit::audit::{
    embed_manifest, run_audit, run_similarity_study, score_pairs, AuditConfig, Provenance,
};
use distaudit::distort::{apply_with, DistortionSpec, SeedContext};
use distaudit::embed::EmbeddingStore;
use distaudit::imgcore::{load_image, save_image};
use distaudit::landmarks::load_keypoints;
use distaudit::metrics::{group_scores, scores_csv, summarize, ThresholdScope};
use distaudit::protocol::{
    balance_manifest, generate_pairs_with, load_manifest, validate_protocol, Axis, PairProtocol,
    ProtocolParams,
};
use distaudit::rng::content_hash;
use distaudit::synth::{build_dataset, SynthConfig};

#[derive(Parser)]
#[command(name = "distaudit", version, about = "Audit demographic bias of face matchers under image distortions")]
struct Cli {
    /// Print progress to stderr; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one distortion to one image.
    Distort(DistortArgs),
    /// Generate a seeded pairs protocol from a manifest.
    Pairs(PairsArgs),
    /// Embed every manifest image with the toy extractor.
    Embed(EmbedArgs),
    /// Score a pairs file against an embedding store.
    Match(MatchArgs),
    /// Run the full audit over an intensity grid.
    Audit(ConfigArgs),
    /// Similarity-vs-intensity curves per subgroup.
    Curves(ConfigArgs),
    /// Check a pairs file against its manifest.
    Validate(ValidateArgs),
    /// Build the synthetic face dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DistortArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Distortion as JSON, e.g. '{"GaussianBlur":{"sigma":2.0}}'.
    #[arg(long)]
    spec: String,
    /// 68-point keypoints, required for occlusion.
    #[arg(long)]
    keypoints: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Item id for the random stream; defaults to the input file stem.
    #[arg(long, alias = "item_id")]
    item_id: Option<String>,
    /// Resize reduced-resolution output back to the input size.
    #[arg(long, alias = "restore_resolution")]
    restore_resolution: bool,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, alias = "per_label", default_value_t = 300)]
    per_label: usize,
}

impl ProtocolArgs {
    fn params(&self) -> ProtocolParams {
        ProtocolParams {
            splits: self.splits,
            per_label: self.per_label,
        }
    }
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "gender")]
    axis: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Balance the control axis before sampling, as the audit does.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    balance: bool,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long, default_value = "pairs.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Distortion applied before embedding; identity when absent.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, alias = "restore_resolution", default_value_t = true, action = clap::ArgAction::Set)]
    restore_resolution: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output store; `.csv` selects the CSV form.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Embedding store; repeat to merge clean and distorted stores.
    #[arg(long, required = true)]
    store: Vec<PathBuf>,
    /// Distortion of the probe side; identity when absent.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, default_value = "gender")]
    axis: String,
    #[arg(long, default_value_t = 0.01)]
    far: f64,
    #[arg(long, alias = "threshold_scope", default_value = "pooled")]
    threshold_scope: String,
    #[arg(long, default_value = "scores.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value = "gender")]
    axis: String,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Also write the findings as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    #[arg(long, alias = "subjects_per_cell", default_value_t = SynthConfig::default().subjects_per_cell)]
    subjects_per_cell: usize,
    #[arg(long, alias = "images_per_subject", default_value_t = SynthConfig::default().images_per_subject)]
    images_per_subject: usize,
    #[arg(long, default_value_t = SynthConfig::default().size)]
    size: u32,
}

/// Audit configuration: a JSON file plus per-key flag overrides.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    family: Option<String>,
    /// JSON array of distortion specs.
    #[arg(long)]
    grid: Option<String>,
    /// `toy` or a path to an embedding store.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    far: Option<f64>,
    #[arg(long, alias = "threshold_scope")]
    threshold_scope: Option<String>,
    #[arg(long, alias = "restore_resolution", action = clap::ArgAction::Set)]
    restore_resolution: Option<bool>,
    #[arg(long, action = clap::ArgAction::Set)]
    balance: Option<bool>,
    #[arg(long, alias = "out_dir")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Bad input from the command line or a config file (exit status 2).
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(err: impl fmt::Display) -> anyhow::Error {
    anyhow!(Usage(err.to_string()))
}

fn parse_spec(text: Option<&str>) -> Result<DistortionSpec> {
    match text {
        None => Ok(DistortionSpec::Identity),
        Some(t) => DistortionSpec::from_json(t).map_err(usage),
    }
}

fn parse_axis(text: &str) -> Result<Axis> {
    text.parse().map_err(usage)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `out.ext` -> `out.ext.provenance.json`.
fn provenance_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    output.with_file_name(name)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(content_hash(&bytes))
}

fn write_provenance(output: &Path, prov: &Provenance) -> Result<()> {
    write_file(&provenance_path(output), &prov.to_json()?)
}

struct Ctx {
    verbose: u8,
}

impl Ctx {
    fn info(&self, msg: impl fmt::Display) {
        if self.verbose > 0 {
            eprintln!("{msg}");
        }
    }
}

fn cmd_distort(ctx: &Ctx, a: DistortArgs) -> Result<()> {
    let spec = parse_spec(Some(&a.spec))?;
    if matches!(spec, DistortionSpec::Occlusion { .. }) && a.keypoints.is_none() {
        return Err(usage("occlusion needs --keypoints"));
    }
    let img = load_image(&a.input)?;
    let kps = a.keypoints.as_ref().map(load_keypoints).transpose()?;
    let item = match a.item_id {
        Some(id) => id,
        None => a
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let out = apply_with(&img, &spec, &SeedContext::new(a.seed, item.as_str()), kps.as_ref(), a.restore_resolution)?;
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_image(&out, &a.output)?;
    let mut prov = Provenance::new(
        "distort",
        a.seed,
        json!({ "spec": spec, "item_id": item, "restore_resolution": a.restore_resolution }),
    );
    prov.inputs.insert("input".into(), hash_file(&a.input)?);
    if let Some(k) = &a.keypoints {
        prov.inputs.insert("keypoints".into(), hash_file(k)?);
    }
    write_provenance(&a.output, &prov)?;
    ctx.info(format_args!("wrote {} ({})", a.output.display(), spec));
    Ok(())
}

fn cmd_pairs(ctx: &Ctx, a: PairsArgs) -> Result<()> {
    let axis = parse_axis(&a.axis)?;
    let params = a.protocol.params();
    let records = load_manifest(&a.manifest)?;
    let records = match (a.balance, axis.control()) {
        (true, Some(control)) => balance_manifest(&records, axis, control, a.seed)?,
        _ => records,
    };
    let protocol = generate_pairs_with(&records, axis, a.seed, params)?;
    let csv = protocol.to_csv()?;
    write_file(&a.out, &csv)?;
    let mut prov = Provenance::new(
        "pairs",
        a.seed,
        json!({ "axis": axis, "balance": a.balance, "splits": params.splits, "per_label": params.per_label }),
    );
    prov.inputs.insert("manifest".into(), hash_file(&a.manifest)?);
    for (subgroup, disjoint) in &protocol.subject_disjoint {
        if !disjoint {
            prov.notes.push(format!("splits of subgroup {subgroup} are pair-disjoint only"));
        }
    }
    write_provenance(&a.out, &prov)?;
    ctx.info(format_args!("wrote {} pairs to {}", protocol.len(), a.out.display()));
    Ok(())
}

fn cmd_embed(ctx: &Ctx, a: EmbedArgs) -> Result<()> {
    let spec = parse_spec(a.spec.as_deref())?;
    if a.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let (store, prov) = embed_manifest(&a.manifest, &spec, a.seed, a.restore_resolution, a.threads)?;
    store.write(&a.out)?;
    write_provenance(&a.out, &prov)?;
    ctx.info(format_args!("wrote {} embeddings to {}", store.len(), a.out.display()));
    Ok(())
}

fn merge_stores(paths: &[PathBuf]) -> Result<EmbeddingStore> {
    let mut stores = paths.iter().map(EmbeddingStore::read);
    let mut merged = stores.next().context("no --store given")??;
    for (store, path) in stores.zip(&paths[1..]) {
        for (key, v) in store?.iter() {
            merged
                .insert(key, v.clone())
                .with_context(|| format!("merging {}", path.display()))?;
        }
    }
    Ok(merged)
}

fn cmd_match(ctx: &Ctx, a: MatchArgs) -> Result<()> {
    let spec = parse_spec(a.spec.as_deref())?;
    let axis = parse_axis(&a.axis)?;
    let scope: ThresholdScope = a.threshold_scope.parse().map_err(usage)?;
    if !(a.far > 0.0 && a.far < 1.0) {
        return Err(usage(format!("--far must lie in (0, 1), got {}", a.far)));
    }
    let pairs_bytes = fs::read(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let protocol = PairProtocol::from_csv(&pairs_bytes, axis, ProtocolParams::default())?;
    let store = merge_stores(&a.store)?;
    let scores = score_pairs(&protocol, &store, &spec)?;
    write_file(&a.out, &scores_csv(&scores)?)?;
    let summary = summarize(&group_scores(&scores), a.far, scope)?;
    let mut prov = Provenance::new(
        "match",
        0,
        json!({ "spec": spec, "axis": axis, "far": a.far, "threshold_scope": scope, "summary": summary }),
    );
    prov.inputs.insert("pairs".into(), content_hash(&pairs_bytes));
    for (i, path) in a.store.iter().enumerate() {
        prov.inputs.insert(format!("store{i}"), hash_file(path)?);
    }
    write_provenance(&a.out, &prov)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    ctx.info(format_args!("wrote {} scores to {}", scores.len(), a.out.display()));
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<bool> {
    let axis = parse_axis(&a.axis)?;
    let records = load_manifest(&a.manifest)?;
    let bytes = fs::read(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let protocol = PairProtocol::from_csv(&bytes, axis, a.protocol.params())?;
    let report = validate_protocol(&protocol, &records);
    for v in &report.violations {
        println!("violation: {v}");
    }
    println!(
        "{} pairs checked, {} violations",
        report.pairs_checked,
        report.violations.len()
    );
    if let Some(path) = &a.report {
        let mut json = serde_json::to_vec_pretty(&report)?;
        json.push(b'\n');
        write_file(path, &json)?;
        let mut prov = Provenance::new("validate", 0, json!({ "axis": axis }));
        prov.inputs.insert("manifest".into(), hash_file(&a.manifest)?);
        prov.inputs.insert("pairs".into(), content_hash(&bytes));
        write_provenance(path, &prov)?;
    }
    Ok(report.is_ok())
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        subjects_per_cell: a.subjects_per_cell,
        images_per_subject: a.images_per_subject,
        size: a.size,
    };
    let records = build_dataset(&a.out, &cfg)?;
    let manifest = a.out.join("manifest.csv");
    let mut prov = Provenance::new("synth", cfg.seed, serde_json::to_value(cfg)?);
    prov.inputs.insert("manifest".into(), hash_file(&manifest)?);
    write_provenance(&manifest, &prov)?;
    ctx.info(format_args!("wrote {} images under {}", records.len(), a.out.display()));
    Ok(())
}

/// Merge the config file with flag overrides and parse the result.
fn resolve_config(a: &ConfigArgs) -> Result<AuditConfig> {
    let mut map = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match serde_json::from_str::<Value>(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
            {
                Value::Object(m) => m,
                _ => return Err(usage(format!("{}: config must be a JSON object", path.display()))),
            }
        }
        None => Map::new(),
    };
    let mut set = |key: &str, v: Value| {
        map.insert(key.to_string(), v);
    };
    if let Some(v) = &a.manifest {
        set("manifest", json!(v));
    }
    if let Some(v) = &a.axis {
        set("axis", json!(v));
    }
    if let Some(v) = &a.family {
        set("family", json!(v));
    }
    if let Some(v) = &a.grid {
        let grid: Value = serde_json::from_str(v).map_err(|e| usage(format!("--grid: {e}")))?;
        set("grid", grid);
    }
    if let Some(v) = &a.provider {
        let choice: distaudit::audit::ProviderChoice = v.parse().map_err(usage)?;
        set("provider", serde_json::to_value(choice)?);
    }
    if let Some(v) = a.seed {
        set("seed", json!(v));
    }
    if let Some(v) = a.far {
        set("far", json!(v));
    }
    if let Some(v) = &a.threshold_scope {
        let scope: ThresholdScope = v.parse().map_err(usage)?;
        set("threshold_scope", serde_json::to_value(scope)?);
    }
    if let Some(v) = a.restore_resolution {
        set("restore_resolution", json!(v));
    }
    if let Some(v) = a.balance {
        set("balance", json!(v));
    }
    if let Some(v) = &a.out_dir {
        set("out_dir", json!(v));
    }
    if let Some(v) = a.threads {
        set("threads", json!(v));
    }
    let cfg = AuditConfig::from_value(Value::Object(map)).map_err(|e| usage(format!("config: {e}")))?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn out_dir(cfg: &AuditConfig) -> Result<PathBuf> {
    cfg.out_dir
        .clone()
        .ok_or_else(|| usage("no output directory; set out_dir in the config or pass --out-dir"))
}

fn cmd_audit(ctx: &Ctx, a: ConfigArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let dir = out_dir(&cfg)?;
    ctx.info(format_args!("auditing {} intensities", cfg.intensities().len() + 1));
    let output = run_audit(&cfg)?;
    for path in output.write(&dir)? {
        ctx.info(format_args!("wrote {}", path.display()));
    }
    print!("{}", String::from_utf8(output.report.to_csv()?)?);
    Ok(())
}

fn cmd_curves(ctx: &Ctx, a: ConfigArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let dir = out_dir(&cfg)?;
    let study = run_similarity_study(&cfg)?;
    for path in study.write(&dir)? {
        ctx.info(format_args!("wrote {}", path.display()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let ctx = Ctx { verbose: cli.verbose };
    match cli.command {
        Command::Distort(a) => cmd_distort(&ctx, a)?,
        Command::Pairs(a) => cmd_pairs(&ctx, a)?,
        Command::Embed(a) => cmd_embed(&ctx, a)?,
        Command::Match(a) => cmd_match(&ctx, a)?,
        Command::Audit(a) => cmd_audit(&ctx, a)?,
        Command::Curves(a) => cmd_curves(&ctx, a)?,
        Command::Validate(a) => return cmd_validate(a),
        Command::Synth(a) => cmd_synth(&ctx, a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|c| c.is::<Usage>()) {
                eprintln!("run `distaudit --help` for usage");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
