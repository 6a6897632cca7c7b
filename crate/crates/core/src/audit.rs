//! End-to-end bias audit: distort probes over an intensity grid, embed,
//! score every protocol pair, threshold at a fixed FAR and report
//! per-subgroup accuracy with the degree of bias.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distort::{apply_with, DistortionFamily, DistortionSpec, SeedContext};
use crate::embed::{safe_cosine, store_key, EmbeddingProvider, EmbeddingStore, EmbeddingVector, ToyExtractor};
use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::landmarks::{load_keypoints, KeypointSet};
use crate::metrics::{
    curve_csv, scores_csv, similarity_curve, summarize, CurvePoint, ScoreRecord, ScoreSet,
    SubgroupAccuracy, ThresholdScope,
};
use crate::protocol::{
    balance_manifest, generate_pairs, parse_manifest, Axis, ManifestRecord, PairLabel, PairProtocol,
};
use crate::rng::{content_hash, RNG_VERSION};

pub const TOOL_NAME: &str = "distaudit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderChoice {
    /// The built-in hand-crafted extractor.
    #[default]
    Toy,
    /// A precomputed embedding store keyed by `image_id` (clean) and
    /// `image_id@descriptor` (distorted).
    Store(PathBuf),
}

impl std::str::FromStr for ProviderChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::param("provider", "must be \"toy\" or a store path")),
            "toy" => Ok(ProviderChoice::Toy),
            path => Ok(ProviderChoice::Store(PathBuf::from(path.strip_prefix("store:").unwrap_or(path)))),
        }
    }
}

fn default_axis() -> Axis {
    Axis::Gender
}

fn default_far() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_axis")]
    pub axis: Axis,
    /// Family whose default grid is used when `grid` is absent.
    #[serde(default)]
    pub family: Option<DistortionFamily>,
    /// Explicit intensity grid; overrides the family default.
    #[serde(default)]
    pub grid: Option<Vec<DistortionSpec>>,
    #[serde(default)]
    pub provider: ProviderChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_far")]
    pub far: f64,
    #[serde(default)]
    pub threshold_scope: ThresholdScope,
    #[serde(default = "yes")]
    pub restore_resolution: bool,
    /// Subsample so the control axis is equally represented per subgroup.
    #[serde(default = "yes")]
    pub balance: bool,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

impl AuditConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            axis: default_axis(),
            family: None,
            grid: None,
            provider: ProviderChoice::Toy,
            seed: 0,
            far: default_far(),
            threshold_scope: ThresholdScope::Pooled,
            restore_resolution: true,
            balance: true,
            out_dir: None,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(value)?)
    }

    /// Intensities requested, not counting the prepended identity.
    pub fn intensities(&self) -> Vec<DistortionSpec> {
        match (&self.grid, self.family) {
            (Some(grid), _) => grid.clone(),
            (None, Some(family)) => family.default_grid(),
            (None, None) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.far > 0.0 && self.far < 1.0) {
            return Err(Error::param("far", format!("must lie in (0, 1), got {}", self.far)));
        }
        let grid = self.intensities();
        if grid.is_empty() {
            return Err(Error::param("grid", "intensity grid is empty; set family or grid"));
        }
        for spec in &grid {
            spec.validate()?;
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be at least 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub rng: String,
    pub config: serde_json::Value,
    /// Input name to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            seed,
            rng: RNG_VERSION.into(),
            config,
            inputs: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub intensity: String,
    pub distortion: DistortionSpec,
    /// Shared threshold; null under per-subgroup thresholding.
    pub threshold: Option<f64>,
    pub subgroups: Vec<SubgroupAccuracy>,
    pub dob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub rows: Vec<AuditRow>,
    pub provenance: Provenance,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// One row per (intensity, subgroup), then a `DoB` row per intensity.
    /// Percentages are printed with two decimals.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["intensity", "subgroup", "accuracy", "n_genuine", "n_impostor", "threshold"])?;
        let fmt_t = |t: Option<f64>| t.map(|t| format!("{t:.6}")).unwrap_or_default();
        for row in &self.rows {
            for s in &row.subgroups {
                w.write_record([
                    row.intensity.clone(),
                    s.label.clone(),
                    percent(s.accuracy),
                    s.n_genuine.to_string(),
                    s.n_impostor.to_string(),
                    fmt_t(s.threshold.or(row.threshold)),
                ])?;
            }
            w.write_record([
                row.intensity.clone(),
                "DoB".to_string(),
                percent(row.dob),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Two decimals, ties rounded up.
fn percent(v: f64) -> String {
    format!("{:.2}", (v * 100.0 + 0.5).floor() / 100.0)
}

/// Everything one audit run produces.
#[derive(Debug, Clone)]
pub struct AuditOutput {
    pub report: AuditReport,
    pub protocol: PairProtocol,
    pub scores: Vec<ScoreRecord>,
}

impl AuditOutput {
    /// Write `report.json`, `report.csv`, `scores.csv` and `provenance.json`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let out = out_dir.as_ref();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let files = [
            ("report.json", self.report.to_json()?),
            ("report.csv", self.report.to_csv()?),
            ("scores.csv", scores_csv(&self.scores)?),
            ("provenance.json", self.report.provenance.to_json()?),
        ];
        let mut written = Vec::new();
        for (name, bytes) in files {
            let path = out.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

// ---------------------------------------------------------------------------
// Dataset access
// ---------------------------------------------------------------------------

/// A manifest together with the directory its relative paths resolve from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub manifest_hash: String,
}

impl Dataset {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let path = manifest.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            records: parse_manifest(&bytes)?,
            manifest_hash: content_hash(&bytes),
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn record(&self, image_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }
}

/// Run `f` over `items` in a pool of `threads` workers, keeping input
/// order. The first error in input order wins.
pub fn par_map<T, U, F>(threads: Option<usize>, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<U>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

/// Images (and keypoints when needed) of the given ids, loaded in parallel.
struct Media {
    images: HashMap<String, Image>,
    keypoints: HashMap<String, KeypointSet>,
    /// Combined hash of the image files in id order.
    digest: String,
}

fn load_media(ds: &Dataset, ids: &[String], with_keypoints: bool, threads: Option<usize>) -> Result<Media> {
    let by_id: HashMap<&str, &ManifestRecord> =
        ds.records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let loaded = par_map(threads, ids, |id| {
        let rec = by_id[id.as_str()];
        let path = ds.resolve(&rec.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let hash = content_hash(&bytes);
        let img = crate::imgcore::decode_image(&bytes)?;
        let kps = if with_keypoints {
            let rel = rec.keypoints_path.as_deref().ok_or_else(|| {
                Error::Config(format!("image {:?} has no keypoints_path; occlusion needs one", rec.image_id))
            })?;
            Some(load_keypoints(ds.resolve(rel))?)
        } else {
            None
        };
        Ok((img, kps, hash))
    })?;
    let mut images = HashMap::with_capacity(ids.len());
    let mut keypoints = HashMap::new();
    let mut joined = String::with_capacity(ids.len() * 64);
    for (id, (img, kps, hash)) in ids.iter().zip(loaded) {
        images.insert(id.clone(), img);
        if let Some(k) = kps {
            keypoints.insert(id.clone(), k);
        }
        joined.push_str(&hash);
    }
    Ok(Media {
        images,
        keypoints,
        digest: content_hash(joined.as_bytes()),
    })
}

/// Source of embeddings for (image, distortion) items.
enum Source {
    Extract {
        provider: Box<dyn EmbeddingProvider>,
        media: Media,
        seed: u64,
        restore: bool,
    },
    Store(EmbeddingStore),
}

impl Source {
    fn embed_all(&self, ids: &[String], spec: &DistortionSpec, threads: Option<usize>) -> Result<Vec<EmbeddingVector>> {
        match self {
            Source::Extract { provider, media, seed, restore } => par_map(threads, ids, |id| {
                let img = &media.images[id];
                let distorted = match spec {
                    DistortionSpec::Identity => None,
                    _ => Some(apply_with(
                        img,
                        spec,
                        &SeedContext::new(*seed, id.as_str()),
                        media.keypoints.get(id),
                        *restore,
                    )?),
                };
                provider.embed(distorted.as_ref().unwrap_or(img))
            }),
            Source::Store(store) => {
                let keys: Vec<String> = ids.iter().map(|id| store_key(id, spec)).collect();
                let missing: Vec<String> = keys.iter().filter(|k| store.get(k).is_none()).cloned().collect();
                if !missing.is_empty() {
                    return Err(Error::MissingKeys(missing));
                }
                Ok(keys.iter().map(|k| store.get(k).expect("checked").clone()).collect())
            }
        }
    }
}

fn needs_keypoints(grid: &[DistortionSpec]) -> bool {
    grid.iter().any(|s| matches!(s, DistortionSpec::Occlusion { .. }))
}

struct Prepared {
    dataset: Dataset,
    records: Vec<ManifestRecord>,
    source: Source,
    provenance: Provenance,
}

/// Load, balance and hash inputs; open the embedding source for `ids`
/// chosen by `select`.
fn prepare(
    cfg: &AuditConfig,
    command: &str,
    grid: &[DistortionSpec],
    select: impl FnOnce(&[ManifestRecord]) -> Result<Vec<String>>,
) -> Result<(Prepared, Vec<String>)> {
    let dataset = Dataset::load(&cfg.manifest)?;
    let records = match (cfg.balance, cfg.axis.control()) {
        (true, Some(control)) => balance_manifest(&dataset.records, cfg.axis, control, cfg.seed)?,
        _ => dataset.records.clone(),
    };
    let ids = select(&records)?;

    let mut provenance = Provenance::new(command, cfg.seed, serde_json::to_value(cfg)?);
    provenance.inputs.insert("manifest".into(), dataset.manifest_hash.clone());
    provenance.notes.push("accuracy pools the pairs of all splits".into());

    let source = match &cfg.provider {
        ProviderChoice::Toy => {
            let media = load_media(&dataset, &ids, needs_keypoints(grid), cfg.threads)?;
            provenance.inputs.insert("images".into(), media.digest.clone());
            Source::Extract {
                provider: Box::new(ToyExtractor),
                media,
                seed: cfg.seed,
                restore: cfg.restore_resolution,
            }
        }
        ProviderChoice::Store(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            provenance.inputs.insert("store".into(), content_hash(&bytes));
            Source::Store(EmbeddingStore::read(path)?)
        }
    };
    Ok((
        Prepared {
            dataset,
            records,
            source,
            provenance,
        },
        ids,
    ))
}

/// The audit over the configured grid, with identity prepended.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditOutput> {
    cfg.validate()?;
    let mut grid = vec![DistortionSpec::Identity];
    grid.extend(cfg.intensities());
    audit_grid(cfg, "audit", &grid)
}

/// Identity-only audit of the same configuration.
pub fn run_baseline(cfg: &AuditConfig) -> Result<AuditOutput> {
    let mut base = cfg.clone();
    base.family = None;
    base.grid = Some(Vec::new());
    if !(base.far > 0.0 && base.far < 1.0) {
        return Err(Error::param("far", format!("must lie in (0, 1), got {}", base.far)));
    }
    audit_grid(&base, "baseline", &[DistortionSpec::Identity])
}

fn audit_grid(cfg: &AuditConfig, command: &str, grid: &[DistortionSpec]) -> Result<AuditOutput> {
    let mut protocol = None;
    let (prep, ids) = prepare(cfg, command, grid, |records| {
        let p = generate_pairs(records, cfg.axis, cfg.seed)?;
        let ids: BTreeSet<String> = p
            .pairs()
            .flat_map(|pair| [pair.probe_id.clone(), pair.gallery_id.clone()])
            .collect();
        protocol = Some(p);
        Ok(ids.into_iter().collect())
    })?;
    let protocol = protocol.expect("set by prepare");
    let mut provenance = prep.provenance;
    provenance
        .inputs
        .insert("pairs".into(), content_hash(&protocol.to_csv()?));
    for (subgroup, disjoint) in &protocol.subject_disjoint {
        if !disjoint {
            provenance
                .notes
                .push(format!("splits of subgroup {subgroup} are pair-disjoint only"));
        }
    }

    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let clean = prep.source.embed_all(&ids, &DistortionSpec::Identity, cfg.threads)?;
    let probe_ids: Vec<String> = protocol
        .pairs()
        .map(|p| p.probe_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let probe_index: HashMap<&str, usize> =
        probe_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let mut rows = Vec::with_capacity(grid.len());
    let mut scores = Vec::new();
    for spec in grid {
        let probes = match spec {
            DistortionSpec::Identity => None,
            _ => Some(prep.source.embed_all(&probe_ids, spec, cfg.threads)?),
        };
        let descriptor = spec.descriptor();
        let mut zero_norm = 0usize;
        let mut sets: BTreeMap<&str, ScoreSet> = protocol
            .axis
            .subgroups
            .iter()
            .map(|s| {
                (
                    s.as_str(),
                    ScoreSet {
                        subgroup: s.clone(),
                        ..ScoreSet::default()
                    },
                )
            })
            .collect();
        for (i, pair) in protocol.pairs().enumerate() {
            let probe = match &probes {
                Some(p) => &p[probe_index[pair.probe_id.as_str()]],
                None => &clean[index[pair.probe_id.as_str()]],
            };
            let gallery = &clean[index[pair.gallery_id.as_str()]];
            let (score, substituted) = safe_cosine(probe, gallery)?;
            zero_norm += substituted as usize;
            let set = sets.get_mut(pair.subgroup.as_str()).expect("known subgroup");
            match pair.label {
                PairLabel::Genuine => set.genuine.push(score),
                PairLabel::Impostor => set.impostor.push(score),
            }
            scores.push(ScoreRecord {
                pair_id: format!("{descriptor}/{i}"),
                subgroup: pair.subgroup.clone(),
                label: pair.label,
                score,
            });
        }
        let sets: Vec<ScoreSet> = protocol
            .axis
            .subgroups
            .iter()
            .map(|s| sets.remove(s.as_str()).expect("known subgroup"))
            .collect();
        if zero_norm > 0 {
            provenance.notes.push(format!(
                "{descriptor}: {zero_norm} pairs scored with a zero-norm embedding replaced by e1"
            ));
        }
        let summary = summarize(&sets, cfg.far, cfg.threshold_scope)?;
        rows.push(AuditRow {
            intensity: spec.intensity_label(),
            distortion: *spec,
            threshold: summary.threshold,
            subgroups: summary.accuracies,
            dob: summary.dob,
        });
    }
    drop(prep.dataset);

    Ok(AuditOutput {
        report: AuditReport {
            config: cfg.clone(),
            rows,
            provenance,
        },
        protocol,
        scores,
    })
}

/// Similarity curves over every image of the (balanced) manifest.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub points: Vec<CurvePoint>,
    pub provenance: Provenance,
}

impl StudyOutput {
    /// Write `curves.csv` and `provenance.json`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let out = out_dir.as_ref();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut written = Vec::new();
        for (name, bytes) in [
            ("curves.csv", curve_csv(&self.points)?),
            ("provenance.json", self.provenance.to_json()?),
        ] {
            let path = out.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn run_similarity_study(cfg: &AuditConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let mut grid = vec![DistortionSpec::Identity];
    grid.extend(cfg.intensities());
    let (prep, ids) = prepare(cfg, "curves", &grid, |records| {
        Ok(records.iter().map(|r| r.image_id.clone()).collect())
    })?;
    let dim = |v: &[EmbeddingVector]| v.first().map(EmbeddingVector::dim).unwrap_or(0);
    let to_store = |vectors: Vec<EmbeddingVector>| -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(dim(&vectors));
        for (id, v) in ids.iter().zip(vectors) {
            store.insert(id.clone(), v)?;
        }
        Ok(store)
    };
    let clean = to_store(prep.source.embed_all(&ids, &DistortionSpec::Identity, cfg.threads)?)?;
    let mut distorted = Vec::with_capacity(grid.len());
    for spec in &grid {
        let store = match spec {
            DistortionSpec::Identity => clean.clone(),
            _ => to_store(prep.source.embed_all(&ids, spec, cfg.threads)?)?,
        };
        distorted.push((spec.intensity_label(), store));
    }
    let partition: BTreeMap<String, String> = prep
        .records
        .iter()
        .map(|r| (r.image_id.clone(), cfg.axis.label(r)))
        .collect();
    Ok(StudyOutput {
        points: similarity_curve(&clean, &distorted, &partition)?,
        provenance: prep.provenance,
    })
}

/// Embed every manifest image under `spec` into a store keyed by
/// [`store_key`].
pub fn embed_manifest(
    manifest: impl AsRef<Path>,
    spec: &DistortionSpec,
    seed: u64,
    restore_resolution: bool,
    threads: Option<usize>,
) -> Result<(EmbeddingStore, Provenance)> {
    spec.validate()?;
    let dataset = Dataset::load(manifest)?;
    let ids: Vec<String> = dataset.records.iter().map(|r| r.image_id.clone()).collect();
    let media = load_media(&dataset, &ids, needs_keypoints(&[*spec]), threads)?;
    let mut provenance = Provenance::new(
        "embed",
        seed,
        serde_json::json!({
            "spec": spec,
            "restore_resolution": restore_resolution,
            "provider": ToyExtractor.name(),
        }),
    );
    provenance.inputs.insert("manifest".into(), dataset.manifest_hash.clone());
    provenance.inputs.insert("images".into(), media.digest.clone());
    let source = Source::Extract {
        provider: Box::new(ToyExtractor),
        media,
        seed,
        restore: restore_resolution,
    };
    let vectors = source.embed_all(&ids, spec, threads)?;
    let mut store = EmbeddingStore::new(ToyExtractor.dim());
    for (id, v) in ids.iter().zip(vectors) {
        store.insert(store_key(id, spec), v)?;
    }
    Ok((store, provenance))
}

/// Score protocol pairs from a store: galleries clean, probes under `spec`.
pub fn score_pairs(protocol: &PairProtocol, store: &EmbeddingStore, spec: &DistortionSpec) -> Result<Vec<ScoreRecord>> {
    let mut missing = BTreeSet::new();
    for p in protocol.pairs() {
        for key in [store_key(&p.probe_id, spec), p.gallery_id.clone()] {
            if store.get(&key).is_none() {
                missing.insert(key);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing.into_iter().collect()));
    }
    let descriptor = spec.descriptor();
    protocol
        .pairs()
        .enumerate()
        .map(|(i, p)| {
            let probe = store.get(&store_key(&p.probe_id, spec)).expect("checked");
            let gallery = store.get(&p.gallery_id).expect("checked");
            Ok(ScoreRecord {
                pair_id: format!("{descriptor}/{i}"),
                subgroup: p.subgroup.clone(),
                label: p.label,
                score: safe_cosine(probe, gallery)?.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::degree_of_bias;
    use crate::protocol::ProtocolParams;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = AuditConfig::from_json(r#"{"manifest": "m.csv", "family": "gaussian_blur"}"#).unwrap();
        assert_eq!(cfg.axis, Axis::Gender);
        assert_eq!(cfg.far, 0.01);
        assert!(cfg.restore_resolution && cfg.balance);
        assert_eq!(cfg.intensities().len(), 11);
        cfg.validate().unwrap();
        assert!(AuditConfig::from_json(r#"{"manifest": "m.csv", "fam": "x"}"#).is_err());

        let mut bad = cfg.clone();
        bad.far = 1.0;
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.family = None;
        assert!(bad.validate().is_err());
        bad.grid = Some(vec![DistortionSpec::GaussianBlur { sigma: -1.0 }]);
        assert!(bad.validate().unwrap_err().to_string().contains("sigma"));
    }

    #[test]
    fn provider_parsing_and_echo() {
        assert_eq!("toy".parse::<ProviderChoice>().unwrap(), ProviderChoice::Toy);
        assert_eq!(
            "store:e.bin".parse::<ProviderChoice>().unwrap(),
            ProviderChoice::Store("e.bin".into())
        );
        let mut cfg = AuditConfig::new("m.csv");
        cfg.provider = ProviderChoice::Store("e.bin".into());
        cfg.threads = Some(8);
        cfg.out_dir = Some("out".into());
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains(r#""provider":{"store":"e.bin"}"#), "{json}");
        assert!(!json.contains("threads") && !json.contains("out_dir"));
    }

    fn small_dataset(dir: &Path) -> PathBuf {
        let cfg = crate::synth::SynthConfig {
            subjects_per_cell: 12,
            images_per_subject: 4,
            ..Default::default()
        };
        crate::synth::build_dataset(dir, &cfg).unwrap();
        dir.join("manifest.csv")
    }

    #[test]
    fn small_audit_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_dataset(dir.path());
        // The default protocol needs more data than this; check the error.
        let mut cfg = AuditConfig::new(&manifest);
        cfg.family = Some(DistortionFamily::Brightness);
        assert!(matches!(run_audit(&cfg), Err(Error::InsufficientData { .. })));

        let ds = Dataset::load(&manifest).unwrap();
        let p = crate::protocol::generate_pairs_with(&ds.records, Axis::Race, 1, ProtocolParams { splits: 2, per_label: 20 }).unwrap();
        let (store, _) = embed_manifest(&manifest, &DistortionSpec::Identity, 1, true, Some(1)).unwrap();
        let scores = score_pairs(&p, &store, &DistortionSpec::Identity).unwrap();
        assert_eq!(scores.len(), 160);
        assert!(scores.iter().all(|s| (-1.0..=1.0).contains(&s.score)));
        let err = score_pairs(&p, &store, &DistortionSpec::Brightness { beta: 2.0 }).unwrap_err();
        match err {
            Error::MissingKeys(keys) => assert!(keys.iter().all(|k| k.ends_with("@brightness:2.0"))),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn report_csv_layout() {
        let row = AuditRow {
            intensity: "2.0".into(),
            distortion: DistortionSpec::GaussianBlur { sigma: 2.0 },
            threshold: Some(0.5),
            subgroups: vec![
                SubgroupAccuracy { label: "G1".into(), accuracy: 98.125, n_genuine: 3000, n_impostor: 3000, threshold: None },
                SubgroupAccuracy { label: "G2".into(), accuracy: 92.0, n_genuine: 3000, n_impostor: 3000, threshold: None },
            ],
            dob: degree_of_bias(&[98.125, 92.0]).unwrap(),
        };
        let report = AuditReport {
            config: AuditConfig::new("m.csv"),
            rows: vec![row],
            provenance: Provenance::new("audit", 0, serde_json::Value::Null),
        };
        let csv = String::from_utf8(report.to_csv().unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "intensity,subgroup,accuracy,n_genuine,n_impostor,threshold");
        assert_eq!(lines[1], "2.0,G1,98.13,3000,3000,0.500000");
        assert_eq!(lines[3], "2.0,DoB,4.33,,,");
    }
}
