//! Dataset manifests, subgroup balancing and LFW-style pair splits.
//!
//! A protocol has `splits` splits; each split holds `per_label` genuine and
//! `per_label` impostor pairs for every subgroup of the demographic axis
//! (10 x 300 + 300 by default, so 12000 pairs for a two-subgroup axis).
//! No pair occurs twice anywhere. When each subgroup's subjects can be dealt
//! into `splits` folds that are individually large enough, splits are also
//! subject-disjoint; otherwise they are only pair-disjoint.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, CounterRng};

pub const DEFAULT_SPLITS: usize = 10;
pub const DEFAULT_PAIRS_PER_LABEL: usize = 300;

const MANIFEST_COLUMNS: [&str; 5] = ["image_id", "path", "subject_id", "gender", "race"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub path: String,
    pub subject_id: String,
    pub gender: String,
    pub race: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub keypoints_path: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()))
}

/// Parse manifest CSV bytes. Requires the columns
/// `image_id,path,subject_id,gender,race`; `keypoints_path` is optional.
pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<ManifestRecord>> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::Manifest("empty file".into()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader.headers()?.clone();
    for col in MANIFEST_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.into()));
        }
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let rec: ManifestRecord = row?;
        for (name, value) in [
            ("image_id", &rec.image_id),
            ("subject_id", &rec.subject_id),
            ("gender", &rec.gender),
            ("race", &rec.race),
        ] {
            if value.is_empty() {
                return Err(Error::Manifest(format!(
                    "record {:?} has an empty {name}",
                    rec.image_id
                )));
            }
        }
        if !seen.insert(rec.image_id.clone()) {
            return Err(Error::DuplicateImageId(rec.image_id));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Manifest("no records".into()));
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&bytes)
}

pub fn write_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "path", "subject_id", "gender", "race", "keypoints_path"])?;
    for r in records {
        w.write_record([
            r.image_id.as_str(),
            &r.path,
            &r.subject_id,
            &r.gender,
            &r.race,
            r.keypoints_path.as_deref().unwrap_or(""),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Demographic axes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Gender,
    Race,
    Intersection,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Gender => "gender",
            Axis::Race => "race",
            Axis::Intersection => "intersection",
        }
    }

    /// Subgroup label of a record on this axis. Intersectional labels join
    /// gender and race with `+`, e.g. `G1+R2`.
    pub fn label(self, r: &ManifestRecord) -> String {
        match self {
            Axis::Gender => r.gender.clone(),
            Axis::Race => r.race.clone(),
            Axis::Intersection => format!("{}+{}", r.gender, r.race),
        }
    }

    /// The axis held balanced when analysing this one.
    pub fn control(self) -> Option<Axis> {
        match self {
            Axis::Gender => Some(Axis::Race),
            Axis::Race => Some(Axis::Gender),
            Axis::Intersection => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(Axis::Gender),
            "race" => Ok(Axis::Race),
            "intersection" => Ok(Axis::Intersection),
            _ => Err(Error::param(
                "axis",
                format!("expected gender, race or intersection, got {s:?}"),
            )),
        }
    }
}

/// An axis together with its ordered subgroup labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicAxis {
    pub axis: Axis,
    pub subgroups: Vec<String>,
}

impl DemographicAxis {
    pub fn from_records(axis: Axis, records: &[ManifestRecord]) -> Result<Self> {
        let subgroups: BTreeSet<String> = records.iter().map(|r| axis.label(r)).collect();
        if subgroups.len() < 2 {
            return Err(Error::TooFewSubgroups(subgroups.len()));
        }
        Ok(Self {
            axis,
            subgroups: subgroups.into_iter().collect(),
        })
    }
}

/// Subsample so every (analysis subgroup, control label) cell holds the
/// same number of records: the smallest cell count. Output is sorted by
/// `image_id`.
pub fn balance_manifest(
    records: &[ManifestRecord],
    analysis: Axis,
    control: Axis,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    if analysis == control || analysis == Axis::Intersection || control == Axis::Intersection {
        return Err(Error::param(
            "balance",
            format!("needs two distinct single axes, got {analysis} and {control}"),
        ));
    }
    let analysis_labels: BTreeSet<String> = records.iter().map(|r| analysis.label(r)).collect();
    let control_labels: BTreeSet<String> = records.iter().map(|r| control.label(r)).collect();

    let mut cells: BTreeMap<(String, String), Vec<&ManifestRecord>> = BTreeMap::new();
    for a in &analysis_labels {
        for c in &control_labels {
            cells.insert((a.clone(), c.clone()), Vec::new());
        }
    }
    for r in records {
        cells
            .get_mut(&(analysis.label(r), control.label(r)))
            .expect("cell exists")
            .push(r);
    }
    if let Some(((a, c), _)) = cells.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyCell {
            analysis: a.clone(),
            control: c.clone(),
        });
    }
    let keep = cells.values().map(Vec::len).min().unwrap_or(0);

    let mut out = Vec::with_capacity(keep * cells.len());
    for ((a, c), mut members) in cells {
        members.sort_by(|x, y| x.image_id.cmp(&y.image_id));
        if members.len() > keep {
            let mut rng = CounterRng::new(derive_seed(&[
                b"balance",
                &seed.to_le_bytes(),
                a.as_bytes(),
                c.as_bytes(),
            ]));
            rng.shuffle(&mut members);
            members.truncate(keep);
        }
        out.extend(members.into_iter().cloned());
    }
    out.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pairs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Genuine,
    Impostor,
}

impl PairLabel {
    pub fn as_digit(self) -> u8 {
        match self {
            PairLabel::Genuine => 1,
            PairLabel::Impostor => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    /// The side that gets distorted.
    pub probe_id: String,
    pub gallery_id: String,
    pub label: PairLabel,
    pub subgroup: String,
    /// 1-based split number.
    pub split: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub splits: usize,
    pub per_label: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            splits: DEFAULT_SPLITS,
            per_label: DEFAULT_PAIRS_PER_LABEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairProtocol {
    pub axis: DemographicAxis,
    pub params: ProtocolParams,
    pub splits: Vec<Vec<Pair>>,
    /// Subgroups whose splits share no subject.
    pub subject_disjoint: BTreeMap<String, bool>,
}

impl PairProtocol {
    pub fn pairs(&self) -> impl Iterator<Item = &Pair> {
        self.splits.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.splits.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, label: PairLabel) -> usize {
        self.pairs().filter(|p| p.label == label).count()
    }

    /// `split,label,probe_id,gallery_id,subgroup`, label 1 = genuine.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["split", "label", "probe_id", "gallery_id", "subgroup"])?;
        for p in self.pairs() {
            w.write_record([
                p.split.to_string(),
                p.label.as_digit().to_string(),
                p.probe_id.clone(),
                p.gallery_id.clone(),
                p.subgroup.clone(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Pairs(e.to_string()))
    }

    /// Rebuild a protocol from a pairs CSV. Split count is taken from the
    /// highest split number; `per_label` from `params`.
    pub fn from_csv(bytes: &[u8], axis: Axis, params: ProtocolParams) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            split: usize,
            label: u8,
            probe_id: String,
            gallery_id: String,
            subgroup: String,
        }
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(bytes).deserialize() {
            let row: Row = row?;
            let label = match row.label {
                1 => PairLabel::Genuine,
                0 => PairLabel::Impostor,
                other => return Err(Error::Pairs(format!("label must be 0 or 1, got {other}"))),
            };
            if row.split == 0 {
                return Err(Error::Pairs("split numbers start at 1".into()));
            }
            rows.push(Pair {
                probe_id: row.probe_id,
                gallery_id: row.gallery_id,
                label,
                subgroup: row.subgroup,
                split: row.split,
            });
        }
        let n_splits = rows.iter().map(|p| p.split).max().unwrap_or(0);
        let mut splits = vec![Vec::new(); n_splits];
        let subgroups: BTreeSet<String> = rows.iter().map(|p| p.subgroup.clone()).collect();
        for p in rows {
            splits[p.split - 1].push(p);
        }
        Ok(Self {
            axis: DemographicAxis {
                axis,
                subgroups: subgroups.into_iter().collect(),
            },
            params: ProtocolParams {
                splits: params.splits,
                per_label: params.per_label,
            },
            splits,
            subject_disjoint: BTreeMap::new(),
        })
    }
}

/// Images of one subgroup, grouped by subject in sorted order.
struct SubjectPool<'a> {
    subjects: Vec<(&'a str, Vec<&'a str>)>,
}

fn choose2(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

impl<'a> SubjectPool<'a> {
    fn genuine_capacity(&self) -> u64 {
        self.subjects.iter().map(|(_, imgs)| choose2(imgs.len())).sum()
    }

    fn image_count(&self) -> usize {
        self.subjects.iter().map(|(_, imgs)| imgs.len()).sum()
    }

    fn impostor_capacity(&self) -> u64 {
        choose2(self.image_count()) - self.genuine_capacity()
    }

    fn sample_genuine(&self, k: usize, rng: &mut CounterRng) -> Vec<(&'a str, &'a str)> {
        let mut offsets = Vec::with_capacity(self.subjects.len());
        let mut total = 0u64;
        for (_, imgs) in &self.subjects {
            offsets.push(total);
            total += choose2(imgs.len());
        }
        sample_indices(total, k, rng)
            .into_iter()
            .map(|idx| {
                let s = offsets.partition_point(|&o| o <= idx) - 1;
                let imgs = &self.subjects[s].1;
                let (i, j) = decode_pair(idx - offsets[s], imgs.len());
                (imgs[i], imgs[j])
            })
            .collect()
    }

    fn sample_impostor(&self, k: usize, rng: &mut CounterRng) -> Result<Vec<(&'a str, &'a str)>> {
        let images: Vec<(usize, &'a str)> = self
            .subjects
            .iter()
            .enumerate()
            .flat_map(|(s, (_, imgs))| imgs.iter().map(move |&id| (s, id)))
            .collect();
        let n = images.len();
        if choose2(n) <= 2_000_000 {
            let mut all = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if images[i].0 != images[j].0 {
                        all.push((images[i].1, images[j].1));
                    }
                }
            }
            return Ok(sample_indices(all.len() as u64, k, rng)
                .into_iter()
                .map(|idx| all[idx as usize])
                .collect());
        }
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        let mut attempts = 0usize;
        while out.len() < k {
            attempts += 1;
            if attempts > 10_000 * k.max(1) {
                return Err(Error::Pairs("impostor sampling did not converge".into()));
            }
            let i = rng.next_below(n as u64) as usize;
            let j = rng.next_below(n as u64) as usize;
            if i == j || images[i].0 == images[j].0 {
                continue;
            }
            if seen.insert((i.min(j), i.max(j))) {
                out.push((images[i.min(j)].1, images[i.max(j)].1));
            }
        }
        Ok(out)
    }
}

/// `k` distinct integers from `[0, n)` in random order (Floyd's sampler,
/// then a shuffle).
fn sample_indices(n: u64, k: usize, rng: &mut CounterRng) -> Vec<u64> {
    assert!(k as u64 <= n, "cannot sample {k} of {n}");
    let mut chosen = BTreeSet::new();
    for j in n - k as u64..n {
        let t = rng.next_below(j + 1);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let mut out: Vec<u64> = chosen.into_iter().collect();
    rng.shuffle(&mut out);
    out
}

/// Index within the upper triangle of an `n x n` matrix to `(i, j)`, i < j.
fn decode_pair(mut idx: u64, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = (n - 1 - i) as u64;
        if idx < row {
            return (i, i + 1 + idx as usize);
        }
        idx -= row;
    }
    unreachable!("pair index out of range")
}

fn orient<'a>(pair: (&'a str, &'a str), rng: &mut CounterRng) -> (&'a str, &'a str) {
    if rng.next_u64() & 1 == 0 {
        pair
    } else {
        (pair.1, pair.0)
    }
}

/// Deal subjects into `folds` groups, largest genuine capacity first, each
/// to the currently poorest fold.
fn deal_subjects<'a>(
    pool: &SubjectPool<'a>,
    folds: usize,
    rng: &mut CounterRng,
) -> Vec<SubjectPool<'a>> {
    let mut order: Vec<usize> = (0..pool.subjects.len()).collect();
    rng.shuffle(&mut order);
    order.sort_by_key(|&s| std::cmp::Reverse(pool.subjects[s].1.len()));
    let mut out: Vec<SubjectPool<'a>> = (0..folds).map(|_| SubjectPool { subjects: Vec::new() }).collect();
    for s in order {
        let target = (0..folds)
            .min_by_key(|&f| (out[f].genuine_capacity(), out[f].image_count(), f))
            .expect("at least one fold");
        out[target].subjects.push(pool.subjects[s].clone());
    }
    out
}

pub fn generate_pairs(records: &[ManifestRecord], axis: Axis, seed: u64) -> Result<PairProtocol> {
    generate_pairs_with(records, axis, seed, ProtocolParams::default())
}

/// Generate a seeded protocol. The first element of every pair is the probe.
pub fn generate_pairs_with(
    records: &[ManifestRecord],
    axis: Axis,
    seed: u64,
    params: ProtocolParams,
) -> Result<PairProtocol> {
    if params.splits == 0 || params.per_label == 0 {
        return Err(Error::param("protocol", "splits and per_label must be positive"));
    }
    let demo = DemographicAxis::from_records(axis, records)?;
    let need = params.splits * params.per_label;
    let mut splits: Vec<Vec<Pair>> = vec![Vec::new(); params.splits];
    let mut subject_disjoint = BTreeMap::new();

    for subgroup in &demo.subgroups {
        let mut by_subject: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in records.iter().filter(|r| &axis.label(r) == subgroup) {
            by_subject.entry(&r.subject_id).or_default().push(&r.image_id);
        }
        for imgs in by_subject.values_mut() {
            imgs.sort_unstable();
        }
        let pool = SubjectPool {
            subjects: by_subject.into_iter().collect(),
        };
        for (kind, available) in [
            ("genuine", pool.genuine_capacity()),
            ("impostor", pool.impostor_capacity()),
        ] {
            if available < need as u64 {
                return Err(Error::InsufficientData {
                    subgroup: subgroup.clone(),
                    kind,
                    required: need,
                    available: available as usize,
                });
            }
        }

        let mut rng = CounterRng::new(derive_seed(&[
            b"pairs",
            &seed.to_le_bytes(),
            axis.as_str().as_bytes(),
            subgroup.as_bytes(),
        ]));

        let folds = deal_subjects(&pool, params.splits, &mut rng);
        let per_fold_ok = folds.iter().all(|f| {
            f.genuine_capacity() >= params.per_label as u64
                && f.impostor_capacity() >= params.per_label as u64
        });
        subject_disjoint.insert(subgroup.clone(), per_fold_ok);

        let mut push = |split: usize, pairs: Vec<(&str, &str)>, label: PairLabel, rng: &mut CounterRng| {
            for pair in pairs {
                let (probe, gallery) = orient(pair, rng);
                splits[split].push(Pair {
                    probe_id: probe.to_string(),
                    gallery_id: gallery.to_string(),
                    label,
                    subgroup: subgroup.clone(),
                    split: split + 1,
                });
            }
        };

        if per_fold_ok {
            for (s, fold) in folds.iter().enumerate() {
                let g = fold.sample_genuine(params.per_label, &mut rng);
                let i = fold.sample_impostor(params.per_label, &mut rng)?;
                push(s, g, PairLabel::Genuine, &mut rng);
                push(s, i, PairLabel::Impostor, &mut rng);
            }
        } else {
            let g = pool.sample_genuine(need, &mut rng);
            let i = pool.sample_impostor(need, &mut rng)?;
            for s in 0..params.splits {
                let chunk = s * params.per_label..(s + 1) * params.per_label;
                push(s, g[chunk.clone()].to_vec(), PairLabel::Genuine, &mut rng);
                push(s, i[chunk].to_vec(), PairLabel::Impostor, &mut rng);
            }
        }
    }

    Ok(PairProtocol {
        axis: demo,
        params,
        splits,
        subject_disjoint,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SplitCount { expected: usize, found: usize },
    SplitTag { split: usize, tagged: usize },
    SliceCount { split: usize, subgroup: String, label: PairLabel, expected: usize, found: usize },
    UnknownImage { split: usize, image_id: String },
    SelfPair { split: usize, image_id: String },
    GenuineCrossSubject { split: usize, probe_id: String, gallery_id: String },
    ImpostorSameSubject { split: usize, probe_id: String, gallery_id: String },
    SubgroupMismatch { split: usize, image_id: String, expected: String, found: String },
    DuplicatePair { first_split: usize, second_split: usize, probe_id: String, gallery_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SplitCount { expected, found } => {
                write!(f, "expected {expected} splits, found {found}")
            }
            Violation::SplitTag { split, tagged } => {
                write!(f, "pair in split {split} is tagged split {tagged}")
            }
            Violation::SliceCount { split, subgroup, label, expected, found } => write!(
                f,
                "split {split}, subgroup {subgroup}: expected {expected} {label:?} pairs, found {found}"
            ),
            Violation::UnknownImage { split, image_id } => {
                write!(f, "split {split}: unknown image {image_id:?}")
            }
            Violation::SelfPair { split, image_id } => {
                write!(f, "split {split}: image {image_id:?} paired with itself")
            }
            Violation::GenuineCrossSubject { split, probe_id, gallery_id } => write!(
                f,
                "split {split}: genuine pair ({probe_id}, {gallery_id}) spans two subjects"
            ),
            Violation::ImpostorSameSubject { split, probe_id, gallery_id } => write!(
                f,
                "split {split}: impostor pair ({probe_id}, {gallery_id}) shares a subject"
            ),
            Violation::SubgroupMismatch { split, image_id, expected, found } => write!(
                f,
                "split {split}: image {image_id:?} belongs to {found}, pair says {expected}"
            ),
            Violation::DuplicatePair { first_split, second_split, probe_id, gallery_id } => {
                if first_split == second_split {
                    write!(f, "pair ({probe_id}, {gallery_id}) repeated within split {first_split}")
                } else {
                    write!(
                        f,
                        "disjointness: pair ({probe_id}, {gallery_id}) in splits {first_split} and {second_split}"
                    )
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub pairs_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every protocol invariant against the manifest it was built from.
pub fn validate_protocol(protocol: &PairProtocol, records: &[ManifestRecord]) -> ValidationReport {
    let by_id: HashMap<&str, &ManifestRecord> =
        records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let axis = protocol.axis.axis;
    let params = protocol.params;
    let mut report = ValidationReport::default();
    let v = &mut report.violations;

    if protocol.splits.len() != params.splits {
        v.push(Violation::SplitCount {
            expected: params.splits,
            found: protocol.splits.len(),
        });
    }

    let mut seen: HashMap<(String, String, PairLabel), usize> = HashMap::new();
    for (s, pairs) in protocol.splits.iter().enumerate() {
        let split = s + 1;
        let mut counts: BTreeMap<(&str, PairLabel), usize> = BTreeMap::new();
        for p in pairs {
            report.pairs_checked += 1;
            *counts.entry((p.subgroup.as_str(), p.label)).or_default() += 1;
            if p.split != split {
                v.push(Violation::SplitTag { split, tagged: p.split });
            }
            if p.probe_id == p.gallery_id {
                v.push(Violation::SelfPair { split, image_id: p.probe_id.clone() });
            }
            let (a, b) = match (by_id.get(p.probe_id.as_str()), by_id.get(p.gallery_id.as_str())) {
                (Some(a), Some(b)) => (a, b),
                (a, _) => {
                    let missing = if a.is_none() { &p.probe_id } else { &p.gallery_id };
                    v.push(Violation::UnknownImage { split, image_id: missing.clone() });
                    continue;
                }
            };
            match p.label {
                PairLabel::Genuine if a.subject_id != b.subject_id => {
                    v.push(Violation::GenuineCrossSubject {
                        split,
                        probe_id: p.probe_id.clone(),
                        gallery_id: p.gallery_id.clone(),
                    })
                }
                PairLabel::Impostor if a.subject_id == b.subject_id => {
                    v.push(Violation::ImpostorSameSubject {
                        split,
                        probe_id: p.probe_id.clone(),
                        gallery_id: p.gallery_id.clone(),
                    })
                }
                _ => {}
            }
            for r in [a, b] {
                let found = axis.label(r);
                if found != p.subgroup {
                    v.push(Violation::SubgroupMismatch {
                        split,
                        image_id: r.image_id.clone(),
                        expected: p.subgroup.clone(),
                        found,
                    });
                }
            }
            let key = if p.probe_id <= p.gallery_id {
                (p.probe_id.clone(), p.gallery_id.clone(), p.label)
            } else {
                (p.gallery_id.clone(), p.probe_id.clone(), p.label)
            };
            if let Some(&first) = seen.get(&key) {
                v.push(Violation::DuplicatePair {
                    first_split: first,
                    second_split: split,
                    probe_id: p.probe_id.clone(),
                    gallery_id: p.gallery_id.clone(),
                });
            } else {
                seen.insert(key, split);
            }
        }
        for subgroup in &protocol.axis.subgroups {
            for label in [PairLabel::Genuine, PairLabel::Impostor] {
                let found = counts.get(&(subgroup.as_str(), label)).copied().unwrap_or(0);
                if found != params.per_label {
                    v.push(Violation::SliceCount {
                        split,
                        subgroup: subgroup.clone(),
                        label,
                        expected: params.per_label,
                        found,
                    });
                }
            }
        }
    }
    report
}
