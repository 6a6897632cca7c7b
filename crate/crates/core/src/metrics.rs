//! FAR thresholding, verification accuracy, degree of bias and
//! similarity-vs-intensity curves.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::{safe_cosine, EmbeddingStore};
use crate::error::{Error, Result};
use crate::protocol::PairLabel;

/// Matcher scores of one subgroup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub subgroup: String,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAccuracy {
    pub label: String,
    /// Percentage in [0, 100].
    pub accuracy: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
    /// Present only when thresholds are set per subgroup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    /// Shared threshold; `None` under per-subgroup thresholding.
    pub threshold: Option<f64>,
    pub accuracies: Vec<SubgroupAccuracy>,
    pub dob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    /// One threshold from the impostor scores of all subgroups together.
    #[default]
    Pooled,
    PerSubgroup,
}

impl std::str::FromStr for ThresholdScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(ThresholdScope::Pooled),
            "per_subgroup" | "per-subgroup" => Ok(ThresholdScope::PerSubgroup),
            _ => Err(Error::param(
                "threshold_scope",
                format!("expected pooled or per_subgroup, got {s:?}"),
            )),
        }
    }
}

fn check_far(far: f64) -> Result<()> {
    if !(far > 0.0 && far < 1.0) {
        return Err(Error::param("far", format!("must lie in (0, 1), got {far}")));
    }
    Ok(())
}

/// Smallest threshold whose empirical false-accept rate is at most `far`,
/// accepting `score >= t`.
///
/// With impostor scores sorted descending and `k = floor(far * N)`, the
/// threshold is the next float above the (k+1)-th largest score, so at most
/// `k` scores are accepted.
pub fn far_threshold(impostor: &[f64], far: f64) -> Result<f64> {
    check_far(far)?;
    if impostor.is_empty() {
        return Err(Error::EmptyScores("impostor"));
    }
    if let Some(i) = impostor.iter().position(|s| !s.is_finite()) {
        return Err(Error::param("impostor", format!("score {i} is not finite")));
    }
    let mut sorted = impostor.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // The epsilon keeps products like 0.07 * 100 = 7.000000000000001 and
    // 0.29 * 100 = 28.999999999999996 on the intended integer.
    let k = ((far * sorted.len() as f64) + 1e-9).floor() as usize;
    let k = k.min(sorted.len() - 1);
    Ok(sorted[k].next_up())
}

pub fn empirical_far(impostor: &[f64], threshold: f64) -> f64 {
    if impostor.is_empty() {
        return 0.0;
    }
    impostor.iter().filter(|&&s| s >= threshold).count() as f64 / impostor.len() as f64
}

/// `100 * (genuine accepted + impostor rejected) / total`.
pub fn verification_accuracy(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    if scores.genuine.is_empty() {
        return Err(Error::EmptyScores("genuine"));
    }
    if scores.impostor.is_empty() {
        return Err(Error::EmptyScores("impostor"));
    }
    let accepted = scores.genuine.iter().filter(|&&s| s >= threshold).count();
    let rejected = scores.impostor.iter().filter(|&&s| s < threshold).count();
    Ok(100.0 * (accepted + rejected) as f64 / (scores.genuine.len() + scores.impostor.len()) as f64)
}

/// Sample standard deviation (divisor n - 1) of subgroup accuracies.
pub fn degree_of_bias(accuracies: &[f64]) -> Result<f64> {
    let n = accuracies.len();
    if n < 2 {
        return Err(Error::TooFewSubgroups(n));
    }
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let ss: f64 = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok((ss / (n - 1) as f64).sqrt())
}

/// Threshold the subgroups' scores and summarise accuracy spread.
pub fn summarize(sets: &[ScoreSet], far: f64, scope: ThresholdScope) -> Result<BiasSummary> {
    check_far(far)?;
    if sets.len() < 2 {
        return Err(Error::TooFewSubgroups(sets.len()));
    }
    let pooled = match scope {
        ThresholdScope::Pooled => {
            let all: Vec<f64> = sets.iter().flat_map(|s| s.impostor.iter().copied()).collect();
            Some(far_threshold(&all, far)?)
        }
        ThresholdScope::PerSubgroup => None,
    };
    let accuracies = sets
        .iter()
        .map(|s| {
            let (t, own) = match pooled {
                Some(t) => (t, None),
                None => {
                    let t = far_threshold(&s.impostor, far)?;
                    (t, Some(t))
                }
            };
            Ok(SubgroupAccuracy {
                label: s.subgroup.clone(),
                accuracy: verification_accuracy(s, t)?,
                n_genuine: s.genuine.len(),
                n_impostor: s.impostor.len(),
                threshold: own,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dob = degree_of_bias(&accuracies.iter().map(|a| a.accuracy).collect::<Vec<_>>())?;
    Ok(BiasSummary {
        threshold: pooled,
        accuracies,
        dob,
    })
}

// ---------------------------------------------------------------------------
// Similarity curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub intensity: String,
    pub subgroup: String,
    pub mean_similarity: f64,
    /// Population standard deviation over the subgroup's images.
    pub std_similarity: f64,
    pub n: usize,
}

/// Mean and spread of clean-vs-distorted cosine similarity per intensity
/// and subgroup. `partition` maps image id to subgroup; every distorted
/// store must hold the same image ids as `clean`.
pub fn similarity_curve(
    clean: &EmbeddingStore,
    distorted: &[(String, EmbeddingStore)],
    partition: &BTreeMap<String, String>,
) -> Result<Vec<CurvePoint>> {
    let mut missing = BTreeSet::new();
    for id in partition.keys() {
        if clean.get(id).is_none() {
            missing.insert(id.clone());
        }
        for (label, store) in distorted {
            if store.get(id).is_none() {
                missing.insert(format!("{id}@{label}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing.into_iter().collect()));
    }

    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, subgroup) in partition {
        members.entry(subgroup).or_default().push(id);
    }

    let mut out = Vec::new();
    for (label, store) in distorted {
        for (subgroup, ids) in &members {
            let sims = ids
                .iter()
                .map(|id| {
                    let a = clean.get(id).expect("checked above");
                    let b = store.get(id).expect("checked above");
                    safe_cosine(a, b).map(|(s, _)| s)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = sims.len();
            let mean = sims.iter().sum::<f64>() / n as f64;
            let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
            out.push(CurvePoint {
                intensity: label.clone(),
                subgroup: subgroup.to_string(),
                mean_similarity: mean,
                std_similarity: var.sqrt(),
                n,
            });
        }
    }
    Ok(out)
}

pub fn curve_csv(points: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["intensity", "subgroup", "mean_similarity", "std_similarity", "n"])?;
    for p in points {
        w.write_record([
            p.intensity.clone(),
            p.subgroup.clone(),
            format!("{:.6}", p.mean_similarity),
            format!("{:.6}", p.std_similarity),
            p.n.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

// ---------------------------------------------------------------------------
// Score dumps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    pub subgroup: String,
    pub label: PairLabel,
    pub score: f64,
}

/// `pair_id,subgroup,label,score` with label 1 = genuine.
pub fn scores_csv(records: &[ScoreRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pair_id", "subgroup", "label", "score"])?;
    for r in records {
        w.write_record([
            r.pair_id.clone(),
            r.subgroup.clone(),
            r.label.as_digit().to_string(),
            format!("{:?}", r.score),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_scores_csv(bytes: &[u8]) -> Result<Vec<ScoreRecord>> {
    #[derive(Deserialize)]
    struct Row {
        pair_id: String,
        subgroup: String,
        label: u8,
        score: f64,
    }
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|row| {
            let row: Row = row?;
            let label = match row.label {
                1 => PairLabel::Genuine,
                0 => PairLabel::Impostor,
                other => return Err(Error::Pairs(format!("label must be 0 or 1, got {other}"))),
            };
            Ok(ScoreRecord {
                pair_id: row.pair_id,
                subgroup: row.subgroup,
                label,
                score: row.score,
            })
        })
        .collect()
}

/// Group score records into per-subgroup sets, in subgroup order.
pub fn group_scores(records: &[ScoreRecord]) -> Vec<ScoreSet> {
    let mut sets: BTreeMap<&str, ScoreSet> = BTreeMap::new();
    for r in records {
        let set = sets.entry(&r.subgroup).or_insert_with(|| ScoreSet {
            subgroup: r.subgroup.clone(),
            ..ScoreSet::default()
        });
        match r.label {
            PairLabel::Genuine => set.genuine.push(r.score),
            PairLabel::Impostor => set.impostor.push(r.score),
        }
    }
    sets.into_values().collect()
}
