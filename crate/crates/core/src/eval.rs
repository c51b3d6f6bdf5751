//! Span matching, label mapping, metrics and latency measurement.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::text::{Annotation, AssertionLabel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnmappedPolicy {
    #[default]
    Drop,
    Error,
}

/// Raw annotator labels to canonical labels. Lookups are case-insensitive;
/// canonical labels without an entry map to themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    entries: BTreeMap<String, AssertionLabel>,
    pub unmapped_policy: UnmappedPolicy,
}

impl LabelMap {
    pub fn new<K: AsRef<str>>(
        entries: impl IntoIterator<Item = (K, AssertionLabel)>,
        unmapped_policy: UnmappedPolicy,
    ) -> Result<Self> {
        let mut map: BTreeMap<String, AssertionLabel> = BTreeMap::new();
        for (raw, target) in entries {
            let raw = raw.as_ref();
            if !target.is_canonical() {
                return Err(Error::Config(format!("`{raw}` maps to non-canonical label `{target}`")));
            }
            let key = raw.to_lowercase();
            if let Some(prev) = map.get(&key) {
                if *prev != target {
                    return Err(Error::Config(format!(
                        "`{raw}` maps to both `{prev}` and `{target}` after case folding"
                    )));
                }
            }
            map.insert(key, target);
        }
        // Targets must be fixed points, otherwise mapping twice differs
        // from mapping once.
        for target in map.values() {
            if let Some(again) = map.get(target.as_str()) {
                if again != target {
                    return Err(Error::Config(format!(
                        "target `{target}` is itself remapped to `{again}`"
                    )));
                }
            }
        }
        Ok(Self {
            entries: map,
            unmapped_policy,
        })
    }

    /// Empty map: canonical labels pass, everything else is unmapped.
    pub fn identity(unmapped_policy: UnmappedPolicy) -> Self {
        Self {
            entries: BTreeMap::new(),
            unmapped_policy,
        }
    }

    pub fn from_json(content: &str, origin: &str, policy: UnmappedPolicy) -> Result<Self> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(content).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
        Self::new(raw.into_iter().map(|(k, v)| (k, AssertionLabel::from(v))), policy)
    }

    pub fn load(path: &Path, policy: UnmappedPolicy) -> Result<Self> {
        Self::from_json(&read_to_string(path)?, &path.display().to_string(), policy)
    }

    /// `Ok(None)` when the label is unmapped under [`UnmappedPolicy::Drop`].
    pub fn lookup(&self, label: &AssertionLabel) -> Result<Option<AssertionLabel>> {
        if let Some(t) = self.entries.get(&label.as_str().to_lowercase()) {
            return Ok(Some(t.clone()));
        }
        if label.is_canonical() {
            return Ok(Some(label.clone()));
        }
        match self.unmapped_policy {
            UnmappedPolicy::Drop => Ok(None),
            UnmappedPolicy::Error => Err(Error::UnmappedLabel(label.to_string())),
        }
    }
}

pub fn map_labels(annotations: &[Annotation], map: &LabelMap) -> Result<Vec<Annotation>> {
    let mut out = Vec::with_capacity(annotations.len());
    for a in annotations {
        if let Some(label) = map.lookup(&a.label)? {
            out.push(Annotation { label, ..a.clone() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchCategory {
    Full,
    Partial,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub gold: Annotation,
    pub pred: Option<Annotation>,
    pub category: MatchCategory,
}

/// Pairs every gold chunk with at most one overlapping prediction.
///
/// Candidate pairs are assigned greedily, best first: identical spans,
/// then larger char intersection, then the leftmost prediction. Each
/// prediction is used at most once. Output follows gold order.
pub fn match_spans(gold: &[Annotation], pred: &[Annotation]) -> Vec<MatchedPair> {
    let mut pred_by_doc: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, p) in pred.iter().enumerate() {
        pred_by_doc.entry(p.chunk.doc_id.as_str()).or_default().push(j);
    }

    // (exact, intersection, pred begin, gold idx, pred idx)
    let mut pairs: Vec<(bool, usize, usize, usize, usize)> = Vec::new();
    for (i, g) in gold.iter().enumerate() {
        for &j in pred_by_doc.get(g.chunk.doc_id.as_str()).into_iter().flatten() {
            let inter = g.chunk.intersection(&pred[j].chunk);
            if inter > 0 {
                pairs.push((g.chunk.same_span(&pred[j].chunk), inter, pred[j].chunk.begin, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });

    let mut gold_match: Vec<Option<usize>> = vec![None; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    for (_, _, _, i, j) in pairs {
        if gold_match[i].is_none() && !pred_used[j] {
            gold_match[i] = Some(j);
            pred_used[j] = true;
        }
    }

    gold.iter()
        .zip(gold_match)
        .map(|(g, m)| {
            let pred = m.map(|j| pred[j].clone());
            let category = match &pred {
                None => MatchCategory::None,
                Some(p) if p.chunk.same_span(&g.chunk) => MatchCategory::Full,
                Some(_) => MatchCategory::Partial,
            };
            MatchedPair {
                gold: g.clone(),
                pred,
                category,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub full: usize,
    pub partial: usize,
    pub none: usize,
    pub predicted_rows: usize,
    pub total_rows: usize,
}

impl MatchCounts {
    pub fn from_pairs(pairs: &[MatchedPair], predicted_rows: usize) -> Self {
        let count = |c| pairs.iter().filter(|p| p.category == c).count();
        Self {
            full: count(MatchCategory::Full),
            partial: count(MatchCategory::Partial),
            none: count(MatchCategory::None),
            predicted_rows,
            total_rows: pairs.len(),
        }
    }

    fn pct(&self, n: usize) -> f64 {
        if self.total_rows == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.total_rows as f64
        }
    }
}

/// Exact per-class metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactScore {
    pub precision: BigRational,
    pub recall: BigRational,
    pub f1: BigRational,
}

fn ratio(num: usize, den: usize) -> BigRational {
    if den == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(skip)]
    pub exact: Option<ExactScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub rows: usize,
    pub repetitions: usize,
    pub mean_seconds_per_100: f64,
    pub stddev_seconds_per_100: f64,
    pub hardware: String,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<AssertionLabel>,
    pub per_class: BTreeMap<AssertionLabel, ClassScore>,
    pub weighted_f1: f64,
    #[serde(skip)]
    pub weighted_f1_exact: Option<BigRational>,
    pub match_counts: MatchCounts,
    pub include_unmatched_as_miss: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

/// Per-class precision, recall and F1 over matched pairs, plus the
/// support-weighted F1 across `classes`.
///
/// Full and partial pairs are scored with the predicted label against the
/// gold label. Gold rows without a match count as misses only when
/// `include_unmatched_as_miss` is set. A class with no predictions has
/// precision 0.
pub fn score(
    pairs: &[MatchedPair],
    classes: &BTreeSet<AssertionLabel>,
    include_unmatched_as_miss: bool,
) -> Result<EvalReport> {
    #[derive(Default)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
        support: usize,
    }
    let mut counts: BTreeMap<&AssertionLabel, Counts> = classes.iter().map(|c| (c, Counts::default())).collect();
    for pair in pairs {
        let g = &pair.gold.label;
        match &pair.pred {
            Some(p) => {
                let p = &p.label;
                if let Some(c) = counts.get_mut(g) {
                    c.support += 1;
                    if p == g {
                        c.tp += 1;
                    } else {
                        c.fn_ += 1;
                    }
                }
                if p != g {
                    if let Some(c) = counts.get_mut(p) {
                        c.fp += 1;
                    }
                }
            }
            None if include_unmatched_as_miss => {
                if let Some(c) = counts.get_mut(g) {
                    c.support += 1;
                    c.fn_ += 1;
                }
            }
            None => {}
        }
    }

    let total_support: usize = counts.values().map(|c| c.support).sum();
    if total_support == 0 {
        return Err(Error::EmptyEval);
    }

    let mut weighted = BigRational::zero();
    let mut per_class = BTreeMap::new();
    for (label, c) in counts {
        let exact = ExactScore {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        };
        weighted += &exact.f1 * BigRational::from_integer(BigInt::from(c.support));
        per_class.insert(
            label.clone(),
            ClassScore {
                precision: to_f64(&exact.precision),
                recall: to_f64(&exact.recall),
                f1: to_f64(&exact.f1),
                support: c.support,
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                exact: Some(exact),
            },
        );
    }
    weighted /= BigRational::from_integer(BigInt::from(total_support));

    let predicted = pairs.iter().filter(|p| p.pred.is_some()).count();
    Ok(EvalReport {
        classes: classes.iter().cloned().collect(),
        per_class,
        weighted_f1: to_f64(&weighted),
        weighted_f1_exact: Some(weighted),
        match_counts: MatchCounts::from_pairs(pairs, predicted),
        include_unmatched_as_miss,
        latency: None,
    })
}

/// Matches, scores and records the full prediction count.
pub fn evaluate(
    gold: &[Annotation],
    pred: &[Annotation],
    classes: &BTreeSet<AssertionLabel>,
    include_unmatched_as_miss: bool,
) -> Result<EvalReport> {
    let pairs = match_spans(gold, pred);
    let mut report = score(&pairs, classes, include_unmatched_as_miss)?;
    report.match_counts.predicted_rows = pred.len();
    Ok(report)
}

/// Human-readable report: per-class table, weighted average and match
/// accounting as percentages of total rows.
pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let width = report
        .per_class
        .keys()
        .map(|l| l.as_str().len())
        .max()
        .unwrap_or(0)
        .max("weighted avg".len());
    let _ = writeln!(s, "{:<width$}  precision  recall     f1  support", "class");
    for (label, c) in &report.per_class {
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.3}  {:>6.3}  {:>5.3}  {:>7}",
            label.as_str(),
            c.precision,
            c.recall,
            c.f1,
            c.support
        );
    }
    let support: usize = report.per_class.values().map(|c| c.support).sum();
    let _ = writeln!(
        s,
        "{:<width$}  {:>9}  {:>6}  {:>5.3}  {:>7}",
        "weighted avg", "", "", report.weighted_f1, support
    );
    let m = &report.match_counts;
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "full match {} ({:.2}%)  partial match {} ({:.2}%)  no match {} ({:.2}%)  predicted rows {}  total rows {}",
        m.full,
        m.pct(m.full),
        m.partial,
        m.pct(m.partial),
        m.none,
        m.pct(m.none),
        m.predicted_rows,
        m.total_rows
    );
    if let Some(l) = &report.latency {
        let _ = writeln!(s, "{}", format_latency(l));
    }
    s
}

pub fn format_latency(l: &LatencyStats) -> String {
    format!(
        "latency {:.3} s / 100 rows (sd {:.3}, {} rows x {} reps, {}; {})",
        l.mean_seconds_per_100,
        l.stddev_seconds_per_100,
        l.rows,
        l.repetitions,
        if l.parallel { "parallel" } else { "sequential" },
        l.hardware
    )
}

pub const MIN_REPETITIONS: usize = 3;

/// Seconds per 100 rows.
pub fn per_hundred(elapsed: Duration, rows: usize) -> f64 {
    elapsed.as_secs_f64() * 100.0 / rows as f64
}

/// Mean and sample standard deviation of per-100-row latencies.
pub fn latency_stats(runs: &[Duration], rows: usize, hardware: String, parallel: bool) -> LatencyStats {
    let xs: Vec<f64> = runs.iter().map(|d| per_hundred(*d, rows)).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    LatencyStats {
        rows,
        repetitions: runs.len(),
        mean_seconds_per_100: mean,
        stddev_seconds_per_100: var.sqrt(),
        hardware,
        parallel,
    }
}

/// CPU model and logical core count, best effort.
pub fn hardware_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{model}, {cpus} logical CPUs")
}

/// Times `run` once for warm-up and then `repetitions` more times. `run`
/// returns the number of rows (chunks) it processed.
pub fn bench<F>(repetitions: usize, parallel: bool, mut run: F) -> Result<LatencyStats>
where
    F: FnMut() -> Result<usize>,
{
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Bench(format!(
            "repetitions must be at least {MIN_REPETITIONS}, got {repetitions}"
        )));
    }
    let rows = run()?;
    if rows == 0 {
        return Err(Error::Bench("corpus has no rows".into()));
    }
    let mut runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        run()?;
        runs.push(start.elapsed());
    }
    Ok(latency_stats(&runs, rows, hardware_descriptor(), parallel))
}
