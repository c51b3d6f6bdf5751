//! Merging annotation streams from several annotators.
//!
//! A merger stage reads named streams, optionally drops labels outside a
//! whitelist, groups annotations that refer to the same chunk (identical
//! span, or any char overlap with transitive closure) and keeps one
//! annotation per group, either by majority vote or by ranking on the
//! ordering features. Stages are wired into a DAG by [`PipelineConfig`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::text::{Annotation, AssertionLabel};

pub type Streams = HashMap<String, Vec<Annotation>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingFeature {
    Confidence,
}

fn default_true() -> bool {
    true
}

fn default_ordering() -> Vec<OrderingFeature> {
    vec![OrderingFeature::Confidence]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergerConfig {
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitelist: Option<BTreeSet<AssertionLabel>>,
    #[serde(default = "default_true")]
    pub merge_overlapping: bool,
    #[serde(default)]
    pub majority_voting: bool,
    #[serde(default = "default_ordering")]
    pub ordering_features: Vec<OrderingFeature>,
    #[serde(default)]
    pub apply_filter_before_merge: bool,
}

impl MergerConfig {
    pub fn new(inputs: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            inputs: inputs.into_iter().map(Into::into).collect(),
            whitelist: None,
            merge_overlapping: true,
            majority_voting: false,
            ordering_features: default_ordering(),
            apply_filter_before_merge: false,
        }
    }

    pub fn with_whitelist(mut self, labels: impl IntoIterator<Item = AssertionLabel>) -> Self {
        self.whitelist = Some(labels.into_iter().collect());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("merger needs at least one input".into()));
        }
        if self.whitelist.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err(Error::Config("whitelist, when given, must be nonempty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.inputs.iter().find(|i| !seen.insert(i.as_str())) {
            return Err(Error::Config(format!("input `{dup}` listed twice")));
        }
        Ok(())
    }

    fn allows(&self, label: &AssertionLabel) -> bool {
        self.whitelist.as_ref().is_none_or(|w| w.contains(label))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    ann: &'a Annotation,
    stream: usize,
    pos: usize,
}

/// Ranks candidates best-first: ordering features descending, then stream
/// order, then position within the stream.
fn rank(features: &[OrderingFeature], a: &Candidate, b: &Candidate) -> Ordering {
    features
        .iter()
        .map(|f| match f {
            OrderingFeature::Confidence => b.ann.confidence.total_cmp(&a.ann.confidence),
        })
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.stream.cmp(&b.stream))
        .then(a.pos.cmp(&b.pos))
}

fn select<'a>(group: &[Candidate<'a>], config: &MergerConfig) -> Candidate<'a> {
    let best = |pool: &mut dyn Iterator<Item = &Candidate<'a>>| {
        *pool
            .min_by(|a, b| rank(&config.ordering_features, a, b))
            .expect("groups are nonempty")
    };
    if !config.majority_voting {
        return best(&mut group.iter());
    }
    let mut votes: BTreeMap<&AssertionLabel, usize> = BTreeMap::new();
    for c in group {
        *votes.entry(&c.ann.label).or_default() += 1;
    }
    let top = votes.values().copied().max().unwrap_or(0);
    best(&mut group.iter().filter(|c| votes[&c.ann.label] == top))
}

/// Merges the streams named in `config.inputs` into one annotation per
/// chunk group. Output is ordered by `(doc_id, begin, end)` and every
/// annotation's source is `merger:<stage>`.
pub fn merge(streams: &Streams, config: &MergerConfig, stage: &str) -> Result<Vec<Annotation>> {
    config.validate()?;
    let mut candidates = Vec::new();
    for (stream, name) in config.inputs.iter().enumerate() {
        let anns = streams
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown stream `{name}` in stage `{stage}`")))?;
        candidates.extend(
            anns.iter()
                .enumerate()
                .filter(|(_, a)| !config.apply_filter_before_merge || config.allows(&a.label))
                .map(|(pos, ann)| Candidate { ann, stream, pos }),
        );
    }
    candidates.sort_by(|a, b| {
        let (x, y) = (&a.ann.chunk, &b.ann.chunk);
        x.doc_id
            .cmp(&y.doc_id)
            .then(x.begin.cmp(&y.begin))
            .then(x.end.cmp(&y.end))
            .then(a.stream.cmp(&b.stream))
            .then(a.pos.cmp(&b.pos))
    });

    let mut out = Vec::new();
    let mut start = 0;
    while start < candidates.len() {
        let head = &candidates[start].ann.chunk;
        let mut reach = head.end;
        let mut stop = start + 1;
        while stop < candidates.len() {
            let next = &candidates[stop].ann.chunk;
            let joins = next.doc_id == head.doc_id
                && if config.merge_overlapping {
                    next.begin < reach
                } else {
                    next.begin == head.begin && next.end == head.end
                };
            if !joins {
                break;
            }
            reach = reach.max(next.end);
            stop += 1;
        }
        let chosen = select(&candidates[start..stop], config);
        if config.apply_filter_before_merge || config.allows(&chosen.ann.label) {
            out.push(Annotation {
                source: format!("merger:{stage}"),
                ..chosen.ann.clone()
            });
        }
        start = stop;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawStage")]
pub struct StageConfig {
    pub name: String,
    #[serde(flatten)]
    pub merger: MergerConfig,
}

// Flattened structs cannot reject unknown fields, so stages are read
// through this mirror first.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    name: String,
    inputs: Vec<String>,
    #[serde(default)]
    whitelist: Option<BTreeSet<AssertionLabel>>,
    #[serde(default = "default_true")]
    merge_overlapping: bool,
    #[serde(default)]
    majority_voting: bool,
    #[serde(default = "default_ordering")]
    ordering_features: Vec<OrderingFeature>,
    #[serde(default)]
    apply_filter_before_merge: bool,
}

impl From<RawStage> for StageConfig {
    fn from(r: RawStage) -> Self {
        StageConfig {
            name: r.name,
            merger: MergerConfig {
                inputs: r.inputs,
                whitelist: r.whitelist,
                merge_overlapping: r.merge_overlapping,
                majority_voting: r.majority_voting,
                ordering_features: r.ordering_features,
                apply_filter_before_merge: r.apply_filter_before_merge,
            },
        }
    }
}

/// Merger stages wired from annotator streams to one final stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<StageConfig>,
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_stage: Option<String>,
}

/// Stage execution order and the final stage, resolved against a set of
/// available stream names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub order: Vec<usize>,
    pub final_stage: usize,
}

impl PipelineConfig {
    pub fn from_json(content: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(content).map_err(|e| Error::parse(origin, e.line(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?, &path.display().to_string())
    }

    /// A single stage over `inputs`.
    pub fn single(name: &str, merger: MergerConfig) -> Self {
        Self {
            stages: vec![StageConfig {
                name: name.to_string(),
                merger,
            }],
            final_stage: None,
        }
    }

    fn stage_index(&self) -> Result<HashMap<&str, usize>> {
        let mut idx = HashMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if s.name.is_empty() {
                return Err(Error::Config("stage name must be nonempty".into()));
            }
            if idx.insert(s.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate stage `{}`", s.name)));
            }
        }
        Ok(idx)
    }

    /// Inputs that are not produced by any stage: the annotator streams the
    /// pipeline needs, in first-reference order.
    pub fn external_inputs(&self) -> Vec<String> {
        let names: HashSet<&str> = self.stages.iter().map(|s| s.name.as_str()).collect();
        let mut seen = HashSet::new();
        self.stages
            .iter()
            .flat_map(|s| s.merger.inputs.iter())
            .filter(|i| !names.contains(i.as_str()) && seen.insert(i.as_str()))
            .cloned()
            .collect()
    }

    /// Validates the graph against the available streams and orders stages
    /// topologically (declaration order among ready stages).
    pub fn plan(&self, available: &HashSet<&str>) -> Result<Plan> {
        if self.stages.is_empty() {
            return Err(Error::Config("pipeline has no stages".into()));
        }
        let idx = self.stage_index()?;
        let mut deps: Vec<Vec<usize>> = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            s.merger
                .validate()
                .map_err(|e| Error::Config(format!("stage `{}`: {e}", s.name)))?;
            let mut d = Vec::new();
            for input in &s.merger.inputs {
                match (idx.get(input.as_str()), available.contains(input.as_str())) {
                    (Some(_), true) => return Err(Error::Config(format!("`{input}` is both a stage and a stream"))),
                    (Some(&j), false) => d.push(j),
                    (None, true) => {}
                    (None, false) => {
                        return Err(Error::Config(format!(
                            "stage `{}` references unknown input `{input}`",
                            s.name
                        )))
                    }
                }
            }
            deps.push(d);
        }

        let mut done = vec![false; self.stages.len()];
        let mut order = Vec::with_capacity(self.stages.len());
        while order.len() < self.stages.len() {
            let ready = (0..self.stages.len()).find(|&i| !done[i] && deps[i].iter().all(|&d| done[d]));
            match ready {
                Some(i) => {
                    done[i] = true;
                    order.push(i);
                }
                None => {
                    let stuck: Vec<_> = (0..self.stages.len())
                        .filter(|&i| !done[i])
                        .map(|i| self.stages[i].name.as_str())
                        .collect();
                    return Err(Error::Config(format!("cycle among stages {}", stuck.join(", "))));
                }
            }
        }

        let final_stage = match &self.final_stage {
            Some(name) => *idx
                .get(name.as_str())
                .ok_or_else(|| Error::Config(format!("final stage `{name}` not defined")))?,
            None => {
                let consumed: HashSet<usize> = deps.iter().flatten().copied().collect();
                let sinks: Vec<usize> = (0..self.stages.len()).filter(|i| !consumed.contains(i)).collect();
                match sinks.as_slice() {
                    [one] => *one,
                    _ => {
                        return Err(Error::Config(format!(
                            "pipeline needs exactly one final stage, found {}",
                            sinks.len()
                        )))
                    }
                }
            }
        };
        Ok(Plan { order, final_stage })
    }
}

/// Runs every stage in dependency order and returns the final stage's output.
pub fn run_pipeline(streams: &Streams, pipeline: &PipelineConfig) -> Result<Vec<Annotation>> {
    let available: HashSet<&str> = streams.keys().map(String::as_str).collect();
    let plan = pipeline.plan(&available)?;
    let mut env: Streams = HashMap::new();
    for &i in &plan.order {
        let stage = &pipeline.stages[i];
        let inputs: Streams = stage
            .merger
            .inputs
            .iter()
            .map(|name| {
                let anns = env.get(name).or_else(|| streams.get(name)).cloned().unwrap_or_default();
                (name.clone(), anns)
            })
            .collect();
        let out = merge(&inputs, &stage.merger, &stage.name)?;
        env.insert(stage.name.clone(), out);
    }
    Ok(env.remove(&pipeline.stages[plan.final_stage].name).unwrap_or_default())
}
