//! Graph-rewriting dataset augmentation.
//!
//! Two rules derive new QA pairs from annotated samples sharing the same
//! image:
//!
//! * **Subgraph extraction** — for each step with at least one dependency,
//!   emit the ancestor-closed subgraph rooted at it, with the root's
//!   content as the new question. The closure equal to the whole answer is
//!   skipped (it would duplicate the source sample).
//! * **Graph expansion** — a sample whose final step is `Pick up B` and
//!   which contains a `Remove A` step becomes a `Place B on A` task: the
//!   remove step is rewritten to `Pick up A`, then `Put down A` and
//!   `Place B on A` are appended with the dependencies that keep both
//!   objects out of hand until placement.

use std::collections::BTreeSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{AnnotationSource, QASample, Step, StepGraph, StepId};

/// Policy knobs for subgraph extraction.
#[derive(Debug, Clone)]
pub struct SubgraphPolicy {
    /// Emit only subgraphs with at least this many edges.
    pub min_edges: usize,
    /// Cap on emitted subgraphs per source sample; `None` keeps all.
    pub max_per_sample: Option<usize>,
    /// Drop subgraphs with identical step-content multisets and edge sets.
    pub dedupe: bool,
    /// Seed for the sampling step when a sample exceeds the cap.
    pub seed: u64,
}

impl Default for SubgraphPolicy {
    fn default() -> Self {
        SubgraphPolicy {
            min_edges: 1,
            max_per_sample: None,
            dedupe: true,
            seed: 0,
        }
    }
}

/// Policy knobs for graph expansion. Candidates are the sample's
/// `Remove A` steps, enumerated in step-index order.
#[derive(Debug, Clone, Default)]
pub struct ExpansionPolicy {
    /// Cap on emitted expansions per source sample; `None` keeps all.
    pub max_per_sample: Option<usize>,
}

/// Which rules an augmentation run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentRule {
    Subgraph,
    Expansion,
    /// Subgraph extraction first, then expansion over both the originals
    /// and the freshly extracted subgraphs.
    All,
}

impl AugmentRule {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "subgraph" => Some(AugmentRule::Subgraph),
            "expansion" => Some(AugmentRule::Expansion),
            "all" => Some(AugmentRule::All),
            _ => None,
        }
    }
}

fn fold_id(seed: u64, sample_id: &str) -> u64 {
    // FNV-1a over the sample id, mixed with the policy seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in sample_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed
}

/// Keeps `cap` of `len` candidates, chosen with a seeded partial shuffle,
/// returned in ascending index order.
fn sample_indices(len: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cap.min(len) {
        let j = i + (rng.next_u64() as usize) % (len - i);
        indices.swap(i, j);
    }
    let mut kept = indices[..cap.min(len)].to_vec();
    kept.sort_unstable();
    kept
}

fn dedupe_key(graph: &StepGraph) -> (Vec<String>, Vec<(String, String)>) {
    let mut contents: Vec<String> = graph.steps().iter().map(|s| s.content.clone()).collect();
    contents.sort();
    let mut edges: Vec<(String, String)> = graph
        .edge_index_list()
        .into_iter()
        .map(|(f, t)| {
            (
                graph.steps()[f].content.clone(),
                graph.steps()[t].content.clone(),
            )
        })
        .collect();
    edges.sort();
    (contents, edges)
}

/// Emits the ancestor-closure subgraph QA pairs of one sample.
pub fn extract_subgraphs(sample: &QASample, policy: &SubgraphPolicy) -> Vec<QASample> {
    let graph = &sample.answer;
    let mut out = Vec::new();
    let mut seen_keys = BTreeSet::new();

    for root in graph.steps() {
        let ancestors = match graph.ancestors(root.id) {
            Ok(a) if !a.is_empty() => a,
            _ => continue,
        };
        let mut keep: BTreeSet<StepId> = ancestors;
        keep.insert(root.id);
        if keep.len() == graph.len() {
            continue;
        }

        // Re-index kept steps to step1..stepK preserving relative order.
        let kept_steps: Vec<&Step> = graph.steps().iter().filter(|s| keep.contains(&s.id)).collect();
        let new_id = |old: StepId| -> StepId {
            let pos = kept_steps.iter().position(|s| s.id == old).unwrap();
            StepId::new(pos as u32 + 1).unwrap()
        };
        let steps: Vec<Step> = kept_steps
            .iter()
            .map(|s| {
                let mut preconditions: Vec<StepId> =
                    s.preconditions.iter().map(|&p| new_id(p)).collect();
                preconditions.sort();
                Step {
                    id: new_id(s.id),
                    content: s.content.clone(),
                    preconditions,
                }
            })
            .collect();
        let answer = StepGraph::new(steps);
        if answer.edge_index_list().len() < policy.min_edges {
            continue;
        }
        if policy.dedupe && !seen_keys.insert(dedupe_key(&answer)) {
            continue;
        }

        out.push(QASample {
            sample_id: format!("{}-sub{}", sample.sample_id, root.id.number()),
            question: root.content.clone(),
            answer,
            image_path: sample.image_path.clone(),
            scene_category: sample.scene_category.clone(),
            annotation_source: AnnotationSource::Subgraph,
            parent_id: Some(sample.sample_id.clone()),
            rule: Some("subgraph".to_string()),
        });
    }

    if let Some(cap) = policy.max_per_sample {
        if out.len() > cap {
            let kept = sample_indices(out.len(), cap, fold_id(policy.seed, &sample.sample_id));
            out = kept.into_iter().map(|i| out[i].clone()).collect();
        }
    }
    out
}

fn strip_verb<'a>(content: &'a str, verb: &str) -> Option<&'a str> {
    if content.len() > verb.len()
        && content.is_char_boundary(verb.len())
        && content[..verb.len()].eq_ignore_ascii_case(verb)
    {
        Some(&content[verb.len()..])
    } else {
        None
    }
}

/// Object phrase without a trailing locative clause: everything before the
/// first `" from "`.
fn strip_locative(phrase: &str) -> &str {
    let lower = phrase.to_ascii_lowercase();
    match lower.find(" from ") {
        Some(i) => &phrase[..i],
        None => phrase,
    }
}

/// Applies the expansion rewrite for every `Remove A` candidate, in
/// step-index order. Samples whose final step is not a `Pick up` action,
/// or that have no remove step, yield nothing.
pub fn expand_graph(sample: &QASample, policy: &ExpansionPolicy) -> Vec<QASample> {
    let graph = &sample.answer;
    let final_step = match graph.steps().last() {
        Some(s) => s,
        None => return Vec::new(),
    };
    let b_full = match strip_verb(&final_step.content, "pick up ") {
        Some(rest) => rest,
        None => return Vec::new(),
    };
    let b_short = strip_locative(b_full);

    let mut out = Vec::new();
    for (pos, candidate) in graph.steps().iter().enumerate() {
        if pos + 1 == graph.len() {
            break;
        }
        if let Some(cap) = policy.max_per_sample {
            if out.len() >= cap {
                break;
            }
        }
        let a_full = match strip_verb(&candidate.content, "remove ") {
            Some(rest) => rest,
            None => continue,
        };
        let a_short = strip_locative(a_full);

        let n = graph.len() as u32;
        let put_down_id = StepId::new(n + 1).unwrap();
        let place_id = StepId::new(n + 2).unwrap();
        let mut steps: Vec<Step> = graph.steps().to_vec();
        steps[pos].content = format!("Pick up {a_full}");
        let mut put_down_pres = vec![candidate.id, final_step.id];
        put_down_pres.sort();
        steps.push(Step {
            id: put_down_id,
            content: format!("Put down {a_short}"),
            preconditions: put_down_pres,
        });
        let mut place_pres = vec![final_step.id, put_down_id];
        place_pres.sort();
        steps.push(Step {
            id: place_id,
            content: format!("Place {b_short} on {a_short}"),
            preconditions: place_pres,
        });

        out.push(QASample {
            sample_id: format!("{}-exp{}", sample.sample_id, candidate.id.number()),
            question: format!("Place {b_short} on {a_short}"),
            answer: StepGraph::new(steps),
            image_path: sample.image_path.clone(),
            scene_category: sample.scene_category.clone(),
            annotation_source: AnnotationSource::Expansion,
            parent_id: Some(sample.sample_id.clone()),
            rule: Some("expansion".to_string()),
        });
    }
    out
}

/// Runs a rule over a whole corpus. Output order is deterministic: sorted
/// by parent sample id, then rule, then the candidate's step number.
pub fn augment_corpus(
    samples: &[QASample],
    rule: AugmentRule,
    subgraph_policy: &SubgraphPolicy,
    expansion_policy: &ExpansionPolicy,
) -> Vec<QASample> {
    let mut out: Vec<QASample> = Vec::new();
    match rule {
        AugmentRule::Subgraph => {
            for s in samples {
                out.extend(extract_subgraphs(s, subgraph_policy));
            }
        }
        AugmentRule::Expansion => {
            for s in samples {
                out.extend(expand_graph(s, expansion_policy));
            }
        }
        AugmentRule::All => {
            let mut subs = Vec::new();
            for s in samples {
                subs.extend(extract_subgraphs(s, subgraph_policy));
            }
            for s in samples.iter().chain(subs.iter()) {
                out.extend(expand_graph(s, expansion_policy));
            }
            out.extend(subs);
        }
    }
    out.sort_by(|a, b| {
        (a.parent_id.as_deref(), a.rule.as_deref(), &a.sample_id)
            .cmp(&(b.parent_id.as_deref(), b.rule.as_deref(), &b.sample_id))
    });
    out
}
