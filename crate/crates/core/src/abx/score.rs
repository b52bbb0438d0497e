use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::dtw_unit;
use super::report::{AbxReport, ConditionResult};
use super::segments::Segment;
use crate::error::{Error, Result};
use crate::rng::{rng, split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpeakerMode {
    /// A, B and X share one speaker.
    Within,
    /// A and B share a speaker, X comes from another.
    Across,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextMode {
    /// A, B and X share their previous and next phone.
    Within,
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Condition {
    pub speaker: SpeakerMode,
    pub context: ContextMode,
    pub subset: String,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.speaker {
            SpeakerMode::Within => "within-speaker",
            SpeakerMode::Across => "across-speaker",
        };
        let c = match self.context {
            ContextMode::Within => "within-context",
            ContextMode::Any => "any-context",
        };
        write!(f, "{}/{s}/{c}", self.subset)
    }
}

impl Condition {
    /// Every speaker and context mode for each subset, in a fixed order.
    pub fn all(subsets: &[String]) -> Vec<Condition> {
        let mut out = Vec::new();
        for subset in subsets {
            for speaker in [SpeakerMode::Within, SpeakerMode::Across] {
                for context in [ContextMode::Within, ContextMode::Any] {
                    out.push(Condition {
                        speaker,
                        context,
                        subset: subset.clone(),
                    });
                }
            }
        }
        out
    }

    /// Keeps conditions matching a comma-separated filter such as
    /// `within-speaker,within-context`. Named modes restrict their factor;
    /// unnamed factors are left free.
    pub fn filter(conditions: Vec<Condition>, spec: &str) -> Result<Vec<Condition>> {
        let (mut speakers, mut contexts) = (Vec::new(), Vec::new());
        for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "within-speaker" => speakers.push(SpeakerMode::Within),
                "across-speaker" => speakers.push(SpeakerMode::Across),
                "within-context" => contexts.push(ContextMode::Within),
                "any-context" => contexts.push(ContextMode::Any),
                other => {
                    return Err(Error::invalid(format!(
                        "unknown condition {other:?}; expected within-speaker, across-speaker, within-context or any-context"
                    )))
                }
            }
        }
        Ok(conditions
            .into_iter()
            .filter(|c| speakers.is_empty() || speakers.contains(&c.speaker))
            .filter(|c| contexts.is_empty() || contexts.contains(&c.context))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Mean over triples inside each cell, then uniform over cells.
    #[default]
    Cell,
    /// Uniform over every triple of the condition.
    Triple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbxOptions {
    /// Cells with more triples than this are scored on a seeded uniform
    /// sample of this many triples.
    pub max_triples_per_cell: usize,
    pub weighting: Weighting,
    pub seed: u64,
    /// Widen each segment by one neighboring phone on each side.
    pub triphone: bool,
}

impl Default for AbxOptions {
    fn default() -> Self {
        Self {
            max_triples_per_cell: 1000,
            weighting: Weighting::Cell,
            seed: 0,
            triphone: false,
        }
    }
}

/// Summed triple scores and the number of triples scored.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellScore {
    pub score: f64,
    pub triples: usize,
}

impl CellScore {
    pub fn error(&self) -> f64 {
        self.score / self.triples as f64
    }
}

/// Pairwise DTW memo over segment indices.
struct Distances<'a> {
    segs: &'a [Segment],
    memo: HashMap<(usize, usize), f64>,
}

impl Distances<'_> {
    fn get(&mut self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        let segs = self.segs;
        *self.memo.entry(key).or_insert_with(|| {
            let (a, b) = (&segs[key.0], &segs[key.1]);
            dtw_unit(&a.frames, &b.frames, a.dim)
        })
    }
}

fn compare(dax: f64, dbx: f64) -> f64 {
    if dax > dbx {
        1.0
    } else if dax == dbx {
        0.5
    } else {
        0.0
    }
}

/// Scores triples `(A, B, X)` with `A` from `a`, `B` from `b` and `X` from
/// `x`; when `x_is_a`, `X` is drawn from `a` and must differ from `A`.
/// Above `budget` triples a seeded uniform sample of `budget` is scored.
fn score_cell(
    d: &mut Distances,
    a: &[usize],
    b: &[usize],
    x: &[usize],
    x_is_a: bool,
    budget: usize,
    seed: u64,
) -> Option<CellScore> {
    let nx_per_a = if x_is_a { a.len().saturating_sub(1) } else { x.len() };
    let total = a.len() * b.len() * nx_per_a;
    if total == 0 {
        return None;
    }
    let mut score = 0.0;
    if total <= budget {
        for &xi in x {
            for &ai in a {
                if x_is_a && ai == xi {
                    continue;
                }
                let dax = d.get(ai, xi);
                for &bi in b {
                    score += compare(dax, d.get(bi, xi));
                }
            }
        }
        return Some(CellScore { score, triples: total });
    }
    let mut r = rng(seed);
    for _ in 0..budget {
        let k = r.random_range(0..total);
        let (ai, rest) = (k / (b.len() * nx_per_a), k % (b.len() * nx_per_a));
        let (bi, xk) = (rest / nx_per_a, rest % nx_per_a);
        let xi = if x_is_a { x[if xk >= ai { xk + 1 } else { xk }] } else { x[xk] };
        score += compare(d.get(a[ai], xi), d.get(b[bi], xi));
    }
    Some(CellScore { score, triples: budget })
}

/// Error over all ordered triples with `A != X` from the a-class and `B`
/// from the b-class; ties count one half. `None` when `|A| < 2` or
/// `|B| < 1`.
pub fn abx_error(a_class: &[Segment], b_class: &[Segment]) -> Option<f64> {
    let segs: Vec<Segment> = a_class.iter().chain(b_class).cloned().collect();
    let a: Vec<usize> = (0..a_class.len()).collect();
    let b: Vec<usize> = (a_class.len()..segs.len()).collect();
    let mut d = Distances {
        segs: &segs,
        memo: HashMap::new(),
    };
    score_cell(&mut d, &a, &b, &a, true, usize::MAX, 0).map(|c| c.error())
}

/// Unweighted mean of the non-empty cells.
pub fn aggregate(cells: &[Option<f64>]) -> Result<f64> {
    let vals: Vec<f64> = cells.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::invalid("every ABX cell is empty"));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

type ClassMap<'a> = BTreeMap<&'a str, Vec<usize>>;

/// Cell key: (a, b, rest) where rest names speakers and context.
type CellKey = (String, String, String);

fn condition_cells(segs: &[Segment], cond: &Condition, opts: &AbxOptions) -> Vec<(CellKey, CellScore)> {
    // group -> speaker -> phone -> token indices
    let mut groups: BTreeMap<String, BTreeMap<&str, ClassMap>> = BTreeMap::new();
    for (i, s) in segs.iter().enumerate() {
        if s.subset != cond.subset {
            continue;
        }
        let ctx = match cond.context {
            ContextMode::Within => format!("{}_{}", s.prev, s.next),
            ContextMode::Any => String::new(),
        };
        groups
            .entry(ctx)
            .or_default()
            .entry(s.speaker.as_str())
            .or_default()
            .entry(s.phone.as_str())
            .or_default()
            .push(i);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let per_group: Vec<Vec<(CellKey, CellScore)>> = groups
        .par_iter()
        .map(|(ctx, speakers)| {
            let mut d = Distances {
                segs,
                memo: HashMap::new(),
            };
            let mut out = Vec::new();
            for (&spk, classes) in speakers {
                let listeners: Vec<(&str, &ClassMap)> = match cond.speaker {
                    SpeakerMode::Within => vec![(spk, classes)],
                    SpeakerMode::Across => speakers.iter().filter(|(s, _)| **s != spk).map(|(s, c)| (*s, c)).collect(),
                };
                for (&pa, a) in classes {
                    for (&pb, b) in classes {
                        if pa == pb {
                            continue;
                        }
                        for &(xspk, xclasses) in &listeners {
                            let Some(x) = xclasses.get(pa) else { continue };
                            let rest = format!("{ctx}|{spk}|{xspk}");
                            let seed = split(opts.seed, &format!("{}|{pa}|{pb}|{rest}", cond));
                            let x_is_a = cond.speaker == SpeakerMode::Within;
                            if let Some(c) = score_cell(&mut d, a, b, x, x_is_a, opts.max_triples_per_cell, seed) {
                                out.push(((pa.to_string(), pb.to_string(), rest), c));
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    per_group.into_iter().flatten().collect()
}

fn evaluate_condition(segs: &[Segment], cond: &Condition, opts: &AbxOptions) -> ConditionResult {
    let cells = condition_cells(segs, cond, opts);
    let triples: usize = cells.iter().map(|(_, c)| c.triples).sum();
    let error = match opts.weighting {
        Weighting::Triple => (triples > 0).then(|| cells.iter().map(|(_, c)| c.score).sum::<f64>() / triples as f64),
        Weighting::Cell => {
            // average the (a, b) and (b, a) cells, then uniformly over pairs
            let mut sym: BTreeMap<CellKey, (f64, usize)> = BTreeMap::new();
            for ((a, b, rest), c) in &cells {
                let key = if a < b { (a.clone(), b.clone(), rest.clone()) } else { (b.clone(), a.clone(), rest.clone()) };
                let e = sym.entry(key).or_default();
                e.0 += c.error();
                e.1 += 1;
            }
            let vals: Vec<Option<f64>> = sym.values().map(|&(s, n)| Some(s / n as f64)).collect();
            aggregate(&vals).ok()
        }
    };
    let n_cells = cells.len();
    if error.is_none() {
        log::warn!("ABX condition {cond} has no valid triples; excluded from the mean");
    }
    ConditionResult {
        condition: cond.clone(),
        error,
        triples,
        cells: n_cells,
    }
}

/// Scores every condition. Segments are put in a canonical order first, so
/// the result does not depend on the order they are given in.
pub fn evaluate(segments: &[Segment], conditions: &[Condition], opts: &AbxOptions) -> Result<AbxReport> {
    let mut segs = segments.to_vec();
    segs.sort_by(|a, b| (&a.utterance_id, a.start).cmp(&(&b.utterance_id, b.start)));
    let results: Vec<ConditionResult> = conditions.iter().map(|c| evaluate_condition(&segs, c, opts)).collect();
    let mean = aggregate(&results.iter().map(|r| r.error).collect::<Vec<_>>())?;
    Ok(AbxReport { conditions: results, mean })
}
