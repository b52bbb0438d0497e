//! Self-checks behind `chunkcpc verify`: finite-difference gradients,
//! causal window support, brute-force oracles and loss identities.
//!
//! Every check is deterministic. A suite returns one [`Check`] per case and
//! never stops at the first failure, so a report lists everything that broke.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::abx::{angular_distance, dtw_unit, evaluate, unit_frames, AbxOptions, Condition, ContextMode, Segment, SpeakerMode};
use crate::error::{Error, Result};
use crate::nn::{
    total_context, ArConfig, AttentionConfig, ContextNetwork, ConvEncoder, EncoderConfig, MultiHeadAttention, ParamSet,
    TransformerLayer, TransformerLayerConfig, Width,
};
use crate::objectives::{bestrq_loss, cpc_loss, mask_spans, Codebook, CpcConfig, CpcMode, LossScope, Predictor, PredictorConfig};
use crate::rng::{rng, Rng};
use crate::tensor::{grad_check, Graph, Tensor, Var};

/// Relative error bound of the gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Finite-difference step. Smaller steps drown the encoder's input
/// gradients in cancellation error (error grows as 1/step below this);
/// larger ones start to straddle ReLU kinks.
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Causality,
    Oracles,
    Losses,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradients, Suite::Causality, Suite::Oracles, Suite::Losses];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Causality => "causality",
            Suite::Oracles => "oracles",
            Suite::Losses => "losses",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite {s:?}; expected gradients, causality, oracles or losses")))
    }
}

/// Outcome of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// Turns an error raised while running a case into a failed check.
    fn from_result(name: impl Into<String>, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Gradients => gradients(),
        Suite::Causality => causality(),
        Suite::Oracles => oracles(),
        Suite::Losses => losses(),
    }
}

fn randn(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(r))
}

/// `sum(y * probe)` for a fixed random probe, so every output coordinate
/// contributes with its own weight.
fn project(g: &mut Graph<f64>, y: Var, r: &mut Rng) -> Result<Var> {
    let probe = randn(g.shape(y), r);
    let p = g.input(probe)?;
    let m = g.mul(y, p)?;
    g.sum(m)
}

fn worst_over_seeds(mut f: impl FnMut(u64) -> Result<f64>) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..GRAD_SEEDS {
        let e = f(seed)?;
        if !e.is_finite() {
            return Ok((false, format!("seed {seed}: relative error {e}")));
        }
        worst = worst.max(e);
    }
    Ok((worst <= GRAD_TOLERANCE, format!("max relative error {worst:.2e} over {GRAD_SEEDS} seeds")))
}

/// Gradient check of a module's output with respect to its input and to
/// one named parameter.
fn module_checks<M>(
    label: &str,
    input_shape: &[usize],
    param: &str,
    build: impl Fn(&mut ParamSet<f64>, &mut Rng) -> Result<M>,
    forward: impl Fn(&M, &mut Graph<f64>, &crate::nn::Bound, Var) -> Result<Var>,
) -> Vec<Check> {
    let wrt_input = worst_over_seeds(|seed| {
        let mut r = rng(seed);
        let mut ps = ParamSet::new();
        let m = build(&mut ps, &mut r)?;
        let x = randn(input_shape, &mut r);
        let probe_seed = r.random();
        grad_check(
            |g, xv| {
                let p = ps.bind(g, false)?;
                let y = forward(&m, g, &p, xv)?;
                project(g, y, &mut rng(probe_seed))
            },
            &x,
            GRAD_STEP,
        )
    });
    let wrt_param = worst_over_seeds(|seed| {
        let mut r = rng(seed);
        let mut ps = ParamSet::new();
        let m = build(&mut ps, &mut r)?;
        let x = randn(input_shape, &mut r);
        let probe_seed = r.random();
        let id = ps.id(param).ok_or_else(|| Error::invalid(format!("no parameter {param}")))?;
        grad_check(
            |g, wv| {
                let p = ps.bind_with(g, id, wv)?;
                let xv = g.input(x.clone())?;
                let y = forward(&m, g, &p, xv)?;
                project(g, y, &mut rng(probe_seed))
            },
            ps.get(id),
            GRAD_STEP,
        )
    });
    vec![
        Check::from_result(format!("{label} / input"), wrt_input),
        Check::from_result(format!("{label} / {param}"), wrt_param),
    ]
}

fn small_layer(d: usize, heads: usize, width: Width, ff: usize, out: usize) -> TransformerLayerConfig {
    TransformerLayerConfig {
        attention: AttentionConfig {
            width,
            heads,
            model_dim: d,
        },
        ff_hidden: ff,
        out_dim: out,
    }
}

/// Finite-difference checks of every layer and loss in double precision.
pub fn gradients() -> Vec<Check> {
    let mut out = Vec::new();
    let enc_cfg = EncoderConfig {
        channels: 3,
        ..EncoderConfig::default()
    };
    out.extend(module_checks(
        "conv encoder",
        &[4 * 160, 1],
        "enc.0.w",
        |ps, r| ConvEncoder::new(ps, "enc", &enc_cfg, r),
        |m, g, p, x| m.forward(g, p, x),
    ));
    let enc_norm = EncoderConfig {
        channels: 3,
        layer_norm: true,
        ..EncoderConfig::default()
    };
    out.extend(module_checks(
        "conv encoder with norm",
        &[4 * 160, 1],
        "enc.2.w",
        |ps, r| ConvEncoder::new(ps, "enc", &enc_norm, r),
        |m, g, p, x| m.forward(g, p, x),
    ));
    let att = AttentionConfig {
        width: Width::Bounded(3),
        heads: 2,
        model_dim: 6,
    };
    out.extend(module_checks(
        "chunked attention",
        &[7, 6],
        "att.q.w",
        |ps, r| MultiHeadAttention::new(ps, "att", &att, r),
        |m, g, p, x| m.forward(g, p, x),
    ));
    out.extend(module_checks(
        "transformer layer",
        &[7, 6],
        "l.ff1.w",
        |ps, r| TransformerLayer::new(ps, "l", &small_layer(6, 2, Width::Bounded(3), 10, 6), r),
        |m, g, p, x| m.forward(g, p, x),
    ));
    let ar = ArConfig {
        layers: 2,
        layer: small_layer(6, 2, Width::Bounded(2), 10, 6),
        final_dim: 5,
        positional_encoding: true,
    };
    out.extend(module_checks(
        "context network",
        &[7, 6],
        "ar.1.attn.k.w",
        |ps, r| ContextNetwork::new(ps, "ar", &ar, r),
        |m, g, p, x| m.forward(g, p, x),
    ));
    let pred = PredictorConfig {
        steps: 3,
        input_dim: 6,
        out_dim: 4,
        heads: 2,
        width: Width::Unbounded,
        ff_hidden: 10,
        positional_encoding: true,
    };
    out.extend(module_checks(
        "predictor",
        &[7, 6],
        "pred.ff2.w",
        |ps, r| Predictor::new(ps, "pred", &pred, r),
        |m, g, p, x| {
            let vs = m.forward(g, p, x)?;
            g.concat(&vs, 1)
        },
    ));

    for mode in [CpcMode::Average, CpcMode::Last] {
        let cfg = CpcConfig {
            steps: 3,
            negatives: 5,
            mode,
        };
        let name = format!("cpc loss ({mode:?})").to_lowercase();
        let lens = [8usize, 6];
        let case = |wrt_z: bool| {
            worst_over_seeds(|seed| {
                let mut r = rng(100 + seed);
                let z: Vec<Tensor<f64>> = lens.iter().map(|&t| randn(&[t, 4], &mut r)).collect();
                let v: Vec<Vec<Tensor<f64>>> = lens
                    .iter()
                    .map(|&t| (0..cfg.steps).map(|_| randn(&[t, 4], &mut r)).collect())
                    .collect();
                let f = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
                    let mut zs = Vec::new();
                    let mut vs = Vec::new();
                    for (u, zu) in z.iter().enumerate() {
                        zs.push(if wrt_z && u == 0 { x } else { g.input(zu.clone())? });
                        let mut row = Vec::new();
                        for (s, vus) in v[u].iter().enumerate() {
                            row.push(if !wrt_z && u == 0 && s + 1 == cfg.steps { x } else { g.input(vus.clone())? });
                        }
                        vs.push(row);
                    }
                    cpc_loss(g, &zs, &vs, &cfg, seed)
                };
                let x = if wrt_z { &z[0] } else { &v[0][cfg.steps - 1] };
                grad_check(f, x, GRAD_STEP)
            })
        };
        out.push(Check::from_result(format!("{name} / latents"), case(true)));
        out.push(Check::from_result(format!("{name} / predictions"), case(false)));
    }
    for scope in [LossScope::All, LossScope::Masked] {
        let r = worst_over_seeds(|seed| {
            let mut r = rng(200 + seed);
            let (t, k) = (9, 7);
            let x = randn(&[t, k], &mut r);
            let targets: Vec<usize> = (0..t).map(|_| r.random_range(0..k)).collect();
            let mut mask: Vec<bool> = (0..t).map(|_| r.random_bool(0.4)).collect();
            mask[0] = true;
            grad_check(|g, v| bestrq_loss(g, v, &targets, &mask, scope, k), &x, GRAD_STEP)
        });
        out.push(Check::from_result(format!("bestrq loss ({scope:?}) / logits").to_lowercase(), r));
    }
    out
}

/// For output row `row`, which input rows carry a non-zero gradient.
pub fn support(x: &Tensor<f64>, row: usize, f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) -> Result<Vec<bool>> {
    let mut g = Graph::new();
    let xv = g.param(x.clone())?;
    let y = f(&mut g, xv)?;
    let r = g.narrow(y, 0, row, 1)?;
    let s = g.sum(r)?;
    g.backward(s)?;
    let grad = g.grad(xv).expect("leaf gradient populated by backward");
    let cols = x.shape()[1];
    Ok(grad.data().chunks(cols).map(|c| c.iter().any(|&v| v != 0.0)).collect())
}

/// Window widths and depths covered by the causality suite.
pub const CAUSAL_WIDTHS: [usize; 4] = [2, 4, 8, 16];
pub const CAUSAL_DEPTHS: [usize; 3] = [1, 2, 4];

/// Support of every output frame of a context network with `layers`
/// chunked layers of width `w`: returns the number of (row, input) pairs
/// that leak outside `t-D(W-1) ..= t` and the number inside that are live.
pub fn window_leaks(w: usize, layers: usize, frames: usize, seed: u64) -> Result<(usize, usize)> {
    let d = 8;
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let cfg = ArConfig {
        layers,
        layer: small_layer(d, 2, Width::Bounded(w), 16, d),
        final_dim: 4,
        positional_encoding: true,
    };
    let net = ContextNetwork::new(&mut ps, "ar", &cfg, &mut r)?;
    let x = randn(&[frames, d], &mut r);
    let span = total_context(layers, w);
    let (mut leaks, mut live) = (0, 0);
    for row in 0..frames {
        let sup = support(&x, row, |g, xv| {
            let p = ps.bind(g, false)?;
            net.forward(g, &p, xv)
        })?;
        for (j, &s) in sup.iter().enumerate() {
            let inside = j <= row && j + span > row;
            if s && !inside {
                leaks += 1;
            }
            if s && inside {
                live += 1;
            }
        }
    }
    Ok((leaks, live))
}

/// Encoder receptive field measured by Jacobian support: for each latent
/// frame, the first and last input sample with a non-zero gradient.
pub fn encoder_support(cfg: &EncoderConfig, frames: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let enc = ConvEncoder::new(&mut ps, "enc", cfg, &mut r)?;
    let x = randn(&[frames * cfg.hop(), 1], &mut r);
    let mut out = Vec::new();
    for t in 0..frames {
        let sup = support(&x, t, |g, xv| {
            let p = ps.bind(g, false)?;
            enc.forward(g, &p, xv)
        })?;
        let first = sup.iter().position(|&s| s).unwrap_or(usize::MAX);
        let last = sup.iter().rposition(|&s| s).unwrap_or(usize::MAX);
        out.push((first, last));
    }
    Ok(out)
}

/// Causal window support of stacked chunked attention, the bitwise
/// identity of wide windows, and the encoder's field and hop.
pub fn causality() -> Vec<Check> {
    let mut out = Vec::new();
    for &w in &CAUSAL_WIDTHS {
        for &d in &CAUSAL_DEPTHS {
            let frames = (total_context(d, w) + 6).min(40);
            let r = window_leaks(w, d, frames, (10 * w + d) as u64).map(|(leaks, live)| {
                (
                    leaks == 0,
                    format!("{leaks} non-zero gradients outside the {}-frame window, {live} inside", total_context(d, w)),
                )
            });
            out.push(Check::from_result(format!("window W={w} D={d}"), r));
        }
    }
    let wide = (|| -> Result<(bool, String)> {
        let (d, t) = (8, 10);
        let x = randn(&[t, d], &mut rng(9));
        let run = |width| -> Result<Tensor<f64>> {
            let mut ps = ParamSet::new();
            let cfg = ArConfig {
                layers: 2,
                layer: small_layer(d, 4, width, 16, d),
                final_dim: 4,
                positional_encoding: true,
            };
            let net = ContextNetwork::new(&mut ps, "ar", &cfg, &mut rng(10))?;
            let mut g = Graph::new();
            let p = ps.bind(&mut g, false)?;
            let xv = g.input(x.clone())?;
            let y = net.forward(&mut g, &p, xv)?;
            Ok(g.value(y).clone())
        };
        let unbounded = run(Width::Unbounded)?;
        let mut same = true;
        for w in [t, t + 1, 64] {
            same &= run(Width::Bounded(w))? == unbounded;
        }
        Ok((same, format!("W in {{T, T+1, 64}} vs unbounded at T={t}: {}", if same { "bit-identical" } else { "differ" })))
    })();
    out.push(Check::from_result("wide window equals unbounded", wide));

    let cfg = EncoderConfig {
        channels: 32,
        ..EncoderConfig::default()
    };
    let geometry = encoder_support(&cfg, 8, 3).map(|sup| {
        let hop = cfg.hop();
        let mut ok = true;
        let mut widest = 0;
        for (t, &(first, last)) in sup.iter().enumerate() {
            let end = (t + 1) * hop - 1;
            ok &= last <= end;
            if end + 1 >= 465 {
                widest = widest.max(last + 1 - first);
                ok &= first + 465 > end;
            }
        }
        ok &= widest == 465 && cfg.receptive_field() == 465;
        (ok, format!("field {widest} samples by Jacobian support, {} by formula; no future samples", cfg.receptive_field()))
    });
    out.push(Check::from_result("encoder receptive field", geometry));
    let hop = (|| -> Result<(bool, String)> {
        let mut ps = ParamSet::<f64>::new();
        let enc = ConvEncoder::new(&mut ps, "enc", &EncoderConfig { channels: 2, ..cfg.clone() }, &mut rng(4))?;
        let mut ok = true;
        let mut seen = Vec::new();
        for n in [160usize, 319, 320, 1000, 16000] {
            let mut g = Graph::new();
            let p = ps.bind(&mut g, false)?;
            let x = g.input(Tensor::zeros(&[n, 1]))?;
            let y = enc.forward(&mut g, &p, x)?;
            let frames = g.shape(y)[0];
            ok &= frames == n / 160;
            seen.push(format!("{n}->{frames}"));
        }
        Ok((ok && cfg.hop() == 160, format!("frames per samples {}", seen.join(", "))))
    })();
    out.push(Check::from_result("encoder hop", hop));
    out
}

/// Minimum over every monotone path of mean angular distance, by explicit
/// enumeration.
pub fn dtw_by_enumeration(a: &[f32], b: &[f32], dim: usize) -> Result<f64> {
    let (n, m) = (a.len() / dim, b.len() / dim);
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = angular_distance(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim])?;
        }
    }
    let mut best = f64::INFINITY;
    let mut stack = vec![(0usize, 0usize, cost[0], 1usize)];
    while let Some((i, j, sum, len)) = stack.pop() {
        if i == n - 1 && j == m - 1 {
            best = best.min(sum / len as f64);
            continue;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                stack.push((ni, nj, sum + cost[ni * m + nj], len + 1));
            }
        }
    }
    Ok(best)
}

/// Condition error by enumerating every admissible `(A, B, X)` triple.
pub fn abx_by_enumeration(segs: &[Segment], cond: &Condition) -> Option<f64> {
    type Key = (String, String, String);
    let mut cells: BTreeMap<Key, (f64, f64)> = BTreeMap::new();
    for (ia, a) in segs.iter().enumerate() {
        for (ix, x) in segs.iter().enumerate() {
            if ia == ix || a.phone != x.phone || a.subset != cond.subset {
                continue;
            }
            let spk_ok = match cond.speaker {
                SpeakerMode::Within => a.speaker == x.speaker,
                SpeakerMode::Across => a.speaker != x.speaker,
            };
            let ctx_ok = cond.context == ContextMode::Any || (&a.prev, &a.next) == (&x.prev, &x.next);
            if !spk_ok || !ctx_ok {
                continue;
            }
            for b in segs {
                if b.phone == a.phone || b.speaker != a.speaker || b.subset != cond.subset {
                    continue;
                }
                if cond.context == ContextMode::Within && (&b.prev, &b.next) != (&a.prev, &a.next) {
                    continue;
                }
                let ctx = match cond.context {
                    ContextMode::Within => format!("{}_{}", a.prev, a.next),
                    ContextMode::Any => String::new(),
                };
                let key = (a.phone.clone(), b.phone.clone(), format!("{ctx}|{}|{}", a.speaker, x.speaker));
                let dax = dtw_unit(&a.frames, &x.frames, a.dim);
                let dbx = dtw_unit(&b.frames, &x.frames, a.dim);
                let e = cells.entry(key).or_default();
                e.0 += if dax > dbx {
                    1.0
                } else if dax == dbx {
                    0.5
                } else {
                    0.0
                };
                e.1 += 1.0;
            }
        }
    }
    let mut sym: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for ((a, b, rest), (s, n)) in &cells {
        let key = if a < b {
            (a.clone(), b.clone(), rest.clone())
        } else {
            (b.clone(), a.clone(), rest.clone())
        };
        sym.entry(key).or_default().push(s / n);
    }
    let vals: Vec<f64> = sym.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Random segments: `utts` utterances round-robin over speakers, each a
/// sequence of `per_utt` phones of 1 to 3 frames.
pub fn random_segments(seed: u64, utts: usize, speakers: usize, phones: usize, per_utt: usize, dim: usize) -> Vec<Segment> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for u in 0..utts {
        let spk = format!("spk{}", u % speakers);
        let labels: Vec<String> = (0..per_utt).map(|_| format!("p{}", r.random_range(0..phones))).collect();
        for (k, ph) in labels.iter().enumerate() {
            let prev = if k == 0 { "SIL" } else { &labels[k - 1] };
            let next = labels.get(k + 1).map_or("SIL", String::as_str);
            let n = r.random_range(1..4);
            let raw: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut r)).collect();
            out.push(Segment {
                utterance_id: format!("u{u}"),
                start: 10 * k,
                phone: ph.clone(),
                prev: prev.to_string(),
                next: next.to_string(),
                speaker: spk.clone(),
                subset: "s".into(),
                dim,
                frames: unit_frames(&raw, dim).expect("standard normal frames are non-zero"),
            });
        }
    }
    out
}

/// Index of the prototype nearest to the unit-normalized frame, by sorting
/// every distance (lowest index on ties).
pub fn nearest_by_sorting(cb: &Codebook, z: &[f32]) -> usize {
    let n: f64 = z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, usize)> = cb
        .prototypes()
        .data()
        .chunks(cb.dim())
        .enumerate()
        .map(|(k, p)| {
            let d: f64 = p.iter().zip(z).map(|(&a, &b)| (a as f64 - b as f64 / n).powi(2)).sum();
            (d, k)
        })
        .collect();
    scored.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    scored[0].1
}

/// DTW, ABX and quantizer agreement with exhaustive oracles, plus the
/// chance level of random representations.
pub fn oracles() -> Vec<Check> {
    let mut out = Vec::new();
    let dtw = (|| -> Result<(bool, String)> {
        let mut r = rng(1);
        let dim = 3;
        let mut worst = 0.0f64;
        for n in 1..=6 {
            for m in 1..=6 {
                for _ in 0..3 {
                    let a: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut r)).collect();
                    let b: Vec<f32> = (0..m * dim).map(|_| StandardNormal.sample(&mut r)).collect();
                    let fast = dtw_unit(&unit_frames(&a, dim)?, &unit_frames(&b, dim)?, dim);
                    worst = worst.max((fast - dtw_by_enumeration(&a, &b, dim)?).abs());
                }
            }
        }
        Ok((worst <= 1e-9, format!("max |DP - enumeration| {worst:.1e} over all lattices up to 6x6")))
    })();
    out.push(Check::from_result("dtw vs path enumeration", dtw));

    let abx = (|| -> Result<(bool, String)> {
        let opts = AbxOptions::default();
        let (mut compared, mut mismatched) = (0, 0);
        for seed in 0..30 {
            let segs = random_segments(100 + seed, 4, 2, 3, 4, 3);
            for cond in Condition::all(&["s".into()]) {
                let brute = abx_by_enumeration(&segs, &cond);
                match evaluate(&segs, std::slice::from_ref(&cond), &opts) {
                    Ok(rep) if rep.conditions[0].triples <= 200 => {
                        compared += 1;
                        mismatched += usize::from(rep.conditions[0].error != brute);
                    }
                    Ok(_) => {}
                    Err(_) => mismatched += usize::from(brute.is_some()),
                }
            }
        }
        Ok((mismatched == 0 && compared > 0, format!("{compared} conditions with <= 200 triples, {mismatched} differ")))
    })();
    out.push(Check::from_result("abx vs triple enumeration", abx));

    let quant = (|| -> Result<(bool, String)> {
        let cb = Codebook::new(64, 16, 5)?;
        let mut r = rng(6);
        let mut agree = 0;
        for _ in 0..100 {
            let z: Vec<f32> = (0..16).map(|_| StandardNormal.sample(&mut r)).collect();
            agree += usize::from(cb.quantize(&z)? == nearest_by_sorting(&cb, &z));
        }
        Ok((agree == 100, format!("{agree}/100 vectors agree")))
    })();
    out.push(Check::from_result("quantize vs nearest prototype", quant));

    let chance = (|| -> Result<(bool, String)> {
        let segs = random_segments(10, 40, 4, 6, 25, 8);
        let rep = evaluate(&segs, &Condition::all(&["s".into()]), &AbxOptions::default())?;
        let triples: usize = rep.conditions.iter().map(|c| c.triples).sum();
        Ok((
            triples >= 10_000 && (rep.mean - 0.5).abs() <= 0.02,
            format!("mean {:.4} over {triples} triples", rep.mean),
        ))
    })();
    out.push(Check::from_result("random representations at chance", chance));
    out
}

/// Measured fraction of masked frames over `frames` frames.
pub fn mask_coverage(frames: usize, p: f64, span: usize, seed: u64) -> Result<f64> {
    let mask = mask_spans(frames, p, span, &mut rng(seed))?;
    Ok(mask.iter().filter(|&&m| m).count() as f64 / frames as f64)
}

/// Loss values at known points and the mask coverage statistic.
pub fn losses() -> Vec<Check> {
    let mut out = Vec::new();
    let cpc = (|| -> Result<(bool, String)> {
        let cfg = CpcConfig {
            steps: 3,
            negatives: 128,
            mode: CpcMode::Average,
        };
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::full(&[20, 8], 0.3))?;
        let v: Vec<Var> = (0..3).map(|_| g.input(Tensor::full(&[20, 8], -0.7))).collect::<Result<_>>()?;
        let l = cpc_loss(&mut g, &[z], &[v], &cfg, 0)?;
        let l = g.item(l);
        let want = 128f64.ln();
        Ok(((l - want).abs() <= 1e-6, format!("{l:.10} vs ln 128 = {want:.10}")))
    })();
    out.push(Check::from_result("cpc uniform scores", cpc));

    let bestrq = (|| -> Result<(bool, String)> {
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::full(&[6, 8192], 1.5))?;
        let targets = [0, 17, 8191, 4, 4, 100];
        let mask = [true, false, false, true, false, false];
        let l = bestrq_loss(&mut g, logits, &targets, &mask, LossScope::All, 8192)?;
        let l = g.item(l);
        let want = 8192f64.ln();
        Ok(((l - want).abs() <= 1e-6, format!("{l:.10} vs ln 8192 = {want:.10}")))
    })();
    out.push(Check::from_result("bestrq uniform logits", bestrq));

    let modes = (|| -> Result<(bool, String)> {
        let mut r = rng(7);
        let mut same = true;
        for seed in 0..5 {
            let z = randn(&[12, 6], &mut r);
            let v = randn(&[12, 6], &mut r);
            let loss = |mode| -> Result<f64> {
                let cfg = CpcConfig {
                    steps: 1,
                    negatives: 16,
                    mode,
                };
                let mut g = Graph::<f64>::new();
                let zv = g.input(z.clone())?;
                let vv = g.input(v.clone())?;
                let l = cpc_loss(&mut g, &[zv], &[vec![vv]], &cfg, seed)?;
                Ok(g.item(l))
            };
            same &= loss(CpcMode::Average)?.to_bits() == loss(CpcMode::Last)?.to_bits();
        }
        Ok((same, format!("S = 1 average and last {} on 5 seeds", if same { "bit-identical" } else { "differ" })))
    })();
    out.push(Check::from_result("cpc average equals last at S=1", modes));

    let cov = mask_coverage(1_000_000, 0.01, 12, 11).map(|c| {
        let want = 1.0 - 0.99f64.powi(12);
        ((c - want).abs() <= 0.01, format!("{c:.4} vs 1 - 0.99^12 = {want:.4}"))
    });
    out.push(Check::from_result("mask coverage p=0.01 span 12", cov));
    out
}
