//! Scoring, selection and mask updates for every pruning method.
//!
//! Structured methods remove whole input slices: `w[:, c, :, :]` of a
//! convolution or column `c` of a linear layer. Selection is deterministic:
//! candidates are ordered by score and ties go to the lower `(layer, index)`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::arch::LayerSpec;
use crate::error::{Error, Result};
use crate::mask::{slice_indices, Mask, MaskSet};
use crate::nn::Network;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    L1Unstructured,
    RandomUnstructured,
    L1Structured,
    L2Structured,
    /// Largest absolute value in the slice.
    LinfStructured,
    /// Smallest absolute value in the slice.
    LneginfStructured,
    RandomStructured,
    /// Structured L1 on convolutions, unstructured L1 on linear layers.
    Hybrid,
    /// Unstructured L1 on linear layers only.
    FcOnly,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::L1Unstructured,
        Method::RandomUnstructured,
        Method::L1Structured,
        Method::L2Structured,
        Method::LinfStructured,
        Method::LneginfStructured,
        Method::RandomStructured,
        Method::Hybrid,
        Method::FcOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::L1Unstructured => "l1_unstructured",
            Method::RandomUnstructured => "random_unstructured",
            Method::L1Structured => "l1_structured",
            Method::L2Structured => "l2_structured",
            Method::LinfStructured => "linf_structured",
            Method::LneginfStructured => "lneginf_structured",
            Method::RandomStructured => "random_structured",
            Method::Hybrid => "hybrid",
            Method::FcOnly => "fc_only",
        }
    }

    /// Short column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::L1Unstructured => "L1 US",
            Method::RandomUnstructured => "random US",
            Method::L1Structured => "L1 S",
            Method::L2Structured => "L2 S",
            Method::LinfStructured => "Linf S",
            Method::LneginfStructured => "L-inf S",
            Method::RandomStructured => "random S",
            Method::Hybrid => "hybrid",
            Method::FcOnly => "fc-only",
        }
    }

    /// Criterion applied to a layer of the given kind, or `None` if the
    /// method leaves that layer alone.
    pub fn criterion_for(self, layer: &LayerSpec) -> Option<Criterion> {
        use Criterion::*;
        let conv = matches!(layer, LayerSpec::Conv2d { .. });
        let linear = matches!(layer, LayerSpec::Linear { .. });
        if !conv && !linear {
            return None;
        }
        Some(match self {
            Method::L1Unstructured => Unstructured(UnstructuredScore::L1),
            Method::RandomUnstructured => Unstructured(UnstructuredScore::Random),
            Method::L1Structured => Structured(SliceScore::L1),
            Method::L2Structured => Structured(SliceScore::L2),
            Method::LinfStructured => Structured(SliceScore::Linf),
            Method::LneginfStructured => Structured(SliceScore::NegInf),
            Method::RandomStructured => Structured(SliceScore::Random),
            Method::Hybrid if conv => Structured(SliceScore::L1),
            Method::Hybrid => Unstructured(UnstructuredScore::L1),
            Method::FcOnly if linear => Unstructured(UnstructuredScore::L1),
            Method::FcOnly => return None,
        })
    }

    pub fn is_structured(self) -> bool {
        matches!(
            self,
            Method::L1Structured
                | Method::L2Structured
                | Method::LinfStructured
                | Method::LneginfStructured
                | Method::RandomStructured
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown pruning method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    PruneLow,
    PruneHigh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnstructuredScore {
    L1,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceScore {
    L1,
    L2,
    Linf,
    NegInf,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    Unstructured(UnstructuredScore),
    Structured(SliceScore),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub method: Method,
    #[serde(default)]
    pub scope: Scope,
    #[serde(default)]
    pub direction: Direction,
    pub fraction: f64,
}

impl PruneSpec {
    pub fn local(method: Method, fraction: f64) -> Self {
        PruneSpec {
            method,
            scope: Scope::Local,
            direction: Direction::PruneLow,
            fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config {
                layer: None,
                message: format!("pruning fraction {} outside (0, 1)", self.fraction),
            });
        }
        Ok(())
    }
}

/// `round(fraction * remaining)` with halves rounded up.
pub fn prune_count(fraction: f64, remaining: usize) -> usize {
    let k = (fraction * remaining as f64 + 0.5).floor() as usize;
    k.min(remaining)
}

/// Per-coordinate scores. Random scores draw one value per coordinate,
/// pruned or not, so the stream advances identically for every mask.
pub fn score_unstructured<T: Scalar>(
    weights: &[T],
    score: UnstructuredScore,
    rng: &mut RngStream,
) -> Vec<f64> {
    match score {
        UnstructuredScore::L1 => weights.iter().map(|w| w.abs().to_f64().unwrap()).collect(),
        UnstructuredScore::Random => weights.iter().map(|_| rng.unit_f32() as f64).collect(),
    }
}

/// One score per input slice of a `(out, in, ...)` weight tensor. Pruned
/// coordinates hold zero and are included in the norm as such.
pub fn score_structured<T: Scalar>(
    weights: &[T],
    shape: &[usize],
    score: SliceScore,
    rng: &mut RngStream,
) -> Vec<f64> {
    let inputs = shape[1];
    (0..inputs)
        .map(|c| {
            let vals = slice_indices(shape, c).map(|i| weights[i].abs().to_f64().unwrap());
            match score {
                SliceScore::L1 => vals.sum(),
                SliceScore::L2 => vals.map(|v| v * v).sum::<f64>().sqrt(),
                SliceScore::Linf => vals.fold(0.0, f64::max),
                SliceScore::NegInf => vals.fold(f64::INFINITY, f64::min),
                SliceScore::Random => rng.unit_f32() as f64,
            }
        })
        .collect()
}

/// A prunable unit: a coordinate or an input slice of some layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub layer: usize,
    pub index: usize,
    pub score: f64,
}

fn order(direction: Direction) -> impl Fn(&Candidate, &Candidate) -> Ordering {
    move |a, b| {
        let by_score = match direction {
            Direction::PruneLow => a.score.total_cmp(&b.score),
            Direction::PruneHigh => b.score.total_cmp(&a.score),
        };
        by_score
            .then(a.layer.cmp(&b.layer))
            .then(a.index.cmp(&b.index))
    }
}

/// Picks `round(fraction * candidates.len())` candidates to prune, capped
/// at `limit`. Returned in selection order.
pub fn select(
    candidates: &[Candidate],
    fraction: f64,
    direction: Direction,
    limit: usize,
) -> Vec<Candidate> {
    let k = prune_count(fraction, candidates.len()).min(limit);
    if k == 0 {
        debug!("selection of {} candidates rounds to zero", candidates.len());
        return Vec::new();
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(order(direction));
    sorted.truncate(k);
    sorted
}

struct LayerJob<'a> {
    slot: usize,
    criterion: Criterion,
    shape: &'a [usize],
}

/// Computes the next mask set from trained weights. Pruned coordinates of
/// `masks` stay pruned.
pub fn prune_step<T: Scalar>(
    net: &Network<T>,
    masks: &MaskSet,
    spec: &PruneSpec,
    rng: &mut RngStream,
) -> Result<MaskSet> {
    spec.validate()?;
    masks.check_against(net.arch())?;
    let mut next = masks.clone();
    next.iteration = masks.iteration + 1;

    let mut jobs = Vec::new();
    for (slot, p) in net.params().iter().enumerate() {
        if let Some(criterion) = spec.method.criterion_for(&net.arch().layers[p.layer]) {
            jobs.push(LayerJob {
                slot,
                criterion,
                shape: p.weight.shape(),
            });
        }
    }

    // Candidates with their group: 0 = unstructured, 1 = structured.
    let mut groups: [Vec<Candidate>; 2] = [Vec::new(), Vec::new()];
    for job in &jobs {
        let weights = net.params()[job.slot].weight.data();
        let mask = &masks.masks[job.slot];
        match job.criterion {
            Criterion::Unstructured(s) => {
                let scores = score_unstructured(weights, s, rng);
                let cands: Vec<Candidate> = scores
                    .into_iter()
                    .enumerate()
                    .filter(|&(i, _)| mask.is_kept(i))
                    .map(|(index, score)| Candidate {
                        layer: job.slot,
                        index,
                        score,
                    })
                    .collect();
                groups[0].extend(cands);
            }
            Criterion::Structured(s) => {
                let scores = score_structured(weights, job.shape, s, rng);
                let alive: Vec<Candidate> = scores
                    .into_iter()
                    .enumerate()
                    .filter(|&(c, _)| mask.slice_alive(c))
                    .map(|(index, score)| Candidate {
                        layer: job.slot,
                        index,
                        score,
                    })
                    .collect();
                if alive.len() <= 1 {
                    debug!("layer {} frozen with {} live slice(s)", job.slot, alive.len());
                    continue;
                }
                groups[1].extend(alive);
            }
        }
    }

    let mut chosen = Vec::new();
    match spec.scope {
        Scope::Local => {
            for job in &jobs {
                for (g, group) in groups.iter().enumerate() {
                    let cands: Vec<Candidate> =
                        group.iter().filter(|c| c.layer == job.slot).copied().collect();
                    if cands.is_empty() {
                        continue;
                    }
                    let limit = if g == 1 { cands.len() - 1 } else { cands.len() };
                    chosen.extend(
                        select(&cands, spec.fraction, spec.direction, limit)
                            .into_iter()
                            .map(|c| (g, c)),
                    );
                }
            }
        }
        Scope::Global => {
            for (g, group) in groups.iter().enumerate() {
                chosen.extend(global_select(group, g == 1, spec).into_iter().map(|c| (g, c)));
            }
        }
    }

    for (g, c) in chosen {
        let mask = &mut next.masks[c.layer];
        if g == 0 {
            mask.prune(c.index);
        } else {
            let idx: Vec<usize> = slice_indices(mask.shape(), c.index).collect();
            for i in idx {
                mask.prune(i);
            }
        }
    }
    Ok(next)
}

/// Pooled selection across layers. Structured pools never take a layer's
/// last live slice; the next-best candidate is taken instead.
fn global_select(group: &[Candidate], structured: bool, spec: &PruneSpec) -> Vec<Candidate> {
    if !structured {
        return select(group, spec.fraction, spec.direction, group.len());
    }
    let mut live: std::collections::BTreeMap<usize, usize> = Default::default();
    for c in group {
        *live.entry(c.layer).or_default() += 1;
    }
    let k = prune_count(spec.fraction, group.len()).min(group.len() - live.len());
    let mut sorted = group.to_vec();
    sorted.sort_by(order(spec.direction));
    let mut out = Vec::with_capacity(k);
    for c in sorted {
        if out.len() == k {
            break;
        }
        let n = live.get_mut(&c.layer).unwrap();
        if *n > 1 {
            *n -= 1;
            out.push(c);
        }
    }
    out
}

/// Fraction of a layer's input slices whose mask bits are all zero.
pub fn dead_slice_fraction(mask: &Mask) -> f64 {
    let n = mask.input_slices();
    let dead = (0..n).filter(|&c| !mask.slice_alive(c)).count();
    dead as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use crate::zoo;

    fn rng() -> RngStream {
        RngStream::new(3, StreamId::PruneRandom)
    }

    #[test]
    fn l1_scores_are_magnitudes() {
        let s = score_unstructured(&[-0.5f32, 0.1, 0.0], UnstructuredScore::L1, &mut rng());
        assert_eq!(s, vec![0.5, 0.10000000149011612, 0.0]);
    }

    #[test]
    fn slice_norms() {
        // shape (2, 1): one slice holding {1, -2}
        let w = [1.0f64, -2.0];
        let shape = [2, 1];
        let one = |s| score_structured(&w, &shape, s, &mut rng())[0];
        assert_eq!(one(SliceScore::L1), 3.0);
        assert!((one(SliceScore::L2) - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(one(SliceScore::Linf), 2.0);
        assert_eq!(one(SliceScore::NegInf), 1.0);
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(prune_count(0.2, 100), 20);
        assert_eq!(prune_count(0.2, 7), 1);
        assert_eq!(prune_count(0.5, 3), 2);
        assert_eq!(prune_count(0.2, 2), 0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let c = |index, score| Candidate {
            layer: 0,
            index,
            score,
        };
        let cands = [c(0, 1.0), c(1, 0.5), c(2, 0.5), c(3, 0.5), c(4, 2.0)];
        let picked: Vec<usize> = select(&cands, 0.4, Direction::PruneLow, 5)
            .iter()
            .map(|c| c.index)
            .collect();
        assert_eq!(picked, vec![1, 2]);
        let high: Vec<usize> = select(&cands, 0.4, Direction::PruneHigh, 5)
            .iter()
            .map(|c| c.index)
            .collect();
        assert_eq!(high, vec![4, 0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn hybrid_and_fc_only_dispatch() {
        let arch = zoo::lenet();
        let conv = &arch.layers[0];
        let fc = arch.layers.iter().rev().find(|l| l.is_prunable()).unwrap();
        assert_eq!(
            Method::Hybrid.criterion_for(conv),
            Some(Criterion::Structured(SliceScore::L1))
        );
        assert_eq!(
            Method::Hybrid.criterion_for(fc),
            Some(Criterion::Unstructured(UnstructuredScore::L1))
        );
        assert_eq!(Method::FcOnly.criterion_for(conv), None);
    }
}
