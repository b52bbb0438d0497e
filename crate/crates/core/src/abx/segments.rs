use std::collections::HashMap;

use super::distance::unit_frames;
use crate::corpus::Alignments;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames of one aligned phone token, rows scaled to unit length.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub utterance_id: String,
    pub start: usize,
    pub phone: String,
    pub prev: String,
    pub next: String,
    pub speaker: String,
    pub subset: String,
    pub dim: usize,
    pub frames: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Cuts every aligned phone out of its utterance's representation.
///
/// `subsets` maps utterance ids to subset labels (missing ids get `"all"`).
/// With `triphone`, each segment is widened to include its neighbors.
/// Segments without a whole frame are dropped with a warning; an aligned
/// utterance without a representation is an error naming every such id.
pub fn extract_segments(
    reps: &HashMap<String, Tensor<f32>>,
    alignments: &Alignments,
    subsets: &HashMap<String, String>,
    triphone: bool,
) -> Result<Vec<Segment>> {
    let missing: Vec<&str> = alignments
        .keys()
        .filter(|id| !reps.contains_key(*id))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "no representation for aligned utterance(s): {}",
            missing.join(", ")
        )));
    }
    let mut dim = None;
    let mut out = Vec::new();
    for (id, records) in alignments {
        let rep = &reps[id];
        let (frames, d) = rep
            .dims2()
            .ok_or_else(|| Error::invalid(format!("representation of {id} is not a matrix")))?;
        if *dim.get_or_insert(d) != d {
            return Err(Error::invalid(format!("representation of {id} has width {d}, others {}", dim.unwrap())));
        }
        for (k, r) in records.iter().enumerate() {
            let Some(mut range) = r.frames() else {
                log::warn!("{id}: segment {}-{} s holds no whole frame, dropped", r.onset, r.offset);
                continue;
            };
            if triphone {
                if let Some(p) = k.checked_sub(1).and_then(|j| records[j].frames()) {
                    range.start = range.start.min(p.start);
                }
                if let Some(n) = records.get(k + 1).and_then(|n| n.frames()) {
                    range.end = range.end.max(n.end);
                }
            }
            range.end = range.end.min(frames);
            if range.start >= range.end {
                log::warn!("{id}: segment {}-{} s lies past the last frame, dropped", r.onset, r.offset);
                continue;
            }
            let values = &rep.data()[range.start * d..range.end * d];
            let frames = unit_frames(values, d)
                .map_err(|_| Error::invalid(format!("{id}: zero frame inside segment at frame {}", range.start)))?;
            out.push(Segment {
                utterance_id: id.clone(),
                start: range.start,
                phone: r.phone.clone(),
                prev: r.prev_phone.clone(),
                next: r.next_phone.clone(),
                speaker: r.speaker.clone(),
                subset: subsets.get(id).cloned().unwrap_or_else(|| "all".into()),
                dim: d,
                frames,
            });
        }
    }
    Ok(out)
}
