use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use super::FRAME_SECONDS;
use crate::error::{Error, Result};

/// Neighbor label used at utterance edges.
pub const SENTINEL: &str = "SIL";

/// Boundary times within this many frames of a grid point snap onto it.
const SNAP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRecord {
    pub utterance_id: String,
    pub onset: f64,
    pub offset: f64,
    pub phone: String,
    pub prev_phone: String,
    pub next_phone: String,
    pub speaker: String,
}

impl AlignmentRecord {
    /// Frame range covered by the record, see [`segment_frames`].
    pub fn frames(&self) -> Option<Range<usize>> {
        segment_frames(self.onset, self.offset)
    }
}

/// Records grouped by utterance, each group sorted by onset.
pub type Alignments = BTreeMap<String, Vec<AlignmentRecord>>;

fn snapped(x: f64, round: fn(f64) -> f64) -> usize {
    let frames = x / FRAME_SECONDS;
    let near = frames.round();
    (if (frames - near).abs() < SNAP { near } else { round(frames) }).max(0.0) as usize
}

/// Frames `ceil(onset / hop) .. floor(offset / hop)`, so that a boundary
/// frame is never attributed to two phones. `None` when that is empty.
pub fn segment_frames(onset: f64, offset: f64) -> Option<Range<usize>> {
    let (a, b) = (snapped(onset, f64::ceil), snapped(offset, f64::floor));
    (a < b).then_some(a..b)
}

/// Parses an alignment file.
///
/// Each non-empty line not starting with `#` holds seven whitespace
/// separated fields: `utterance_id onset_s offset_s phone prev_phone
/// next_phone speaker`. When `durations` is given, every utterance must be
/// listed there and records must end within it.
pub fn parse_alignments(text: &str, path: &Path, durations: Option<&HashMap<String, f64>>) -> Result<Alignments> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines_of: HashMap<(String, usize), usize> = HashMap::new();
    let mut out = Alignments::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(err(line, format!("expected 7 fields, found {}", fields.len())));
        }
        let time = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("{what} {s:?} is not a number")))
        };
        let (onset, offset) = (time(fields[1], "onset")?, time(fields[2], "offset")?);
        if onset < 0.0 {
            return Err(err(line, format!("negative onset {onset}")));
        }
        if offset <= onset {
            return Err(err(line, format!("negative or zero duration: onset {onset}, offset {offset}")));
        }
        let id = fields[0].to_string();
        if let Some(d) = durations {
            match d.get(&id) {
                None => return Err(err(line, format!("unknown utterance {id:?}"))),
                Some(&len) if offset > len + SNAP * FRAME_SECONDS => {
                    return Err(err(line, format!("offset {offset} exceeds utterance duration {len}")));
                }
                _ => {}
            }
        }
        let rec = AlignmentRecord {
            utterance_id: id.clone(),
            onset,
            offset,
            phone: fields[3].to_string(),
            prev_phone: fields[4].to_string(),
            next_phone: fields[5].to_string(),
            speaker: fields[6].to_string(),
        };
        let group = out.entry(id.clone()).or_default();
        lines_of.insert((id, group.len()), line);
        group.push(rec);
    }
    for (id, group) in out.iter_mut() {
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by(|&a, &b| group[a].onset.total_cmp(&group[b].onset).then(a.cmp(&b)));
        for w in order.windows(2) {
            let (prev, next) = (&group[w[0]], &group[w[1]]);
            if next.onset < prev.offset {
                let line = lines_of[&(id.clone(), w[0].max(w[1]))];
                return Err(err(
                    line,
                    format!(
                        "segment {}-{} overlaps {}-{} in utterance {id}",
                        next.onset, next.offset, prev.onset, prev.offset
                    ),
                ));
            }
        }
        let sorted = order.iter().map(|&i| group[i].clone()).collect();
        *group = sorted;
    }
    Ok(out)
}

pub fn load_alignments(path: &Path, durations: Option<&HashMap<String, f64>>) -> Result<Alignments> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignments(&text, path, durations)
}

pub fn write_alignments(path: &Path, alignments: &Alignments) -> Result<()> {
    let mut text = String::from("# utterance_id onset_s offset_s phone prev_phone next_phone speaker\n");
    for r in alignments.values().flatten() {
        writeln!(
            text,
            "{} {} {} {} {} {} {}",
            r.utterance_id, r.onset, r.offset, r.phone, r.prev_phone, r.next_phone, r.speaker
        )
        .expect("writing to a string");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Alignments> {
        parse_alignments(text, Path::new("items.txt"), None)
    }

    #[test]
    fn empty_and_single() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("# only a comment\n\n").unwrap().is_empty());
        let a = parse("u1 0.00 0.10 AA SIL SIL s1\n").unwrap();
        assert_eq!(a["u1"][0].frames(), Some(0..10));
    }

    #[test]
    fn three_line_snapshot() {
        let text = "# header\nu2 0.25 0.31 B A C spk2\nu2 0.10 0.25 A SIL B spk2\nu2 0.31 0.40 C B SIL spk2\n";
        let a = parse(text).unwrap();
        let recs = &a["u2"];
        let expected = [
            ("A", 0.10, 0.25, "SIL", "B", 10..25),
            ("B", 0.25, 0.31, "A", "C", 25..31),
            ("C", 0.31, 0.40, "B", "SIL", 31..40),
        ];
        assert_eq!(recs.len(), 3);
        for (r, (ph, on, off, prev, next, frames)) in recs.iter().zip(expected) {
            assert_eq!(r.utterance_id, "u2");
            assert_eq!(r.phone, ph);
            assert_eq!((r.onset, r.offset), (on, off));
            assert_eq!((r.prev_phone.as_str(), r.next_phone.as_str()), (prev, next));
            assert_eq!(r.speaker, "spk2");
            assert_eq!(r.frames(), Some(frames));
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let overlap = "u 0.0 0.2 A SIL B s\nu 0.1 0.3 B A SIL s\n";
        assert!(matches!(parse(overlap), Err(Error::Parse { line: 2, .. })));
        let negative = "# c\nu 0.3 0.2 A SIL B s\n";
        assert!(matches!(parse(negative), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("u 0.1 0.2 A\n"), Err(Error::Parse { line: 1, .. })));
        let durations = HashMap::from([("known".to_string(), 1.0)]);
        let unknown = parse_alignments("known 0 0.1 A SIL SIL s\nother 0 0.1 A SIL SIL s\n", Path::new("x"), Some(&durations));
        let e = unknown.unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(e.to_string().contains("other"));
    }

    #[test]
    fn frame_rounding() {
        assert_eq!(segment_frames(0.015, 0.049), Some(2..4));
        assert_eq!(segment_frames(0.012, 0.019), None);
        assert_eq!(segment_frames(0.3, 0.7), Some(30..70));
        // grid-aligned spans of one hop and any span of two hops keep a frame
        for k in 0..500 {
            let on = k as f64 * 0.0037;
            assert!(segment_frames(on, on + 2.0 * FRAME_SECONDS).is_some());
            let grid = k as f64 * FRAME_SECONDS;
            assert_eq!(segment_frames(grid, grid + FRAME_SECONDS), Some(k..k + 1));
        }
    }

    #[test]
    fn write_parse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        let a = parse("u 0.1 0.2 A SIL B s\nu 0.2 0.35 B A SIL s\nv 0 0.05 C SIL SIL t\n").unwrap();
        write_alignments(&p, &a).unwrap();
        assert_eq!(load_alignments(&p, None).unwrap(), a);
    }
}
