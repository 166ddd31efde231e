//! Serialized-output-training plumbing: utterances, `<sc>`-separated
//! hypotheses, the frame-level alignment of diarization output to SOT
//! segments, minimum-length filtering and the RTTM/JSON/CTM file formats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One diarization or transcription segment. `tokens` may be empty for
/// pure diarization segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, start: f64, end: f64, tokens: Vec<String>) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() || start < 0.0 {
            return Err(Error::invalid(format!("invalid utterance times [{start}, {end}]")));
        }
        if end <= start {
            return Err(Error::invalid(format!("utterance end {end} must exceed start {start}")));
        }
        Ok(Self { speaker: speaker.into(), start, end, tokens })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Ordered `<sc>`-delimited token segments of one SOT hypothesis. No
/// segment is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotHypothesis {
    pub segments: Vec<Vec<String>>,
}

impl SotHypothesis {
    pub fn new(segments: Vec<Vec<String>>) -> Result<Self> {
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("SOT segments must be non-empty"));
        }
        Ok(Self { segments })
    }

    pub fn empty() -> Self {
        Self { segments: Vec::new() }
    }

    pub fn token_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Plain-text form: tokens joined by spaces with a literal `<sc>`
    /// between segments.
    pub fn to_sc_text(&self) -> String {
        self.segments
            .iter()
            .map(|seg| seg.join(" "))
            .collect::<Vec<_>>()
            .join(" <sc> ")
    }

    /// Parses the plain-text form. `line_no` is used for error reporting.
    pub fn from_sc_text(text: &str, line_no: usize) -> Result<Self> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Ok(Self::empty());
        }
        let mut segments = vec![Vec::new()];
        for tok in tokens {
            if tok == "<sc>" {
                segments.push(Vec::new());
            } else {
                segments.last_mut().unwrap().push(tok.to_string());
            }
        }
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::parse(line_no, "empty SOT segment around a <sc> separator"));
        }
        Ok(Self { segments })
    }
}

/// Parses a hypothesis file in the plain-text `<sc>` format, one
/// hypothesis per non-empty line.
pub fn parse_hyp_sc_text(text: &str) -> Result<Vec<SotHypothesis>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(SotHypothesis::from_sc_text(line, i + 1)?);
    }
    Ok(out)
}

/// Parses a hypothesis file in JSON-lines form: one
/// `{"segments": [["tok", ...], ...]}` object per line.
pub fn parse_hyp_jsonl(text: &str) -> Result<Vec<SotHypothesis>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let hyp: SotHypothesis = serde_json::from_str(line)
            .map_err(|e| Error::parse(i + 1, format!("bad hypothesis JSON: {e}")))?;
        out.push(SotHypothesis::new(hyp.segments).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// One speaker-attributed utterance of a final transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedUtterance {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
    pub tokens: Vec<String>,
}

/// A speaker-attributed transcript; entries are sorted by start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedTranscript {
    entries: Vec<AttributedUtterance>,
}

impl AttributedTranscript {
    pub fn new(mut entries: Vec<AttributedUtterance>) -> Result<Self> {
        if entries.iter().any(|e| !e.start.is_finite() || !e.end.is_finite() || e.end <= e.start) {
            return Err(Error::invalid("attributed utterance has invalid times"));
        }
        entries.sort_by(|a, b| {
            a.start
                .partial_cmp(&b.start)
                .unwrap()
                .then_with(|| a.end.partial_cmp(&b.end).unwrap())
                .then_with(|| a.speaker.cmp(&b.speaker))
        });
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[AttributedUtterance] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Chronological concatenation of one speaker's tokens.
    pub fn speaker_token_stream(&self, speaker: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.speaker == speaker)
            .flat_map(|e| e.tokens.iter().cloned())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: AttributedTranscript = serde_json::from_str(text)?;
        Self::new(t.entries)
    }

    /// CTM-like text: one line per token,
    /// `<file> 1 <tbeg> <tdur> <token> <speaker>`, with the utterance span
    /// divided evenly across its tokens.
    pub fn to_ctm(&self, file_id: &str) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let n = e.tokens.len().max(1);
            let step = (e.end - e.start) / n as f64;
            for (i, tok) in e.tokens.iter().enumerate() {
                let tbeg = e.start + i as f64 * step;
                out.push_str(&format!("{file_id} 1 {tbeg:.3} {step:.3} {tok} {}\n", e.speaker));
            }
        }
        out
    }
}

/// Concatenates utterances in start-time order into an SOT hypothesis.
/// Ties on start time break by speaker id; utterances without tokens are
/// skipped (they carry no transcription).
pub fn serialize_sot(utterances: &[Utterance]) -> SotHypothesis {
    let mut sorted: Vec<&Utterance> = utterances.iter().filter(|u| !u.tokens.is_empty()).collect();
    sorted.sort_by(|a, b| {
        a.start
            .partial_cmp(&b.start)
            .unwrap()
            .then_with(|| a.speaker.cmp(&b.speaker))
            .then_with(|| a.end.partial_cmp(&b.end).unwrap())
    });
    SotHypothesis { segments: sorted.into_iter().map(|u| u.tokens.clone()).collect() }
}

fn chronological(mut utts: Vec<Utterance>) -> Vec<Utterance> {
    utts.sort_by(|a, b| {
        a.start
            .partial_cmp(&b.start)
            .unwrap()
            .then_with(|| a.end.partial_cmp(&b.end).unwrap())
            .then_with(|| a.speaker.cmp(&b.speaker))
    });
    utts
}

/// Frame-level alignment of diarization utterances to SOT segments.
///
/// With `N̂ = |diar|` and `N = |segments|`: equal counts pair in
/// chronological order; surplus diarization utterances are dropped keeping
/// the `N` longest (ties: earlier start); surplus hypothesis segments are
/// dropped keeping the `N̂` with the most tokens (ties: earlier segment,
/// emission order standing in for chronology). Each kept pair takes its
/// speaker and times from the diarization side and its tokens from the
/// hypothesis side.
pub fn fd_sot_align(diar: &[Utterance], hyp: &SotHypothesis) -> Result<AttributedTranscript> {
    let n_hat = diar.len();
    let n = hyp.segments.len();
    let kept = n_hat.min(n);

    let diar_kept: Vec<Utterance> = if n_hat > n {
        let mut idx: Vec<usize> = (0..n_hat).collect();
        idx.sort_by(|&a, &b| {
            diar[b]
                .duration()
                .partial_cmp(&diar[a].duration())
                .unwrap()
                .then_with(|| diar[a].start.partial_cmp(&diar[b].start).unwrap())
                .then_with(|| diar[a].speaker.cmp(&diar[b].speaker))
        });
        chronological(idx[..kept].iter().map(|&i| diar[i].clone()).collect())
    } else {
        chronological(diar.to_vec())
    };

    let seg_kept: Vec<&Vec<String>> = if n < n_hat || n == n_hat {
        hyp.segments.iter().collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            hyp.segments[b]
                .len()
                .cmp(&hyp.segments[a].len())
                .then_with(|| a.cmp(&b))
        });
        let mut keep: Vec<usize> = idx[..kept].to_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| &hyp.segments[i]).collect()
    };

    let entries = diar_kept
        .into_iter()
        .zip(seg_kept)
        .map(|(u, seg)| AttributedUtterance {
            speaker: u.speaker,
            start: u.start,
            end: u.end,
            tokens: seg.clone(),
        })
        .collect();
    AttributedTranscript::new(entries)
}

/// Keeps utterances whose duration is at least `min_len` seconds
/// (inclusive), preserving order.
pub fn filter_min_length(diar: &[Utterance], min_len: f64) -> Result<Vec<Utterance>> {
    if !min_len.is_finite() || min_len < 0.0 {
        return Err(Error::invalid(format!("minimum length must be >= 0, got {min_len}")));
    }
    Ok(diar.iter().filter(|u| u.duration() >= min_len).cloned().collect())
}

/// Parses RTTM `SPEAKER` records:
/// `SPEAKER <file> <chan> <tbeg> <tdur> <NA> <NA> <speaker> <NA> <NA>`.
/// Blank lines are skipped; anything else malformed is an error carrying
/// its 1-based line number.
pub fn parse_rttm(text: &str) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::parse(line_no, format!("expected 10 RTTM fields, got {}", fields.len())));
        }
        if fields[0] != "SPEAKER" {
            return Err(Error::parse(line_no, format!("expected SPEAKER record, got {:?}", fields[0])));
        }
        let tbeg: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad onset {:?}", fields[3])))?;
        let tdur: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad duration {:?}", fields[4])))?;
        let utt = Utterance::new(fields[7], tbeg, tbeg + tdur, Vec::new())
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        out.push(utt);
    }
    Ok(out)
}

/// Emits RTTM with times at 6 decimal places. Speaker ids must be free of
/// whitespace so the output stays parseable.
pub fn emit_rttm(utterances: &[Utterance], file_id: &str) -> Result<String> {
    if file_id.contains(char::is_whitespace) || file_id.is_empty() {
        return Err(Error::invalid("RTTM file id must be non-empty and whitespace-free"));
    }
    let mut out = String::new();
    for u in utterances {
        if u.speaker.contains(char::is_whitespace) || u.speaker.is_empty() {
            return Err(Error::invalid(format!("speaker id {:?} not representable in RTTM", u.speaker)));
        }
        out.push_str(&format!(
            "SPEAKER {file_id} 1 {:.6} {:.6} <NA> <NA> {} <NA> <NA>\n",
            u.start,
            u.duration(),
            u.speaker
        ));
    }
    Ok(out)
}
