//! Evaluation metrics: character/token error rate, speaker-dependent CER,
//! scale-invariant SNR and the joint separation/ASR loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sot::AttributedTranscript;

/// SI-SNR values are clamped to this magnitude so degenerate cases (exact
/// collinearity, zero projection) stay serializable.
pub const SI_SNR_CAP_DB: f64 = 200.0;

/// Edit counts from a Levenshtein alignment. Insertions are unbounded;
/// substitutions and deletions never exceed the reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
}

impl EditStats {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / |ref|`; infinity when the reference is empty but the
    /// hypothesis is not, `0.0` when both are empty.
    pub fn rate(&self) -> f64 {
        if self.reference_length == 0 {
            if self.edits() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.edits() as f64 / self.reference_length as f64
        }
    }

    fn accumulate(&mut self, other: &EditStats) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_length += other.reference_length;
    }
}

/// How raw text is split into scoring tokens. `Char` treats every
/// non-whitespace character as one token (the CJK convention behind CER),
/// `Whitespace` splits on runs of whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenizer {
    #[default]
    Char,
    Whitespace,
}

impl std::str::FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "char" => Ok(Tokenizer::Char),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(Error::invalid(format!("unknown tokenizer {other:?}"))),
        }
    }
}

pub fn tokenize(text: &str, mode: Tokenizer) -> Vec<String> {
    match mode {
        Tokenizer::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        Tokenizer::Whitespace => text.split_whitespace().map(String::from).collect(),
    }
}

/// Levenshtein alignment of `hyp` against `ref`, with the full
/// substitution/deletion/insertion breakdown. Ties during backtrace prefer
/// substitution, then deletion, then insertion.
pub fn cer<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditStats {
    let n = reference.len();
    let m = hyp.len();
    // dp[i][j] = edits aligning hyp[..j] to ref[..i].
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            dp[i][j] = (dp[i - 1][j - 1] + cost)
                .min(dp[i - 1][j] + 1)
                .min(dp[i][j - 1] + 1);
        }
    }
    let mut stats = EditStats { reference_length: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            if dp[i][j] == dp[i - 1][j - 1] + cost {
                stats.substitutions += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    stats
}

/// Per-speaker slice of an SD-CER report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeakerCer {
    pub speaker: String,
    #[serde(flatten)]
    pub stats: EditStats,
    pub cer: f64,
}

/// SD-CER report. `overall` is `sum(S+D+I) / sum(|ref|)` across speakers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdCerReport {
    pub per_speaker: Vec<SpeakerCer>,
    #[serde(flatten)]
    pub totals: EditStats,
    pub overall: f64,
}

/// Speaker-dependent CER: for every speaker id appearing in either
/// transcript, that speaker's reference and hypothesis utterances are each
/// concatenated chronologically and aligned. Speakers only present in the
/// hypothesis contribute pure insertions; speakers only present in the
/// reference contribute pure deletions. Matching is by speaker identity.
pub fn sd_cer(hyp: &AttributedTranscript, reference: &AttributedTranscript) -> Result<SdCerReport> {
    if reference.entries().iter().all(|e| e.tokens.is_empty()) {
        return Err(Error::semantic("SD-CER is undefined for an empty reference"));
    }
    let mut speakers: Vec<String> = reference
        .entries()
        .iter()
        .chain(hyp.entries())
        .map(|e| e.speaker.clone())
        .collect();
    speakers.sort();
    speakers.dedup();

    let mut per_speaker = Vec::with_capacity(speakers.len());
    let mut totals = EditStats::default();
    for speaker in speakers {
        let ref_stream = reference.speaker_token_stream(&speaker);
        let hyp_stream = hyp.speaker_token_stream(&speaker);
        let stats = cer(&hyp_stream, &ref_stream);
        totals.accumulate(&stats);
        per_speaker.push(SpeakerCer { speaker, cer: stats.rate(), stats });
    }
    let overall = totals.rate();
    Ok(SdCerReport { per_speaker, totals, overall })
}

/// Scale-invariant SNR in dB. Both signals are mean-removed, the estimate
/// is projected onto the source, and the ratio of projection to residual
/// energy is reported, clamped to ±[`SI_SNR_CAP_DB`].
pub fn si_snr(est: &[f64], src: &[f64]) -> Result<f64> {
    if est.len() != src.len() {
        return Err(Error::invalid(format!(
            "signal lengths differ: {} vs {}",
            est.len(),
            src.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::invalid("signals must be non-empty"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (me, ms) = (mean(est), mean(src));
    let mut dot = 0.0;
    let mut src_energy = 0.0;
    for (e, s) in est.iter().zip(src) {
        let (e, s) = (e - me, s - ms);
        dot += e * s;
        src_energy += s * s;
    }
    if src_energy == 0.0 {
        return Err(Error::invalid("source signal is identically zero"));
    }
    let alpha = dot / src_energy;
    // Residual accumulated per sample so exact collinearity cancels
    // instead of drowning in the energy sums.
    let mut target_energy = 0.0;
    let mut noise_energy = 0.0;
    for (e, s) in est.iter().zip(src) {
        let (e, s) = (e - me, s - ms);
        let t = alpha * s;
        target_energy += t * t;
        let r = e - t;
        noise_energy += r * r;
    }
    if target_energy == 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    if noise_energy == 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    let snr = 10.0 * (target_energy / noise_energy).log10();
    Ok(snr.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Interpolation weight for the joint loss; must lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
            return Err(Error::invalid(format!("lambda must be in [0, 1], got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

/// `lambda * l_sep + (1 - lambda) * l_asr`. By convention the separation
/// loss is the negative SI-SNR; the ASR loss is an externally supplied
/// scalar.
pub fn joint_loss(l_sep: f64, l_asr: f64, w: LossWeights) -> Result<f64> {
    if !l_sep.is_finite() || !l_asr.is_finite() {
        return Err(Error::invalid("loss terms must be finite"));
    }
    Ok(w.lambda * l_sep + (1.0 - w.lambda) * l_asr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sot::{AttributedTranscript, AttributedUtterance};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s, Tokenizer::Char)
    }

    /// Independent recursive memoized edit distance, the oracle the DP
    /// implementation is checked against.
    pub(crate) fn edit_distance_oracle<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
        fn go<T: PartialEq>(h: &[T], r: &[T], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
            if let Some(v) = memo[i][j] {
                return v;
            }
            let v = if i == r.len() {
                h.len() - j
            } else if j == h.len() {
                r.len() - i
            } else {
                let sub = go(h, r, i + 1, j + 1, memo) + usize::from(r[i] != h[j]);
                let del = go(h, r, i + 1, j, memo) + 1;
                let ins = go(h, r, i, j + 1, memo) + 1;
                sub.min(del).min(ins)
            };
            memo[i][j] = Some(v);
            v
        }
        let mut memo = vec![vec![None; hyp.len() + 1]; reference.len() + 1];
        go(hyp, reference, 0, 0, &mut memo)
    }

    #[test]
    fn cer_identical_is_zero() {
        let r = toks("0123456789");
        let stats = cer(&r, &r);
        assert_eq!(stats.edits(), 0);
        assert_eq!(stats.rate(), 0.0);
    }

    #[test]
    fn cer_single_substitution() {
        let r = toks("0123456789");
        let h = toks("0123x56789");
        let stats = cer(&h, &r);
        assert_eq!(stats.substitutions, 1);
        assert_eq!(stats.edits(), 1);
        assert!((stats.rate() - 0.10).abs() < 1e-15);
    }

    #[test]
    fn cer_empty_reference_is_flagged() {
        let stats = cer(&toks("abc"), &toks(""));
        assert_eq!(stats.insertions, 3);
        assert_eq!(stats.reference_length, 0);
        assert!(stats.rate().is_infinite());
        assert_eq!(cer(&toks(""), &toks("")).rate(), 0.0);
    }

    #[test]
    fn cer_matches_recursive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let len_r = rng.random_range(0..12);
            let len_h = rng.random_range(0..12);
            let r: Vec<u8> = (0..len_r).map(|_| rng.random_range(b'a'..b'e')).collect();
            let h: Vec<u8> = (0..len_h).map(|_| rng.random_range(b'a'..b'e')).collect();
            let stats = cer(&h, &r);
            assert_eq!(stats.edits(), edit_distance_oracle(&h, &r));
            assert!(stats.substitutions + stats.deletions <= r.len());
        }
    }

    fn transcript(entries: Vec<(&str, f64, f64, &str)>) -> AttributedTranscript {
        AttributedTranscript::new(
            entries
                .into_iter()
                .map(|(spk, start, end, text)| AttributedUtterance {
                    speaker: spk.to_string(),
                    start,
                    end,
                    tokens: toks(text),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sd_cer_identical_transcripts() {
        let r = transcript(vec![("A", 0.0, 1.0, "abcde"), ("B", 1.0, 2.0, "fghij")]);
        let report = sd_cer(&r, &r).unwrap();
        assert_eq!(report.overall, 0.0);
        assert!(report.per_speaker.iter().all(|s| s.cer == 0.0));
    }

    #[test]
    fn sd_cer_out_of_roster_attribution_doubles() {
        // Correct text, but both utterances land on speakers that do not
        // exist in the reference: every reference stream is deleted and
        // every hypothesis stream is inserted, so the rate is 2.0.
        let reference = transcript(vec![("A", 0.0, 1.0, "abcde"), ("B", 1.0, 2.0, "fghij")]);
        let hyp = transcript(vec![("C", 0.0, 1.0, "abcde"), ("D", 1.0, 2.0, "fghij")]);
        let report = sd_cer(&hyp, &reference).unwrap();
        assert_eq!(report.totals.deletions, 10);
        assert_eq!(report.totals.insertions, 10);
        assert_eq!(report.overall, 2.0);
    }

    #[test]
    fn sd_cer_single_substitution() {
        let reference = transcript(vec![("A", 0.0, 1.0, "01234567890123456789")]);
        let hyp = transcript(vec![("A", 0.0, 1.0, "0123456789012345678x")]);
        let report = sd_cer(&hyp, &reference).unwrap();
        assert!((report.overall - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sd_cer_empty_reference_is_an_error() {
        let reference = AttributedTranscript::new(vec![]).unwrap();
        let hyp = transcript(vec![("A", 0.0, 1.0, "abc")]);
        assert!(matches!(sd_cer(&hyp, &reference), Err(Error::Semantic(_))));
    }

    #[test]
    fn sd_cer_single_speaker_equals_cer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let r_text: String = (0..rng.random_range(1..20)).map(|_| rng.random_range('a'..'e')).collect();
            let h_text: String = (0..rng.random_range(0..20)).map(|_| rng.random_range('a'..'e')).collect();
            let reference = transcript(vec![("A", 0.0, 1.0, &r_text)]);
            let hyp = transcript(vec![("A", 0.0, 1.0, &h_text)]);
            let report = sd_cer(&hyp, &reference).unwrap();
            let direct = cer(&toks(&h_text), &toks(&r_text));
            assert_eq!(report.overall, direct.rate());
        }
    }

    #[test]
    fn sd_cer_concatenates_chronologically() {
        // Utterances given out of order still form the chronological stream.
        let reference = transcript(vec![("A", 2.0, 3.0, "cd"), ("A", 0.0, 1.0, "ab")]);
        let hyp = transcript(vec![("A", 0.0, 1.0, "ab"), ("A", 2.0, 3.0, "cd")]);
        let report = sd_cer(&hyp, &reference).unwrap();
        assert_eq!(report.overall, 0.0);
    }

    #[test]
    fn si_snr_collinear_hits_positive_cap() {
        let src: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let est: Vec<f64> = src.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_snr(&est, &src).unwrap(), SI_SNR_CAP_DB);
    }

    #[test]
    fn si_snr_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let est: Vec<f64> = src.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let base = si_snr(&est, &src).unwrap();
        for alpha in [0.1, 1.0, 7.3, -2.0] {
            let scaled: Vec<f64> = est.iter().map(|v| alpha * v).collect();
            let snr = si_snr(&scaled, &src).unwrap();
            assert!((snr - base).abs() <= 1e-9, "alpha {alpha}: {snr} vs {base}");
        }
    }

    #[test]
    fn si_snr_orthogonal_hits_negative_cap() {
        let src = [1.0, -1.0, 1.0, -1.0];
        let est = [1.0, 1.0, -1.0, -1.0];
        assert_eq!(si_snr(&est, &src).unwrap(), -SI_SNR_CAP_DB);
    }

    #[test]
    fn si_snr_rejects_bad_inputs() {
        assert!(si_snr(&[1.0], &[1.0, 2.0]).is_err());
        assert!(si_snr(&[], &[]).is_err());
        assert!(si_snr(&[1.0, 2.0], &[0.5, 0.5]).is_err()); // zero after mean removal
    }

    #[test]
    fn joint_loss_endpoints_and_midpoint() {
        assert_eq!(joint_loss(4.0, 2.0, LossWeights::new(1.0).unwrap()).unwrap(), 4.0);
        assert_eq!(joint_loss(4.0, 2.0, LossWeights::new(0.0).unwrap()).unwrap(), 2.0);
        assert_eq!(joint_loss(4.0, 2.0, LossWeights::new(0.5).unwrap()).unwrap(), 3.0);
        assert!(joint_loss(f64::NAN, 0.0, LossWeights::new(0.5).unwrap()).is_err());
        assert!(LossWeights::new(1.5).is_err());
    }

    #[test]
    fn tokenizer_modes() {
        assert_eq!(tokenize("ab c", Tokenizer::Char), vec!["a", "b", "c"]);
        assert_eq!(tokenize("ab c", Tokenizer::Whitespace), vec!["ab", "c"]);
    }

    proptest! {
        #[test]
        fn edit_distance_triangle_inequality(
            a in proptest::collection::vec(0u8..4, 0..10),
            b in proptest::collection::vec(0u8..4, 0..10),
            c in proptest::collection::vec(0u8..4, 0..10),
        ) {
            let ab = cer(&a, &b).edits();
            let bc = cer(&b, &c).edits();
            let ac = cer(&a, &c).edits();
            prop_assert!(ac <= ab + bc);
        }

        #[test]
        fn cer_of_identity_is_zero(x in proptest::collection::vec(0u8..6, 0..20)) {
            prop_assert_eq!(cer(&x, &x).edits(), 0);
        }

        #[test]
        fn joint_loss_is_affine(l1 in -10.0f64..10.0, l2 in -10.0f64..10.0, lambda in 0.0f64..1.0) {
            let w = LossWeights::new(lambda).unwrap();
            let a = joint_loss(l1, 0.0, w).unwrap();
            let b = joint_loss(0.0, l2, w).unwrap();
            let both = joint_loss(l1, l2, w).unwrap();
            prop_assert!((both - (a + b)).abs() < 1e-12);
        }
    }
}
