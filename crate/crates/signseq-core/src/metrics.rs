//! Corpus- and sentence-level translation metrics.
//!
//! BLEU-1..4 with clipped counts and brevity penalty, ROUGE-L F1 over the
//! longest common subsequence, METEOR with exact unigram matching and the
//! fragmentation penalty, and the stop-word-filtered unique-word
//! diversity table. Metric tokenization is whitespace splitting with case
//! preserved; scores are reported in percent with the exception of
//! [`meteor`], whose score is the raw fraction in [0, 1].

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Whitespace tokenization used by every metric.
pub fn tokenize(sentence: &str) -> Vec<&str> {
    sentence.split_whitespace().collect()
}

// ---------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------

pub const BLEU_MAX_N: usize = 4;

/// Pooled n-gram match statistics for BLEU.
///
/// Pairs pool by summation, so corpus BLEU over any subset of sentence
/// pairs is the score of the summed stats.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    /// Per n in 1..=4: match count clipped by reference occurrences.
    pub clipped: [u64; BLEU_MAX_N],
    /// Per n in 1..=4: total candidate n-grams.
    pub total: [u64; BLEU_MAX_N],
    /// Summed reference length r.
    pub ref_len: u64,
    /// Summed candidate length c.
    pub cand_len: u64,
}

impl BleuStats {
    /// Count one candidate/reference pair.
    pub fn from_pair(candidate: &[&str], reference: &[&str]) -> BleuStats {
        let mut stats = BleuStats {
            ref_len: reference.len() as u64,
            cand_len: candidate.len() as u64,
            ..BleuStats::default()
        };
        for n in 1..=BLEU_MAX_N {
            if candidate.len() < n {
                break;
            }
            let mut ref_counts: HashMap<&[&str], u64> = HashMap::new();
            if reference.len() >= n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_insert(0) += 1;
                }
            }
            let mut cand_counts: HashMap<&[&str], u64> = HashMap::new();
            for gram in candidate.windows(n) {
                *cand_counts.entry(gram).or_insert(0) += 1;
            }
            stats.total[n - 1] = (candidate.len() + 1 - n) as u64;
            stats.clipped[n - 1] = cand_counts
                .iter()
                .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..BLEU_MAX_N {
            self.clipped[n] += other.clipped[n];
            self.total[n] += other.total[n];
        }
        self.ref_len += other.ref_len;
        self.cand_len += other.cand_len;
    }

    /// min(1, exp(1 - r/c)).
    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// BLEU-n in percent: BP * exp(mean of ln p_k for k <= n).
    ///
    /// Any zero precision yields 0; `smoothing` adds one to the clipped
    /// and total counts of every order above unigram instead.
    pub fn score(&self, n: usize, smoothing: bool) -> f64 {
        assert!((1..=BLEU_MAX_N).contains(&n));
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            let (mut clipped, mut total) = (self.clipped[k] as f64, self.total[k] as f64);
            if smoothing && k > 0 {
                clipped += 1.0;
                total += 1.0;
            }
            if clipped == 0.0 || total == 0.0 {
                return 0.0;
            }
            log_sum += (clipped / total).ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / n as f64).exp()
    }
}

/// Corpus BLEU-1..4 (percent), counts pooled over all pairs before division.
pub fn bleu(candidates: &[Vec<&str>], references: &[Vec<&str>], max_n: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Data("bleu: empty candidate list".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "bleu: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut pooled = BleuStats::default();
    for (cand, reference) in candidates.iter().zip(references) {
        pooled.merge(&BleuStats::from_pair(cand, reference));
    }
    Ok((1..=max_n).map(|n| pooled.score(n, false)).collect())
}

/// Single-pair BLEU-4 in percent.
pub fn sentence_bleu4(candidate: &[&str], reference: &[&str]) -> f64 {
    BleuStats::from_pair(candidate, reference).score(BLEU_MAX_N, false)
}

// ---------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------

/// Longest common subsequence length.
pub fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &wa in a {
        for (j, &wb) in b.iter().enumerate() {
            cur[j + 1] = if wa == wb {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L balanced F1 in percent.
pub fn rouge_l(candidate: &[&str], reference: &[&str]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Data("rouge_l: empty reference".into()));
    }
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    Ok(100.0 * 2.0 * p * r / (p + r))
}

// ---------------------------------------------------------------------
// METEOR
// ---------------------------------------------------------------------

/// METEOR components for one pair.
///
/// Exact surface unigram matching; each reference unigram may be matched
/// at most once, so `matched <= min(cand_unigrams, ref_unigrams)`. The
/// chunk count is the fewest chunks over all maximum matchings. A perfect
/// three-word match scores 0.98148 (F = 1, penalty 0.5 * (1/3)^3).
#[derive(Debug, Clone, PartialEq)]
pub struct MeteorStats {
    pub matched: usize,
    pub cand_unigrams: usize,
    pub ref_unigrams: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    /// Final score in [0, 1].
    pub score: f64,
}

/// METEOR with exact unigram matching.
pub fn meteor(candidate: &[&str], reference: &[&str]) -> Result<MeteorStats> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Data("meteor: empty sentence".into()));
    }
    let matched = matched_unigrams(candidate, reference);
    let (w_t, w_r) = (candidate.len(), reference.len());
    if matched == 0 {
        return Ok(MeteorStats {
            matched,
            cand_unigrams: w_t,
            ref_unigrams: w_r,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
            score: 0.0,
        });
    }
    let chunks = min_chunks(candidate, reference);
    let p = matched as f64 / w_t as f64;
    let r = matched as f64 / w_r as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matched as f64).powi(3);
    Ok(MeteorStats {
        matched,
        cand_unigrams: w_t,
        ref_unigrams: w_r,
        chunks,
        precision: p,
        recall: r,
        fmean: f,
        penalty,
        score: f * (1.0 - penalty),
    })
}

fn matched_unigrams(candidate: &[&str], reference: &[&str]) -> usize {
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for &w in reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for &w in candidate {
        *cand_counts.entry(w).or_insert(0) += 1;
    }
    cand_counts
        .iter()
        .map(|(w, &c)| c.min(ref_counts.get(w).copied().unwrap_or(0)))
        .sum()
}

/// Fewest unigram chunks over all maximum matchings.
///
/// Branch-and-bound over candidate positions in order, preferring
/// reference positions that extend the current chunk. Exponential in the
/// number of duplicated words in the worst case; sentences here are short.
fn min_chunks(candidate: &[&str], reference: &[&str]) -> usize {
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for &w in reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for &w in candidate {
        *cand_counts.entry(w).or_insert(0) += 1;
    }
    // how many occurrences of each word must be matched
    let need: HashMap<&str, usize> = cand_counts
        .iter()
        .filter_map(|(&w, &c)| {
            let k = c.min(ref_counts.get(w).copied().unwrap_or(0));
            (k > 0).then_some((w, k))
        })
        .collect();
    let total_matches: usize = need.values().sum();
    if total_matches == 0 {
        return 0;
    }

    // candidate occurrences of matchable words remaining at or after each position
    let mut future: Vec<HashMap<&str, usize>> = vec![HashMap::new(); candidate.len() + 1];
    for i in (0..candidate.len()).rev() {
        future[i] = future[i + 1].clone();
        if need.contains_key(candidate[i]) {
            *future[i].entry(candidate[i]).or_insert(0) += 1;
        }
    }

    struct Search<'a> {
        candidate: &'a [&'a str],
        reference: &'a [&'a str],
        future: Vec<HashMap<&'a str, usize>>,
        best: usize,
    }

    impl<'a> Search<'a> {
        fn run(
            &mut self,
            pos: usize,
            need: &mut HashMap<&'a str, usize>,
            ref_used: &mut Vec<bool>,
            prev: Option<(usize, usize)>,
            chunks: usize,
            remaining: usize,
        ) {
            if chunks >= self.best {
                return;
            }
            if remaining == 0 {
                self.best = chunks;
                return;
            }
            if pos >= self.candidate.len() {
                return;
            }
            let word = self.candidate[pos];
            let needed = need.get(word).copied().unwrap_or(0);
            if needed > 0 {
                // reference positions for this word, chunk-extending first
                let extend = prev.and_then(|(pc, pr)| {
                    (pc + 1 == pos
                        && pr + 1 < self.reference.len()
                        && !ref_used[pr + 1]
                        && self.reference[pr + 1] == word)
                        .then_some(pr + 1)
                });
                let mut options: Vec<usize> = Vec::new();
                if let Some(j) = extend {
                    options.push(j);
                }
                for (j, &rw) in self.reference.iter().enumerate() {
                    if rw == word && !ref_used[j] && Some(j) != extend {
                        options.push(j);
                    }
                }
                for j in options {
                    let new_chunk = match prev {
                        Some((pc, pr)) => !(pc + 1 == pos && pr + 1 == j),
                        None => true,
                    };
                    *need.get_mut(word).unwrap() -= 1;
                    ref_used[j] = true;
                    self.run(
                        pos + 1,
                        need,
                        ref_used,
                        Some((pos, j)),
                        chunks + usize::from(new_chunk),
                        remaining - 1,
                    );
                    ref_used[j] = false;
                    *need.get_mut(word).unwrap() += 1;
                }
            }
            // skip this position if enough later occurrences remain
            let avail_after = self.future[pos + 1].get(word).copied().unwrap_or(0);
            if needed == 0 || avail_after >= needed {
                self.run(pos + 1, need, ref_used, prev, chunks, remaining);
            }
        }
    }

    let mut search = Search {
        candidate,
        reference,
        future,
        best: total_matches + 1,
    };
    let mut need = need;
    let mut ref_used = vec![false; reference.len()];
    search.run(0, &mut need, &mut ref_used, None, 0, total_matches);
    search.best
}

// ---------------------------------------------------------------------
// Word diversity
// ---------------------------------------------------------------------

/// Distinct non-stop-word tokens whose corpus frequency strictly exceeds
/// each threshold. Thresholds must be sorted ascending.
pub fn unique_word_counts(
    sentences: &[Vec<&str>],
    stopwords: &[&str],
    thresholds: &[u64],
) -> Result<Vec<usize>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Data("unique_word_counts: thresholds not ascending".into()));
    }
    let stop: std::collections::HashSet<&str> = stopwords.iter().copied().collect();
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for &w in sentence {
            if !stop.contains(w) {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    Ok(thresholds
        .iter()
        .map(|&t| freq.values().filter(|&&f| f > t).count())
        .collect())
}

pub const DIVERSITY_THRESHOLDS: [u64; 6] = [0, 1, 2, 3, 5, 10];

// ---------------------------------------------------------------------
// Corpus report
// ---------------------------------------------------------------------

/// Per-system corpus scores, percent convention, two-decimal formatting.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub system: String,
    /// BLEU-1..4.
    pub bleu: [f64; BLEU_MAX_N],
    pub rouge_l: f64,
    pub meteor: f64,
    pub sentence_bleu4: Vec<f64>,
}

/// Evaluate hypothesis lines against reference lines.
///
/// BLEU pools counts over the corpus; ROUGE-L and METEOR are means of
/// sentence scores.
pub fn evaluate_lines(
    system: &str,
    hypotheses: &[String],
    references: &[String],
) -> Result<MetricReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "evaluate: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Data("evaluate: empty corpus".into()));
    }
    let cands: Vec<Vec<&str>> = hypotheses.iter().map(|s| tokenize(s)).collect();
    let refs: Vec<Vec<&str>> = references.iter().map(|s| tokenize(s)).collect();

    let bleu_scores = bleu(&cands, &refs, BLEU_MAX_N)?;
    let mut rouge_sum = 0.0;
    let mut meteor_sum = 0.0;
    let mut sentence_bleu = Vec::with_capacity(cands.len());
    for (cand, reference) in cands.iter().zip(&refs) {
        rouge_sum += rouge_l(cand, reference)?;
        if cand.is_empty() {
            // empty hypothesis scores zero, meteor requires nonempty input
        } else {
            meteor_sum += meteor(cand, reference)?.score;
        }
        sentence_bleu.push(sentence_bleu4(cand, reference));
    }
    let n = cands.len() as f64;
    Ok(MetricReport {
        system: system.to_string(),
        bleu: [bleu_scores[0], bleu_scores[1], bleu_scores[2], bleu_scores[3]],
        rouge_l: rouge_sum / n,
        meteor: 100.0 * meteor_sum / n,
        sentence_bleu4: sentence_bleu,
    })
}

impl MetricReport {
    /// Human-readable table, two decimals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("system: {}\n", self.system));
        out.push_str("metric    score\n");
        for (name, value) in self.rows() {
            out.push_str(&format!("{name:<9} {value:>6.2}\n"));
        }
        out
    }

    /// Machine-readable key=value lines.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("system={}\n", self.system));
        for (name, value) in self.rows() {
            out.push_str(&format!("{name}={value:.2}\n"));
        }
        let joined: Vec<String> = self.sentence_bleu4.iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&format!("sentence_bleu4={}\n", joined.join(",")));
        out
    }

    fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("bleu1", self.bleu[0]),
            ("bleu2", self.bleu[1]),
            ("bleu3", self.bleu[2]),
            ("bleu4", self.bleu[3]),
            ("rouge_l", self.rouge_l),
            ("meteor", self.meteor),
        ]
    }
}
