//! Paired bootstrap resampling over sentence-level scores.
//!
//! Test sentences are drawn with replacement; both systems are scored on
//! identical index multisets and the fraction of resamples in which system
//! A strictly beats system B is its confidence. The comparison statistic is
//! pooled corpus BLEU-4 recomputed per resample; per-pair counts are
//! precomputed so a resample costs one pass of stat summation.

use crate::error::{Error, Result};
use crate::metrics::{tokenize, BleuStats, BLEU_MAX_N};
use crate::rng::XorShiftStar;

/// One system's hypotheses aligned to a shared reference list.
#[derive(Debug, Clone)]
pub struct SystemOutput {
    pub name: String,
    pub hypotheses: Vec<String>,
}

impl SystemOutput {
    pub fn new(name: impl Into<String>, hypotheses: Vec<String>) -> Self {
        SystemOutput { name: name.into(), hypotheses }
    }
}

/// Confidence table for "system A better than system B".
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub system_a: String,
    pub system_b: String,
    /// Full-corpus BLEU-4 difference, A minus B.
    pub delta: f64,
    /// Per subset size: fraction of resamples where A strictly wins.
    pub confidences: Vec<(usize, f64)>,
    pub samples: usize,
    pub seed: u64,
}

pub const DEFAULT_SIZES: [usize; 3] = [250, 400, 600];
pub const DEFAULT_SAMPLES: usize = 1000;

/// Index multisets for one subset size, deterministic under the seed.
///
/// Sample j draws from its own stream derived from (seed, j), so results
/// do not depend on evaluation order.
pub fn make_subsets(
    corpus_size: usize,
    subset_size: usize,
    samples: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    assert!(corpus_size >= 1);
    (0..samples)
        .map(|j| {
            let mut rng = XorShiftStar::derive(seed, j as u64);
            (0..subset_size).map(|_| rng.next_index(corpus_size)).collect()
        })
        .collect()
}

/// Paired bootstrap comparison of two systems on a shared reference list.
///
/// Ties count as not-better, so a system compared to itself has
/// confidence 0 at every size.
pub fn paired_bootstrap(
    system_a: &SystemOutput,
    system_b: &SystemOutput,
    references: &[String],
    sizes: &[usize],
    samples: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    let n = references.len();
    if n == 0 {
        return Err(Error::Data("paired_bootstrap: empty reference list".into()));
    }
    if system_a.hypotheses.len() != n || system_b.hypotheses.len() != n {
        return Err(Error::Data(format!(
            "paired_bootstrap: misaligned outputs ({} / {} hypotheses vs {} references)",
            system_a.hypotheses.len(),
            system_b.hypotheses.len(),
            n
        )));
    }
    if samples == 0 {
        return Err(Error::Data("paired_bootstrap: sample count must be positive".into()));
    }

    let stats_a = pair_stats(&system_a.hypotheses, references);
    let stats_b = pair_stats(&system_b.hypotheses, references);

    let delta = corpus_bleu4(&stats_a, None) - corpus_bleu4(&stats_b, None);

    let mut confidences = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut wins = 0usize;
        for j in 0..samples {
            // size-keyed stream so each (size, sample) pair is independent
            let stream = (size as u64) << 32 | j as u64;
            let mut rng = XorShiftStar::derive(seed, stream);
            let mut pooled_a = BleuStats::default();
            let mut pooled_b = BleuStats::default();
            for _ in 0..size {
                let idx = rng.next_index(n);
                pooled_a.merge(&stats_a[idx]);
                pooled_b.merge(&stats_b[idx]);
            }
            if pooled_a.score(BLEU_MAX_N, false) > pooled_b.score(BLEU_MAX_N, false) {
                wins += 1;
            }
        }
        confidences.push((size, wins as f64 / samples as f64));
    }

    Ok(ComparisonReport {
        system_a: system_a.name.clone(),
        system_b: system_b.name.clone(),
        delta,
        confidences,
        samples,
        seed,
    })
}

fn pair_stats(hypotheses: &[String], references: &[String]) -> Vec<BleuStats> {
    hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::from_pair(&tokenize(h), &tokenize(r)))
        .collect()
}

fn corpus_bleu4(stats: &[BleuStats], subset: Option<&[usize]>) -> f64 {
    let mut pooled = BleuStats::default();
    match subset {
        Some(indices) => {
            for &i in indices {
                pooled.merge(&stats[i]);
            }
        }
        None => {
            for s in stats {
                pooled.merge(s);
            }
        }
    }
    pooled.score(BLEU_MAX_N, false)
}

impl ComparisonReport {
    /// Rows = claim, columns = delta and one confidence per subset size.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("claim");
        out.push_str(&format!("{:>10}", "delta"));
        for (size, _) in &self.confidences {
            out.push_str(&format!("{size:>10}"));
        }
        out.push('\n');
        out.push_str(&format!("{} better than {}", self.system_a, self.system_b));
        out.push_str(&format!("{:>10.2}", self.delta));
        for (_, conf) in &self.confidences {
            out.push_str(&format!("{:>9.1}%", 100.0 * conf));
        }
        out.push('\n');
        out
    }

    pub fn key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("system_a={}\n", self.system_a));
        out.push_str(&format!("system_b={}\n", self.system_b));
        out.push_str(&format!("delta={:.4}\n", self.delta));
        out.push_str(&format!("samples={}\n", self.samples));
        out.push_str(&format!("seed={}\n", self.seed));
        for (size, conf) in &self.confidences {
            out.push_str(&format!("confidence.{size}={:.4}\n", conf));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn self_comparison_confidence_zero() {
        let refs = lines(&["a b c d", "e f g h", "i j k l"]);
        let sys = SystemOutput::new("same", refs.clone());
        let report = paired_bootstrap(&sys, &sys, &refs, &[5, 10], 200, 7).unwrap();
        for (_, conf) in report.confidences {
            assert_eq!(conf, 0.0);
        }
        assert_eq!(report.delta, 0.0);
    }

    #[test]
    fn dominance_confidence_one() {
        let refs = lines(&["a b c d e", "f g h i j", "k l m n o", "p q r s t"]);
        let a = SystemOutput::new("exact", refs.clone());
        let b = SystemOutput::new("noise", lines(&["x x x x x"; 4]));
        let report = paired_bootstrap(&a, &b, &refs, &[3, 8], 300, 11).unwrap();
        for (_, conf) in report.confidences {
            assert_eq!(conf, 1.0);
        }
        assert!(report.delta > 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let refs = lines(&["a b c d", "a b x y", "p q r s"]);
        let a = SystemOutput::new("a", lines(&["a b c d", "a b q y", "p q r z"]));
        let b = SystemOutput::new("b", lines(&["a b c z", "a b x y", "p w r s"]));
        let r1 = paired_bootstrap(&a, &b, &refs, &[4], 500, 99).unwrap();
        let r2 = paired_bootstrap(&a, &b, &refs, &[4], 500, 99).unwrap();
        assert_eq!(r1.confidences, r2.confidences);
        assert_eq!(r1.delta, r2.delta);
        let r3 = paired_bootstrap(&a, &b, &refs, &[4], 500, 100).unwrap();
        // a different seed is allowed to give a different confidence
        let _ = r3;
    }

    #[test]
    fn misaligned_outputs_rejected() {
        let refs = lines(&["a b", "c d"]);
        let a = SystemOutput::new("a", lines(&["a b"]));
        let b = SystemOutput::new("b", refs.clone());
        assert!(paired_bootstrap(&a, &b, &refs, &[2], 10, 1).is_err());
    }

    #[test]
    fn subsets_deterministic_and_single_index() {
        let s1 = make_subsets(1, 5, 10, 42);
        for subset in &s1 {
            assert!(subset.iter().all(|&i| i == 0));
        }
        let a = make_subsets(20, 7, 50, 3);
        let b = make_subsets(20, 7, 50, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn subset_indices_uniform() {
        let n = 10;
        let subsets = make_subsets(n, 1000, 1000, 5);
        let mut counts = vec![0usize; n];
        for subset in &subsets {
            for &i in subset {
                counts[i] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let expect = total as f64 / n as f64;
        for &c in &counts {
            assert!(
                (c as f64 - expect).abs() / expect < 0.01,
                "index frequency off: {c} vs {expect}"
            );
        }
    }

    #[test]
    fn delta_matches_metrics_module() {
        let refs = lines(&["der wind weht stark", "morgen wird es regnen"]);
        let a = SystemOutput::new("a", lines(&["der wind weht stark", "morgen wird regnen"]));
        let b = SystemOutput::new("b", lines(&["der wind weht", "morgen es regnen"]));
        let report = paired_bootstrap(&a, &b, &refs, &[2], 10, 1).unwrap();
        let ra = crate::metrics::evaluate_lines("a", &a.hypotheses, &refs).unwrap();
        let rb = crate::metrics::evaluate_lines("b", &b.hypotheses, &refs).unwrap();
        assert!((report.delta - (ra.bleu[3] - rb.bleu[3])).abs() < 1e-12);
    }
}
