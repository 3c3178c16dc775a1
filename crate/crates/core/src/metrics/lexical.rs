//! BLEU and ROUGE-L over word tokens.

use std::collections::HashMap;

/// β for the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;

/// Lowercased words with punctuation split off as separate tokens.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn ngram_counts<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    m
}

/// Clipped matches and candidate n-gram totals for orders `1..=n`.
fn ngram_stats<S: AsRef<str>>(cand: &[S], refr: &[S], n: usize) -> Vec<(usize, usize)> {
    (1..=n)
        .map(|k| {
            let c = ngram_counts(cand, k);
            let r = ngram_counts(refr, k);
            let matched = c.iter().map(|(g, &cnt)| cnt.min(r.get(g).copied().unwrap_or(0))).sum();
            (matched, cand.len().saturating_sub(k - 1))
        })
        .collect()
}

fn combine(stats: &[(usize, usize)], cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 || stats.iter().any(|&(m, t)| m == 0 || t == 0) {
        return 0.0;
    }
    let log_p: f64 = stats.iter().map(|&(m, t)| (m as f64 / t as f64).ln()).sum::<f64>() / stats.len() as f64;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    100.0 * bp * log_p.exp()
}

/// Sentence BLEU-n, no smoothing, scaled to 0..100.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    combine(&ngram_stats(candidate, reference, n), candidate.len(), reference.len())
}

/// Corpus BLEU-n: n-gram statistics and lengths are pooled before combining.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    let mut stats = vec![(0, 0); n];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in pairs {
        for (acc, s) in stats.iter_mut().zip(ngram_stats(c, r, n)) {
            acc.0 += s.0;
            acc.1 += s.1;
        }
        c_len += c.len();
        r_len += r.len();
    }
    combine(&stats, c_len, r_len)
}

fn lcs<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS F-measure with `β = 1.2`, scaled to 0..100.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, r) = (l / candidate.len() as f64, l / reference.len() as f64);
    let b2 = ROUGE_BETA * ROUGE_BETA;
    100.0 * (1.0 + b2) * p * r / (r + b2 * p)
}
