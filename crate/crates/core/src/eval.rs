//! Corpus BLEU (13a tokenization, case-sensitive, exponential smoothing) and WER.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const REPORT_HEADER: &str = "metric,score,p1,p2,p3,p4,bp,hyp_len,ref_len";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    /// Percent precisions after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuReport {
    pub fn csv_row(&self) -> String {
        let p = self.precisions;
        format!(
            "bleu,{:.4},{:.4},{:.4},{:.4},{:.4},{:.6},{},{}",
            self.score, p[0], p[1], p[2], p[3], self.brevity_penalty, self.hyp_len, self.ref_len
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub rate: f64,
    pub errors: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl WerReport {
    /// Percent WER.
    pub fn percent(&self) -> f64 {
        100.0 * self.rate
    }

    pub fn csv_row(&self) -> String {
        format!(
            "wer,{:.4},,,,,,{},{}",
            self.percent(),
            self.hyp_len,
            self.ref_len
        )
    }
}

struct Rules {
    punct: Regex,
    period_before: Regex,
    period_after: Regex,
    digit_dash: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        punct: Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(),
        period_before: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_after: Regex::new(r"([\.,])([^0-9])").unwrap(),
        digit_dash: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// mteval-v13a tokenization: unescape a few XML entities, split
/// punctuation, split `.`/`,` except between digits, split a dash after a
/// digit, then collapse whitespace.
pub fn tokenize_13a(line: &str) -> String {
    let mut s = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let r = rules();
    let s = format!(" {s} ");
    let s = r.punct.replace_all(&s, " $1 ");
    let s = r.period_before.replace_all(&s, "$1 $2 ");
    let s = r.period_after.replace_all(&s, " $1 $2");
    let s = r.digit_dash.replace_all(&s, "$1 $2 ");
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ngram_counts<'t>(toks: &'t [&str], n: usize) -> HashMap<&'t [&'t str], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add_segment(&mut self, hyp: &str, reference: &str) {
        let h = tokenize_13a(hyp);
        let r = tokenize_13a(reference);
        let ht: Vec<&str> = h.split(' ').filter(|t| !t.is_empty()).collect();
        let rt: Vec<&str> = r.split(' ').filter(|t| !t.is_empty()).collect();
        self.hyp_len += ht.len();
        self.ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            for (g, c) in &hc {
                self.correct[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            self.total[n - 1] += ht.len().saturating_sub(n - 1);
        }
    }

    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        let bp = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        let mut smooth = 1.0;
        let mut usable = self.correct[0] > 0;
        #[allow(clippy::needless_range_loop)]
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                usable = false;
                break;
            }
            precisions[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.total[n] as f64)
            } else {
                100.0 * self.correct[n] as f64 / self.total[n] as f64
            };
        }
        let score = if usable {
            let mean = precisions.iter().map(|p| (p / 100.0).ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * bp * mean.exp()
        } else {
            0.0
        };
        BleuReport {
            score,
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::Metric(format!(
            "{hyps} hypotheses for {refs} references"
        )));
    }
    if refs == 0 {
        return Err(Error::Metric("empty corpus".into()));
    }
    Ok(())
}

pub fn bleu(hyps: &[impl AsRef<str>], refs: &[impl AsRef<str>]) -> Result<BleuReport> {
    check_lengths(hyps.len(), refs.len())?;
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.add_segment(h.as_ref(), r.as_ref());
    }
    Ok(stats.report())
}

/// Word-level Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn wer(hyps: &[impl AsRef<str>], refs: &[impl AsRef<str>]) -> Result<WerReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Metric(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let (mut errors, mut hyp_len, mut ref_len) = (0, 0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let ht: Vec<&str> = h.as_ref().split_whitespace().collect();
        let rt: Vec<&str> = r.as_ref().split_whitespace().collect();
        errors += edit_distance(&ht, &rt);
        hyp_len += ht.len();
        ref_len += rt.len();
    }
    if ref_len == 0 {
        return Err(Error::Metric("reference corpus has no words".into()));
    }
    Ok(WerReport {
        rate: errors as f64 / ref_len as f64,
        errors,
        hyp_len,
        ref_len,
    })
}
