use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_10;

use super::{BeamConfig, Hypothesis};
use crate::error::{Error, Result};
use crate::ngram::{NgramModel, WordId};
use crate::nnet::tensor::log_add;
use crate::nnet::{Tensor, BLANK};
use crate::subword::SubwordModel;

/// Per-frame argmax, repeats collapsed, blanks dropped.
pub fn ctc_best_path(log_posteriors: &Tensor) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for t in 0..log_posteriors.rows() {
        let k = log_posteriors.argmax_row(t);
        if k != BLANK && k != prev {
            out.push(k);
        }
        prev = k;
    }
    out
}

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<usize, usize>,
    word: Option<usize>,
}

/// Words with their CTC label sequences, stored as a trie. A label is a
/// word-start label when it begins some word; no word may use a word-start
/// label anywhere else, so word boundaries are implied by the labels.
#[derive(Clone, Debug)]
pub struct Lexicon {
    words: Vec<String>,
    nodes: Vec<TrieNode>,
}

impl Lexicon {
    /// Builds the trie. For words sharing a label sequence the first listed wins.
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<usize>)>) -> Result<Self> {
        let entries: Vec<(String, Vec<usize>)> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        let starts: std::collections::BTreeSet<usize> = entries
            .iter()
            .filter_map(|e| e.1.first().copied())
            .collect();
        let mut lex = Lexicon {
            words: Vec::new(),
            nodes: vec![TrieNode::default()],
        };
        for (word, labels) in entries {
            if labels.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "lexicon word `{word}` has no labels"
                )));
            }
            if labels.contains(&BLANK) {
                return Err(Error::InvalidConfig(format!(
                    "lexicon word `{word}` uses the blank label"
                )));
            }
            if let Some(l) = labels[1..].iter().find(|l| starts.contains(l)) {
                return Err(Error::InvalidConfig(format!(
                    "lexicon word `{word}` uses word-start label {l} inside the word"
                )));
            }
            let mut node = 0;
            for &l in &labels {
                node = match lex.nodes[node].children.get(&l) {
                    Some(&n) => n,
                    None => {
                        lex.nodes.push(TrieNode::default());
                        let n = lex.nodes.len() - 1;
                        lex.nodes[node].children.insert(l, n);
                        n
                    }
                };
            }
            if lex.nodes[node].word.is_none() {
                lex.words.push(word);
                lex.nodes[node].word = Some(lex.words.len() - 1);
            }
        }
        Ok(lex)
    }

    /// Lexicon over whitespace words; labels are tokenizer ids shifted past blank.
    pub fn from_tokenizer<S: AsRef<str>>(
        words: impl IntoIterator<Item = S>,
        tokenizer: &SubwordModel,
    ) -> Result<Self> {
        let mut uniq: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        uniq.sort();
        uniq.dedup();
        Self::new(uniq.into_iter().map(|w| {
            let labels = tokenizer
                .encode_ids(&w)
                .into_iter()
                .map(|i| i + 1)
                .collect();
            (w, labels)
        }))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_word_start(&self, label: usize) -> bool {
        self.nodes[0].children.contains_key(&label)
    }

    /// Splits a label sequence into lexicon words, if it is a valid sequence.
    pub fn parse(&self, labels: &[usize]) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        let mut node = 0;
        for (i, &l) in labels.iter().enumerate() {
            if i > 0 && self.is_word_start(l) {
                out.push(self.nodes[node].word?);
                node = 0;
            }
            node = *self.nodes[node].children.get(&l)?;
        }
        if !labels.is_empty() {
            out.push(self.nodes[node].word?);
        }
        Some(out)
    }
}

#[derive(Clone, Debug)]
struct Prefix {
    labels: Vec<usize>,
    node: usize,
    words: Vec<usize>,
    history: Vec<WordId>,
    /// LM and word-bonus contribution of the completed words.
    fused: f64,
}

struct Scorer<'a> {
    lm: Option<&'a NgramModel>,
    lm_ids: Vec<WordId>,
    weight: f64,
    bonus: f64,
}

impl Scorer<'_> {
    fn word(&self, history: &[WordId], word: usize) -> f64 {
        let lm = match self.lm {
            Some(lm) => self.weight * LN_10 * lm.score_ids(history, self.lm_ids[word]),
            None => 0.0,
        };
        lm + self.bonus
    }

    fn end(&self, history: &[WordId]) -> f64 {
        match self.lm {
            Some(lm) => self.weight * LN_10 * lm.score_ids(history, lm.end_id()),
            None => 0.0,
        }
    }

    fn push_word(&self, p: &mut Prefix, word: usize) {
        p.fused += self.word(&p.history, word);
        p.words.push(word);
        if let Some(lm) = self.lm {
            p.history.push(self.lm_ids[word]);
            let keep = lm.context(&p.history).len();
            let drop = p.history.len() - keep;
            p.history.drain(..drop);
        }
    }
}

/// Prefix beam search constrained to lexicon words, with shallow fusion:
/// `ln p_ctc + lm_weight · ln p_lm + word_bonus · |words|`. The LM term for a
/// word is added when the next word starts or at the end, together with `</s>`.
pub fn ctc_prefix_beam(
    log_posteriors: &Tensor,
    lexicon: &Lexicon,
    lm: Option<&NgramModel>,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    cfg.validate()?;
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    let scorer = Scorer {
        lm,
        lm_ids: match lm {
            Some(lm) => lexicon.words.iter().map(|w| lm.word_id(w)).collect(),
            None => Vec::new(),
        },
        weight: cfg.lm_weight,
        bonus: cfg.word_bonus,
    };
    let start = Prefix {
        labels: Vec::new(),
        node: 0,
        words: Vec::new(),
        history: lm.map(|lm| vec![lm.begin_id()]).unwrap_or_default(),
        fused: 0.0,
    };
    let ninf = f64::NEG_INFINITY;
    let mut beam: Vec<(Prefix, f64, f64)> = vec![(start, 0.0, ninf)];
    let n_labels = log_posteriors.cols();
    for t in 0..log_posteriors.rows() {
        let row = log_posteriors.row(t);
        let mut next: Vec<(Prefix, f64, f64)> = Vec::new();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut slot = |next: &mut Vec<(Prefix, f64, f64)>,
                        labels: &[usize],
                        make: &dyn Fn() -> Prefix|
         -> usize {
            if let Some(&i) = index.get(labels) {
                return i;
            }
            next.push((make(), ninf, ninf));
            index.insert(labels.to_vec(), next.len() - 1);
            next.len() - 1
        };
        for (pre, pb, pnb) in &beam {
            let total = log_add(*pb, *pnb);
            let i = slot(&mut next, &pre.labels, &|| pre.clone());
            next[i].1 = log_add(next[i].1, total + row[BLANK]);
            let last = pre.labels.last().copied();
            if let Some(l) = last {
                next[i].2 = log_add(next[i].2, pnb + row[l]);
            }
            let node = &lexicon.nodes[pre.node];
            let mut options: Vec<(usize, usize, bool)> =
                node.children.iter().map(|(&c, &n)| (c, n, false)).collect();
            if pre.node != 0 && node.word.is_some() {
                options.extend(
                    lexicon.nodes[0]
                        .children
                        .iter()
                        .map(|(&c, &n)| (c, n, true)),
                );
            }
            for (c, child, boundary) in options {
                if c >= n_labels || row[c] == ninf {
                    continue;
                }
                let mut labels = pre.labels.clone();
                labels.push(c);
                let make = || {
                    let mut p = pre.clone();
                    if boundary {
                        scorer
                            .push_word(&mut p, node.word.expect("boundary after a complete word"));
                    }
                    p.labels = labels.clone();
                    p.node = child;
                    p
                };
                let j = slot(&mut next, &labels, &make);
                let contrib = if last == Some(c) {
                    pb + row[c]
                } else {
                    total + row[c]
                };
                next[j].2 = log_add(next[j].2, contrib);
            }
        }
        let key = |e: &(Prefix, f64, f64)| log_add(e.1, e.2) + e.0.fused;
        next.sort_by(|a, b| {
            key(b)
                .total_cmp(&key(a))
                .then_with(|| a.0.labels.cmp(&b.0.labels))
        });
        next.truncate(cfg.beam_size);
        beam = next;
    }
    let mut best: Option<Hypothesis> = None;
    for (mut pre, pb, pnb) in beam {
        if pre.node != 0 {
            match lexicon.nodes[pre.node].word {
                Some(w) => scorer.push_word(&mut pre, w),
                None => continue,
            }
        }
        let model_logp = log_add(pb, pnb);
        let score = model_logp + pre.fused + scorer.end(&pre.history);
        let better = match &best {
            None => true,
            Some(b) => score > b.score || (score == b.score && pre.labels < b.tokens),
        };
        if better {
            best = Some(Hypothesis {
                words: pre
                    .words
                    .iter()
                    .map(|&w| lexicon.words[w].clone())
                    .collect(),
                tokens: pre.labels,
                model_logp,
                score,
                finished: true,
            });
        }
    }
    Ok(best.unwrap_or(Hypothesis {
        tokens: Vec::new(),
        model_logp: ninf,
        score: ninf,
        finished: false,
        words: Vec::new(),
    }))
}
