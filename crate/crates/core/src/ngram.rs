//! Back-off n-gram language models in ARPA form.
//!
//! Probabilities are log10 throughout. Training uses interpolated absolute
//! discounting with `d = 0.75`; the unigram level interpolates with a uniform
//! distribution over the vocabulary (words, `</s>` and `<unk>`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SENT_BEGIN: &str = "<s>";
pub const SENT_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";
/// ARPA convention for `<s>`, which is never predicted.
pub const NEVER: f64 = -99.0;
pub const DISCOUNT: f64 = 0.75;

pub type WordId = u32;

#[derive(Clone, Debug)]
pub struct NgramModel {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, WordId>,
    /// `tables[n - 1]` maps n-grams to `(log10 prob, log10 backoff)`.
    tables: Vec<HashMap<Vec<WordId>, (f64, f64)>>,
    unk: WordId,
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn table_size(&self, n: usize) -> usize {
        self.tables.get(n - 1).map_or(0, HashMap::len)
    }

    /// Word id, mapping out-of-vocabulary words to `<unk>`.
    pub fn word_id(&self, w: &str) -> WordId {
        self.index.get(w).copied().unwrap_or(self.unk)
    }

    pub fn begin_id(&self) -> WordId {
        self.word_id(SENT_BEGIN)
    }

    pub fn end_id(&self) -> WordId {
        self.word_id(SENT_END)
    }

    /// The suffix of `history` that can matter for the next word.
    pub fn context<'h>(&self, history: &'h [WordId]) -> &'h [WordId] {
        let keep = history.len().min(self.order - 1);
        &history[history.len() - keep..]
    }

    /// Back-off recursion over word ids.
    pub fn score_ids(&self, history: &[WordId], word: WordId) -> f64 {
        let h = self.context(history);
        let mut key: Vec<WordId> = Vec::with_capacity(h.len() + 1);
        let mut acc = 0.0;
        for start in 0..=h.len() {
            let ctx = &h[start..];
            key.clear();
            key.extend_from_slice(ctx);
            key.push(word);
            if let Some(&(lp, _)) = self.tables[ctx.len()].get(&key) {
                return acc + lp;
            }
            if !ctx.is_empty() {
                if let Some(&(_, bow)) = self.tables[ctx.len() - 1].get(ctx) {
                    acc += bow;
                }
            }
        }
        // Unreachable for models with an `<unk>` unigram.
        acc + NEVER
    }

    pub fn score_word(&self, history: &[&str], word: &str) -> f64 {
        let h: Vec<WordId> = history.iter().map(|w| self.word_id(w)).collect();
        self.score_ids(&h, self.word_id(word))
    }

    /// `Σ log10 p(w_i | <s> w_1 … w_{i-1})` including the final `</s>`.
    pub fn score_sequence(&self, tokens: &[&str]) -> f64 {
        let mut hist = vec![self.begin_id()];
        let mut total = 0.0;
        for t in tokens {
            let id = self.word_id(t);
            total += self.score_ids(&hist, id);
            hist.push(id);
        }
        total + self.score_ids(&hist, self.end_id())
    }

    /// Stored n-grams of order `< order`, i.e. every history the model knows.
    pub fn histories(&self) -> Vec<Vec<WordId>> {
        let mut out: Vec<Vec<WordId>> = vec![Vec::new()];
        for t in &self.tables[..self.order - 1] {
            let mut keys: Vec<Vec<WordId>> = t
                .keys()
                .filter(|k| k != &&vec![self.end_id()])
                .cloned()
                .collect();
            keys.sort();
            out.extend(keys);
        }
        out
    }

    /// Ids that can follow a history: all words except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = WordId> + '_ {
        let b = self.begin_id();
        (0..self.vocab.len() as WordId).filter(move |&w| w != b)
    }

    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for n in 1..=self.order {
            let _ = writeln!(out, "ngram {n}={}", self.table_size(n));
        }
        for n in 1..=self.order {
            let _ = write!(out, "\n\\{n}-grams:\n");
            let mut rows: Vec<(Vec<&str>, f64, f64)> = self.tables[n - 1]
                .iter()
                .map(|(k, &(lp, bow))| {
                    (
                        k.iter().map(|&w| self.vocab[w as usize].as_str()).collect(),
                        lp,
                        bow,
                    )
                })
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, lp, bow) in rows {
                let _ = write!(out, "{lp}\t{}", words.join(" "));
                if n < self.order && bow != 0.0 {
                    let _ = write!(out, "\t{bow}");
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa(text: &str) -> Result<Self> {
        let ctx = "ARPA";
        let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
        let mut entries: Vec<Vec<(Vec<String>, f64, f64)>> = Vec::new();
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        let mut ended = false;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if ended {
                return Err(Error::parse(ctx, lineno, "content after \\end\\"));
            }
            if line == "\\data\\" {
                seen_data = true;
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                continue;
            }
            if let Some(n) = line
                .strip_prefix('\\')
                .and_then(|l| l.strip_suffix("-grams:"))
            {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::parse(ctx, lineno, "bad section header"))?;
                if n != entries.len() + 1 {
                    return Err(Error::parse(
                        ctx,
                        lineno,
                        format!("section {n} out of order"),
                    ));
                }
                entries.push(Vec::new());
                section = Some(n);
                continue;
            }
            match section {
                None => {
                    let rest = line
                        .strip_prefix("ngram ")
                        .ok_or_else(|| Error::parse(ctx, lineno, "expected `ngram N=count`"))?;
                    let (n, c) = rest
                        .split_once('=')
                        .ok_or_else(|| Error::parse(ctx, lineno, "expected `ngram N=count`"))?;
                    let n = n
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(ctx, lineno, "bad order"))?;
                    let c = c
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(ctx, lineno, "bad count"))?;
                    declared.insert(n, c);
                }
                Some(n) => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() != n + 1 && fields.len() != n + 2 {
                        return Err(Error::parse(
                            ctx,
                            lineno,
                            format!("expected {n}-gram entry"),
                        ));
                    }
                    let num = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| Error::parse(ctx, lineno, format!("bad number `{s}`")))
                    };
                    let lp = num(fields[0])?;
                    let bow = if fields.len() == n + 2 {
                        num(fields[n + 1])?
                    } else {
                        0.0
                    };
                    let words = fields[1..=n].iter().map(|s| s.to_string()).collect();
                    entries[n - 1].push((words, lp, bow));
                }
            }
        }
        if !seen_data || !ended {
            return Err(Error::Arpa("missing \\data\\ or \\end\\ marker".into()));
        }
        if entries.is_empty() {
            return Err(Error::Arpa("no n-gram sections".into()));
        }
        for (n, &c) in &declared {
            let actual = entries.get(n - 1).map_or(0, Vec::len);
            if actual != c {
                return Err(Error::Arpa(format!(
                    "{n}-grams: declared {c}, found {actual}"
                )));
            }
        }
        if declared.len() != entries.len() {
            return Err(Error::Arpa("\\data\\ counts do not match sections".into()));
        }
        let mut vocab: Vec<String> = entries[0].iter().map(|e| e.0[0].clone()).collect();
        if !vocab.iter().any(|w| w == UNKNOWN) {
            vocab.push(UNKNOWN.into());
        }
        let index: HashMap<String, WordId> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        let mut tables = Vec::with_capacity(entries.len());
        for (n, rows) in entries.into_iter().enumerate() {
            let mut t = HashMap::with_capacity(rows.len());
            for (words, lp, bow) in rows {
                let key = words
                    .iter()
                    .map(|w| {
                        index
                            .get(w)
                            .copied()
                            .ok_or_else(|| Error::Arpa(format!("word `{w}` has no unigram")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if t.insert(key, (lp, bow)).is_some() {
                    return Err(Error::Arpa(format!(
                        "duplicate {}-gram `{}`",
                        n + 1,
                        words.join(" ")
                    )));
                }
            }
            tables.push(t);
        }
        let unk = index[UNKNOWN];
        tables[0].entry(vec![unk]).or_insert((NEVER, 0.0));
        let model = NgramModel {
            order: tables.len(),
            vocab,
            index,
            tables,
            unk,
        };
        model.check_histories()?;
        Ok(model)
    }

    fn check_histories(&self) -> Result<()> {
        for n in 2..=self.order {
            for k in self.tables[n - 1].keys() {
                if !self.tables[n - 2].contains_key(&k[..n - 1]) {
                    return Err(Error::Arpa(format!(
                        "history of {n}-gram `{}` is not stored",
                        k.iter()
                            .map(|&w| self.vocab[w as usize].as_str())
                            .collect::<Vec<_>>()
                            .join(" ")
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_arpa(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_arpa(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write_arpa(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_arpa()).map_err(|e| Error::io(path, e))
    }
}

/// Trains an order-`order` model on whitespace-free token sequences.
pub fn train(corpus: &[Vec<String>], order: usize) -> Result<NgramModel> {
    if order == 0 {
        return Err(Error::InvalidConfig(
            "n-gram order must be at least 1".into(),
        ));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("empty LM corpus".into()));
    }
    let mut words: BTreeSet<&str> = BTreeSet::new();
    for s in corpus {
        for w in s {
            if w == SENT_BEGIN || w == SENT_END || w == UNKNOWN {
                continue;
            }
            words.insert(w);
        }
    }
    let mut vocab: Vec<String> = vec![SENT_BEGIN.into(), SENT_END.into(), UNKNOWN.into()];
    vocab.extend(words.into_iter().map(str::to_string));
    let index: HashMap<String, WordId> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as WordId))
        .collect();
    let (bos, eos, unk) = (0 as WordId, 1 as WordId, 2 as WordId);

    // counts[n-1]: n-gram → count, keyed with BTreeMap for a stable order.
    let mut counts: Vec<BTreeMap<Vec<WordId>, f64>> = vec![BTreeMap::new(); order];
    for s in corpus {
        let mut ids = vec![bos];
        ids.extend(s.iter().map(|w| index.get(w).copied().unwrap_or(unk)));
        ids.push(eos);
        for i in 1..ids.len() {
            for n in 1..=order.min(i + 1) {
                *counts[n - 1]
                    .entry(ids[i + 1 - n..=i].to_vec())
                    .or_default() += 1.0;
            }
        }
    }
    // Per history: total count and number of distinct continuations.
    let mut hist_stats: Vec<HashMap<Vec<WordId>, (f64, f64)>> = vec![HashMap::new(); order];
    for (n, table) in counts.iter().enumerate() {
        for (k, &c) in table {
            let e = hist_stats[n].entry(k[..n].to_vec()).or_default();
            e.0 += c;
            e.1 += 1.0;
        }
    }
    let gamma = |n: usize, h: &[WordId]| -> Option<f64> {
        hist_stats[n]
            .get(h)
            .map(|&(total, types)| DISCOUNT * types / total)
    };
    let v_size = (vocab.len() - 1) as f64; // every word but <s>
    let mut probs: Vec<HashMap<Vec<WordId>, f64>> = vec![HashMap::new(); order];
    // Unigrams: every predictable word gets mass, interpolated with uniform.
    let g0 = gamma(0, &[]).unwrap_or(1.0);
    let total0 = hist_stats[0].get(&Vec::new()).map_or(1.0, |s| s.0);
    for w in 1..vocab.len() as WordId {
        let c = counts[0].get(&vec![w]).copied().unwrap_or(0.0);
        probs[0].insert(vec![w], (c - DISCOUNT).max(0.0) / total0 + g0 / v_size);
    }
    for n in 1..order {
        for (k, &c) in &counts[n] {
            let h = &k[..n];
            let (total, _) = hist_stats[n][h];
            let lower = probs[n - 1][&k[1..]];
            let p = (c - DISCOUNT).max(0.0) / total + gamma(n, h).unwrap() * lower;
            probs[n].insert(k.clone(), p);
        }
    }
    let mut tables: Vec<HashMap<Vec<WordId>, (f64, f64)>> = vec![HashMap::new(); order];
    for n in 0..order {
        for (k, &p) in &probs[n] {
            let bow = if n + 1 < order {
                gamma(n + 1, k).map_or(0.0, f64::log10)
            } else {
                0.0
            };
            tables[n].insert(k.clone(), (p.log10(), bow));
        }
    }
    // <s> is stored for its back-off weight only.
    let bos_bow = if order > 1 {
        gamma(1, &[bos]).map_or(0.0, f64::log10)
    } else {
        0.0
    };
    tables[0].insert(vec![bos], (NEVER, bos_bow));
    Ok(NgramModel {
        order,
        vocab,
        index,
        tables,
        unk,
    })
}

/// Whitespace tokenization for LM corpora.
pub fn tokenize_lines(lines: &[impl AsRef<str>]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.as_ref().split_whitespace().map(str::to_string).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HAND: &str = "\\data\\
ngram 1=4
ngram 2=1

\\1-grams:
-0.5\ta\t-0.3
-0.7\tb
-1.0\t</s>
-1.5\t<unk>

\\2-grams:
-0.2\ta </s>

\\end\\
";

    #[test]
    fn hand_back_off() {
        let m = NgramModel::from_arpa(HAND).unwrap();
        assert_eq!(m.order(), 2);
        assert!((m.score_word(&[], "a") - -0.5).abs() < 1e-12);
        assert!((m.score_word(&["a"], "b") - -1.0).abs() < 1e-6);
        assert!((m.score_word(&["a"], "</s>") - -0.2).abs() < 1e-12);
        assert_eq!(m.score_word(&[], "zebra"), -1.5);
        // Histories that are not stored carry no back-off weight.
        assert!((m.score_word(&["b"], "a") - -0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_chain_rule() {
        let m = NgramModel::from_arpa(HAND).unwrap();
        // <s> has no unigram here, so it maps to <unk> with no back-off.
        assert!((m.score_sequence(&[]) - -1.0).abs() < 1e-12);
        let want = -0.5 + -0.2;
        assert!((m.score_sequence(&["a"]) - want).abs() < 1e-6);
        let want = -0.5 + (-0.3 + -0.7) + -1.0;
        assert!((m.score_sequence(&["a", "b"]) - want).abs() < 1e-6);
    }

    #[test]
    fn unigram_only_file() {
        let m = NgramModel::from_arpa(
            "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\ta\n-0.5\t</s>\n-1\t<unk>\n\n\\end\\\n",
        )
        .unwrap();
        assert_eq!((m.order(), m.table_size(1)), (1, 3));
    }

    #[test]
    fn count_mismatch_and_malformed() {
        let bad = HAND.replace("ngram 1=4", "ngram 1=5");
        assert!(matches!(NgramModel::from_arpa(&bad), Err(Error::Arpa(_))));
        let bad = HAND.replace("-0.7\tb", "x\tb");
        assert!(matches!(
            NgramModel::from_arpa(&bad),
            Err(Error::Parse { line: 7, .. })
        ));
        assert!(NgramModel::from_arpa(&HAND.replace("-0.2\ta </s>", "-0.2\tc </s>")).is_err());
    }

    fn total_mass(m: &NgramModel, h: &[WordId]) -> f64 {
        m.predictable().map(|w| 10f64.powf(m.score_ids(h, w))).sum()
    }

    #[test]
    fn single_word_corpus() {
        let m = train(&tokenize_lines(&["a a a"]), 1).unwrap();
        assert!((total_mass(&m, &[]) - 1.0).abs() < 1e-9);
        let pa = 10f64.powf(m.score_word(&[], "a"));
        let punk = 10f64.powf(m.score_word(&[], "<unk>"));
        assert!(pa > 0.5 && punk < 0.2 && pa > punk);
    }

    #[test]
    fn distinct_tokens_bigram() {
        let m = train(&tokenize_lines(&["a b c d e"]), 2).unwrap();
        for h in m.histories() {
            assert!((total_mass(&m, &h) - 1.0).abs() < 1e-9, "{h:?}");
        }
        // Every seen bigram has count one, hence the same discounted share.
        let a = m.score_word(&["a"], "b") - m.score_word(&[], "b");
        let b = m.score_word(&["b"], "c") - m.score_word(&[], "c");
        assert!(a > 0.0 && b > 0.0);
    }

    fn corpus() -> Vec<Vec<String>> {
        let lines: Vec<String> = (0..60)
            .map(|i| {
                let w = ["the", "cat", "dog", "sat", "ran", "on", "mat", "a"];
                (0..(3 + i % 5))
                    .map(|j| w[(i * 7 + j * 3 + j * j) % w.len()])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        tokenize_lines(&lines)
    }

    #[test]
    fn four_gram_normalizes_and_round_trips() {
        let m = train(&corpus(), 4).unwrap();
        for h in m.histories() {
            assert!((total_mass(&m, &h) - 1.0).abs() < 1e-6);
        }
        let back = NgramModel::from_arpa(&m.to_arpa()).unwrap();
        assert_eq!(back.to_arpa(), m.to_arpa());
        assert_eq!(train(&corpus(), 4).unwrap().to_arpa(), m.to_arpa());
    }

    proptest! {
        #[test]
        fn appending_never_increases_prefix_mass(idx in proptest::collection::vec(0usize..9, 0..8)) {
            let m = train(&corpus(), 3).unwrap();
            let words = ["the", "cat", "dog", "sat", "ran", "on", "mat", "a", "zzz"];
            let toks: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
            let ids: Vec<WordId> = toks.iter().map(|w| m.word_id(w)).collect();
            // Prefix log-prob without </s> is non-increasing in length.
            let mut hist = vec![m.begin_id()];
            let mut prev = 0.0;
            for &id in &ids {
                let next = prev + m.score_ids(&hist, id);
                prop_assert!(next <= prev);
                prev = next;
                hist.push(id);
            }
            let back = NgramModel::from_arpa(&m.to_arpa()).unwrap();
            prop_assert_eq!(back.score_sequence(&toks), m.score_sequence(&toks));
        }
    }
}
