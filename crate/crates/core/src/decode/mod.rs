//! Beam search for seq2seq models, CTC best-path and lexicon-constrained
//! prefix beam search with n-gram shallow fusion, and grid tuning of the
//! fusion weights.

mod ctc;
mod seq2seq;

pub use ctc::{ctc_best_path, ctc_prefix_beam, Lexicon};
pub use seq2seq::{beam_search, decode_batch, greedy, max_output_len};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textio::escape_field;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Output length cap as a multiple of the encoder input length (floor 8).
    pub max_len_ratio: f64,
    /// Explicit output cap overriding the ratio rule.
    pub max_len: Option<usize>,
    pub length_penalty: f64,
    pub lm_weight: f64,
    pub word_bonus: f64,
    pub nbest: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 20,
            max_len_ratio: 1.0,
            max_len: None,
            length_penalty: 1.0,
            lm_weight: 0.0,
            word_bonus: 0.0,
            nbest: 1,
        }
    }
}

impl BeamConfig {
    /// Desk-scale CTC default.
    pub fn ctc() -> Self {
        BeamConfig {
            beam_size: 50,
            ..Default::default()
        }
    }

    pub fn with_beam(beam_size: usize) -> Self {
        BeamConfig {
            beam_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidConfig("beam_size must be at least 1".into()));
        }
        if !(self.max_len_ratio > 0.0) {
            return Err(Error::InvalidConfig(
                "max_len_ratio must be positive".into(),
            ));
        }
        if self.max_len == Some(0) {
            return Err(Error::InvalidConfig("max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn output_cap(&self, input_len: usize) -> usize {
        self.max_len
            .unwrap_or_else(|| max_output_len(input_len, self.max_len_ratio))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Output tokens without BOS/EOS (seq2seq) or labels (CTC).
    pub tokens: Vec<usize>,
    pub model_logp: f64,
    /// Ranking score: length-normalized (seq2seq) or fused (CTC).
    pub score: f64,
    pub finished: bool,
    /// Words for CTC lexicon decoding.
    pub words: Vec<String>,
}

pub struct NbestEntry<'a> {
    pub utt_id: &'a str,
    pub rank: usize,
    pub score: f64,
    pub text: &'a str,
}

pub fn nbest_tsv<'a>(rows: impl IntoIterator<Item = NbestEntry<'a>>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{}\n",
            escape_field(r.utt_id),
            r.rank,
            r.score,
            escape_field(r.text)
        ));
    }
    out
}

pub const GRID_HEADER: &str = "lm_weight,word_bonus,metric";

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub lm_weight: f64,
    pub word_bonus: f64,
    pub metric: f64,
    pub grid: Vec<(f64, f64, f64)>,
}

impl TuneResult {
    pub fn grid_csv(&self) -> String {
        let mut out = format!("{GRID_HEADER}\n");
        for (w, b, m) in &self.grid {
            out.push_str(&format!("{w},{b},{m:.6}\n"));
        }
        out
    }
}

/// Direction of the tuning metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Minimize,
    Maximize,
}

/// Evaluates every grid point; ties go to the smallest LM weight, then the
/// smallest bonus.
pub fn tune_decoder(
    lm_weights: &[f64],
    word_bonuses: &[f64],
    objective: Objective,
    mut evaluate: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<TuneResult> {
    if lm_weights.is_empty() || word_bonuses.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut ws = lm_weights.to_vec();
    let mut bs = word_bonuses.to_vec();
    ws.sort_by(f64::total_cmp);
    bs.sort_by(f64::total_cmp);
    let mut grid = Vec::with_capacity(ws.len() * bs.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &w in &ws {
        for &b in &bs {
            let m = evaluate(w, b)?;
            grid.push((w, b, m));
            let better = match best {
                None => true,
                Some((_, _, cur)) => match objective {
                    Objective::Minimize => m < cur,
                    Objective::Maximize => m > cur,
                },
            };
            if better {
                best = Some((w, b, m));
            }
        }
    }
    let (lm_weight, word_bonus, metric) = best.expect("grid is nonempty");
    Ok(TuneResult {
        lm_weight,
        word_bonus,
        metric,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_grid() {
        let r = tune_decoder(&[0.3], &[1.0], Objective::Minimize, |_, _| Ok(7.0)).unwrap();
        assert_eq!((r.lm_weight, r.word_bonus, r.metric), (0.3, 1.0, 7.0));
        assert!(matches!(
            tune_decoder(&[], &[1.0], Objective::Minimize, |_, _| Ok(0.0)),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn planted_optimum_and_ties() {
        let ws = [1.0, 0.0, 0.5, 0.25];
        let r = tune_decoder(&ws, &[0.0, 1.0], Objective::Minimize, |w, b| {
            Ok((w - 0.5).abs() + b)
        })
        .unwrap();
        assert_eq!((r.lm_weight, r.word_bonus), (0.5, 0.0));
        assert_eq!(r.grid.len(), 8);
        let r = tune_decoder(&ws, &[2.0, 1.0], Objective::Maximize, |_, _| Ok(1.0)).unwrap();
        assert_eq!((r.lm_weight, r.word_bonus), (0.0, 1.0));
        assert!(r.grid_csv().starts_with(GRID_HEADER));
    }

    #[test]
    fn nbest_rows() {
        let tsv = nbest_tsv([NbestEntry {
            utt_id: "u1",
            rank: 1,
            score: -0.5,
            text: "a\tb",
        }]);
        assert_eq!(tsv, "u1\t1\t-0.500000\ta\\tb\n");
    }
}
