use serde::{Deserialize, Serialize};

use super::ScoreOutput;
use crate::error::{ensure_len, Error, Result};
use crate::mask::{rank_descending, RetentionMask};
use crate::numeric::{argmax, log_sigmoid, SeededRng};

/// Keep the `k` tokens with the highest `s_final`; ties go to the lower index.
pub fn select_topk(output: &ScoreOutput, k: usize) -> Result<RetentionMask> {
    let n = output.s_final.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("top-K needs 1 <= K <= {n}, got {k}")));
    }
    RetentionMask::top_k(&output.s_final, k)
}

/// Top-K restricted to tokens already retained by an earlier stage.
pub fn select_topk_within(output: &ScoreOutput, retained: &RetentionMask, k: usize) -> Result<RetentionMask> {
    let n = output.s_final.len();
    ensure_len("select_topk_within mask", n, retained.len())?;
    if k == 0 || k > retained.kept() {
        return Err(Error::InvalidArgument(format!(
            "top-K within a stage needs 1 <= K <= {}, got {k}",
            retained.kept()
        )));
    }
    let mut mask = RetentionMask::none(n);
    for i in rank_descending(&output.s_final).into_iter().filter(|&i| retained.is_kept(i)).take(k) {
        mask.set(i, true);
    }
    Ok(mask)
}

/// One stochastic keep/drop draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliSample {
    pub mask: RetentionMask,
    /// Log-probability of `mask` under independent Bernoulli(p_i).
    pub log_prob: f64,
    /// The raw draw kept nothing and the most probable token was forced on.
    pub forced_keep: bool,
}

/// `sum_i a_i ln p_i + (1 - a_i) ln(1 - p_i)`, computed from the log-odds.
pub fn log_prob_of(s_final: &[f64], mask: &RetentionMask) -> f64 {
    s_final
        .iter()
        .zip(mask.bits())
        .map(|(&s, &a)| if a { log_sigmoid(s) } else { log_sigmoid(-s) })
        .sum()
}

/// Independent Bernoulli draw per token. An empty draw is repaired by keeping
/// the highest-probability token.
pub fn sample_bernoulli(output: &ScoreOutput, rng: &mut SeededRng) -> BernoulliSample {
    let bits: Vec<bool> = output.probs.iter().map(|&p| rng.uniform() < p).collect();
    let mut mask: RetentionMask = bits.into();
    let forced_keep = mask.kept() == 0 && !mask.is_empty();
    if forced_keep {
        mask.set(argmax(&output.probs), true);
    }
    BernoulliSample {
        log_prob: log_prob_of(&output.s_final, &mask),
        mask,
        forced_keep,
    }
}
