use super::{evaluate_bits, SyntheticTask};
use crate::error::{Error, Result};
use crate::mask::RetentionMask;

const EXHAUSTIVE_LIMIT: usize = 20;
const COMBINATION_TOKEN_LIMIT: usize = 64;
const COMBINATION_K_LIMIT: usize = 3;

/// Globally optimal mask with at most `k` kept tokens, minimizing the task
/// loss. Ties go to the lexicographically smallest mask.
///
/// Exhaustive for N <= 20; otherwise requires k <= 3 and N <= 64.
pub fn brute_force_optimal(task: &SyntheticTask, k: usize) -> Result<(RetentionMask, f64)> {
    let n = task.num_tokens();
    let k = k.min(n);
    let mut best: Option<(Vec<bool>, f64)> = None;
    let mut consider = |bits: Vec<bool>| -> Result<()> {
        let loss = evaluate_bits(task, &bits)?.loss;
        let better = match &best {
            None => true,
            Some((b, l)) => loss < *l || (loss == *l && bits < *b),
        };
        if better {
            best = Some((bits, loss));
        }
        Ok(())
    };

    if n <= EXHAUSTIVE_LIMIT {
        for word in 0u64..(1u64 << n) {
            if word.count_ones() as usize <= k {
                consider((0..n).map(|i| word >> i & 1 == 1).collect())?;
            }
        }
    } else if k <= COMBINATION_K_LIMIT && n <= COMBINATION_TOKEN_LIMIT {
        let mut chosen = Vec::with_capacity(k);
        for size in 0..=k {
            combinations(n, size, 0, &mut chosen, &mut |idx| {
                let mut bits = vec![false; n];
                idx.iter().for_each(|&i| bits[i] = true);
                consider(bits)
            })?;
        }
    } else {
        return Err(Error::TooLarge(format!(
            "N={n}, K={k}; supported: N <= {EXHAUSTIVE_LIMIT}, or K <= {COMBINATION_K_LIMIT} with N <= {COMBINATION_TOKEN_LIMIT}"
        )));
    }
    let (bits, loss) = best.expect("the empty mask is always feasible");
    Ok((bits.into(), loss))
}

fn combinations(
    n: usize,
    size: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if chosen.len() == size {
        return visit(chosen);
    }
    for i in start..n {
        if n - i < size - chosen.len() {
            break;
        }
        chosen.push(i);
        combinations(n, size, i + 1, chosen, visit)?;
        chosen.pop();
    }
    Ok(())
}
