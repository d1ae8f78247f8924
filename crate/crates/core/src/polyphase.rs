//! L-way polyphase realization of the channel correction convolution.
//!
//! A sub-ADC stream is itself treated as an L-channel interleaved stream:
//! it is split into L phases, every output phase is computed independently
//! from the L input phases and the L filter phase components, and the
//! phases are merged back. The result is bit-identical to the serial
//! integer convolution.
//!
//! Output phase `j` at sub-index `k` (global index `n = k*L + j`):
//!
//! ```text
//! y_j[k] = sum_r sum_q h_r[q] * x_{(j-r) mod L}[k - q - (r > j)]
//! ```
//!
//! with `h_r[q] = h[q*L + r]`.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_PARALLELISM: usize = 4;
pub const DEFAULT_BLOCK_LEN: usize = 1024;

/// How a stream is split for parallel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolyphasePlan {
    /// Number of polyphase portions `L`.
    pub parallelism: usize,
    /// Output samples per work item within one portion.
    pub block_len: usize,
}

impl Default for PolyphasePlan {
    fn default() -> Self {
        Self {
            parallelism: DEFAULT_PARALLELISM,
            block_len: DEFAULT_BLOCK_LEN,
        }
    }
}

impl PolyphasePlan {
    pub fn new(parallelism: usize, block_len: usize) -> Result<Self> {
        let plan = Self {
            parallelism,
            block_len,
        };
        if parallelism < 1 {
            return Err(Error::Config("polyphase parallelism must be at least 1".into()));
        }
        if block_len < 1 {
            return Err(Error::Config("polyphase block length must be at least 1".into()));
        }
        Ok(plan)
    }

    /// History carried into every block.
    pub fn overlap(&self, n_taps: usize) -> usize {
        n_taps.saturating_sub(1)
    }

    fn check_taps(&self, n_taps: usize) -> Result<()> {
        if self.parallelism < 1 {
            return Err(Error::Config("polyphase parallelism must be at least 1".into()));
        }
        if self.block_len < n_taps {
            return Err(Error::Config(format!(
                "block length {} shorter than the {n_taps}-tap filter",
                self.block_len
            )));
        }
        Ok(())
    }
}

/// Causal integer convolution truncated to the input length:
/// `y[n] = sum_i h[i] * x[n - i]`, with `x` zero before the start.
pub fn serial_convolve(stream: &[i32], taps: &[i64]) -> Vec<i64> {
    (0..stream.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .map(|(i, &h)| h * stream[n - i] as i64)
                .sum()
        })
        .collect()
}

/// Splits `stream` into `parallelism` phases; phase `j` holds indices `≡ j (mod L)`.
pub fn decompose<T: Copy>(stream: &[T], parallelism: usize) -> Result<Vec<Vec<T>>> {
    if parallelism < 1 {
        return Err(Error::Config("polyphase parallelism must be at least 1".into()));
    }
    Ok((0..parallelism)
        .map(|j| stream.iter().skip(j).step_by(parallelism).copied().collect())
        .collect())
}

fn check_phase_lengths<T>(phases: &[Vec<T>]) -> Result<usize> {
    let l = phases.len();
    if l == 0 {
        return Err(Error::Shape("no polyphase portions".into()));
    }
    let total: usize = phases.iter().map(Vec::len).sum();
    for (j, p) in phases.iter().enumerate() {
        let expected = total / l + usize::from(j < total % l);
        if p.len() != expected {
            return Err(Error::Shape(format!(
                "portion {j} has {} samples, expected {expected} for a {total}-sample stream",
                p.len()
            )));
        }
    }
    Ok(total)
}

/// Inverse of [`decompose`].
pub fn recompose<T: Copy>(phases: &[Vec<T>]) -> Result<Vec<T>> {
    let total = check_phase_lengths(phases)?;
    let l = phases.len();
    Ok((0..total).map(|n| phases[n % l][n / l]).collect())
}

/// Convolves the decomposed stream phase by phase.
///
/// Work items are (output phase, block) pairs; each reads the shared input
/// phases including `N-1` samples of history before its block, so there are
/// no seams between blocks.
pub fn parallel_convolve(phases: &[Vec<i32>], taps: &[i64], plan: &PolyphasePlan) -> Result<Vec<Vec<i64>>> {
    plan.check_taps(taps.len())?;
    check_phase_lengths(phases)?;
    let l = phases.len();
    if l != plan.parallelism {
        return Err(Error::Shape(format!(
            "{l} portions supplied for a plan with L = {}",
            plan.parallelism
        )));
    }
    // h_r[q] = taps[q*L + r]
    let components: Vec<Vec<i64>> = (0..l)
        .map(|r| taps.iter().skip(r).step_by(l).copied().collect())
        .collect();

    let items: Vec<(usize, usize)> = (0..l)
        .flat_map(|j| {
            let blocks = phases[j].len().div_ceil(plan.block_len);
            (0..blocks).map(move |b| (j, b))
        })
        .collect();

    let computed: Vec<Vec<i64>> = items
        .par_iter()
        .map(|&(j, b)| {
            let start = b * plan.block_len;
            let end = (start + plan.block_len).min(phases[j].len());
            (start..end)
                .map(|k| phase_output(phases, &components, j, k))
                .collect()
        })
        .collect();

    let mut out: Vec<Vec<i64>> = phases.iter().map(|p| Vec::with_capacity(p.len())).collect();
    for (&(j, _), block) in items.iter().zip(computed) {
        out[j].extend(block);
    }
    Ok(out)
}

fn phase_output(phases: &[Vec<i32>], components: &[Vec<i64>], j: usize, k: usize) -> i64 {
    let l = phases.len();
    let mut acc = 0i64;
    for (r, h_r) in components.iter().enumerate() {
        let (p, carry) = if r <= j { (j - r, 0) } else { (j + l - r, 1) };
        let x_p = &phases[p];
        // sub-index k - q - carry must be in range
        let Some(top) = k.checked_sub(carry) else { continue };
        for (q, &h) in h_r.iter().enumerate().take(top + 1) {
            if let Some(&x) = x_p.get(top - q) {
                acc += h * x as i64;
            }
        }
    }
    acc
}

/// `recompose(parallel_convolve(decompose(stream)))`.
pub fn convolve(stream: &[i32], taps: &[i64], plan: &PolyphasePlan) -> Result<Vec<i64>> {
    let phases = decompose(stream, plan.parallelism)?;
    recompose(&parallel_convolve(&phases, taps, plan)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decompose_examples() {
        assert_eq!(
            decompose(&[1, 2, 3, 4, 5, 6], 2).unwrap(),
            vec![vec![1, 3, 5], vec![2, 4, 6]]
        );
        assert_eq!(decompose(&[1, 2, 3], 1).unwrap(), vec![vec![1, 2, 3]]);
        assert_eq!(
            decompose(&[1, 2, 3, 4, 5], 3).unwrap(),
            vec![vec![1, 4], vec![2, 5], vec![3]]
        );
        assert!(matches!(decompose(&[1], 0), Err(Error::Config(_))));
    }

    #[test]
    fn recompose_examples() {
        assert_eq!(
            recompose(&[vec![1, 3, 5], vec![2, 4, 6]]).unwrap(),
            vec![1, 2, 3, 4, 5, 6]
        );
        assert_eq!(
            recompose(&[vec![1, 4], vec![2, 5], vec![3]]).unwrap(),
            vec![1, 2, 3, 4, 5]
        );
        assert!(matches!(recompose(&[vec![1], vec![2, 5]]), Err(Error::Shape(_))));
        assert!(matches!(recompose(&[vec![1, 2, 3], vec![4]]), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_taps_pass_through() {
        let x: Vec<i32> = (0..37).map(|i| i * 7 - 100).collect();
        for l in 1..6 {
            let plan = PolyphasePlan::new(l, 4).unwrap();
            let phases = decompose(&x, l).unwrap();
            let out = parallel_convolve(&phases, &[1], &plan).unwrap();
            let widened: Vec<Vec<i64>> = phases
                .iter()
                .map(|p| p.iter().map(|&v| v as i64).collect())
                .collect();
            assert_eq!(out, widened);
        }
    }

    #[test]
    fn serial_convolution_small() {
        assert_eq!(serial_convolve(&[1, 2, 3], &[1, 10]), vec![1, 12, 23]);
        assert_eq!(serial_convolve(&[1], &[5, 6, 7]), vec![5]);
    }

    #[test]
    fn rejects_short_blocks_and_ragged_phases() {
        let plan = PolyphasePlan::new(2, 2).unwrap();
        let phases = vec![vec![1, 2], vec![3, 4]];
        assert!(matches!(
            parallel_convolve(&phases, &[1, 1, 1], &plan),
            Err(Error::Config(_))
        ));
        let ragged = vec![vec![1], vec![3, 4]];
        assert!(matches!(
            parallel_convolve(&ragged, &[1], &plan),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn exhaustive_small_cases() {
        for len in 0..=12 {
            let x: Vec<i32> = (0..len).map(|i| ((i * 5 + 3) % 7) as i32 - 3).collect();
            for n_taps in 1..=5 {
                let h: Vec<i64> = (0..n_taps).map(|i| (i as i64 * 3 - 4) * 1000 + 1).collect();
                let expect = serial_convolve(&x, &h);
                for l in 1..=8 {
                    let plan = PolyphasePlan::new(l, n_taps.max(1)).unwrap();
                    assert_eq!(convolve(&x, &h, &plan).unwrap(), expect, "len {len} taps {n_taps} L {l}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(s in proptest::collection::vec(any::<i32>(), 0..200), l in 1usize..10) {
            prop_assert_eq!(recompose(&decompose(&s, l).unwrap()).unwrap(), s);
        }

        #[test]
        fn bit_exact_with_serial(
            x in proptest::collection::vec(-2048i32..2048, 1..300),
            h in proptest::collection::vec(-(1i64 << 29)..(1i64 << 29), 1..32),
            l in 1usize..9,
            extra in 0usize..40,
        ) {
            let plan = PolyphasePlan::new(l, h.len() + extra).unwrap();
            prop_assert_eq!(convolve(&x, &h, &plan).unwrap(), serial_convolve(&x, &h));
        }
    }
}
