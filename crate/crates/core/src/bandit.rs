//! Two-armed Beta posterior over drafting strategies, sampled by Thompson
//! sampling and updated from forecast signals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::DraftStrategy;

/// Beta(alpha, beta) counts. `alpha - 1` progressive and `beta - 1` recovery
/// signals have been observed since the last reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyPosterior {
    pub alpha: u32,
    pub beta: u32,
}

impl Default for StrategyPosterior {
    fn default() -> Self {
        init_posterior()
    }
}

impl StrategyPosterior {
    /// Builds a posterior from explicit counts; both must be at least one.
    pub fn from_counts(alpha: u32, beta: u32) -> Option<Self> {
        (alpha >= 1 && beta >= 1).then_some(Self { alpha, beta })
    }

    pub fn update(self, signal: ForecastSignal) -> Self {
        update_posterior(self, signal)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> PreferenceSample {
        sample_preference(self, rng)
    }
}

/// Binary forecast label emitted after each observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ForecastSignal {
    Prog,
    Rec,
}

impl From<ForecastSignal> for DraftStrategy {
    fn from(s: ForecastSignal) -> Self {
        match s {
            ForecastSignal::Prog => DraftStrategy::Prog,
            ForecastSignal::Rec => DraftStrategy::Rec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub p_hat: f64,
    /// ChaCha word position of the source stream before the draw.
    pub source_rng_state: u128,
}

/// Uniform prior.
pub fn init_posterior() -> StrategyPosterior {
    StrategyPosterior { alpha: 1, beta: 1 }
}

pub fn update_posterior(post: StrategyPosterior, signal: ForecastSignal) -> StrategyPosterior {
    match signal {
        ForecastSignal::Prog => StrategyPosterior {
            alpha: post.alpha + 1,
            beta: post.beta,
        },
        ForecastSignal::Rec => StrategyPosterior {
            alpha: post.alpha,
            beta: post.beta + 1,
        },
    }
}

/// Draws `p_hat ~ Beta(alpha, beta)` as the alpha-th smallest of
/// `alpha + beta - 1` independent uniforms. Exact for integer counts.
pub fn sample_preference(post: &StrategyPosterior, rng: &mut ChaCha8Rng) -> PreferenceSample {
    let source_rng_state = rng.get_word_pos();
    let p_hat = beta_order_statistic(post.alpha, post.beta, rng);
    PreferenceSample {
        p_hat,
        source_rng_state,
    }
}

pub(crate) fn beta_order_statistic<R: Rng + ?Sized>(alpha: u32, beta: u32, rng: &mut R) -> f64 {
    debug_assert!(alpha >= 1 && beta >= 1);
    let n = (alpha + beta - 1) as usize;
    if n == 1 {
        return rng.random::<f64>();
    }
    let mut draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let k = (alpha - 1) as usize;
    let (_, kth, _) = draws.select_nth_unstable_by(k, f64::total_cmp);
    *kth
}

/// Ties at exactly one half go to recovery.
pub fn select_strategy(sample: &PreferenceSample) -> DraftStrategy {
    if sample.p_hat > 0.5 {
        DraftStrategy::Prog
    } else {
        DraftStrategy::Rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn frac_above_half(post: StrategyPosterior, n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let hits = (0..n)
            .filter(|_| sample_preference(&post, &mut r).p_hat > 0.5)
            .count();
        hits as f64 / n as f64
    }

    #[test]
    fn init_is_uniform_and_deterministic() {
        assert_eq!(init_posterior(), StrategyPosterior { alpha: 1, beta: 1 });
        assert_eq!(init_posterior(), init_posterior());
    }

    #[test]
    fn update_examples() {
        let p = StrategyPosterior { alpha: 1, beta: 1 };
        assert_eq!(p.update(ForecastSignal::Prog), StrategyPosterior { alpha: 2, beta: 1 });
        let q = StrategyPosterior { alpha: 4, beta: 7 };
        assert_eq!(q.update(ForecastSignal::Rec), StrategyPosterior { alpha: 4, beta: 8 });
        let r = [ForecastSignal::Prog, ForecastSignal::Prog, ForecastSignal::Rec]
            .into_iter()
            .fold(init_posterior(), update_posterior);
        assert_eq!(r, StrategyPosterior { alpha: 3, beta: 2 });
        // pure: inputs untouched
        assert_eq!(p, StrategyPosterior { alpha: 1, beta: 1 });
    }

    #[test]
    fn select_strategy_threshold() {
        let s = |p| PreferenceSample {
            p_hat: p,
            source_rng_state: 0,
        };
        assert_eq!(select_strategy(&s(0.73)), DraftStrategy::Prog);
        assert_eq!(select_strategy(&s(0.5)), DraftStrategy::Rec);
        assert_eq!(select_strategy(&s(0.12)), DraftStrategy::Rec);
    }

    #[test]
    fn uniform_prior_selects_prog_half_the_time() {
        let f = frac_above_half(init_posterior(), 100_000, 11);
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }

    #[test]
    fn uniform_mean() {
        let mut r = rng(3);
        let post = init_posterior();
        let mean: f64 = (0..100_000)
            .map(|_| sample_preference(&post, &mut r).p_hat)
            .sum::<f64>()
            / 100_000.0;
        assert!((mean - 0.5).abs() <= 0.005, "{mean}");
    }

    #[test]
    fn beta_2_1_and_1_3_tail_fractions() {
        // F(x)=x^2 for Beta(2,1); F(x)=1-(1-x)^3 for Beta(1,3)
        let f21 = frac_above_half(StrategyPosterior { alpha: 2, beta: 1 }, 100_000, 5);
        assert!((f21 - 0.75).abs() <= 0.01, "{f21}");
        let f13 = frac_above_half(StrategyPosterior { alpha: 1, beta: 3 }, 100_000, 6);
        assert!((f13 - 0.125).abs() <= 0.01, "{f13}");
    }

    #[test]
    fn same_seed_same_stream() {
        let post = StrategyPosterior { alpha: 3, beta: 2 };
        let (mut a, mut b) = (rng(42), rng(42));
        for _ in 0..100 {
            assert_eq!(sample_preference(&post, &mut a), sample_preference(&post, &mut b));
        }
    }

    #[test]
    fn majority_count_biases_selection() {
        let prog = frac_above_half(StrategyPosterior { alpha: 4, beta: 2 }, 100_000, 8);
        let rec = frac_above_half(StrategyPosterior { alpha: 2, beta: 4 }, 100_000, 9);
        assert!(prog > 0.5 && rec < 0.5);
    }

    #[test]
    fn from_counts_rejects_zero() {
        assert!(StrategyPosterior::from_counts(0, 1).is_none());
        assert!(StrategyPosterior::from_counts(2, 3).is_some());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn counts_track_signals(signals in proptest::collection::vec(any::<bool>(), 0..60)) {
                let post = signals.iter().fold(init_posterior(), |p, &prog| {
                    update_posterior(p, if prog { ForecastSignal::Prog } else { ForecastSignal::Rec })
                });
                let n_prog = signals.iter().filter(|b| **b).count() as u32;
                prop_assert_eq!(post.alpha - 1, n_prog);
                prop_assert_eq!(post.beta - 1, signals.len() as u32 - n_prog);
            }

            #[test]
            fn samples_in_unit_interval(a in 1u32..12, b in 1u32..12, seed in any::<u64>()) {
                let mut r = rng(seed);
                let s = sample_preference(&StrategyPosterior { alpha: a, beta: b }, &mut r);
                prop_assert!((0.0..=1.0).contains(&s.p_hat));
            }
        }
    }
}
