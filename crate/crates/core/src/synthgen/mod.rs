//! Synthetic two-domain click logs with planted general and query item
//! factors, and a linear probe measuring how well item representations
//! recover each factor.

mod generate;
mod probe;

pub use generate::{generate, raw_index, SynthConfig, SynthData, SynthTruth};
pub use probe::{probe_disentanglement, ProbeResult, MIN_PROBE_ITEMS, RIDGE};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RandomStream;
    use rand_distr::{Distribution, StandardNormal};

    /// Monte-Carlo expectation of `sigmoid(w1·a·b + w2·c·d + bias + noise·e)`
    /// with independent standard normal vectors, drawn outside the generator.
    fn mean_click_prob(dims: &[(f32, usize)], bias: f32, noise: f32, draws: usize) -> f64 {
        let mut s = RandomStream::new("oracle", 99);
        let mut acc = 0.0;
        for _ in 0..draws {
            let mut logit = bias as f64;
            for &(w, d) in dims {
                let mut dot = 0.0f64;
                for _ in 0..d {
                    let a: f64 = StandardNormal.sample(&mut s);
                    let b: f64 = StandardNormal.sample(&mut s);
                    dot += a * b;
                }
                logit += w as f64 * dot;
            }
            let e: f64 = StandardNormal.sample(&mut s);
            logit += noise as f64 * e;
            acc += 1.0 / (1.0 + (-logit).exp());
        }
        acc / draws as f64
    }

    #[test]
    fn log_sizes_match_bernoulli_expectation() {
        let cfg = SynthConfig {
            n_users: 2000,
            n_items: 5000,
            n_queries: 4000,
            d_g: 16,
            d_q: 16,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let rec_p = mean_click_prob(&[(1.0, 16)], cfg.click_bias, cfg.noise, 200_000);
        let src_p = mean_click_prob(&[(1.0, 16), (0.5, 16)], cfg.click_bias, cfg.noise, 200_000);
        let n = cfg.n_users as f64 * cfg.impressions as f64;
        let rec_expected = n * rec_p;
        let src_expected = n * cfg.searches_per_user() as f64 * src_p;
        for (got, want) in [(data.rec_clicks, rec_expected), (data.src_clicks, src_expected)] {
            let ratio = got as f64 / want;
            assert!((0.8..=1.2).contains(&ratio), "{got} vs {want:.0}");
        }
    }

    #[test]
    fn zero_factors_zero_bias_is_a_coin_flip() {
        assert!((mean_click_prob(&[], 0.0, 0.0, 10) - 0.5).abs() < 1e-12);
    }
}
