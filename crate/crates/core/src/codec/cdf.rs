//! Integer frequency tables for the arithmetic coder.
//!
//! Table layout for bounds `[v_min, v_max]`: bin 0 is the lower tail, bins
//! `1 ..= v_max - v_min + 1` are the values in order, and the last bin is the
//! upper tail. Tail bins are never coded (values are clamped beforehand) but
//! keep every table a complete distribution.

use crate::entropy::latent::Bounds;
use crate::math::normal_sf;

pub const CDF_PRECISION: u32 = 16;
pub const CDF_TOTAL: u32 = 1 << CDF_PRECISION;
/// Scale floor applied when building tables.
pub const CDF_SIGMA_FLOOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdf {
    bounds: Bounds,
    cum: Vec<u32>,
}

impl QuantizedCdf {
    /// Builds a table from raw frequencies (one per bin, tails included).
    /// Every frequency must be at least 1 and they must sum to `CDF_TOTAL`.
    pub fn from_frequencies(bounds: Bounds, freqs: &[u32]) -> Option<Self> {
        if freqs.len() != bounds.alphabet_size() + 2 || freqs.iter().any(|&f| f == 0) {
            return None;
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in freqs {
            acc = acc.checked_add(f)?;
            cum.push(acc);
        }
        (acc == CDF_TOTAL).then_some(Self { bounds, cum })
    }

    /// Equal frequencies over values, tails at the minimum of 1.
    pub fn uniform(bounds: Bounds) -> Self {
        let n = bounds.alphabet_size() as u32;
        let spare = CDF_TOTAL - 2;
        let mut freqs = vec![1u32];
        freqs.extend((0..n).map(|i| spare / n + u32::from(i < spare % n)));
        freqs.push(1);
        Self::from_frequencies(bounds, &freqs).expect("valid uniform table")
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().expect("non-empty table")
    }

    pub fn bins(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn bin_of_value(&self, v: i32) -> usize {
        debug_assert!(self.bounds.contains(v));
        (v - self.bounds.min) as usize + 1
    }

    pub fn value_of_bin(&self, bin: usize) -> Option<i32> {
        (1..=self.bounds.alphabet_size())
            .contains(&bin)
            .then(|| self.bounds.min + bin as i32 - 1)
    }

    /// `[low, high)` cumulative range of a bin.
    pub fn range(&self, bin: usize) -> (u32, u32) {
        (self.cum[bin], self.cum[bin + 1])
    }

    pub fn frequency(&self, bin: usize) -> u32 {
        self.cum[bin + 1] - self.cum[bin]
    }

    /// Probability the coder assigns to `v`.
    pub fn probability(&self, v: i32) -> f64 {
        self.frequency(self.bin_of_value(v)) as f64 / self.total() as f64
    }

    /// Bin whose range contains `target` (`0 <= target < total`).
    pub fn find(&self, target: u32) -> usize {
        // Largest bin with cum[bin] <= target.
        self.cum.partition_point(|&c| c <= target) - 1
    }

    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for c in &self.cum {
            h.update(&c.to_le_bytes());
        }
        h.finalize()
    }
}

/// Bins farther than this many scales from the mean get probability 0
/// (the true mass there is below 1e-32 and can never earn a count).
const CUTOFF_SCALES: f64 = 12.0;

/// Bin probabilities of `N(μ, σ²) * U(-½, ½)`, tails included.
pub fn bin_probabilities(mu: f64, sigma: f64, bounds: Bounds) -> Vec<f64> {
    let s = sigma.max(CDF_SIGMA_FLOOR);
    let n = bounds.alphabet_size();
    let mut p = vec![0.0; n + 2];
    p[0] = normal_sf((mu - (bounds.min as f64 - 0.5)) / s);
    p[n + 1] = normal_sf((bounds.max as f64 + 0.5 - mu) / s);
    let reach = CUTOFF_SCALES * s + 0.5;
    let lo = ((mu - reach).floor().max(bounds.min as f64)) as i32;
    let hi = ((mu + reach).ceil().min(bounds.max as f64)) as i32;
    for v in lo..=hi {
        let t = (v as f64 - mu).abs();
        p[(v - bounds.min) as usize + 1] = (normal_sf((t - 0.5) / s) - normal_sf((t + 0.5) / s)).max(0.0);
    }
    p
}

/// Quantizes the Gaussian-uniform PMF to a table with total `2^16`: every bin
/// gets one count, and the remaining counts are split in proportion to the
/// bin probabilities by largest remainder (ties to the lower bin).
pub fn build_cdf(mu: f64, sigma: f64, bounds: Bounds) -> QuantizedCdf {
    let p = bin_probabilities(mu, sigma, bounds);
    quantize_probabilities(&p, bounds)
}

pub fn quantize_probabilities(p: &[f64], bounds: Bounds) -> QuantizedCdf {
    let bins = p.len();
    let spare = (CDF_TOTAL as usize - bins) as f64;
    let sum: f64 = p.iter().sum();
    let mut freqs = vec![1u32; bins];
    let mut remainders = Vec::with_capacity(bins);
    let mut assigned: i64 = 0;
    for (i, &pi) in p.iter().enumerate() {
        let share = if sum > 0.0 { pi / sum * spare } else { spare / bins as f64 };
        let whole = share.floor();
        freqs[i] += whole as u32;
        assigned += whole as i64;
        remainders.push((share - whole, i));
    }
    let mut left = spare as i64 - assigned;
    // Zero remainders keep index order, so only the positive ones need sorting.
    let (mut pos, zero): (Vec<_>, Vec<_>) = remainders.into_iter().partition(|r| r.0 > 0.0);
    pos.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in pos.iter().chain(&zero).cycle() {
        if left <= 0 {
            break;
        }
        freqs[i] += 1;
        left -= 1;
    }
    while left < 0 {
        // Only reachable through accumulated rounding; take from the largest bin.
        let (i, _) = freqs.iter().enumerate().max_by_key(|(i, f)| (**f, usize::MAX - i)).expect("bins");
        freqs[i] -= 1;
        left += 1;
    }
    QuantizedCdf::from_frequencies(bounds, &freqs).expect("quantized table is complete")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrow_scale_concentrates_mass() {
        let b = Bounds::DEFAULT;
        let cdf = build_cdf(0.0, 0.01, b);
        let f = cdf.frequency(cdf.bin_of_value(0));
        assert!(f >= CDF_TOTAL - (b.alphabet_size() as u32 + 1), "{f}");
        assert_eq!(cdf.cumulative()[0], 0);
        assert_eq!(cdf.total(), CDF_TOTAL);
    }

    #[test]
    fn every_bin_positive_and_monotone() {
        for &(mu, s) in &[(0.0, 0.01), (3.7, 0.4), (-120.0, 2.0), (127.0, 90.0), (0.2, 1e-9)] {
            let cdf = build_cdf(mu, s, Bounds::DEFAULT);
            assert_eq!(cdf.bins(), 258);
            assert!(cdf.cumulative().windows(2).all(|w| w[0] < w[1]));
            assert_eq!(*cdf.cumulative().last().unwrap(), CDF_TOTAL);
        }
    }

    #[test]
    fn find_inverts_range() {
        let cdf = build_cdf(1.3, 2.2, Bounds::DEFAULT);
        for bin in 0..cdf.bins() {
            let (lo, hi) = cdf.range(bin);
            assert_eq!(cdf.find(lo), bin);
            assert_eq!(cdf.find(hi - 1), bin);
        }
    }

    #[test]
    fn values_and_bins_map_both_ways() {
        let cdf = QuantizedCdf::uniform(Bounds::DEFAULT);
        assert_eq!(cdf.bin_of_value(-128), 1);
        assert_eq!(cdf.value_of_bin(1), Some(-128));
        assert_eq!(cdf.value_of_bin(256), Some(127));
        assert_eq!(cdf.value_of_bin(0), None);
        assert_eq!(cdf.value_of_bin(257), None);
    }

    /// `KL(p || q)` in bits between exact bin probabilities and the table.
    fn kl_bits(mu: f64, s: f64) -> f64 {
        let b = Bounds::DEFAULT;
        let p = bin_probabilities(mu, s, b);
        let cdf = build_cdf(mu, s, b);
        p.iter()
            .enumerate()
            .filter(|(_, &pi)| pi > 0.0)
            .map(|(i, &pi)| pi * (pi * CDF_TOTAL as f64 / cdf.frequency(i) as f64).log2())
            .sum()
    }

    #[test]
    fn kl_within_floor_cost_bound() {
        // Each bin keeps at least its proportional share of the spare counts,
        // so q >= p (T - bins) / T and KL <= log2(T / (T - bins)).
        let bound = (CDF_TOTAL as f64 / (CDF_TOTAL as f64 - 258.0)).log2();
        for si in 0..=40 {
            let s = 0.05 * (64.0f64 / 0.05).powf(si as f64 / 40.0);
            for mi in 0..=16 {
                let mu = -8.0 + mi as f64;
                let kl = kl_bits(mu, s);
                assert!(kl >= -1e-12 && kl <= bound, "mu={mu} s={s} kl={kl}");
            }
        }
    }

    #[test]
    fn one_count_floor_dominates_kl_for_narrow_tables() {
        // With 258 bins each holding at least one count out of 2^16, every
        // bin the model considers empty still costs 1/65536 of the mass. A
        // near-deterministic symbol loses 257 counts: KL ≈ log2(65536/65279).
        let kl = kl_bits(0.0, 0.05);
        assert!(kl > 1e-3 && kl < 6e-3, "{kl}");
        assert!(kl_bits(0.0, 8.0) > 1e-3);
        // Only when nearly every bin carries real mass does KL drop below 1e-3.
        assert!(kl_bits(0.0, 64.0) < 1e-3);
    }

    #[test]
    fn rejects_incomplete_tables() {
        let b = Bounds::new(-1, 1).unwrap();
        assert!(QuantizedCdf::from_frequencies(b, &[1, 2, 3]).is_none());
        assert!(QuantizedCdf::from_frequencies(b, &[0, 1, 1, 1, CDF_TOTAL - 3]).is_none());
        assert!(QuantizedCdf::from_frequencies(b, &[1, 1, 1, 1, CDF_TOTAL - 4]).is_some());
    }
}
