//! Closed-form and exact evaluation of the quanta loss model.
//!
//! Quanta are used with Zipf frequencies `p_k = k^-(alpha+1) / Z`. A model that
//! has learned the first `n` quanta pays loss `a_k` on samples that use a
//! learned quantum and `b_k` on the rest, so
//! `L_n = sum_{k<=n} a_k p_k + sum_{k>n} b_k p_k`.
//!
//! Everything here is in nats. Use [`nats_to_bits`] at reporting time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiply a loss in nats by this to obtain bits.
pub const BITS_PER_NAT: f64 = std::f64::consts::LOG2_E;

pub fn nats_to_bits(nats: f64) -> f64 {
    nats * BITS_PER_NAT
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits / BITS_PER_NAT
}

/// Smallest partial-sum cutoff used by the exact series evaluation.
const MIN_SERIES_CUTOFF: u64 = 1_000_000;

/// Riemann zeta for real `s > 1`.
///
/// Partial sum up to an adaptively chosen `m`, then the Euler–Maclaurin tail
/// through the `B_6` term. The cutoff doubles until the first omitted term is
/// below `1e-16`, which keeps the absolute error far under `1e-9`.
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) {
        return Err(Error::Domain(format!("zeta(s) diverges for s = {s}")));
    }
    if s.is_infinite() {
        return Ok(1.0);
    }
    let mut m: u64 = 16;
    while em_omitted_term(s, m as f64) > 1e-16 && m < (1 << 24) {
        m *= 2;
    }
    let head: f64 = (1..=m).rev().map(|k| (k as f64).powf(-s)).sum();
    Ok(head + power_tail(s, m as f64))
}

/// `sum_{k > m} k^-s` by Euler–Maclaurin.
fn power_tail(s: f64, m: f64) -> f64 {
    let f = m.powf(-s);
    let integral = m * f / (s - 1.0);
    let c1 = s * f / m / 12.0;
    let c3 = s * (s + 1.0) * (s + 2.0) * f / m.powi(3) / 720.0;
    let c5 = s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * f / m.powi(5) / 30240.0;
    integral - 0.5 * f + c1 - c3 + c5
}

fn em_omitted_term(s: f64, m: f64) -> f64 {
    let rising: f64 = (0..7).map(|j| s + j as f64).product();
    rising * m.powf(-s - 7.0) / 1_209_600.0
}

/// `sum_{k > m} ln(k) k^-s` by Euler–Maclaurin through the first derivative
/// term. Only used with `m >= 1e6`, where further terms are below `1e-20`.
fn log_power_tail(s: f64, m: f64) -> f64 {
    let f = m.powf(-s);
    let ln_m = m.ln();
    let integral = m * f * (ln_m / (s - 1.0) + 1.0 / ((s - 1.0) * (s - 1.0)));
    let derivative = f / m * (1.0 - s * ln_m);
    integral - 0.5 * f * ln_m - derivative / 12.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "size")]
pub enum Support {
    Infinite,
    Finite(u64),
}

/// Zipf distribution over quanta, `p_k ∝ k^-(alpha+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantaDistribution {
    alpha: f64,
    support: Support,
    normalizer: f64,
}

impl QuantaDistribution {
    pub fn new(alpha: f64, support: Support) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be positive and finite, got {alpha}")));
        }
        let s = alpha + 1.0;
        let normalizer = match support {
            Support::Infinite => zeta(s)?,
            Support::Finite(0) => {
                return Err(Error::Domain("finite support needs K >= 1".into()));
            }
            Support::Finite(size) => (1..=size).rev().map(|i| (i as f64).powf(-s)).sum(),
        };
        Ok(Self { alpha, support, normalizer })
    }

    pub fn infinite(alpha: f64) -> Result<Self> {
        Self::new(alpha, Support::Infinite)
    }

    pub fn finite(alpha: f64, size: u64) -> Result<Self> {
        Self::new(alpha, Support::Finite(size))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The Zipf exponent `alpha + 1`.
    pub fn exponent(&self) -> f64 {
        self.alpha + 1.0
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// `Z`: `zeta(alpha+1)` or the truncated sum for finite support.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn pmf(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("quanta are indexed from 1".into()));
        }
        if let Support::Finite(size) = self.support {
            if k > size {
                return Err(Error::Domain(format!("k = {k} outside finite support of size {size}")));
            }
        }
        Ok(self.weight(k) / self.normalizer)
    }

    /// Probabilities for `k = 1..=size` (finite support only).
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        match self.support {
            Support::Finite(size) => Ok((1..=size).map(|k| self.weight(k) / self.normalizer).collect()),
            Support::Infinite => Err(Error::Unsupported("probabilities() needs finite support".into())),
        }
    }

    fn weight(&self, k: u64) -> f64 {
        (k as f64).powf(-self.exponent())
    }

    fn cutoff(&self, n: u64) -> u64 {
        match self.support {
            Support::Infinite => MIN_SERIES_CUTOFF.max(n.saturating_mul(100)),
            Support::Finite(size) => size,
        }
    }

    /// Tail sums beyond `n`, normalized: (`sum_{k>n} p_k`, `sum_{k>n} ln(k) p_k`).
    fn tail_sums(&self, n: u64) -> (f64, f64) {
        let s = self.exponent();
        let cutoff = self.cutoff(n);
        let (mut mass, mut log_mass) = match self.support {
            Support::Infinite => (power_tail(s, cutoff as f64), log_power_tail(s, cutoff as f64)),
            Support::Finite(_) => (0.0, 0.0),
        };
        for k in (n + 1..=cutoff).rev() {
            let w = self.weight(k);
            mass += w;
            log_mass += w * (k as f64).ln();
        }
        (mass / self.normalizer, log_mass / self.normalizer)
    }

    fn head_mass(&self, n: u64) -> f64 {
        let n = match self.support {
            Support::Finite(size) => n.min(size),
            Support::Infinite => n,
        };
        (1..=n).rev().map(|k| self.weight(k)).sum::<f64>() / self.normalizer
    }
}

/// Free-function form of [`QuantaDistribution::pmf`].
pub fn zipf_pmf(k: u64, dist: &QuantaDistribution) -> Result<f64> {
    dist.pmf(k)
}

/// Per-quantum loss before (`b_k`) and after (`a_k`) learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossProfile {
    /// `a_k = a`, `b_k = b`.
    Constant { a: f64, b: f64 },
    /// `b_k = -ln p_k`, `a_k = 0`.
    LogFreq,
    /// `b_k = -ln p_k`, `a_k = -ln(C p_k)` with `C > 1`.
    LogOffset { c: f64 },
}

impl LossProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossProfile::Constant { a, b } => {
                if !(a >= 0.0 && b >= a && b.is_finite()) {
                    return Err(Error::Domain(format!("constant profile needs b >= a >= 0, got a={a}, b={b}")));
                }
            }
            LossProfile::LogFreq => {}
            LossProfile::LogOffset { c } => {
                if !(c > 1.0 && c.is_finite()) {
                    return Err(Error::Domain(format!("log-offset profile needs C > 1, got {c}")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossProfile::Constant { a, b } => write!(f, "constant:{a},{b}"),
            LossProfile::LogFreq => write!(f, "logfreq"),
            LossProfile::LogOffset { c } => write!(f, "logoffset:{c}"),
        }
    }
}

impl FromStr for LossProfile {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad number `{s}` in profile `{text}`")))
        };
        let profile = match name.trim().to_ascii_lowercase().as_str() {
            "constant" => {
                let (a, b) = args
                    .split_once(',')
                    .ok_or_else(|| Error::Domain(format!("constant profile needs `a,b`, got `{text}`")))?;
                LossProfile::Constant { a: parse(a)?, b: parse(b)? }
            }
            "logfreq" => LossProfile::LogFreq,
            "logoffset" => LossProfile::LogOffset { c: parse(args)? },
            other => return Err(Error::Domain(format!("unknown loss profile `{other}`"))),
        };
        profile.validate()?;
        Ok(profile)
    }
}

fn combine(dist: &QuantaDistribution, profile: &LossProfile, head: f64, tail: f64, tail_log: f64, all_log: f64) -> f64 {
    let s = dist.exponent();
    let ln_z = dist.normalizer().ln();
    match *profile {
        LossProfile::Constant { a, b } => a * head + b * tail,
        LossProfile::LogFreq => s * tail_log + ln_z * tail,
        // sum_k -ln(p_k) p_k over the whole support, minus ln C on the learned head.
        LossProfile::LogOffset { c } => -c.ln() * head + s * all_log + ln_z * (head + tail),
    }
}

/// Exact `L_n`: direct summation to `max(1e6, 100 n)` plus an analytic tail.
pub fn expected_loss_exact(n: u64, dist: &QuantaDistribution, profile: &LossProfile) -> Result<f64> {
    profile.validate()?;
    let head = dist.head_mass(n);
    let (tail, tail_log) = dist.tail_sums(n);
    let all_log = match profile {
        LossProfile::LogOffset { .. } => dist.tail_sums(0).1,
        _ => 0.0,
    };
    Ok(combine(dist, profile, head, tail, tail_log, all_log))
}

/// [`expected_loss_exact`] for many `n` at once, sharing one pass over the series.
pub fn expected_loss_curve(ns: &[u64], dist: &QuantaDistribution, profile: &LossProfile) -> Result<Vec<f64>> {
    profile.validate()?;
    if ns.is_empty() {
        return Ok(Vec::new());
    }
    let max_n = ns.iter().copied().max().unwrap_or(0);
    let cutoff = dist.cutoff(max_n);
    let s = dist.exponent();
    let z = dist.normalizer();

    let mut wanted: Vec<u64> = ns.to_vec();
    wanted.sort_unstable();
    wanted.dedup();

    // Tail sums, accumulated from the far end toward k = 1.
    let mut tails = vec![(0.0, 0.0); wanted.len()];
    let (mut mass, mut log_mass) = match dist.support() {
        Support::Infinite => (power_tail(s, cutoff as f64), log_power_tail(s, cutoff as f64)),
        Support::Finite(_) => (0.0, 0.0),
    };
    let mut slot = wanted.len();
    let mut k = cutoff;
    loop {
        while slot > 0 && wanted[slot - 1] >= k {
            slot -= 1;
            tails[slot] = (mass / z, log_mass / z);
        }
        if k == 0 {
            break;
        }
        let w = (k as f64).powf(-s);
        mass += w;
        log_mass += w * (k as f64).ln();
        k -= 1;
    }
    let all_log = log_mass / z;

    let mut heads = vec![0.0; wanted.len()];
    let mut head = 0.0;
    let mut next = 1u64;
    for (slot, &n) in wanted.iter().enumerate() {
        let upto = match dist.support() {
            Support::Finite(size) => n.min(size),
            Support::Infinite => n,
        };
        while next <= upto {
            head += (next as f64).powf(-s);
            next += 1;
        }
        heads[slot] = head / z;
    }

    Ok(ns
        .iter()
        .map(|n| {
            let slot = wanted.binary_search(n).expect("n was inserted above");
            let (tail, tail_log) = tails[slot];
            combine(dist, profile, heads[slot], tail, tail_log, all_log)
        })
        .collect())
}

/// Large-`n` closed form of `L_n` (integral approximation of the tail).
pub fn expected_loss_closed(n: u64, dist: &QuantaDistribution, profile: &LossProfile) -> Result<f64> {
    profile.validate()?;
    if n == 0 {
        return Err(Error::Domain("closed form needs n >= 1".into()));
    }
    if dist.support() != Support::Infinite {
        return Err(Error::Unsupported("closed-form loss needs infinite support".into()));
    }
    let alpha = dist.alpha();
    let z = dist.normalizer();
    let n = n as f64;
    let power = n.powf(-alpha);
    let entropy_like = (1.0 + alpha + alpha * z.ln()) / (alpha * alpha * z);
    Ok(match *profile {
        LossProfile::Constant { a, b } => a + (b - a) * power / (alpha * z),
        LossProfile::LogFreq => entropy_like * power + (alpha + 1.0) / (alpha * z) * power * n.ln(),
        LossProfile::LogOffset { c } => c.ln() / (alpha * z) * power - c.ln() + entropy_like,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingAxis {
    Params,
    DataMultiEpoch,
    Steps,
}

impl fmt::Display for ScalingAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingAxis::Params => "params",
            ScalingAxis::DataMultiEpoch => "data",
            ScalingAxis::Steps => "steps",
        })
    }
}

/// Predicted scaling law along one resource axis, for `a = 0, b = 1`:
/// `L ≈ prefactor · scale^-exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPrediction {
    pub axis: ScalingAxis,
    pub alpha: f64,
    pub exponent: f64,
    pub prefactor: f64,
    /// Parameters consumed per quantum (`N = C n`).
    pub capacity_per_quantum: f64,
    /// Examples of a quantum needed before it is learned.
    pub data_threshold: f64,
    /// Steps needed to learn the first quantum.
    pub first_quantum_steps: f64,
}

impl ScalingPrediction {
    pub fn new(
        axis: ScalingAxis,
        dist: &QuantaDistribution,
        capacity_per_quantum: f64,
        data_threshold: f64,
        first_quantum_steps: f64,
    ) -> Result<Self> {
        for (name, value) in [
            ("capacity_per_quantum", capacity_per_quantum),
            ("data_threshold", data_threshold),
            ("first_quantum_steps", first_quantum_steps),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {value}")));
            }
        }
        let alpha = dist.alpha();
        let z = dist.normalizer();
        let base = 1.0 / (alpha * z);
        let (exponent, prefactor) = match axis {
            ScalingAxis::Params => (alpha, base * capacity_per_quantum.powf(alpha)),
            ScalingAxis::DataMultiEpoch => {
                let e = alpha / (alpha + 1.0);
                (e, base * (data_threshold * z).powf(e))
            }
            ScalingAxis::Steps => {
                let e = alpha / (alpha + 1.0);
                (e, base * first_quantum_steps.powf(e))
            }
        };
        Ok(Self { axis, alpha, exponent, prefactor, capacity_per_quantum, data_threshold, first_quantum_steps })
    }

    /// Number of quanta learned at the given resource level (floored).
    pub fn quanta_learned(&self, scale: f64, dist: &QuantaDistribution) -> u64 {
        let s = self.alpha + 1.0;
        let continuous = match self.axis {
            ScalingAxis::Params => scale / self.capacity_per_quantum,
            ScalingAxis::DataMultiEpoch => (scale / (self.data_threshold * dist.normalizer())).powf(1.0 / s),
            ScalingAxis::Steps => (scale / self.first_quantum_steps).powf(1.0 / s),
        };
        if !(continuous > 0.0) {
            return 0;
        }
        // Absorb round-off so that exact inversions such as S = T m^(alpha+1) land on m.
        (continuous * (1.0 + 1e-12)).floor() as u64
    }

    fn loss_at(&self, scale: f64, dist: &QuantaDistribution, profile: &LossProfile, expected: ScalingAxis) -> Result<f64> {
        if self.axis != expected {
            return Err(Error::Domain(format!("prediction is for the {} axis, not {expected}", self.axis)));
        }
        if (self.alpha - dist.alpha()).abs() > 1e-12 {
            return Err(Error::Domain("prediction and distribution disagree on alpha".into()));
        }
        if !(scale > 0.0) {
            return Err(Error::Domain(format!("scale must be positive, got {scale}")));
        }
        match self.quanta_learned(scale, dist) {
            0 => expected_loss_exact(0, dist, profile),
            n => expected_loss_closed(n, dist, profile),
        }
    }
}

/// Loss of a network with `params` parameters.
pub fn loss_vs_params(params: f64, pred: &ScalingPrediction, dist: &QuantaDistribution, profile: &LossProfile) -> Result<f64> {
    pred.loss_at(params, dist, profile, ScalingAxis::Params)
}

/// Loss after multi-epoch training on `samples` examples.
pub fn loss_vs_data(samples: f64, pred: &ScalingPrediction, dist: &QuantaDistribution, profile: &LossProfile) -> Result<f64> {
    pred.loss_at(samples, dist, profile, ScalingAxis::DataMultiEpoch)
}

/// Loss after `steps` single-epoch optimization steps.
pub fn loss_vs_steps(steps: f64, pred: &ScalingPrediction, dist: &QuantaDistribution, profile: &LossProfile) -> Result<f64> {
    pred.loss_at(steps, dist, profile, ScalingAxis::Steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_zeta(s: f64, terms: u64) -> f64 {
        let head: f64 = (1..=terms).rev().map(|k| (k as f64).powf(-s)).sum();
        let m = terms as f64;
        head + m.powf(1.0 - s) / (s - 1.0) - 0.5 * m.powf(-s)
    }

    #[test]
    fn zeta_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((zeta(2.0).unwrap() - pi2_6).abs() < 1e-12);
        assert!((zeta(60.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((zeta(4.0).unwrap() - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_matches_brute_force_series() {
        let oracle = brute_zeta(1.4, 100_000_000);
        assert!((zeta(1.4).unwrap() - oracle).abs() < 1e-9, "{} vs {oracle}", zeta(1.4).unwrap());
    }

    #[test]
    fn zeta_rejects_divergent_arguments() {
        assert!(matches!(zeta(1.0), Err(Error::Domain(_))));
        assert!(zeta(0.5).is_err());
        assert!(zeta(f64::NAN).is_err());
    }

    #[test]
    fn pmf_examples() {
        for alpha in [0.1, 0.4, 3.0] {
            let single = QuantaDistribution::finite(alpha, 1).unwrap();
            assert_eq!(zipf_pmf(1, &single).unwrap(), 1.0);
        }
        let two = QuantaDistribution::finite(1.0, 2).unwrap();
        assert!((zipf_pmf(2, &two).unwrap() - 0.2).abs() < 1e-15);
        assert!(zipf_pmf(3, &two).is_err());

        let inf = QuantaDistribution::infinite(0.4).unwrap();
        let oracle = 1.0 / brute_zeta(1.4, 10_000_000);
        assert!((zipf_pmf(1, &inf).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn finite_pmf_sums_to_one() {
        for size in [1, 7, 500] {
            let dist = QuantaDistribution::finite(0.4, size).unwrap();
            let total: f64 = dist.probabilities().unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_mass_is_complete() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let (tail, _) = dist.tail_sums(0);
        assert!((tail - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_loss_limits() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        assert!((expected_loss_exact(0, &dist, &unit).unwrap() - 1.0).abs() < 1e-9);

        let profile = LossProfile::Constant { a: 0.3, b: 0.9 };
        let dist = QuantaDistribution::infinite(2.0).unwrap();
        let far = expected_loss_exact(1_000_000, &dist, &profile).unwrap();
        assert!((far - 0.3).abs() < 1e-8);
    }

    #[test]
    fn exact_loss_matches_direct_tail_sum() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        // 1 - sum of the first ten probabilities, each computed independently.
        let z = brute_zeta(1.4, 50_000_000);
        let head: f64 = (1..=10).map(|k| (k as f64).powf(-1.4) / z).sum();
        let got = expected_loss_exact(10, &dist, &unit).unwrap();
        assert!((got - (1.0 - head)).abs() < 1e-8, "{got} vs {}", 1.0 - head);
    }

    #[test]
    fn finite_support_exact_loss() {
        let dist = QuantaDistribution::finite(1.0, 2).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        assert!((expected_loss_exact(1, &dist, &unit).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(expected_loss_exact(5, &dist, &unit).unwrap(), 0.0);
    }

    #[test]
    fn curve_matches_pointwise_evaluation() {
        let dist = QuantaDistribution::infinite(0.7).unwrap();
        for profile in [LossProfile::Constant { a: 0.1, b: 2.0 }, LossProfile::LogFreq, LossProfile::LogOffset { c: 3.0 }] {
            let ns = [0, 1, 5, 5, 100, 3000];
            let curve = expected_loss_curve(&ns, &dist, &profile).unwrap();
            for (n, value) in ns.iter().zip(&curve) {
                let single = expected_loss_exact(*n, &dist, &profile).unwrap();
                assert!((single - value).abs() < 1e-10, "{profile} n={n}: {single} vs {value}");
            }
        }
    }

    #[test]
    fn closed_form_power_ratio() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let profile = LossProfile::Constant { a: 0.2, b: 1.0 };
        for n in [1, 10, 333] {
            let l1 = expected_loss_closed(n, &dist, &profile).unwrap() - 0.2;
            let l2 = expected_loss_closed(2 * n, &dist, &profile).unwrap() - 0.2;
            assert!((l2 / l1 - 2f64.powf(-0.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_tracks_exact() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        let exact = expected_loss_exact(100, &dist, &unit).unwrap();
        let closed = expected_loss_closed(100, &dist, &unit).unwrap();
        assert!((closed / exact - 1.0).abs() < 0.02);

        let exact = expected_loss_exact(1000, &dist, &LossProfile::LogFreq).unwrap();
        let closed = expected_loss_closed(1000, &dist, &LossProfile::LogFreq).unwrap();
        assert!((closed / exact - 1.0).abs() < 0.05);
    }

    #[test]
    fn closed_form_rejects_finite_support() {
        let dist = QuantaDistribution::finite(0.4, 10).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        assert!(matches!(expected_loss_closed(3, &dist, &unit), Err(Error::Unsupported(_))));
    }

    #[test]
    fn profile_parsing() {
        assert_eq!("constant:0,1".parse::<LossProfile>().unwrap(), LossProfile::Constant { a: 0.0, b: 1.0 });
        assert_eq!("logfreq".parse::<LossProfile>().unwrap(), LossProfile::LogFreq);
        assert_eq!("logoffset:2.5".parse::<LossProfile>().unwrap(), LossProfile::LogOffset { c: 2.5 });
        assert!("logoffset:0.5".parse::<LossProfile>().is_err());
        assert!("constant:1,0".parse::<LossProfile>().is_err());
        assert!("bogus".parse::<LossProfile>().is_err());
        let p = LossProfile::Constant { a: 0.25, b: 1.5 };
        assert_eq!(p.to_string().parse::<LossProfile>().unwrap(), p);
    }

    #[test]
    fn prediction_exponents() {
        for alpha in [0.2, 0.4, 1.0, 2.5] {
            let dist = QuantaDistribution::infinite(alpha).unwrap();
            let p = ScalingPrediction::new(ScalingAxis::Params, &dist, 1.0, 1.0, 1.0).unwrap();
            assert!((p.exponent - alpha).abs() < 1e-12);
            for axis in [ScalingAxis::DataMultiEpoch, ScalingAxis::Steps] {
                let p = ScalingPrediction::new(axis, &dist, 1.0, 1.0, 1.0).unwrap();
                assert!((p.exponent - alpha / (alpha + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn params_axis_examples() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        let pred = ScalingPrediction::new(ScalingAxis::Params, &dist, 1.0, 1.0, 1.0).unwrap();
        for n in [1u64, 17, 500] {
            let a = loss_vs_params(n as f64, &pred, &dist, &unit).unwrap();
            assert_eq!(a, expected_loss_closed(n, &dist, &unit).unwrap());
        }
        let exact = expected_loss_exact(500, &dist, &unit).unwrap();
        let l500 = loss_vs_params(500.0, &pred, &dist, &unit).unwrap();
        assert!((l500 / exact - 1.0).abs() < 0.02);

        let wide = ScalingPrediction::new(ScalingAxis::Params, &dist, 10.0, 1.0, 1.0).unwrap();
        let below = loss_vs_params(5.0, &wide, &dist, &unit).unwrap();
        assert!((below - 1.0).abs() < 1e-9);
        let r = loss_vs_params(800.0, &wide, &dist, &unit).unwrap() / loss_vs_params(400.0, &wide, &dist, &unit).unwrap();
        assert!((r - 2f64.powf(-0.4)).abs() < 1e-12);
    }

    #[test]
    fn data_axis_matches_threshold_search() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        let pred = ScalingPrediction::new(ScalingAxis::DataMultiEpoch, &dist, 1.0, 1.0, 1.0).unwrap();
        let d = 1e4;
        // Largest n with D p_n >= tau, found by walking n upward.
        let z = brute_zeta(1.4, 50_000_000);
        let mut n_oracle = 0u64;
        while d * ((n_oracle + 1) as f64).powf(-1.4) / z >= 1.0 {
            n_oracle += 1;
        }
        assert_eq!(pred.quanta_learned(d, &dist), n_oracle);
        let loss = loss_vs_data(d, &pred, &dist, &unit).unwrap();
        let expected = 1.0 / (0.4 * z) * (n_oracle as f64).powf(-0.4);
        assert!((loss - expected).abs() < 1e-9);

        // Below the first threshold nothing is learned.
        assert!((loss_vs_data(0.5, &pred, &dist, &unit).unwrap() - 1.0).abs() < 1e-9);
        let n1 = pred.quanta_learned(1e6, &dist);
        let n2 = pred.quanta_learned(1e6 * 2f64.powf(1.4), &dist);
        assert!((n2 as i64 - 2 * n1 as i64).abs() <= 1);
    }

    #[test]
    fn steps_axis_examples() {
        let dist = QuantaDistribution::infinite(0.4).unwrap();
        let unit = LossProfile::Constant { a: 0.0, b: 1.0 };
        let pred = ScalingPrediction::new(ScalingAxis::Steps, &dist, 1.0, 1.0, 100.0).unwrap();
        assert!((loss_vs_steps(50.0, &pred, &dist, &unit).unwrap() - 1.0).abs() < 1e-9);
        for m in [1u64, 2, 7, 30] {
            let s = 100.0 * (m as f64).powf(1.4);
            assert_eq!(pred.quanta_learned(s, &dist), m);
        }
        // Independent chain: n = floor((S/T)^(1/(alpha+1))), L = n^-alpha / (alpha zeta).
        let n = (1e5f64 / 100.0).powf(1.0 / 1.4).floor();
        let z = brute_zeta(1.4, 50_000_000);
        let expected = n.powf(-0.4) / (0.4 * z);
        let got = loss_vs_steps(1e5, &pred, &dist, &unit).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!(loss_vs_params(10.0, &pred, &dist, &unit).is_err());
    }

    #[test]
    fn unit_conversion() {
        assert!((nats_to_bits(std::f64::consts::LN_2) - 1.0).abs() < 1e-15);
        assert!((bits_to_nats(nats_to_bits(0.37)) - 0.37).abs() < 1e-15);
    }
}
