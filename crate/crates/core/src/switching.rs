//! ADC switch policies: which antennas get the high-resolution converters.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{lloyd_max_design, AdcSpec, AdcSwitchVector};
use crate::spectral::ChannelSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchPolicy {
    NormBased,
    Random,
    Fixed(Vec<bool>),
}

/// Aggregate channel energy of antenna `n` over all users.
pub fn antenna_norms(channels: &ChannelSet) -> Vec<f64> {
    (0..channels.n_antennas()).map(|n| channels.antenna_energy(n)).collect()
}

/// Antenna indices sorted by descending energy, lowest index first on ties.
pub fn rank_by_norm(norms: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..norms.len()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(Error::config(format!("K = {k} exceeds N = {n}")));
    }
    Ok(())
}

/// High-resolution ADCs on the `k` strongest antennas.
pub fn norm_based_switch(channels: &ChannelSet, k: usize) -> Result<AdcSwitchVector> {
    let n = channels.n_antennas();
    check_k(n, k)?;
    let mut delta = vec![false; n];
    for &a in rank_by_norm(&antenna_norms(channels)).iter().take(k) {
        delta[a] = true;
    }
    Ok(AdcSwitchVector::new(delta))
}

/// High-resolution ADCs on a uniformly drawn `k`-subset.
pub fn random_switch<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<AdcSwitchVector> {
    check_k(n, k)?;
    let mut delta = vec![false; n];
    for a in sample(rng, n, k) {
        delta[a] = true;
    }
    Ok(AdcSwitchVector::new(delta))
}

impl SwitchPolicy {
    pub fn select<R: Rng + ?Sized>(&self, channels: &ChannelSet, k: usize, rng: &mut R) -> Result<AdcSwitchVector> {
        match self {
            SwitchPolicy::NormBased => norm_based_switch(channels, k),
            SwitchPolicy::Random => random_switch(channels.n_antennas(), k, rng),
            SwitchPolicy::Fixed(d) => AdcSwitchVector::with_count(d.clone(), k),
        }
    }

    /// Antenna order in which converters are handed out, best first.
    pub fn order<R: Rng + ?Sized>(&self, channels: &ChannelSet, rng: &mut R) -> Vec<usize> {
        let n = channels.n_antennas();
        match self {
            SwitchPolicy::NormBased => rank_by_norm(&antenna_norms(channels)),
            SwitchPolicy::Random => sample(rng, n, n).into_vec(),
            SwitchPolicy::Fixed(d) => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by_key(|&a| (!d.get(a).copied().unwrap_or(false), a));
                idx
            }
        }
    }
}

/// Converter counts per resolution. Antennas not covered by `highres` or
/// `multibit` get one-bit ADCs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdcPopulation {
    pub highres: usize,
    /// `(bits, count)` pairs for Lloyd-Max quantizers.
    #[serde(default)]
    pub multibit: Vec<(u32, usize)>,
}

impl AdcPopulation {
    pub fn mixed(k: usize) -> Self {
        Self { highres: k, multibit: Vec::new() }
    }

    pub fn covered(&self) -> usize {
        self.highres + self.multibit.iter().map(|(_, c)| c).sum::<usize>()
    }

    /// Specs in hand-out order: high resolution, then multi-bit by
    /// descending width, then one-bit.
    pub fn ranked_specs(&self, n: usize) -> Result<Vec<AdcSpec>> {
        if self.covered() > n {
            return Err(Error::config(format!("ADC population covers {} > N = {n} antennas", self.covered())));
        }
        let mut widths = self.multibit.clone();
        widths.sort_by_key(|w| std::cmp::Reverse(w.0));
        let mut out = vec![AdcSpec::HighRes; self.highres];
        for (bits, count) in widths {
            let spec = if bits == 1 { AdcSpec::OneBit } else { lloyd_max_design(bits, 1.0)? };
            out.extend(std::iter::repeat_n(spec, count));
        }
        out.resize(n, AdcSpec::OneBit);
        Ok(out)
    }

    /// Per-antenna specs with the ranked converters assigned along `order`.
    pub fn assign(&self, order: &[usize]) -> Result<Vec<AdcSpec>> {
        let ranked = self.ranked_specs(order.len())?;
        let mut specs = vec![AdcSpec::OneBit; order.len()];
        for (&a, s) in order.iter().zip(ranked) {
            specs[a] = s;
        }
        Ok(specs)
    }
}
