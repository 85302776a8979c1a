//! Surrogate objectives (docking, drug-likeness, synthesizability), their
//! combination into a training reward, and evaluation metrics.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::ligand::{CanonicalForm, FragmentLibrary, LigandState};
use crate::pocket::{Residue, NUM_RESIDUE_TYPES};

pub const FINGERPRINT_BITS: usize = 256;
pub const FINGERPRINT_RADIUS: usize = 2;

/// Hydrophilicity per residue type, ALA..VAL alphabetical three-letter order.
pub const DEFAULT_POLARITY: [f64; NUM_RESIDUE_TYPES] = [
    0.2, 0.9, 0.8, 1.0, 0.3, 0.8, 1.0, 0.4, 0.7, 0.0, 0.0, 0.9, 0.1, 0.05, 0.35, 0.6, 0.5, 0.15, 0.4, 0.05,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Target heavy atoms per Å of pocket radius of gyration.
    pub rho: f64,
    pub sigma_size: f64,
    pub sigma_polarity: f64,
    /// Reported docking score is `-ds_scale · q_ds`.
    pub ds_scale: f64,
    pub qed_target_fragments: f64,
    pub residue_polarity: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            rho: 1.5,
            sigma_size: 4.0,
            sigma_polarity: 0.2,
            ds_scale: 12.0,
            qed_target_fragments: 4.0,
            residue_polarity: DEFAULT_POLARITY.to_vec(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_size > 0.0 && self.sigma_polarity > 0.0) {
            return Err(Error::config("reward.sigma", "widths must be positive"));
        }
        if self.residue_polarity.len() != NUM_RESIDUE_TYPES {
            return Err(Error::config(
                "reward.residue_polarity",
                format!("need {NUM_RESIDUE_TYPES} entries, got {}", self.residue_polarity.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_ds: f64,
    pub w_qed: f64,
    pub w_sa: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights::DOCKING_ONLY
    }
}

impl RewardWeights {
    pub const DOCKING_ONLY: RewardWeights = RewardWeights {
        w_ds: 1.0,
        w_qed: 0.0,
        w_sa: 0.0,
    };

    pub fn new(w_ds: f64, w_qed: f64, w_sa: f64) -> Result<Self> {
        let w = RewardWeights { w_ds, w_qed, w_sa };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_ds, self.w_qed, self.w_sa];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("weights", format!("weights must be nonnegative, got {ws:?}")));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("weights", format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

impl std::str::FromStr for RewardWeights {
    type Err = Error;

    /// `"w_ds,w_qed,w_sa"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::config("weights", format!("{s:?}: {e}")))?;
        match parts[..] {
            [a, b, c] => RewardWeights::new(a, b, c),
            _ => Err(Error::config("weights", format!("expected three comma-separated values, got {s:?}"))),
        }
    }
}

fn require_terminal(s: &LigandState) -> Result<()> {
    if !s.terminal || s.is_empty() {
        return Err(Error::State("objective needs a nonempty terminal ligand".into()));
    }
    Ok(())
}

/// Mean residue polarity of the pocket.
pub fn pocket_polarity(cfg: &RewardConfig, residues: &[Residue]) -> f64 {
    residues.iter().map(|r| cfg.residue_polarity[r.residue_type]).sum::<f64>() / residues.len() as f64
}

pub fn ligand_size(library: &FragmentLibrary, s: &LigandState) -> f64 {
    s.nodes.iter().map(|n| library.get(n.fragment).size as f64).sum()
}

pub fn ligand_polarity(library: &FragmentLibrary, s: &LigandState) -> f64 {
    s.nodes.iter().map(|n| library.get(n.fragment).polarity).sum::<f64>() / s.len() as f64
}

/// Size and polarity targets a ligand is scored against; invariant under rigid motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocketTargets {
    pub size: f64,
    pub polarity: f64,
}

pub fn pocket_targets(cfg: &RewardConfig, residues: &[Residue]) -> PocketTargets {
    let coords: Vec<_> = residues.iter().map(|r| r.ca).collect();
    PocketTargets {
        size: cfg.rho * geom::radius_of_gyration(&coords),
        polarity: pocket_polarity(cfg, residues),
    }
}

/// `q_ds ∈ [0, 1]`: Gaussian match of ligand size and polarity to the pocket.
pub fn docking_proxy(cfg: &RewardConfig, targets: PocketTargets, library: &FragmentLibrary, s: &LigandState) -> Result<f64> {
    require_terminal(s)?;
    let ds = ligand_size(library, s) - targets.size;
    let dp = ligand_polarity(library, s) - targets.polarity;
    Ok((-ds * ds / (2.0 * cfg.sigma_size.powi(2))).exp() * (-dp * dp / (2.0 * cfg.sigma_polarity.powi(2))).exp())
}

pub fn docking_score(cfg: &RewardConfig, q_ds: f64) -> f64 {
    -cfg.ds_scale * q_ds
}

pub fn qed_proxy(cfg: &RewardConfig, s: &LigandState) -> Result<f64> {
    require_terminal(s)?;
    let d = s.len() as f64 - cfg.qed_target_fragments;
    Ok((-d * d / 2.0).exp())
}

/// Share of the most common fragment type.
pub fn sa_proxy(s: &LigandState) -> Result<f64> {
    require_terminal(s)?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for n in &s.nodes {
        *counts.entry(n.fragment).or_default() += 1;
    }
    Ok(*counts.values().max().unwrap() as f64 / s.len() as f64)
}

pub fn combined_quality(q_ds: f64, q_qed: f64, q_sa: f64, w: &RewardWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.w_ds * q_ds + w.w_qed * q_qed + w.w_sa * q_sa)
}

/// Per-molecule objective values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeScores {
    pub ds: f64,
    pub q_ds: f64,
    pub qed: f64,
    pub sa: f64,
    pub quality: f64,
}

/// Training reward `R = max(quality, floor)^β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardFn {
    pub config: RewardConfig,
    pub weights: RewardWeights,
    pub exponent: f64,
    pub floor: f64,
}

impl Default for RewardFn {
    fn default() -> Self {
        RewardFn {
            config: RewardConfig::default(),
            weights: RewardWeights::default(),
            exponent: 4.0,
            floor: 0.01,
        }
    }
}

impl RewardFn {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.weights.validate()?;
        if !(self.exponent > 0.0) {
            return Err(Error::config("reward_exponent", "must be positive"));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(Error::config("reward_floor", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn scores(&self, targets: PocketTargets, library: &FragmentLibrary, s: &LigandState) -> Result<MoleculeScores> {
        let q_ds = docking_proxy(&self.config, targets, library, s)?;
        let qed = qed_proxy(&self.config, s)?;
        let sa = sa_proxy(s)?;
        Ok(MoleculeScores {
            ds: docking_score(&self.config, q_ds),
            q_ds,
            qed,
            sa,
            quality: combined_quality(q_ds, qed, sa, &self.weights)?,
        })
    }

    pub fn reward_from_quality(&self, quality: f64) -> f64 {
        quality.max(self.floor).powf(self.exponent)
    }

    pub fn reward(&self, targets: PocketTargets, library: &FragmentLibrary, s: &LigandState) -> Result<f64> {
        Ok(self.reward_from_quality(self.scores(targets, library, s)?.quality))
    }
}

/// Hashed rooted-neighbourhood fingerprint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub bits: Vec<bool>,
}

impl Fingerprint {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Fingerprint { bits }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn fnv(words: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    for &w in words {
        h.write_u64(w);
    }
    h.finish()
}

/// Sets one bit per (node, radius) label, radius 0..=2. Labels refine the
/// fragment id with the sorted multiset of (own ap, neighbour ap, neighbour label).
pub fn fingerprint(s: &LigandState) -> Fingerprint {
    let n = s.len();
    let mut bits = vec![false; FINGERPRINT_BITS];
    let mut labels: Vec<u64> = s.nodes.iter().map(|v| fnv(&[0, v.fragment as u64])).collect();
    for r in 0..=FINGERPRINT_RADIUS {
        if r > 0 {
            labels = (0..n)
                .map(|v| {
                    let mut nb: Vec<[u64; 3]> = s
                        .incident(v)
                        .map(|(u, my_ap, their_ap)| [my_ap as u64, their_ap as u64, labels[u]])
                        .collect();
                    nb.sort_unstable();
                    let mut words = vec![r as u64, labels[v]];
                    words.extend(nb.iter().flatten());
                    fnv(&words)
                })
                .collect();
        }
        for &l in &labels {
            bits[(l % FINGERPRINT_BITS as u64) as usize] = true;
        }
    }
    Fingerprint { bits }
}

/// `1 − |a ∧ b| / |a ∨ b|`, zero when both are empty.
pub fn tanimoto_distance(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.bits.len() != b.bits.len() {
        return Err(Error::Invalid(format!(
            "fingerprint lengths differ: {} vs {}",
            a.bits.len(),
            b.bits.len()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 0.0 } else { 1.0 - inter as f64 / union as f64 })
}

/// Mean pairwise Tanimoto distance over unordered pairs.
pub fn diversity(fps: &[Fingerprint]) -> Result<f64> {
    if fps.len() < 2 {
        return Err(Error::Invalid(format!("diversity needs at least 2 molecules, got {}", fps.len())));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..fps.len() {
        for j in i + 1..fps.len() {
            total += tanimoto_distance(&fps[i], &fps[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub fn diversity_of_states(states: &[LigandState]) -> Result<f64> {
    diversity(&states.iter().map(fingerprint).collect::<Vec<_>>())
}

/// Mean of the `k` most negative scores (all of them when `k > n`).
pub fn top_k_mean(scores: &[f64], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Invalid("top-k of an empty list".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = k.min(sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One scored molecule as written by sampling and read back by evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub pocket: String,
    pub canonical: CanonicalForm,
    pub state: LigandState,
    #[serde(flatten)]
    pub scores: MoleculeScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocketMetrics {
    pub pocket: String,
    pub molecules: usize,
    /// `None` with fewer than two molecules.
    pub diversity: Option<f64>,
    pub ds_mean: f64,
    pub ds_top10_mean: f64,
    pub qed_mean: f64,
    pub sa_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub diversity: f64,
    pub ds_mean: f64,
    pub ds_top10_mean: f64,
    pub qed_mean: f64,
    pub sa_mean: f64,
    pub per_pocket: Vec<PocketMetrics>,
}

/// Metrics for one molecule set: computed per pocket, then averaged across pockets.
pub fn set_metrics(records: &[MoleculeRecord], top_k: usize) -> Result<SetMetrics> {
    if records.is_empty() {
        return Err(Error::Invalid("no molecules to evaluate".into()));
    }
    let mut by_pocket: BTreeMap<&str, Vec<&MoleculeRecord>> = BTreeMap::new();
    for r in records {
        by_pocket.entry(&r.pocket).or_default().push(r);
    }
    let mut per_pocket = Vec::with_capacity(by_pocket.len());
    for (pocket, rs) in by_pocket {
        let ds: Vec<f64> = rs.iter().map(|r| r.scores.ds).collect();
        let fps: Vec<Fingerprint> = rs.iter().map(|r| fingerprint(&r.state)).collect();
        per_pocket.push(PocketMetrics {
            pocket: pocket.to_string(),
            molecules: rs.len(),
            diversity: if fps.len() >= 2 { Some(diversity(&fps)?) } else { None },
            ds_mean: mean(&ds),
            ds_top10_mean: top_k_mean(&ds, top_k)?,
            qed_mean: mean(&rs.iter().map(|r| r.scores.qed).collect::<Vec<_>>()),
            sa_mean: mean(&rs.iter().map(|r| r.scores.sa).collect::<Vec<_>>()),
        });
    }
    let divs: Vec<f64> = per_pocket.iter().filter_map(|p| p.diversity).collect();
    let avg = |f: fn(&PocketMetrics) -> f64| mean(&per_pocket.iter().map(f).collect::<Vec<_>>());
    Ok(SetMetrics {
        diversity: if divs.is_empty() { 0.0 } else { mean(&divs) },
        ds_mean: avg(|p| p.ds_mean),
        ds_top10_mean: avg(|p| p.ds_top10_mean),
        qed_mean: avg(|p| p.qed_mean),
        sa_mean: avg(|p| p.sa_mean),
        per_pocket,
    })
}

/// Mean and standard error over independent sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let m = mean(xs);
        let se = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (var / xs.len() as f64).sqrt()
        };
        MeanSe { mean: m, se }
    }
}

impl std::fmt::Display for MeanSe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.se)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub sets: usize,
    pub diversity: MeanSe,
    pub ds_mean: MeanSe,
    pub ds_top10_mean: MeanSe,
    pub qed_mean: MeanSe,
    pub sa_mean: MeanSe,
    pub per_set: Vec<SetMetrics>,
}

impl EvaluationReport {
    pub fn from_sets(sets: &[Vec<MoleculeRecord>], top_k: usize) -> Result<Self> {
        let per_set = sets.iter().map(|s| set_metrics(s, top_k)).collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&SetMetrics) -> f64| MeanSe::of(&per_set.iter().map(f).collect::<Vec<_>>());
        Ok(EvaluationReport {
            sets: per_set.len(),
            diversity: col(|s| s.diversity),
            ds_mean: col(|s| s.ds_mean),
            ds_top10_mean: col(|s| s.ds_top10_mean),
            qed_mean: col(|s| s.qed_mean),
            sa_mean: col(|s| s.sa_mean),
            per_set,
        })
    }

    /// Markdown row: method, top-10 DS, mean DS, diversity, QED, SA.
    pub fn table_row(&self, method: &str) -> String {
        format!(
            "| {method} | {} | {} | {} | {} | {} |",
            self.ds_top10_mean, self.ds_mean, self.diversity, self.qed_mean, self.sa_mean
        )
    }

    pub fn table_header() -> &'static str {
        "| Method | Top-10 DS | DS | Diversity | QED | SA |\n|---|---|---|---|---|---|"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_parse() {
        let w: RewardWeights = "0.5,0.25,0.25".parse().unwrap();
        assert_eq!(w.w_qed, 0.25);
        assert!("0.5,0.5".parse::<RewardWeights>().is_err());
        assert!("0.5,0.6,0.1".parse::<RewardWeights>().is_err());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_mean(&[-5.0, -9.0, -7.0], 2).unwrap(), -8.0);
        assert_eq!(top_k_mean(&[-5.0, -9.0, -7.0], 1).unwrap(), -9.0);
        assert_eq!(top_k_mean(&[-5.0, -9.0, -7.0], 10).unwrap(), -7.0);
        assert!(top_k_mean(&[], 1).is_err());
    }

    #[test]
    fn tanimoto_examples() {
        let f = |b: &[u8]| Fingerprint::from_bits(b.iter().map(|&x| x == 1).collect());
        assert!((tanimoto_distance(&f(&[1, 1, 0]), &f(&[1, 0, 1])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tanimoto_distance(&f(&[1, 0]), &f(&[0, 1])).unwrap(), 1.0);
        assert_eq!(tanimoto_distance(&f(&[0, 0]), &f(&[0, 0])).unwrap(), 0.0);
        assert!(tanimoto_distance(&f(&[0]), &f(&[0, 0])).is_err());
    }

    #[test]
    fn combined_example() {
        let w = RewardWeights::new(0.5, 0.25, 0.25).unwrap();
        assert!((combined_quality(1.0, 0.4, 0.8, &w).unwrap() - 0.8).abs() < 1e-12);
    }
}
