//! Meta-learning task construction.
//!
//! A spuriousness-aware episode draws, for every class `k`, two distinct
//! attributes `(a_k, a'_k)` from the class's sampling distribution. Support
//! samples come from the class-`k` samples carrying `a_k` but not `a'_k`;
//! query samples from those carrying `a'_k` but not `a_k`. The support and
//! query of one class therefore see different spurious correlations.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{sampling_distribution, GroupIndex, SpuriousnessTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    SpuriousnessAware,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeConfig {
    /// Samples per class in each of support and query.
    pub n_support: usize,
    /// Classes per task; `None` uses every class.
    pub n_classes_per_task: Option<usize>,
    pub retry_budget: usize,
    pub mode: EpisodeMode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_support: 10,
            n_classes_per_task: None,
            retry_budget: 20,
            mode: EpisodeMode::SpuriousnessAware,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_support == 0 {
            return Err(Error::Config("n_support must be at least 1".into()));
        }
        if self.retry_budget == 0 {
            return Err(Error::Config("retry_budget must be at least 1".into()));
        }
        if self.n_classes_per_task == Some(0) {
            return Err(Error::Config("classes_per_task must be at least 1".into()));
        }
        Ok(())
    }
}

/// One task: support and query entries are `(sample index, class)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
    /// `(class, a_k, a'_k)`; empty for random episodes.
    pub chosen_pairs: Vec<(usize, usize, usize)>,
}

impl Episode {
    /// Position of `class` within [`Episode::classes`].
    pub fn local_class(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn dump(&self, sample_ids: &[String], seed: u64) -> EpisodeDump {
        let ids = |entries: &[(usize, usize)]| {
            entries
                .iter()
                .map(|&(s, _)| sample_ids[s].clone())
                .collect()
        };
        EpisodeDump {
            classes: self.classes.clone(),
            pairs: self.chosen_pairs.iter().map(|&(_, a, b)| (a, b)).collect(),
            support_ids: ids(&self.support),
            query_ids: ids(&self.query),
            seed,
        }
    }
}

/// Debugging view of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeDump {
    pub classes: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub support_ids: Vec<String>,
    pub query_ids: Vec<String>,
    pub seed: u64,
}

fn draw_uniform<R: Rng + ?Sized>(candidates: &[usize], rng: &mut R) -> usize {
    candidates[rng.random_range(0..candidates.len())]
}

fn draw_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    WeightedIndex::new(weights).ok().map(|d| d.sample(rng))
}

/// Draws `a_k` from `dist` and `a'_k != a_k` from `dist` renormalized without
/// `a_k`. When the remaining mass is zero the draw is uniform over the other
/// realizable attributes (nonzero probability or nonempty member set).
pub fn sample_attribute_pair<R: Rng + ?Sized>(
    class: usize,
    dist: &[f64],
    index: &GroupIndex,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if dist.len() != index.n_attributes() {
        return Err(Error::Shape(format!(
            "distribution over {} attributes for an index of {}",
            dist.len(),
            index.n_attributes()
        )));
    }
    let realizable: Vec<usize> = (0..dist.len())
        .filter(|&a| dist[a] > 0.0 || !index.member(class, a).is_empty())
        .collect();
    if realizable.len() < 2 {
        return Err(Error::Sampling {
            class,
            message: format!(
                "need two realizable attributes, found {}",
                realizable.len()
            ),
        });
    }
    let first = draw_weighted(dist, rng).unwrap_or_else(|| draw_uniform(&realizable, rng));
    let mut rest = dist.to_vec();
    rest[first] = 0.0;
    let second = draw_weighted(&rest, rng).unwrap_or_else(|| {
        let others: Vec<usize> = realizable.iter().copied().filter(|&a| a != first).collect();
        draw_uniform(&others, rng)
    });
    Ok((first, second))
}

fn select_classes<R: Rng + ?Sized>(
    n_classes: usize,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match cfg.n_classes_per_task {
        Some(k) if k > n_classes => Err(Error::Config(format!(
            "classes_per_task {k} exceeds the {n_classes} available classes"
        ))),
        Some(k) if k < n_classes => {
            let mut chosen = index::sample(rng, n_classes, k).into_vec();
            chosen.sort_unstable();
            Ok(chosen)
        }
        _ => Ok((0..n_classes).collect()),
    }
}

fn pick<R: Rng + ?Sized>(pool: &[usize], n: usize, class: usize, rng: &mut R) -> Vec<(usize, usize)> {
    index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| (pool[i], class))
        .collect()
}

pub fn build_episode<R: Rng + ?Sized>(
    index: &GroupIndex,
    table: &SpuriousnessTable,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    cfg.validate()?;
    let classes = select_classes(index.n_classes(), cfg, rng)?;
    let n = cfg.n_support;
    let mut episode = Episode {
        classes: classes.clone(),
        support: Vec::with_capacity(classes.len() * n),
        query: Vec::with_capacity(classes.len() * n),
        chosen_pairs: Vec::with_capacity(classes.len()),
    };
    for &k in &classes {
        let dist = sampling_distribution(table, k)?;
        let mut last = None;
        let mut accepted = false;
        for _ in 0..cfg.retry_budget {
            let (a, b) = sample_attribute_pair(k, &dist, index, rng)?;
            let support_pool = index.difference(k, a, b);
            let query_pool = index.difference(k, b, a);
            if support_pool.len() >= n && query_pool.len() >= n {
                episode.support.extend(pick(&support_pool, n, k, rng));
                episode.query.extend(pick(&query_pool, n, k, rng));
                episode.chosen_pairs.push((k, a, b));
                accepted = true;
                break;
            }
            last = Some((a, b, support_pool.len(), query_pool.len()));
        }
        if !accepted {
            let (first, second, s, q) = last.expect("retry budget is at least one");
            return Err(Error::EpisodeBudget {
                class: k,
                attempts: cfg.retry_budget,
                first,
                second,
                reason: format!("difference sets hold {s} and {q} samples, need {n} each"),
            });
        }
    }
    Ok(episode)
}

/// Support and query drawn uniformly from each class, ignoring attributes.
pub fn build_random_episode<R: Rng + ?Sized>(
    index: &GroupIndex,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    cfg.validate()?;
    let classes = select_classes(index.n_classes(), cfg, rng)?;
    let n = cfg.n_support;
    let mut support = Vec::with_capacity(classes.len() * n);
    let mut query = Vec::with_capacity(classes.len() * n);
    for &k in &classes {
        let pool = index.class_samples(k);
        if pool.len() < 2 * n {
            return Err(Error::Sampling {
                class: k,
                message: format!("{} samples, need {} for a random episode", pool.len(), 2 * n),
            });
        }
        let drawn = pick(pool, 2 * n, k, rng);
        support.extend_from_slice(&drawn[..n]);
        query.extend_from_slice(&drawn[n..]);
    }
    Ok(Episode {
        classes,
        support,
        query,
        chosen_pairs: Vec::new(),
    })
}

/// Dispatches on `cfg.mode`.
pub fn build<R: Rng + ?Sized>(
    index: &GroupIndex,
    table: &SpuriousnessTable,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    match cfg.mode {
        EpisodeMode::SpuriousnessAware => build_episode(index, table, cfg, rng),
        EpisodeMode::Random => build_random_episode(index, cfg, rng),
    }
}
