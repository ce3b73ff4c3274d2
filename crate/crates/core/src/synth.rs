//! Synthetic score-regression tasks with known ground truth.
//!
//! A universe holds one linear scorer per database: a unit vector `w` whose
//! projection `w . x` is squashed onto the score range through a sigmoid,
//! then perturbed with Gaussian label noise. Databases are kept apart by a
//! minimum pairwise angle so each one is a genuinely distinct task. Users
//! are simplex mixtures of the database scorers blended with an
//! idiosyncratic direction, which controls how much of a user's taste any
//! database can explain.

use crate::error::{Error, Result};
use crate::rng;
use crate::sample::SampleSet;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub feature_dim: usize,
    pub n_databases: usize,
    /// Pairwise separation between database scorers, in degrees, measured
    /// between lines (the absolute cosine is bounded by cos of this angle).
    pub min_pairwise_angle_deg: f64,
    /// Label noise as a fraction of the score range.
    pub noise_sigma: f64,
    pub samples_per_database: usize,
    pub score_min: f64,
    pub score_max: f64,
    /// Optional per-database sigmoid gains to emulate databases with
    /// different criterion sharpness. Empty means gain 1.0 everywhere.
    pub quirk_gains: Vec<f64>,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            feature_dim: 48,
            n_databases: 6,
            min_pairwise_angle_deg: 85.0,
            noise_sigma: 0.05,
            samples_per_database: 2000,
            score_min: 1.0,
            score_max: 10.0,
            quirk_gains: Vec::new(),
        }
    }
}

impl UniverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.n_databases == 0 {
            return Err(Error::Config(
                "universe needs positive dimensions and databases".into(),
            ));
        }
        if !(0.0..=90.0).contains(&self.min_pairwise_angle_deg) {
            return Err(Error::Config(
                "min_pairwise_angle_deg must lie in [0, 90]".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if self.score_min >= self.score_max {
            return Err(Error::Config("score range must be non-empty".into()));
        }
        if !self.quirk_gains.is_empty() && self.quirk_gains.len() != self.n_databases {
            return Err(Error::Config(format!(
                "quirk_gains needs one entry per database ({}), got {}",
                self.n_databases,
                self.quirk_gains.len()
            )));
        }
        if self
            .quirk_gains
            .iter()
            .any(|&g| !(g.is_finite() && g > 0.0))
        {
            return Err(Error::Config("quirk gains must be positive".into()));
        }
        Ok(())
    }
}

/// One mixture-over-databases user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    /// Simplex weights over the database scorers.
    pub mixture: Vec<f64>,
    /// Blend factor toward the idiosyncratic direction, in [0, 1].
    pub idio_blend: f64,
    /// Support-set size K.
    pub shots: usize,
    pub test_size: usize,
    /// Personal score calibration: this user maps preferences onto
    /// [score_lo, score_hi]. Rank order is unaffected; absolute values are.
    pub score_lo: f64,
    pub score_hi: f64,
}

impl UserSpec {
    pub fn validate(&self, n_databases: usize) -> Result<()> {
        if self.mixture.len() != n_databases {
            return Err(Error::shape(
                "UserSpec mixture",
                n_databases,
                self.mixture.len(),
            ));
        }
        if self.mixture.iter().any(|&m| !(m.is_finite() && m >= 0.0)) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.mixture.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture must sum to 1, got {total}")));
        }
        if !(0.0..=1.0).contains(&self.idio_blend) {
            return Err(Error::Config("idio_blend must lie in [0, 1]".into()));
        }
        if self.shots < 2 {
            return Err(Error::Config("shots must be at least 2".into()));
        }
        if self.test_size < 2 {
            return Err(Error::Config("test_size must be at least 2".into()));
        }
        if !(self.score_lo.is_finite()
            && self.score_hi.is_finite()
            && self.score_lo < self.score_hi)
        {
            return Err(Error::Config("user score range must be non-empty".into()));
        }
        Ok(())
    }
}

/// How the harness samples user populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UserGenConfig {
    pub count: usize,
    /// Each user leans on a random subset of this many databases.
    pub mixture_databases_min: usize,
    pub mixture_databases_max: usize,
    /// Dirichlet concentration for the weights within the chosen subset;
    /// 1.0 is uniform over the simplex.
    pub mixture_concentration: f64,
    pub idio_blend_min: f64,
    pub idio_blend_max: f64,
    /// Users squeeze their personal score range by up to this fraction of
    /// the universe range on each end.
    pub score_range_jitter: f64,
    pub test_size: usize,
}

impl Default for UserGenConfig {
    fn default() -> Self {
        Self {
            count: 20,
            mixture_databases_min: 2,
            mixture_databases_max: 2,
            mixture_concentration: 6.0,
            idio_blend_min: 0.05,
            idio_blend_max: 0.3,
            score_range_jitter: 0.4,
            test_size: 200,
        }
    }
}

impl UserGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("need at least one user".into()));
        }
        if self.mixture_databases_min == 0
            || self.mixture_databases_min > self.mixture_databases_max
        {
            return Err(Error::Config(
                "mixture database subset needs 1 <= min <= max".into(),
            ));
        }
        if !(self.mixture_concentration.is_finite() && self.mixture_concentration > 0.0) {
            return Err(Error::Config(
                "mixture_concentration must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.idio_blend_min)
            || !(0.0..=1.0).contains(&self.idio_blend_max)
            || self.idio_blend_min > self.idio_blend_max
        {
            return Err(Error::Config(
                "idio blend range must satisfy 0 <= min <= max <= 1".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.score_range_jitter) {
            return Err(Error::Config(
                "score_range_jitter must lie in [0, 0.5)".into(),
            ));
        }
        if self.test_size < 2 {
            return Err(Error::Config("test_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Deterministic generator state: database scorers plus the master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskUniverse {
    config: UniverseConfig,
    seed: u64,
    scorers: Vec<Vec<f64>>,
}

impl TaskUniverse {
    /// Rejection-sample unit scorers until all pairwise angles clear the
    /// configured minimum. Identical (config, seed) gives an identical
    /// universe.
    pub fn generate(config: UniverseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let max_cos = config.min_pairwise_angle_deg.to_radians().cos();
        let mut rng = rng::stream(seed, &[rng::TAG_SCORERS]);
        let mut scorers: Vec<Vec<f64>> = Vec::with_capacity(config.n_databases);
        for i in 0..config.n_databases {
            let mut accepted = None;
            for _ in 0..100_000 {
                let candidate = unit_vector(config.feature_dim, &mut rng)?;
                let ok = scorers
                    .iter()
                    .all(|w| dot(w, &candidate).abs() <= max_cos + 1e-12);
                if ok {
                    accepted = Some(candidate);
                    break;
                }
            }
            match accepted {
                Some(w) => scorers.push(w),
                None => {
                    return Err(Error::Config(format!(
                        "could not place database scorer {i} at {} degrees separation in {} dims",
                        config.min_pairwise_angle_deg, config.feature_dim
                    )))
                }
            }
        }
        Ok(Self {
            config,
            seed,
            scorers,
        })
    }

    /// Build a universe around explicit unit scorers (tests, inspection).
    pub fn with_scorers(config: UniverseConfig, seed: u64, scorers: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        if scorers.len() != config.n_databases {
            return Err(Error::shape(
                "with_scorers",
                config.n_databases,
                scorers.len(),
            ));
        }
        for (i, w) in scorers.iter().enumerate() {
            if w.len() != config.feature_dim {
                return Err(Error::shape(
                    format!("scorer {i}"),
                    config.feature_dim,
                    w.len(),
                ));
            }
            let norm = dot(w, w).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "scorer {i} is not unit length ({norm})"
                )));
            }
        }
        Ok(Self {
            config,
            seed,
            scorers,
        })
    }

    pub fn config(&self) -> &UniverseConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scorer(&self, i: usize) -> &[f64] {
        &self.scorers[i]
    }

    pub fn scorers(&self) -> &[Vec<f64>] {
        &self.scorers
    }

    fn gain(&self, database: usize) -> f64 {
        self.config
            .quirk_gains
            .get(database)
            .copied()
            .unwrap_or(1.0)
    }

    fn score_range(&self) -> f64 {
        self.config.score_max - self.config.score_min
    }

    /// Noiseless score for a projection value, mapped onto [lo, hi].
    fn squash_into(&self, projection: f64, gain: f64, lo: f64, hi: f64) -> f64 {
        let s = 1.0 / (1.0 + (-gain * projection).exp());
        lo + (hi - lo) * s
    }

    /// i.i.d. standard-normal features scored by `scorer`, with label noise
    /// proportional to the target range and clamping into it.
    fn draw_scored(
        &self,
        scorer: &[f64],
        gain: f64,
        lo: f64,
        hi: f64,
        count: usize,
        stream: &mut ChaCha8Rng,
    ) -> Result<SampleSet> {
        let d = self.config.feature_dim;
        let sigma = self.config.noise_sigma * (hi - lo);
        let mut feats = Vec::with_capacity(count * d);
        let mut scores = Vec::with_capacity(count);
        for _ in 0..count {
            let row: Vec<f64> = (0..d)
                .map(|_| stream.sample::<f64, _>(StandardNormal))
                .collect();
            let mut score = self.squash_into(dot(scorer, &row), gain, lo, hi);
            if sigma > 0.0 {
                score += sigma * stream.sample::<f64, _>(StandardNormal);
            }
            score = score.clamp(lo, hi);
            feats.extend(row);
            scores.push(score);
        }
        SampleSet::new(Tensor::matrix(count, d, feats)?, Tensor::vector(scores)?)
    }

    /// Training data for database `i`. Deterministic per
    /// (universe seed, database, draw seed).
    pub fn generate_database(&self, i: usize, count: usize, seed: u64) -> Result<SampleSet> {
        if i >= self.config.n_databases {
            return Err(Error::Config(format!(
                "database index {i} out of range ({} databases)",
                self.config.n_databases
            )));
        }
        if count < 2 {
            return Err(Error::shape("generate_database", "count >= 2", count));
        }
        let mut stream = rng::stream(self.seed, &[rng::TAG_DATABASE, i as u64, seed]);
        self.draw_scored(
            &self.scorers[i],
            self.gain(i),
            self.config.score_min,
            self.config.score_max,
            count,
            &mut stream,
        )
    }

    /// The user's blended unit scorer. A degenerate (near-zero) blend is
    /// retried with a fresh idiosyncratic direction.
    pub fn user_scorer(&self, spec: &UserSpec, seed: u64) -> Result<Vec<f64>> {
        spec.validate(self.config.n_databases)?;
        let d = self.config.feature_dim;
        let mut stream = rng::stream(self.seed, &[rng::TAG_USER, seed]);
        let mut mixed = vec![0.0; d];
        for (w, &m) in self.scorers.iter().zip(&spec.mixture) {
            for (acc, &v) in mixed.iter_mut().zip(w) {
                *acc += m * v;
            }
        }
        for attempt in 0..32 {
            let idio = unit_vector(d, &mut stream)?;
            let blended: Vec<f64> = mixed
                .iter()
                .zip(&idio)
                .map(|(&m, &q)| (1.0 - spec.idio_blend) * m + spec.idio_blend * q)
                .collect();
            let norm = dot(&blended, &blended).sqrt();
            if norm > 1e-9 {
                if attempt > 0 {
                    log::warn!("regenerated degenerate user scorer after {attempt} retries");
                }
                return Ok(blended.iter().map(|&v| v / norm).collect());
            }
        }
        Err(Error::DegenerateInput(
            "user scorer collapsed to zero repeatedly".into(),
        ))
    }

    /// Fresh support set for one trial, scored on the user's personal
    /// range. Streams are indexed by (user seed, trial), so trials are
    /// independent and reproducible.
    pub fn draw_support(
        &self,
        spec: &UserSpec,
        scorer: &[f64],
        shots: usize,
        user_seed: u64,
        trial: u64,
    ) -> Result<SampleSet> {
        if shots < 2 {
            return Err(Error::shape("draw_support", "shots >= 2", shots));
        }
        let mut stream = rng::stream(self.seed, &[rng::TAG_TRIAL, user_seed, trial]);
        self.draw_scored(
            scorer,
            1.0,
            spec.score_lo,
            spec.score_hi,
            shots,
            &mut stream,
        )
    }

    /// The user's held-out test set, fixed across trials.
    pub fn draw_test(&self, spec: &UserSpec, scorer: &[f64], user_seed: u64) -> Result<SampleSet> {
        let mut stream = rng::stream(self.seed, &[rng::TAG_USER, user_seed, u64::MAX]);
        self.draw_scored(
            scorer,
            1.0,
            spec.score_lo,
            spec.score_hi,
            spec.test_size,
            &mut stream,
        )
    }

    /// Support and test split for one user (the support is the trial-0
    /// draw). The two sets come from disjoint streams.
    pub fn generate_user(&self, spec: &UserSpec, seed: u64) -> Result<(SampleSet, SampleSet)> {
        let scorer = self.user_scorer(spec, seed)?;
        let support = self.draw_support(spec, &scorer, spec.shots, seed, 0)?;
        let test = self.draw_test(spec, &scorer, seed)?;
        Ok((support, test))
    }

    /// Sample a population of user specs.
    pub fn sample_user_specs(
        &self,
        cfg: &UserGenConfig,
        shots: usize,
        seed: u64,
    ) -> Result<Vec<UserSpec>> {
        cfg.validate()?;
        let n = self.config.n_databases;
        let gamma = Gamma::new(cfg.mixture_concentration, 1.0)
            .map_err(|e| Error::Config(format!("bad mixture concentration: {e}")))?;
        let mut stream = rng::stream(self.seed, &[rng::TAG_USER, seed, 7]);
        (0..cfg.count)
            .map(|_| {
                let subset_size =
                    cfg.mixture_databases_min.min(n).max(1)..=cfg.mixture_databases_max.min(n);
                let size = stream.gen_range(subset_size);
                let chosen = rand::seq::index::sample(&mut stream, n, size).into_vec();
                let mut mixture = vec![0.0; n];
                let mut total = 0.0;
                for &db in &chosen {
                    let w: f64 = stream.sample(gamma);
                    mixture[db] = w.max(1e-12);
                    total += mixture[db];
                }
                for m in &mut mixture {
                    *m /= total;
                }
                let idio_blend = if cfg.idio_blend_max > cfg.idio_blend_min {
                    stream.gen_range(cfg.idio_blend_min..cfg.idio_blend_max)
                } else {
                    cfg.idio_blend_min
                };
                let range = self.score_range();
                let (mut lo, mut hi) = (self.config.score_min, self.config.score_max);
                if cfg.score_range_jitter > 0.0 {
                    lo += stream.gen_range(0.0..cfg.score_range_jitter) * range;
                    hi -= stream.gen_range(0.0..cfg.score_range_jitter) * range;
                }
                let spec = UserSpec {
                    mixture,
                    idio_blend,
                    shots,
                    test_size: cfg.test_size,
                    score_lo: lo,
                    score_hi: hi,
                };
                spec.validate(n)?;
                Ok(spec)
            })
            .collect()
    }
}

/// Columnar text export: id, one column per feature, score.
pub fn samples_to_csv(set: &SampleSet) -> String {
    let d = set.dim();
    let mut out = String::from("id");
    for j in 0..d {
        out.push_str(&format!(",f{j}"));
    }
    out.push_str(",score\n");
    for i in 0..set.len() {
        out.push_str(&i.to_string());
        for v in set.feature_row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", set.scores()[i]));
    }
    out
}

fn unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    for _ in 0..64 {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            return Ok(v.iter().map(|&x| x / norm).collect());
        }
    }
    Err(Error::DegenerateInput(
        "random unit vector kept collapsing".into(),
    ))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::srocc;

    fn universe(seed: u64) -> TaskUniverse {
        TaskUniverse::generate(UniverseConfig::default(), seed).unwrap()
    }

    #[test]
    fn scorers_are_unit_and_separated() {
        let u = universe(1);
        let max_cos = u.config().min_pairwise_angle_deg.to_radians().cos();
        for (i, w) in u.scorers().iter().enumerate() {
            assert!((dot(w, w).sqrt() - 1.0).abs() < 1e-12);
            for v in &u.scorers()[..i] {
                assert!(dot(w, v).abs() <= max_cos + 1e-9);
            }
        }
    }

    #[test]
    fn universe_is_seed_deterministic() {
        let a = universe(7);
        let b = universe(7);
        assert_eq!(a, b);
        assert_ne!(a, universe(8));
    }

    #[test]
    fn database_draws_are_reproducible_and_in_range() {
        let u = universe(2);
        let s1 = u.generate_database(0, 100, 5).unwrap();
        let s2 = u.generate_database(0, 100, 5).unwrap();
        assert_eq!(s1, s2);
        let s3 = u.generate_database(0, 100, 6).unwrap();
        assert_ne!(s1, s3);
        for &v in s1.scores() {
            assert!((1.0..=10.0).contains(&v));
        }
        assert!(u.generate_database(9, 100, 5).is_err());
        assert!(u.generate_database(0, 1, 5).is_err());
    }

    #[test]
    fn noiseless_scores_rank_exactly_with_projection() {
        let mut cfg = UniverseConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        cfg.samples_per_database = 100;
        let u = TaskUniverse::generate(cfg, 3).unwrap();
        let set = u.generate_database(2, 200, 1).unwrap();
        let proj: Vec<f64> = (0..set.len())
            .map(|i| dot(u.scorer(2), set.feature_row(i)))
            .collect();
        assert_eq!(srocc(set.scores(), &proj).unwrap().value, 1.0);
    }

    #[test]
    fn orthogonal_databases_have_near_zero_cross_rank_correlation() {
        // Explicit orthogonal scorers; score the same features both ways.
        let mut cfg = UniverseConfig {
            noise_sigma: 0.0,
            n_databases: 2,
            ..Default::default()
        };
        cfg.min_pairwise_angle_deg = 90.0;
        let d = cfg.feature_dim;
        let mut e1 = vec![0.0; d];
        let mut e2 = vec![0.0; d];
        e1[0] = 1.0;
        e2[1] = 1.0;
        let u = TaskUniverse::with_scorers(cfg, 4, vec![e1, e2]).unwrap();
        let set = u.generate_database(0, 500, 9).unwrap();
        let other: Vec<f64> = (0..set.len())
            .map(|i| u.squash_into(dot(u.scorer(1), set.feature_row(i)), 1.0, 1.0, 10.0))
            .collect();
        let r = srocc(set.scores(), &other).unwrap().value;
        assert!(r.abs() < 0.15, "cross-scorer correlation {r}");
    }

    #[test]
    fn one_hot_user_with_no_idiosyncrasy_matches_database_scorer() {
        let u = universe(5);
        let mut mixture = vec![0.0; 6];
        mixture[3] = 1.0;
        let spec = UserSpec {
            mixture,
            idio_blend: 0.0,
            shots: 10,
            test_size: 50,
            score_lo: 1.0,
            score_hi: 10.0,
        };
        let scorer = u.user_scorer(&spec, 11).unwrap();
        let cos = dot(&scorer, u.scorer(3));
        assert!((cos - 1.0).abs() < 1e-9, "cos {cos}");
    }

    #[test]
    fn pure_idiosyncratic_user_is_far_from_all_databases() {
        let u = universe(6);
        let spec = UserSpec {
            mixture: vec![1.0 / 6.0; 6],
            idio_blend: 1.0,
            shots: 10,
            test_size: 50,
            score_lo: 1.0,
            score_hi: 10.0,
        };
        let mut total = 0.0;
        let trials = 20;
        for s in 0..trials {
            let scorer = u.user_scorer(&spec, 100 + s).unwrap();
            let max_cos = (0..6)
                .map(|i| dot(&scorer, u.scorer(i)).abs())
                .fold(0.0, f64::max);
            assert!(max_cos < 0.75, "seed {s}: max |cos| {max_cos}");
            total += max_cos;
        }
        assert!(total / (trials as f64) < 0.45);
    }

    #[test]
    fn support_and_test_draws_never_share_items() {
        let u = universe(7);
        let spec = UserSpec {
            mixture: vec![1.0 / 6.0; 6],
            idio_blend: 0.2,
            shots: 100,
            test_size: 200,
            score_lo: 2.0,
            score_hi: 8.5,
        };
        let (support, test) = u.generate_user(&spec, 3).unwrap();
        assert_eq!(support.len(), 100);
        assert_eq!(test.len(), 200);
        for i in 0..support.len() {
            for j in 0..test.len() {
                assert_ne!(support.feature_row(i), test.feature_row(j));
            }
        }
        // Small-K support is a prefix-independent fresh draw, still disjoint.
        let scorer = u.user_scorer(&spec, 3).unwrap();
        let small = u.draw_support(&spec, &scorer, 10, 3, 0).unwrap();
        for i in 0..small.len() {
            for j in 0..test.len() {
                assert_ne!(small.feature_row(i), test.feature_row(j));
            }
        }
    }

    #[test]
    fn user_spec_validation() {
        let ok = UserSpec {
            mixture: vec![0.5, 0.5],
            idio_blend: 0.1,
            shots: 10,
            test_size: 10,
            score_lo: 1.0,
            score_hi: 10.0,
        };
        assert!(ok.validate(2).is_ok());
        let bad_sum = UserSpec {
            mixture: vec![0.5, 0.2],
            ..ok.clone()
        };
        assert!(bad_sum.validate(2).is_err());
        let bad_blend = UserSpec {
            idio_blend: 1.5,
            ..ok.clone()
        };
        assert!(bad_blend.validate(2).is_err());
        let bad_shots = UserSpec {
            shots: 1,
            ..ok.clone()
        };
        assert!(bad_shots.validate(2).is_err());
        let bad_range = UserSpec {
            score_lo: 5.0,
            score_hi: 5.0,
            ..ok.clone()
        };
        assert!(bad_range.validate(2).is_err());
    }

    #[test]
    fn sampled_user_population_is_valid_and_deterministic() {
        let u = universe(8);
        let cfg = UserGenConfig::default();
        let users = u.sample_user_specs(&cfg, 10, 1).unwrap();
        assert_eq!(users.len(), 20);
        for spec in &users {
            spec.validate(6).unwrap();
        }
        let again = u.sample_user_specs(&cfg, 10, 1).unwrap();
        assert_eq!(users, again);
    }

    #[test]
    fn csv_export_shape() {
        let u = universe(9);
        let set = u.generate_database(0, 3, 1).unwrap();
        let csv = samples_to_csv(&set);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("id,f0,"));
        assert!(lines[0].ends_with(",score"));
        assert_eq!(lines[1].split(',').count(), u.config().feature_dim + 2);
    }
}
