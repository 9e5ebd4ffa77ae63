//! Experiment suites built on [`run_distill`]: trajectory-gap analysis,
//! offset-rate ablation, seed consistency and estimator comparison.
//!
//! Member runs of a suite execute concurrently and share only the
//! immutable config and oracle; results are collected in input order so
//! outputs stay deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ddim::Latent;
use crate::error::{Error, Result};
use crate::estimators::{trajectory_points, EstimatorKind};
use crate::oracle::{ConditionLabel, DiffusionOracle};

use super::config::RunConfig;
use super::distill::{build_oracle, run_distill_with, RunResult};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub sample: usize,
    pub t: usize,
    pub s: usize,
    pub mu: usize,
    pub gap_ism: f64,
    pub gap_tsm: f64,
}

impl TrajectorySample {
    /// Strict win: ties are not wins.
    pub fn tsm_wins(&self) -> bool {
        self.gap_tsm < self.gap_ism
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryReport {
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryReport {
    pub fn win_rate(&self) -> f64 {
        self.samples.iter().filter(|s| s.tsm_wins()).count() as f64 / self.samples.len() as f64
    }

    /// Win rate restricted to samples with a nonzero ISM gap.
    pub fn eligible_win_rate(&self) -> f64 {
        let eligible: Vec<_> = self.samples.iter().filter(|s| s.gap_ism > 0.0).collect();
        if eligible.is_empty() {
            return f64::NAN;
        }
        eligible.iter().filter(|s| s.tsm_wins()).count() as f64 / eligible.len() as f64
    }

    pub fn mean_gaps(&self) -> (f64, f64) {
        let n = self.samples.len() as f64;
        (
            self.samples.iter().map(|s| s.gap_ism).sum::<f64>() / n,
            self.samples.iter().map(|s| s.gap_tsm).sum::<f64>() / n,
        )
    }

    pub const HEADER: [&'static str; 7] = ["sample", "t", "s", "mu", "gap_ism", "gap_tsm", "tsm_wins"];

    /// CSV rows, closed by a `summary` row holding the mean gaps and the win rate.
    pub fn rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .samples
            .iter()
            .map(|s| {
                vec![
                    s.sample.to_string(),
                    s.t.to_string(),
                    s.s.to_string(),
                    s.mu.to_string(),
                    s.gap_ism.to_string(),
                    s.gap_tsm.to_string(),
                    u8::from(s.tsm_wins()).to_string(),
                ]
            })
            .collect();
        let (gi, gt) = self.mean_gaps();
        rows.push(vec![
            "summary".into(),
            String::new(),
            String::new(),
            String::new(),
            gi.to_string(),
            gt.to_string(),
            self.win_rate().to_string(),
        ]);
        rows
    }
}

/// Draws `x0` from the null mixture, plus optional isotropic jitter.
fn draw_x0(oracle: &DiffusionOracle, rng: &mut ChaCha8Rng, jitter: f64) -> Result<Vec<f64>> {
    let mix = oracle.mixture(ConditionLabel::Null)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let comps = mix.components();
    let comp = comps
        .iter()
        .find(|c| {
            acc += c.weight;
            u < acc
        })
        .unwrap_or(&comps[comps.len() - 1]);
    let sd = comp.variance.sqrt();
    Ok(comp
        .mean
        .iter()
        .map(|m| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            m + sd * a + jitter * b
        })
        .collect())
}

/// Monte-Carlo over `x0` (drawn from the null mixture) and admissible `t`.
pub fn analyze_trajectory(cfg: &RunConfig, n_samples: usize) -> Result<TrajectoryReport> {
    if n_samples == 0 {
        return Err(Error::Config("analyze_trajectory needs at least one sample".into()));
    }
    cfg.validate()?;
    let oracle = build_oracle(cfg)?;
    let ec = &cfg.estimator_cfg;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..n_samples).map(|_| master.random()).collect();
    let samples = seeds
        .par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let x0 = Latent::new(draw_x0(&oracle, &mut rng, cfg.suite.x0_jitter)?, 0)?;
            let t = ec.sample_trajectory_t(&mut rng);
            let pts = trajectory_points(&oracle, &x0, ec, t)?;
            let gaps = pts.gaps();
            Ok(TrajectorySample {
                sample: i,
                t,
                s: pts.xs.t,
                mu: pts.x_mu.t,
                gap_ism: gaps.ism,
                gap_tsm: gaps.tsm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryReport { samples })
}

/// Runs `variants` concurrently against one shared oracle.
fn run_many(base: &RunConfig, variants: Vec<RunConfig>) -> Result<Vec<RunResult>> {
    base.validate()?;
    let oracle = build_oracle(base)?;
    variants
        .par_iter()
        .map(|cfg| {
            cfg.validate()?;
            run_distill_with(cfg, &oracle)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub gamma: f64,
    pub result: RunResult,
}

pub const ABLATION_HEADER: [&str; 10] = [
    "gamma",
    "final_loss_proxy",
    "initial_distance",
    "final_distance",
    "tail_grad_norm",
    "splat_count",
    "clones",
    "splits",
    "prunes",
    "final_depth_tv",
];

impl AblationRow {
    pub fn fields(&self, tail: usize) -> Vec<String> {
        let r = &self.result;
        let last = r.records.last();
        vec![
            self.gamma.to_string(),
            last.map_or(f64::NAN, |l| l.loss_proxy).to_string(),
            r.initial_distance.to_string(),
            r.final_distance().to_string(),
            r.tail_grad_norm(tail).to_string(),
            last.map_or(0, |l| l.splat_count).to_string(),
            r.totals.clones.to_string(),
            r.totals.splits.to_string(),
            r.totals.prunes.to_string(),
            last.map_or(f64::NAN, |l| l.depth_tv).to_string(),
        ]
    }
}

/// One TSM run per offset rate, all with the config's seeds.
pub fn ablate_gamma(cfg: &RunConfig, gammas: &[f64]) -> Result<Vec<AblationRow>> {
    if gammas.is_empty() {
        return Err(Error::Config("ablate_gamma needs at least one gamma".into()));
    }
    let variants = gammas
        .iter()
        .map(|&g| {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("gamma must lie in [0, 1], got {g}")));
            }
            let mut c = cfg.clone();
            c.estimator = EstimatorKind::Tsm;
            c.estimator_cfg.gamma = g;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let results = run_many(cfg, variants)?;
    Ok(gammas
        .iter()
        .zip(results)
        .map(|(&gamma, result)| AblationRow { gamma, result })
        .collect())
}

/// Per-pixel population variance of final renders across seeds.
#[derive(Debug, Clone)]
pub struct VarianceMap {
    pub estimator: EstimatorKind,
    pub gamma: f64,
    /// One value per pixel (mean over color channels) for image-shaped
    /// latents, otherwise one per latent entry.
    pub map: Vec<f64>,
    pub scalar: f64,
    pub results: Vec<RunResult>,
}

/// Population variance across `finals` (equal-length vectors), averaged
/// over groups of `group` consecutive entries.
pub fn variance_map(finals: &[Vec<f64>], group: usize) -> Vec<f64> {
    let n = finals.len() as f64;
    let len = finals[0].len();
    let per_entry: Vec<f64> = (0..len)
        .map(|i| {
            let mean = finals.iter().map(|f| f[i]).sum::<f64>() / n;
            finals.iter().map(|f| (f[i] - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    per_entry.chunks(group).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Final-render variance across noise seeds from one fixed initialization,
/// for ISM and for TSM at the config's offset rate.
pub fn seed_consistency(cfg: &RunConfig, seeds: &[u64]) -> Result<[VarianceMap; 2]> {
    if seeds.len() < 2 {
        return Err(Error::Config("seed_consistency needs at least two seeds".into()));
    }
    let g = &cfg.generator;
    let mut variants = Vec::new();
    for kind in [EstimatorKind::Ism, EstimatorKind::Tsm] {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.estimator = kind;
            c.seed = seed;
            variants.push(c);
        }
    }
    let mut results = run_many(cfg, variants)?;
    let tsm = results.split_off(seeds.len());
    let ism = results;
    let build = |kind, gamma, results: Vec<RunResult>| {
        let image_like = results[0].final_snapshot().render.is_some()
            || results[0].final_snapshot().latent.len() == 3 * g.pixels();
        let finals: Vec<Vec<f64>> = results
            .iter()
            .map(|r| {
                let s = r.final_snapshot();
                match &s.render {
                    Some(render) => render.color.clone(),
                    None => s.latent.clone(),
                }
            })
            .collect();
        let map = variance_map(&finals, if image_like { 3 } else { 1 });
        VarianceMap {
            estimator: kind,
            gamma,
            scalar: mean(&map),
            map,
            results,
        }
    };
    Ok([
        build(EstimatorKind::Ism, 0.0, ism),
        build(EstimatorKind::Tsm, cfg.estimator_cfg.gamma, tsm),
    ])
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub estimator: EstimatorKind,
    pub result: RunResult,
}

pub const COMPARISON_HEADER: [&str; 6] = [
    "estimator",
    "initial_distance",
    "final_distance",
    "distance_ratio",
    "final_loss_proxy",
    "tail_grad_norm",
];

impl ComparisonRow {
    pub fn fields(&self, tail: usize) -> Vec<String> {
        let r = &self.result;
        vec![
            self.estimator.name().to_string(),
            r.initial_distance.to_string(),
            r.final_distance().to_string(),
            (r.final_distance() / r.initial_distance).to_string(),
            r.records.last().map_or(f64::NAN, |l| l.loss_proxy).to_string(),
            r.tail_grad_norm(tail).to_string(),
        ]
    }
}

/// SDS, ISM and TSM with matched seeds.
pub fn compare_estimators(cfg: &RunConfig) -> Result<Vec<ComparisonRow>> {
    let kinds = [EstimatorKind::Sds, EstimatorKind::Ism, EstimatorKind::Tsm];
    let variants = kinds
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.estimator = k;
            c
        })
        .collect();
    let results = run_many(cfg, variants)?;
    Ok(kinds
        .into_iter()
        .zip(results)
        .map(|(estimator, result)| ComparisonRow { estimator, result })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> RunConfig {
        RunConfig::from_text(&format!(
            "run.seed = 9
generator.kind = identity
generator.dim = 2
generator.init = inline:0.5,-0.5
oracle.1.means = inline:1,1
oracle.1.variance = 0
oracle.null.means = inline:1,1 | inline:-1,0.5
oracle.null.variance = 0.1
optim.iterations = 30
optim.lr = 0.02
{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn win_rate_extremes() {
        let zero = analyze_trajectory(&cfg("estimator.gamma = 0"), 50).unwrap();
        assert_eq!(zero.win_rate(), 0.0);
        assert!(zero.samples.iter().all(|s| s.gap_ism == s.gap_tsm));
        let one = analyze_trajectory(&cfg("estimator.gamma = 1"), 50).unwrap();
        assert_eq!(one.eligible_win_rate(), 1.0);
        assert!(one.samples.iter().all(|s| s.gap_tsm == 0.0 && s.mu == s.t));
        assert_eq!(one.rows().len(), 51);
        assert!(analyze_trajectory(&cfg(""), 0).is_err());
    }

    #[test]
    fn ablation_cardinality_and_ism_row() {
        let gammas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows = ablate_gamma(&cfg(""), &gammas).unwrap();
        assert_eq!(rows.len(), 11);
        let mut ism = cfg("estimator.kind = ism");
        ism.estimator_cfg.gamma = 0.0;
        let base = run_distill_with(&ism, &build_oracle(&ism).unwrap()).unwrap();
        assert_eq!(rows[0].result.records, base.records);
        assert!(ablate_gamma(&cfg(""), &[1.5]).is_err());
    }

    #[test]
    fn identical_seeds_have_zero_variance() {
        let [ism, tsm] = seed_consistency(&cfg(""), &[4, 4]).unwrap();
        assert_eq!(ism.scalar, 0.0);
        assert_eq!(tsm.scalar, 0.0);
        assert!(seed_consistency(&cfg(""), &[4]).is_err());
    }

    #[test]
    fn single_entry_variance_is_empirical_variance() {
        let c = RunConfig::from_text(
            "run.seed = 1
generator.kind = identity
generator.dim = 1
generator.init = const:0
oracle.1.means = const:1
oracle.1.variance = 0
oracle.null.means = const:1 | const:-1
optim.iterations = 10
optim.lr = 0.02",
        )
        .unwrap();
        let [ism, _] = seed_consistency(&c, &[1, 2, 3]).unwrap();
        let finals: Vec<f64> = ism.results.iter().map(|r| r.final_snapshot().latent[0]).collect();
        let m = finals.iter().sum::<f64>() / 3.0;
        let var = finals.iter().map(|f| (f - m).powi(2)).sum::<f64>() / 3.0;
        assert!((ism.scalar - var).abs() <= 1e-15 * var.max(1.0));
    }

    #[test]
    fn comparison_has_three_rows() {
        let rows = compare_estimators(&cfg("")).unwrap();
        let names: Vec<_> = rows.iter().map(|r| r.estimator.name()).collect();
        assert_eq!(names, ["sds", "ism", "tsm"]);
    }
}
