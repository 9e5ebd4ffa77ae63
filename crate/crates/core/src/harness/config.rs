//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must
//! carry a section prefix and unknown keys are rejected, so typos fail
//! loudly instead of silently falling back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::clipping::{ClipConfig, ScaleMap};
use crate::ddim::FormulaMode;
use crate::densify::DensifyConfig;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::oracle::ConditionLabel;
use crate::schedule::{NoiseSchedule, WeightFn};

use super::targets::{MeanSource, Pattern};

/// Key/value pairs with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            // `#` starts a comment at line start or after whitespace
            let line = match line.find(" #").or_else(|| line.find("\t#")) {
                Some(at) => &line[..at],
                None => line,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value, got '{line}'", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !k.contains('.') {
                return Err(Error::Config(format!(
                    "line {}: key '{k}' needs a section prefix (e.g. run.{k})",
                    i + 1
                )));
            }
            if entries.insert(k.to_string(), (v.to_string(), i + 1)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Inserts or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.keys().filter(move |k| k.starts_with(prefix)).map(String::as_str)
    }
}

/// Tracks which keys were consumed so leftovers can be reported.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl<'a> Reader<'a> {
    fn str(&self, key: &str) -> Option<&'a str> {
        let v = self.raw.get(key);
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.raw.entries.get(key) {
            Some((_, line)) if *line > 0 => Error::Config(format!("line {line}: {key}: {msg}")),
            _ => Error::Config(format!("{key}: {msg}")),
        }
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.err(key, format!("'{v}': {e}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.str(key) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(self.err(key, format!("expected a boolean, got '{v}'"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| self.err(key, format!("'{s}': {e}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn with<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => f(v).map(Some).map_err(|e| match e {
                Error::Config(m) => self.err(key, m),
                other => other,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpec {
    pub means: Vec<MeanSource>,
    pub variance: f64,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub labels: Vec<(ConditionLabel, LabelSpec)>,
    /// Label the generator is distilled towards.
    pub target: ConditionLabel,
    /// Depth value appended to image-like means when depth is part of the latent.
    pub depth_fill: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Identity,
    Splats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Identity generator: explicit starting vector.
    Mean(MeanSource),
    /// Identity generator: i.i.d. normal entries with this standard deviation.
    Normal(f64),
    RandomSplats(usize),
    GridSplats(usize, usize),
    SceneFile(PathBuf),
}

impl InitSpec {
    fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("normal:") {
            let std = rest.parse().map_err(|_| Error::Config(format!("bad std in '{s}'")))?;
            return Ok(Self::Normal(std));
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let n = rest.parse().map_err(|_| Error::Config(format!("bad count in '{s}'")))?;
            return Ok(Self::RandomSplats(n));
        }
        if let Some(rest) = s.strip_prefix("grid:") {
            let (c, r) = rest
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("expected grid:COLSxROWS, got '{s}'")))?;
            let bad = || Error::Config(format!("bad grid size in '{s}'"));
            return Ok(Self::GridSplats(c.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?));
        }
        if let Some(rest) = s.strip_prefix("file:") {
            return Ok(Self::SceneFile(PathBuf::from(rest)));
        }
        MeanSource::parse(s).map(Self::Mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub width: usize,
    pub height: usize,
    /// Latent dimension of the identity generator.
    pub dim: usize,
    /// Append the depth map to the latent as an extra channel group.
    pub depth_latent: bool,
    pub init: InitSpec,
    pub views: usize,
    /// Affine jitter amplitude in pixels; 0 keeps the identity view.
    pub view_jitter: f64,
}

impl GeneratorSpec {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Dimension of the latent the oracle operates on.
    pub fn latent_dim(&self) -> usize {
        match self.kind {
            GeneratorKind::Identity => self.dim,
            GeneratorKind::Splats => self.image_dim(),
        }
    }

    /// Dimension of an image-shaped latent (color plus optional depth).
    pub fn image_dim(&self) -> usize {
        self.pixels() * if self.depth_latent { 4 } else { 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Step-size multipliers for splat parameter groups:
    /// position, log-scale, rotation, color, opacity logit, depth.
    pub group_lr: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSpec {
    pub depth: bool,
    pub color: bool,
    pub threshold: f64,
    pub color_norm_cap: f64,
    /// Scalar scale override; `None` uses the rendered per-pixel scale map.
    pub scale: Option<f64>,
    pub scale_fallback: f64,
    pub passthrough_normal: bool,
}

impl ClipSpec {
    pub fn config(&self, scale_map: ScaleMap) -> ClipConfig {
        ClipConfig {
            scale_map,
            threshold: self.threshold,
            color_norm_cap: self.color_norm_cap,
            passthrough_normal: self.passthrough_normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectSpec {
    /// Scale of Student-t noise added to the depth gradient; 0 disables.
    pub depth_noise_scale: f64,
    pub depth_noise_df: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub samples: usize,
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Base initialization seeds for the seed-consistency suite.
    pub inits: Vec<u64>,
    /// Std of the Gaussian perturbation added to trajectory-analysis x0 draws.
    pub x0_jitter: f64,
    /// Trailing iterations averaged for ablation gradient norms.
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Seed of the parameter initialization; defaults to `seed`.
    pub init_seed: u64,
    pub out_dir: Option<PathBuf>,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub oracle: OracleSpec,
    pub estimator: EstimatorKind,
    pub estimator_cfg: EstimatorConfig,
    pub generator: GeneratorSpec,
    pub optim: OptimSpec,
    pub clip: ClipSpec,
    pub densify: Option<DensifyConfig>,
    pub inject: InjectSpec,
    pub suite: SuiteSpec,
}

const SECTIONS: [&str; 10] = [
    "run.", "schedule.", "oracle.", "estimator.", "generator.", "optim.", "clip.", "densify.", "inject.",
    "suite.",
];

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raw(&RawConfig::load(path)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let r = Reader {
            raw,
            used: Default::default(),
        };
        let seed = r.parse::<u64>("run.seed")?.ok_or_else(|| {
            Error::Config("run.seed is required (set it in the config or pass --seed)".into())
        })?;
        let init_seed = r.or("run.init_seed", seed)?;
        let out_dir = r.str("run.out").map(PathBuf::from);
        let log_interval = r.or("run.log_interval", 1)?;
        let checkpoint_interval = r.or("run.checkpoint_interval", 500)?;

        let schedule_steps = r.or("schedule.T", 1000)?;
        let beta_start = r.or("schedule.beta_start", 1e-4)?;
        let beta_end = r.or("schedule.beta_end", 0.02)?;

        let generator = read_generator(&r)?;
        let oracle = read_oracle(&r)?;

        let estimator = r
            .with("estimator.kind", EstimatorKind::parse)?
            .unwrap_or(EstimatorKind::Tsm);
        let mut ec = EstimatorConfig::for_steps(schedule_steps);
        ec.delta_t = r.or("estimator.delta_t", ec.delta_t)?;
        ec.delta_s = r.or("estimator.delta_s", ec.delta_s)?;
        ec.gamma = r.or("estimator.gamma", ec.gamma)?;
        ec.t_min = r.or("estimator.t_min", ec.delta_t + 1)?;
        ec.t_max = r.or("estimator.t_max", ec.t_max)?;
        ec.guidance_scale = r.or("estimator.guidance", ec.guidance_scale)?;
        ec.mode = r.with("estimator.mode", FormulaMode::parse)?.unwrap_or(ec.mode);
        ec.weight = r.with("estimator.weight", WeightFn::parse)?.unwrap_or(ec.weight);

        let optim = OptimSpec {
            kind: r
                .with("optim.kind", |s| match s {
                    "sgd" | "gd" => Ok(OptimizerKind::Sgd),
                    "adam" => Ok(OptimizerKind::Adam),
                    other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
                })?
                .unwrap_or(OptimizerKind::Sgd),
            lr: r.or("optim.lr", 0.05)?,
            iterations: r.or("optim.iterations", 2500)?,
            beta1: r.or("optim.beta1", 0.9)?,
            beta2: r.or("optim.beta2", 0.999)?,
            eps: r.or("optim.eps", 1e-8)?,
            group_lr: [
                r.or("optim.lr_pos", 1.0)?,
                r.or("optim.lr_scale", 1.0)?,
                r.or("optim.lr_rot", 1.0)?,
                r.or("optim.lr_color", 1.0)?,
                r.or("optim.lr_opacity", 1.0)?,
                r.or("optim.lr_z", 1.0)?,
            ],
        };

        let clip = ClipSpec {
            depth: r.flag("clip.depth", false)?,
            color: r.flag("clip.color", false)?,
            threshold: r.or("clip.threshold", 1.0)?,
            color_norm_cap: r.or("clip.color_norm_cap", 10.0)?,
            scale: r.with("clip.scale", |s| {
                if s == "auto" {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| Error::Config(format!("expected 'auto' or a number, got '{s}'")))
                }
            })?
            .flatten(),
            scale_fallback: r.or("clip.scale_fallback", 1.0)?,
            passthrough_normal: r.flag("clip.passthrough", false)?,
        };

        let densify = if r.flag("densify.enabled", false)? {
            let d = DensifyConfig::default();
            Some(DensifyConfig {
                tau_pos: r.or("densify.tau_pos", d.tau_pos)?,
                sigma_split: r.or("densify.sigma_split", d.sigma_split)?,
                tau_opacity: r.or("densify.tau_opacity", d.tau_opacity)?,
                start_iter: r.or("densify.start", d.start_iter)?,
                end_iter: r.or("densify.end", d.end_iter)?,
                interval: r.or("densify.interval", d.interval)?,
                split_offset: r.or("densify.split_offset", d.split_offset)?,
                split_divisor: r.or("densify.split_divisor", d.split_divisor)?,
            })
        } else {
            // consume the keys so a disabled section does not trip the unknown-key check
            for k in raw.keys_with_prefix("densify.") {
                r.str(k);
            }
            None
        };

        let inject = InjectSpec {
            depth_noise_scale: r.or("inject.depth_noise_scale", 0.0)?,
            depth_noise_df: r.or("inject.depth_noise_df", 2.0)?,
        };

        let suite = SuiteSpec {
            samples: r.or("suite.samples", 1000)?,
            gammas: r.list("suite.gammas")?.unwrap_or_else(|| {
                (0..=10).map(|i| i as f64 / 10.0).collect()
            }),
            seeds: r.list("suite.seeds")?.unwrap_or_else(|| vec![1, 2, 3, 4]),
            inits: r.list("suite.inits")?.unwrap_or_else(|| vec![seed]),
            x0_jitter: r.or("suite.x0_jitter", 0.0)?,
            tail: r.or("suite.tail", 100)?,
        };

        let unknown: Vec<&str> = raw
            .entries
            .keys()
            .filter(|k| !r.used.borrow().contains(*k))
            .map(String::as_str)
            .collect();
        if let Some(k) = unknown.first() {
            let known_section = SECTIONS.iter().any(|s| k.starts_with(s));
            return Err(r.err(
                k,
                if known_section { "unknown key" } else { "unknown section" },
            ));
        }

        let cfg = Self {
            seed,
            init_seed,
            out_dir,
            log_interval,
            checkpoint_interval,
            schedule_steps,
            beta_start,
            beta_end,
            oracle,
            estimator,
            estimator_cfg: ec,
            generator,
            optim,
            clip,
            densify,
            inject,
            suite,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = NoiseSchedule::make_linear(self.schedule_steps, self.beta_start, self.beta_end)?;
        s.ensure_terminal()?;
        Ok(s)
    }

    /// Cross-field checks; module-level checks are delegated to each module.
    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule()?;
        self.estimator_cfg.validate(&schedule)?;
        let bad = |m: String| Err(Error::Config(m));
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return bad("log and checkpoint intervals must be >= 1".into());
        }
        let g = &self.generator;
        if g.width == 0 || g.height == 0 {
            return bad("generator width and height must be >= 1".into());
        }
        if g.latent_dim() == 0 {
            return bad("latent dimension must be >= 1".into());
        }
        if g.views == 0 {
            return bad("generator.views must be >= 1".into());
        }
        if !(g.view_jitter >= 0.0 && g.view_jitter.is_finite()) {
            return bad(format!("generator.view_jitter must be >= 0, got {}", g.view_jitter));
        }
        match (&g.kind, &g.init) {
            (GeneratorKind::Identity, InitSpec::Mean(_) | InitSpec::Normal(_)) => {}
            (GeneratorKind::Splats, InitSpec::RandomSplats(n)) if *n > 0 => {}
            (GeneratorKind::Splats, InitSpec::GridSplats(c, r)) if c * r > 0 => {}
            (GeneratorKind::Splats, InitSpec::SceneFile(_)) => {}
            (kind, init) => return bad(format!("generator.init {init:?} does not fit a {kind:?} generator")),
        }
        if self.oracle.labels.iter().all(|(l, _)| *l != ConditionLabel::Null) {
            return bad("oracle.null.means is required".into());
        }
        if self.oracle.target == ConditionLabel::Null {
            return bad("oracle.target must be a concrete label".into());
        }
        if self.oracle.labels.iter().all(|(l, _)| *l != self.oracle.target) {
            return bad(format!("oracle.target {} has no mixture", self.oracle.target));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || o.group_lr.iter().any(|m| !(*m >= 0.0)) {
            return bad("step sizes must be positive".into());
        }
        if o.iterations == 0 {
            return bad("optim.iterations must be >= 1".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        self.clip.config(ScaleMap::Scalar(self.clip.scale.unwrap_or(1.0))).validate()?;
        if !(self.clip.scale_fallback > 0.0) {
            return bad("clip.scale_fallback must be positive".into());
        }
        if let Some(d) = &self.densify {
            d.validate()?;
            if g.kind != GeneratorKind::Splats {
                return bad("densification needs the splat generator".into());
            }
        }
        let inj = &self.inject;
        if !(inj.depth_noise_scale >= 0.0) || !(inj.depth_noise_df > 0.0) {
            return bad("inject.depth_noise_scale must be >= 0 and inject.depth_noise_df > 0".into());
        }
        let s = &self.suite;
        if s.samples == 0 {
            return bad("suite.samples must be >= 1".into());
        }
        if s.gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return bad("suite.gammas must lie in [0, 1]".into());
        }
        if !(s.x0_jitter >= 0.0) {
            return bad("suite.x0_jitter must be >= 0".into());
        }
        Ok(())
    }
}

fn read_generator(r: &Reader) -> Result<GeneratorSpec> {
    let kind = r
        .with("generator.kind", |s| match s {
            "identity" => Ok(GeneratorKind::Identity),
            "splats" => Ok(GeneratorKind::Splats),
            other => Err(Error::Config(format!("unknown generator '{other}'"))),
        })?
        .unwrap_or(GeneratorKind::Splats);
    let width = r.or("generator.width", 16)?;
    let height = r.or("generator.height", 16)?;
    let depth_latent = r.flag("generator.depth_latent", false)?;
    let image_dim = width * height * if depth_latent { 4 } else { 3 };
    let dim = r.or("generator.dim", image_dim)?;
    let init = r.with("generator.init", InitSpec::parse)?.unwrap_or(match kind {
        GeneratorKind::Identity => InitSpec::Mean(MeanSource::Const(0.5)),
        GeneratorKind::Splats => InitSpec::RandomSplats(16),
    });
    Ok(GeneratorSpec {
        kind,
        width,
        height,
        dim,
        depth_latent,
        init,
        views: r.or("generator.views", 1)?,
        view_jitter: r.or("generator.view_jitter", 0.0)?,
    })
}

fn read_oracle(r: &Reader) -> Result<OracleSpec> {
    let mut names: Vec<String> = r
        .raw
        .keys_with_prefix("oracle.")
        .filter_map(|k| {
            let rest = &k["oracle.".len()..];
            rest.split_once('.').map(|(label, _)| label.to_string())
        })
        .collect();
    names.dedup();
    let mut labels = Vec::new();
    if names.is_empty() {
        // built-in default: disc target against a three-pattern prior
        labels.push((
            ConditionLabel::Label(1),
            LabelSpec {
                means: vec![MeanSource::Pattern(Pattern::Disc)],
                variance: 0.01,
                weights: None,
            },
        ));
        labels.push((
            ConditionLabel::Null,
            LabelSpec {
                means: vec![
                    MeanSource::Pattern(Pattern::Disc),
                    MeanSource::Pattern(Pattern::Ring),
                    MeanSource::Pattern(Pattern::Stripes),
                ],
                variance: 0.02,
                weights: None,
            },
        ));
    }
    for name in names {
        let label: ConditionLabel = name
            .parse()
            .map_err(|_| Error::Config(format!("oracle.{name}: label must be 'null' or an integer")))?;
        let key = |field: &str| format!("oracle.{name}.{field}");
        let means = r
            .with(&key("means"), |s| s.split('|').map(|m| MeanSource::parse(m.trim())).collect())?
            .ok_or_else(|| Error::Config(format!("{} is required", key("means"))))?;
        labels.push((
            label,
            LabelSpec {
                means,
                variance: r.or(&key("variance"), 0.01)?,
                weights: r.list(&key("weights"))?,
            },
        ));
    }
    Ok(OracleSpec {
        labels,
        target: r
            .with("oracle.target", |s| {
                s.parse().map_err(|_| Error::Config(format!("bad label '{s}'")))
            })?
            .unwrap_or(ConditionLabel::Label(1)),
        depth_fill: r.or("oracle.depth_fill", 1.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_only_a_seed() {
        let cfg = RunConfig::from_text("run.seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.init_seed, 7);
        assert_eq!(cfg.optim.iterations, 2500);
        assert_eq!(cfg.estimator_cfg.guidance_scale, 7.5);
        assert_eq!(cfg.estimator, EstimatorKind::Tsm);
        assert_eq!(cfg.generator.kind, GeneratorKind::Splats);
        assert!(cfg.densify.is_none());
        assert_eq!(cfg.suite.gammas.len(), 11);
    }

    #[test]
    fn trailing_comments() {
        let raw = RawConfig::parse("run.seed = 3   # required\nrun.out = a#b\n").unwrap();
        assert_eq!(raw.get("run.seed"), Some("3"));
        assert_eq!(raw.get("run.out"), Some("a#b"));
    }

    #[test]
    fn seed_is_mandatory() {
        let e = RunConfig::from_text("optim.lr = 0.1").unwrap_err();
        assert!(e.to_string().contains("run.seed"), "{e}");
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let e = RunConfig::from_text("run.seed=1\noptim.learning_rate=3").unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("unknown key"), "{e}");
        assert!(RunConfig::from_text("run.seed=1\nfoo.bar=1").is_err());
        assert!(RunConfig::from_text("seed=1").is_err());
        assert!(RunConfig::from_text("run.seed=1\nrun.seed=2").is_err());
        assert!(RunConfig::from_text("run.seed=x").is_err());
        assert!(RunConfig::from_text("run.seed=1\nestimator.kind=xyz").is_err());
    }

    #[test]
    fn full_round() {
        let text = "\
# comment
run.seed = 3
run.log_interval = 5
schedule.T = 1000
oracle.target = 2
oracle.2.means = inline:1,2,3,4
oracle.2.variance = 0
oracle.null.means = const:0 | inline:1,2,3,4
oracle.null.weights = 0.25, 0.75
estimator.kind = ism
estimator.gamma = 0.5
estimator.mode = paper-literal
generator.kind = identity
generator.dim = 4
generator.init = normal:0.5
optim.kind = adam
densify.tau_pos = 3
";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.oracle.target, ConditionLabel::Label(2));
        assert_eq!(cfg.oracle.labels.len(), 2);
        let null = &cfg.oracle.labels.iter().find(|(l, _)| *l == ConditionLabel::Null).unwrap().1;
        assert_eq!(null.means.len(), 2);
        assert_eq!(null.weights, Some(vec![0.25, 0.75]));
        assert_eq!(cfg.estimator, EstimatorKind::Ism);
        assert_eq!(cfg.estimator_cfg.mode, FormulaMode::PaperLiteral);
        assert_eq!(cfg.generator.init, InitSpec::Normal(0.5));
        assert_eq!(cfg.optim.kind, OptimizerKind::Adam);
    }

    #[test]
    fn cross_field_checks() {
        assert!(RunConfig::from_text("run.seed=1\nestimator.gamma=1.5").is_err());
        assert!(RunConfig::from_text("run.seed=1\noracle.1.means=const:0").is_err()); // no null
        assert!(RunConfig::from_text("run.seed=1\ngenerator.kind=identity\ndensify.enabled=true").is_err());
        assert!(RunConfig::from_text("run.seed=1\ngenerator.kind=identity\ngenerator.init=random:4").is_err());
        assert!(RunConfig::from_text("run.seed=1\nclip.threshold=0").is_err());
        assert!(RunConfig::from_text("run.seed=1\nschedule.T=10").is_err()); // terminal bound
    }

    #[test]
    fn overrides_replace_values() {
        let mut raw = RawConfig::parse("run.seed=1\nestimator.gamma=0.3").unwrap();
        raw.set("estimator.gamma", "0.9");
        raw.set("run.seed", "11");
        let cfg = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.estimator_cfg.gamma, 0.9);
        assert_eq!(cfg.seed, 11);
    }
}
