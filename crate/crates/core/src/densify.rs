//! Clone/split/prune control driven by accumulated view-space positional
//! gradient norms.

use crate::error::{Error, Result};
use crate::generator::{Splat, SplatScene};

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyConfig {
    /// Average positional-gradient threshold for growth.
    pub tau_pos: f64,
    /// Largest-scale cutoff between clone (<=) and split (>).
    pub sigma_split: f64,
    /// Splats below this opacity are pruned.
    pub tau_opacity: f64,
    pub start_iter: usize,
    pub end_iter: usize,
    pub interval: usize,
    /// Offset of the split children along the major axis, in units of the
    /// parent's major sigma.
    pub split_offset: f64,
    pub split_divisor: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            tau_pos: 0.5,
            sigma_split: 2.0,
            tau_opacity: 0.02,
            start_iter: 100,
            end_iter: 1500,
            interval: 100,
            split_offset: 1.0,
            split_divisor: 1.6,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_pos > 0.0) || !(self.sigma_split > 0.0) {
            return Err(Error::Config("densify thresholds must be positive".into()));
        }
        if !(self.tau_opacity > 0.0 && self.tau_opacity < 1.0) {
            return Err(Error::Config(format!(
                "densify opacity threshold must lie in (0, 1), got {}",
                self.tau_opacity
            )));
        }
        if self.start_iter >= self.end_iter {
            return Err(Error::Config(format!(
                "densify window start ({}) must precede end ({})",
                self.start_iter, self.end_iter
            )));
        }
        if self.interval == 0 {
            return Err(Error::Config("densify interval must be >= 1".into()));
        }
        if !(self.split_divisor > 0.0) {
            return Err(Error::Config("split divisor must be positive".into()));
        }
        Ok(())
    }

    pub fn is_pass(&self, iter: usize) -> bool {
        (self.start_iter..=self.end_iter).contains(&iter) && iter % self.interval == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensifyAction {
    None,
    Clone,
    Split,
    Prune,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActionCounts {
    pub clones: usize,
    pub splits: usize,
    pub prunes: usize,
}

impl ActionCounts {
    pub fn growth(&self) -> usize {
        self.clones + self.splits
    }

    pub fn add(&mut self, o: &ActionCounts) {
        self.clones += o.clones;
        self.splits += o.splits;
        self.prunes += o.prunes;
    }
}

/// Running positional-gradient statistics, one slot per splat.
#[derive(Debug, Clone, Default)]
pub struct DensifyController {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl DensifyController {
    pub fn new(splats: usize) -> Self {
        Self {
            sums: vec![0.0; splats],
            counts: vec![0; splats],
        }
    }

    pub fn reset(&mut self, splats: usize) {
        self.sums.clear();
        self.sums.resize(splats, 0.0);
        self.counts.clear();
        self.counts.resize(splats, 0);
    }

    pub fn accumulate(&mut self, id: usize, pos_grad_norm: f64) -> Result<()> {
        let (Some(sum), Some(count)) = (self.sums.get_mut(id), self.counts.get_mut(id)) else {
            return Err(Error::UnknownId(id));
        };
        *sum += pos_grad_norm;
        *count += 1;
        Ok(())
    }

    /// Mean accumulated norm; 0 when nothing was recorded.
    pub fn average(&self, id: usize) -> Result<f64> {
        let (Some(sum), Some(count)) = (self.sums.get(id), self.counts.get(id)) else {
            return Err(Error::UnknownId(id));
        };
        Ok(if *count == 0 { 0.0 } else { sum / *count as f64 })
    }

    /// One action per splat, or an empty list off-schedule. Statistics are
    /// reset after every decision pass.
    pub fn decide(&mut self, scene: &SplatScene, cfg: &DensifyConfig, iter: usize) -> Vec<DensifyAction> {
        if !cfg.is_pass(iter) {
            return Vec::new();
        }
        let actions = scene
            .splats
            .iter()
            .enumerate()
            .map(|(id, s)| {
                let avg = self.average(id).unwrap_or(0.0);
                if s.opacity < cfg.tau_opacity {
                    DensifyAction::Prune
                } else if avg > cfg.tau_pos && s.max_scale() > cfg.sigma_split {
                    DensifyAction::Split
                } else if avg > cfg.tau_pos {
                    DensifyAction::Clone
                } else {
                    DensifyAction::None
                }
            })
            .collect();
        self.reset(scene.len());
        actions
    }

    /// Decide, apply, and resize the statistics to the new scene.
    pub fn pass(&mut self, scene: &mut SplatScene, cfg: &DensifyConfig, iter: usize) -> ActionCounts {
        let actions = self.decide(scene, cfg, iter);
        if actions.is_empty() {
            return ActionCounts::default();
        }
        let counts = apply_actions(scene, &actions, cfg);
        self.reset(scene.len());
        counts
    }
}

fn split_children(s: &Splat, cfg: &DensifyConfig) -> [Splat; 2] {
    let (sn, cs) = s.rot.sin_cos();
    let (axis, major) = if s.scale[0] >= s.scale[1] {
        ([cs, sn], s.scale[0])
    } else {
        ([-sn, cs], s.scale[1])
    };
    let off = cfg.split_offset * major;
    let mut child = s.clone();
    child.scale = [s.scale[0] / cfg.split_divisor, s.scale[1] / cfg.split_divisor];
    let mut a = child.clone();
    let mut b = child;
    a.pos = [s.pos[0] + off * axis[0], s.pos[1] + off * axis[1]];
    b.pos = [s.pos[0] - off * axis[0], s.pos[1] - off * axis[1]];
    [a, b]
}

/// Applies one decision pass. New splats are appended after the survivors.
/// A prune that would leave the scene empty is skipped.
pub fn apply_actions(scene: &mut SplatScene, actions: &[DensifyAction], cfg: &DensifyConfig) -> ActionCounts {
    let mut counts = ActionCounts::default();
    let survivors = actions.iter().filter(|a| **a != DensifyAction::Prune).count();
    let keep_one = survivors == 0;
    let mut kept = Vec::with_capacity(scene.len());
    let mut added = Vec::new();
    for (i, (s, a)) in scene.splats.iter().zip(actions).enumerate() {
        match a {
            DensifyAction::None => kept.push(s.clone()),
            DensifyAction::Clone => {
                kept.push(s.clone());
                added.push(s.clone());
                counts.clones += 1;
            }
            DensifyAction::Split => {
                added.extend(split_children(s, cfg));
                counts.splits += 1;
            }
            DensifyAction::Prune => {
                if keep_one && i == 0 {
                    kept.push(s.clone());
                } else {
                    counts.prunes += 1;
                }
            }
        }
    }
    kept.extend(added);
    scene.splats = kept;
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(scale: f64, opacity: f64) -> Splat {
        Splat {
            pos: [5.0, 5.0],
            scale: [scale, 0.5 * scale],
            rot: 0.3,
            color: [0.5; 3],
            opacity,
            z: 1.0,
        }
    }

    fn cfg() -> DensifyConfig {
        DensifyConfig {
            tau_pos: 1.0,
            sigma_split: 2.0,
            tau_opacity: 0.1,
            start_iter: 100,
            end_iter: 500,
            interval: 50,
            ..DensifyConfig::default()
        }
    }

    #[test]
    fn averages() {
        let mut c = DensifyController::new(2);
        c.accumulate(0, 1.0).unwrap();
        c.accumulate(0, 1.0).unwrap();
        c.accumulate(1, 3.0).unwrap();
        assert_eq!(c.average(0).unwrap(), 1.0);
        assert_eq!(c.average(1).unwrap(), 3.0);
        assert!(matches!(c.accumulate(2, 1.0), Err(Error::UnknownId(2))));
        let fresh = DensifyController::new(1);
        assert_eq!(fresh.average(0).unwrap(), 0.0);
    }

    #[test]
    fn decision_rules() {
        let scene = SplatScene::new(vec![
            splat(4.0, 0.5),  // big, hot -> split
            splat(1.0, 0.5),  // small, hot -> clone
            splat(1.0, 0.5),  // cold -> none
            splat(1.0, 0.05), // transparent, hot -> prune
        ])
        .unwrap();
        let mut c = DensifyController::new(4);
        c.accumulate(0, 2.0).unwrap();
        c.accumulate(1, 2.0).unwrap();
        c.accumulate(2, 0.5).unwrap();
        c.accumulate(3, 5.0).unwrap();
        let actions = c.decide(&scene, &cfg(), 100);
        assert_eq!(
            actions,
            vec![
                DensifyAction::Split,
                DensifyAction::Clone,
                DensifyAction::None,
                DensifyAction::Prune
            ]
        );
        // statistics were reset
        assert_eq!(c.average(0).unwrap(), 0.0);
    }

    #[test]
    fn nothing_outside_window() {
        let scene = SplatScene::new(vec![splat(4.0, 0.5)]).unwrap();
        let mut c = DensifyController::new(1);
        c.accumulate(0, 100.0).unwrap();
        for iter in [0, 50, 99, 101, 149, 550, 1000] {
            assert!(c.decide(&scene, &cfg(), iter).is_empty(), "iter {iter}");
        }
        assert_eq!(c.average(0).unwrap(), 100.0);
    }

    #[test]
    fn counts_and_geometry() {
        let mut scene = SplatScene::new(vec![
            splat(4.0, 0.5),
            splat(1.0, 0.5),
            splat(1.0, 0.5),
            splat(1.0, 0.05),
        ])
        .unwrap();
        let mut c = DensifyController::new(4);
        for (id, g) in [(0, 2.0), (1, 2.0), (3, 2.0)] {
            c.accumulate(id, g).unwrap();
        }
        let before = scene.len();
        let counts = c.pass(&mut scene, &cfg(), 200);
        assert_eq!(counts, ActionCounts { clones: 1, splits: 1, prunes: 1 });
        assert_eq!(scene.len(), before + counts.clones + counts.splits - counts.prunes);
        scene.validate().unwrap();
        // split children: scales / 1.6, symmetric about the parent along the major axis
        let kids: Vec<_> = scene.splats.iter().filter(|s| (s.scale[0] - 2.5).abs() < 1e-12).collect();
        assert_eq!(kids.len(), 2);
        let mid = [(kids[0].pos[0] + kids[1].pos[0]) / 2.0, (kids[0].pos[1] + kids[1].pos[1]) / 2.0];
        assert!((mid[0] - 5.0).abs() < 1e-12 && (mid[1] - 5.0).abs() < 1e-12);
        let sep = (kids[0].pos[0] - kids[1].pos[0]).hypot(kids[0].pos[1] - kids[1].pos[1]);
        assert!((sep - 8.0).abs() < 1e-12);
    }

    #[test]
    fn never_prunes_to_empty() {
        let mut scene = SplatScene::new(vec![splat(1.0, 0.05), splat(1.0, 0.05)]).unwrap();
        let mut c = DensifyController::new(2);
        c.pass(&mut scene, &cfg(), 100);
        assert_eq!(scene.len(), 1);
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        assert!(DensifyConfig { start_iter: 600, ..cfg() }.validate().is_err());
        assert!(DensifyConfig { interval: 0, ..cfg() }.validate().is_err());
        assert!(DensifyConfig { tau_opacity: 1.0, ..cfg() }.validate().is_err());
    }
}
