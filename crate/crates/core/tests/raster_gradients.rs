//! Finite-difference checks of the splat rasterizer over random scenes.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsmlab::generator::{backward, render, RenderOutput, SplatScene, ViewParam};

fn weighted_loss(scene: &SplatScene, view: &ViewParam, w: usize, h: usize, gout: &RenderOutput) -> f64 {
    let r = render(scene, view, w, h).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&r.color, &gout.color) + dot(&r.depth, &gout.depth) + dot(&r.alpha, &gout.alpha)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn analytic_matches_central_differences(seed in any::<u64>(), jitter in 0.0f64..1.0) {
        let (w, h) = (12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = SplatScene::random(&mut rng, 4, w, h);
        let mut zs: Vec<f64> = scene.splats.iter().map(|s| s.z).collect();
        zs.sort_by(f64::total_cmp);
        prop_assume!(zs.windows(2).all(|p| p[1] - p[0] > 1e-2));
        let view = ViewParam::jitter(&mut rng, w, h, jitter);
        let mut sample = |n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let gout = RenderOutput { width: w, height: h, color: sample(3 * w * h), depth: sample(w * h), alpha: sample(w * h) };
        let grads = backward(&scene, &view, &gout).unwrap();
        let step = 1e-5;
        for (k, g) in grads.iter().enumerate() {
            let analytic = [g.pos[0], g.pos[1], g.scale[0], g.rot, g.opacity, g.color[1], g.z];
            for (p, a) in analytic.into_iter().enumerate() {
                let eval = |d: f64| {
                    let mut s = scene.clone();
                    let sp = &mut s.splats[k];
                    match p {
                        0 | 1 => sp.pos[p] += d,
                        2 => sp.scale[0] += d,
                        3 => sp.rot += d,
                        4 => sp.opacity += d,
                        5 => sp.color[1] += d,
                        _ => sp.z += d,
                    }
                    weighted_loss(&s, &view, w, h, &gout)
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let err = (a - fd).abs();
                prop_assert!(err <= 1e-6 || err <= 1e-4 * a.abs().max(fd.abs()),
                    "splat {k} param {p}: analytic {a} fd {fd}");
            }
        }
    }

    #[test]
    fn render_is_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = SplatScene::random(&mut rng, 6, 10, 10);
        let r = render(&scene, &ViewParam::identity(), 10, 10).unwrap();
        prop_assert!(r.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(r.color.iter().all(|c| c.is_finite() && *c >= 0.0 && *c <= 1.0 + 1e-12));
    }
}
