use std::f64::consts::PI;

use matchbox_core::calib::{equalize, estimate_homography, to_grayscale};
use matchbox_core::descriptor::{compute_descriptor, cosine, Descriptor};
use matchbox_core::extract::{crossing_number, Minutia, MinutiaKind, RIDGE};
use matchbox_core::geometry::Point2;
use matchbox_core::image::RasterImage;
use matchbox_core::matcher::{candidate_pairs, match_templates, MatcherConfig};
use matchbox_core::spoofdet::{fuse_max, DirectScorer, FtirScorer, SpoofScore, SpoofScorer, View};
use matchbox_core::synth::perturb_genuine;
use matchbox_core::template::Template;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gray_image() -> impl Strategy<Value = RasterImage> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h).prop_map(move |d| RasterImage::gray(w, h, d).unwrap())
    })
}

fn random_template(seed: u64, n: usize, dim: usize) -> Template<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let minutiae = (0..n)
        .map(|_| {
            let kind = if rng.random_bool(0.5) { MinutiaKind::Ending } else { MinutiaKind::Bifurcation };
            Minutia::new(
                rng.random_range(0.0..300.0),
                rng.random_range(0.0..300.0),
                rng.random_range(0.0..2.0 * PI),
                kind,
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    let descriptors = (0..n)
        .map(|_| Descriptor::normalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    Template::new(minutiae, descriptors, 500).unwrap()
}

fn ridge_patch(seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, f, p) = (rng.random_range(0.0..PI), rng.random_range(0.07..0.15), rng.random_range(0.0..2.0 * PI));
    let noise: Vec<f64> = (0..96 * 96).map(|_| rng.random_range(-20.0..20.0)).collect();
    RasterImage::from_fn(96, 96, |x, y| {
        let t = (x as f64 * a.cos() + y as f64 * a.sin()) * f * 2.0 * PI + p;
        (128.0 + 80.0 * t.sin() + noise[y * 96 + x]).clamp(0.0, 255.0) as u8
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn equalize_matches_cdf_definition(img in gray_image()) {
        let out = equalize(&img).unwrap();
        let n = img.data().len() as u64;
        let cdf = |v: u8| img.data().iter().filter(|&&p| p <= v).count() as u64;
        let cdf_min = cdf(*img.data().iter().min().unwrap());
        for (&v, &o) in img.data().iter().zip(out.data()) {
            let want = if n == cdf_min { 0 } else {
                let (num, den) = (255 * (cdf(v) - cdf_min), n - cdf_min);
                (2 * num + den) / (2 * den)
            };
            prop_assert_eq!(u64::from(o), want);
        }
    }

    #[test]
    fn equalize_is_monotone(img in gray_image()) {
        let out = equalize(&img).unwrap();
        for (a, oa) in img.data().iter().zip(out.data()) {
            for (b, ob) in img.data().iter().zip(out.data()) {
                if a <= b {
                    prop_assert!(oa <= ob);
                }
            }
        }
    }

    #[test]
    fn equalized_cdf_is_near_uniform(seed in any::<u64>(), levels in 64usize..=256) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<u8> = (0..=255u8).collect();
        for k in 0..256 { values.swap(k, rng.random_range(k..256)); }
        let pool = &values[..levels];
        let data: Vec<u8> = (0..64 * 64).enumerate()
            .map(|(k, _)| if k < levels { pool[k] } else { pool[rng.random_range(0..levels)] })
            .collect();
        let img = RasterImage::gray(64, 64, data).unwrap();
        let out = equalize(&img).unwrap();
        let n = img.data().len() as f64;
        let lo = *img.data().iter().min().unwrap();
        let f_min = img.data().iter().filter(|&&p| p == lo).count() as f64 / n;
        for &v in pool {
            let f = img.data().iter().filter(|&&p| p <= v).count() as f64 / n;
            let level = out.data()[img.data().iter().position(|&p| p == v).unwrap()];
            let uniform = f64::from(level) / 255.0;
            prop_assert!(((f - f_min) / (1.0 - f_min) - uniform).abs() <= 1.0 / 256.0);
        }
    }

    #[test]
    fn gray_replication_round_trip(img in gray_image()) {
        let rgb: Vec<u8> = img.data().iter().flat_map(|&g| [g, g, g]).collect();
        let rgb = RasterImage::rgb(img.width(), img.height(), rgb).unwrap();
        let back = to_grayscale(&rgb).unwrap();
        prop_assert_eq!(back.data(), img.data());
    }

    #[test]
    fn homography_estimate_is_scale_equivariant(seed in any::<u64>(), c in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<Point2<f64>> = (0..12).map(|_| Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0))).collect();
        let dst: Vec<Point2<f64>> = src.iter().map(|p| {
            let w = 1.0 + 1e-4 * p.x - 2e-4 * p.y;
            Point2::new((1.1 * p.x + 0.2 * p.y + 5.0) / w + rng.random_range(-0.5..0.5), (-0.1 * p.x + 0.9 * p.y - 3.0) / w + rng.random_range(-0.5..0.5))
        }).collect();
        let scale = |ps: &[Point2<f64>]| ps.iter().map(|p| Point2::new(c * p.x, c * p.y)).collect::<Vec<_>>();
        let a = estimate_homography(&src, &dst).unwrap();
        let b = estimate_homography(&scale(&src), &scale(&dst)).unwrap();
        let (ma, mb) = (a.homography.matrix(), b.homography.matrix());
        let conj = [[1.0, 1.0, c], [1.0, 1.0, c], [1.0 / c, 1.0 / c, 1.0]];
        for r in 0..3 {
            for k in 0..3 {
                let want = ma[r][k] / ma[2][2] * conj[r][k];
                let got = mb[r][k] / mb[2][2];
                prop_assert!((want - got).abs() <= 1e-7 * (1.0 + want.abs()), "{r},{k}: {want} vs {got}");
            }
        }
        prop_assert!((b.mean_reprojection_error - c * a.mean_reprojection_error).abs() <= 1e-7 * (1.0 + b.mean_reprojection_error));
        prop_assert!((b.max_reprojection_error - c * a.max_reprojection_error).abs() <= 1e-7 * (1.0 + b.max_reprojection_error));
    }

    #[test]
    fn crossing_number_matches_definition(w in 3usize..20, h in 3usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = RasterImage::from_fn(w, h, |_, _| if rng.random_bool(0.4) { RIDGE } else { 255 });
        let on = |x: i64, y: i64| -> i32 {
            i32::from(x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && img.get(x as usize, y as usize) == RIDGE)
        };
        for y in 0..h {
            for x in 0..w {
                if img.get(x, y) != RIDGE { continue; }
                let (x0, y0) = (x as i64, y as i64);
                let ring = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];
                let p: Vec<i32> = ring.iter().map(|(dx, dy)| on(x0 + dx, y0 + dy)).collect();
                let cn = (0..8).map(|k| (p[k] - p[(k + 1) % 8]).abs()).sum::<i32>() / 2;
                prop_assert_eq!(i32::from(crossing_number(&img, x, y)), cn);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn descriptors_are_unit_and_nonnegative(seed in any::<u64>()) {
        let patch = ridge_patch(seed);
        let d64 = compute_descriptor::<f64>(&patch).unwrap();
        let d32 = compute_descriptor::<f32>(&patch).unwrap();
        let norm64: f64 = d64.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm32: f64 = d32.values().iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        prop_assert!((norm64 - 1.0).abs() < 1e-6);
        prop_assert!((norm32 - 1.0).abs() < 1e-6);
        prop_assert!(d64.values().iter().all(|&v| v >= 0.0));
        prop_assert!(d32.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn descriptor_ignores_affine_brightness(seed in any::<u64>(), gain in 0.3f64..1.2, offset in -40.0f64..40.0) {
        let patch = ridge_patch(seed);
        // Keep the transform inside [0, 255] so no value is clipped.
        let lo = *patch.data().iter().min().unwrap() as f64;
        let hi = *patch.data().iter().max().unwrap() as f64;
        let offset = offset.clamp(-gain * lo, 255.0 - gain * hi);
        let shifted = RasterImage::from_fn(96, 96, |x, y| (gain * f64::from(patch.get(x, y)) + offset).round() as u8);
        let a = compute_descriptor::<f64>(&patch).unwrap();
        let b = compute_descriptor::<f64>(&shifted).unwrap();
        prop_assert!(cosine(&a, &b).unwrap() > 0.999);
    }

    #[test]
    fn integer_offset_is_invisible(seed in any::<u64>(), offset in -30i32..30) {
        let patch = ridge_patch(seed);
        let lo = i32::from(*patch.data().iter().min().unwrap());
        let hi = i32::from(*patch.data().iter().max().unwrap());
        let offset = offset.clamp(-lo, 255 - hi);
        let shifted = RasterImage::from_fn(96, 96, |x, y| (i32::from(patch.get(x, y)) + offset) as u8);
        let a = compute_descriptor::<f64>(&patch).unwrap();
        let b = compute_descriptor::<f64>(&shifted).unwrap();
        prop_assert!(cosine(&a, &b).unwrap() > 0.999);
    }

    #[test]
    fn cosine_is_symmetric(sa in any::<u64>(), sb in any::<u64>(), dim in 1usize..160) {
        let mut ra = ChaCha8Rng::seed_from_u64(sa);
        let mut rb = ChaCha8Rng::seed_from_u64(sb);
        let a = Descriptor::<f64>::normalized((0..dim).map(|_| ra.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Descriptor::<f64>::normalized((0..dim).map(|_| rb.random_range(-1.0..1.0)).collect()).unwrap();
        let ab = cosine(&a, &b).unwrap();
        prop_assert_eq!(ab.to_bits(), cosine(&b, &a).unwrap().to_bits());
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!(cosine(&a, &a).unwrap() >= 1.0 - 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn match_result_invariants(sa in any::<u64>(), sb in any::<u64>(), na in 0usize..40, nb in 0usize..40) {
        let a = random_template(sa, na, 6);
        let b = if sa % 3 == 0 { perturb_genuine(&a, sb, 2.0, 0.2, 0.7, (10.0, -4.0)).unwrap() } else { random_template(sb, nb, 6) };
        let cfg = MatcherConfig::default();
        let r = match_templates(&a, &b, 1.0, &cfg).unwrap();
        for (k, p) in r.pairs.iter().enumerate() {
            prop_assert!(r.pairs[..k].iter().all(|q| q.i != p.i && q.j != p.j));
            prop_assert!(p.i < a.len() && p.j < b.len());
        }
        prop_assert_eq!(r.pairs.iter().fold(0.0, |s, p| s + p.sim), r.score);
        prop_assert_eq!(r.decision == matchbox_core::matcher::Decision::Accept, r.score >= 1.0);

        // Determinism and symmetry.
        let again = match_templates(&a, &b, 1.0, &cfg).unwrap();
        prop_assert_eq!(&r, &again);
        let back = match_templates(&b, &a, 1.0, &cfg).unwrap();
        prop_assert!((back.score - r.score).abs() <= 1e-6);
    }

    #[test]
    fn rigid_motion_keeps_score(seed in any::<u64>(), n in 1usize..40, rot in -PI..PI, tx in -100.0f64..100.0, ty in -100.0f64..100.0) {
        let g = random_template(seed, n, 6);
        let p = perturb_genuine(&g, seed ^ 1, 3.0, 0.1, 0.0, (0.0, 0.0)).unwrap();
        let moved = perturb_genuine(&p, 0, 0.0, 0.0, rot, (tx, ty)).unwrap();
        let cfg = MatcherConfig::default();
        prop_assert_eq!(candidate_pairs(&p, &g, cfg.top_k).unwrap(), candidate_pairs(&moved, &g, cfg.top_k).unwrap());
        let a = match_templates(&p, &g, 0.0, &cfg).unwrap();
        let b = match_templates(&moved, &g, 0.0, &cfg).unwrap();
        prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
        prop_assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn adding_a_probe_minutia_never_shrinks_candidates(sa in any::<u64>(), sb in any::<u64>(), n in 1usize..20, k in 1usize..200) {
        let big = random_template(sa, n + 1, 6);
        let small = big.retain(|i| i < n).unwrap();
        let g = random_template(sb, 15, 6);
        let before = candidate_pairs(&small, &g, k).unwrap().len();
        let after = candidate_pairs(&big, &g, k).unwrap().len();
        prop_assert!(after >= before);
    }

    #[test]
    fn mbt_round_trip(seed in any::<u64>(), n in 0usize..60, dim in 1usize..130) {
        let t = random_template(seed, n, dim).cast::<f32>();
        let bytes = t.to_mbt();
        let back = Template::<f32>::from_mbt(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.to_mbt(), bytes);
    }

    #[test]
    fn scorer_outputs_stay_in_unit_interval(w in 1usize..48, h in 1usize..48, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rgb = RasterImage::rgb(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap();
        let gray = RasterImage::gray(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        let d = DirectScorer::default().score(&rgb).unwrap();
        let f = FtirScorer::default().score(&gray).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.value));
        prop_assert!((0.0..=1.0).contains(&f.value));
    }

    #[test]
    fn max_rule_algebra(a in -0.5f64..1.5, b in -0.5f64..1.5, c in -0.5f64..1.5) {
        let f = |x: f64, y: f64| fuse_max(SpoofScore::new(x, View::Direct), SpoofScore::new(y, View::Ftir)).unwrap();
        prop_assert_eq!(f(a, b).value, f(b, a).value);
        prop_assert_eq!(f(a, a).value, SpoofScore::new(a, View::Direct).value);
        prop_assert_eq!(f(f(a, b).value, c).value, f(a, f(b, c).value).value);
        prop_assert!(f(a, b).value >= SpoofScore::new(a, View::Direct).value);
        prop_assert!(f(a, b).value >= SpoofScore::new(b, View::Ftir).value);
        if a <= c {
            prop_assert!(f(a, b).value <= f(c, b).value);
            prop_assert!(f(b, a).value <= f(b, c).value);
        }
        prop_assert_eq!(f(a, b).view, View::Fused);
        prop_assert!(fuse_max(SpoofScore::new(a, View::Ftir), SpoofScore::new(b, View::Direct)).is_err());
    }
}
