use std::f64::consts::PI;

use super::*;
use crate::geometry::angle_diff;

fn stripes(w: usize, h: usize, angle: f64, period: f64) -> RasterImage {
    let (s, c) = angle.sin_cos();
    RasterImage::from_fn(w, h, |x, y| {
        let across = -(x as f64) * s + y as f64 * c;
        (128.0 + 100.0 * (2.0 * PI * across / period).sin()).round() as u8
    })
}

/// Parses `X` as ridge and anything else as background.
pub(crate) fn skeleton_from_ascii(rows: &[&str]) -> RasterImage {
    let h = rows.len();
    let w = rows[0].len();
    RasterImage::from_fn(w, h, |x, y| if rows[y].as_bytes()[x] == b'X' { RIDGE } else { BACKGROUND })
}

#[test]
fn vertical_stripes_point_down() {
    let img = stripes(128, 128, PI / 2.0, 9.0);
    let field = orientation_field(&img, 16).unwrap();
    assert_eq!(field.grid(), (8, 8));
    for (a, c) in field.angles().iter().zip(field.coherences()) {
        assert!(angle_diff(2.0 * a, PI) / 2.0 < 0.05, "angle {a}");
        assert!(*c > 0.9, "coherence {c}");
    }
}

#[test]
fn diagonal_stripes() {
    let img = stripes(130, 100, PI / 4.0, 9.0);
    let field = orientation_field(&img, 16).unwrap();
    assert_eq!(field.grid(), (9, 7));
    for a in field.angles() {
        assert!(angle_diff(2.0 * a, PI / 2.0) / 2.0 < 0.05, "angle {a}");
    }
}

#[test]
fn flat_image_has_no_coherence() {
    let field = orientation_field(&RasterImage::filled(64, 64, 90), 16).unwrap();
    assert!(field.coherences().iter().all(|&c| c == 0.0));
    assert!((0..4).all(|b| !field.is_foreground(b, b)));
}

#[test]
fn orientation_field_rejects_bad_sizes() {
    assert!(orientation_field(&RasterImage::filled(10, 40, 0), 16).is_err());
    assert!(orientation_field(&RasterImage::filled(64, 64, 0), 4).is_err());
    assert!(orientation_field(&RasterImage::filled(64, 64, 0), 33).is_err());
}

#[test]
fn incoherent_blocks_pass_through() {
    let img = RasterImage::from_fn(64, 64, |x, y| if (x / 32 + y / 32) % 2 == 0 { 70 } else { 71 });
    let field = orientation_field(&img, 16).unwrap();
    let out = enhance(&img, &field, 0.11).unwrap();
    assert_eq!(out, img);
    assert!(enhance(&img, &field, 0.3).is_err());
}

#[test]
fn white_image_has_empty_skeleton() {
    let sk = binarize_thin(&RasterImage::filled(40, 30, 255)).unwrap();
    assert!(sk.data().iter().all(|&v| v == BACKGROUND));
}

#[test]
fn thick_bar_thins_to_centerline() {
    let img = RasterImage::from_fn(50, 25, |x, y| if (5..45).contains(&x) && (10..15).contains(&y) { 0 } else { 255 });
    let sk = thin(&img).unwrap();
    for x in 0..50 {
        let col: Vec<usize> = (0..25).filter(|&y| sk.get(x, y) == RIDGE).collect();
        assert!(col.len() <= 1, "column {x} has {col:?}");
        if (10..40).contains(&x) {
            assert_eq!(col, vec![12], "column {x}");
        }
    }
}

#[test]
fn annulus_thins_to_closed_loop() {
    let img = RasterImage::from_fn(40, 40, |x, y| {
        let r = ((x as f64 - 19.5).powi(2) + (y as f64 - 19.5).powi(2)).sqrt();
        if (8.0..13.0).contains(&r) {
            0
        } else {
            255
        }
    });
    let sk = thin(&img).unwrap();
    let mut count = 0;
    for y in 0..40 {
        for x in 0..40 {
            if sk.get(x, y) == RIDGE {
                count += 1;
                assert_eq!(crossing_number(&sk, x, y), 2, "pixel ({x},{y})");
            }
        }
    }
    assert!(count > 40);
}

#[test]
fn blank_skeleton_has_no_minutiae() {
    let sk = RasterImage::filled(30, 30, BACKGROUND);
    let field = OrientationField::uniform(30, 30, 16, 0.0, 1.0);
    assert!(detect_minutiae::<f64>(&sk, &field).unwrap().is_empty());
}

#[test]
fn line_ending_at_center() {
    let sk = skeleton_from_ascii(&[
        "....X....",
        "....X....",
        "....X....",
        "....X....",
        "....X....",
        ".........",
        ".........",
        ".........",
        ".........",
    ]);
    let field = OrientationField::uniform(9, 9, 8, PI / 2.0, 1.0);
    let m = detect_minutiae_with::<f64>(&sk, &field, &MinutiaeFilter::none()).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!((m[0].x, m[0].y, m[0].kind), (4.0, 4.0, MinutiaKind::Ending));
    // The ridge body lies above, so the ending points up (-y).
    assert!(angle_diff(m[0].theta, 1.5 * PI) < 1e-9);
}

#[test]
fn y_junction_has_one_bifurcation() {
    let sk = skeleton_from_ascii(&[
        ".........",
        ".X.....X.",
        "..X...X..",
        "...X.X...",
        "....X....",
        "....X....",
        "....X....",
        "....X....",
        ".........",
    ]);
    let field = OrientationField::uniform(9, 9, 8, PI / 2.0, 1.0);
    let m = detect_minutiae_with::<f64>(&sk, &field, &MinutiaeFilter::none()).unwrap();
    let bif: Vec<_> = m.iter().filter(|m| m.kind == MinutiaKind::Bifurcation).collect();
    assert_eq!(bif.len(), 1);
    assert_eq!((bif[0].x, bif[0].y), (4.0, 4.0));
    // Branches open upwards, so the valley between them points up.
    assert!(angle_diff(bif[0].theta, 1.5 * PI) < 1e-9);
    assert_eq!(m.iter().filter(|m| m.kind == MinutiaKind::Ending).count(), 3);
}

#[test]
fn merge_keeps_minutiae_apart() {
    // Two endings 3 px apart on separate stubs.
    let sk = skeleton_from_ascii(&[
        "..................",
        "..XXXXX...........",
        "..................",
        "..................",
        "..XXXXXXXXXXXX....",
        "..................",
    ]);
    let field = OrientationField::uniform(18, 6, 8, 0.0, 1.0);
    let filter = MinutiaeFilter { merge_distance: 6.0, ..MinutiaeFilter::none() };
    let m = detect_minutiae_with::<f64>(&sk, &field, &filter).unwrap();
    for (i, a) in m.iter().enumerate() {
        for b in &m[i + 1..] {
            assert!(a.distance(b) >= 6.0);
        }
    }
}

#[test]
fn spurs_are_pruned() {
    let sk = skeleton_from_ascii(&[
        "..............................",
        "..............................",
        "..XXXXXXXXXXXXXXXXXXXXXXXXXX..",
        "..............X...............",
        "..............X...............",
        "..............X...............",
        "..............................",
    ]);
    let field = OrientationField::uniform(30, 7, 8, 0.0, 1.0);
    let filter = MinutiaeFilter { spur_length: 8, ..MinutiaeFilter::none() };
    let m = detect_minutiae_with::<f64>(&sk, &field, &filter).unwrap();
    assert!(m.iter().all(|m| m.kind == MinutiaKind::Ending));
    assert_eq!(m.len(), 2);
}

#[test]
fn facing_endings_are_dropped() {
    let sk = skeleton_from_ascii(&[
        "..............................",
        "..XXXXXXXXXXX....XXXXXXXXXXX..",
        "..............................",
    ]);
    let field = OrientationField::uniform(30, 3, 8, 0.0, 1.0);
    let filter = MinutiaeFilter { facing_endings: 8.0, ..MinutiaeFilter::none() };
    let m = detect_minutiae_with::<f64>(&sk, &field, &filter).unwrap();
    let xs: Vec<f64> = m.iter().map(|m| m.x).collect();
    assert_eq!(xs, vec![2.0, 27.0]);
}
