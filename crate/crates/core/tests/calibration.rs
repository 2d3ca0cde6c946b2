use matchbox_core::calib::{
    calibrate_capture, calibrate_from_frames, equalize, estimate_homography, find_checkerboard_corners, rectify_and_scale,
    CalibrationProfile, CropRect, TargetPpi,
};
use matchbox_core::geometry::{Homography, Point2};
use matchbox_core::image::RasterImage;
use matchbox_core::synth::render_checkerboard;
use matchbox_core::Error;

fn board_homography(scale: f64, angle: f64, persp: (f64, f64), offset: (f64, f64)) -> Homography<f64> {
    let (s, c) = angle.sin_cos();
    Homography::from_matrix([
        [scale * c, -scale * s, offset.0],
        [scale * s, scale * c, offset.1],
        [persp.0, persp.1, 1.0],
    ])
    .unwrap()
}

#[test]
fn corners_found_within_half_pixel() {
    let (rows, cols, sq) = (6, 8, 20.0);
    let cases = [
        board_homography(1.0, 0.0, (0.0, 0.0), (40.0, 35.0)),
        board_homography(1.1, 0.12, (2e-4, -1e-4), (60.0, 30.0)),
        board_homography(0.9, -0.2, (-1.5e-4, 2e-4), (50.0, 70.0)),
    ];
    for h in cases {
        let img = render_checkerboard(320, 260, rows, cols, sq, &h).unwrap();
        let found = find_checkerboard_corners(&img, rows, cols).unwrap();
        assert_eq!(found.len(), rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let truth = h.apply(Point2::new((c + 1) as f64 * sq, (r + 1) as f64 * sq)).unwrap();
                let got = found[r * cols + c];
                assert!(got.distance(&truth) < 0.5, "corner ({r},{c}) at {got:?}, truth {truth:?}");
            }
        }
    }
}

#[test]
fn blank_frame_fails_detection() {
    let err = find_checkerboard_corners(&RasterImage::filled(200, 200, 128), 7, 7).unwrap_err();
    assert!(matches!(err, Error::DetectionFailure { expected: 49, found: 0 }));
}

#[test]
fn partial_board_reports_count() {
    let h = board_homography(1.0, 0.0, (0.0, 0.0), (-60.0, 30.0));
    let img = render_checkerboard(220, 200, 6, 8, 20.0, &h).unwrap();
    match find_checkerboard_corners(&img, 6, 8) {
        Err(Error::DetectionFailure { expected, found }) => {
            assert_eq!(expected, 48);
            assert!(found < 48);
        }
        other => panic!("expected detection failure, got {other:?}"),
    }
}

#[test]
fn frames_to_profile_and_rectification_round_trip() {
    // A 7x9 board of 1 mm squares imaged at about 1000 ppi with mild perspective.
    let (rows, cols) = (7, 9);
    let sq = 1000.0 / 25.4;
    let h = board_homography(1.0, 0.03, (4e-5, -3e-5), (30.0, 25.0));
    let frame = render_checkerboard(480, 400, rows, cols, sq, &h).unwrap();
    let profile = calibrate_from_frames(&[frame.clone()], rows, cols, 1.0).unwrap();
    assert!((profile.native_ppi_x - 1000.0).abs() < 60.0, "{}", profile.native_ppi_x);
    assert!((profile.native_ppi_y - 1000.0).abs() < 60.0, "{}", profile.native_ppi_y);

    // Rectify at the native scale and compare with a fronto-parallel render.
    let native = CalibrationProfile { native_ppi_x: 500.0, native_ppi_y: 500.0, ..profile.clone() };
    let out = rectify_and_scale(&frame, &native, TargetPpi::Adult).unwrap();
    let step_x = profile.crop_rect.width / (cols + 1) as f64;
    let step_y = profile.crop_rect.height / (rows + 1) as f64;
    let flat = Homography::from_matrix([[step_x / sq, 0.0, 0.0], [0.0, step_y / sq, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let ideal = render_checkerboard(out.image.width(), out.image.height(), rows, cols, sq, &flat).unwrap();
    let mad: f64 = out.image.data().iter().zip(ideal.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs()).sum::<f64>()
        / ideal.data().len() as f64;
    assert!(mad < 3.0, "mean abs diff {mad}");
}

#[test]
fn homography_recovers_projective_maps() {
    let h = Homography::from_matrix([[0.9, 0.1, 12.0], [-0.05, 1.2, -4.0], [2e-4, -1e-4, 1.0]]).unwrap();
    let src: Vec<Point2<f64>> = (0..5).flat_map(|i| (0..4).map(move |j| Point2::new(i as f64 * 37.0, j as f64 * 29.0))).collect();
    let dst: Vec<_> = src.iter().map(|&p| h.apply(p).unwrap()).collect();
    let est = estimate_homography(&src, &dst).unwrap();
    assert!(est.max_reprojection_error < 1e-6);
    let est32 = estimate_homography(
        &src.iter().map(|p| p.cast::<f32>()).collect::<Vec<_>>(),
        &dst.iter().map(|p| p.cast::<f32>()).collect::<Vec<_>>(),
    )
    .unwrap();
    assert!(est32.mean_reprojection_error < 0.05);
}

#[test]
fn capture_path_produces_target_resolution() {
    let raw = RasterImage::from_fn(300, 300, |x, y| (((x / 7) ^ (y / 5)) % 2 * 120 + 60) as u8);
    let profile = CalibrationProfile {
        homography: Homography::identity(),
        native_ppi_x: 1000.0,
        native_ppi_y: 1000.0,
        crop_rect: CropRect { x: 20.0, y: 20.0, width: 200.0, height: 240.0 },
    };
    let out = calibrate_capture(&raw, &profile, TargetPpi::Adult).unwrap();
    assert_eq!((out.image.width(), out.image.height()), (100, 120));
    assert!(!out.upsampled);
    let neonate = calibrate_capture(&raw, &profile, TargetPpi::Neonate).unwrap();
    assert!(neonate.upsampled);
    assert_eq!(neonate.image.width(), 380);
    let eq = equalize(&raw).unwrap();
    assert_eq!(eq.data().iter().copied().max(), Some(255));
}
