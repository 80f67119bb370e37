mod common;

use std::fs;

use common::rng;
use dscnn::data::{augment, load_dataset, make_synthetic, pgm, AffineParams, AugmentSpec, Difficulty, SamplePair};
use dscnn::{Error, Tensor};

#[test]
fn missing_mask_is_a_load_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    make_synthetic(2, 16, Difficulty::Easy, 0).unwrap().save(dir.path()).unwrap();
    fs::remove_file(dir.path().join("masks/p000_1.pgm")).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Load(msg)) => assert!(msg.contains("p000_1.pgm"), "{msg}"),
        other => panic!("expected load error, got {other:?}"),
    }
}

#[test]
fn empty_directory_is_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn colour_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("images")).unwrap();
    fs::create_dir_all(dir.path().join("masks")).unwrap();
    let mut ppm = b"P6\n2 2\n255\n".to_vec();
    ppm.extend([0u8; 12]);
    fs::write(dir.path().join("images/a_0.pgm"), &ppm).unwrap();
    fs::write(dir.path().join("masks/a_0.pgm"), &ppm).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
}

#[test]
fn eight_bit_full_scale_maps_to_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("images")).unwrap();
    fs::create_dir_all(dir.path().join("masks")).unwrap();
    let n = 512 * 512;
    let mut pixels: Vec<u16> = (0..n).map(|i| (i % 256) as u16).collect();
    pixels[1000] = 255;
    let img = pgm::GrayImage { width: 512, height: 512, maxval: 255, pixels };
    let mask = pgm::GrayImage { width: 512, height: 512, maxval: 255, pixels: (0..n).map(|i| if i % 7 == 0 { 255 } else { 0 }).collect() };
    pgm::write(&dir.path().join("images/p001_3.pgm"), &img).unwrap();
    pgm::write(&dir.path().join("masks/p001_3.pgm"), &mask).unwrap();
    let d = load_dataset(dir.path()).unwrap();
    let s = &d.samples[0];
    assert_eq!(s.image.max_value(), 1.0);
    assert_eq!(s.image.min_value(), 0.0);
    assert_eq!(s.source, "p001");
    assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(s.mask.sum_f64() as usize, (0..n).filter(|i| i % 7 == 0).count());
}

#[test]
fn saved_synthetic_data_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = make_synthetic(6, 32, Difficulty::Hard, 4).unwrap();
    d.save(dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), d);
}

#[test]
fn full_turn_is_identity_up_to_interpolation() {
    let s = &make_synthetic(1, 32, Difficulty::Medium, 2).unwrap().samples[0];
    let t = AffineParams { dx: 0.0, dy: 0.0, rotate_deg: 360.0, zoom: 1.0 }.apply(s).unwrap();
    let mae: f64 = t.image.data().iter().zip(s.image.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>()
        / s.image.numel() as f64;
    assert!(mae < 1e-3, "{mae}");
    assert_eq!(t.mask, s.mask);
}

#[test]
fn same_transform_moves_image_and_mask() {
    let mut img = Tensor::<f32>::zeros([1, 1, 32, 32]).unwrap();
    let mut mask = Tensor::<f32>::zeros([1, 1, 32, 32]).unwrap();
    for y in 8..14 {
        for x in 10..20 {
            img.set(0, 0, y, x, 1.0);
            mask.set(0, 0, y, x, 1.0);
        }
    }
    let s = SamplePair::new(img, mask, "a", "a_0").unwrap();
    for seed in 0..20 {
        let t = augment(&s, &AugmentSpec::default(), &mut rng(seed)).unwrap();
        let bright = t.image.data().iter().filter(|&&v| v > 0.5).count() as f64;
        let fg = t.mask.sum_f64();
        assert!((bright - fg).abs() <= 0.25 * fg + 4.0, "seed {seed}: {bright} vs {fg}");
    }
}

#[test]
fn negative_zoom_is_a_spec_error() {
    let s = &make_synthetic(1, 16, Difficulty::Easy, 2).unwrap().samples[0];
    let bad = AffineParams { dx: 0.0, dy: 0.0, rotate_deg: 0.0, zoom: -1.0 };
    assert!(matches!(bad.apply(s), Err(Error::Spec(_))));
}
