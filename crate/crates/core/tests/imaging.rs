use eki_core::imaging::{
    self, manhattan, squared_euclidean, threshold, BinaryImage, Camera, GreyImage, Metric, RgbImage,
};
use eki_core::rod::{build_rod, RodConfig};
use eki_core::Error;
use proptest::prelude::*;

fn images(max: usize) -> impl Strategy<Value = BinaryImage> {
    (1..=max, 1..=max, 0.0f64..1.0).prop_flat_map(|(w, h, density)| {
        prop::collection::vec(prop::bool::weighted(density.max(0.01)), w * h)
            .prop_filter("needs a set pixel", |bits| bits.iter().any(|b| *b))
            .prop_map(move |bits| BinaryImage::from_fn(w, h, |c, r| bits[r * w + c]))
    })
}

fn brute_force(img: &BinaryImage) -> (Vec<u64>, Vec<u32>) {
    let mut set = Vec::new();
    for r in 0..img.height {
        for c in 0..img.width {
            if img.is_black(c, r) {
                set.push((c as i64, r as i64));
            }
        }
    }
    let mut sq = Vec::new();
    let mut l1 = Vec::new();
    for r in 0..img.height as i64 {
        for c in 0..img.width as i64 {
            sq.push(
                set.iter()
                    .map(|(x, y)| ((x - c).pow(2) + (y - r).pow(2)) as u64)
                    .min()
                    .unwrap(),
            );
            l1.push(
                set.iter()
                    .map(|(x, y)| ((x - c).abs() + (y - r).abs()) as u32)
                    .min()
                    .unwrap(),
            );
        }
    }
    (sq, l1)
}

proptest! {
    #[test]
    fn transforms_match_brute_force(img in images(32)) {
        let (sq, l1) = brute_force(&img);
        prop_assert_eq!(squared_euclidean(&img).unwrap(), sq);
        prop_assert_eq!(manhattan(&img).unwrap(), l1);
    }

    #[test]
    fn euclidean_map_is_one_lipschitz(img in images(24)) {
        let d = imaging::distance_transform(&img, Metric::Euclidean).unwrap();
        let l1 = imaging::distance_transform(&img, Metric::Manhattan).unwrap();
        for r in 0..img.height {
            for c in 0..img.width {
                if c + 1 < img.width {
                    prop_assert!((d.at(c, r) - d.at(c + 1, r)).abs() <= 1.0 + 1e-12);
                    prop_assert!((l1.at(c, r) - l1.at(c + 1, r)).abs() <= 1.0);
                }
                if r + 1 < img.height {
                    prop_assert!((d.at(c, r) - d.at(c, r + 1)).abs() <= 1.0 + 1e-12);
                    prop_assert!((l1.at(c, r) - l1.at(c, r + 1)).abs() <= 1.0);
                }
                prop_assert!(d.at(c, r) <= l1.at(c, r));
                prop_assert_eq!(d.at(c, r) == 0.0, img.is_black(c, r));
            }
        }
    }

    #[test]
    fn threshold_is_idempotent(data in prop::collection::vec(any::<u8>(), 48), sigma in 1u32..255) {
        let g = GreyImage::new(8, 6, data.clone()).unwrap();
        let once = threshold(&g, sigma).unwrap();
        let twice = threshold(&once.as_grey(), sigma).unwrap();
        prop_assert_eq!(&once, &twice);
        for (v, b) in data.iter().zip(&once.as_grey().data) {
            prop_assert_eq!(*b == 0, u32::from(*v) <= sigma);
        }
    }
}

#[test]
fn all_white_image_is_degenerate() {
    let g = GreyImage::new(4, 3, vec![255; 12]).unwrap();
    assert!(matches!(
        imaging::observe(&g, 128, Metric::Euclidean),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn threshold_bounds() {
    let g = GreyImage::new(2, 1, vec![0, 255]).unwrap();
    assert!(threshold(&g, 0).is_err());
    assert!(threshold(&g, 256).is_err());
}

#[test]
fn grey_conversion_rounds_the_luma() {
    let img = RgbImage::new(2, 1, vec![10, 200, 30, 255, 255, 255]).unwrap();
    let g = imaging::to_grey(&img);
    assert_eq!(
        g.data,
        vec![((299 * 10 + 587 * 200 + 114 * 30 + 500) / 1000) as u8, 255]
    );
}

fn straight_rod() -> RodConfig {
    RodConfig {
        gravity: [0.0; 3],
        tip_force: [0.0; 3],
        ..RodConfig::default()
    }
}

#[test]
fn straight_rod_renders_a_band() {
    let cfg = straight_rod();
    let rod = build_rod(&cfg).unwrap();
    let cam = Camera::default();
    let r = imaging::render(&rod, &cam);
    assert!(!r.clipped);
    let row = cam.origin[1] as usize;
    let mid_col = (cam.origin[0] + 0.5 * cam.scale * cfg.rest_length) as usize;
    let black_rows: Vec<usize> = (0..cam.height)
        .filter(|&rr| r.image.pixel(mid_col, rr) == imaging::ROD_COLOUR)
        .collect();
    assert_eq!(black_rows.len(), 2 * cam.stroke_radius as usize + 1);
    assert!(black_rows.contains(&row));
    assert_eq!(r.image.pixel(0, 0), imaging::BACKGROUND);
}

#[test]
fn segmentation_vanishes_on_the_rod() {
    let rod = build_rod(&straight_rod()).unwrap();
    let cam = Camera::default();
    let d = imaging::segment(&rod, &cam, 128, Metric::Euclidean).unwrap();
    assert_eq!(d.len(), cam.n_pixels());
    for p in &rod.node_positions {
        let (c, r) = cam.project(p);
        assert_eq!(d[r.round() as usize * cam.width + c.round() as usize], 0.0);
    }
    assert!(d.iter().any(|v| *v > 0.0));
}

#[test]
fn full_resolution_length() {
    let cam = Camera {
        width: 705,
        height: 555,
        origin: [40.0, 277.0],
        scale: 1900.0,
        ..Camera::default()
    };
    let rod = build_rod(&straight_rod()).unwrap();
    let d = imaging::segment(&rod, &cam, 128, Metric::Manhattan).unwrap();
    assert_eq!(d.len(), 391_275);
}
