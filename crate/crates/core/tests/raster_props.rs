use huecontour::contour::{png_bytes, GRID_COLS};
use huecontour::imageproc::crop_white_border;
use huecontour::*;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn interior_strategy() -> impl Strategy<Value = RgbImage> {
    (1u32..12, 1u32..12, any::<u64>()).prop_map(|(w, h, seed)| {
        RgbImage::from_fn(w, h, |x, y| {
            let v = seed.wrapping_mul(u64::from(x * 31 + y * 17 + 1)).rotate_left(x + y);
            // Keep every interior pixel clearly non-white.
            Rgb([(v % 240) as u8, ((v >> 8) % 240) as u8, ((v >> 16) % 256) as u8])
        })
    })
}

proptest! {
    #[test]
    fn white_frame_is_removed_exactly(
        interior in interior_strategy(),
        (left, top, right, bottom) in (0u32..5, 0u32..5, 0u32..5, 0u32..5),
    ) {
        let (w, h) = interior.dimensions();
        let mut framed = RgbImage::from_pixel(w + left + right, h + top + bottom, Rgb([255, 255, 255]));
        image::imageops::replace(&mut framed, &interior, i64::from(left), i64::from(top));
        let out = crop_white_border(&framed);
        prop_assert!(!out.all_white);
        prop_assert_eq!(out.image, interior);
    }

    #[test]
    fn rendering_ignores_a_common_scale(
        counts in prop::collection::vec(0u64..50, 3 * GRID_COLS),
        factor in 2u64..20,
    ) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let grid = ContourGrid::from_counts(3, counts).unwrap();
        let lut = ColormapLut::batlow();
        let a = render(&grid, &lut, (64, 16)).unwrap();
        let b = render(&grid.scaled(factor), &lut, (64, 16)).unwrap();
        prop_assert_eq!(a.image, b.image);
    }
}

#[test]
fn same_grid_renders_to_identical_png() {
    let counts: Vec<u64> = (0..8 * GRID_COLS).map(|i| ((i * 37) % 11) as u64).collect();
    let grid = ContourGrid::from_counts(8, counts).unwrap();
    let lut = ColormapLut::batlow();
    let a = png_bytes(&render(&grid, &lut, (256, 256)).unwrap().image).unwrap();
    let b = png_bytes(&render(&grid, &lut, (256, 256)).unwrap().image).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batlow_luma_strictly_increases() {
    let lut = ColormapLut::batlow();
    let luma = |c: [u8; 3]| 299 * u32::from(c[0]) + 587 * u32::from(c[1]) + 114 * u32::from(c[2]);
    for i in 0..255u8 {
        assert!(luma(lut.get(i + 1)) > luma(lut.get(i)), "entry {i}");
    }
}
