use std::path::{Path, PathBuf};

use grec_core::augment::*;

const WHITE: [u8; 3] = [255, 255, 255];
const RED: [u8; 3] = [200, 16, 24];

fn red_square(size: u32, at: u32, side: u32) -> RasterImage {
    let mut img = RasterImage::filled(size, size, WHITE);
    img.fill_rect(at, at, side, side, RED);
    img
}

fn textured_background(w: u32, h: u32, phase: u8) -> RasterImage {
    let mut img = RasterImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, [(x * 7) as u8 ^ phase, (y * 5) as u8, ((x + y) * 3) as u8]);
        }
    }
    img
}

#[test]
fn extraction_recovers_square_exactly() {
    for (size, at, side) in [(32, 8, 10), (64, 3, 40), (20, 15, 4)] {
        let mask = extract_foreground(&red_square(size, at, side), DEFAULT_TOLERANCE).unwrap();
        for y in 0..size {
            for x in 0..size {
                let inside = (at..at + side).contains(&x) && (at..at + side).contains(&y);
                assert_eq!(mask.get(x, y), inside, "({x},{y}) in {size}/{at}/{side}");
            }
        }
    }
}

#[test]
fn composite_only_touches_masked_pixels() {
    let src = red_square(40, 10, 12);
    let mask = extract_foreground(&src, DEFAULT_TOLERANCE).unwrap();
    let bg = textured_background(60, 50, 0);
    for (x, y) in [(0i64, 0i64), (-5, 7), (20, 30), (55, 45)] {
        let out = composite(&src, &mask, &bg, Placement::at(x, y)).unwrap();
        let mut changed = 0;
        for v in 0..bg.height() {
            for u in 0..bg.width() {
                let (mx, my) = (i64::from(u) - x, i64::from(v) - y);
                let in_mask = (0..40).contains(&mx) && (0..40).contains(&my) && mask.get(mx as u32, my as u32);
                if in_mask {
                    assert_eq!(out.get(u, v), RED);
                } else {
                    assert_eq!(out.get(u, v), bg.get(u, v), "pixel ({u},{v}) changed outside the mask");
                }
                changed += usize::from(out.get(u, v) != bg.get(u, v));
            }
        }
        assert!(changed <= mask.count());
    }
}

fn pool(dir: &Path) -> Vec<PathBuf> {
    for i in 0..4u8 {
        textured_background(48 + u32::from(i) * 4, 40, i * 31).save_png(dir.join(format!("bg{i}.png"))).unwrap();
    }
    background_pool(dir).unwrap()
}

#[test]
fn item_augmentation_is_bit_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let plan = AugmentPlan { seed: 17, epoch: 3, background_pool: pool(dir.path()), ..AugmentPlan::default() };
    let src = red_square(30, 6, 14);
    let run = |p: &AugmentPlan, id: &str| augment_item(&src, id, p, DEFAULT_TOLERANCE, |p| RasterImage::load(p)).unwrap();
    let a = run(&plan, "sku-1");
    let b = run(&plan, "sku-1");
    assert_eq!(a.pixels(), b.pixels());

    let (fa, fb) = (dir.path().join("a.png"), dir.path().join("b.png"));
    a.save_png(&fa).unwrap();
    b.save_png(&fb).unwrap();
    assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());

    let other_epoch = run(&AugmentPlan { epoch: 4, ..plan.clone() }, "sku-1");
    let other_item = run(&plan, "sku-2");
    assert!(other_epoch != a || other_item != a);
}

#[test]
fn backgrounds_are_spread_evenly() {
    let plan = AugmentPlan {
        background_pool: (0..10).map(|i| PathBuf::from(format!("bg{i}.png"))).collect(),
        ..AugmentPlan::default()
    };
    let mut by_item = [0usize; 10];
    let mut by_epoch = [0usize; 10];
    for i in 0..1000u64 {
        by_item[epoch_background(&format!("item-{i}"), 0, &plan).unwrap().index] += 1;
        by_epoch[epoch_background("item-0", i, &plan).unwrap().index] += 1;
    }
    for counts in [by_item, by_epoch] {
        assert!(counts.iter().all(|&c| (60..=140).contains(&c)), "{counts:?}");
    }
}

#[test]
fn identity_plan_preserves_pixels() {
    let src = red_square(16, 4, 6);
    let mut rng = item_rng(0, "x", 0, "standard");
    assert_eq!(standard_augment(&src, &AugmentPlan::identity(), &mut rng), src);
}
