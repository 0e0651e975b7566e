//! PNG overlays: the input with predicted boxes and labels next to the
//! predicted contact map on black.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::eval::ImageResult;
use crate::metrics::ScoredPair;
use crate::scene::part_color;
use crate::scene::{ContactMap, SceneSample, Vocab};

pub const HUMAN_COLOR: Rgb<u8> = Rgb([230, 30, 30]);
pub const OBJECT_COLOR: Rgb<u8> = Rgb([30, 210, 60]);
const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 255]);

/// Pixel magnification of both panels.
pub const ZOOM: u32 = 2;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn draw_rect(img: &mut RgbImage, x1: i64, y1: i64, x2: i64, y2: i64, color: Rgb<u8>, thickness: i64) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for t in 0..thickness {
        for x in x1..x2 {
            put(x, y1 + t);
            put(x, y2 - 1 - t);
        }
        for y in y1..y2 {
            put(x1 + t, y);
            put(x2 - 1 - t, y);
        }
    }
}

/// Draw `text` with its top-left corner at `(x, y)` over a dark backing box.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for (i, ch) in text.chars().enumerate() {
        let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap();
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                let (px, py) = (x + i as i64 * 8 + col, y + row as i64);
                if !(0..w).contains(&px) || !(0..h).contains(&py) {
                    continue;
                }
                let on = bits >> col & 1 == 1;
                let c = if on { color } else { Rgb([0, 0, 0]) };
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

fn contact_panel(map: &ContactMap) -> RgbImage {
    let (h, w) = map.labels.dim();
    RgbImage::from_fn(w as u32 * ZOOM, h as u32 * ZOOM, |x, y| {
        let k = map.labels[[(y / ZOOM) as usize, (x / ZOOM) as usize]];
        if k == 0 {
            Rgb([0, 0, 0])
        } else {
            Rgb(part_color(k).map(to_u8))
        }
    })
}

fn image_panel(sample: &SceneSample) -> RgbImage {
    let (h, w) = (sample.height() as u32, sample.width() as u32);
    RgbImage::from_fn(w * ZOOM, h * ZOOM, |x, y| {
        let (xs, ys) = ((x / ZOOM) as usize, (y / ZOOM) as usize);
        Rgb([0, 1, 2].map(|c| to_u8(sample.image[[ys, xs, c]])))
    })
}

fn draw_pair(img: &mut RgbImage, p: &ScoredPair, vocab: &Vocab) {
    let z = ZOOM as f64;
    let r = |v: f64| (v * z).round() as i64;
    let (hb, ob) = (&p.human_box, &p.object_box);
    draw_rect(img, r(hb.x1), r(hb.y1), r(hb.x2), r(hb.y2), HUMAN_COLOR, 2);
    draw_rect(img, r(ob.x1), r(ob.y1), r(ob.x2), r(ob.y2), OBJECT_COLOR, 2);
    let action = vocab.actions.get(p.action_class).map_or("?", String::as_str);
    let object = vocab.objects.get(p.object_class).map_or("?", String::as_str);
    draw_text(img, r(hb.x1) + 2, r(hb.y1) + 2, action, TEXT_COLOR);
    draw_text(img, r(ob.x1) + 2, (r(ob.y2) - 10).max(0), object, TEXT_COLOR);
}

/// Pairs worth drawing: those scoring at least `min_score`, and always the
/// best one.
pub fn pairs_to_draw(pairs: &[ScoredPair], min_score: f64) -> Vec<&ScoredPair> {
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let keep = sorted.iter().take_while(|p| p.score >= min_score).count().max(1);
    sorted.truncate(keep);
    sorted
}

/// Two panels side by side: input with boxes, and contact map with boxes.
pub fn render_overlay(sample: &SceneSample, result: &ImageResult, vocab: &Vocab, min_score: f64) -> RgbImage {
    let mut left = image_panel(sample);
    let mut right = contact_panel(&result.contact);
    let pairs = pairs_to_draw(&result.pairs, min_score);
    for p in &pairs {
        draw_pair(&mut left, p, vocab);
        draw_pair(&mut right, p, vocab);
    }
    let gap = 4;
    let mut out = RgbImage::new(left.width() * 2 + gap, left.height());
    image::imageops::replace(&mut out, &left, 0, 0);
    image::imageops::replace(&mut out, &right, (left.width() + gap) as i64, 0);
    out
}

pub fn save_overlay(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)?;
    Ok(())
}
