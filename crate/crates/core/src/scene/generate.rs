use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_contact_labels, ContactMap, InteractionPair, PixelBox, SceneSample, Vocab, NUM_PARTS};
use crate::error::{Error, Result};
use crate::geometry::STRIDE;

/// Part rectangles as fractions `(u0, v0, u1, v1)` of the human box,
/// indexed by part label minus one.
const PART_LAYOUT: [(f32, f32, f32, f32); NUM_PARTS] = [
    (0.35, 0.00, 0.65, 0.13), // head
    (0.43, 0.13, 0.57, 0.17), // neck
    (0.30, 0.17, 0.70, 0.33), // chest
    (0.30, 0.33, 0.70, 0.45), // abdomen
    (0.30, 0.45, 0.70, 0.53), // hips
    (0.12, 0.17, 0.30, 0.31), // left upper arm
    (0.70, 0.17, 0.88, 0.31), // right upper arm
    (0.06, 0.31, 0.26, 0.43), // left forearm
    (0.74, 0.31, 0.94, 0.43), // right forearm
    (0.00, 0.43, 0.22, 0.52), // left hand
    (0.78, 0.43, 1.00, 0.52), // right hand
    (0.30, 0.53, 0.49, 0.72), // left thigh
    (0.51, 0.53, 0.70, 0.72), // right thigh
    (0.31, 0.72, 0.48, 0.90), // left shin
    (0.52, 0.72, 0.69, 0.90), // right shin
    (0.24, 0.90, 0.48, 1.00), // left foot
    (0.52, 0.90, 0.76, 1.00), // right foot
];

/// Contact templates cycled over action indices. Each entry lists the
/// alternative part sets an action may touch; an empty list marks a
/// non-contact action.
const CONTACT_TEMPLATES: [&[&[u8]]; 8] = [
    &[&[10], &[11]],          // hold
    &[&[10, 11]],             // carry
    &[&[5, 12, 13]],          // sit on
    &[&[16], &[17]],          // kick
    &[&[12, 13]],             // ride
    &[&[8], &[9]],            // touch
    &[],                      // look at
    &[],                      // point at
];

/// Which parts a given action touches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRule {
    pub alternatives: Vec<Vec<u8>>,
}

impl ActionRule {
    pub fn for_action(action: usize) -> Self {
        ActionRule {
            alternatives: CONTACT_TEMPLATES[action % CONTACT_TEMPLATES.len()]
                .iter()
                .map(|s| s.to_vec())
                .collect(),
        }
    }

    pub fn is_contact(&self) -> bool {
        !self.alternatives.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_pairs: usize,
    pub max_pairs: usize,
    /// Amplitude of the uniform pixel noise added to the background.
    pub noise: f32,
    pub vocab: Vocab,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            min_pairs: 1,
            max_pairs: 2,
            noise: 0.03,
            vocab: Vocab::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % STRIDE != 0 || self.width % STRIDE != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be a nonzero multiple of {STRIDE}",
                self.height, self.width
            )));
        }
        if self.min_pairs > self.max_pairs {
            return Err(Error::Config(format!(
                "min_pairs {} exceeds max_pairs {}",
                self.min_pairs, self.max_pairs
            )));
        }
        if self.max_pairs > 0 && self.width / self.max_pairs < 48 {
            return Err(Error::Config(format!(
                "width {} too small for {} pairs",
                self.width, self.max_pairs
            )));
        }
        self.vocab.validate()
    }
}

/// Explicit scene content, rendered by [`SceneLayout::render`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<InteractionPair>,
}

/// Pixel rectangle of body part `part` (1-based) inside a human box.
pub fn part_region(human: &PixelBox, part: u8) -> PixelBox {
    let (u0, v0, u1, v1) = PART_LAYOUT[part as usize - 1];
    let w = (human.x2 - human.x1) as f32;
    let h = (human.y2 - human.y1) as f32;
    let x1 = human.x1 + (u0 * w).round() as u32;
    let y1 = human.y1 + (v0 * h).round() as u32;
    let x2 = (human.x1 + (u1 * w).round() as u32).max(x1 + 1).min(human.x2);
    let y2 = (human.y1 + (v1 * h).round() as u32).max(y1 + 1).min(human.y2);
    PixelBox {
        x1: x1.min(x2 - 1),
        y1: y1.min(y2 - 1),
        x2,
        y2,
    }
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub(crate) fn part_color(part: u8) -> [f32; 3] {
    // Interleave hues so anatomically adjacent parts differ strongly.
    let slot = (part as u32 * 7) % NUM_PARTS as u32;
    hsv(slot as f32 * 360.0 / NUM_PARTS as f32, 0.7, 0.95)
}

fn object_color(class: usize) -> [f32; 3] {
    hsv(class as f32 * 137.5 + 20.0, 0.45, 0.55)
}

/// Whether `(x, y)` lies on the silhouette of object `class` drawn in `b`.
fn object_shape_contains(class: usize, b: &PixelBox, x: usize, y: usize) -> bool {
    let w = (b.x2 - b.x1) as f32;
    let h = (b.y2 - b.y1) as f32;
    let u = (x as f32 + 0.5 - b.x1 as f32) / w * 2.0 - 1.0;
    let v = (y as f32 + 0.5 - b.y1 as f32) / h * 2.0 - 1.0;
    match class % 6 {
        0 => true,
        1 => u * u + v * v <= 1.0,
        2 => u.abs() <= (v + 1.0) / 2.0,
        3 => u.abs() + v.abs() <= 1.0,
        4 => u.abs() <= 0.35 || v.abs() <= 0.35,
        _ => {
            let r = u * u + v * v;
            (0.3..=1.0).contains(&r)
        }
    }
}

impl SceneLayout {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if !p.human_box.is_valid_in(self.width, self.height) || !p.object_box.is_valid_in(self.width, self.height) {
                return Err(Error::Validation(format!("pair {i}: box outside the image or empty")));
            }
            if p.object_class >= vocab.num_objects() {
                return Err(Error::Validation(format!("pair {i}: object class {} out of range", p.object_class)));
            }
            if p.action_class >= vocab.num_real_actions() {
                return Err(Error::Validation(format!("pair {i}: action class {} out of range", p.action_class)));
            }
            for &k in &p.contact_parts {
                if !(1..=NUM_PARTS as u8).contains(&k) {
                    return Err(Error::Validation(format!("pair {i}: contact part {k} out of range")));
                }
                if part_region(&p.human_box, k).intersect(&p.object_box).is_none() {
                    return Err(Error::Validation(format!(
                        "pair {i}: contact part {k} does not overlap the object"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Paint the contact bands: for each listed part, the overlap of its
    /// region with the object box, dilated by one pixel and clipped to the
    /// pair's enclosing rectangle. Lower part indices win ties.
    pub fn contact_map(&self) -> ContactMap {
        let mut map = ContactMap::zeros(self.height, self.width);
        for p in &self.pairs {
            let enclosure = p.human_box.hull(&p.object_box);
            for &k in &p.contact_parts {
                let Some(core) = part_region(&p.human_box, k).intersect(&p.object_box) else {
                    continue;
                };
                let band = PixelBox {
                    x1: core.x1.saturating_sub(1),
                    y1: core.y1.saturating_sub(1),
                    x2: (core.x2 + 1).min(self.width as u32),
                    y2: (core.y2 + 1).min(self.height as u32),
                };
                let Some(band) = band.intersect(&enclosure) else {
                    continue;
                };
                for y in band.y1..band.y2 {
                    for x in band.x1..band.x2 {
                        let cell = &mut map.labels[[y as usize, x as usize]];
                        if *cell == 0 || k < *cell {
                            *cell = k;
                        }
                    }
                }
            }
        }
        map
    }

    /// Render the image deterministically from `seed` (which only drives
    /// background noise here).
    pub fn render(&self, seed: u64, noise: f32) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a6e);
        let (h, w) = (self.height, self.width);
        let mut img = Array3::<f32>::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let shade = 0.10 + 0.05 * (y as f32 / h as f32);
                for c in 0..3 {
                    let n = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                    img[[y, x, c]] = shade + n;
                }
            }
        }
        for p in &self.pairs {
            for part in 1..=NUM_PARTS as u8 {
                let r = part_region(&p.human_box, part);
                let col = part_color(part);
                for y in r.y1..r.y2 {
                    for x in r.x1..r.x2 {
                        for c in 0..3 {
                            img[[y as usize, x as usize, c]] = col[c];
                        }
                    }
                }
            }
        }
        for p in &self.pairs {
            let b = p.object_box;
            let col = object_color(p.object_class);
            for y in b.y1..b.y2 {
                for x in b.x1..b.x2 {
                    if !object_shape_contains(p.object_class, &b, x as usize, y as usize) {
                        continue;
                    }
                    for c in 0..3 {
                        let px = &mut img[[y as usize, x as usize, c]];
                        *px = 0.45 * *px + 0.55 * col[c];
                    }
                }
            }
        }
        img.mapv_inplace(|v| v.clamp(0.0, 1.0));
        img
    }

    pub fn into_sample(self, id: String, seed: u64, noise: f32) -> SceneSample {
        let image = self.render(seed, noise);
        let contact_map = self.contact_map();
        let contact_labels = encode_contact_labels(&contact_map);
        SceneSample {
            id,
            image,
            pairs: self.pairs,
            contact_map,
            contact_labels,
        }
    }
}

fn sample_layout(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> SceneLayout {
    let (h, w) = (cfg.height as u32, cfg.width as u32);
    let n = if cfg.max_pairs == 0 {
        0
    } else {
        rng.random_range(cfg.min_pairs..=cfg.max_pairs)
    };
    let mut pairs = Vec::with_capacity(n);
    let slot_w = if n > 0 { w / n as u32 } else { w };
    for i in 0..n as u32 {
        let slot_x = i * slot_w;
        let hw = rng.random_range((slot_w * 2 / 5).min(44)..=(slot_w * 3 / 5).min(56));
        let hh = rng.random_range(h * 9 / 16..=h * 13 / 16);
        let margin = slot_w / 10;
        let hx1 = slot_x + rng.random_range(margin..=(slot_w - hw - margin).max(margin));
        let hy1 = rng.random_range(0..=h - hh);
        let human = PixelBox::new(hx1, hy1, (hx1 + hw).min(w), hy1 + hh);
        let action = rng.random_range(0..cfg.vocab.num_real_actions());
        let object_class = rng.random_range(0..cfg.vocab.num_objects());
        let rule = ActionRule::for_action(action);
        let (object_box, contact_parts) = if rule.is_contact() {
            let parts = rule.alternatives[rng.random_range(0..rule.alternatives.len())].clone();
            let union = parts
                .iter()
                .map(|&k| part_region(&human, k))
                .reduce(|a, b| a.hull(&b))
                .unwrap();
            let mut grow = |lo: u32, limit: u32| rng.random_range(lo..=limit);
            let mut ob = PixelBox {
                x1: union.x1.saturating_sub(grow(3, 10)),
                y1: union.y1.saturating_sub(grow(3, 10)),
                x2: (union.x2 + grow(3, 10)).min(w),
                y2: (union.y2 + grow(3, 10)).min(h),
            };
            // Pull one side into the union so contact covers part of a region.
            let side = rng.random_range(0..4);
            let shrink = |extent: u32, r: &mut ChaCha8Rng| r.random_range(0..=extent * 2 / 5);
            let candidate = match side {
                0 => PixelBox { x1: union.x1 + shrink(union.x2 - union.x1, rng), ..ob },
                1 => PixelBox { y1: union.y1 + shrink(union.y2 - union.y1, rng), ..ob },
                2 => PixelBox { x2: union.x2 - shrink(union.x2 - union.x1, rng), ..ob },
                _ => PixelBox { y2: union.y2 - shrink(union.y2 - union.y1, rng), ..ob },
            };
            if parts
                .iter()
                .all(|&k| part_region(&human, k).intersect(&candidate).is_some())
                && candidate.x2 - candidate.x1 >= 8
                && candidate.y2 - candidate.y1 >= 8
            {
                ob = candidate;
            }
            let mut sorted = parts;
            sorted.sort_unstable();
            (ob, sorted)
        } else {
            // Non-contact object floats beside the human, level with the chest.
            let ow = rng.random_range(12..=22u32);
            let oh = rng.random_range(12..=22u32);
            let oy1 = (human.y1 + (human.y2 - human.y1) / 5).min(h - oh);
            let left_room = human.x1;
            let right_room = w - human.x2;
            let ox1 = if right_room >= ow + 2 && (left_room < ow + 2 || rng.random_bool(0.5)) {
                human.x2 + rng.random_range(1..=(right_room - ow).min(8))
            } else if left_room >= ow + 2 {
                human.x1 - ow - rng.random_range(1..=(left_room - ow).min(8))
            } else {
                human.x2.saturating_sub(ow / 2).min(w - ow)
            };
            (PixelBox::new(ox1, oy1, ox1 + ow, oy1 + oh), Vec::new())
        };
        pairs.push(InteractionPair {
            human_box: human,
            object_box,
            object_class,
            action_class: action,
            contact_parts,
        });
    }
    SceneLayout {
        height: cfg.height,
        width: cfg.width,
        pairs,
    }
}

/// Generate one scene. Identical `(seed, config)` give identical samples.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = sample_layout(&mut rng, cfg);
    debug_assert!(layout.validate(&cfg.vocab).is_ok(), "{:?}", layout.validate(&cfg.vocab));
    Ok(layout.into_sample(format!("{seed:06}"), seed, cfg.noise))
}
