//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json     format tag, version, height, width, vocab, sample list
//! <dir>/img_<id>.npy      (H, W, 3) little-endian f32 RGB in [0, 1]
//! <dir>/mask_<id>.png     8-bit grayscale, pixel value = part index (0 = background)
//! <dir>/ann_<id>.json     {"id", "pairs": [...], "contact_labels": [17 x 0/1]}
//! ```
//!
//! Each pair in `ann_<id>.json` is
//! `{"human_box": [x1, y1, x2, y2], "object_box": [...], "object_class": i,
//!   "action_class": i, "contact_parts": [k, ...]}` with integer pixel
//! corners (`x2`, `y2` exclusive) and part indices in `1..=17`.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::{Array2, Array3};
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use super::{encode_contact_labels, ContactMap, InteractionPair, SceneSample, Vocab, NUM_PARTS};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "hoi-contact-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub vocab: Vocab,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub annotation: String,
}

#[derive(Serialize, Deserialize)]
struct Annotation {
    id: String,
    pairs: Vec<InteractionPair>,
    contact_labels: Vec<u8>,
}

fn schema(sample: &str, reason: impl Into<String>) -> Error {
    Error::Schema {
        sample: sample.to_string(),
        reason: reason.into(),
    }
}

/// Write `samples` under `dir` and return the manifest that was written.
pub fn write_dataset(samples: &[SceneSample], vocab: &Vocab, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (height, width) = samples
        .first()
        .map(|s| (s.height(), s.width()))
        .unwrap_or((0, 0));
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if s.height() != height || s.width() != width {
            return Err(schema(&s.id, "all samples in a dataset must share one image size"));
        }
        let entry = SampleEntry {
            id: s.id.clone(),
            image: format!("img_{}.npy", s.id),
            mask: format!("mask_{}.png", s.id),
            annotation: format!("ann_{}.json", s.id),
        };
        let img_path = dir.join(&entry.image);
        write_npy(&img_path, &s.image)
            .map_err(|e| schema(&s.id, format!("writing {}: {e}", img_path.display())))?;

        s.contact_map.validate().map_err(|e| schema(&s.id, e.to_string()))?;
        let mut mask = GrayImage::new(width as u32, height as u32);
        for ((y, x), &v) in s.contact_map.labels.indexed_iter() {
            mask.put_pixel(x as u32, y as u32, Luma([v]));
        }
        mask.save(dir.join(&entry.mask))?;

        let ann = Annotation {
            id: s.id.clone(),
            pairs: s.pairs.clone(),
            contact_labels: s.contact_labels.to_vec(),
        };
        let ann_path = dir.join(&entry.annotation);
        fs::write(&ann_path, serde_json::to_vec_pretty(&ann)?).map_err(|e| Error::io(&ann_path, e))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        height,
        width,
        vocab: vocab.clone(),
        samples: entries,
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Read and validate a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SceneSample>)> {
    let mpath = dir.join("manifest.json");
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&raw).map_err(|e| schema("manifest", format!("malformed manifest: {e}")))?;
    if manifest.format != FORMAT_TAG {
        return Err(schema("manifest", format!("unknown format tag `{}`", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(schema("manifest", format!("unsupported version {}", manifest.version)));
    }
    manifest
        .vocab
        .validate()
        .map_err(|e| schema("manifest", e.to_string()))?;
    let samples = manifest
        .samples
        .iter()
        .map(|entry| read_sample(dir, &manifest, entry))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

fn read_sample(dir: &Path, m: &DatasetManifest, entry: &SampleEntry) -> Result<SceneSample> {
    let id = entry.id.as_str();
    for file in [&entry.image, &entry.mask, &entry.annotation] {
        if !dir.join(file).is_file() {
            return Err(schema(id, format!("missing file `{file}`")));
        }
    }

    let image: Array3<f32> = read_npy(dir.join(&entry.image))
        .map_err(|e| schema(id, format!("unreadable image `{}`: {e}", entry.image)))?;
    if image.shape() != [m.height, m.width, 3] {
        return Err(schema(
            id,
            format!("image shape {:?} does not match declared {}x{}x3", image.shape(), m.height, m.width),
        ));
    }
    if let Some(bad) = image.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
        return Err(schema(id, format!("image value {bad} outside [0, 1]")));
    }

    let mask = image::open(dir.join(&entry.mask))
        .map_err(|e| schema(id, format!("unreadable mask `{}`: {e}", entry.mask)))?;
    let mask = match mask {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(schema(
                id,
                format!("mask must be 8-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    if mask.width() as usize != m.width || mask.height() as usize != m.height {
        return Err(schema(
            id,
            format!(
                "mask shape {}x{} does not match declared {}x{}",
                mask.height(),
                mask.width(),
                m.height,
                m.width
            ),
        ));
    }
    let labels = Array2::from_shape_fn((m.height, m.width), |(y, x)| mask.get_pixel(x as u32, y as u32)[0]);
    let contact_map = ContactMap { labels };
    let bad = contact_map.out_of_range_pixels();
    if bad > 0 {
        return Err(schema(id, format!("mask has {bad} pixels with a label above {NUM_PARTS}")));
    }

    let apath = dir.join(&entry.annotation);
    let raw = fs::read(&apath).map_err(|e| Error::io(&apath, e))?;
    let ann: Annotation =
        serde_json::from_slice(&raw).map_err(|e| schema(id, format!("malformed annotation: {e}")))?;
    if ann.id != entry.id {
        return Err(schema(id, format!("annotation id `{}` does not match manifest", ann.id)));
    }
    for (i, p) in ann.pairs.iter().enumerate() {
        if !p.human_box.is_valid_in(m.width, m.height) || !p.object_box.is_valid_in(m.width, m.height) {
            return Err(schema(id, format!("pair {i} has an empty or out-of-image box")));
        }
        if p.object_class >= m.vocab.num_objects() || p.action_class >= m.vocab.num_real_actions() {
            return Err(schema(id, format!("pair {i} has an out-of-vocabulary class index")));
        }
        if p.contact_parts.iter().any(|&k| k == 0 || k as usize > NUM_PARTS) {
            return Err(schema(id, format!("pair {i} lists a contact part outside 1..={NUM_PARTS}")));
        }
    }
    let derived = encode_contact_labels(&contact_map);
    if ann.contact_labels.len() != NUM_PARTS || ann.contact_labels[..] != derived[..] {
        return Err(schema(id, "contact_labels disagree with the mask"));
    }
    Ok(SceneSample {
        id: entry.id.clone(),
        image,
        pairs: ann.pairs,
        contact_map,
        contact_labels: derived,
    })
}
