//! Synthetic interaction scenes and their annotation schema.
//!
//! A scene holds an RGB image, the interaction pairs in it
//! (`<person, verb, object, contact parts>`), a per-pixel body-part contact
//! map and the 17-long binary contact-label vector derived from that map.

mod generate;
mod io;

use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use generate::{generate_scene, part_region, ActionRule, SceneConfig, SceneLayout};
pub(crate) use generate::part_color;
pub use io::{read_dataset, write_dataset, DatasetManifest, SampleEntry};

/// Number of contactable body parts.
pub const NUM_PARTS: usize = 17;

/// Label name reserved for "no interaction".
pub const NO_INTERACTION: &str = "no_interaction";

pub const BODY_PARTS: [&str; NUM_PARTS] = [
    "head",
    "neck",
    "chest",
    "abdomen",
    "hips",
    "left_upper_arm",
    "right_upper_arm",
    "left_forearm",
    "right_forearm",
    "left_hand",
    "right_hand",
    "left_thigh",
    "right_thigh",
    "left_shin",
    "right_shin",
    "left_foot",
    "right_foot",
];

const DEFAULT_ACTIONS: [&str; 8] = [
    "hold", "carry", "sit_on", "kick", "ride", "touch", "look_at", "point_at",
];

const DEFAULT_OBJECTS: [&str; 6] = ["bottle", "box", "chair", "ball", "bicycle", "phone"];

/// Class vocabularies. `actions` always ends with [`NO_INTERACTION`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub body_parts: Vec<String>,
    pub actions: Vec<String>,
    pub objects: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new(
            DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect(),
        )
        .expect("default vocabulary is valid")
    }
}

impl Vocab {
    /// Build a vocabulary from real action and object names; the
    /// no-interaction label is appended to the actions.
    pub fn new(actions: Vec<String>, objects: Vec<String>) -> Result<Self> {
        let mut actions = actions;
        actions.push(NO_INTERACTION.to_string());
        let v = Vocab {
            body_parts: BODY_PARTS.iter().map(|s| s.to_string()).collect(),
            actions,
            objects,
        };
        v.validate()?;
        Ok(v)
    }

    /// Generic names `action_0..` and `object_0..`.
    pub fn with_sizes(n_actions: usize, n_objects: usize) -> Result<Self> {
        Vocab::new(
            (0..n_actions).map(|i| format!("action_{i}")).collect(),
            (0..n_objects).map(|i| format!("object_{i}")).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.body_parts.len() != NUM_PARTS {
            return Err(Error::Config(format!(
                "vocabulary needs exactly {NUM_PARTS} body parts, got {}",
                self.body_parts.len()
            )));
        }
        if self.actions.len() < 2 {
            return Err(Error::Config("vocabulary has no actions".into()));
        }
        if self.objects.is_empty() {
            return Err(Error::Config("vocabulary has no objects".into()));
        }
        if self.actions.last().map(String::as_str) != Some(NO_INTERACTION) {
            return Err(Error::Config(format!(
                "the last action must be `{NO_INTERACTION}`"
            )));
        }
        for (kind, names) in [
            ("body part", &self.body_parts),
            ("action", &self.actions),
            ("object", &self.objects),
        ] {
            let mut seen = BTreeSet::new();
            for n in names {
                if !seen.insert(n) {
                    return Err(Error::Config(format!("duplicate {kind} name `{n}`")));
                }
            }
        }
        if self.actions[..self.actions.len() - 1]
            .iter()
            .any(|a| a == NO_INTERACTION)
        {
            return Err(Error::Config(format!(
                "`{NO_INTERACTION}` may only appear as the last action"
            )));
        }
        Ok(())
    }

    /// Number of action logits, including no-interaction.
    pub fn num_action_logits(&self) -> usize {
        self.actions.len()
    }

    /// Number of real (interacting) actions.
    pub fn num_real_actions(&self) -> usize {
        self.actions.len() - 1
    }

    pub fn no_interaction_index(&self) -> usize {
        self.actions.len() - 1
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }
}

/// Integer pixel box with half-open extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", from = "[u32; 4]")]
pub struct PixelBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl From<PixelBox> for [u32; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl From<[u32; 4]> for PixelBox {
    fn from(a: [u32; 4]) -> Self {
        PixelBox {
            x1: a[0],
            y1: a[1],
            x2: a[2],
            y2: a[3],
        }
    }
}

impl PixelBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        PixelBox { x1, y1, x2, y2 }
    }

    pub fn is_valid_in(&self, width: usize, height: usize) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.x2 as usize <= width && self.y2 as usize <= height
    }

    pub fn to_bbox<T: crate::Scalar>(&self) -> BBox<T> {
        BBox::new(
            T::from_f64_lossy(self.x1 as f64),
            T::from_f64_lossy(self.y1 as f64),
            T::from_f64_lossy(self.x2 as f64),
            T::from_f64_lossy(self.y2 as f64),
        )
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x1 as usize..self.x2 as usize).contains(&x) && (self.y1 as usize..self.y2 as usize).contains(&y)
    }

    pub fn intersect(&self, o: &PixelBox) -> Option<PixelBox> {
        let b = PixelBox {
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
            x2: self.x2.min(o.x2),
            y2: self.y2.min(o.y2),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }

    pub fn hull(&self, o: &PixelBox) -> PixelBox {
        PixelBox {
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
            x2: self.x2.max(o.x2),
            y2: self.y2.max(o.y2),
        }
    }
}

/// One annotated `<human, action, object, contact parts>` tuple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionPair {
    pub human_box: PixelBox,
    pub object_box: PixelBox,
    pub object_class: usize,
    pub action_class: usize,
    /// Part indices in `1..=17`, ascending.
    pub contact_parts: Vec<u8>,
}

/// Per-pixel part labels: 0 is background, `k` in `1..=17` is body part `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactMap {
    pub labels: Array2<u8>,
}

impl ContactMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        ContactMap {
            labels: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    /// Count of pixels whose label exceeds the part range.
    pub fn out_of_range_pixels(&self) -> usize {
        self.labels.iter().filter(|&&v| v as usize > NUM_PARTS).count()
    }

    pub fn validate(&self) -> Result<()> {
        match self.out_of_range_pixels() {
            0 => Ok(()),
            n => Err(Error::Validation(format!(
                "{n} pixels carry a label above {NUM_PARTS}"
            ))),
        }
    }

    pub fn contact_pixels(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }
}

/// Entry `k - 1` is 1 iff part `k` labels at least one pixel.
pub fn encode_contact_labels(map: &ContactMap) -> [u8; NUM_PARTS] {
    let mut present = [0u8; NUM_PARTS];
    for &v in map.labels.iter() {
        if (1..=NUM_PARTS).contains(&(v as usize)) {
            present[v as usize - 1] = 1;
        }
    }
    present
}

/// One synthetic image with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: String,
    /// `(H, W, 3)` RGB in `[0, 1]`.
    pub image: Array3<f32>,
    pub pairs: Vec<InteractionPair>,
    pub contact_map: ContactMap,
    pub contact_labels: [u8; NUM_PARTS],
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}
