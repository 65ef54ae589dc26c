use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::profile::ClassProfile;
use super::taxonomy::{Category, Taxonomy, ATTRIBUTE_CATEGORIES};
use crate::rng::{self, domain};
use crate::{Error, Result};

/// Axis-aligned box on the unit canvas, stored as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }

    /// Closed-box containment: points on an edge are inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x && p[0] <= self.x + self.w && p[1] >= self.y && p[1] <= self.y + self.h
    }

    pub fn within_canvas(&self) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.w > 0.0 && self.h > 0.0
            && self.x + self.w <= 1.0 + 1e-12
            && self.y + self.h <= 1.0 + 1e-12
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub part: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// True `[color, size, pattern]` tokens.
    pub attrs: Vec<String>,
}

impl Region {
    pub fn attribute(&self, category: Category) -> Option<&str> {
        category
            .slot()
            .and_then(|s| self.attrs.get(s))
            .map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub class: usize,
    pub regions: Vec<Region>,
    /// One point per region, same order.
    pub keypoints: Vec<[f64; 2]>,
    pub split: Split,
}

impl Scene {
    pub fn region_of_part(&self, part: &str) -> Option<(usize, &Region)> {
        self.regions.iter().enumerate().find(|(_, r)| r.part == part)
    }

    pub fn keypoint_of_part(&self, part: &str) -> Option<[f64; 2]> {
        self.region_of_part(part).map(|(i, _)| self.keypoints[i])
    }

    /// True attributes laid out like a profile: one triple per taxonomy part.
    pub fn attribute_table(&self, taxonomy: &Taxonomy) -> Vec<Vec<String>> {
        taxonomy
            .parts
            .iter()
            .map(|p| {
                self.region_of_part(p)
                    .map(|(_, r)| r.attrs.clone())
                    .unwrap_or_default()
            })
            .collect()
    }

    /// Oracle truth of a phrase: the head noun's part is present and its true
    /// attributes include every adjective.
    pub fn supports(&self, taxonomy: &Taxonomy, adjectives: &[String], noun: &str) -> bool {
        let Some(part) = taxonomy.noun_part(noun) else {
            return false;
        };
        let Some((_, region)) = self.region_of_part(&taxonomy.parts[part]) else {
            return false;
        };
        adjectives.iter().all(|a| region.attrs.contains(a))
    }
}

/// Mean `[x, y, w, h]` per part; y grows downward so heads sit high and feet low.
fn layout_prior(part: &str) -> [f64; 4] {
    match part {
        "beak" => [0.74, 0.16, 0.12, 0.06],
        "head" => [0.54, 0.08, 0.22, 0.18],
        "belly" => [0.34, 0.50, 0.30, 0.16],
        "eye" => [0.64, 0.13, 0.05, 0.05],
        "wing" => [0.22, 0.34, 0.36, 0.20],
        "feet" => [0.38, 0.82, 0.16, 0.12],
        "neck" => [0.52, 0.26, 0.14, 0.10],
        "body" => [0.22, 0.30, 0.46, 0.36],
        _ => [0.40, 0.40, 0.20, 0.20],
    }
}

const POSITION_JITTER: f64 = 0.02;
const SIZE_JITTER: f64 = 0.01;
const MIN_SIDE: f64 = 0.02;
/// Keypoint offset from the box center, as a fraction of the half-extent.
const KEYPOINT_SPREAD: f64 = 0.6;

/// Renders one scene of the given class. With probability `noise` each
/// region attribute is redrawn uniformly within its category.
pub fn render_scene(
    profile: &ClassProfile,
    taxonomy: &Taxonomy,
    id: usize,
    noise: f64,
    seed: u64,
) -> Result<Scene> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config(format!("render noise {noise} outside [0, 1]")));
    }
    let mut rng = rng::stream(seed, domain::SCENE, id as u64);
    let pos = Normal::new(0.0, POSITION_JITTER).unwrap();
    let size = Normal::new(0.0, SIZE_JITTER).unwrap();

    let mut regions = Vec::with_capacity(taxonomy.parts.len());
    let mut keypoints = Vec::with_capacity(taxonomy.parts.len());
    for (part_index, part) in taxonomy.parts.iter().enumerate() {
        let [mx, my, mw, mh] = layout_prior(part);
        let w = (mw + size.sample(&mut rng)).clamp(MIN_SIDE, 1.0);
        let h = (mh + size.sample(&mut rng)).clamp(MIN_SIDE, 1.0);
        let x = (mx + pos.sample(&mut rng)).clamp(0.0, 1.0 - w);
        let y = (my + pos.sample(&mut rng)).clamp(0.0, 1.0 - h);
        let bbox = BBox { x, y, w, h };

        let [cx, cy] = bbox.center();
        let kx = cx + rng.random_range(-1.0..=1.0) * KEYPOINT_SPREAD * w / 2.0;
        let ky = cy + rng.random_range(-1.0..=1.0) * KEYPOINT_SPREAD * h / 2.0;

        let attrs = ATTRIBUTE_CATEGORIES
            .iter()
            .enumerate()
            .map(|(slot, cat)| {
                if rng.random::<f64>() < noise {
                    let tokens = taxonomy.tokens(*cat);
                    tokens[rng.random_range(0..tokens.len())].clone()
                } else {
                    profile.attributes[part_index][slot].clone()
                }
            })
            .collect();

        regions.push(Region {
            part: part.clone(),
            bbox,
            attrs,
        });
        keypoints.push([kx, ky]);
    }

    Ok(Scene {
        id,
        class: profile.id,
        regions,
        keypoints,
        split: Split::Train,
    })
}
