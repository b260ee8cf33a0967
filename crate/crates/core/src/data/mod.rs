//! Datasets: labeled samples, synthetic generation, hierarchical splits, and
//! the on-disk bank/manifest formats.

mod bank_file;
mod manifest;
mod split;

pub use bank_file::{load_bank, save_bank, BANK_MAGIC};
pub use manifest::{load_manifest, read_ppm, save_manifest};
pub use split::{split_hierarchical, SplitSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{gaussian, mix, stream};

/// One labeled image. `branch_label` is the class, `chain_label` the super-class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: Image,
    pub branch_label: Option<usize>,
    pub chain_label: Option<usize>,
}

/// An immutable, id-indexed collection of samples with uniform image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    samples: Vec<Sample>,
    closure_tag: Option<String>,
}

impl Dataset {
    /// Validates ids, pixel ranges, label consistency, and any declared closure.
    pub fn new(name: impl Into<String>, samples: Vec<Sample>, closure_tag: Option<String>) -> Result<Self> {
        let ds = Self { name: name.into(), samples, closure_tag };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let mut branch_chain: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::Argument(format!("sample at position {i} has id {}", s.id)));
            }
            if i > 0 {
                let first = &self.samples[0].image;
                if s.image.height() != first.height()
                    || s.image.width() != first.width()
                    || s.image.channels() != first.channels()
                {
                    return Err(Error::Argument(format!("sample {i} has a different image shape")));
                }
            }
            if !s.image.pixels().iter().all(|v| v.is_finite()) || !s.image.in_range() {
                return Err(Error::Argument(format!("sample {i} has pixels outside [0, 1]")));
            }
            if s.chain_label.is_some() && s.branch_label.is_none() {
                return Err(Error::Argument(format!("sample {i} has a chain label but no branch label")));
            }
            if let (Some(b), Some(c)) = (s.branch_label, s.chain_label) {
                match branch_chain.get(&b) {
                    Some(&prev) if prev != c => {
                        return Err(Error::Argument(format!("branch {b} maps to chains {prev} and {c}")));
                    }
                    _ => {
                        branch_chain.insert(b, c);
                    }
                }
            }
        }
        if self.closure_tag.as_deref() == Some("hflip") {
            self.verify_hflip_closure()?;
        }
        Ok(())
    }

    /// Exhaustive check that every image's exact mirror exists in the dataset.
    pub fn verify_hflip_closure(&self) -> Result<()> {
        let key = |img: &Image| -> Vec<u64> { img.pixels().iter().map(|v| v.to_bits()).collect() };
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        for s in &self.samples {
            index.insert(key(&s.image), s.id);
        }
        for s in &self.samples {
            if !index.contains_key(&key(&s.image.hflip())) {
                return Err(Error::Argument(format!(
                    "dataset tagged hflip-closed but sample {} has no mirror",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn closure_tag(&self) -> Option<&str> {
        self.closure_tag.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    pub fn height(&self) -> usize {
        self.samples[0].image.height()
    }

    pub fn width(&self) -> usize {
        self.samples[0].image.width()
    }

    pub fn channels(&self) -> usize {
        self.samples[0].image.channels()
    }

    pub fn fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.branch_label.is_some() && s.chain_label.is_some())
    }

    /// Distinct chain labels present.
    pub fn chains(&self) -> BTreeSet<usize> {
        self.samples.iter().filter_map(|s| s.chain_label).collect()
    }

    /// Distinct branch labels present.
    pub fn branches(&self) -> BTreeSet<usize> {
        self.samples.iter().filter_map(|s| s.branch_label).collect()
    }

    /// Chains touched by a set of sample ids.
    pub fn chains_of(&self, ids: &BTreeSet<usize>) -> BTreeSet<usize> {
        ids.iter().filter_map(|&id| self.samples[id].chain_label).collect()
    }

    /// Branches touched by a set of sample ids.
    pub fn branches_of(&self, ids: &BTreeSet<usize>) -> BTreeSet<usize> {
        ids.iter().filter_map(|&id| self.samples[id].branch_label).collect()
    }

    /// New dataset holding the given samples re-keyed to 0..len. The closure
    /// tag is dropped: a subset is generally not closed under the tagged DA.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(ids.len());
        for (new_id, &old_id) in ids.iter().enumerate() {
            if old_id >= self.samples.len() {
                return Err(Error::Argument(format!("subset id {old_id} out of range")));
            }
            let s = &self.samples[old_id];
            samples.push(Sample {
                id: new_id,
                image: s.image.clone(),
                branch_label: s.branch_label,
                chain_label: s.chain_label,
            });
        }
        Dataset::new(format!("{}[subset]", self.name), samples, None)
    }
}

const CHANNELS: usize = 3;
const BRANCH_AMP: f64 = 0.12;
const TAG_CHAIN: u64 = 0xC4A1;
const TAG_BRANCH: u64 = 0xB7A2;
const TAG_NOISE: u64 = 0x0153;

struct Sinusoid {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

impl Sinusoid {
    fn draw(rng: &mut impl Rng, min_freq: u32, max_freq: u32, amp: f64) -> Self {
        Self {
            fx: rng.random_range(min_freq..=max_freq) as f64,
            fy: rng.random_range(min_freq..=max_freq) as f64,
            phase: rng.random::<f64>() * std::f64::consts::TAU,
            amp,
        }
    }

    fn eval(&self, y: usize, x: usize, hw: usize) -> f64 {
        let t = std::f64::consts::TAU * (self.fx * x as f64 + self.fy * y as f64) / hw as f64;
        self.amp * (t + self.phase).sin()
    }
}

fn chain_pattern(seed: u64, chain: usize, hw: usize) -> Image {
    let mut rng = stream(seed, TAG_CHAIN, chain as u64, 0);
    let waves: Vec<[Sinusoid; 2]> = (0..CHANNELS)
        .map(|_| [Sinusoid::draw(&mut rng, 1, 3, 0.25), Sinusoid::draw(&mut rng, 1, 3, 0.25)])
        .collect();
    Image::from_fn(hw, hw, CHANNELS, |y, x, ch| {
        0.5 + waves[ch][0].eval(y, x, hw) + waves[ch][1].eval(y, x, hw)
    })
}

fn branch_prototype(seed: u64, chain: usize, branch: usize, base: &Image) -> Image {
    let mut rng = stream(seed, TAG_BRANCH, chain as u64, branch as u64);
    let hw = base.height();
    let waves: Vec<Sinusoid> =
        (0..CHANNELS).map(|_| Sinusoid::draw(&mut rng, 2, 5, BRANCH_AMP)).collect();
    let mut img = Image::from_fn(hw, hw, CHANNELS, |y, x, ch| {
        base.get(y, x, ch) + waves[ch].eval(y, x, hw)
    });
    img.clamp_unit();
    img
}

/// Generate a labeled synthetic dataset: one seeded pattern per chain, a
/// smaller seeded perturbation per branch, Gaussian pixel noise per sample.
///
/// With `flip_closed`, every drawn sample is emitted together with its exact
/// horizontal mirror (doubling the branch size), so the returned dataset is
/// closed under horizontal flip.
pub fn generate_synthetic(
    num_chains: usize,
    branches_per_chain: usize,
    per_branch: usize,
    image_hw: usize,
    noise_std: f64,
    flip_closed: bool,
    seed: u64,
) -> Result<Dataset> {
    if num_chains < 1 || branches_per_chain < 1 || per_branch < 1 {
        return Err(Error::Argument("all counts must be >= 1".into()));
    }
    if image_hw < 4 {
        return Err(Error::Argument("image_hw must be >= 4".into()));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::Argument("noise_std must be finite and >= 0".into()));
    }

    let mut samples = Vec::with_capacity(num_chains * branches_per_chain * per_branch * 2);
    for chain in 0..num_chains {
        let base = chain_pattern(seed, chain, image_hw);
        for branch_local in 0..branches_per_chain {
            let branch = chain * branches_per_chain + branch_local;
            let proto = branch_prototype(seed, chain, branch_local, &base);
            for t in 0..per_branch {
                let mut noise_rng = stream(seed, TAG_NOISE, branch as u64, t as u64);
                let mut img = Image::from_fn(image_hw, image_hw, CHANNELS, |y, x, ch| {
                    proto.get(y, x, ch) + noise_std * gaussian(&mut noise_rng)
                });
                img.clamp_unit();
                let push = |image: Image, samples: &mut Vec<Sample>| {
                    samples.push(Sample {
                        id: samples.len(),
                        image,
                        branch_label: Some(branch),
                        chain_label: Some(chain),
                    });
                };
                if flip_closed {
                    let mirror = img.hflip();
                    push(img, &mut samples);
                    push(mirror, &mut samples);
                } else {
                    push(img, &mut samples);
                }
            }
        }
    }

    let tag = if flip_closed { Some("hflip".to_string()) } else { None };
    let name = format!(
        "synth-c{num_chains}-b{branches_per_chain}-n{per_branch}-hw{image_hw}-s{}",
        mix(seed, 0, 0, 0) % 0x1_0000
    );
    Dataset::new(name, samples, tag)
}
