//! Synthetic XCT-like layer images with known pore ground truth.
//!
//! A bright solid disc sits on a dark background and holds circular pores of
//! intermediate intensity. Pores may carry a single solid-intensity particle
//! at their centre. Noise is applied last.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::image_seed;
use crate::image::{BinaryMask, GrayImage};

/// Attempts per pore before giving up on a non-overlapping placement.
const PLACEMENT_RETRIES: usize = 1_000;
/// Minimum free pixels between neighbouring pores and between a pore and the
/// disc edge.
const PORE_GAP: f64 = 3.0;
const EDGE_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum PoreCount {
    Fixed(usize),
    Poisson(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: u8,
    pub solid: u8,
    pub pore: u8,
}

impl Default for Intensities {
    fn default() -> Self {
        Self {
            background: 10,
            solid: 200,
            pore: 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Noise {
    pub gaussian_sigma: f64,
    pub salt_pepper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub side: usize,
    /// Disc radius as a fraction of half the side.
    pub disc_fraction: f64,
    pub intensities: Intensities,
    pub pores: PoreCount,
    /// Inclusive pore radius range in pixels.
    pub radius_range: (u32, u32),
    pub allow_overlap: bool,
    pub trapped_probability: f64,
    pub trapped_intensity: u8,
    pub noise: Noise,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            side: 256,
            disc_fraction: 0.9,
            intensities: Intensities::default(),
            pores: PoreCount::Fixed(10),
            radius_range: (3, 8),
            allow_overlap: false,
            trapped_probability: 0.0,
            trapped_intensity: 200,
            noise: Noise::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let i = self.intensities;
        if !(i.background < i.pore && i.pore < i.solid) {
            return Err(Error::arg(format!(
                "intensities must satisfy background < pore < solid, got {} / {} / {}",
                i.background, i.pore, i.solid
            )));
        }
        let (lo, hi) = self.radius_range;
        if lo < 1 || lo > hi {
            return Err(Error::arg(format!("pore radius range ({lo}, {hi}) is invalid")));
        }
        if self.side < 4 {
            return Err(Error::arg(format!("image side {} is too small", self.side)));
        }
        if !(self.disc_fraction > 0.0 && self.disc_fraction <= 1.0) {
            return Err(Error::arg(format!(
                "disc fraction {} outside (0, 1]",
                self.disc_fraction
            )));
        }
        if let PoreCount::Poisson(mean) = self.pores {
            if !(mean >= 0.0 && mean.is_finite()) {
                return Err(Error::arg(format!("Poisson mean {mean} is invalid")));
            }
        }
        for (name, p) in [
            ("trapped-particle probability", self.trapped_probability),
            ("salt-and-pepper rate", self.noise.salt_pepper),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::arg(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.noise.gaussian_sigma >= 0.0 && self.noise.gaussian_sigma.is_finite()) {
            return Err(Error::arg(format!(
                "noise sigma {} is invalid",
                self.noise.gaussian_sigma
            )));
        }
        Ok(())
    }

    fn disc(&self) -> (f64, f64, f64) {
        let c = (self.side as f64 - 1.0) / 2.0;
        (c, c, self.disc_fraction * self.side as f64 / 2.0 - 1.0)
    }
}

/// One generated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLayer {
    pub image: GrayImage,
    pub gt: BinaryMask,
    pub roi: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Drift {
    /// Every layer is the same image.
    None,
    /// Pore positions are redrawn per layer from the same distribution.
    Reshuffle,
}

fn inside(dx: f64, dy: f64, r: f64) -> bool {
    dx * dx + dy * dy <= r * r + r
}

/// Pixel offsets of a pore of radius `r`.
///
/// The digital disc is smoothed by a 3x3 majority vote until nothing changes,
/// which trims the one-pixel spurs some radii produce. The result is a fixed
/// point of a 3x3 median on a pore/solid image, so noise-free references are
/// exact. Radius 1 has no non-empty fixed point and keeps its plain disc.
fn pore_footprint(r: u32) -> Vec<(i64, i64)> {
    let r = r as i64;
    let pad = r + 2;
    let w = (2 * pad + 1) as usize;
    let idx = |x: i64, y: i64| ((y + pad) as usize) * w + (x + pad) as usize;
    let mut cells = vec![false; w * w];
    for y in -r..=r {
        for x in -r..=r {
            cells[idx(x, y)] = inside(x as f64, y as f64, r as f64);
        }
    }
    let plain = cells.clone();
    loop {
        let mut next = vec![false; w * w];
        for y in -r - 1..=r + 1 {
            for x in -r - 1..=r + 1 {
                let votes = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
                    .filter(|&(a, b)| cells[idx(a, b)])
                    .count();
                next[idx(x, y)] = votes >= 5;
            }
        }
        if next == cells {
            break;
        }
        cells = next;
    }
    if !cells.iter().any(|&c| c) {
        cells = plain;
    }
    (-pad..=pad)
        .flat_map(|y| (-pad..=pad).map(move |x| (x, y)))
        .filter(|&(x, y)| cells[idx(x, y)])
        .collect()
}

fn draw_count(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> usize {
    match spec.pores {
        PoreCount::Fixed(n) => n,
        PoreCount::Poisson(0.0) => 0,
        PoreCount::Poisson(mean) => Poisson::new(mean).expect("validated mean").sample(rng) as usize,
    }
}

fn place_pores(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64, f64)>> {
    let (cx, cy, big_r) = spec.disc();
    let n = draw_count(spec, rng);
    let (lo, hi) = spec.radius_range;
    let mut pores: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        let r = rng.random_range(lo..=hi) as f64;
        let reach = big_r - r - EDGE_MARGIN;
        if reach < 0.0 {
            return Err(Error::Generation(format!(
                "pore radius {r} does not fit in a disc of radius {big_r:.1}"
            )));
        }
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let x = cx + rng.random_range(-reach..=reach);
            let y = cy + rng.random_range(-reach..=reach);
            if (x - cx).hypot(y - cy) > reach {
                continue;
            }
            let clear = spec.allow_overlap
                || pores
                    .iter()
                    .all(|&(px, py, pr)| (x - px).hypot(y - py) > r + pr + PORE_GAP);
            if clear {
                pores.push((x.round(), y.round(), r));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place pore {} of {n} without overlap after {PLACEMENT_RETRIES} tries",
                i + 1
            )));
        }
    }
    Ok(pores)
}

/// Generate one layer: image, pore ground truth and disc ROI.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticLayer> {
    spec.validate()?;
    let side = spec.side;
    let levels = spec.intensities;
    let mut geo = ChaCha8Rng::seed_from_u64(spec.seed);
    geo.set_stream(0);
    let pores = place_pores(spec, &mut geo)?;

    let (cx, cy, big_r) = spec.disc();
    let mut roi = BinaryMask::empty(side, side);
    let mut gt = BinaryMask::empty(side, side);
    let mut image = GrayImage::filled(side, side, levels.background)?;
    for y in 0..side {
        for x in 0..side {
            if inside(x as f64 - cx, y as f64 - cy, big_r) {
                roi.set(x, y, true);
                image.set(x, y, levels.solid);
            }
        }
    }
    let mut footprints = std::collections::HashMap::new();
    for &(px, py, r) in &pores {
        let offsets = footprints
            .entry(r as u32)
            .or_insert_with(|| pore_footprint(r as u32));
        for &(dx, dy) in offsets.iter() {
            let (x, y) = (px as i64 + dx, py as i64 + dy);
            if x < 0 || y < 0 || x >= side as i64 || y >= side as i64 {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            if roi.get(x, y) {
                gt.set(x, y, true);
                image.set(x, y, levels.pore);
            }
        }
    }
    for &(px, py, _) in &pores {
        if geo.random::<f64>() < spec.trapped_probability {
            let (x, y) = (px as usize, py as usize);
            gt.set(x, y, false);
            image.set(x, y, spec.trapped_intensity);
        }
    }

    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(1);
    let sigma = spec.noise.gaussian_sigma;
    let sp = spec.noise.salt_pepper;
    if sigma > 0.0 || sp > 0.0 {
        let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("validated sigma");
        let mut data = image.into_data();
        for v in data.iter_mut() {
            if sigma > 0.0 {
                *v = (*v as f64 + normal.sample(&mut noise)).round().clamp(0.0, 255.0) as u8;
            }
            if sp > 0.0 && noise.random::<f64>() < sp {
                *v = if noise.random::<bool>() { 255 } else { 0 };
            }
        }
        image = GrayImage::new(side, side, data)?;
    }
    Ok(SyntheticLayer { image, gt, roi })
}

/// Generate `n_layers` layers sharing `spec`. With [`Drift::Reshuffle`] each
/// layer gets its own seed derived from `spec.seed` and the layer index.
pub fn generate_stack(spec: &SyntheticSpec, n_layers: usize, drift: Drift) -> Result<Vec<SyntheticLayer>> {
    match drift {
        Drift::None => {
            let layer = generate(spec)?;
            Ok(vec![layer; n_layers])
        }
        Drift::Reshuffle => (0..n_layers)
            .map(|i| {
                generate(&SyntheticSpec {
                    seed: image_seed(spec.seed, i),
                    ..spec.clone()
                })
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{count_instances, dsc, porosity_pct, Connectivity};
    use crate::threshold::{make_reference_mask, ThresholdParams};
    use proptest::prelude::*;

    fn clean(n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            side: 128,
            pores: PoreCount::Fixed(n),
            radius_range: (3, 6),
            seed,
            ..SyntheticSpec::default()
        }
    }

    /// Flood-fill component count, independent of the labeler.
    fn flood_count(m: &BinaryMask) -> usize {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut seen = vec![false; m.data().len()];
        let mut n = 0;
        for start in 0..seen.len() {
            if !m.data()[start] || seen[start] {
                continue;
            }
            n += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = ((i as i64) % w, (i as i64) / w);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            let j = (ny * w + nx) as usize;
                            if m.data()[j] && !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn zero_pores() {
        let l = generate(&clean(0, 1)).unwrap();
        assert!(l.gt.is_empty());
        assert_eq!(porosity_pct(&l.gt, Some(&l.roi)).unwrap(), 0.0);
    }

    #[test]
    fn five_pores_five_instances() {
        for seed in 0..10 {
            let l = generate(&clean(5, seed)).unwrap();
            assert_eq!(flood_count(&l.gt), 5);
            assert_eq!(count_instances(&l.gt, Connectivity::Eight), 5);
        }
    }

    #[test]
    fn clean_image_has_three_levels_and_reference_recovers_gt() {
        let l = generate(&clean(8, 3)).unwrap();
        let mut levels: Vec<u8> = l.image.data().to_vec();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![10, 90, 200]);
        for filter_k in [1, 3] {
            let params = ThresholdParams {
                filter_k,
                background_floor: 50,
                roi: None,
            };
            let r = make_reference_mask(&l.image, &params).unwrap();
            assert_eq!(dsc(&r.mask, &l.gt).unwrap(), 1.0, "filter {filter_k}");
        }
    }

    #[test]
    fn footprints_are_median_fixed_points() {
        for r in 2..=30u32 {
            let fp = pore_footprint(r);
            let set: std::collections::HashSet<_> = fp.iter().copied().collect();
            let r = r as i64;
            for y in -r - 3..=r + 3 {
                for x in -r - 3..=r + 3 {
                    let votes = (-1..=1)
                        .flat_map(|dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
                        .filter(|p| set.contains(p))
                        .count();
                    assert_eq!(votes >= 5, set.contains(&(x, y)), "r={r} at ({x},{y})");
                }
            }
            assert!(set.contains(&(r - 1, 0)) && set.contains(&(0, 0)), "r={r}");
        }
        assert_eq!(pore_footprint(1).len(), 9);
    }

    #[test]
    fn trapped_particles_are_not_pore() {
        let spec = SyntheticSpec {
            trapped_probability: 1.0,
            ..clean(4, 9)
        };
        let l = generate(&spec).unwrap();
        let plain = generate(&clean(4, 9)).unwrap();
        assert_eq!(plain.gt.count() - l.gt.count(), 4);
        assert_eq!(count_instances(&l.gt, Connectivity::Eight), 4);
    }

    #[test]
    fn crowded_disc_fails_to_place() {
        let spec = SyntheticSpec {
            side: 32,
            pores: PoreCount::Fixed(30),
            radius_range: (4, 4),
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
        let overlap = SyntheticSpec {
            allow_overlap: true,
            ..spec
        };
        assert!(generate(&overlap).is_ok());
    }

    #[test]
    fn invalid_specs() {
        let mut s = SyntheticSpec::default();
        s.intensities.pore = 250;
        assert!(s.validate().is_err());
        let s = SyntheticSpec {
            radius_range: (0, 3),
            ..SyntheticSpec::default()
        };
        assert!(s.validate().is_err());
        let s = SyntheticSpec {
            noise: Noise {
                gaussian_sigma: 1.0,
                salt_pepper: 1.5,
            },
            ..SyntheticSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn stacks() {
        let spec = clean(6, 11);
        let same = generate_stack(&spec, 3, Drift::None).unwrap();
        assert!(same.windows(2).all(|w| w[0] == w[1]));
        let moved = generate_stack(&spec, 10, Drift::Reshuffle).unwrap();
        for l in &moved {
            assert_eq!(flood_count(&l.gt), 6);
        }
        assert_ne!(moved[0].gt, moved[1].gt);
    }

    #[test]
    fn poisson_count_is_deterministic() {
        let spec = SyntheticSpec {
            pores: PoreCount::Poisson(5.0),
            ..clean(0, 2)
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SyntheticSpec {
            pores: PoreCount::Poisson(4.5),
            ..SyntheticSpec::default()
        };
        let j = serde_json::to_string(&spec).unwrap();
        let back: SyntheticSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, spec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gt_inside_roi_and_deterministic(
            seed in any::<u64>(),
            n in 0usize..8,
            sigma in 0.0f64..5.0,
            sp in 0.0f64..0.05,
            overlap in any::<bool>(),
        ) {
            let spec = SyntheticSpec {
                side: 96,
                pores: PoreCount::Fixed(n),
                radius_range: (2, 5),
                allow_overlap: overlap,
                noise: Noise { gaussian_sigma: sigma, salt_pepper: sp },
                seed,
                ..SyntheticSpec::default()
            };
            let a = generate(&spec).unwrap();
            prop_assert!(a.gt.data().iter().zip(a.roi.data()).all(|(&g, &r)| !g || r));
            prop_assert_eq!(&a, &generate(&spec).unwrap());
        }
    }
}
