//! Deterministic synthetic torso-like phantoms.
//!
//! Intensity is an axial anatomy profile `f(z / (nz - 1))`, piecewise linear through the
//! spec knots, plus smooth value-noise texture and white Gaussian noise. The texture and
//! noise are re-centred per slice, so every axial mean equals the profile value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};
use crate::mix::Mixer;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// `(relative height in [0, 1], mean intensity)`, strictly increasing heights.
    pub anatomy_knots: Vec<(f64, f64)>,
    pub noise_sigma: f64,
    /// Lattice spacing of the texture in mm; 0 disables texture.
    pub texture_scale: f64,
    pub texture_amplitude: f64,
}

impl PhantomSpec {
    /// The desk-scale benchmark phantom: 32x32x160 voxels of 8x8x2.5 mm.
    pub fn standard(seed: u64) -> Self {
        PhantomSpec {
            seed,
            dims: [32, 32, 160],
            spacing: [8.0, 8.0, 2.5],
            origin: [0.0; 3],
            anatomy_knots: vec![(0.0, -200.0), (0.3, -60.0), (0.55, 20.0), (0.8, 80.0), (1.0, 220.0)],
            noise_sigma: 10.0,
            texture_scale: 24.0,
            texture_amplitude: 40.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid("dims", "every axis needs at least one voxel"));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("spacing", "must be finite and > 0"));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("origin", "must be finite"));
        }
        if self.anatomy_knots.len() < 2 {
            return Err(Error::invalid("anatomy_knots", "need at least 2 knots"));
        }
        for (i, &(h, v)) in self.anatomy_knots.iter().enumerate() {
            if !(0.0..=1.0).contains(&h) || !v.is_finite() {
                return Err(Error::invalid("anatomy_knots", format!("knot {i} out of range")));
            }
            if i > 0 && h <= self.anatomy_knots[i - 1].0 {
                return Err(Error::invalid("anatomy_knots", "heights must be strictly increasing"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.texture_scale.is_finite() && self.texture_scale >= 0.0) {
            return Err(Error::invalid("texture_scale", "must be finite and >= 0"));
        }
        if !self.texture_amplitude.is_finite() {
            return Err(Error::invalid("texture_amplitude", "must be finite"));
        }
        Ok(())
    }

    /// Anatomy profile at relative height `u`, clamped to the outer knots.
    pub fn profile(&self, u: f64) -> f64 {
        let knots = &self.anatomy_knots;
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if u <= first.0 {
            return first.1;
        }
        if u >= last.0 {
            return last.1;
        }
        let i = knots.partition_point(|k| k.0 <= u) - 1;
        let (h0, v0) = knots[i];
        let (h1, v1) = knots[i + 1];
        v0 + (u - h0) / (h1 - h0) * (v1 - v0)
    }
}

/// Lattice value in [-1, 1] for node `(i, j, k)`.
fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let mut h = Mixer::new(seed ^ 0x5EED_7E87);
    h.push(i as u64);
    h.push(j as u64);
    h.push(k as u64);
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let base = p.map(f64::floor);
    let w = [0, 1, 2].map(|a| smoothstep(p[a] - base[a]));
    let b = base.map(|x| x as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - w[2] } else { w[2] };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - w[1] } else { w[1] };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - w[0] } else { w[0] };
                acc += wx * wy * wz * lattice(seed, b[0] + dx, b[1] + dy, b[2] + dz);
            }
        }
    }
    acc
}

pub fn make_phantom<T: Real>(spec: &PhantomSpec) -> Result<Volume<T>> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let plane = nx * ny;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut voxels = Vec::with_capacity(plane * nz);
    let mut detail = vec![0.0f64; plane];
    for z in 0..nz {
        let u = if nz > 1 { z as f64 / (nz - 1) as f64 } else { 0.0 };
        let base = spec.profile(u);
        let wz = spec.origin[2] + z as f64 * spec.spacing[2];
        for y in 0..ny {
            let wy = spec.origin[1] + y as f64 * spec.spacing[1];
            for x in 0..nx {
                let wx = spec.origin[0] + x as f64 * spec.spacing[0];
                let mut d = 0.0;
                if spec.texture_scale > 0.0 && spec.texture_amplitude != 0.0 {
                    let p = [wx, wy, wz].map(|c| c / spec.texture_scale);
                    d += spec.texture_amplitude * value_noise(spec.seed, p);
                }
                if spec.noise_sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    d += spec.noise_sigma * n;
                }
                detail[x + nx * y] = d;
            }
        }
        let mean = detail.iter().sum::<f64>() / plane as f64;
        voxels.extend(detail.iter().map(|&d| T::lit(base + (d - mean))));
    }
    Volume::new(spec.dims, spec.spacing.map(T::lit), spec.origin.map(T::lit), voxels)
}
