//! Synthetic EM-like corpus: crystalline particles (Gaussian atoms on a
//! randomly oriented lattice) embedded in an amorphous support, observed
//! through a smooth background, Poisson dose noise, pixel noise and
//! scan-line offsets.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::{write_split, LayoutManifest, TargetKind, TaskLayout};
use super::split::{split, SplitSpec};
use super::{standardize, Dataset, ImageGrid, SamplePair, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub count: usize,
    pub size: usize,
    /// Lattice constant range in pixels.
    pub lattice_spacing_range: [f32; 2],
    pub atom_sigma: f32,
    pub atom_amplitude: f32,
    /// Number of particles per image, inclusive range.
    pub particles_range: [usize; 2],
    /// Particle radius range as a fraction of the image size.
    pub particle_radius_range: [f32; 2],
    /// Flat intensity of the particle support under the atoms.
    pub particle_level: f32,
    pub amorphous_amplitude: f32,
    pub background_amplitude: f32,
    /// Expected counts per unit intensity; 0 disables shot noise.
    pub dose: f32,
    pub gaussian_sigma: f32,
    pub scan_line_sigma: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            count: 64,
            size: 64,
            lattice_spacing_range: [4.0, 6.0],
            atom_sigma: 1.0,
            atom_amplitude: 1.0,
            particles_range: [1, 3],
            particle_radius_range: [0.12, 0.25],
            particle_level: 0.2,
            amorphous_amplitude: 0.1,
            background_amplitude: 0.5,
            dose: 200.0,
            gaussian_sigma: 0.05,
            scan_line_sigma: 0.03,
        }
    }
}

impl SynthParams {
    /// Noise-free, background-free generator.
    pub fn clean(count: usize, size: usize) -> Self {
        Self {
            count,
            size,
            background_amplitude: 0.0,
            dose: 0.0,
            gaussian_sigma: 0.0,
            scan_line_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.count == 0 || self.size < 8 {
            return bad(format!(
                "synthetic corpus needs count >= 1 and size >= 8, got {} and {}",
                self.count, self.size
            ));
        }
        let [smin, smax] = self.lattice_spacing_range;
        if !(smin > 0.0 && smin <= smax) {
            return bad(format!("lattice spacing range [{smin}, {smax}] is degenerate"));
        }
        let [pmin, pmax] = self.particles_range;
        if pmin == 0 || pmin > pmax {
            return bad(format!(
                "particles range [{pmin}, {pmax}] places no atoms; at least one particle is required"
            ));
        }
        let [rmin, rmax] = self.particle_radius_range;
        if !(rmin > 0.0 && rmin <= rmax && rmax < 0.5) {
            return bad(format!("particle radius range [{rmin}, {rmax}] must lie in (0, 0.5)"));
        }
        if !(self.atom_sigma > 0.0 && self.atom_amplitude > 0.0) {
            return bad("atom sigma and amplitude must be positive".into());
        }
        for (name, v) in [
            ("amorphous_amplitude", self.amorphous_amplitude),
            ("background_amplitude", self.background_amplitude),
            ("dose", self.dose),
            ("gaussian_sigma", self.gaussian_sigma),
            ("scan_line_sigma", self.scan_line_sigma),
            ("particle_level", self.particle_level),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub cy: f32,
    pub cx: f32,
    pub radius: f32,
}

impl Particle {
    fn contains(&self, y: f32, x: f32) -> bool {
        (y - self.cy).powi(2) + (x - self.cx).powi(2) <= self.radius * self.radius
    }
}

/// All aligned grids produced for one synthetic field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// Observed image: clean plus noise.
    pub input: ImageGrid,
    /// Noise-free image including the background (denoising target).
    pub clean: ImageGrid,
    /// Noise-free image without the background.
    pub no_background: ImageGrid,
    /// Atoms rendered at half width, no background (super-resolution target).
    pub sharp: ImageGrid,
    pub mask: ImageGrid,
    pub particles: Vec<Particle>,
}

impl SynthSample {
    /// Training pair for `task`. Inputs and intensity targets are
    /// standardized, matching what ingestion of the written layout yields.
    pub fn pair(&self, task: Task) -> Result<SamplePair> {
        let x = standardize(&self.input);
        let y = match task {
            Task::Pretext => x.clone(),
            Task::Segmentation => self.mask.clone(),
            Task::Denoise => standardize(&self.clean),
            Task::NoiseBgRemoval => standardize(&self.no_background),
            Task::Superres => standardize(&self.sharp),
        };
        SamplePair::new(x, y, task)
    }

    fn raw_pair(&self, task: Task) -> Result<SamplePair> {
        let y = match task {
            Task::Pretext => self.input.clone(),
            Task::Segmentation => self.mask.clone(),
            Task::Denoise => self.clean.clone(),
            Task::NoiseBgRemoval => self.no_background.clone(),
            Task::Superres => self.sharp.clone(),
        };
        SamplePair::new(self.input.clone(), y, task)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub params: SynthParams,
    pub samples: Vec<SynthSample>,
}

impl SynthCorpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pairs(&self, task: Task) -> Result<Vec<SamplePair>> {
        self.samples.iter().map(|s| s.pair(task)).collect()
    }

    pub fn dataset(&self, task: Task) -> Result<Dataset> {
        Ok(Dataset::from_samples(self.pairs(task)?))
    }

    /// Writes every task into the directory layout, split by `splits`, and
    /// returns the manifest (also saved as `manifest.toml` under `root`).
    pub fn write_layout(&self, root: &Path, splits: &SplitSpec) -> Result<LayoutManifest> {
        let (tr, va, te) = splits.resolve(self.len())?;
        let index_ds = Dataset::from_samples(
            (0..self.len())
                .map(|i| {
                    let g = ImageGrid::from_fn(1, 1, |_, _| i as f32);
                    SamplePair::new(g.clone(), g, Task::Pretext)
                })
                .collect::<Result<_>>()?,
        );
        let parts = split(&index_ds, splits)?;
        let names = ["train", "val", "test"];
        let sizes = [tr, va, te];
        let mut layouts = Vec::new();
        for task in Task::ALL {
            for (part, name) in [&parts.0, &parts.1, &parts.2].into_iter().zip(names) {
                let picked: Vec<SamplePair> = part
                    .iter()
                    .map(|p| self.samples[p?.input.values()[0] as usize].raw_pair(task))
                    .collect::<Result<_>>()?;
                write_split(root, task, name, &picked)?;
            }
            layouts.push(TaskLayout {
                task,
                target: if task.has_mask_target() {
                    TargetKind::Mask
                } else {
                    TargetKind::Image
                },
                splits: names
                    .iter()
                    .zip(sizes)
                    .filter(|(_, n)| *n > 0)
                    .map(|(s, _)| s.to_string())
                    .collect(),
            });
        }
        let manifest = LayoutManifest { tasks: layouts };
        let path = root.join("manifest.toml");
        std::fs::write(&path, manifest.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Generates `params.count` samples, fully determined by `seed`.
pub fn synth_corpus(params: &SynthParams, seed: u64) -> Result<SynthCorpus> {
    params.validate()?;
    let samples = (0..params.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            synth_sample(params, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(SynthCorpus {
        params: params.clone(),
        samples,
    })
}

fn place_particles(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Particle> {
    let n = p.size as f32;
    let want = rng.random_range(p.particles_range[0]..=p.particles_range[1]);
    let mut out: Vec<Particle> = Vec::with_capacity(want);
    for _ in 0..want * 50 {
        if out.len() == want {
            break;
        }
        let [rmin, rmax] = p.particle_radius_range;
        let radius = n * if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
        if n - 1.0 - radius < radius {
            continue;
        }
        let cy = rng.random_range(radius..=n - 1.0 - radius);
        let cx = rng.random_range(radius..=n - 1.0 - radius);
        let clear = out
            .iter()
            .all(|q| (q.cy - cy).hypot(q.cx - cx) >= q.radius + radius + 1.0);
        if clear {
            out.push(Particle { cy, cx, radius });
        }
    }
    out
}

fn lattice_atoms(part: &Particle, spacing: f32, angle: f32, phase: (f32, f32)) -> Vec<(f32, f32)> {
    let (s, c) = angle.sin_cos();
    let k = (part.radius / spacing).ceil() as i32 + 1;
    let mut atoms = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            let u = (i as f32 + phase.0) * spacing;
            let v = (j as f32 + phase.1) * spacing;
            let y = part.cy + c * u - s * v;
            let x = part.cx + s * u + c * v;
            if part.contains(y, x) {
                atoms.push((y, x));
            }
        }
    }
    atoms
}

fn render_atoms(n: usize, atoms: &[(f32, f32)], sigma: f32, amp: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; n * n];
    let reach = (3.0 * sigma).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for &(ay, ax) in atoms {
        let (ry, rx) = (ay.round() as i64, ax.round() as i64);
        for y in (ry - reach).max(0)..=(ry + reach).min(n as i64 - 1) {
            for x in (rx - reach).max(0)..=(rx + reach).min(n as i64 - 1) {
                let d2 = (y as f32 - ay).powi(2) + (x as f32 - ax).powi(2);
                out[y as usize * n + x as usize] += amp * (-d2 * inv).exp();
            }
        }
    }
    out
}

/// Smooth non-negative field with values in `[0, amplitude]`: a random
/// quadratic polynomial plus one low-frequency sinusoid.
fn background(n: usize, amplitude: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let coef: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let freq = rng.random_range(0.5f32..=1.5);
    let theta = rng.random_range(0.0..PI);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (st, ct) = theta.sin_cos();
    let mut field: Vec<f32> = (0..n * n)
        .map(|i| {
            let y = (i / n) as f32 / n as f32 * 2.0 - 1.0;
            let x = (i % n) as f32 / n as f32 * 2.0 - 1.0;
            let poly = coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * y + coef[4] * x * x + coef[5] * y * y;
            poly + (PI * freq * (ct * x + st * y) + phase).sin()
        })
        .collect();
    let (lo, hi) = field
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6);
    for v in &mut field {
        *v = amplitude * (*v - lo) / span;
    }
    field
}

fn amorphous(n: usize, amplitude: f32, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    if amplitude == 0.0 {
        return Ok(vec![0.0; n * n]);
    }
    let white: Vec<f32> = (0..n * n).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let smooth = ImageGrid::new(1, n, n, white)?.gaussian_blur(1.5);
    let z = standardize(&smooth);
    Ok(z.values().iter().map(|v| amplitude * (1.0 + 0.5 * v).max(0.0)).collect())
}

fn synth_sample(p: &SynthParams, rng: &mut ChaCha8Rng) -> Result<SynthSample> {
    let n = p.size;
    let particles = place_particles(p, rng);
    if particles.is_empty() {
        return Err(Error::InvalidArgument(
            "could not place any particle; widen the radius range or enlarge the image".into(),
        ));
    }
    let mut atoms = Vec::new();
    for part in &particles {
        let [smin, smax] = p.lattice_spacing_range;
        let spacing = if smax > smin { rng.random_range(smin..=smax) } else { smin };
        let angle = rng.random_range(0.0..PI / 2.0);
        let phase = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        atoms.extend(lattice_atoms(part, spacing, angle, phase));
    }
    if atoms.is_empty() {
        return Err(Error::InvalidArgument(
            "degenerate parameters: no atoms fall inside the particles".into(),
        ));
    }

    let mask: Vec<f32> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f32, (i % n) as f32);
            if particles.iter().any(|q| q.contains(y, x)) { 1.0 } else { 0.0 }
        })
        .collect();
    let support: Vec<f32> = mask.iter().map(|m| m * p.particle_level).collect();
    let amorph = amorphous(n, p.amorphous_amplitude, rng)?;
    let full = render_atoms(n, &atoms, p.atom_sigma, p.atom_amplitude);
    let sharp_atoms = render_atoms(n, &atoms, p.atom_sigma / 2.0, p.atom_amplitude);
    let bg = if p.background_amplitude > 0.0 {
        background(n, p.background_amplitude, rng)
    } else {
        vec![0.0; n * n]
    };

    let no_bg: Vec<f32> = (0..n * n).map(|i| full[i] + support[i] + amorph[i]).collect();
    let sharp: Vec<f32> = (0..n * n).map(|i| sharp_atoms[i] + support[i] + amorph[i]).collect();
    let clean: Vec<f32> = (0..n * n).map(|i| no_bg[i] + bg[i]).collect();

    let mut observed = clean.clone();
    if p.dose > 0.0 {
        for v in &mut observed {
            let lambda = f64::from(v.max(0.0) * p.dose);
            *v = if lambda > 0.0 {
                let draw: f64 = Poisson::new(lambda)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .sample(rng);
                (draw / f64::from(p.dose)) as f32
            } else {
                0.0
            };
        }
    }
    if p.gaussian_sigma > 0.0 {
        let g = Normal::new(0.0f32, p.gaussian_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut observed {
            *v += g.sample(rng);
        }
    }
    if p.scan_line_sigma > 0.0 {
        let g = Normal::new(0.0f32, p.scan_line_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for row in observed.chunks_mut(n) {
            let off = g.sample(rng);
            row.iter_mut().for_each(|v| *v += off);
        }
    }

    let grid = |v: Vec<f32>| ImageGrid::new(1, n, n, v);
    Ok(SynthSample {
        input: grid(observed)?,
        clean: grid(clean)?,
        no_background: grid(no_bg)?,
        sharp: grid(sharp)?,
        mask: grid(mask)?,
        particles,
    })
}
