//! Procedural people: a few coloured primitives on a textured background,
//! restyled per domain and perturbed per camera.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::reid::ImageSample;
use crate::rng::Rng;

/// Photometric appearance of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub brightness_shift: f64,
    pub channel_gain: [f64; 3],
    pub background_texture_seed: u64,
    pub noise_sigma: f64,
}

impl DomainStyle {
    /// Largest per-field difference, used to keep domains apart.
    pub fn distance(&self, other: &DomainStyle) -> f64 {
        let mut d = (self.brightness_shift - other.brightness_shift).abs();
        for c in 0..3 {
            d = d.max((self.channel_gain[c] - other.channel_gain[c]).abs());
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Rect,
    Ellipse,
}

/// Axis-aligned shape in unit image coordinates (centre, half extents).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 2],
    pub half: [f64; 2],
    pub color: [f64; 3],
}

impl Primitive {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.center[0]) / self.half[0];
        let dy = (y - self.center[1]) / self.half[1];
        match self.kind {
            PrimitiveKind::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            PrimitiveKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// Appearance of one person, independent of domain and camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityTemplate {
    pub identity: u32,
    /// Painted in order, later primitives on top.
    pub parts: Vec<Primitive>,
}

impl IdentityTemplate {
    /// Torso and legs colours, the parameters kept apart between identities.
    fn signature(&self) -> [f64; 6] {
        let (t, l) = (&self.parts[0].color, &self.parts[1].color);
        [t[0], t[1], t[2], l[0], l[1], l[2]]
    }

    /// Draws a template: torso and legs always, a head and a bag sometimes.
    pub fn random(identity: u32, rng: &mut Rng) -> Self {
        let color = |rng: &mut Rng| [0, 1, 2].map(|_| rng.uniform_range(-0.7, 0.7));
        let torso_w = rng.uniform_range(0.16, 0.26);
        let torso = Primitive {
            kind: PrimitiveKind::Rect,
            center: [0.5, rng.uniform_range(0.42, 0.46)],
            half: [torso_w, rng.uniform_range(0.14, 0.18)],
            color: color(rng),
        };
        let legs = Primitive {
            kind: PrimitiveKind::Rect,
            center: [0.5, 0.78],
            half: [rng.uniform_range(0.1, 0.18), rng.uniform_range(0.14, 0.18)],
            color: color(rng),
        };
        let mut parts = vec![torso, legs];
        if rng.bernoulli(0.8) {
            parts.push(Primitive {
                kind: PrimitiveKind::Ellipse,
                center: [0.5, 0.16],
                half: [rng.uniform_range(0.08, 0.13), rng.uniform_range(0.08, 0.12)],
                color: color(rng),
            });
        }
        if rng.bernoulli(0.5) {
            let side = if rng.bernoulli(0.5) { -1.0 } else { 1.0 };
            parts.push(Primitive {
                kind: PrimitiveKind::Rect,
                center: [0.5 + side * (torso_w + 0.06), rng.uniform_range(0.45, 0.6)],
                half: [0.07, rng.uniform_range(0.07, 0.12)],
                color: color(rng),
            });
        }
        Self { identity, parts }
    }
}

/// Per-image geometric jitter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
}

impl Pose {
    pub const NEUTRAL: Pose = Pose { dx: 0.0, dy: 0.0, scale: 1.0 };

    pub fn random(rng: &mut Rng) -> Self {
        Self { dx: rng.uniform_range(-0.08, 0.08), dy: rng.uniform_range(-0.04, 0.04), scale: rng.uniform_range(0.92, 1.08) }
    }
}

/// Photometric offset of one camera within a domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraShift {
    pub brightness: f64,
    pub gain: [f64; 3],
}

impl CameraShift {
    pub const NONE: CameraShift = CameraShift { brightness: 0.0, gain: [1.0; 3] };

    /// Camera perturbation of strength `s`, fixed by the domain's texture seed.
    pub fn for_camera(style: &DomainStyle, camera: u16, strength: f64) -> Self {
        if strength == 0.0 {
            return Self::NONE;
        }
        let mut rng = Rng::derive(style.background_texture_seed, "camera", camera as u64);
        Self {
            brightness: strength * rng.uniform_range(-1.0, 1.0),
            gain: [0, 1, 2].map(|_| 1.0 + strength * rng.uniform_range(-1.0, 1.0)),
        }
    }
}

fn background(style: &DomainStyle, c: usize, x: f64, y: f64) -> f64 {
    let mut rng = Rng::derive(style.background_texture_seed, "texture", c as u64);
    let base = rng.uniform_range(-0.35, 0.35);
    let (fx, fy, phase) = (rng.uniform_range(4.0, 12.0), rng.uniform_range(4.0, 12.0), rng.uniform_range(0.0, 6.3));
    base + 0.15 * (fx * x + fy * y + phase).sin()
}

/// Renders with an explicit pose. Only the pixel noise consumes `rng`, and
/// not at all when `style.noise_sigma` is zero.
pub fn render_with_pose(
    template: &IdentityTemplate,
    style: &DomainStyle,
    camera: CameraShift,
    pose: Pose,
    shape: [usize; 3],
    rng: &mut Rng,
) -> Result<Tensor> {
    let [channels, h, w] = shape;
    if channels != 3 {
        return Err(Error::InvalidArgument(format!("synthetic images have 3 channels, got {channels}")));
    }
    let bg: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            (0..h * w)
                .map(|k| background(style, c, (k % w) as f64 / w as f64, (k / w) as f64 / h as f64))
                .collect()
        })
        .collect();
    let mut data = vec![0.0; 3 * h * w];
    for yi in 0..h {
        for xi in 0..w {
            // Pixel centre mapped back into template coordinates.
            let x = ((xi as f64 + 0.5) / w as f64 - 0.5 - pose.dx) / pose.scale + 0.5;
            let y = ((yi as f64 + 0.5) / h as f64 - 0.5 - pose.dy) / pose.scale + 0.5;
            let part = template.parts.iter().rev().find(|p| p.contains(x, y));
            for c in 0..3 {
                let raw = part.map_or(bg[c][yi * w + xi], |p| p.color[c]);
                let mut v = style.channel_gain[c] * camera.gain[c] * raw + style.brightness_shift + camera.brightness;
                if style.noise_sigma > 0.0 {
                    v += style.noise_sigma * rng.normal();
                }
                data[c * h * w + yi * w + xi] = v.clamp(-1.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Renders one sample with a pose drawn from `rng`.
pub fn render_sample(
    template: &IdentityTemplate,
    style: &DomainStyle,
    domain: u16,
    camera: u16,
    camera_strength: f64,
    shape: [usize; 3],
    rng: &mut Rng,
) -> Result<ImageSample> {
    let pose = Pose::random(rng);
    let shift = CameraShift::for_camera(style, camera, camera_strength);
    let image = render_with_pose(template, style, shift, pose, shape, rng)?;
    Ok(ImageSample { image, identity: template.identity, domain, camera, is_synthetic: false })
}

/// Draws `n` templates whose torso/legs colours differ pairwise by at least
/// `min_separation` in some channel.
pub fn identity_templates(n: usize, min_separation: f64, seed: u64) -> Result<Vec<IdentityTemplate>> {
    let mut out: Vec<IdentityTemplate> = Vec::with_capacity(n);
    for id in 0..n {
        let mut found = None;
        for attempt in 0..10_000u64 {
            let mut rng = Rng::derive(seed, "identity", ((id as u64) << 20) | attempt);
            let t = IdentityTemplate::random(id as u32, &mut rng);
            let sig = t.signature();
            let far = out.iter().all(|o| {
                let s = o.signature();
                (0..6).map(|k| (s[k] - sig[k]).abs()).fold(0.0, f64::max) >= min_separation
            });
            if far {
                found = Some(t);
                break;
            }
        }
        out.push(found.ok_or_else(|| {
            Error::InvalidArgument(format!("cannot place {n} identities {min_separation} apart"))
        })?);
    }
    Ok(out)
}

/// Domain styles at least `min_delta` apart.
pub fn domain_styles(n: usize, min_delta: f64, noise_sigma: f64, seed: u64) -> Result<Vec<DomainStyle>> {
    let mut out: Vec<DomainStyle> = Vec::with_capacity(n);
    for d in 0..n {
        let mut found = None;
        for attempt in 0..10_000u64 {
            let mut rng = Rng::derive(seed, "domain-style", ((d as u64) << 20) | attempt);
            let s = DomainStyle {
                brightness_shift: rng.uniform_range(-0.25, 0.25),
                channel_gain: [0, 1, 2].map(|_| rng.uniform_range(0.6, 1.3)),
                background_texture_seed: rng.next_u64(),
                noise_sigma,
            };
            if out.iter().all(|o| o.distance(&s) >= min_delta) {
                found = Some(s);
                break;
            }
        }
        out.push(found.ok_or_else(|| Error::InvalidArgument(format!("cannot place {n} domain styles {min_delta} apart")))?);
    }
    Ok(out)
}
