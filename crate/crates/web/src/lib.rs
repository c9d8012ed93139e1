//! WebAssembly bindings for the static demo page in `www/`.

use reid_core::autodiff::{Tape, Tensor};
use reid_core::data::{domain_styles, identity_templates, render_with_pose, CameraShift, Pose};
use reid_core::orchestrator::{pair_count, LrSchedule, Method};
use reid_core::reid::{improved_quartet_loss, quartet_loss_baseline, triplet_loss_baseline, Margins};
use reid_core::rng::Rng;
use wasm_bindgen::prelude::*;

const TILE: usize = 16;

fn js(e: reid_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// RGBA pixels of one identity seen by every camera (rows) in every domain
/// (columns), noise-free with a neutral pose. The image is
/// `16·n_domains` wide and `16·cameras` high.
#[wasm_bindgen]
pub fn render_identity_grid(
    seed: u32,
    identity: u32,
    n_identities: u32,
    n_domains: u32,
    cameras: u32,
    camera_strength: f64,
) -> Result<Vec<u8>, JsError> {
    if identity >= n_identities {
        return Err(JsError::new(&format!("identity {identity} outside 0..{n_identities}")));
    }
    let (n, cams) = (n_domains as usize, cameras as usize);
    let templates = identity_templates(n_identities as usize, 0.2, seed as u64).map_err(js)?;
    let styles = domain_styles(n, 0.15, 0.0, seed as u64).map_err(js)?;
    let (w, h) = (TILE * n, TILE * cams);
    let mut rgba = vec![255u8; w * h * 4];
    for (d, style) in styles.iter().enumerate() {
        for c in 0..cams {
            let shift = CameraShift::for_camera(style, c as u16, camera_strength);
            let img = render_with_pose(&templates[identity as usize], style, shift, Pose::NEUTRAL, [3, TILE, TILE], &mut Rng::new(0))
                .map_err(js)?;
            for y in 0..TILE {
                for x in 0..TILE {
                    let o = ((c * TILE + y) * w + d * TILE + x) * 4;
                    for ch in 0..3 {
                        rgba[o + ch] = to_byte(img.data()[ch * TILE * TILE + y * TILE + x]);
                    }
                }
            }
        }
    }
    Ok(rgba)
}

/// Losses of a single quartet of 2-D embeddings `[x1, y1, .., x4, y4]`
/// (anchor, positive, first negative, second negative).
///
/// Returns `[improved, quartet, triplet, d12, d13, d43]` followed by the
/// eight gradient components of the improved quartet loss.
#[wasm_bindgen]
pub fn quartet_explorer(points: &[f64], tau1: f64, tau2: f64, triplet_margin: f64) -> Result<Vec<f64>, JsError> {
    if points.len() != 8 {
        return Err(JsError::new("expected 8 coordinates"));
    }
    let mut tape = Tape::new();
    let f: Vec<_> = points
        .chunks(2)
        .map(|p| Tensor::new(vec![1, 2], p.to_vec()).map(|t| tape.leaf(t)))
        .collect::<Result<_, _>>()
        .map_err(js)?;
    let improved = improved_quartet_loss(&mut tape, f[0], f[1], f[2], f[3], Margins { tau1, tau2 }).map_err(js)?;
    let quartet = quartet_loss_baseline(&mut tape, f[0], f[1], f[2], f[3], tau1).map_err(js)?;
    let triplet = triplet_loss_baseline(&mut tape, f[0], f[1], f[2], triplet_margin).map_err(js)?;
    let mut out = vec![tape.scalar(improved), tape.scalar(quartet), tape.scalar(triplet)];
    let d = |a: usize, b: usize| (points[2 * a] - points[2 * b]).powi(2) + (points[2 * a + 1] - points[2 * b + 1]).powi(2);
    out.extend([d(0, 1), d(0, 2), d(3, 2)]);
    tape.backward(improved).map_err(js)?;
    for v in &f {
        out.extend_from_slice(tape.grad_slice(*v));
    }
    Ok(out)
}

/// `[shared-latent networks, pairwise networks]` needed for `n` domains.
#[wasm_bindgen]
pub fn pair_counts(n_domains: u32) -> Result<Vec<u32>, JsError> {
    let n = n_domains as usize;
    Ok(vec![
        pair_count(n, Method::Scimgan).map_err(js)? as u32,
        pair_count(n, Method::Cyclegan).map_err(js)? as u32,
    ])
}

/// Learning rate at the start of every epoch, plus the final value.
#[wasm_bindgen]
pub fn lr_curve(base_lr: f64, constant_epochs: u32, decay_epochs: u32) -> Result<Vec<f64>, JsError> {
    let s = LrSchedule::new(base_lr, constant_epochs as usize, decay_epochs as usize).map_err(js)?;
    Ok((0..=s.total_epochs()).map(|e| s.lr(e)).collect())
}
