//! Finite-difference checks of every differentiable op, layer type and loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check, GradCheckReport, Tape, Tensor, Var};
use crate::error::Result;
use crate::gan::{
    cycle_loss, discriminator_loss, generator_loss, identity_mapping_loss, scimgan_objective, semantic_consistency_loss,
    AdversarialForm, LossWeights, TranslationBundle,
};
use crate::nn::{Activation, FeatureShape, LayerSpec, Network};
use crate::reid::{identification_loss, improved_quartet_loss, quartet_loss_baseline, triplet_loss_baseline, Margins};
use crate::rng::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Worst result of one case over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteRow {
    pub name: String,
    pub seeds: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
}

type Case = fn(u64) -> Result<GradCheckReport>;

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape")
}

fn rng(seed: u64, case: &str) -> Rng {
    Rng::derive(seed, "grad-suite", case.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64)))
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output coordinate matters.
fn project(t: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let r = t.constant(r.clone());
    let p = t.mul(y, r)?;
    t.sum(p)
}

fn check_op(seed: u64, name: &str, input: &[usize], out: &[usize], f: impl Fn(&mut Tape, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut g = rng(seed, name);
    let x = normal(input, &mut g);
    let r = normal(out, &mut g);
    finite_diff_check(|t, x| {
        let y = f(t, x)?;
        project(t, y, &r)
    }, &x, FD_STEP)
}

fn conv_input(seed: u64) -> Result<GradCheckReport> {
    let w = normal(&[3, 2, 3, 3], &mut rng(seed, "conv-w"));
    let b = normal(&[3], &mut rng(seed, "conv-b"));
    check_op(seed, "conv.input", &[2, 2, 5, 5], &[2, 3, 3, 3], |t, x| {
        let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
        t.conv2d(x, w, Some(b), 2, 1)
    })
}

fn conv_weight(seed: u64) -> Result<GradCheckReport> {
    let x = normal(&[2, 2, 5, 5], &mut rng(seed, "conv-x"));
    check_op(seed, "conv.weight", &[3, 2, 3, 3], &[2, 3, 5, 5], |t, w| {
        let x = t.constant(x.clone());
        t.conv2d(x, w, None, 1, 1)
    })
}

fn conv_bias(seed: u64) -> Result<GradCheckReport> {
    let x = normal(&[2, 2, 4, 4], &mut rng(seed, "convb-x"));
    let w = normal(&[3, 2, 3, 3], &mut rng(seed, "convb-w"));
    check_op(seed, "conv.bias", &[3], &[2, 3, 2, 2], |t, b| {
        let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
        t.conv2d(x, w, Some(b), 2, 1)
    })
}

fn tconv_input(seed: u64) -> Result<GradCheckReport> {
    let w = normal(&[2, 3, 3, 3], &mut rng(seed, "tconv-w"));
    check_op(seed, "tconv.input", &[2, 2, 3, 3], &[2, 3, 6, 6], |t, x| {
        let w = t.constant(w.clone());
        t.conv_transpose2d(x, w, None, 2, 1, 1)
    })
}

fn tconv_weight(seed: u64) -> Result<GradCheckReport> {
    let x = normal(&[2, 2, 3, 3], &mut rng(seed, "tconv-x"));
    let b = normal(&[3], &mut rng(seed, "tconv-b"));
    check_op(seed, "tconv.weight", &[2, 3, 3, 3], &[2, 3, 6, 6], |t, w| {
        let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
        t.conv_transpose2d(x, w, Some(b), 2, 1, 1)
    })
}

fn dense_input(seed: u64) -> Result<GradCheckReport> {
    let w = normal(&[5, 4], &mut rng(seed, "dense-w"));
    let b = normal(&[4], &mut rng(seed, "dense-b"));
    check_op(seed, "dense.input", &[3, 5], &[3, 4], |t, x| {
        let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
        let y = t.matmul(x, w)?;
        t.add_bias(y, b)
    })
}

fn dense_weight(seed: u64) -> Result<GradCheckReport> {
    let x = normal(&[3, 5], &mut rng(seed, "densew-x"));
    check_op(seed, "dense.weight", &[5, 4], &[3, 4], |t, w| {
        let x = t.constant(x.clone());
        t.matmul(x, w)
    })
}

fn elementwise(seed: u64, name: &str, f: fn(&mut Tape, Var) -> Result<Var>) -> Result<GradCheckReport> {
    check_op(seed, name, &[3, 7], &[3, 7], f)
}

fn relu(seed: u64) -> Result<GradCheckReport> {
    elementwise(seed, "relu", |t, x| t.relu(x))
}

fn leaky_relu(seed: u64) -> Result<GradCheckReport> {
    elementwise(seed, "leaky_relu", |t, x| t.leaky_relu(x, 0.2))
}

fn tanh(seed: u64) -> Result<GradCheckReport> {
    elementwise(seed, "tanh", |t, x| t.tanh(x))
}

fn sigmoid(seed: u64) -> Result<GradCheckReport> {
    elementwise(seed, "sigmoid", |t, x| t.sigmoid(x))
}

fn log_softmax(seed: u64) -> Result<GradCheckReport> {
    elementwise(seed, "log_softmax", |t, x| t.log_softmax(x))
}

fn l2_normalize(seed: u64) -> Result<GradCheckReport> {
    elementwise(seed, "l2_normalize", |t, x| t.l2_normalize_rows(x))
}

fn instance_norm(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, "instance_norm", &[2, 3, 4, 4], &[2, 3, 4, 4], |t, x| t.instance_norm(x))
}

/// Input gradient through a network built from `layers` with random weights.
fn network(seed: u64, name: &str, layers: Vec<LayerSpec>, input: [usize; 3]) -> Result<GradCheckReport> {
    let shape = FeatureShape::Image { channels: input[0], height: input[1], width: input[2] };
    let mut g = rng(seed, name);
    let mut net = Network::build(name, &layers, shape, &mut g)?;
    // Weights well away from zero so every layer contributes visibly.
    for p in net.params_mut() {
        p.value = normal(p.value.shape(), &mut g);
    }
    let out = net.output_shape().dims();
    let mut out_shape = vec![2];
    out_shape.extend(out);
    check_op(seed, name, &[2, input[0], input[1], input[2]], &out_shape, |t, x| {
        let bound = net.bind(t, false);
        net.forward(t, &bound, x)
    })
}

fn residual_block(seed: u64) -> Result<GradCheckReport> {
    network(seed, "residual_block", vec![LayerSpec::ResidualBlock { channels: 2 }], [2, 4, 4])
}

fn generator_stack(seed: u64) -> Result<GradCheckReport> {
    use Activation::*;
    network(
        seed,
        "generator_stack",
        vec![
            LayerSpec::conv(3, 3, 2, None),
            LayerSpec::InstanceNorm,
            LayerSpec::activation(Relu),
            LayerSpec::ResidualBlock { channels: 3 },
            LayerSpec::transposed_conv(2, 3, 2, None),
            LayerSpec::InstanceNorm,
            LayerSpec::activation(Relu),
            LayerSpec::conv(2, 3, 1, Tanh),
        ],
        [2, 4, 4],
    )
}

fn discriminator_stack(seed: u64) -> Result<GradCheckReport> {
    use Activation::*;
    network(
        seed,
        "discriminator_stack",
        vec![LayerSpec::conv(3, 3, 2, LeakyRelu), LayerSpec::dense(1, Sigmoid)],
        [2, 4, 4],
    )
}

fn backbone_stack(seed: u64) -> Result<GradCheckReport> {
    use Activation::*;
    network(
        seed,
        "backbone_stack",
        vec![
            LayerSpec::conv(3, 3, 2, Relu),
            LayerSpec::dense(6, None),
            LayerSpec::activation(Relu),
            LayerSpec::dense(4, Relu),
            LayerSpec::dense(5, None),
        ],
        [2, 4, 4],
    )
}

/// Scalar loss of a packed input `x` of shape `(parts·rows, cols)`.
fn check_loss(seed: u64, name: &str, rows: usize, cols: usize, parts: usize, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<GradCheckReport> {
    let x = normal(&[parts * rows, cols], &mut rng(seed, name));
    finite_diff_check(|t, x| {
        let p = (0..parts).map(|k| t.rows(x, k * rows, (k + 1) * rows)).collect::<Result<Vec<_>>>()?;
        f(t, &p)
    }, &x, FD_STEP)
}

fn disc_loss(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-adversarial-d", 4, 1, 2, |t, p| {
        let (r, f) = (t.sigmoid(p[0])?, t.sigmoid(p[1])?);
        discriminator_loss(t, r, f)
    })
}

fn gen_loss_ns(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-adversarial-g", 4, 1, 1, |t, p| {
        let f = t.sigmoid(p[0])?;
        generator_loss(t, f, AdversarialForm::NonSaturating)
    })
}

fn gen_loss_sat(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-adversarial-g-sat", 4, 1, 1, |t, p| {
        let f = t.sigmoid(p[0])?;
        generator_loss(t, f, AdversarialForm::Saturating)
    })
}

/// Ten parts: forward and backward bundles of x_src, z_src, x_fake, z_back, x_rec.
fn bundles(p: &[Var]) -> (TranslationBundle, TranslationBundle) {
    let b = |o: usize, src: usize, dst: usize| TranslationBundle {
        x_src: p[o],
        z_src: p[o + 1],
        x_fake: p[o + 2],
        z_back: p[o + 3],
        x_rec: p[o + 4],
        src,
        dst,
    };
    (b(0, 0, 1), b(5, 1, 0))
}

fn cycle(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-cycle", 2, 6, 10, |t, p| {
        let (f, b) = bundles(p);
        cycle_loss(t, &f, &b)
    })
}

fn identity_mapping(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-identity", 2, 6, 4, |t, p| identity_mapping_loss(t, p[0], p[1], p[2], p[3]))
}

fn semantic(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-semantic", 2, 6, 4, |t, p| semantic_consistency_loss(t, p[0], p[1], p[2], p[3]))
}

fn full_objective(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-total", 2, 6, 12, |t, p| {
        let (f, b) = bundles(p);
        let df = t.sigmoid(p[10])?;
        let db = t.sigmoid(p[11])?;
        let af = generator_loss(t, df, AdversarialForm::NonSaturating)?;
        let ab = generator_loss(t, db, AdversarialForm::NonSaturating)?;
        let c = cycle_loss(t, &f, &b)?;
        let i = identity_mapping_loss(t, f.x_src, f.x_fake, b.x_src, b.x_fake)?;
        let s = semantic_consistency_loss(t, f.z_src, f.z_back, b.z_src, b.z_back)?;
        scimgan_objective(t, af, ab, c, i, s, &LossWeights::default())
    })
}

fn improved_quartet(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "eq-improved-quartet", 3, 4, 4, |t, p| {
        // Scaled down so both hinges are active for some rows and not others.
        let s: Vec<Var> = p.iter().map(|&v| t.scale(v, 0.3)).collect::<Result<_>>()?;
        improved_quartet_loss(t, s[0], s[1], s[2], s[3], Margins::default())
    })
}

fn quartet(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "quartet", 3, 4, 4, |t, p| {
        let s: Vec<Var> = p.iter().map(|&v| t.scale(v, 0.3)).collect::<Result<_>>()?;
        quartet_loss_baseline(t, s[0], s[1], s[2], s[3], -1.0)
    })
}

fn triplet(seed: u64) -> Result<GradCheckReport> {
    check_loss(seed, "triplet", 3, 4, 3, |t, p| {
        let s: Vec<Var> = p.iter().map(|&v| t.scale(v, 0.3)).collect::<Result<_>>()?;
        triplet_loss_baseline(t, s[0], s[1], s[2], 0.5)
    })
}

fn identification(seed: u64) -> Result<GradCheckReport> {
    let targets: Vec<usize> = (0..4).map(|k| (seed as usize + k) % 5).collect();
    check_loss(seed, "eq-identification", 4, 5, 1, move |t, p| identification_loss(t, p[0], &targets))
}

/// Every case, by name.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d/input", conv_input),
        ("conv2d/weight", conv_weight),
        ("conv2d/bias", conv_bias),
        ("transposed_conv2d/input", tconv_input),
        ("transposed_conv2d/weight", tconv_weight),
        ("dense/input", dense_input),
        ("dense/weight", dense_weight),
        ("instance_norm", instance_norm),
        ("relu", relu),
        ("leaky_relu", leaky_relu),
        ("tanh", tanh),
        ("sigmoid", sigmoid),
        ("log_softmax", log_softmax),
        ("l2_normalize_rows", l2_normalize),
        ("residual_block", residual_block),
        ("generator_stack", generator_stack),
        ("discriminator_stack", discriminator_stack),
        ("reid_backbone_stack", backbone_stack),
        ("loss/discriminator", disc_loss),
        ("loss/generator_non_saturating", gen_loss_ns),
        ("loss/generator_saturating", gen_loss_sat),
        ("loss/cycle", cycle),
        ("loss/identity_mapping", identity_mapping),
        ("loss/semantic_consistency", semantic),
        ("loss/total_translation_objective", full_objective),
        ("loss/improved_quartet", improved_quartet),
        ("loss/quartet", quartet),
        ("loss/triplet", triplet),
        ("loss/identification", identification),
    ]
}

/// Runs every case for `seeds` and keeps each case's worst error.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<GradSuiteRow>> {
    cases()
        .into_iter()
        .map(|(name, case)| {
            let mut row = GradSuiteRow { name: name.to_string(), seeds: seeds.len(), checked: 0, skipped: 0, max_relative_error: 0.0 };
            for &seed in seeds {
                let r = case(seed)?;
                row.checked += r.checked;
                row.skipped += r.skipped;
                row.max_relative_error = row.max_relative_error.max(r.max_relative_error);
            }
            Ok(row)
        })
        .collect()
}
