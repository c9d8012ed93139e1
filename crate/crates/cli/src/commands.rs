use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use reid_core::autodiff::Tensor;
use reid_core::config::{parse_config, TrainConfig};
use reid_core::data::{augment_with_translations, decode_dataset, encode_dataset, generate_corpus, group_by_domain, split_domains, SplitPolicy};
use reid_core::eval::{evaluate_split, extract_embeddings, normalize_rows, run_ablation_with, AblationConfig, CmcCurve, ExperimentData};
use reid_core::gradsuite::run_suite;
use reid_core::orchestrator::{GanTrainer, Registry};
use reid_core::persist::{sha256_hex, write_atomic, Checkpoint};
use reid_core::reid::{ImageSample, ReidTrainer};
use serde_json::json;

use crate::output::Run;
use crate::{EvalProtocol, Rows};

const REPORT_VERSION: u32 = 1;
const GRAD_TOLERANCE: f64 = 1e-4;

fn read_config(run: &mut Run, path: &Path) -> Result<TrainConfig> {
    let bytes = run.read_input(path)?;
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let cfg = parse_config(&text).with_context(|| format!("config {}", path.display()))?;
    run.set_config(serde_json::to_value(&cfg)?, Some(cfg.seed));
    Ok(cfg)
}

fn read_checkpoint(run: &mut Run, path: &Path) -> Result<Checkpoint> {
    let bytes = run.read_input(path)?;
    Checkpoint::decode(&bytes).with_context(|| format!("checkpoint {}", path.display()))
}

fn read_dataset(run: &mut Run, path: &Path) -> Result<([usize; 3], Vec<ImageSample>)> {
    let bytes = run.read_input(path)?;
    decode_dataset(&bytes).with_context(|| format!("dataset {}", path.display()))
}

/// The corpus per domain: from a dataset file when given, else generated.
fn load_domains(run: &mut Run, cfg: &TrainConfig, data: Option<&Path>) -> Result<Vec<Vec<ImageSample>>> {
    let corpus = cfg.corpus_config()?;
    let Some(path) = data else {
        return Ok(generate_corpus(&corpus)?.domains);
    };
    let (shape, samples) = read_dataset(run, path)?;
    ensure!(shape == corpus.image, "dataset images are {shape:?}, the network profile takes {:?}", corpus.image);
    let domains = group_by_domain(&samples);
    ensure!(
        domains.len() == cfg.n_domains,
        "dataset has {} domains, the config declares n_domains = {}",
        domains.len(),
        cfg.n_domains
    );
    Ok(domains)
}

/// Corpus domain id of each registry domain, as stored by `train-gan`.
fn domain_slots(ck: &Checkpoint, registry: &Registry) -> Result<Vec<u16>> {
    let slots: Vec<u16> = match GanTrainer::checkpoint_config(ck).and_then(|c| c.get("domain_slots")) {
        Some(v) => serde_json::from_value(v.clone()).context("domain_slots in checkpoint")?,
        None => (0..registry.n_domains() as u16).collect(),
    };
    ensure!(
        slots.len() == registry.n_domains(),
        "checkpoint lists {} domain ids for {} translators",
        slots.len(),
        registry.n_domains()
    );
    Ok(slots)
}

pub fn gen_data(config: &Path, out: &Path) -> Result<ExitCode> {
    let mut run = Run::for_file("gen-data", json!({ "config": config, "out": out }), out)?;
    let cfg = read_config(&mut run, config)?;
    let corpus = generate_corpus(&cfg.corpus_config()?)?;
    run.write(out, &encode_dataset(&corpus.samples(), corpus.config.image)?)?;
    run.finish()?;
    eprintln!("wrote {} images from {} domains to {}", corpus.len(), corpus.domains.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train_gan(config: &Path, out: &Path, data: Option<&Path>, resume: Option<&Path>) -> Result<ExitCode> {
    let mut run = Run::in_dir("train-gan", json!({ "config": config, "out": out, "data": data, "resume": resume }), out)?;
    let cfg = read_config(&mut run, config)?;
    let setup = cfg.experiment_setup()?;
    let domains = load_domains(&mut run, &cfg, data)?;
    let ctx = ExperimentData::from_domains(&setup, domains, cfg.seed)?;
    let mut trainer = match resume {
        Some(path) => {
            let ck = read_checkpoint(&mut run, path)?;
            let t = GanTrainer::from_checkpoint(&ck)?;
            let slots = domain_slots(&ck, &t.registry)?;
            ensure!(slots == ctx.gan_domains, "checkpoint covers domains {slots:?}, this config trains {:?}", ctx.gan_domains);
            t
        }
        None => ctx.translator(&setup, cfg.seed, setup.gan.weights)?,
    };
    let meta = json!({ "train_config": cfg, "domain_slots": ctx.gan_domains });
    let ckpt_path = out.join("gan.ckpt");
    let total = trainer.settings().lr.total_epochs();
    while let Some(rec) = trainer.train_epoch(&ctx.gan_data)?.cloned() {
        eprintln!(
            "epoch {:>3}/{total}  lr {:.6}  d {:.4}  g {:.4}  cyc {:.4}  idm {:.4}  sem {:.4}",
            rec.epoch + 1,
            rec.lr,
            rec.mean.d_loss,
            rec.mean.g_loss,
            rec.mean.cyc,
            rec.mean.idm,
            rec.mean.sem
        );
        run.write(&ckpt_path, &trainer.to_checkpoint(meta.clone())?.encode()?)?;
    }
    run.write(&ckpt_path, &trainer.to_checkpoint(meta)?.encode()?)?;
    run.write(&out.join("history.csv"), trainer.history_csv().as_bytes())?;
    run.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn curve_row(s: &mut String, label: &str, curve: &CmcCurve) {
    let _ = writeln!(s, "{label},{},{},{},{}", curve.probes, curve.rank(1), curve.rank(5), curve.rank(10));
}

pub fn train_reid(config: &Path, out: &Path, gan_ckpt: Option<&Path>, data: Option<&Path>) -> Result<ExitCode> {
    let mut run = Run::in_dir("train-reid", json!({ "config": config, "out": out, "gan_ckpt": gan_ckpt, "data": data }), out)?;
    let cfg = read_config(&mut run, config)?;
    let setup = cfg.experiment_setup()?;
    let domains = load_domains(&mut run, &cfg, data)?;
    let ctx = ExperimentData::from_domains(&setup, domains, cfg.seed)?;
    let (train, gan_hash) = match gan_ckpt {
        None => (ctx.split.train.clone(), None),
        Some(path) => {
            let ck = read_checkpoint(&mut run, path)?;
            let hash = sha256_hex(&ck.encode()?);
            let registry = GanTrainer::from_checkpoint(&ck)?.registry;
            let slots = domain_slots(&ck, &registry)?;
            (augment_with_translations(&ctx.split.train, &registry, &slots)?, Some(hash))
        }
    };
    let synthetic = train.iter().filter(|s| s.is_synthetic).count();
    eprintln!("training on {} images ({synthetic} translated), split {}", train.len(), ctx.split.policy_id);
    let trainer = ctx.train_reid(&setup, cfg.seed, cfg.verification_loss, &train)?;
    let results = ctx.evaluate(&setup, &trainer.backbone, &train)?;

    let meta = json!({ "train_config": cfg, "gan_checkpoint_sha256": gan_hash });
    run.write(&out.join("reid.ckpt"), &trainer.to_checkpoint(&setup.profile, meta)?.encode()?)?;
    let mut history = String::from("step,verif,ident,total\n");
    for (k, r) in trainer.history.iter().enumerate() {
        let _ = writeln!(history, "{k},{},{},{}", r.verif, r.ident, r.total);
    }
    run.write(&out.join("history.csv"), history.as_bytes())?;
    let mut csv = String::from("direction,probes,rank1,rank5,rank10\n");
    for d in &results {
        curve_row(&mut csv, &d.direction, &d.curve);
        eprintln!("{}: rank-1 {:.1}%  rank-5 {:.1}%", d.direction, 100.0 * d.curve.rank(1), 100.0 * d.curve.rank(5));
    }
    run.write(&out.join("report.csv"), csv.as_bytes())?;
    let report = json!({
        "format_version": REPORT_VERSION,
        "split": ctx.split.policy_id,
        "train_images": train.len(),
        "translated_images": synthetic,
        "directions": results,
    });
    run.write(&out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    run.finish()?;
    Ok(ExitCode::SUCCESS)
}

pub fn translate(ckpt: &Path, input: &Path, src: u16, dst: &str, out: &Path) -> Result<ExitCode> {
    let mut run = Run::for_file("translate", json!({ "ckpt": ckpt, "input": input, "src": src, "dst": dst, "out": out }), out)?;
    let ck = read_checkpoint(&mut run, ckpt)?;
    let registry = GanTrainer::from_checkpoint(&ck)?.registry;
    let slots = domain_slots(&ck, &registry)?;
    let index_of = |d: u16| {
        slots.iter().position(|&s| s == d).with_context(|| format!("domain {d} has no translator; the checkpoint covers {slots:?}"))
    };
    let from = index_of(src)?;
    let targets: Vec<usize> = if dst == "all" {
        (0..slots.len()).filter(|&k| k != from).collect()
    } else {
        let d: u16 = dst.parse().with_context(|| format!("--dst must be a domain id or `all`, got {dst:?}"))?;
        ensure!(d != src, "source and target domain are both {d}");
        vec![index_of(d)?]
    };
    let (shape, samples) = read_dataset(&mut run, input)?;
    ensure!(shape == registry.profile().image, "images are {shape:?}, the translator takes {:?}", registry.profile().image);
    let mut translated = Vec::with_capacity(samples.len() * targets.len());
    for s in &samples {
        for &t in &targets {
            translated.push(ImageSample {
                image: registry.translate(&s.image, from, t)?,
                identity: s.identity,
                domain: slots[t],
                camera: s.camera,
                is_synthetic: true,
            });
        }
    }
    run.write(out, &encode_dataset(&translated, shape)?)?;
    run.finish()?;
    eprintln!("translated {} images into {} domain(s)", samples.len(), targets.len());
    Ok(ExitCode::SUCCESS)
}

pub struct EvaluateArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub protocol: EvalProtocol,
    pub out: PathBuf,
    pub domain: Option<u16>,
    pub probe_camera: u16,
    pub gallery_camera: u16,
    pub seed: u64,
    pub max_rank: usize,
    pub embeddings: Option<PathBuf>,
}

fn embedding_samples(m: &Tensor, from: &[ImageSample]) -> Result<Vec<ImageSample>> {
    let d = m.shape()[1];
    from.iter()
        .zip(m.data().chunks(d))
        .map(|(s, row)| Ok(ImageSample { image: Tensor::new(vec![d, 1, 1], row.to_vec())?, ..s.clone() }))
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<ExitCode> {
    let EvalProtocol::SingleShot = a.protocol;
    ensure!(a.max_rank >= 1, "--max-rank must be >= 1");
    let args = json!({
        "ckpt": a.ckpt, "data": a.data, "protocol": a.protocol, "out": a.out, "domain": a.domain,
        "probe_camera": a.probe_camera, "gallery_camera": a.gallery_camera, "seed": a.seed,
        "max_rank": a.max_rank, "embeddings": a.embeddings,
    });
    let mut run = Run::for_file("evaluate", args, &a.out)?;
    let ck = read_checkpoint(&mut run, &a.ckpt)?;
    let (trainer, _) = ReidTrainer::from_checkpoint(&ck)?;
    let (_, samples) = read_dataset(&mut run, &a.data)?;
    let domain = match a.domain {
        Some(d) => d,
        None => samples.iter().map(|s| s.domain).min().context("the dataset is empty")?,
    };
    let kept: Vec<ImageSample> = samples.into_iter().filter(|s| s.domain == domain && !s.is_synthetic).collect();
    let identities = kept.iter().map(|s| s.identity).collect::<std::collections::BTreeSet<_>>().len();
    ensure!(identities > 0, "no real images of domain {domain}");
    let policy = SplitPolicy {
        train_domains: vec![domain],
        eval_domain: domain,
        test_identities: identities,
        overlap_identities: false,
        identity_disjoint_domains: false,
        probe_camera: a.probe_camera,
        gallery_camera: a.gallery_camera,
        seed: a.seed,
    };
    let split = split_domains(&group_by_domain(&kept), &policy)?;
    let normalize = trainer.settings.normalize_embeddings;
    let curve = evaluate_split(&trainer.backbone, &split.gallery, &split.probe, normalize, a.max_rank)?;

    let is_csv = a.out.extension().is_some_and(|e| e == "csv");
    let body = if is_csv {
        let mut s = String::from("direction,probes,rank1,rank5,rank10\n");
        curve_row(&mut s, &format!("cam{}->cam{}", a.probe_camera, a.gallery_camera), &curve);
        s
    } else {
        let report = json!({
            "format_version": REPORT_VERSION,
            "protocol": a.protocol,
            "domain": domain,
            "split": split.policy_id,
            "gallery_size": split.gallery.len(),
            "rank1": curve.rank(1),
            "rank5": curve.rank(5),
            "rank10": curve.rank(10),
            "curve": curve,
        });
        serde_json::to_string_pretty(&report)? + "\n"
    };
    run.write(&a.out, body.as_bytes())?;
    if let Some(path) = &a.embeddings {
        let mut g = extract_embeddings(&trainer.backbone, &split.gallery)?;
        let mut p = extract_embeddings(&trainer.backbone, &split.probe)?;
        if normalize {
            g = normalize_rows(&g);
            p = normalize_rows(&p);
        }
        let mut rows = embedding_samples(&g, &split.gallery)?;
        rows.extend(embedding_samples(&p, &split.probe)?);
        let dim = trainer.backbone.feature_dim();
        run.write(path, &encode_dataset(&rows, [dim, 1, 1])?)?;
    }
    run.finish()?;
    eprintln!(
        "{} probes, {} gallery identities: rank-1 {:.1}%  rank-5 {:.1}%  rank-10 {:.1}%",
        curve.probes,
        split.gallery.len(),
        100.0 * curve.rank(1),
        100.0 * curve.rank(5),
        100.0 * curve.rank(10)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(config: &Path, seeds: usize, out: &Path, rows: Rows) -> Result<ExitCode> {
    let mut run = Run::in_dir("ablate", json!({ "config": config, "seeds": seeds, "out": out, "rows": rows }), out)?;
    let cfg = read_config(&mut run, config)?;
    if seeds < 3 {
        bail!("--seeds must be at least 3, got {seeds}");
    }
    let setup = cfg.experiment_setup()?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let configs = match rows {
        Rows::Standard => AblationConfig::standard_rows(),
        Rows::Lattice => AblationConfig::lattice(),
    };
    let started = std::time::Instant::now();
    let report = run_ablation_with(&configs, &setup, &seed_list, |c| {
        let result = match (&c.outcome, c.rank1()) {
            (Ok(_), Some(r)) => format!("rank-1 {:.1}%", 100.0 * r),
            (Err(e), _) => format!("failed: {e}"),
            _ => "no result".into(),
        };
        eprintln!("[{:>7.1}s] seed {} {}: {result}", started.elapsed().as_secs_f64(), c.seed, c.config.name());
    })?;
    run.write(&out.join("report.csv"), report.to_csv().as_bytes())?;
    run.write(&out.join("report.json"), report.to_json().as_bytes())?;
    let table = report.summary_table();
    run.write(&out.join("summary.txt"), table.as_bytes())?;
    run.finish()?;
    print!("{table}");
    let failed = report.cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see report.csv");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn check_grads(seeds: u64, out: Option<&Path>) -> Result<ExitCode> {
    ensure!(seeds >= 1, "--seeds must be >= 1");
    let rows = run_suite(&(0..seeds).collect::<Vec<_>>())?;
    let mut csv = String::from("case,seeds,checked,skipped,max_relative_error,pass\n");
    println!("{:<34} {:>8} {:>8} {:>12}", "case", "checked", "skipped", "max rel err");
    let mut ok = true;
    for r in &rows {
        let pass = r.max_relative_error <= GRAD_TOLERANCE;
        ok &= pass;
        println!(
            "{:<34} {:>8} {:>8} {:>12.3e} {}",
            r.name,
            r.checked,
            r.skipped,
            r.max_relative_error,
            if pass { "ok" } else { "FAIL" }
        );
        let _ = writeln!(csv, "{},{},{},{},{},{pass}", r.name, r.seeds, r.checked, r.skipped, r.max_relative_error);
    }
    if let Some(path) = out {
        write_atomic(path, csv.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
