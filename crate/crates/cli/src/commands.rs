use crate::config::{manifest_beside, Manifest};
use crate::data::{prefixed, read_ovf, standardized_spacing, stem, write_ovf, Prepared};
use crate::{
    Cmd, EvalArgs, ExportArgs, GmpCmdArgs, InferArgs, ModeArg, PhantomArgs, PreprocessArgs, SegmentArgs,
    SweepArgs, SweepKind, TrainArgs, TrainOpts,
};
use anyhow::{anyhow, bail, ensure, Context, Result};
use octcyst::gmp::GmpParams;
use octcyst::metrics::{combine_graders, mean_std, EvalMode, EvalReport};
use octcyst::model::{infer_volume, SliceSample, CystNet, Trainer};
use octcyst::nn::{parse_metadata, Checkpoint};
use octcyst::phantom::{generate_phantom, PhantomParams};
use octcyst::pipeline::{crop_to_roi, par_map, score_roi};
use octcyst::preprocessing::{preprocess_slice, LayerPath, PreprocessParams};
use octcyst::segmentation::{segment_slice, threshold_map, upsample_mask, SegParams};
use octcyst::volume_io::{export_pgm, Dtype, Image2D, Mask2D, Volume};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct Ctx {
    pub jobs: usize,
    pub manifest: Manifest,
}

pub fn run(cmd: Cmd, ctx: Ctx) -> Result<()> {
    match cmd {
        Cmd::Phantom(a) => phantom(a, ctx),
        Cmd::Preprocess(a) => preprocess(a, ctx),
        Cmd::Gmp(a) => gmp(a, ctx),
        Cmd::Train(a) => train(a, ctx),
        Cmd::Infer(a) => infer(a, ctx),
        Cmd::Segment(a) => segment(a, ctx),
        Cmd::Eval(a) => eval(a, ctx),
        Cmd::Sweep(a) => sweep(a, ctx),
        Cmd::Export(a) => export(a, ctx),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn path_line(name: &str, z: usize, p: &LayerPath) -> String {
    let rows: Vec<String> = p.rows().iter().map(usize::to_string).collect();
    format!("{z} {name} {}\n", rows.join(" "))
}

fn phantom(a: PhantomArgs, mut ctx: Ctx) -> Result<()> {
    create_dir(&a.out_dir)?;
    ctx.manifest.seed = Some(a.seed);
    let seeds: Vec<u64> = (0..a.count as u64).map(|i| a.seed + i).collect();
    let phantoms = par_map(&seeds, ctx.jobs, |_, &seed| {
        generate_phantom(&PhantomParams {
            seed,
            slices: a.slices,
            cysts: a.cysts,
            speckle: a.speckle,
            ..PhantomParams::default()
        })
    });
    for (i, ph) in phantoms.into_iter().enumerate() {
        let ph = ph.with_context(|| format!("phantom {i} (seed {})", seeds[i]))?;
        let base = a.out_dir.join(format!("phantom_{i:03}"));
        let img = with_suffix(&base, ".ovf");
        let gt = prefixed(&base, "gt");
        write_ovf(&img, &ph.image, Dtype::F32)?;
        write_ovf(&gt, &ph.gt, Dtype::U8)?;
        let mut layers = String::from("# slice layer row-per-column\n");
        for (z, (ilm, rpe)) in ph.ilm.iter().zip(&ph.rpe).enumerate() {
            layers.push_str(&path_line("ilm", z, ilm));
            layers.push_str(&path_line("rpe", z, rpe));
        }
        let lp = with_suffix(&base, ".layers.txt");
        write_text(&lp, &layers)?;
        for p in [img, gt, lp] {
            ctx.manifest.output(&p);
        }
    }
    ctx.manifest.write(&a.out_dir.join("phantom.manifest"))
}

fn preprocess(a: PreprocessArgs, mut ctx: Ctx) -> Result<()> {
    ensure!(
        a.gt.is_empty() || a.gt.len() == a.input.len(),
        "{} truth volumes for {} inputs",
        a.gt.len(),
        a.input.len()
    );
    create_dir(&a.out_dir)?;
    let params = PreprocessParams {
        lambda: a.lambda,
        iters: a.iters,
    };
    for (i, input) in a.input.iter().enumerate() {
        let raw = read_ovf(input)?;
        ctx.manifest.input(input)?;
        let rois = par_map(&raw.slice_images(), ctx.jobs, |_, img| preprocess_slice(img, &params));
        let rois = rois
            .into_iter()
            .enumerate()
            .map(|(z, r)| r.with_context(|| format!("{} slice {z}", input.display())))
            .collect::<Result<Vec<_>>>()?;
        let spacing = standardized_spacing(&raw);
        let base = a.out_dir.join(stem(input));
        let images: Vec<Image2D> = rois.iter().map(|r| r.image.clone()).collect();
        let priors: Vec<Mask2D> = rois.iter().map(|r| r.prior.clone()).collect();
        let mut outputs = vec![prefixed(&base, "roi"), prefixed(&base, "prior")];
        write_ovf(&outputs[0], &Volume::from_slices(&images, spacing)?, Dtype::F32)?;
        write_ovf(&outputs[1], &Volume::from_masks(&priors, spacing)?, Dtype::U8)?;
        let x0: String = rois.iter().map(|r| format!("{}\n", r.x0)).collect();
        let x0_path = with_suffix(&base, ".x0.txt");
        write_text(&x0_path, &x0)?;
        outputs.push(x0_path);
        if let Some(gt_path) = a.gt.get(i) {
            let gt = read_ovf(gt_path)?;
            ctx.manifest.input(gt_path)?;
            ensure!(
                gt.slices() == raw.slices(),
                "{}: {} slices, image has {}",
                gt_path.display(),
                gt.slices(),
                raw.slices()
            );
            let masks: Vec<Mask2D> = gt.slice_masks().iter().zip(&rois).map(|(m, r)| crop_to_roi(m, r.x0)).collect();
            let p = prefixed(&base, "roigt");
            write_ovf(&p, &Volume::from_masks(&masks, spacing)?, Dtype::U8)?;
            outputs.push(p);
        }
        for p in &outputs {
            ctx.manifest.output(p);
        }
    }
    ctx.manifest.write(&a.out_dir.join("preprocess.manifest"))
}

fn gmp(a: GmpCmdArgs, mut ctx: Ctx) -> Result<()> {
    let params = a.gmp.params()?;
    let vol = Prepared::load(&a.volume, false, &mut ctx.manifest)?;
    let cakes = vol.cakes(&params, ctx.jobs)?;
    let planes: Vec<Image2D> = cakes.iter().flat_map(|c| c.planes().iter().cloned()).collect();
    write_ovf(&a.out, &Volume::from_slices(&planes, vol.roi.spacing())?, Dtype::F32)?;
    ctx.manifest.output(&a.out);
    ctx.manifest.write(&manifest_beside(&a.out))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Manifest location for runs that print their result.
fn stdout_manifest(m: &Manifest) -> PathBuf {
    PathBuf::from(format!("{}.manifest", m.command))
}

fn meta_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".meta")
}

fn save_checkpoint(path: &Path, t: &Trainer, gmp: &GmpParams) -> Result<()> {
    t.checkpoint().save(path).with_context(|| format!("writing {}", path.display()))?;
    let meta = format!(
        "{}directions={}\nextent={}\ndelta={}\ncoalesce={}\n",
        t.metadata(),
        gmp.k,
        gmp.n,
        gmp.delta,
        gmp.coalesce.name()
    );
    write_text(&meta_path(path), &meta)
}

/// Trains from scratch, logging each epoch to stderr.
fn fit(samples: &[SliceSample], gmp: &GmpParams, opts: &TrainOpts, out: &Path) -> Result<CystNet<f32>> {
    let hp = opts.hyperparams();
    let mut net = CystNet::init(gmp.k + 1, hp.seed);
    net.relu = opts.relu;
    let mut t = Trainer::new(net, hp)?;
    for e in 1..=opts.epochs {
        let loss = t.run_epoch(samples)?;
        eprintln!("epoch {e}/{} loss {loss:.6}", opts.epochs);
        if opts.checkpoint_every > 0 && e % opts.checkpoint_every == 0 && e < opts.epochs {
            let p = with_suffix(out, &format!(".e{e:04}"));
            save_checkpoint(&p, &t, gmp)?;
        }
    }
    save_checkpoint(out, &t, gmp)?;
    Ok(t.net)
}

fn load_samples(prefixes: &[PathBuf], gmp: &GmpParams, ctx: &mut Ctx) -> Result<Vec<SliceSample>> {
    let mut samples = Vec::new();
    for p in prefixes {
        let vol = Prepared::load(p, true, &mut ctx.manifest)?;
        samples.extend(vol.samples(gmp, ctx.jobs)?);
    }
    Ok(samples)
}

fn train(a: TrainArgs, mut ctx: Ctx) -> Result<()> {
    let gmp = a.gmp.params()?;
    ctx.manifest.seed = Some(a.train.seed);
    let samples = load_samples(&a.volume, &gmp, &mut ctx)?;
    let positives = samples.iter().filter(|s| s.has_cyst()).count();
    eprintln!("{} slices, {positives} with cysts", samples.len());
    fit(&samples, &gmp, &a.train, &a.out)?;
    ctx.manifest.output(&a.out);
    ctx.manifest.write(&manifest_beside(&a.out))
}

/// Loads a checkpoint and, when its sidecar exists, the activation choice.
fn load_net(path: &Path, gmp: &GmpParams, manifest: &mut Manifest) -> Result<CystNet<f32>> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    manifest.input(path)?;
    let (mut net, _) = CystNet::<f32>::from_checkpoint(&ck)?;
    let meta = meta_path(path);
    if meta.exists() {
        let text = std::fs::read_to_string(&meta).with_context(|| format!("reading {}", meta.display()))?;
        let m = parse_metadata(&text)?;
        net.relu = m.get("relu").is_some_and(|v| v == "true");
    }
    ensure!(
        net.channels() == gmp.k + 1,
        "{} expects {} directions, configured {}",
        path.display(),
        net.channels() - 1,
        gmp.k
    );
    Ok(net)
}

fn probabilities(net: &CystNet<f32>, vol: &Prepared, gmp: &GmpParams, jobs: usize) -> Result<Vec<Image2D>> {
    let samples = vol.samples(gmp, jobs)?;
    let per = par_map(&samples, jobs, |_, s| infer_volume(net, std::slice::from_ref(s)));
    let mut out = Vec::with_capacity(samples.len());
    for p in per {
        out.extend(p?);
    }
    Ok(out)
}

fn infer(a: InferArgs, mut ctx: Ctx) -> Result<()> {
    let gmp = a.gmp.params()?;
    let net = load_net(&a.checkpoint, &gmp, &mut ctx.manifest)?;
    let vol = Prepared::load(&a.volume, false, &mut ctx.manifest)?;
    let probs = probabilities(&net, &vol, &gmp, ctx.jobs)?;
    let [sx, sy, sz] = vol.roi.spacing();
    write_ovf(&a.out, &Volume::from_slices(&probs, [2.0 * sx, 2.0 * sy, sz])?, Dtype::F32)?;
    ctx.manifest.output(&a.out);
    ctx.manifest.write(&manifest_beside(&a.out))
}

fn segment(a: SegmentArgs, mut ctx: Ctx) -> Result<()> {
    let p = a.seg.params()?;
    let prob = read_ovf(&a.prob)?;
    ctx.manifest.input(&a.prob)?;
    let vol = Prepared::load(&a.volume, false, &mut ctx.manifest)?;
    ensure!(
        prob.slices() == vol.roi.slices(),
        "{} has {} slices, ROI has {}",
        a.prob.display(),
        prob.slices(),
        vol.roi.slices()
    );
    let pairs: Vec<(Image2D, Image2D)> = prob.slice_images().into_iter().zip(vol.images()).collect();
    let masks = par_map(&pairs, ctx.jobs, |_, (pr, roi)| segment_slice(pr, roi, &p))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let spacing = vol.roi.spacing();
    write_ovf(&a.out, &Volume::from_masks(&masks, spacing)?, Dtype::U8)?;
    ctx.manifest.output(&a.out);
    if let Some(d) = &a.detected {
        let det: Vec<Mask2D> = pairs.iter().map(|(pr, _)| upsample_mask(&threshold_map(pr, p.threshold))).collect();
        write_ovf(d, &Volume::from_masks(&det, spacing)?, Dtype::U8)?;
        ctx.manifest.output(d);
    }
    ctx.manifest.write(&manifest_beside(&a.out))
}

fn eval(a: EvalArgs, mut ctx: Ctx) -> Result<()> {
    ensure!(a.gt.len() == a.pred.len(), "{} truth volumes for {} predictions", a.gt.len(), a.pred.len());
    ensure!(
        a.gt2.is_empty() || a.gt2.len() == a.pred.len(),
        "{} second-grader volumes for {} predictions",
        a.gt2.len(),
        a.pred.len()
    );
    let mode = match a.mode {
        ModeArg::Unmasked => EvalMode::Unmasked,
        ModeArg::Masked => EvalMode::Masked { radius_mm: a.radius },
    };
    let mut report = EvalReport::new(mode, a.combiner);
    for (i, pred_path) in a.pred.iter().enumerate() {
        let pred = read_ovf(pred_path)?;
        let g1 = read_ovf(&a.gt[i])?;
        ctx.manifest.input(pred_path)?;
        ctx.manifest.input(&a.gt[i])?;
        let g1m = g1.slice_masks();
        let truth = match a.gt2.get(i) {
            Some(p) => {
                let g2 = read_ovf(p)?;
                ctx.manifest.input(p)?;
                g1m.iter()
                    .zip(g2.slice_masks())
                    .map(|(x, y)| combine_graders(x, &y, a.combiner))
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => g1m,
        };
        let scores = score_roi(&pred.slice_masks(), &truth, g1.spacing(), mode)?;
        report.push(stem(pred_path), scores);
    }
    let table = report.render();
    match &a.out {
        Some(p) => {
            write_text(p, &table)?;
            ctx.manifest.output(p);
            ctx.manifest.write(&manifest_beside(p))
        }
        None => {
            print!("{table}");
            ctx.manifest.write(&stdout_manifest(&ctx.manifest))
        }
    }
}

struct Scored {
    dice: f64,
    jaccard: f64,
}

fn score_masks(pred: &[Mask2D], vol: &Prepared) -> Result<Scored> {
    let gt = vol.gt_masks().ok_or_else(|| anyhow!("{}: no truth loaded", vol.id))?;
    let s = score_roi(pred, &gt, vol.roi.spacing(), EvalMode::Unmasked)?;
    Ok(Scored {
        dice: s.dice,
        jaccard: s.jaccard,
    })
}

/// Pre- and post-clustering scores of one volume.
fn score_stages(probs: &[Image2D], vol: &Prepared, p: &SegParams) -> Result<(Scored, Scored)> {
    let detected: Vec<Mask2D> = probs.iter().map(|pr| upsample_mask(&threshold_map(pr, p.threshold))).collect();
    let clustered = probs
        .iter()
        .zip(vol.images())
        .map(|(pr, roi)| segment_slice(pr, &roi, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((score_masks(&detected, vol)?, score_masks(&clustered, vol)?))
}

fn is_unimodal(v: &[f64]) -> bool {
    let peak = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    v[..=peak].windows(2).all(|w| w[0] <= w[1]) && v[peak..].windows(2).all(|w| w[0] >= w[1])
}

fn sweep(a: SweepArgs, mut ctx: Ctx) -> Result<()> {
    let seg = a.seg.params()?;
    let base_gmp = a.gmp.params()?;
    ctx.manifest.seed = Some(a.train.seed);
    let tests = a
        .test
        .iter()
        .map(|p| Prepared::load(p, true, &mut ctx.manifest))
        .collect::<Result<Vec<_>>>()?;
    let mut table = String::new();
    match a.kind {
        SweepKind::Threshold => {
            let ck = a.checkpoint.as_ref().ok_or_else(|| anyhow!("threshold sweep needs --checkpoint"))?;
            let net = load_net(ck, &base_gmp, &mut ctx.manifest)?;
            let probs = tests
                .iter()
                .map(|v| probabilities(&net, v, &base_gmp, ctx.jobs))
                .collect::<Result<Vec<_>>>()?;
            table.push_str("threshold\tDC_pre\tJI_pre\tDC_post\tJI_post\n");
            let mut post_dc = Vec::new();
            for &t in &a.grid {
                let p = SegParams { threshold: t, ..seg };
                p.validate()?;
                let (mut dp, mut jp, mut dc, mut jc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for (pr, v) in probs.iter().zip(&tests) {
                    let (pre, post) = score_stages(pr, v, &p)?;
                    dp.push(pre.dice);
                    jp.push(pre.jaccard);
                    dc.push(post.dice);
                    jc.push(post.jaccard);
                }
                let m = |x: &[f64]| mean_std(x).0;
                let _ = writeln!(table, "{t}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", m(&dp), m(&jp), m(&dc), m(&jc));
                post_dc.push(m(&dc));
            }
            let shape = if is_unimodal(&post_dc) { "unimodal" } else { "not unimodal" };
            eprintln!("post-clustering DC over the threshold grid is {shape}");
        }
        SweepKind::K | SweepKind::N => {
            let dir = a
                .checkpoint_dir
                .as_ref()
                .ok_or_else(|| anyhow!("K and N sweeps need --checkpoint-dir"))?;
            let tag = if a.kind == SweepKind::K { "k" } else { "n" };
            let _ = writeln!(table, "{}\tDC\tDC_std\tJI", tag.to_uppercase());
            for &g in &a.grid {
                ensure!(g >= 0.0 && g.fract() == 0.0, "grid value {g} is not a whole number");
                let v = g as usize;
                let mut gmp = base_gmp;
                if a.kind == SweepKind::K {
                    gmp.k = v;
                } else {
                    gmp.n = v;
                }
                gmp.validate()?;
                let ck = dir.join(format!("{tag}{v}.gmpc"));
                let net = if ck.exists() {
                    load_net(&ck, &gmp, &mut ctx.manifest)?
                } else if !a.train_volume.is_empty() {
                    create_dir(dir)?;
                    eprintln!("training {}", ck.display());
                    let samples = load_samples(&a.train_volume, &gmp, &mut ctx)?;
                    let net = fit(&samples, &gmp, &a.train, &ck)?;
                    ctx.manifest.output(&ck);
                    net
                } else {
                    bail!("missing checkpoint {}", ck.display());
                };
                let (mut dc, mut jc) = (Vec::new(), Vec::new());
                for v in &tests {
                    let probs = probabilities(&net, v, &gmp, ctx.jobs)?;
                    let (_, post) = score_stages(&probs, v, &seg)?;
                    dc.push(post.dice);
                    jc.push(post.jaccard);
                }
                let (d, ds) = mean_std(&dc);
                let _ = writeln!(table, "{v}\t{d:.4}\t{ds:.4}\t{:.4}", mean_std(&jc).0);
            }
        }
    }
    match &a.out {
        Some(p) => {
            write_text(p, &table)?;
            ctx.manifest.output(p);
            ctx.manifest.write(&manifest_beside(p))
        }
        None => {
            print!("{table}");
            ctx.manifest.write(&stdout_manifest(&ctx.manifest))
        }
    }
}

fn export(a: ExportArgs, mut ctx: Ctx) -> Result<()> {
    let vol = read_ovf(&a.input)?;
    ctx.manifest.input(&a.input)?;
    create_dir(&a.out_dir)?;
    let lo = a.lo.unwrap_or_else(|| vol.data().iter().copied().fold(f32::INFINITY, f32::min));
    let mut hi = a.hi.unwrap_or_else(|| vol.data().iter().copied().fold(f32::NEG_INFINITY, f32::max));
    if a.hi.is_none() && hi <= lo {
        hi = lo + 1.0;
    }
    let name = stem(&a.input);
    for z in 0..vol.slices() {
        let p = a.out_dir.join(format!("{name}_{z:03}.pgm"));
        std::fs::write(&p, export_pgm(&vol.slice(z), lo, hi)?).with_context(|| format!("writing {}", p.display()))?;
        ctx.manifest.output(&p);
    }
    ctx.manifest.write(&a.out_dir.join("export.manifest"))
}

#[cfg(test)]
mod tests {
    use super::is_unimodal;

    #[test]
    fn unimodal_shapes() {
        assert!(is_unimodal(&[0.1, 0.4, 0.6, 0.5, 0.2]));
        assert!(is_unimodal(&[0.3, 0.3, 0.2]));
        assert!(!is_unimodal(&[0.5, 0.1, 0.6, 0.2]));
    }
}
