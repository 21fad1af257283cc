use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ddcrp_core::error::Error;
use ddcrp_core::eval::{curves_to_csv, curves_to_svg, evaluate_sequence, load_ground_truth, BBox};
use ddcrp_core::image::{build_graph, load_image, load_label_map};
use ddcrp_core::pipeline;
use ddcrp_core::proposals::{read_proposals, write_proposals};
use ddcrp_core::rank::{fit_scoring_model, rank_proposals, read_ranked, write_ranked, RankKey};
use ddcrp_core::sampler::write_run_log;
use ddcrp_core::{PipelineConfig, ScoringModel};
use log::{info, warn};
use serde::Deserialize;

use crate::Common;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Numerical(_)) => 3,
        Some(
            Error::Unreadable { .. }
            | Error::Io(_)
            | Error::UnsupportedFormat(_)
            | Error::ZeroDimension { .. }
            | Error::Malformed(_),
        ) => 1,
        Some(_) => 2,
        None if e.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

/// The error chain joined onto a single line.
pub fn one_line(e: &anyhow::Error) -> String {
    let parts: Vec<String> = e.chain().map(|c| c.to_string().replace('\n', " ")).collect();
    parts.join(": ")
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    Ok(match common.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open_file(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::Unreadable { path: path.into(), reason: e.to_string() })?;
    Ok(BufReader::new(f))
}

pub fn print_config() -> Result<()> {
    println!("{}", PipelineConfig::default().to_json());
    Ok(())
}

pub fn segment(image: &Path, common: &Common, out: &Path) -> Result<()> {
    let config = load_config(common)?;
    let img = load_image(image)?;
    let labels = pipeline::superpixels(&img, None, &config)?;
    create_dir(out)?;
    labels.save(&out.join("labels.png"))?;
    info!("{} superpixels", labels.n_superpixels());
    Ok(())
}

pub fn sample(image: &Path, labels: Option<&Path>, common: &Common, out: &Path) -> Result<()> {
    let run = run_pipeline(image, labels, common)?;
    create_dir(out)?;
    run.label_map.save(&out.join("labels.png"))?;
    let mut log = create_file(&out.join("run.log"))?;
    write_run_log(&run.samples, &mut log)?;
    log.flush()?;
    Ok(())
}

pub fn propose(image: &Path, labels: Option<&Path>, common: &Common, out: &Path) -> Result<()> {
    let run = run_pipeline(image, labels, common)?;
    create_dir(out)?;
    run.label_map.save(&out.join("labels.png"))?;
    let mut log = create_file(&out.join("run.log"))?;
    write_run_log(&run.samples, &mut log)?;
    log.flush()?;
    let mut f = create_file(&out.join("proposals.jsonl"))?;
    write_proposals(&run.proposals, &mut f)?;
    f.flush()?;
    info!("{} proposals", run.proposals.len());
    Ok(())
}

fn run_pipeline(image: &Path, labels: Option<&Path>, common: &Common) -> Result<pipeline::ProposalRun> {
    let config = load_config(common)?;
    let img = load_image(image)?;
    let labels = labels.map(load_label_map).transpose()?;
    let run = pipeline::propose(&img, labels, &config)?;
    info!(
        "{} superpixels, {} samples, {} proposals after size filtering",
        run.graph.n(),
        run.samples.len(),
        run.proposals.len()
    );
    Ok(run)
}

pub struct RankFlags {
    pub weighted: Option<bool>,
    pub nms: Option<bool>,
    pub top_k: Option<usize>,
}

pub fn rank(
    proposals: &Path,
    labels: &Path,
    image: Option<&Path>,
    scorer: Option<&Path>,
    common: &Common,
    flags: RankFlags,
    out: &Path,
) -> Result<()> {
    let mut config = load_config(common)?;
    if let Some(w) = flags.weighted {
        config.ranking.use_weighted = w;
    }
    if let Some(n) = flags.nms {
        config.ranking.nms = n;
    }
    if let Some(k) = flags.top_k {
        config.ranking.top_k = k;
    }
    config.validate()?;
    let scorer_path = scorer
        .map(Path::to_path_buf)
        .or_else(|| config.ranking.scorer.clone())
        .ok_or_else(|| Error::InvalidParameter("no scoring model: pass --scorer or set ranking.scorer".into()))?;
    let model = ScoringModel::load(&scorer_path)?;

    let label_map = load_label_map(labels)?;
    if let Some(image) = image {
        label_map.check_dims(&load_image(image)?)?;
    }
    let graph = build_graph(&label_map);
    let proposals = read_proposals(open_file(proposals)?)?;
    let ranked = rank_proposals(&proposals, &graph, &model, config.rank_options())?;
    let mut f = create_file(out)?;
    write_ranked(&ranked, &mut f)?;
    f.flush()?;
    let key = if config.ranking.use_weighted { RankKey::Weighted } else { RankKey::Plain };
    info!("kept {} of {} proposals, ranked by {key:?} score", ranked.len(), proposals.len());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    frame_id: String,
    image: PathBuf,
    labels: Option<PathBuf>,
    truth: PathBuf,
}

pub fn train_scorer(manifest: &Path, common: &Common, ridge: f64, out: &Path) -> Result<()> {
    let config = load_config(common)?;
    let text = fs::read_to_string(manifest)
        .map_err(|e| Error::Unreadable { path: manifest.into(), reason: e.to_string() })?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("manifest: {e}")))?;
    if entries.is_empty() {
        return Err(Error::InvalidParameter("manifest lists no frames".into()).into());
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for entry in &entries {
        let img = load_image(&base.join(&entry.image))?;
        let labels = entry.labels.as_ref().map(|l| load_label_map(&base.join(l))).transpose()?;
        let truth = load_ground_truth(&base.join(&entry.truth), &entry.frame_id)?;
        let run = pipeline::propose(&img, labels, &config)
            .with_context(|| format!("frame {}", entry.frame_id))?;
        let frame_pairs = pipeline::training_pairs(&run.proposals, &run.graph, &truth)?;
        info!("frame {}: {} training proposals", entry.frame_id, frame_pairs.len());
        pairs.extend(frame_pairs);
    }
    let model = fit_scoring_model(&pairs, ridge)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(out)?;
    info!("fitted on {} proposals from {} frames", pairs.len(), entries.len());
    Ok(())
}

/// Sorted `(stem, path)` pairs of files with the given extension.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let read = fs::read_dir(dir).map_err(|e| Error::Unreadable { path: dir.into(), reason: e.to_string() })?;
    let mut out = Vec::new();
    for entry in read {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn evaluate(ranked: &Path, truth: &Path, common: &Common, out: &Path, svg: bool) -> Result<()> {
    let config = load_config(common)?;
    let (iou_min, k_max) = (config.eval.iou_min, config.eval.k_max);
    let ranked_files = files_with_ext(ranked, "jsonl")?;
    if ranked_files.is_empty() {
        return Err(Error::Precondition(format!("no .jsonl files in {}", ranked.display())).into());
    }
    let mut truth_files = files_with_ext(truth, "png")?;
    truth_files.extend(files_with_ext(truth, "jsonl")?);
    truth_files.sort();

    let ranked_ids: Vec<&str> = ranked_files.iter().map(|(s, _)| s.as_str()).collect();
    let mut truth_ids: Vec<&str> = truth_files.iter().map(|(s, _)| s.as_str()).collect();
    truth_ids.dedup();
    if ranked_ids != truth_ids {
        let missing: Vec<&str> = ranked_ids.iter().filter(|id| !truth_ids.contains(id)).copied().collect();
        let extra: Vec<&str> = truth_ids.iter().filter(|id| !ranked_ids.contains(id)).copied().collect();
        return Err(Error::Precondition(format!(
            "frame ids differ between ranked and truth directories (no truth for {missing:?}, no ranking for {extra:?})"
        ))
        .into());
    }

    let mut frames = Vec::with_capacity(ranked_files.len());
    for (id, path) in &ranked_files {
        let proposals = read_ranked(open_file(path)?)?;
        if proposals.is_empty() {
            warn!("frame {id}: no ranked proposals");
        }
        let boxes: Vec<BBox> = proposals.iter().map(|r| r.bbox).collect();
        let truth_path = &truth_files.iter().find(|(s, _)| s == id).expect("ids checked").1;
        frames.push((boxes, load_ground_truth(truth_path, id)?));
    }

    let seq = evaluate_sequence(&frames, iou_min, k_max)?;
    create_dir(out)?;
    for f in &seq.frames {
        fs::write(out.join(format!("{}.csv", f.frame_id)), curves_to_csv(&f.curves))?;
    }
    fs::write(out.join("curves.csv"), curves_to_csv(&seq.aggregate))?;
    if svg {
        fs::write(out.join("curves.svg"), curves_to_svg(&seq.aggregate))?;
    }
    let summary = seq.summary(iou_min);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "frames {}  objects {}  AUC precision {:.4}  recall {:.4}  global recall {:.4}",
        summary.n_frames, summary.n_objects, summary.auc_precision, summary.auc_recall, summary.auc_global_recall
    );
    Ok(())
}
