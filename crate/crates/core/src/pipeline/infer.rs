//! Test-time inference for videos and co-segmentation groups, and dataset
//! evaluation.

use std::path::Path;

use crate::encoder::Frame;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::head::Mask;
use crate::model::Model;
use crate::synth::{load_video, mask_file, read_mask, Manifest, ManifestEntry, Split};

use super::metrics::{boundary_f, default_tolerance, region_similarity};
use super::schedule::{iocs_groups, InferenceSchedule};

fn full_resolution(model: &Model, m: &Mask) -> Result<Mask> {
    m.upsample(model.config.encoder.downsample)
}

/// One full-resolution probability mask per frame, in frame order. Each
/// interleaved subset of the schedule runs as its own graph.
pub fn infer_video(model: &Model, frames: &[Frame], n_prime: usize) -> Result<Vec<Mask>> {
    let schedule = InferenceSchedule::new(frames.len(), n_prime)?;
    let mut out: Vec<Option<Mask>> = vec![None; frames.len()];
    for subset in schedule.subsets() {
        let group: Vec<&Frame> = subset.iter().map(|&i| &frames[i]).collect();
        for (&i, m) in subset.iter().zip(model.predict_graph(&group)?) {
            out[i] = Some(full_resolution(model, &m)?);
        }
    }
    Ok(out.into_iter().map(|m| m.expect("schedule is a partition")).collect())
}

/// Co-segmentation of image `target` given precomputed embeddings of the
/// whole group. The target's state is carried from one group graph to the
/// next; nodes keep their dataset order within each graph.
pub fn iocs_from_embeddings(model: &Model, embeddings: &[Tensor], target: usize, n_prime: usize) -> Result<Mask> {
    let groups = iocs_groups(embeddings.len(), target, n_prime)?;
    let mut state = embeddings[target].clone();
    if groups.is_empty() {
        let (_, masks) = model.run_nodes(&[&state], &[&embeddings[target]])?;
        return full_resolution(model, &masks[0]);
    }
    let mut last = None;
    for group in &groups {
        let mut nodes = group.clone();
        nodes.push(target);
        nodes.sort_unstable();
        let pos = nodes.iter().position(|&i| i == target).expect("target inserted");
        let states: Vec<&Tensor> = nodes.iter().map(|&i| if i == target { &state } else { &embeddings[i] }).collect();
        let embeds: Vec<&Tensor> = nodes.iter().map(|&i| &embeddings[i]).collect();
        let (mut finals, mut masks) = model.run_nodes(&states, &embeds)?;
        state = finals.swap_remove(pos);
        last = Some(masks.swap_remove(pos));
    }
    full_resolution(model, &last.expect("at least one group"))
}

pub fn iocs_infer(model: &Model, images: &[Frame], target: usize, n_prime: usize) -> Result<Mask> {
    if target >= images.len() {
        return Err(Error::Config(format!("target {target} out of range for {} images", images.len())));
    }
    let embeddings = images.iter().map(|f| model.embed(f)).collect::<Result<Vec<_>>>()?;
    iocs_from_embeddings(model, &embeddings, target, n_prime)
}

/// Co-segments every image of a group, encoding each image once.
pub fn iocs_infer_all(model: &Model, images: &[Frame], n_prime: usize) -> Result<Vec<Mask>> {
    let embeddings = images.iter().map(|f| model.embed(f)).collect::<Result<Vec<_>>>()?;
    (0..images.len())
        .map(|t| iocs_from_embeddings(model, &embeddings, t, n_prime))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoScore {
    pub id: usize,
    pub frames: usize,
    /// Mean region similarity over the frames.
    pub j: f64,
    /// Mean boundary F over the frames.
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub videos: Vec<VideoScore>,
    /// Means of the per-video values.
    pub mean_j: f64,
    pub mean_f: f64,
}

impl EvalReport {
    pub fn from_videos(videos: Vec<VideoScore>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Config("nothing to evaluate".into()));
        }
        let n = videos.len() as f64;
        Ok(EvalReport {
            mean_j: videos.iter().map(|v| v.j).sum::<f64>() / n,
            mean_f: videos.iter().map(|v| v.f).sum::<f64>() / n,
            videos,
        })
    }

    /// `video,j,f` rows with a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("video,j,f\n");
        for v in &self.videos {
            s.push_str(&format!("{},{:.6},{:.6}\n", v.id, v.j, v.f));
        }
        s.push_str(&format!("mean,{:.6},{:.6}\n", self.mean_j, self.mean_f));
        s
    }
}

/// Mean J and F of `preds` against `gts` at ground-truth resolution.
pub fn score_frames(id: usize, preds: &[Mask], gts: &[Mask]) -> Result<VideoScore> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(Error::shape(
            "score",
            format!("{} predictions for {} ground-truth masks", preds.len(), gts.len()),
        ));
    }
    let (mut j, mut f) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        j += region_similarity(p, g)?;
        f += boundary_f(p, g, default_tolerance(g.height(), g.width()))?;
    }
    let n = gts.len() as f64;
    Ok(VideoScore {
        id,
        frames: gts.len(),
        j: j / n,
        f: f / n,
    })
}

fn split_entries<'a>(root: &Path, manifest: &'a Manifest, split: Split) -> Result<Vec<&'a ManifestEntry>> {
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::Missing(root.join(split.name())));
    }
    Ok(entries)
}

/// Runs `infer_video` on every video of `split` and scores it.
pub fn evaluate(root: &Path, manifest: &Manifest, split: Split, model: &Model, n_prime: usize) -> Result<EvalReport> {
    let mut scores = Vec::new();
    for e in split_entries(root, manifest, split)? {
        let video = load_video(root, e)?;
        let preds = infer_video(model, &video.frames, n_prime)?;
        scores.push(score_frames(e.id, &preds, &video.masks)?);
    }
    EvalReport::from_videos(scores)
}

/// Scores mask files laid out like the dataset under `predictions`.
pub fn evaluate_predictions(root: &Path, manifest: &Manifest, split: Split, predictions: &Path) -> Result<EvalReport> {
    let mut scores = Vec::new();
    for e in split_entries(root, manifest, split)? {
        let video = load_video(root, e)?;
        let dir = predictions.join(e.dir());
        let preds = (0..e.num_frames)
            .map(|k| read_mask(&dir.join(mask_file(k))))
            .collect::<Result<Vec<_>>>()?;
        scores.push(score_frames(e.id, &preds, &video.masks)?);
    }
    EvalReport::from_videos(scores)
}
