//! Seeded synthetic data: videos of a moving foreground shape among
//! intermittent distractors, single-image scenes for the static head, and
//! co-segmentation groups sharing one shape class.

mod pnm;
mod raster;
mod sample;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Frame;
use crate::error::{Error, Result};
use crate::head::Mask;

pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_frame, read_mask, write_frame, write_mask};
pub use raster::{Shape, ShapeClass};
pub use sample::{downsample_mask, sample_clip_indices, sample_training_clip, segments};

/// Smallest foreground area as a fraction of the canvas.
pub const MIN_FOREGROUND: f64 = 0.02;
/// Largest per-step translation as a fraction of the canvas side.
pub const MAX_STEP: f64 = 0.15;
pub const SCALE_RANGE: (f64, f64) = (0.7, 1.3);
/// Per-frame probability that a distractor is visible.
const DISTRACTOR_RATE: f64 = 0.35;

/// Independent RNG seed for item `id` of stream `tag`.
pub fn stream_seed(seed: u64, tag: u64, id: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ tag) ^ id)
}

const TAG_VIDEO: u64 = 1;
const TAG_STATIC: u64 = 2;
const TAG_COSEG: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoSpec {
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub class: ShapeClass,
    /// Upper bound on distractors; the actual count is drawn from `1..=max`.
    pub max_distractors: usize,
    /// Amplitude of the uniform background noise.
    pub noise: f64,
    pub seed: u64,
}

/// Frames with their ground-truth masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub class: ShapeClass,
    pub frames: Vec<Frame>,
    pub masks: Vec<Mask>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

type Rgb = [f64; 3];

struct Background {
    from: Rgb,
    to: Rgb,
    dir: (f64, f64),
    noise: f64,
}

impl Background {
    fn random(rng: &mut ChaCha8Rng, noise: f64) -> Self {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Background {
            from: muted_rgb(rng),
            to: muted_rgb(rng),
            dir: (angle.cos(), angle.sin()),
            noise,
        }
    }
}

/// Low-saturation colour: a grey level with a small tint.
fn muted_rgb(rng: &mut ChaCha8Rng) -> Rgb {
    let grey = rng.gen_range(0.2..0.8);
    std::array::from_fn(|_| grey + rng.gen_range(-0.08..0.08))
}

/// Saturated colour of random hue.
fn vivid_rgb(rng: &mut ChaCha8Rng) -> Rgb {
    let hue: f64 = rng.gen_range(0.0..6.0);
    let sat = rng.gen_range(0.7..1.0);
    let val = rng.gen_range(0.6..1.0);
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c| val * (1.0 - sat * (1.0 - c)))
}

/// Paints the background and `layers` (back to front) and returns the frame
/// plus the coverage of the last layer.
fn render(w: usize, h: usize, bg: &Background, layers: &[(Shape, Rgb)], rng: &mut ChaCha8Rng) -> Result<(Frame, Mask)> {
    let span = (w as f64).hypot(h as f64);
    let mut px = Vec::with_capacity(w * h * 3);
    let mut fg = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (0.5 + ((fx - w as f64 / 2.0) * bg.dir.0 + (fy - h as f64 / 2.0) * bg.dir.1) / span).clamp(0.0, 1.0);
            let mut rgb: Rgb = std::array::from_fn(|c| bg.from[c] + (bg.to[c] - bg.from[c]) * t);
            let mut top = false;
            for (i, (shape, color)) in layers.iter().enumerate() {
                let inside = shape.contains(fx, fy);
                if inside {
                    rgb = *color;
                }
                top = inside && i + 1 == layers.len();
            }
            fg.push(top);
            for v in rgb {
                let n = if bg.noise > 0.0 { rng.gen_range(-bg.noise..=bg.noise) } else { 0.0 };
                // Stored at 8-bit precision so that a frame survives a file
                // round trip unchanged.
                px.push(((v + n).clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
    }
    Ok((Frame::new(h, w, px)?, Mask::from_bools(h, w, &fg)?))
}

fn coverage(shape: &Shape, w: usize, h: usize) -> usize {
    shape.rasterize(w, h).into_iter().filter(|&b| b).count()
}

/// Grows `shape` and pulls it towards the centre until it covers the
/// minimum foreground area.
fn ensure_area(shape: &mut Shape, w: usize, h: usize) -> Result<()> {
    let need = (MIN_FOREGROUND * (w * h) as f64).ceil() as usize;
    for _ in 0..200 {
        if coverage(shape, w, h) >= need.max(1) {
            return Ok(());
        }
        shape.radius *= 1.05;
        shape.cx += 0.1 * (w as f64 / 2.0 - shape.cx);
        shape.cy += 0.1 * (h as f64 / 2.0 - shape.cy);
    }
    Err(Error::Config(format!("canvas {w}x{h} too small for a visible foreground")))
}

/// A shape moving with constant velocity plus jitter, bouncing off the
/// canvas border, with a bounded random walk on its scale.
struct Track {
    base: Shape,
    vx: f64,
    vy: f64,
    scale: f64,
}

impl Track {
    fn random(rng: &mut ChaCha8Rng, class: ShapeClass, w: usize, h: usize, radius_frac: (f64, f64)) -> Self {
        let side = w.min(h) as f64;
        let radius = rng.gen_range(radius_frac.0..radius_frac.1) * side;
        let margin = |n: usize| (radius.min(n as f64 / 2.0 - 1.0)).max(0.0);
        let speed = rng.gen_range(0.02..0.06) * side;
        let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Track {
            base: Shape {
                class,
                cx: rng.gen_range(margin(w)..=w as f64 - margin(w)),
                cy: rng.gen_range(margin(h)..=h as f64 - margin(h)),
                radius,
                aspect: rng.gen_range(0.75..1.33),
                angle: rng.gen_range(0.0..std::f64::consts::TAU),
            },
            vx: speed * heading.cos(),
            vy: speed * heading.sin(),
            scale: 1.0,
        }
    }

    fn shape(&self) -> Shape {
        Shape {
            radius: self.base.radius * self.scale,
            ..self.base
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, w: usize, h: usize) {
        let side = w.min(h) as f64;
        let jitter = 0.02 * side;
        let mut dx = self.vx + rng.gen_range(-jitter..=jitter);
        let mut dy = self.vy + rng.gen_range(-jitter..=jitter);
        let len = dx.hypot(dy);
        let cap = MAX_STEP * side;
        if len > cap {
            dx *= cap / len;
            dy *= cap / len;
        }
        let r = self.base.radius * self.scale * 0.5;
        let bounce = |c: &mut f64, v: &mut f64, d: f64, n: usize| {
            let (lo, hi) = (r.min(n as f64 / 2.0), (n as f64 - r).max(n as f64 / 2.0));
            *c += d;
            if *c < lo || *c > hi {
                *v = -*v;
                *c = c.clamp(lo, hi);
            }
        };
        bounce(&mut self.base.cx, &mut self.vx, dx, w);
        bounce(&mut self.base.cy, &mut self.vy, dy, h);
        self.scale = (self.scale * rng.gen_range(0.92..1.08)).clamp(SCALE_RANGE.0, SCALE_RANGE.1);
        self.base.angle += rng.gen_range(-0.15..0.15);
    }
}

fn other_class(rng: &mut ChaCha8Rng, class: ShapeClass) -> ShapeClass {
    let others: Vec<ShapeClass> = ShapeClass::ALL.into_iter().filter(|&c| c != class).collect();
    *others.choose(rng).expect("three classes")
}

/// Frame indices where a distractor is visible: a random strict, nonempty
/// subset (empty for single-frame videos).
fn presence(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut on: Vec<bool> = (0..n).map(|_| rng.gen_bool(DISTRACTOR_RATE)).collect();
    if n < 2 {
        return vec![false; n];
    }
    if on.iter().all(|&b| b) {
        on[rng.gen_range(0..n)] = false;
    }
    if on.iter().all(|&b| !b) {
        on[rng.gen_range(0..n)] = true;
    }
    on
}

pub fn generate_video(spec: &VideoSpec) -> Result<Video> {
    Ok(generate_video_traced(spec)?.0)
}

/// The video plus the foreground shape drawn in each frame.
fn generate_video_traced(spec: &VideoSpec) -> Result<(Video, Vec<Shape>)> {
    let (w, h, n) = (spec.width, spec.height, spec.num_frames);
    if n == 0 || w == 0 || h == 0 {
        return Err(Error::Config("video needs at least one frame and a nonempty canvas".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = Background::random(&mut rng, spec.noise);
    let fg_color = vivid_rgb(&mut rng);
    let mut main = Track::random(&mut rng, spec.class, w, h, (0.14, 0.22));
    let count = if spec.max_distractors == 0 { 0 } else { rng.gen_range(1..=spec.max_distractors) };
    let mut distractors: Vec<(Track, Rgb, Vec<bool>)> = (0..count)
        .map(|_| {
            let class = other_class(&mut rng, spec.class);
            let color = vivid_rgb(&mut rng);
            let track = Track::random(&mut rng, class, w, h, (0.07, 0.11));
            (track, color, presence(&mut rng, n))
        })
        .collect();

    let mut video = Video {
        class: spec.class,
        frames: Vec::with_capacity(n),
        masks: Vec::with_capacity(n),
    };
    let mut shapes = Vec::with_capacity(n);
    for t in 0..n {
        if t > 0 {
            main.step(&mut rng, w, h);
            for (track, _, _) in &mut distractors {
                track.step(&mut rng, w, h);
            }
        }
        let mut fg = main.shape();
        ensure_area(&mut fg, w, h)?;
        let mut layers: Vec<(Shape, Rgb)> = distractors
            .iter()
            .filter(|(_, _, on)| on[t])
            .map(|(track, color, _)| (track.shape(), *color))
            .collect();
        layers.push((fg, fg_color));
        let (frame, mask) = render(w, h, &bg, &layers, &mut rng)?;
        video.frames.push(frame);
        video.masks.push(mask);
        shapes.push(fg);
    }
    Ok((video, shapes))
}

/// A single image with a foreground of `class` over clutter made of up to
/// two smaller shapes of other classes.
pub fn generate_scene(width: usize, height: usize, class: ShapeClass, noise: f64, seed: u64) -> Result<(Frame, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = Background::random(&mut rng, noise);
    let fg_color = vivid_rgb(&mut rng);
    let mut fg = Track::random(&mut rng, class, width, height, (0.14, 0.22)).shape();
    fg.radius *= rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    ensure_area(&mut fg, width, height)?;
    let clutter = rng.gen_range(0..=2);
    let mut layers: Vec<(Shape, Rgb)> = (0..clutter)
        .map(|_| {
            let c = other_class(&mut rng, class);
            let color = vivid_rgb(&mut rng);
            (Track::random(&mut rng, c, width, height, (0.07, 0.11)).shape(), color)
        })
        .collect();
    layers.push((fg, fg_color));
    render(width, height, &bg, &layers, &mut rng)
}

/// Training scene number `index` for the static iterations.
pub fn static_scene(width: usize, height: usize, noise: f64, seed: u64, index: u64) -> Result<(Frame, Mask)> {
    let s = stream_seed(seed, TAG_STATIC, index);
    let class = ShapeClass::ALL[(s % 3) as usize];
    generate_scene(width, height, class, noise, s)
}

/// `n` scenes sharing the foreground class, each on its own background.
pub fn generate_coseg_group(width: usize, height: usize, class: ShapeClass, n: usize, noise: f64, seed: u64) -> Result<Video> {
    let mut group = Video {
        class,
        frames: Vec::with_capacity(n),
        masks: Vec::with_capacity(n),
    };
    for k in 0..n {
        let (f, m) = generate_scene(width, height, class, noise, stream_seed(seed, TAG_COSEG, k as u64))?;
        group.frames.push(f);
        group.masks.push(m);
    }
    Ok(group)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    /// Square canvas side in pixels.
    pub canvas: usize,
    pub frames_per_video: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Images per co-segmentation group; one group per shape class. Zero
    /// skips co-segmentation data.
    pub coseg_images: usize,
    pub max_distractors: usize,
    pub noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            canvas: 64,
            frames_per_video: 24,
            train_videos: 20,
            test_videos: 5,
            coseg_images: 40,
            max_distractors: 2,
            noise: 0.06,
        }
    }
}

impl DatasetSpec {
    /// Specification of video `id` (train ids first, then test ids).
    pub fn video(&self, id: usize, seed: u64) -> VideoSpec {
        VideoSpec {
            num_frames: self.frames_per_video,
            width: self.canvas,
            height: self.canvas,
            class: ShapeClass::ALL[id % 3],
            max_distractors: self.max_distractors,
            noise: self.noise,
            seed: stream_seed(seed, TAG_VIDEO, id as u64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Co-segmentation groups.
    Coseg,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Coseg => "coseg",
        }
    }

    fn item_prefix(self) -> &'static str {
        match self {
            Split::Coseg => "group",
            _ => "video",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Split::Train, Split::Val, Split::Test, Split::Coseg]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub id: usize,
    pub num_frames: usize,
    pub class: ShapeClass,
}

impl ManifestEntry {
    /// Directory of this entry relative to the dataset root.
    pub fn dir(&self) -> PathBuf {
        Path::new(self.split.name()).join(format!("{}_{:04}", self.split.item_prefix(), self.id))
    }
}

pub fn frame_file(k: usize) -> String {
    format!("frame_{k:04}.ppm")
}

pub fn mask_file(k: usize) -> String {
    format!("mask_{k:04}.pgm")
}

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\n", e.split, e.id, e.num_frames, e.class))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| Error::Format {
                kind: "manifest",
                position: at,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [split, id, n, class] = fields[..] else {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            entries.push(ManifestEntry {
                split: split.parse().map_err(|e: Error| bad(e.to_string()))?,
                id: id.parse().map_err(|_| bad(format!("bad id {id:?}")))?,
                num_frames: n.parse().map_err(|_| bad(format!("bad frame count {n:?}")))?,
                class: class.parse().map_err(|e: Error| bad(e.to_string()))?,
            });
        }
        Ok(Manifest { entries })
    }

    /// Reads `root/manifest.txt` and checks that every referenced file exists.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.clone()),
            _ => Error::io(&path, e),
        })?;
        let m = Self::parse(&text)?;
        for e in &m.entries {
            let dir = root.join(e.dir());
            for k in 0..e.num_frames {
                for f in [dir.join(frame_file(k)), dir.join(mask_file(k))] {
                    if !f.is_file() {
                        return Err(Error::Missing(f));
                    }
                }
            }
            if dir.join(frame_file(e.num_frames)).exists() {
                return Err(Error::Config(format!(
                    "{} holds more than the {} frames listed in the manifest",
                    dir.display(),
                    e.num_frames
                )));
            }
        }
        Ok(m)
    }
}

pub fn write_video(dir: &Path, video: &Video) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, (f, m)) in video.frames.iter().zip(&video.masks).enumerate() {
        write_frame(&dir.join(frame_file(k)), f)?;
        write_mask(&dir.join(mask_file(k)), m)?;
    }
    Ok(())
}

/// Reads the frames of `dir` (`frame_0000.ppm`, ... until the first gap).
pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    if !dir.is_dir() {
        return Err(Error::Missing(dir.to_path_buf()));
    }
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_file(frames.len()));
        if !p.is_file() {
            break;
        }
        frames.push(read_frame(&p)?);
    }
    Ok(frames)
}

pub fn load_video(root: &Path, entry: &ManifestEntry) -> Result<Video> {
    let dir = root.join(entry.dir());
    let mut video = Video {
        class: entry.class,
        frames: Vec::with_capacity(entry.num_frames),
        masks: Vec::with_capacity(entry.num_frames),
    };
    for k in 0..entry.num_frames {
        video.frames.push(read_frame(&dir.join(frame_file(k)))?);
        video.masks.push(read_mask(&dir.join(mask_file(k)))?);
    }
    Ok(video)
}

/// Writes train and test videos plus co-segmentation groups under `out`
/// and returns the manifest (also written to `out/manifest.txt`).
pub fn generate_dataset(spec: &DatasetSpec, seed: u64, out: &Path) -> Result<Manifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = Manifest::default();
    let splits = [(Split::Train, 0..spec.train_videos), (Split::Test, spec.train_videos..spec.train_videos + spec.test_videos)];
    for (split, ids) in splits {
        for id in ids {
            let vs = spec.video(id, seed);
            let entry = ManifestEntry {
                split,
                id,
                num_frames: vs.num_frames,
                class: vs.class,
            };
            write_video(&out.join(entry.dir()), &generate_video(&vs)?)?;
            manifest.entries.push(entry);
        }
    }
    if spec.coseg_images > 0 {
        for (id, class) in ShapeClass::ALL.into_iter().enumerate() {
            let group = generate_coseg_group(
                spec.canvas,
                spec.canvas,
                class,
                spec.coseg_images,
                spec.noise,
                stream_seed(seed, TAG_COSEG, 1 << 32 | id as u64),
            )?;
            let entry = ManifestEntry {
                split: Split::Coseg,
                id,
                num_frames: group.len(),
                class,
            };
            write_video(&out.join(entry.dir()), &group)?;
            manifest.entries.push(entry);
        }
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
