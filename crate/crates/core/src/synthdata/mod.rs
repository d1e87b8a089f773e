//! Synthetic quad-modal sequences.
//!
//! Each sequence shows one striped rectangle moving in a straight line over a
//! static background, optionally with static distractors. Thermal frames are
//! rendered from per-object temperatures, event frames are thresholded
//! differences of consecutive RGB luminance, and a one-line sentence names the
//! target's colour, shape and direction. The scenarios degrade individual
//! modalities:
//!
//! * `overexposed-rgb`: saturated RGB with sparse dark sensor dots at the same
//!   density everywhere. Only the dots on the target change between frames, so
//!   one RGB frame carries no target cue while the event frames outline it. A
//!   static thermal twin of the target sits beside its path.
//! * `low-light`: RGB scaled almost to black plus small temporal noise, so no
//!   events fire.
//! * `similar-distractors`: static copies of the target, identical in RGB and
//!   thermal.
//! * `static-target`: nothing moves, every event frame is empty.

mod corpus;
mod io;
pub mod pnm;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use corpus::{make_corpus, read_manifest, CorpusSpec, Manifest};
pub use io::{read_sequence, write_sequence};
pub use pnm::{GrayImage, RgbImage};

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// Event raster value for "no change".
pub const EVENT_ZERO: u8 = 128;
pub const EVENT_POS: u8 = 255;
pub const EVENT_NEG: u8 = 0;

/// Attribute tags used by the benchmark this data mimics.
pub const KNOWN_TAGS: [&str; 21] = [
    "PO", "TO", "HO", "OV", "VC", "CM", "BC", "SA", "LI", "OE", "IV", "LR", "DEF", "TC", "FL", "FM", "NM", "MB", "SV",
    "ARC", "BOM",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Plain,
    OverexposedRgb,
    LowLight,
    SimilarDistractors,
    StaticTarget,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Plain,
        Scenario::OverexposedRgb,
        Scenario::LowLight,
        Scenario::SimilarDistractors,
        Scenario::StaticTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Plain => "plain",
            Scenario::OverexposedRgb => "overexposed-rgb",
            Scenario::LowLight => "low-light",
            Scenario::SimilarDistractors => "similar-distractors",
            Scenario::StaticTarget => "static-target",
        }
    }

    /// Attribute tag written to `attributes.txt`.
    pub fn tag(self) -> Option<&'static str> {
        match self {
            Scenario::Plain => None,
            Scenario::OverexposedRgb => Some("OE"),
            Scenario::LowLight => Some("LI"),
            Scenario::SimilarDistractors => Some("SA"),
            Scenario::StaticTarget => Some("NM"),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// Raster size, sequence length and event threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub event_threshold: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 128,
            height: 128,
            frames: 20,
            event_threshold: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub name: String,
    pub rgb: Vec<RgbImage>,
    pub thermal: Vec<GrayImage>,
    pub event: Vec<GrayImage>,
    pub gt: Vec<BBox>,
    pub language: String,
    pub attributes: Vec<String>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rgb[0].width
    }

    pub fn height(&self) -> usize {
        self.rgb[0].height
    }

    /// Structural checks shared by the generator and the reader.
    pub fn validate(&self) -> Result<()> {
        let n = self.gt.len();
        if n == 0 {
            return Err(Error::Data(format!("{}: no frames", self.name)));
        }
        if self.rgb.len() != n || self.thermal.len() != n || self.event.len() != n {
            return Err(Error::Data(format!(
                "{}: {} boxes but {}/{}/{} rgb/thermal/event frames",
                self.name,
                n,
                self.rgb.len(),
                self.thermal.len(),
                self.event.len()
            )));
        }
        let (w, h) = (self.rgb[0].width, self.rgb[0].height);
        let same = self.rgb.iter().all(|f| (f.width, f.height) == (w, h))
            && self.thermal.iter().all(|f| (f.width, f.height) == (w, h))
            && self.event.iter().all(|f| (f.width, f.height) == (w, h));
        if !same {
            return Err(Error::Input(format!("{}: modalities differ in resolution", self.name)));
        }
        Ok(())
    }
}

/// Polarity raster of `cur − prev` luminance, thresholded at `threshold`.
pub fn events_from_rgb(prev: &RgbImage, cur: &RgbImage, threshold: u8) -> GrayImage {
    let (a, b) = (prev.luma(), cur.luma());
    let data = a
        .iter()
        .zip(&b)
        .map(|(&p, &c)| {
            let d = c as i32 - p as i32;
            if d >= threshold as i32 {
                EVENT_POS
            } else if d <= -(threshold as i32) {
                EVENT_NEG
            } else {
                EVENT_ZERO
            }
        })
        .collect();
    GrayImage {
        width: cur.width,
        height: cur.height,
        data,
    }
}

const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [220, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [50, 70, 230]),
    ("yellow", [230, 210, 40]),
    ("cyan", [40, 210, 210]),
    ("magenta", [210, 50, 200]),
    ("orange", [240, 140, 30]),
    ("white", [240, 240, 240]),
];

/// Overexposed frames are white with sparse dark sensor dots. Background dots
/// are fixed; dots inside the target are redrawn every frame, so a single frame
/// shows nothing while consecutive frames differ (and fire events) on the target.
const OE_DOT_DEPTH: u8 = 13;
const OE_DOT_RATE: f64 = 0.04;
const LOW_LIGHT_GAIN: f64 = 0.025;
const LOW_LIGHT_NOISE: i32 = 2;

#[derive(Clone, Copy, Debug)]
struct Object {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    color: [u8; 3],
    temperature: f64,
}

impl Object {
    fn overlaps(&self, o: &Object, gap: i64) -> bool {
        self.x < o.x + o.w + gap
            && o.x < self.x + self.w + gap
            && self.y < o.y + o.h + gap
            && o.y < self.y + self.h + gap
    }
}

struct Scene {
    cfg: GenConfig,
    background: Vec<[f64; 3]>,
    thermal_bg: Vec<f64>,
}

/// Smooth static field made of a few wide Gaussian bumps.
fn smooth_field(rng: &mut ChaCha8Rng, w: usize, h: usize, bumps: usize, amp: f64, sigma: f64) -> Vec<f64> {
    let centres: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(-amp..amp),
            )
        })
        .collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = centres
                .iter()
                .map(|&(cx, cy, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .sum();
        }
    }
    out
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

impl Scene {
    fn new(rng: &mut ChaCha8Rng, cfg: GenConfig) -> Self {
        let (w, h) = (cfg.width, cfg.height);
        let base = [
            rng.random_range(80.0..140.0),
            rng.random_range(80.0..140.0),
            rng.random_range(80.0..140.0),
        ];
        let tex = smooth_field(rng, w, h, 6, 25.0, 18.0);
        let background = tex.iter().map(|&t| [base[0] + t, base[1] + t, base[2] + t]).collect();
        let tbase = rng.random_range(45.0..70.0);
        let thermal_bg = smooth_field(rng, w, h, 4, 12.0, 24.0)
            .iter()
            .map(|&t| tbase + t)
            .collect();
        Scene {
            cfg,
            background,
            thermal_bg,
        }
    }

    fn render_rgb(&self, objects: &[Object]) -> RgbImage {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut img = RgbImage::filled(w, h, [0, 0, 0]);
        for (i, px) in self.background.iter().enumerate() {
            img.set(i % w, i / w, [clamp_u8(px[0]), clamp_u8(px[1]), clamp_u8(px[2])]);
        }
        for o in objects {
            let dark = o.color.map(|c| (c as f64 * 0.7) as u8);
            for_each_pixel(o, w, h, |x, y| {
                // Vertical stripes, 4 px wide.
                let stripe = ((x as i64 - o.x) / 4) % 2 == 1;
                img.set(x, y, if stripe { dark } else { o.color });
            });
        }
        img
    }

    fn render_thermal(&self, objects: &[Object]) -> GrayImage {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut t = self.thermal_bg.clone();
        for o in objects.iter().filter(|o| o.temperature > 0.0) {
            for_each_pixel(o, w, h, |x, y| {
                let u = (x as f64 + 0.5 - o.x as f64) / o.w as f64 * 2.0 - 1.0;
                let v = (y as f64 + 0.5 - o.y as f64) / o.h as f64 * 2.0 - 1.0;
                let r2 = (u * u + v * v) / 2.0;
                t[y * w + x] = o.temperature * (0.7 + 0.3 * (1.0 - r2));
            });
        }
        let blurred = box_blur3(&t, w, h);
        GrayImage {
            width: w,
            height: h,
            data: blurred.iter().map(|&v| clamp_u8(v)).collect(),
        }
    }
}

fn for_each_pixel(o: &Object, w: usize, h: usize, mut f: impl FnMut(usize, usize)) {
    let x0 = o.x.max(0) as usize;
    let y0 = o.y.max(0) as usize;
    let x1 = ((o.x + o.w).max(0) as usize).min(w);
    let y1 = ((o.y + o.h).max(0) as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            f(x, y);
        }
    }
}

fn box_blur3(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    s += v[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

fn shape_word(w: i64, h: i64) -> &'static str {
    if (w - h).abs() <= 2 {
        "square"
    } else if w > h {
        "rectangle"
    } else {
        "bar"
    }
}

/// Generates one sequence; `(scenario, cfg, seed)` fully determines the output.
pub fn generate(scenario: Scenario, cfg: &GenConfig, seed: u64, name: &str) -> Result<SyntheticSequence> {
    let (fw, fh, nf) = (cfg.width as i64, cfg.height as i64, cfg.frames);
    if fw < 48 || fh < 48 || nf < 2 {
        return Err(Error::Config(
            "frames must be at least 48×48 and sequences at least 2 frames long".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::new(&mut rng, *cfg);

    let (color_name, color) = PALETTE[rng.random_range(0..PALETTE.len())];
    let tw = rng.random_range(12..=24i64);
    let th = rng.random_range(12..=24i64);
    let temperature = rng.random_range(195.0..230.0);

    let dirs = [
        ("left", (-1.0, 0.0)),
        ("right", (1.0, 0.0)),
        ("up", (0.0, -1.0)),
        ("down", (0.0, 1.0)),
    ];
    let (dir_name, (dx, dy)) = dirs[rng.random_range(0..4)];
    let moving = scenario != Scenario::StaticTarget;
    let speed = if moving { rng.random_range(1.5..3.0) } else { 0.0 };
    let travel = speed * (nf - 1) as f64;
    let margin = 3.0;
    // Start so the whole straight path (plus jitter) stays inside the frame.
    let span = |size: i64, full: i64, dir: f64| -> (f64, f64) {
        let lo = margin + if dir < 0.0 { travel } else { 0.0 };
        let hi = (full - size) as f64 - margin - if dir > 0.0 { travel } else { 0.0 };
        (lo, hi.max(lo))
    };
    let (xlo, xhi) = span(tw, fw, dx);
    let (ylo, yhi) = span(th, fh, dy);
    let x0 = rng.random_range(xlo..=xhi);
    let y0 = rng.random_range(ylo..=yhi);
    let jitter = if moving { 0.5 } else { 0.0 };
    let path: Vec<(i64, i64)> = (0..nf)
        .map(|t| {
            let jx = if jitter > 0.0 {
                rng.random_range(-jitter..jitter)
            } else {
                0.0
            };
            let jy = if jitter > 0.0 {
                rng.random_range(-jitter..jitter)
            } else {
                0.0
            };
            let x = (x0 + dx * speed * t as f64 + jx).round() as i64;
            let y = (y0 + dy * speed * t as f64 + jy).round() as i64;
            (x.clamp(0, fw - tw), y.clamp(0, fh - th))
        })
        .collect();
    let target_at = |t: usize| Object {
        x: path[t].0,
        y: path[t].1,
        w: tw,
        h: th,
        color,
        temperature,
    };
    let swept = {
        let (xs, ys): (Vec<i64>, Vec<i64>) = path.iter().copied().unzip();
        let (x_min, y_min) = (*xs.iter().min().unwrap(), *ys.iter().min().unwrap());
        Object {
            x: x_min,
            y: y_min,
            w: xs.iter().max().unwrap() - x_min + tw,
            h: ys.iter().max().unwrap() - y_min + th,
            color,
            temperature,
        }
    };

    // Identical static copies of the target beside its path at the given frames.
    let copies = |at: &[(usize, f64)]| -> Vec<Object> {
        let mut out = Vec::new();
        for &(k, side) in at {
            let (px, py) = path[k];
            let (ox, oy) = if dx != 0.0 {
                (0, side as i64 * (th + 6))
            } else {
                (side as i64 * (tw + 6), 0)
            };
            let mut d = Object {
                x: px + ox,
                y: py + oy,
                ..target_at(k)
            };
            if d.x < 0 || d.y < 0 || d.x + d.w > fw || d.y + d.h > fh {
                d.x = px - ox;
                d.y = py - oy;
            }
            d.x = d.x.clamp(0, fw - tw);
            d.y = d.y.clamp(0, fh - th);
            if !path.iter().any(|&(x, y)| d.overlaps(&Object { x, y, ..d }, 1)) {
                out.push(d);
            }
        }
        out
    };

    let mut distractors = Vec::new();
    match scenario {
        Scenario::SimilarDistractors => distractors = copies(&[(nf / 3, 1.0), (2 * nf / 3, -1.0)]),
        _ => {
            if scenario == Scenario::OverexposedRgb {
                // A thermal twin: blind RGB plus an ambiguous thermal frame leaves
                // the events as the only cue that tells the two apart.
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                distractors = copies(&[(nf / 2, side)]);
            }
            let n = rng.random_range(1..=2);
            for _ in 0..n {
                let others: Vec<[u8; 3]> = PALETTE.iter().map(|p| p.1).filter(|&c| c != color).collect();
                if let Some(d) = place_static(&mut rng, fw, fh, &swept, &distractors, |rng| Object {
                    x: 0,
                    y: 0,
                    w: rng.random_range(10..=24),
                    h: rng.random_range(10..=24),
                    color: others[rng.random_range(0..others.len())],
                    temperature: rng.random_range(100.0..150.0),
                }) {
                    distractors.push(d);
                }
            }
        }
    }

    let mut rgb = Vec::with_capacity(nf);
    let mut thermal = Vec::with_capacity(nf);
    let mut gt = Vec::with_capacity(nf);
    let oe_dots: Vec<bool> = if scenario == Scenario::OverexposedRgb {
        (0..cfg.width * cfg.height)
            .map(|_| rng.random_bool(OE_DOT_RATE))
            .collect()
    } else {
        Vec::new()
    };
    for t in 0..nf {
        let target = target_at(t);
        let mut objects = distractors.clone();
        objects.push(target);
        thermal.push(scene.render_thermal(&objects));
        let frame = match scenario {
            Scenario::OverexposedRgb => render_overexposed(cfg, &oe_dots, &target, &mut rng),
            Scenario::LowLight => {
                let img = scene.render_rgb(&objects);
                let data = img
                    .data
                    .iter()
                    .map(|&v| {
                        let n = rng.random_range(-LOW_LIGHT_NOISE..=LOW_LIGHT_NOISE);
                        ((v as f64 * LOW_LIGHT_GAIN).round() as i32 + n).clamp(0, 255) as u8
                    })
                    .collect();
                RgbImage { data, ..img }
            }
            _ => scene.render_rgb(&objects),
        };
        rgb.push(frame);
        gt.push(BBox::new(target.x as f64, target.y as f64, tw as f64, th as f64)?);
    }
    let mut event = vec![GrayImage::filled(cfg.width, cfg.height, EVENT_ZERO)];
    for t in 1..nf {
        event.push(events_from_rgb(&rgb[t - 1], &rgb[t], cfg.event_threshold));
    }
    let direction = if moving { dir_name } else { "nowhere" };
    let seq = SyntheticSequence {
        name: name.to_string(),
        rgb,
        thermal,
        event,
        gt,
        language: format!("the {color_name} {} moving {direction}", shape_word(tw, th)),
        attributes: scenario.tag().map(|t| vec![t.to_string()]).unwrap_or_default(),
    };
    seq.validate()?;
    Ok(seq)
}

/// Saturated frame: the target's dots are redrawn, everything else is fixed.
fn render_overexposed(cfg: &GenConfig, dots: &[bool], target: &Object, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (cfg.width, cfg.height);
    let mut dots = dots.to_vec();
    for_each_pixel(target, w, h, |x, y| dots[y * w + x] = rng.random_bool(OE_DOT_RATE));
    let level = |d: bool| if d { 255 - OE_DOT_DEPTH } else { 255 };
    RgbImage {
        width: w,
        height: h,
        data: dots.iter().flat_map(|&d| [level(d); 3]).collect(),
    }
}

fn place_static(
    rng: &mut ChaCha8Rng,
    fw: i64,
    fh: i64,
    swept: &Object,
    existing: &[Object],
    make: impl Fn(&mut ChaCha8Rng) -> Object,
) -> Option<Object> {
    for _ in 0..64 {
        let mut d = make(rng);
        d.x = rng.random_range(0..=fw - d.w);
        d.y = rng.random_range(0..=fh - d.h);
        if !d.overlaps(swept, 2) && existing.iter().all(|e| !d.overlaps(e, 2)) {
            return Some(d);
        }
    }
    None
}

fn variance(v: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = v.collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Per-frame pixel variance inside the gt box: `(max RGB-channel variance, thermal variance)`.
pub fn box_variances(seq: &SyntheticSequence, t: usize) -> (f64, f64) {
    let b = seq.gt[t];
    let (x0, y0, x1, y1) = (b.x1 as usize, b.y1 as usize, b.x2() as usize, b.y2() as usize);
    let coords = || (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)));
    let rgb = (0..3)
        .map(|c| variance(coords().map(|(x, y)| seq.rgb[t].get(x, y)[c] as f64)))
        .fold(0.0, f64::max);
    let thermal = variance(coords().map(|(x, y)| seq.thermal[t].get(x, y) as f64));
    (rgb, thermal)
}

/// Overexposed frames must hide the target's texture in RGB but not in thermal.
pub const OE_RGB_VAR_MAX: f64 = 20.0;
pub const OE_THERMAL_VAR_MIN: f64 = 50.0;
