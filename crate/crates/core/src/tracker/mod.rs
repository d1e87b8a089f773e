//! One-stream toy tracker.
//!
//! Template and search crops of every visual modality go through a shared
//! patch embedding; the sentence becomes one pooled word embedding that is
//! replicated over the template slots and paired with the RGB search tokens.
//! The resulting streams share transformer blocks (attention stays inside each
//! stream) and exchange information only inside the fusion blocks. The head
//! averages the streams' search halves and predicts a centre heatmap, a
//! sub-cell offset and a box size.

mod crop;
mod loss;
mod model;
mod track;
mod train;
pub mod vocab;

use std::fmt;
use std::str::FromStr;

pub use crop::{crop_origin, patch_matrix, sample_input, ModalInput};
pub use loss::{focal_loss_value, gaussian_target, giou_var, tracking_loss, LossParts, LossTargets};
pub use model::{decode, HeadOutput, HeadVars, Tracker};
pub use track::{track_sequence, track_sequences};
pub use train::{train, CurvePoint, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::scanorders::{ScanScale, TokenGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Rgb,
    Thermal,
    Event,
    Language,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Rgb, Modality::Thermal, Modality::Event, Modality::Language];

    pub fn short(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Thermal => "t",
            Modality::Event => "e",
            Modality::Language => "l",
        }
    }

    pub fn is_visual(self) -> bool {
        self != Modality::Language
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rgb" | "r" => Ok(Modality::Rgb),
            "t" | "thermal" | "tir" => Ok(Modality::Thermal),
            "e" | "event" => Ok(Modality::Event),
            "l" | "language" | "lang" => Ok(Modality::Language),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Parses `rgb,t,e,l`; returns the canonical stream order.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Modality = part.parse()?;
        if out.contains(&m) {
            return Err(Error::Config(format!("modality {part} listed twice")));
        }
        out.push(m);
    }
    out.sort();
    check_modalities(&out)?;
    Ok(out)
}

fn check_modalities(m: &[Modality]) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Config("at least one modality is required".into()));
    }
    if m.contains(&Modality::Language) && !m.contains(&Modality::Rgb) {
        return Err(Error::Config(
            "the language stream pairs with RGB search tokens; add rgb".into(),
        ));
    }
    Ok(())
}

pub fn modalities_label(m: &[Modality]) -> String {
    m.iter().map(|x| x.short()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Search crop side in pixels.
    pub search: usize,
    /// Template crop side in pixels; must be half the search side.
    pub template: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub head_hidden: usize,
    /// Backbone block indices followed by a fusion block.
    pub mfm_blocks: Vec<usize>,
    pub mfm_paths: Vec<ScanScale>,
    pub d_state: usize,
    pub conv_width: usize,
    pub modalities: Vec<Modality>,
    pub w_giou: f64,
    pub w_l1: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            search: 64,
            template: 32,
            patch: 8,
            dim: 16,
            depth: 2,
            mlp_ratio: 2,
            head_hidden: 16,
            mfm_blocks: vec![0, 1],
            mfm_paths: ScanScale::ALL.to_vec(),
            d_state: crate::ssm::DEFAULT_D_STATE,
            conv_width: crate::ssm::DEFAULT_CONV_WIDTH,
            modalities: Modality::ALL.to_vec(),
            w_giou: 2.0,
            w_l1: 5.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.search.is_multiple_of(self.patch) || !self.template.is_multiple_of(self.patch) {
            return Err(Error::Geometry(format!(
                "crop sides {} / {} must be multiples of the patch size {}",
                self.search, self.template, self.patch
            )));
        }
        if self.search != 2 * self.template {
            return Err(Error::Geometry(format!(
                "search side {} must be twice the template side {}",
                self.search, self.template
            )));
        }
        if self.dim == 0 || self.depth == 0 || self.mlp_ratio == 0 || self.head_hidden == 0 {
            return Err(Error::Config(
                "dim, depth, mlp_ratio and head_hidden must be positive".into(),
            ));
        }
        for (i, &b) in self.mfm_blocks.iter().enumerate() {
            if b >= self.depth {
                return Err(Error::Config(format!("mfm block index {b} ≥ depth {}", self.depth)));
            }
            if self.mfm_blocks[..i].contains(&b) {
                return Err(Error::Config(format!("mfm block index {b} listed twice")));
            }
        }
        if self.mfm_paths.is_empty() {
            return Err(Error::Config("at least one scan path must be enabled".into()));
        }
        check_modalities(&self.modalities)?;
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.search / self.patch
    }

    pub fn geometry(&self) -> Result<TokenGeometry> {
        let zs = self.template / self.patch;
        let xs = self.search / self.patch;
        TokenGeometry::new(self.modalities.len(), zs * zs, xs * xs)
    }

    /// Gaussian target radius in cells: `max(1, s_z / 4)`.
    pub fn target_radius(&self) -> f64 {
        ((self.template / self.patch) as f64 / 4.0).max(1.0)
    }
}
