//! Fixed-size crops turned into patch matrices.
//!
//! Crops are taken at the native resolution (no resizing): the template is a
//! `template × template` window around the first-frame box, the search region a
//! `search × search` window around the current estimate. Pixels outside the
//! frame are padded with 0 (RGB, thermal) or "no event" (event).

use super::{vocab, Modality, TrackerConfig};
use crate::bbox::BBox;
use crate::numerics::{Real, Tensor};
use crate::synthdata::{GrayImage, RgbImage, SyntheticSequence, EVENT_ZERO};

/// Top-left corner of a `size`-pixel window centred on `(cx, cy)`.
pub fn crop_origin(cx: f64, cy: f64, size: usize) -> (i64, i64) {
    let half = size as f64 / 2.0;
    ((cx - half).round() as i64, (cy - half).round() as i64)
}

/// Patches in raster order; each row holds `patch × patch × 3` values ordered
/// (row, column, channel).
pub fn patch_matrix<T: Real>(
    pixel: impl Fn(i64, i64) -> [f64; 3],
    origin: (i64, i64),
    size: usize,
    patch: usize,
) -> Tensor<T> {
    let grid = size / patch;
    let cols = patch * patch * 3;
    let mut data = Vec::with_capacity(grid * grid * cols);
    for gy in 0..grid {
        for gx in 0..grid {
            for py in 0..patch {
                for px in 0..patch {
                    let x = origin.0 + (gx * patch + px) as i64;
                    let y = origin.1 + (gy * patch + py) as i64;
                    data.extend(pixel(x, y).map(T::lit));
                }
            }
        }
    }
    Tensor::new(vec![grid * grid, cols], data).expect("patch matrix size")
}

fn inside(w: usize, h: usize, x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h
}

fn rgb_pixel(img: &RgbImage) -> impl Fn(i64, i64) -> [f64; 3] + '_ {
    move |x, y| {
        let p = if inside(img.width, img.height, x, y) {
            img.get(x as usize, y as usize)
        } else {
            [0, 0, 0]
        };
        p.map(|v| v as f64 / 255.0 - 0.5)
    }
}

fn thermal_pixel(img: &GrayImage) -> impl Fn(i64, i64) -> [f64; 3] + '_ {
    move |x, y| {
        let v = if inside(img.width, img.height, x, y) {
            img.get(x as usize, y as usize)
        } else {
            0
        };
        [v as f64 / 255.0 - 0.5; 3]
    }
}

fn event_pixel(img: &GrayImage) -> impl Fn(i64, i64) -> [f64; 3] + '_ {
    move |x, y| {
        let v = if inside(img.width, img.height, x, y) {
            img.get(x as usize, y as usize)
        } else {
            EVENT_ZERO
        };
        [(v as f64 - EVENT_ZERO as f64) / 255.0; 3]
    }
}

fn modality_patches<T: Real>(
    m: Modality,
    seq: &SyntheticSequence,
    t: usize,
    origin: (i64, i64),
    size: usize,
    patch: usize,
) -> Tensor<T> {
    match m {
        Modality::Rgb => patch_matrix(rgb_pixel(&seq.rgb[t]), origin, size, patch),
        Modality::Thermal => patch_matrix(thermal_pixel(&seq.thermal[t]), origin, size, patch),
        Modality::Event => patch_matrix(event_pixel(&seq.event[t]), origin, size, patch),
        Modality::Language => unreachable!("language has no pixels"),
    }
}

/// Per-stream model inputs for one template/search pair.
#[derive(Clone, Debug)]
pub struct ModalInput<T> {
    /// One patch matrix per visual modality, in stream order.
    pub template: Vec<Tensor<T>>,
    pub search: Vec<Tensor<T>>,
    /// Word ids of the sentence (used only when language is enabled).
    pub words: Vec<usize>,
}

/// Template from frame 0 around `template_box`, search window of frame `t`
/// centred on `search_center`. Returns the input and the search-crop origin.
pub fn sample_input<T: Real>(
    cfg: &TrackerConfig,
    seq: &SyntheticSequence,
    template_box: &BBox,
    t: usize,
    search_center: (f64, f64),
) -> (ModalInput<T>, (i64, i64)) {
    let (tcx, tcy) = template_box.center();
    let t_origin = crop_origin(tcx, tcy, cfg.template);
    let s_origin = crop_origin(search_center.0, search_center.1, cfg.search);
    let visual: Vec<Modality> = cfg.modalities.iter().copied().filter(|m| m.is_visual()).collect();
    let template = visual
        .iter()
        .map(|&m| modality_patches(m, seq, 0, t_origin, cfg.template, cfg.patch))
        .collect();
    let search = visual
        .iter()
        .map(|&m| modality_patches(m, seq, t, s_origin, cfg.search, cfg.patch))
        .collect();
    (
        ModalInput {
            template,
            search,
            words: vocab::tokenize(&seq.language),
        },
        s_origin,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_order_and_padding() {
        let img = RgbImage {
            width: 4,
            height: 4,
            data: (0..48u8).collect(),
        };
        let m: Tensor<f64> = patch_matrix(rgb_pixel(&img), (0, 0), 4, 2);
        assert_eq!(m.shape(), &[4, 12]);
        // Patch 1 (top-right) starts at pixel (2, 0) = byte 6.
        assert!((m.at2(1, 0) - (6.0 / 255.0 - 0.5)).abs() < 1e-12);
        // Second pixel row of patch 0 starts at pixel (0, 1) = byte 12.
        assert!((m.at2(0, 6) - (12.0 / 255.0 - 0.5)).abs() < 1e-12);

        let padded: Tensor<f64> = patch_matrix(rgb_pixel(&img), (-2, -2), 4, 2);
        assert!(padded.data()[..12].iter().all(|&v| v == -0.5));
        let ev = GrayImage::filled(4, 4, 255);
        let e: Tensor<f64> = patch_matrix(event_pixel(&ev), (-2, 0), 4, 2);
        assert_eq!(e.at2(0, 0), 0.0);
        assert!((e.at2(1, 0) - 127.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn origin_rounding() {
        assert_eq!(crop_origin(32.0, 32.0, 64), (0, 0));
        assert_eq!(crop_origin(20.4, 10.6, 8), (16, 7));
    }
}
