//! One-pass tracking: initialise from the first ground-truth box, never reset.

use rayon::prelude::*;

use super::crop::sample_input;
use super::model::{decode, HeadOutput, Tracker};
use crate::bbox::BBox;
use crate::numerics::{Graph, ParamStore, Real, Tape};
use crate::synthdata::SyntheticSequence;

/// One box per frame in frame pixels. Frame 0 is the ground truth; every
/// later search window is centred on the previous prediction.
pub fn track_sequence<T: Real>(model: &Tracker, store: &ParamStore<T>, seq: &SyntheticSequence) -> Vec<BBox> {
    let cfg = model.config();
    let Some(&first) = seq.gt.first() else {
        return Vec::new();
    };
    let (w, h) = (seq.width() as f64, seq.height() as f64);
    let mut out = vec![first];
    let mut prev = first;
    for t in 1..seq.len() {
        let (input, origin) = sample_input::<T>(cfg, seq, &first, t, prev.center());
        let tape = Tape::new();
        let g = Graph::frozen(&tape, store);
        // A failed forward keeps the previous box; the tracker never aborts.
        let pred = model
            .forward(&g, &input)
            .map(|head| decode(&HeadOutput::from_tape(&tape, &head, cfg.grid(), cfg.search)))
            .map(|b| b.translate(origin.0 as f64, origin.1 as f64))
            .unwrap_or(prev);
        // Keep the centre on the frame so the next window still sees it.
        let (cx, cy) = pred.center();
        let pred = BBox::from_center(cx.clamp(0.0, w), cy.clamp(0.0, h), pred.w, pred.h).unwrap_or(prev);
        out.push(pred);
        prev = pred;
    }
    out
}

/// Tracks every sequence; parallel over sequences, output in input order.
pub fn track_sequences<T: Real>(model: &Tracker, store: &ParamStore<T>, seqs: &[SyntheticSequence]) -> Vec<Vec<BBox>> {
    seqs.par_iter().map(|s| track_sequence(model, store, s)).collect()
}
