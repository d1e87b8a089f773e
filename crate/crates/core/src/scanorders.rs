//! Scan orders over the concatenated multi-modal token sequence.
//!
//! Canonical layout: modality-major, each modality laid out as
//! `[template tokens (raster); search tokens (raster)]`. Token `n` of
//! modality `m` sits at `m·N + n`. The template grid is `r × c` (square when
//! `N_z` is a perfect square, otherwise the most nearly square factorisation)
//! and the search grid `2r × 2c`, so the search grid splits into four
//! template-sized quadrants.
//!
//! Four orders are defined on that layout:
//! - **forward**: modality by modality, token-ascending (the identity);
//! - **backward**: the full reversal of forward;
//! - **region**: every modality's template first, then each search quadrant
//!   (TL, TR, BL, BR), cycling through modalities inside each quadrant;
//! - **token**: modalities interleaved per token position.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanScale {
    Forward,
    Backward,
    Region,
    Token,
}

impl ScanScale {
    pub const ALL: [ScanScale; 4] = [
        ScanScale::Forward,
        ScanScale::Backward,
        ScanScale::Region,
        ScanScale::Token,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanScale::Forward => "forward",
            ScanScale::Backward => "backward",
            ScanScale::Region => "region",
            ScanScale::Token => "token",
        }
    }
}

impl fmt::Display for ScanScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" => Ok(ScanScale::Forward),
            "backward" => Ok(ScanScale::Backward),
            "region" => Ok(ScanScale::Region),
            "token" => Ok(ScanScale::Token),
            other => Err(Error::Config(format!("unknown scan path {other:?}"))),
        }
    }
}

/// Token counts for one concatenated sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenGeometry {
    modalities: usize,
    template_tokens: usize,
    search_tokens: usize,
    template_rows: usize,
    template_cols: usize,
}

impl TokenGeometry {
    pub fn new(modalities: usize, template_tokens: usize, search_tokens: usize) -> Result<Self> {
        if modalities == 0 {
            return Err(Error::Geometry("modality count must be at least 1".into()));
        }
        if template_tokens == 0 {
            return Err(Error::Geometry("template token count must be at least 1".into()));
        }
        // Most nearly square grid; square counts give a square grid.
        let rows = (1..=template_tokens)
            .take_while(|r| r * r <= template_tokens)
            .filter(|r| template_tokens.is_multiple_of(*r))
            .last()
            .unwrap_or(1);
        if search_tokens != 4 * template_tokens {
            return Err(Error::Geometry(format!(
                "search token count {search_tokens} must be 4 × template count {template_tokens}"
            )));
        }
        Ok(TokenGeometry {
            modalities,
            template_tokens,
            search_tokens,
            template_rows: rows,
            template_cols: template_tokens / rows,
        })
    }

    /// `M`
    pub fn modalities(&self) -> usize {
        self.modalities
    }

    /// `N_z`
    pub fn template_tokens(&self) -> usize {
        self.template_tokens
    }

    /// `N_x`
    pub fn search_tokens(&self) -> usize {
        self.search_tokens
    }

    /// `N = N_z + N_x`
    pub fn tokens_per_modality(&self) -> usize {
        self.template_tokens + self.search_tokens
    }

    /// `M · N`
    pub fn total_tokens(&self) -> usize {
        self.modalities * self.tokens_per_modality()
    }

    /// Template token grid `(rows, cols)`; the search grid is twice as large per side.
    pub fn template_grid(&self) -> (usize, usize) {
        (self.template_rows, self.template_cols)
    }

    pub fn search_grid(&self) -> (usize, usize) {
        (2 * self.template_rows, 2 * self.template_cols)
    }

    /// Same per-modality layout with a different modality count.
    pub fn with_modalities(&self, modalities: usize) -> Result<Self> {
        TokenGeometry::new(modalities, self.template_tokens, self.search_tokens)
    }

    fn index(&self, modality: usize, token: usize) -> usize {
        modality * self.tokens_per_modality() + token
    }
}

/// A bijective visit order over `[0, M·N)` together with its inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    scale: ScanScale,
    perm: Arc<[usize]>,
    inv: Arc<[usize]>,
}

impl ScanOrder {
    /// Builds an order from a visit sequence; fails unless `perm` is a permutation.
    pub fn from_perm(scale: ScanScale, perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut inv = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inv[p] != usize::MAX {
                return Err(Error::Contract(format!(
                    "{scale} order is not a permutation (entry {p} at {i})"
                )));
            }
            inv[p] = i;
        }
        Ok(ScanOrder {
            scale,
            perm: perm.into(),
            inv: inv.into(),
        })
    }

    pub fn new(scale: ScanScale, geo: &TokenGeometry) -> Self {
        match scale {
            ScanScale::Forward => forward_order(geo),
            ScanScale::Backward => backward_order(geo),
            ScanScale::Region => region_order(geo),
            ScanScale::Token => token_order(geo),
        }
    }

    pub fn scale(&self) -> ScanScale {
        self.scale
    }

    /// Canonical indices in visit order.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `inv[perm[i]] == i`
    pub fn inv(&self) -> &[usize] {
        &self.inv
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.len() {
            return Err(Error::shape(
                "scan order",
                format!("sequence has {rows} rows, order covers {}", self.len()),
            ));
        }
        Ok(())
    }

    /// Reorders canonical rows into visit order: `out[i] = seq[perm[i]]`.
    pub fn apply<T: Real>(&self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        permute_rows(seq, &self.perm, |r| self.check_rows(r))
    }

    /// Restores canonical order: `out[j] = seq[inv[j]]`.
    pub fn unapply<T: Real>(&self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        permute_rows(seq, &self.inv, |r| self.check_rows(r))
    }

    pub fn apply_var<T: Real>(&self, tape: &Tape<T>, seq: Var) -> Result<Var> {
        self.check_rows(tape.shape(seq)[0])?;
        tape.gather_rows(seq, Arc::clone(&self.perm))
    }

    pub fn unapply_var<T: Real>(&self, tape: &Tape<T>, seq: Var) -> Result<Var> {
        self.check_rows(tape.shape(seq)[0])?;
        tape.gather_rows(seq, Arc::clone(&self.inv))
    }

    /// Comma-separated visit order.
    pub fn to_line(&self) -> String {
        self.perm.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn permute_rows<T: Real>(seq: &Tensor<T>, index: &[usize], check: impl Fn(usize) -> Result<()>) -> Result<Tensor<T>> {
    let (rows, cols) = seq.dims2()?;
    check(rows)?;
    let d = seq.data();
    let mut out = Vec::with_capacity(d.len());
    for &i in index {
        out.extend_from_slice(&d[i * cols..(i + 1) * cols]);
    }
    Tensor::new(vec![rows, cols], out)
}

fn built(scale: ScanScale, perm: Vec<usize>) -> ScanOrder {
    ScanOrder::from_perm(scale, perm).expect("scan orders are bijections by construction")
}

pub fn forward_order(geo: &TokenGeometry) -> ScanOrder {
    let mut perm = Vec::with_capacity(geo.total_tokens());
    for m in 0..geo.modalities() {
        for n in 0..geo.tokens_per_modality() {
            perm.push(geo.index(m, n));
        }
    }
    built(ScanScale::Forward, perm)
}

pub fn backward_order(geo: &TokenGeometry) -> ScanOrder {
    let mut perm = Vec::with_capacity(geo.total_tokens());
    for m in (0..geo.modalities()).rev() {
        for n in (0..geo.tokens_per_modality()).rev() {
            perm.push(geo.index(m, n));
        }
    }
    built(ScanScale::Backward, perm)
}

pub fn region_order(geo: &TokenGeometry) -> ScanOrder {
    let (rows, cols) = geo.template_grid();
    let search_cols = geo.search_grid().1;
    let mut perm = Vec::with_capacity(geo.total_tokens());
    for m in 0..geo.modalities() {
        for n in 0..geo.template_tokens() {
            perm.push(geo.index(m, n));
        }
    }
    // Quadrants 0,1 (top half) then 2,3 (bottom half).
    for quadrant in 0..4 {
        let (row0, col0) = ((quadrant / 2) * rows, (quadrant % 2) * cols);
        for m in 0..geo.modalities() {
            for k in 0..rows {
                for n in 0..cols {
                    let cell = (row0 + k) * search_cols + col0 + n;
                    perm.push(geo.index(m, geo.template_tokens() + cell));
                }
            }
        }
    }
    built(ScanScale::Region, perm)
}

pub fn token_order(geo: &TokenGeometry) -> ScanOrder {
    let mut perm = Vec::with_capacity(geo.total_tokens());
    for n in 0..geo.tokens_per_modality() {
        for m in 0..geo.modalities() {
            perm.push(geo.index(m, n));
        }
    }
    built(ScanScale::Token, perm)
}

/// All four orders in [`ScanScale::ALL`] order.
pub fn all_orders(geo: &TokenGeometry) -> Vec<ScanOrder> {
    ScanScale::ALL.iter().map(|&s| ScanOrder::new(s, geo)).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Geometry without the N_x = 4·N_z restriction, for the small hand cases.
    fn loose(m: usize, n: usize) -> TokenGeometry {
        TokenGeometry {
            modalities: m,
            template_tokens: 0,
            search_tokens: n,
            template_rows: 0,
            template_cols: 0,
        }
    }

    #[test]
    fn forward_and_backward_hand_cases() {
        let g = loose(2, 3);
        assert_eq!(forward_order(&g).perm(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(backward_order(&g).perm(), &[5, 4, 3, 2, 1, 0]);
        let g = TokenGeometry::new(4, 1, 4).unwrap();
        assert_eq!(forward_order(&g).perm(), (0..20).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn token_hand_case() {
        assert_eq!(token_order(&loose(2, 3)).perm(), &[0, 3, 1, 4, 2, 5]);
        assert_eq!(token_order(&loose(1, 3)).perm(), &[0, 1, 2]);
    }

    #[test]
    fn region_hand_case() {
        let g = TokenGeometry::new(2, 1, 4).unwrap();
        assert_eq!(region_order(&g).perm(), &[0, 5, 1, 6, 2, 7, 3, 8, 4, 9]);
        let g = TokenGeometry::new(1, 1, 4).unwrap();
        assert_eq!(region_order(&g).perm(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn rectangular_region_hand_case() {
        let g = TokenGeometry::new(2, 2, 8).unwrap();
        assert_eq!((g.template_grid(), g.search_grid()), ((1, 2), (2, 4)));
        assert_eq!(
            region_order(&g).perm(),
            &[0, 1, 10, 11, 2, 3, 12, 13, 4, 5, 14, 15, 6, 7, 16, 17, 8, 9, 18, 19]
        );
    }

    #[test]
    fn geometry_validation() {
        assert!(TokenGeometry::new(4, 4, 12).is_err());
        assert!(TokenGeometry::new(4, 0, 0).is_err());
        assert_eq!(TokenGeometry::new(4, 32, 128).unwrap().template_grid(), (4, 8));
        assert_eq!(TokenGeometry::new(4, 16, 64).unwrap().template_grid(), (4, 4));
        assert!(TokenGeometry::new(0, 4, 16).is_err());
        let g = TokenGeometry::new(4, 16, 64).unwrap();
        assert_eq!((g.tokens_per_modality(), g.total_tokens()), (80, 320));
        let g = TokenGeometry::new(4, 64, 256).unwrap();
        assert_eq!(g.total_tokens(), 1280);
    }

    #[test]
    fn backward_then_forward_inverse_is_reversal() {
        let g = TokenGeometry::new(3, 4, 16).unwrap();
        let f = forward_order(&g);
        let b = backward_order(&g);
        let n = g.total_tokens();
        let composed: Vec<usize> = (0..n).map(|i| f.perm()[b.inv()[i]]).collect();
        let reversal: Vec<usize> = (0..n).rev().collect();
        assert_eq!(composed, reversal);
    }

    #[test]
    fn from_perm_rejects_non_bijections() {
        assert!(ScanOrder::from_perm(ScanScale::Forward, vec![0, 0, 1]).is_err());
        assert!(ScanOrder::from_perm(ScanScale::Forward, vec![0, 3, 1]).is_err());
    }

    #[test]
    fn apply_rejects_wrong_length() {
        let g = TokenGeometry::new(2, 1, 4).unwrap();
        let o = region_order(&g);
        assert!(o.apply(&Tensor::<f64>::zeros(vec![9, 2])).is_err());
    }

    #[test]
    fn grouping_token_order_by_modality_restores_forward() {
        let g = TokenGeometry::new(3, 4, 16).unwrap();
        let t = token_order(&g);
        let n = g.tokens_per_modality();
        let mut grouped = t.perm().to_vec();
        grouped.sort_by_key(|&idx| (idx / n, idx % n));
        assert_eq!(grouped, forward_order(&g).perm());
    }

    fn geometries() -> impl Strategy<Value = TokenGeometry> {
        (1usize..=4, 1usize..=4).prop_map(|(m, s)| TokenGeometry::new(m, s * s, 4 * s * s).unwrap())
    }

    proptest! {
        #[test]
        fn structural_invariants(geo in geometries()) {
            let total = geo.total_tokens();
            let f = forward_order(&geo);
            let b = backward_order(&geo);
            let r = region_order(&geo);
            let t = token_order(&geo);
            for o in [&f, &b, &r, &t] {
                let mut sorted = o.perm().to_vec();
                sorted.sort_unstable();
                prop_assert_eq!(sorted, (0..total).collect::<Vec<_>>());
                for i in 0..total {
                    prop_assert_eq!(o.inv()[o.perm()[i]], i);
                }
            }
            for i in 0..total {
                prop_assert_eq!(b.perm()[i], total - 1 - f.perm()[i]);
            }
            let n = geo.tokens_per_modality();
            let m = geo.modalities();
            for i in 0..n {
                for mm in 0..m {
                    prop_assert_eq!(t.perm()[i * m + mm], mm * n + i);
                }
            }
            // Region: templates first, then quadrant blocks cycle modalities.
            let nz = geo.template_tokens();
            let template_count = m * nz;
            prop_assert!(r.perm()[..template_count].iter().all(|&i| i % n < nz));
            prop_assert!(r.perm()[template_count..].iter().all(|&i| i % n >= nz));
            for (block, chunk) in r.perm()[template_count..].chunks(nz).enumerate() {
                prop_assert!(chunk.iter().all(|&i| i / n == block % m));
            }
        }

        #[test]
        fn apply_unapply_round_trip(geo in geometries(), cols in 1usize..4, seed in any::<u64>()) {
            let rows = geo.total_tokens();
            let seq = Tensor::<f64>::from_fn(vec![rows, cols], |i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64);
            for o in all_orders(&geo) {
                let back = o.unapply(&o.apply(&seq).unwrap()).unwrap();
                prop_assert_eq!(back.data(), seq.data());
            }
            let fwd = forward_order(&geo);
            let same = fwd.apply(&seq).unwrap();
            prop_assert_eq!(same.data(), seq.data());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn random_permutation_round_trip(perm in (1usize..40).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())) {
            let n = perm.len();
            let o = ScanOrder::from_perm(ScanScale::Forward, perm).unwrap();
            let seq = Tensor::<f64>::from_fn(vec![n, 2], |i| i as f64 * 0.5 - 3.0);
            let back = o.unapply(&o.apply(&seq).unwrap()).unwrap();
            prop_assert_eq!(back.data(), seq.data());
        }
    }
}
