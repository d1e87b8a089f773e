use std::sync::Arc;

use rand::Rng;

use super::crop::ModalInput;
use super::{vocab, Modality, TrackerConfig};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mfm::{MfmBlock, MfmConfig};
use crate::numerics::params::init;
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::scanorders::{all_orders, ScanOrder, ScanScale, TokenGeometry};

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    ln1: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Branch {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Head tensors on the tape, all over the `s_x × s_x` search grid in raster order.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// `N_x × 1` pre-sigmoid scores.
    pub logits: Var,
    /// `N_x × 1` in `[0, 1]`.
    pub heat: Var,
    /// `N_x × 2` (x, y) sub-cell offset in cells, in `(−0.5, 0.5)`; 0 is the cell centre.
    pub offset: Var,
    /// `N_x × 2` (w, h) as fractions of the search side.
    pub size: Var,
}

/// Plain copy of the head maps.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub grid: usize,
    pub search: usize,
    pub heat: Vec<f64>,
    pub offset: Vec<[f64; 2]>,
    pub size: Vec<[f64; 2]>,
}

impl HeadOutput {
    pub fn from_tape<T: Real>(tape: &crate::numerics::Tape<T>, h: &HeadVars, grid: usize, search: usize) -> Self {
        let pairs = |v: Var| -> Vec<[f64; 2]> {
            tape.value(v)
                .data()
                .chunks(2)
                .map(|c| [c[0].as_f64(), c[1].as_f64()])
                .collect()
        };
        HeadOutput {
            grid,
            search,
            heat: tape.value(h.heat).data().iter().map(|v| v.as_f64()).collect(),
            offset: pairs(h.offset),
            size: pairs(h.size),
        }
    }

    /// Index of the largest heat value; ties go to the lowest raster index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.heat.iter().enumerate() {
            if v > self.heat[best] {
                best = i;
            }
        }
        best
    }
}

/// Box in search-crop pixels from the argmax cell, its offset and size.
pub fn decode(h: &HeadOutput) -> BBox {
    let cell = h.search as f64 / h.grid as f64;
    let i = h.argmax();
    let (r, c) = (i / h.grid, i % h.grid);
    let cx = (c as f64 + 0.5 + h.offset[i][0]) * cell;
    let cy = (r as f64 + 0.5 + h.offset[i][1]) * cell;
    let w = (h.size[i][0] * h.search as f64).max(1.0);
    let ht = (h.size[i][1] * h.search as f64).max(1.0);
    BBox::from_center(cx, cy, w, ht).expect("decoded box is finite and positive")
}

#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    geo: TokenGeometry,
    orders: Vec<ScanOrder>,
    patch_w: ParamId,
    patch_b: ParamId,
    pos_z: ParamId,
    pos_x: ParamId,
    lang: Option<ParamId>,
    blocks: Vec<Block>,
    mfm: Vec<(usize, MfmBlock)>,
    norm: Norm,
    cls: Branch,
    off: Branch,
    size: Branch,
    neighbours: Arc<[usize]>,
}

fn norm<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Norm {
    Norm {
        g: store.add(format!("{name}.g"), Tensor::full(vec![dim], T::one())),
        b: store.add(format!("{name}.b"), Tensor::zeros(vec![dim])),
    }
}

fn branch<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
    name: &str,
    fan: usize,
    hidden: usize,
    out: usize,
    bias: f64,
) -> Branch {
    Branch {
        w1: store.add(format!("{name}.w1"), init::fan_in(rng, fan, hidden)),
        b1: store.add(format!("{name}.b1"), Tensor::zeros(vec![hidden])),
        w2: store.add(format!("{name}.w2"), init::normal(rng, &[hidden, out], 0.1)),
        b2: store.add(format!("{name}.b2"), Tensor::full(vec![out], T::lit(bias))),
    }
}

/// 3×3 neighbourhood of every cell; out-of-grid neighbours point at row `grid²`.
fn neighbour_index(grid: usize) -> Arc<[usize]> {
    let pad = grid * grid;
    let mut idx = Vec::with_capacity(pad * 9);
    for r in 0..grid as i64 {
        for c in 0..grid as i64 {
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    let inside = rr >= 0 && cc >= 0 && rr < grid as i64 && cc < grid as i64;
                    idx.push(if inside { (rr * grid as i64 + cc) as usize } else { pad });
                }
            }
        }
    }
    idx.into()
}

impl Tracker {
    /// Registers all parameters in `store`.
    pub fn new<T: Real>(cfg: TrackerConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let geo = cfg.geometry()?;
        let c = cfg.dim;
        let patch_dim = cfg.patch * cfg.patch * 3;
        let patch_w = store.add("embed.patch.w", init::fan_in(rng, patch_dim, c));
        let patch_b = store.add("embed.patch.b", Tensor::zeros(vec![c]));
        let pos_z = store.add("embed.pos_z", init::normal(rng, &[geo.template_tokens(), c], 0.02));
        let pos_x = store.add("embed.pos_x", init::normal(rng, &[geo.search_tokens(), c], 0.02));
        let lang = cfg
            .modalities
            .contains(&Modality::Language)
            .then(|| store.add("embed.words", init::normal(rng, &[vocab::size(), c], 0.5)));
        let hidden = c * cfg.mlp_ratio;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("block{i}");
                Block {
                    ln1: norm(store, &format!("{p}.ln1"), c),
                    wq: store.add(format!("{p}.attn.wq"), init::fan_in(rng, c, c)),
                    wk: store.add(format!("{p}.attn.wk"), init::fan_in(rng, c, c)),
                    wv: store.add(format!("{p}.attn.wv"), init::fan_in(rng, c, c)),
                    wo: store.add(format!("{p}.attn.wo"), init::fan_in(rng, c, c)),
                    ln2: norm(store, &format!("{p}.ln2"), c),
                    w1: store.add(format!("{p}.mlp.w1"), init::fan_in(rng, c, hidden)),
                    b1: store.add(format!("{p}.mlp.b1"), Tensor::zeros(vec![hidden])),
                    w2: store.add(format!("{p}.mlp.w2"), init::fan_in(rng, hidden, c)),
                    b2: store.add(format!("{p}.mlp.b2"), Tensor::zeros(vec![c])),
                }
            })
            .collect();
        let mut mfm = Vec::new();
        let mut idx = cfg.mfm_blocks.clone();
        idx.sort();
        for i in idx {
            let mcfg = MfmConfig {
                d_model: c,
                d_inner: c,
                d_state: cfg.d_state,
                conv_width: cfg.conv_width,
                paths: cfg.mfm_paths.clone(),
            };
            mfm.push((i, MfmBlock::new(store, &format!("mfm{i}"), mcfg, rng)?));
        }
        let norm_out = norm(store, "head.norm", c);
        let fan = 9 * c;
        let hh = cfg.head_hidden;
        // Heat prior 0.1; size prior ≈ 0.28 of the search side.
        let cls = branch(store, rng, "head.cls", fan, hh, 1, -2.19);
        let off = branch(store, rng, "head.offset", fan, hh, 2, 0.0);
        let size = branch(store, rng, "head.size", fan, hh, 2, -0.94);
        let neighbours = neighbour_index(cfg.grid());
        Ok(Tracker {
            orders: all_orders(&geo),
            geo,
            cfg,
            patch_w,
            patch_b,
            pos_z,
            pos_x,
            lang,
            blocks,
            mfm,
            norm: norm_out,
            cls,
            off,
            size,
            neighbours,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &TokenGeometry {
        &self.geo
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.cfg.modalities
    }

    pub fn mfm_blocks(&self) -> &[(usize, MfmBlock)] {
        &self.mfm
    }

    /// Same weights, restricted to a subset of the trained modalities.
    pub fn with_modalities(&self, modalities: &[Modality]) -> Result<Self> {
        let mut m = modalities.to_vec();
        m.sort();
        m.dedup();
        if let Some(x) = m.iter().find(|x| !self.cfg.modalities.contains(x)) {
            return Err(Error::Config(format!("model was not built with modality {x}")));
        }
        let cfg = TrackerConfig {
            modalities: m,
            ..self.cfg.clone()
        };
        cfg.validate()?;
        let geo = cfg.geometry()?;
        Ok(Tracker {
            orders: all_orders(&geo),
            geo,
            cfg,
            ..self.clone()
        })
    }

    /// Same weights, fusion blocks restricted to a subset of their scan paths.
    pub fn with_paths(&self, paths: &[ScanScale]) -> Result<Self> {
        let mfm = self
            .mfm
            .iter()
            .map(|(i, b)| Ok((*i, b.variant(paths)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = self.cfg.clone();
        cfg.mfm_paths = mfm.first().map(|m| m.1.enabled().to_vec()).unwrap_or(cfg.mfm_paths);
        Ok(Tracker {
            mfm,
            cfg,
            ..self.clone()
        })
    }

    /// Every parameter the forward pass reads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.patch_w, self.patch_b, self.pos_z, self.pos_x];
        if self.cfg.modalities.contains(&Modality::Language) {
            ids.extend(self.lang);
        }
        for b in &self.blocks {
            ids.extend([
                b.ln1.g, b.ln1.b, b.wq, b.wk, b.wv, b.wo, b.ln2.g, b.ln2.b, b.w1, b.b1, b.w2, b.b2,
            ]);
        }
        for (_, m) in &self.mfm {
            ids.extend(m.param_ids());
        }
        ids.extend([self.norm.g, self.norm.b]);
        for br in [self.cls, self.off, self.size] {
            ids.extend([br.w1, br.b1, br.w2, br.b2]);
        }
        ids
    }

    pub fn count_params<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.count(self.param_ids())
    }

    fn visual(&self) -> Vec<Modality> {
        self.cfg.modalities.iter().copied().filter(|m| m.is_visual()).collect()
    }

    fn affine_norm<T: Real>(&self, g: &Graph<'_, T>, x: Var, n: Norm) -> Result<Var> {
        let t = g.tape;
        let y = t.mul(t.layernorm(x), g.param(n.g))?;
        t.add(y, g.param(n.b))
    }

    /// Canonical `(M·N) × C` token matrix: visual streams, then the language stream.
    pub fn embed<T: Real>(&self, g: &Graph<'_, T>, input: &ModalInput<T>) -> Result<Var> {
        let tape = g.tape;
        let visual = self.visual();
        let (nz, nx) = (self.geo.template_tokens(), self.geo.search_tokens());
        let n = nz + nx;
        if input.template.len() != visual.len() || input.search.len() != visual.len() {
            return Err(Error::Input(format!(
                "expected {} visual inputs, got {} template / {} search",
                visual.len(),
                input.template.len(),
                input.search.len()
            )));
        }
        let cols = self.cfg.patch * self.cfg.patch * 3;
        let mut rows = Vec::with_capacity(visual.len() * n * cols);
        for (z, x) in input.template.iter().zip(&input.search) {
            if z.shape() != [nz, cols] || x.shape() != [nx, cols] {
                return Err(Error::Input(format!(
                    "patch matrices {:?} / {:?} do not match the {}-pixel template and {}-pixel search crops",
                    z.shape(),
                    x.shape(),
                    self.cfg.template,
                    self.cfg.search
                )));
            }
            rows.extend_from_slice(z.data());
            rows.extend_from_slice(x.data());
        }
        let patches = tape.constant(Tensor::new(vec![visual.len() * n, cols], rows)?);
        let tokens = tape.linear(patches, g.param(self.patch_w), Some(g.param(self.patch_b)))?;
        let pos = tape.concat_rows(&[g.param(self.pos_z), g.param(self.pos_x)])?;
        let tile: Vec<usize> = (0..visual.len()).flat_map(|_| 0..n).collect();
        let pos = tape.gather_rows(pos, tile.into())?;
        let tokens = tape.add(tokens, pos)?;
        if !self.cfg.modalities.contains(&Modality::Language) {
            return Ok(tokens);
        }
        let lang = self
            .lang
            .ok_or_else(|| Error::Config("model has no language embedding".into()))?;
        if input.words.is_empty() {
            return Err(Error::Input("language stream needs at least one word".into()));
        }
        let words = tape.gather_rows(g.param(lang), input.words.clone().into())?;
        let k = input.words.len();
        let pool = tape.constant(Tensor::full(vec![1, k], T::lit(1.0 / k as f64)));
        let sentence = tape.matmul(pool, words)?;
        let z_l = tape.add(tape.gather_rows(sentence, vec![0; nz].into())?, g.param(self.pos_z))?;
        // RGB is stream 0 whenever language is enabled.
        let x_r = tape.slice_rows(tokens, nz, nx)?;
        tape.concat_rows(&[tokens, z_l, x_r])
    }

    fn block_forward<T: Real>(&self, g: &Graph<'_, T>, h: Var, b: &Block) -> Result<Var> {
        let tape = g.tape;
        let n = self.geo.tokens_per_modality();
        let a = self.affine_norm(g, h, b.ln1)?;
        let q = tape.matmul(a, g.param(b.wq))?;
        let k = tape.matmul(a, g.param(b.wk))?;
        let v = tape.matmul(a, g.param(b.wv))?;
        let scale = T::lit(1.0 / (self.cfg.dim as f64).sqrt());
        let mut heads = Vec::with_capacity(self.geo.modalities());
        for m in 0..self.geo.modalities() {
            let qm = tape.slice_rows(q, m * n, n)?;
            let km = tape.slice_rows(k, m * n, n)?;
            let vm = tape.slice_rows(v, m * n, n)?;
            let att = tape.softmax(tape.scale(tape.matmul_nt(qm, km)?, scale));
            heads.push(tape.matmul(att, vm)?);
        }
        let att = tape.matmul(tape.concat_rows(&heads)?, g.param(b.wo))?;
        let h = tape.add(h, att)?;
        let a = self.affine_norm(g, h, b.ln2)?;
        let mlp = tape.silu(tape.linear(a, g.param(b.w1), Some(g.param(b.b1)))?);
        let mlp = tape.linear(mlp, g.param(b.w2), Some(g.param(b.b2)))?;
        tape.add(h, mlp)
    }

    /// Shared blocks with stream-local attention; fusion after the configured blocks.
    pub fn backbone<T: Real>(&self, g: &Graph<'_, T>, h: Var) -> Result<Var> {
        let mut h = h;
        for (i, b) in self.blocks.iter().enumerate() {
            h = self.block_forward(g, h, b)?;
            for (_, m) in self.mfm.iter().filter(|(j, _)| *j == i) {
                h = m.forward(g, h, &self.geo, &self.orders)?;
            }
        }
        Ok(h)
    }

    /// Mean of the streams' search halves → 3×3 conv branches.
    pub fn head<T: Real>(&self, g: &Graph<'_, T>, h: Var) -> Result<HeadVars> {
        let tape = g.tape;
        let (nz, nx, n) = (
            self.geo.template_tokens(),
            self.geo.search_tokens(),
            self.geo.tokens_per_modality(),
        );
        let m = self.geo.modalities();
        let mut merged = tape.slice_rows(h, nz, nx)?;
        for s in 1..m {
            merged = tape.add(merged, tape.slice_rows(h, s * n + nz, nx)?)?;
        }
        let merged = tape.scale(merged, T::lit(1.0 / m as f64));
        let merged = self.affine_norm(g, merged, self.norm)?;
        let c = self.cfg.dim;
        let padded = tape.concat_rows(&[merged, tape.constant(Tensor::zeros(vec![1, c]))])?;
        let feat = tape.reshape(tape.gather_rows(padded, Arc::clone(&self.neighbours))?, vec![nx, 9 * c])?;
        let run = |br: &Branch| -> Result<Var> {
            let hdn = tape.relu(tape.linear(feat, g.param(br.w1), Some(g.param(br.b1)))?);
            tape.linear(hdn, g.param(br.w2), Some(g.param(br.b2)))
        };
        let logits = run(&self.cls)?;
        let heat = tape.sigmoid(logits);
        let offset = tape.add(
            tape.sigmoid(run(&self.off)?),
            tape.constant(Tensor::full(vec![2], T::lit(-0.5))),
        )?;
        let size = tape.sigmoid(run(&self.size)?);
        Ok(HeadVars {
            logits,
            heat,
            offset,
            size,
        })
    }

    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, input: &ModalInput<T>) -> Result<HeadVars> {
        let h = self.embed(g, input)?;
        let h = self.backbone(g, h)?;
        self.head(g, h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Tape;

    fn hand_head(grid: usize) -> HeadOutput {
        HeadOutput {
            grid,
            search: 64,
            heat: vec![0.0; grid * grid],
            offset: vec![[0.0; 2]; grid * grid],
            size: vec![[0.25; 2]; grid * grid],
        }
    }

    #[test]
    fn decode_hand_case() {
        let mut h = hand_head(8);
        h.heat[2 * 8 + 3] = 1.0;
        let b = decode(&h);
        assert_eq!(b.center(), (28.0, 20.0));
        assert_eq!((b.w, b.h), (16.0, 16.0));
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        let mut h = hand_head(8);
        h.heat.iter_mut().for_each(|v| *v = 0.5);
        assert_eq!(h.argmax(), 0);
        h.heat[5] = 0.7;
        h.heat[9] = 0.7;
        assert_eq!(h.argmax(), 5);
    }

    #[test]
    fn neighbour_index_corners() {
        let idx = neighbour_index(3);
        assert_eq!(&idx[..9], &[9, 9, 9, 9, 0, 1, 9, 3, 4]);
        assert_eq!(&idx[4 * 9..5 * 9], &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
    }

    fn tiny_cfg() -> TrackerConfig {
        TrackerConfig {
            dim: 8,
            head_hidden: 4,
            d_state: 2,
            ..TrackerConfig::default()
        }
    }

    fn zero_input(cfg: &TrackerConfig) -> ModalInput<f64> {
        let v = cfg.modalities.iter().filter(|m| m.is_visual()).count();
        let cols = cfg.patch * cfg.patch * 3;
        let g = cfg.geometry().unwrap();
        ModalInput {
            template: vec![Tensor::zeros(vec![g.template_tokens(), cols]); v],
            search: vec![Tensor::zeros(vec![g.search_tokens(), cols]); v],
            words: vec![1, 3],
        }
    }

    #[test]
    fn zero_image_tokens_are_position_plus_bias() {
        let cfg = TrackerConfig {
            modalities: vec![Modality::Rgb, Modality::Thermal],
            ..tiny_cfg()
        };
        let mut store = ParamStore::<f64>::new();
        let model = Tracker::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        *store.get_mut(model.patch_b) = Tensor::full(vec![8], 0.3);
        let tape = Tape::new();
        let g = Graph::new(&tape, &store);
        let h = tape.value(model.embed(&g, &zero_input(&cfg)).unwrap());
        let (pz, px) = (store.get(model.pos_z), store.get(model.pos_x));
        for s in 0..2 {
            for r in 0..16 {
                for c in 0..8 {
                    assert!((h.at2(s * 80 + r, c) - (pz.at2(r, c) + 0.3)).abs() < 1e-15);
                }
            }
            for r in 0..64 {
                assert!((h.at2(s * 80 + 16 + r, 5) - (px.at2(r, 5) + 0.3)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn language_stream_layout() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let model = Tracker::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut input = zero_input(&cfg);
        input.search[0] = Tensor::from_fn(vec![64, 192], |i| (i % 7) as f64 * 0.1);
        let tape = Tape::new();
        let g = Graph::new(&tape, &store);
        let h = tape.value(model.embed(&g, &input).unwrap());
        assert_eq!(h.shape(), &[320, 8]);
        // Search half of the language stream is a copy of the RGB search tokens.
        for r in 0..64 {
            for c in 0..8 {
                assert_eq!(h.at2(240 + 16 + r, c), h.at2(16 + r, c));
            }
        }
        // Template half: pooled words + template positions, identical up to position.
        let words = store.get(model.lang.unwrap());
        let pz = store.get(model.pos_z);
        for c in 0..8 {
            let pooled = (words.at2(1, c) + words.at2(3, c)) / 2.0;
            assert!((h.at2(240, c) - (pooled + pz.at2(0, c))).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes_and_head_ranges() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let model = Tracker::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tape = Tape::new();
        let g = Graph::new(&tape, &store);
        let mut input = zero_input(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in input.search.iter_mut().chain(input.template.iter_mut()) {
            *t = Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-0.5..0.5));
        }
        let h0 = model.embed(&g, &input).unwrap();
        let h1 = model.backbone(&g, h0).unwrap();
        assert_eq!(tape.shape(h0), tape.shape(h1));
        let head = model.head(&g, h1).unwrap();
        let out = HeadOutput::from_tape(&tape, &head, 8, 64);
        assert!(out.heat.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out.size.iter().flatten().all(|&v| v > 0.0));
        assert!(out.offset.iter().flatten().all(|&v| v.abs() < 0.5));
    }

    #[test]
    fn identical_streams_merge_to_one_stream() {
        let cfg = TrackerConfig {
            modalities: vec![Modality::Rgb, Modality::Thermal, Modality::Event],
            ..tiny_cfg()
        };
        let mut store = ParamStore::<f64>::new();
        let model = Tracker::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let single = model.with_modalities(&[Modality::Rgb]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stream = Tensor::<f64>::from_fn(vec![80, 8], |_| rng.random_range(-1.0..1.0));
        let tripled = Tensor::new(vec![240, 8], stream.data().repeat(3)).unwrap();
        let tape = Tape::new();
        let g = Graph::new(&tape, &store);
        let a = model.head(&g, tape.constant(tripled)).unwrap();
        let b = single.head(&g, tape.constant(stream)).unwrap();
        assert!(tape.value(a.heat).max_abs_diff(&tape.value(b.heat)) < 1e-12);
        assert!(tape.value(a.size).max_abs_diff(&tape.value(b.size)) < 1e-12);
    }
}
