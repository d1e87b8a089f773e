//! Forward-only cost of fusing four token streams: the fusion block against
//! two joint-attention baselines.
//!
//! * attention-A: RGB joined with each other modality, three attention blocks
//!   over `2N` tokens each.
//! * attention-B: one attention block over all `4N` tokens.

use std::time::Instant;

use quadscan::mfm::{MfmBlock, MfmConfig};
use quadscan::numerics::params::init;
use quadscan::numerics::{flops, Graph, ParamId, ParamStore, Tape, Tensor, Var};
use quadscan::scanorders::{all_orders, ScanScale, TokenGeometry};
use quadscan::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODALITIES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub dim: usize,
    pub d_state: usize,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    /// Tokens per modality.
    pub n: usize,
    pub mfm_flops: u64,
    pub attn_a_flops: u64,
    pub attn_b_flops: u64,
    pub mfm_ms: f64,
    pub attn_a_ms: f64,
    pub attn_b_ms: f64,
}

/// Single-head attention with residual: Q/K/V/out projections, scores, their
/// scaling, softmax, mix.
pub fn attention_flops(len: u64, dim: u64) -> u64 {
    4 * len * dim * dim + 2 * len * len * dim + 2 * len * len
}

struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    dim: usize,
}

impl Attention {
    fn new(store: &mut ParamStore<f32>, rng: &mut impl Rng, dim: usize) -> Self {
        let mut w = |name: &str| store.add(name, init::fan_in(rng, dim, dim));
        Attention {
            wq: w("q"),
            wk: w("k"),
            wv: w("v"),
            wo: w("o"),
            dim,
        }
    }

    fn forward(&self, g: &Graph<'_, f32>, x: Var) -> Result<Var> {
        let t = g.tape;
        let q = t.matmul(x, g.param(self.wq))?;
        let k = t.matmul(x, g.param(self.wk))?;
        let v = t.matmul(x, g.param(self.wv))?;
        let a = t.softmax(t.scale(t.matmul_nt(q, k)?, 1.0 / (self.dim as f32).sqrt()));
        let y = t.matmul(t.matmul(a, v)?, g.param(self.wo))?;
        t.add(x, y)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Median wall time (ms) of `runs` calls after `warmup` calls, plus the FLOPs of one call.
fn time(cfg: &BenchConfig, mut f: impl FnMut() -> Result<()>) -> Result<(f64, u64)> {
    for _ in 0..cfg.warmup {
        f()?;
    }
    let (r, count) = flops::measure(&mut f);
    r?;
    let mut ms = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs.max(1) {
        let t0 = Instant::now();
        f()?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(ms), count))
}

pub fn geometry_for(n: usize) -> Result<TokenGeometry> {
    if n == 0 || !n.is_multiple_of(5) {
        return Err(Error::Config(format!(
            "bench length {n} must be a positive multiple of 5 (N = N_z + 4·N_z)"
        )));
    }
    TokenGeometry::new(MODALITIES, n / 5, 4 * n / 5)
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.lengths.is_empty() {
        return Err(Error::Config("no bench lengths given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    let mfm = MfmBlock::new(
        &mut store,
        "mfm",
        MfmConfig {
            d_state: cfg.d_state,
            ..MfmConfig::new(cfg.dim, ScanScale::ALL.to_vec())
        },
        &mut rng,
    )?;
    let attn = Attention::new(&mut store, &mut rng, cfg.dim);
    let mut rows = Vec::new();
    for &n in &cfg.lengths {
        let geo = geometry_for(n)?;
        let orders = all_orders(&geo);
        let x = Tensor::from_fn(vec![geo.total_tokens(), cfg.dim], |_| rng.random_range(-1.0..1.0f32));
        let (mfm_ms, mfm_flops) = time(cfg, || {
            let tape = Tape::new();
            let g = Graph::frozen(&tape, &store);
            mfm.forward(&g, tape.constant(x.clone()), &geo, &orders).map(|_| ())
        })?;
        let (attn_a_ms, attn_a_flops) = time(cfg, || {
            let tape = Tape::new();
            let g = Graph::frozen(&tape, &store);
            let h = tape.constant(x.clone());
            let rgb = tape.slice_rows(h, 0, n)?;
            for m in 1..MODALITIES {
                let pair = tape.concat_rows(&[rgb, tape.slice_rows(h, m * n, n)?])?;
                attn.forward(&g, pair)?;
            }
            Ok(())
        })?;
        let (attn_b_ms, attn_b_flops) = time(cfg, || {
            let tape = Tape::new();
            let g = Graph::frozen(&tape, &store);
            attn.forward(&g, tape.constant(x.clone())).map(|_| ())
        })?;
        rows.push(BenchRow {
            n,
            mfm_flops,
            attn_a_flops,
            attn_b_flops,
            mfm_ms,
            attn_a_ms,
            attn_b_ms,
        });
    }
    Ok(rows)
}

/// Coefficient of determination of the least-squares line through the points.
pub fn affine_r2(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    1.0 - sse / syy
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,tokens,mfm_flops,attn_a_flops,attn_b_flops,mfm_ms,attn_a_ms,attn_b_ms\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{:.4},{:.4},{:.4}\n",
            r.n,
            MODALITIES * r.n,
            r.mfm_flops,
            r.attn_a_flops,
            r.attn_b_flops,
            r.mfm_ms,
            r.attn_a_ms,
            r.attn_b_ms
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub mfm_r2: f64,
    /// Ratios between consecutive lengths, which double in the default sweep.
    pub attn_b_flop_ratios: Vec<f64>,
    pub mfm_time_ratios: Vec<f64>,
}

pub fn scaling(rows: &[BenchRow]) -> Scaling {
    let xs: Vec<f64> = rows.iter().map(|r| (MODALITIES * r.n) as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mfm_flops as f64).collect();
    let ratio = |f: &dyn Fn(&BenchRow) -> f64| rows.windows(2).map(|w| f(&w[1]) / f(&w[0])).collect();
    Scaling {
        mfm_r2: affine_r2(&xs, &ys),
        attn_b_flop_ratios: ratio(&|r| r.attn_b_flops as f64),
        mfm_time_ratios: ratio(&|r| r.mfm_ms),
    }
}

pub fn summary(rows: &[BenchRow]) -> String {
    let s = scaling(rows);
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    format!(
        "mfm_flops_affine_r2 = {:.8}\nattn_b_flop_ratio = {}\nmfm_time_ratio = {}\n",
        s.mfm_r2,
        list(&s.attn_b_flop_ratios),
        list(&s.mfm_time_ratios)
    )
}
