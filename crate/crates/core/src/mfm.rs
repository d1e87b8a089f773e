//! Multiscale fusion block.
//!
//! The concatenated modality-major token sequence is projected once into a
//! signal branch `x` and a gate branch `z`. Each enabled scan path reorders
//! `x` along its scan order, runs conv → SiLU → selective scan, and restores
//! canonical order. The path outputs are averaged, gated by `silu(z)`,
//! projected back and added to the input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::params::init;
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::scanorders::{ScanOrder, ScanScale, TokenGeometry};
use crate::ssm::{self, conv_var, scan_var};

/// Sizes of one block. `paths` lists the enabled scan scales.
#[derive(Clone, Debug, PartialEq)]
pub struct MfmConfig {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub paths: Vec<ScanScale>,
}

impl MfmConfig {
    pub fn new(d_model: usize, paths: Vec<ScanScale>) -> Self {
        MfmConfig {
            d_model,
            d_inner: d_model,
            d_state: ssm::DEFAULT_D_STATE,
            conv_width: ssm::DEFAULT_CONV_WIDTH,
            paths,
        }
    }
}

/// Named ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// forward + backward
    Mamba,
    /// forward + backward + region
    MambaV2,
    /// forward + backward + token
    MambaV3,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mamba, Variant::MambaV2, Variant::MambaV3, Variant::Full];

    pub fn paths(self) -> Vec<ScanScale> {
        use ScanScale::*;
        match self {
            Variant::Mamba => vec![Forward, Backward],
            Variant::MambaV2 => vec![Forward, Backward, Region],
            Variant::MambaV3 => vec![Forward, Backward, Token],
            Variant::Full => vec![Forward, Backward, Region, Token],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mamba => "w/mamba",
            Variant::MambaV2 => "w/mamba-v2",
            Variant::MambaV3 => "w/mamba-v3",
            Variant::Full => "full",
        }
    }
}

/// Parses `forward,backward,...`; order is normalised and duplicates rejected.
pub fn parse_paths(s: &str) -> Result<Vec<ScanScale>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let scale: ScanScale = part.parse()?;
        if out.contains(&scale) {
            return Err(Error::Config(format!("scan path {part} listed twice")));
        }
        out.push(scale);
    }
    normalise_paths(out)
}

fn normalise_paths(paths: Vec<ScanScale>) -> Result<Vec<ScanScale>> {
    if paths.is_empty() {
        return Err(Error::Config("at least one scan path must be enabled".into()));
    }
    Ok(ScanScale::ALL.into_iter().filter(|s| paths.contains(s)).collect())
}

#[derive(Clone, Copy, Debug)]
struct PathParams {
    conv: ParamId,
    conv_bias: ParamId,
    dt_w: ParamId,
    dt_b: ParamId,
    a_log: ParamId,
    d: ParamId,
    b_w: ParamId,
    c_w: ParamId,
}

impl PathParams {
    fn ids(&self) -> [ParamId; 8] {
        [
            self.conv,
            self.conv_bias,
            self.dt_w,
            self.dt_b,
            self.a_log,
            self.d,
            self.b_w,
            self.c_w,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct MfmBlock {
    cfg: MfmConfig,
    in_x: ParamId,
    in_z: ParamId,
    out: ParamId,
    /// Indexed like [`ScanScale::ALL`]; only registered paths are `Some`.
    paths: [Option<PathParams>; 4],
}

fn slot(scale: ScanScale) -> usize {
    ScanScale::ALL.iter().position(|&s| s == scale).expect("scale in ALL")
}

impl MfmBlock {
    /// Registers the block's parameters under `prefix` (only for enabled paths).
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: MfmConfig, rng: &mut impl Rng) -> Result<Self> {
        let paths_enabled = normalise_paths(cfg.paths.clone())?;
        let cfg = MfmConfig {
            paths: paths_enabled,
            ..cfg
        };
        let (c, ci, ns) = (cfg.d_model, cfg.d_inner, cfg.d_state);
        if c == 0 || ci == 0 || ns == 0 || cfg.conv_width == 0 {
            return Err(Error::Config("fusion block sizes must be positive".into()));
        }
        let in_x = store.add(format!("{prefix}.in_x"), init::fan_in(rng, c, ci));
        let in_z = store.add(format!("{prefix}.in_z"), init::fan_in(rng, c, ci));
        // Small output projection: the block starts close to the identity.
        let out = store.add(format!("{prefix}.out"), init::normal(rng, &[ci, c], 0.02));
        let mut paths = [None; 4];
        for &scale in &cfg.paths {
            let p = ssm::SelectiveScanParams::<T>::init(rng, ci, ns, cfg.conv_width);
            let pre = format!("{prefix}.{}", scale.name());
            paths[slot(scale)] = Some(PathParams {
                conv: store.add(format!("{pre}.conv"), p.conv),
                conv_bias: store.add(format!("{pre}.conv_bias"), p.conv_bias),
                dt_w: store.add(format!("{pre}.dt_w"), p.dt_w),
                dt_b: store.add(format!("{pre}.dt_b"), p.dt_b),
                a_log: store.add(format!("{pre}.a_log"), p.a_log),
                d: store.add(format!("{pre}.d"), p.d),
                b_w: store.add(format!("{pre}.b_w"), p.b_w),
                c_w: store.add(format!("{pre}.c_w"), p.c_w),
            });
        }
        Ok(MfmBlock {
            cfg,
            in_x,
            in_z,
            out,
            paths,
        })
    }

    pub fn config(&self) -> &MfmConfig {
        &self.cfg
    }

    pub fn enabled(&self) -> &[ScanScale] {
        &self.cfg.paths
    }

    /// Restricts the block to a subset of its registered paths.
    pub fn variant(&self, paths: &[ScanScale]) -> Result<Self> {
        let paths = normalise_paths(paths.to_vec())?;
        let mut out = self.clone();
        for (i, s) in ScanScale::ALL.into_iter().enumerate() {
            if !paths.contains(&s) {
                out.paths[i] = None;
            } else if self.paths[i].is_none() {
                return Err(Error::Config(format!("scan path {s} was not built into this block")));
            }
        }
        out.cfg.paths = paths;
        Ok(out)
    }

    /// Parameter ids the forward pass reads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.in_x, self.in_z, self.out];
        for p in self.paths.iter().flatten() {
            ids.extend(p.ids());
        }
        ids
    }

    pub fn out_proj(&self) -> ParamId {
        self.out
    }

    /// Analytic parameter count for the enabled paths.
    pub fn count_params(&self) -> usize {
        let MfmConfig {
            d_model: c,
            d_inner: ci,
            d_state: ns,
            conv_width: w,
            ..
        } = self.cfg;
        let per_path = w * ci + ci + ci * ci + ci + ci * ns + ci + 2 * ci * ns;
        3 * c * ci + self.cfg.paths.len() * per_path
    }

    /// Analytic multiply count of one forward pass, using the same accounting
    /// as the instrumented kernels (matmul m·k·n, elementwise ops n, scan
    /// `4·L·D·N + 2·L·D`, conv `L·D·w`).
    pub fn count_flops(&self, geo: &TokenGeometry) -> u64 {
        let t = geo.total_tokens() as u64;
        let (c, ci) = (self.cfg.d_model as u64, self.cfg.d_inner as u64);
        let k = self.cfg.paths.len() as u64;
        // in/gate projections, merge scale, gate silu and product, out projection
        let shared = 2 * t * c * ci + 3 * t * ci + t * ci * c;
        k * self.path_flops(t) + shared
    }

    /// Multiplies attributable to one scan path over `t` tokens.
    pub fn path_flops(&self, t: u64) -> u64 {
        let (ci, ns, w) = (
            self.cfg.d_inner as u64,
            self.cfg.d_state as u64,
            self.cfg.conv_width as u64,
        );
        t * ci * w + t * ci + t * ci * ci + 2 * t * ci * ns + 4 * t * ci * ns + 2 * t * ci
    }

    /// `h` is the canonical `(M·N) × C` sequence; `orders` are the scan orders
    /// for its geometry (see [`crate::scanorders::all_orders`]).
    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, h: Var, geo: &TokenGeometry, orders: &[ScanOrder]) -> Result<Var> {
        let tape = g.tape;
        let shape = tape.shape(h);
        if shape.len() != 2 || shape[0] != geo.total_tokens() || shape[1] != self.cfg.d_model {
            return Err(Error::shape(
                "mfm_forward",
                format!(
                    "input {:?}, expected [{}, {}]",
                    shape,
                    geo.total_tokens(),
                    self.cfg.d_model
                ),
            ));
        }
        let x = tape.matmul(h, g.param(self.in_x))?;
        let z = tape.matmul(h, g.param(self.in_z))?;
        let mut merged: Option<Var> = None;
        for &scale in &self.cfg.paths {
            let p = self.paths[slot(scale)].as_ref().expect("enabled paths are registered");
            let order = orders
                .iter()
                .find(|o| o.scale() == scale)
                .ok_or_else(|| Error::Contract(format!("no {scale} order supplied")))?;
            let xp = order.apply_var(tape, x)?;
            let y = self.path_forward(g, p, xp)?;
            let y = order.unapply_var(tape, y)?;
            merged = Some(match merged {
                None => y,
                Some(acc) => tape.add(acc, y)?,
            });
        }
        let merged = tape.scale(
            merged.expect("at least one path"),
            T::lit(1.0 / self.cfg.paths.len() as f64),
        );
        let gated = tape.mul(merged, tape.silu(z))?;
        let out = tape.matmul(gated, g.param(self.out))?;
        tape.add(h, out)
    }

    fn path_forward<T: Real>(&self, g: &Graph<'_, T>, p: &PathParams, x: Var) -> Result<Var> {
        let tape = g.tape;
        let conv = conv_var(tape, x, g.param(p.conv))?;
        let u = tape.silu(tape.add(conv, g.param(p.conv_bias))?);
        let delta = tape.softplus(tape.linear(u, g.param(p.dt_w), Some(g.param(p.dt_b)))?);
        let b = tape.matmul(u, g.param(p.b_w))?;
        let c = tape.matmul(u, g.param(p.c_w))?;
        scan_var(tape, u, delta, g.param(p.a_log), b, c, g.param(p.d))
    }

    /// Plain per-path scan parameters (for oracles and inspection).
    pub fn path_params<T: Real>(&self, store: &ParamStore<T>, scale: ScanScale) -> Option<ssm::SelectiveScanParams<T>> {
        let p = self.paths[slot(scale)].as_ref()?;
        Some(ssm::SelectiveScanParams {
            d_model: self.cfg.d_inner,
            d_state: self.cfg.d_state,
            a_log: store.get(p.a_log).clone(),
            d: store.get(p.d).clone(),
            dt_w: store.get(p.dt_w).clone(),
            dt_b: store.get(p.dt_b).clone(),
            b_w: store.get(p.b_w).clone(),
            c_w: store.get(p.c_w).clone(),
            conv: store.get(p.conv).clone(),
            conv_bias: store.get(p.conv_bias).clone(),
        })
    }

    pub fn projections<'s, T: Real>(&self, store: &'s ParamStore<T>) -> (&'s Tensor<T>, &'s Tensor<T>, &'s Tensor<T>) {
        (store.get(self.in_x), store.get(self.in_z), store.get(self.out))
    }
}

/// Gated SSM block on an already-ordered sequence, built from the plain
/// kernels in [`crate::ssm`]: `h + ((ssm(silu(conv(h·Wx))) ∘ silu(h·Wz)) · Wout)`.
pub fn plain_gated_ssm<T: Real>(
    h: &Tensor<T>,
    in_x: &Tensor<T>,
    in_z: &Tensor<T>,
    out: &Tensor<T>,
    p: &ssm::SelectiveScanParams<T>,
) -> Result<Tensor<T>> {
    use crate::numerics::linalg::gemm;
    let (len, c) = h.dims2()?;
    let ci = p.d_model;
    let x = gemm(h.data(), in_x.data(), len, c, ci);
    let z = gemm(h.data(), in_z.data(), len, c, ci);
    let mut u = ssm::causal_depthwise_conv(&x, p.conv.data(), len, ci)?;
    for row in u.chunks_mut(ci) {
        for (v, &b) in row.iter_mut().zip(p.conv_bias.data()) {
            let a = *v + b;
            *v = a * crate::numerics::tape_sigmoid(a);
        }
    }
    let y = ssm::selective_scan(&Tensor::new(vec![len, ci], u)?, p, None, false)?.y;
    let gated: Vec<T> = y
        .data()
        .iter()
        .zip(&z)
        .map(|(&a, &zv)| a * (zv * crate::numerics::tape_sigmoid(zv)))
        .collect();
    let o = gemm(&gated, out.data(), len, ci, c);
    Tensor::new(vec![len, c], h.data().iter().zip(o).map(|(&a, b)| a + b).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradcheck::{check, spread_probe};
    use crate::numerics::{flops, Tape};
    use crate::scanorders::all_orders;

    fn setup(c: usize, paths: Vec<ScanScale>, seed: u64) -> (ParamStore<f64>, MfmBlock) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut cfg = MfmConfig::new(c, paths);
        cfg.d_state = 4;
        let block = MfmBlock::new(&mut store, "mfm", cfg, &mut rng).unwrap();
        // Larger output projection so the fused term is visible in tests.
        let out = init::normal(&mut rng, &[c, c], 0.5);
        *store.get_mut(block.out) = out;
        (store, block)
    }

    fn input(geo: &TokenGeometry, c: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![geo.total_tokens(), c], |_| rng.random_range(-1.0..1.0))
    }

    fn run(store: &ParamStore<f64>, block: &MfmBlock, geo: &TokenGeometry, h: &Tensor<f64>) -> Tensor<f64> {
        let tape = Tape::new();
        let g = Graph::new(&tape, store);
        let hv = tape.constant(h.clone());
        let y = block.forward(&g, hv, geo, &all_orders(geo)).unwrap();
        tape.value(y)
    }

    #[test]
    fn variants_enable_expected_paths() {
        assert_eq!(Variant::Full.paths().len(), 4);
        assert_eq!(Variant::Mamba.paths().len(), 2);
        let v2 = Variant::MambaV2.paths();
        let v3 = Variant::MambaV3.paths();
        assert_eq!(v2[..2], v3[..2]);
        assert_eq!(v2[2], ScanScale::Region);
        assert_eq!(v3[2], ScanScale::Token);
        assert!(matches!(parse_paths(""), Err(Error::Config(_))));
        assert_eq!(
            parse_paths("token, forward").unwrap(),
            vec![ScanScale::Forward, ScanScale::Token]
        );
        assert!(parse_paths("forward,forward").is_err());
    }

    #[test]
    fn variant_of_full_block_and_param_counts() {
        let (_, full) = setup(8, Variant::Full.paths(), 1);
        let counts: Vec<usize> = Variant::ALL
            .iter()
            .map(|v| full.variant(&v.paths()).unwrap().count_params())
            .collect();
        assert!(counts[3] > counts[2] && counts[2] >= counts[1] && counts[1] > counts[0] && counts[0] > 0);
        assert!(matches!(full.variant(&[]), Err(Error::Config(_))));
        let (_, two) = setup(8, Variant::Mamba.paths(), 1);
        assert!(two.variant(&[ScanScale::Region]).is_err());
    }

    #[test]
    fn count_params_matches_store() {
        let (store, block) = setup(8, Variant::Full.paths(), 2);
        let stored: usize = store.iter().map(|(_, _, t)| t.len()).sum();
        assert_eq!(block.count_params(), stored);
        assert_eq!(store.count(block.param_ids()), stored);
    }

    #[test]
    fn zeroed_scan_outputs_leave_residual_only() {
        let geo = TokenGeometry::new(4, 1, 4).unwrap();
        let (mut store, block) = setup(8, Variant::Full.paths(), 3);
        for s in ScanScale::ALL {
            let p = block.paths[slot(s)].unwrap();
            *store.get_mut(p.c_w) = Tensor::zeros(store.get(p.c_w).shape().to_vec());
            *store.get_mut(p.d) = Tensor::zeros(store.get(p.d).shape().to_vec());
        }
        let h = input(&geo, 8, 4);
        assert_eq!(run(&store, &block, &geo, &h).data(), h.data());
    }

    #[test]
    fn zero_out_projection_is_identity() {
        let geo = TokenGeometry::new(3, 4, 16).unwrap();
        let (mut store, block) = setup(6, Variant::Full.paths(), 5);
        *store.get_mut(block.out) = Tensor::zeros(vec![6, 6]);
        let h = input(&geo, 6, 6);
        assert_eq!(run(&store, &block, &geo, &h).data(), h.data());
    }

    #[test]
    fn forward_only_equals_plain_gated_ssm() {
        let geo = TokenGeometry::new(2, 4, 16).unwrap();
        let (store, block) = setup(8, vec![ScanScale::Forward], 7);
        let h = input(&geo, 8, 8);
        let (ix, iz, o) = block.projections(&store);
        let p = block.path_params(&store, ScanScale::Forward).unwrap();
        let oracle = plain_gated_ssm(&h, ix, iz, o, &p).unwrap();
        assert!(run(&store, &block, &geo, &h).max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn single_path_is_permutation_conjugate() {
        let geo = TokenGeometry::new(4, 1, 4).unwrap();
        let (store, full) = setup(8, Variant::Full.paths(), 9);
        let h = input(&geo, 8, 10);
        let (ix, iz, o) = full.projections(&store);
        for order in all_orders(&geo) {
            let single = full.variant(&[order.scale()]).unwrap();
            let p = full.path_params(&store, order.scale()).unwrap();
            let conj = order
                .unapply(&plain_gated_ssm(&order.apply(&h).unwrap(), ix, iz, o, &p).unwrap())
                .unwrap();
            let got = run(&store, &single, &geo, &h);
            assert!(got.max_abs_diff(&conj) < 1e-12, "{}", order.scale());
            assert!(got.all_finite());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let geo = TokenGeometry::new(4, 1, 4).unwrap();
        let (store, block) = setup(8, Variant::Full.paths(), 11);
        let tape = Tape::new();
        let g = Graph::new(&tape, &store);
        let h = tape.constant(Tensor::zeros(vec![19, 8]));
        assert!(matches!(
            block.forward(&g, h, &geo, &all_orders(&geo)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn flop_count_matches_instrumentation() {
        let geo = TokenGeometry::new(4, 1, 4).unwrap();
        for v in Variant::ALL {
            let (store, block) = setup(8, v.paths(), 12);
            let h = input(&geo, 8, 13);
            let (_, measured) = flops::measure(|| run(&store, &block, &geo, &h));
            let analytic = block.count_flops(&geo);
            let rel = (measured as f64 - analytic as f64).abs() / analytic as f64;
            assert!(rel < 0.05, "{}: measured {measured} analytic {analytic}", v.name());
        }
    }

    #[test]
    fn flops_linear_in_tokens_and_per_path() {
        let (_, block) = setup(8, Variant::Full.paths(), 14);
        let f = |nz: usize| block.count_flops(&TokenGeometry::new(4, nz, 4 * nz).unwrap());
        let (a, b, c) = (f(4), f(16), f(64));
        assert_eq!(b - a, (c - b) / 4);
        assert_eq!(block.path_flops(640), 2 * block.path_flops(320));
        let geo = TokenGeometry::new(4, 4, 16).unwrap();
        let three = block.variant(&Variant::MambaV2.paths()).unwrap();
        assert_eq!(
            block.count_flops(&geo) - three.count_flops(&geo),
            block.path_flops(geo.total_tokens() as u64)
        );
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let geo = TokenGeometry::new(4, 1, 4).unwrap();
        let (mut store, block) = setup(8, Variant::Full.paths(), 15);
        // Init step sizes are tiny; widen them so every gradient is well above FD noise.
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for s in ScanScale::ALL {
            let p = block.paths[slot(s)].unwrap();
            *store.get_mut(p.dt_w) = init::normal(&mut rng, &[8, 8], 0.3);
            *store.get_mut(p.dt_b) = Tensor::from_fn(vec![8], |_| rng.random_range(-1.0..0.5));
        }
        let h = input(&geo, 8, 16);
        let w = input(&geo, 8, 17);
        type Eval = (f64, Tensor<f64>, Vec<Option<Tensor<f64>>>);
        let loss = |store: &ParamStore<f64>, h: &Tensor<f64>| -> Result<Eval> {
            let tape = Tape::new();
            let g = Graph::new(&tape, store);
            let hv = tape.leaf(h.clone());
            let y = block.forward(&g, hv, &geo, &all_orders(&geo))?;
            let l = tape.sum(tape.mul(y, tape.constant(w.clone()))?);
            let grads = tape.backward(l)?;
            Ok((tape.value(l).item()?, grads.get_or_zeros(hv, h), g.param_grads(&grads)))
        };
        let (_, gh, gp) = loss(&store, &h).unwrap();
        let r = check(&h, &gh, 1e-5, None, |hv| Ok(loss(&store, hv)?.0)).unwrap();
        assert!(r.max_rel_err < 1e-4, "input: {}", r.max_rel_err);
        for id in store.ids().collect::<Vec<_>>() {
            let base = store.get(id).clone();
            let analytic = gp[id.index()].clone().unwrap();
            let probe = spread_probe(base.len(), 24);
            // Loss is O(10); a larger step keeps roundoff below the tiny dt gradients.
            let r = check(&base, &analytic, 1e-4, Some(&probe), |v| {
                let mut s = store.clone();
                *s.get_mut(id) = v.clone();
                Ok(loss(&s, &h)?.0)
            })
            .unwrap();
            assert!(
                r.max_rel_err < 1e-4,
                "{}: {} abs {} at {} grad {}",
                store.name(id),
                r.max_rel_err,
                r.max_abs_err,
                r.worst_index,
                analytic.data()[r.worst_index]
            );
        }
    }
}
