//! Selective state-space scan (Mamba-style S6 recurrence).
//!
//! For each channel `d` and state index `n`:
//!
//! ```text
//!   Δ_t   = softplus(x_t · W_Δ + b_Δ)          (per channel)
//!   Ā_t   = exp(Δ_t · A),  A = −exp(A_log)      (zero-order hold)
//!   B̄_t   = Δ_t · B(x_t)                         (Euler)
//!   h_t   = Ā_t ∘ h_{t−1} + B̄_t · x_t
//!   y_t   = ⟨C(x_t), h_t⟩ + D ∘ x_t
//! ```
//!
//! The recurrence itself ([`scan_core`]) is separate from the projections so
//! the tape-level block can compute Δ, B and C with ordinary recorded ops.
//! Within one sequence the scan is strictly sequential; cost is linear in L.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::linalg::{gemm, gemm_nt, gemm_tn};
use crate::numerics::params::init;
use crate::numerics::{flops, CustomOp, Real, Tape, Tensor, Var};

pub const DEFAULT_D_STATE: usize = 8;
pub const DEFAULT_CONV_WIDTH: usize = 4;

fn first_non_finite<T: Real>(v: &[T], cols: usize) -> Option<String> {
    v.iter()
        .position(|x| !x.is_finite())
        .map(|i| format!("t={}, channel={}", i / cols, i % cols))
}

/// Everything the reverse recurrence needs from a forward scan.
#[derive(Clone, Debug)]
pub struct ScanTrace<T> {
    pub len: usize,
    pub d_model: usize,
    pub d_state: usize,
    x: Vec<T>,
    delta: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    d: Vec<T>,
    h0: Vec<T>,
    /// `h_t` after each step, `L × D × N`.
    states: Vec<T>,
}

impl<T: Real> ScanTrace<T> {
    pub fn final_state(&self) -> &[T] {
        let dn = self.d_model * self.d_state;
        &self.states[(self.len - 1) * dn..]
    }
}

/// Gradients of [`scan_core`] inputs.
#[derive(Clone, Debug)]
pub struct ScanCoreGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    /// With respect to `A` itself (not `A_log`).
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d: Vec<T>,
    pub h0: Vec<T>,
}

/// Shape and finiteness checks shared by both forward entry points; returns `h0`.
#[allow(clippy::too_many_arguments)]
fn check_scan_inputs<T: Real>(
    x: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    h0: Option<&[T]>,
    len: usize,
    dm: usize,
    ds: usize,
) -> Result<Vec<T>> {
    if len == 0 {
        return Err(Error::Contract("scan needs at least one step".into()));
    }
    let expect = [
        ("x", x.len(), len * dm),
        ("delta", delta.len(), len * dm),
        ("A", a.len(), dm * ds),
        ("B", b.len(), len * ds),
        ("C", c.len(), len * ds),
        ("D", d.len(), dm),
    ];
    for (name, got, want) in expect {
        if got != want {
            return Err(Error::shape(
                "selective_scan",
                format!("{name}: {got} values, expected {want}"),
            ));
        }
    }
    if let Some(pos) = first_non_finite(x, dm) {
        return Err(Error::NonFinite {
            what: "scan input",
            position: pos,
        });
    }
    if let Some(pos) = first_non_finite(delta, dm) {
        return Err(Error::NonFinite {
            what: "scan step size",
            position: pos,
        });
    }
    match h0 {
        Some(h) if h.len() != dm * ds => Err(Error::shape("selective_scan", "h0 must be d_model × d_state")),
        Some(h) => Ok(h.to_vec()),
        None => Ok(vec![T::zero(); dm * ds]),
    }
}

/// The recurrence itself. Updates `h` in place; `states` receives `h_t` after
/// every step when given.
#[allow(clippy::too_many_arguments)]
fn recurrence<T: Real>(
    x: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    h: &mut [T],
    mut states: Option<&mut [T]>,
    len: usize,
    dm: usize,
    ds: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); len * dm];
    for t in 0..len {
        let bt = &b[t * ds..(t + 1) * ds];
        let ct = &c[t * ds..(t + 1) * ds];
        for ch in 0..dm {
            let xv = x[t * dm + ch];
            let dt = delta[t * dm + ch];
            let dx = dt * xv;
            let mut acc = T::zero();
            for n in 0..ds {
                let i = ch * ds + n;
                let abar = (dt * a[i]).exp();
                h[i] = abar * h[i] + dx * bt[n];
                acc += ct[n] * h[i];
            }
            y[t * dm + ch] = acc + d[ch] * xv;
        }
        if let Some(st) = states.as_deref_mut() {
            st[t * dm * ds..(t + 1) * dm * ds].copy_from_slice(h);
        }
    }
    flops::record((len * dm * (4 * ds + 2)) as u64);
    y
}

/// Runs the recurrence given already-discretized inputs.
///
/// Shapes: `x`, `delta`: `L × D`; `a`: `D × N` (continuous-time, negative);
/// `b`, `c`: `L × N`; `d`: `D`; `h0`: `D × N` or zeros.
#[allow(clippy::too_many_arguments)]
pub fn scan_core<T: Real>(
    x: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    h0: Option<&[T]>,
    len: usize,
    d_model: usize,
    d_state: usize,
) -> Result<(Vec<T>, ScanTrace<T>)> {
    let (dm, ds) = (d_model, d_state);
    let h0 = check_scan_inputs(x, delta, a, b, c, d, h0, len, dm, ds)?;
    let mut h = h0.clone();
    let mut states = vec![T::zero(); len * dm * ds];
    let y = recurrence(x, delta, a, b, c, d, &mut h, Some(&mut states), len, dm, ds);
    let trace = ScanTrace {
        len,
        d_model: dm,
        d_state: ds,
        x: x.to_vec(),
        delta: delta.to_vec(),
        a: a.to_vec(),
        b: b.to_vec(),
        c: c.to_vec(),
        d: d.to_vec(),
        h0,
        states,
    };
    Ok((y, trace))
}

/// [`scan_core`] without the trace: returns `y` and the final state. Memory is
/// `O(D·N)` instead of `O(L·D·N)`.
#[allow(clippy::too_many_arguments)]
pub fn scan_core_forward<T: Real>(
    x: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    h0: Option<&[T]>,
    len: usize,
    d_model: usize,
    d_state: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut h = check_scan_inputs(x, delta, a, b, c, d, h0, len, d_model, d_state)?;
    let y = recurrence(x, delta, a, b, c, d, &mut h, None, len, d_model, d_state);
    Ok((y, h))
}

/// Reverse recurrence over `t = L−1 … 0`.
///
/// `dh_last` is an optional upstream gradient on the final state.
pub fn scan_core_backward<T: Real>(tr: &ScanTrace<T>, dy: &[T], dh_last: Option<&[T]>) -> Result<ScanCoreGrads<T>> {
    let (len, dm, ds) = (tr.len, tr.d_model, tr.d_state);
    if dy.len() != len * dm {
        return Err(Error::shape("selective_scan_backward", "dy must be L × D"));
    }
    let mut g = ScanCoreGrads {
        x: vec![T::zero(); len * dm],
        delta: vec![T::zero(); len * dm],
        a: vec![T::zero(); dm * ds],
        b: vec![T::zero(); len * ds],
        c: vec![T::zero(); len * ds],
        d: vec![T::zero(); dm],
        h0: vec![T::zero(); dm * ds],
    };
    let mut dh = match dh_last {
        Some(v) => v.to_vec(),
        None => vec![T::zero(); dm * ds],
    };
    for t in (0..len).rev() {
        let h_t = &tr.states[t * dm * ds..(t + 1) * dm * ds];
        let h_prev = if t == 0 {
            &tr.h0[..]
        } else {
            &tr.states[(t - 1) * dm * ds..t * dm * ds]
        };
        let bt = &tr.b[t * ds..(t + 1) * ds];
        let ct = &tr.c[t * ds..(t + 1) * ds];
        for ch in 0..dm {
            let gy = dy[t * dm + ch];
            let xv = tr.x[t * dm + ch];
            let dt = tr.delta[t * dm + ch];
            g.d[ch] += gy * xv;
            let mut gx = gy * tr.d[ch];
            let mut gdelta = T::zero();
            for n in 0..ds {
                let i = ch * ds + n;
                // y_t = Σ C h_t  →  dh_t += gy·C,  dC += gy·h_t
                dh[i] += gy * ct[n];
                g.c[t * ds + n] += gy * h_t[i];
                let abar = (dt * tr.a[i]).exp();
                // h_t = Ā h_{t−1} + Δ B x
                let g_abar = dh[i] * h_prev[i] * abar;
                gdelta += g_abar * tr.a[i] + dh[i] * bt[n] * xv;
                g.a[i] += g_abar * dt;
                g.b[t * ds + n] += dh[i] * dt * xv;
                gx += dh[i] * dt * bt[n];
                dh[i] *= abar;
            }
            g.x[t * dm + ch] = gx;
            g.delta[t * dm + ch] = gdelta;
        }
    }
    g.h0 = dh;
    Ok(g)
}

/// Depthwise causal convolution with zero left-padding: `y_t = Σ_j k[j]·x_{t−j}`.
///
/// `kernel` is `w × D`; row `j` weights lag `j`.
pub fn causal_depthwise_conv<T: Real>(x: &[T], kernel: &[T], len: usize, channels: usize) -> Result<Vec<T>> {
    if kernel.is_empty() || !kernel.len().is_multiple_of(channels) {
        return Err(Error::shape("causal_conv", "kernel must be w × D with w ≥ 1"));
    }
    if x.len() != len * channels {
        return Err(Error::shape("causal_conv", "x must be L × D"));
    }
    let width = kernel.len() / channels;
    let mut y = vec![T::zero(); len * channels];
    for t in 0..len {
        for j in 0..width.min(t + 1) {
            let src = &x[(t - j) * channels..(t - j + 1) * channels];
            let k = &kernel[j * channels..(j + 1) * channels];
            let out = &mut y[t * channels..(t + 1) * channels];
            for ch in 0..channels {
                out[ch] += k[ch] * src[ch];
            }
        }
    }
    flops::record((len * channels * width) as u64);
    Ok(y)
}

/// Returns `(dx, dkernel)`.
pub fn causal_depthwise_conv_backward<T: Real>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    len: usize,
    channels: usize,
) -> (Vec<T>, Vec<T>) {
    let width = kernel.len() / channels;
    let mut dx = vec![T::zero(); len * channels];
    let mut dk = vec![T::zero(); kernel.len()];
    for t in 0..len {
        for j in 0..width.min(t + 1) {
            for ch in 0..channels {
                let g = dy[t * channels + ch];
                dx[(t - j) * channels + ch] += g * kernel[j * channels + ch];
                dk[j * channels + ch] += g * x[(t - j) * channels + ch];
            }
        }
    }
    (dx, dk)
}

/// Parameters of one selective-scan path, as plain tensors.
#[derive(Clone, Debug)]
pub struct SelectiveScanParams<T> {
    pub d_model: usize,
    pub d_state: usize,
    /// `D × N`; `A = −exp(A_log)`.
    pub a_log: Tensor<T>,
    /// `D` skip gains.
    pub d: Tensor<T>,
    /// `D × D` step-size projection.
    pub dt_w: Tensor<T>,
    pub dt_b: Tensor<T>,
    /// `D × N`
    pub b_w: Tensor<T>,
    /// `D × N`
    pub c_w: Tensor<T>,
    /// `w × D` causal depthwise kernel.
    pub conv: Tensor<T>,
    pub conv_bias: Tensor<T>,
}

/// `ln(eᵛ − 1)`, the inverse of softplus.
pub fn inverse_softplus(v: f64) -> f64 {
    v + (-(-v).exp_m1()).ln()
}

/// `A_log[d, n] = ln(n + 1)`, so `A = −(n+1)` and decay timescales span `1..N`.
pub fn init_a_log<T: Real>(d_model: usize, d_state: usize) -> Tensor<T> {
    Tensor::from_fn(vec![d_model, d_state], |i| T::lit(((i % d_state) + 1) as f64).ln())
}

/// Step-size bias so that `softplus(bias)` is log-uniform in `[1e-3, 1e-1]`.
pub fn init_dt_bias<T: Real>(rng: &mut impl Rng, d_model: usize) -> Tensor<T> {
    let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
    Tensor::from_fn(vec![d_model], |_| {
        let dt = rng.random_range(lo..hi).exp();
        T::lit(inverse_softplus(dt))
    })
}

impl<T: Real> SelectiveScanParams<T> {
    pub fn init(rng: &mut impl Rng, d_model: usize, d_state: usize, conv_width: usize) -> Self {
        let cw = 1.0 / (conv_width as f64).sqrt();
        SelectiveScanParams {
            d_model,
            d_state,
            a_log: init_a_log(d_model, d_state),
            d: Tensor::full(vec![d_model], T::one()),
            dt_w: init::normal(rng, &[d_model, d_model], 0.02),
            dt_b: init_dt_bias(rng, d_model),
            b_w: init::fan_in(rng, d_model, d_state),
            c_w: init::fan_in(rng, d_model, d_state),
            conv: init::uniform(rng, &[conv_width, d_model], -cw, cw),
            conv_bias: Tensor::zeros(vec![d_model]),
        }
    }

    pub fn a(&self) -> Vec<T> {
        self.a_log.data().iter().map(|&v| -v.exp()).collect()
    }

    pub fn num_params(&self) -> usize {
        [
            &self.a_log,
            &self.d,
            &self.dt_w,
            &self.dt_b,
            &self.b_w,
            &self.c_w,
            &self.conv,
            &self.conv_bias,
        ]
        .iter()
        .map(|t| t.len())
        .sum()
    }
}

/// Result of [`selective_scan`]. `cache` is only kept when requested.
#[derive(Clone, Debug)]
pub struct ScanOutput<T> {
    pub y: Tensor<T>,
    pub h_last: Vec<T>,
    pub cache: Option<ScanCache<T>>,
}

#[derive(Clone, Debug)]
pub struct ScanCache<T> {
    x: Vec<T>,
    delta_pre: Vec<T>,
    trace: ScanTrace<T>,
}

/// Gradients with respect to the input and every projection/scan parameter
/// (the convolution is handled separately by [`causal_depthwise_conv_backward`]).
#[derive(Clone, Debug)]
pub struct ScanParamGrads<T> {
    pub x: Vec<T>,
    pub a_log: Vec<T>,
    pub d: Vec<T>,
    pub dt_w: Vec<T>,
    pub dt_b: Vec<T>,
    pub b_w: Vec<T>,
    pub c_w: Vec<T>,
    pub h0: Vec<T>,
}

/// Full selective scan on `x[L×D]`, projections included.
pub fn selective_scan<T: Real>(
    x: &Tensor<T>,
    p: &SelectiveScanParams<T>,
    h0: Option<&[T]>,
    retain: bool,
) -> Result<ScanOutput<T>> {
    let (len, dm) = x.dims2()?;
    if dm != p.d_model {
        return Err(Error::shape(
            "selective_scan",
            format!("x has {dm} channels, params expect {}", p.d_model),
        ));
    }
    let ds = p.d_state;
    let xd = x.data();
    let mut delta_pre = gemm(xd, p.dt_w.data(), len, dm, dm);
    for row in delta_pre.chunks_mut(dm) {
        for (v, &bias) in row.iter_mut().zip(p.dt_b.data()) {
            *v += bias;
        }
    }
    let delta: Vec<T> = delta_pre.iter().map(|&v| crate::numerics::tape_softplus(v)).collect();
    let b = gemm(xd, p.b_w.data(), len, dm, ds);
    let c = gemm(xd, p.c_w.data(), len, dm, ds);
    if !retain {
        let (y, h_last) = scan_core_forward(xd, &delta, &p.a(), &b, &c, p.d.data(), h0, len, dm, ds)?;
        return Ok(ScanOutput {
            y: Tensor::new(vec![len, dm], y)?,
            h_last,
            cache: None,
        });
    }
    let (y, trace) = scan_core(xd, &delta, &p.a(), &b, &c, p.d.data(), h0, len, dm, ds)?;
    Ok(ScanOutput {
        y: Tensor::new(vec![len, dm], y)?,
        h_last: trace.final_state().to_vec(),
        cache: Some(ScanCache {
            x: xd.to_vec(),
            delta_pre,
            trace,
        }),
    })
}

pub fn selective_scan_backward<T: Real>(
    out: &ScanOutput<T>,
    p: &SelectiveScanParams<T>,
    dy: &Tensor<T>,
) -> Result<ScanParamGrads<T>> {
    let cache = out.cache.as_ref().ok_or_else(|| {
        Error::Contract("selective_scan_backward needs a forward run with retained activations".into())
    })?;
    let tr = &cache.trace;
    let (len, dm, ds) = (tr.len, tr.d_model, tr.d_state);
    let core = scan_core_backward(tr, dy.data(), None)?;

    let d_delta_pre: Vec<T> = core
        .delta
        .iter()
        .zip(&cache.delta_pre)
        .map(|(&g, &z)| g * crate::numerics::tape_sigmoid(z))
        .collect();
    let x = &cache.x;
    let dt_w = gemm_tn(x, &d_delta_pre, len, dm, dm);
    let mut dt_b = vec![T::zero(); dm];
    for row in d_delta_pre.chunks(dm) {
        for (acc, &v) in dt_b.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let b_w = gemm_tn(x, &core.b, len, dm, ds);
    let c_w = gemm_tn(x, &core.c, len, dm, ds);

    let mut dx = core.x.clone();
    for extra in [
        gemm_nt(&d_delta_pre, p.dt_w.data(), len, dm, dm),
        gemm_nt(&core.b, p.b_w.data(), len, ds, dm),
        gemm_nt(&core.c, p.c_w.data(), len, ds, dm),
    ] {
        for (v, e) in dx.iter_mut().zip(extra) {
            *v += e;
        }
    }
    let a = p.a();
    let a_log = core.a.iter().zip(&a).map(|(&g, &av)| g * av).collect();
    Ok(ScanParamGrads {
        x: dx,
        a_log,
        d: core.d,
        dt_w,
        dt_b,
        b_w,
        c_w,
        h0: core.h0,
    })
}

struct ScanCoreOp<T> {
    trace: ScanTrace<T>,
    a: Vec<T>,
}

impl<T: Real> CustomOp<T> for ScanCoreOp<T> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g = scan_core_backward(&self.trace, grad, None)?;
        let a_log = g.a.iter().zip(&self.a).map(|(&ga, &av)| ga * av).collect();
        Ok(vec![
            Some(g.x),
            Some(g.delta),
            Some(a_log),
            Some(g.b),
            Some(g.c),
            Some(g.d),
        ])
    }
}

/// Tape op for the recurrence: `x[L×D]`, `delta[L×D]` (already positive),
/// `a_log[D×N]`, `b[L×N]`, `c[L×N]`, `d[D]` → `y[L×D]`. Zero initial state.
pub fn scan_var<T: Real>(tape: &Tape<T>, x: Var, delta: Var, a_log: Var, b: Var, c: Var, d: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (len, dm) = xv.dims2()?;
    let (_, ds) = tape.value(a_log).dims2()?;
    let a: Vec<T> = tape.value(a_log).data().iter().map(|&v| -v.exp()).collect();
    let inputs = [x, delta, a_log, b, c, d];
    if !inputs.iter().any(|&v| tape.requires_grad(v)) {
        // Nothing to differentiate: skip the per-step state history.
        let (y, _) = scan_core_forward(
            xv.data(),
            tape.value(delta).data(),
            &a,
            tape.value(b).data(),
            tape.value(c).data(),
            tape.value(d).data(),
            None,
            len,
            dm,
            ds,
        )?;
        return Ok(tape.constant(Tensor::new(vec![len, dm], y)?));
    }
    let (y, trace) = scan_core(
        xv.data(),
        tape.value(delta).data(),
        &a,
        tape.value(b).data(),
        tape.value(c).data(),
        tape.value(d).data(),
        None,
        len,
        dm,
        ds,
    )?;
    let out = Tensor::new(vec![len, dm], y)?;
    Ok(tape.custom(&inputs, out, ScanCoreOp { trace, a }))
}

struct ConvOp {
    len: usize,
    channels: usize,
}

impl<T: Real> CustomOp<T> for ConvOp {
    fn name(&self) -> &'static str {
        "causal_depthwise_conv"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (dx, dk) =
            causal_depthwise_conv_backward(inputs[0].data(), inputs[1].data(), grad, self.len, self.channels);
        Ok(vec![Some(dx), Some(dk)])
    }
}

/// Tape op for [`causal_depthwise_conv`].
pub fn conv_var<T: Real>(tape: &Tape<T>, x: Var, kernel: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (len, channels) = xv.dims2()?;
    let y = causal_depthwise_conv(xv.data(), tape.value(kernel).data(), len, channels)?;
    Ok(tape.custom(
        &[x, kernel],
        Tensor::new(vec![len, channels], y)?,
        ConvOp { len, channels },
    ))
}
