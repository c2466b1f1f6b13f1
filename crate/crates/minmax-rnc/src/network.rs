//! MinMax recurrent neural cascades: MLP input functions, neurons, layers,
//! and forward evaluation in sequential and parallel-scan modes.
//!
//! A neuron holds a reset MLP `R : ℝ^{d_in} → ℝ^{d²}` (reshaped row-major to a
//! `d×d` matrix), a set MLP `s : ℝ^{d_in} → ℝ^d`, and an initial state; its
//! step is `x ↦ (R(u) ⊗ x) ⊕ s(u)`. A layer runs a bank of neurons in
//! parallel and maps `(x_{t−1} ‖ x_t ‖ u_t)` through an output MLP. A cascade
//! feeds each layer's outputs to the next.

use crate::algebra::{odot, oplus, MmMatrix};
use crate::recurrence::{parallel_rec_eval, RecurrenceInput};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x ↦ Wx + b` with `W` stored row-major (`d_out × d_in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::Shape(format!(
                "linear {d_in}->{d_out} needs {} weights and {d_out} biases, got {} and {}",
                d_in * d_out,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Linear { d_in, d_out, weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Linear { d_in: dim, d_out: dim, weight, bias: vec![0.0; dim] }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weight[i * self.d_in..(i + 1) * self.d_in];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Per-feature layer normalization with learned scale and shift.
/// Zero-variance inputs normalize to the zero vector before scale/shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    pub fn unit(dim: usize) -> Self {
        LayerNorm { gamma: vec![1.0; dim], beta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Returns the normalized vector before scale/shift.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        x.iter().map(|v| (v - mean) * inv).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.normalize(x);
        for (i, v) in h.iter_mut().enumerate() {
            *v = *v * self.gamma[i] + self.beta[i];
        }
        h
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// Residual branch added to an MLP's output: identity when the dimensions
/// match, a learned projection otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Residual {
    Identity,
    Proj(Linear),
}

/// An MLP as a chain of affine maps with `tanh` between consecutive maps,
/// optionally pre-normalized and with a residual connection
/// `y = proj(x) + chain(norm(x))`. A chain of length one is a bare affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub affines: Vec<Linear>,
    pub pre_norm: Option<LayerNorm>,
    pub residual: Option<Residual>,
}

impl MlpWeights {
    pub fn new(
        affines: Vec<Linear>,
        pre_norm: Option<LayerNorm>,
        residual: Option<Residual>,
    ) -> Result<Self> {
        if affines.is_empty() {
            return Err(Error::Shape("MLP needs at least one affine map".into()));
        }
        for pair in affines.windows(2) {
            if pair[0].d_out != pair[1].d_in {
                return Err(Error::Shape(format!(
                    "MLP chain breaks: {} -> {}",
                    pair[0].d_out, pair[1].d_in
                )));
            }
        }
        if let Some(norm) = &pre_norm {
            if norm.dim() != affines[0].d_in {
                return Err(Error::Shape("pre-norm dimension must match MLP input".into()));
            }
        }
        match &residual {
            Some(Residual::Identity) if affines[0].d_in != affines.last().unwrap().d_out => {
                return Err(Error::Shape("identity residual needs matching in/out dims".into()));
            }
            Some(Residual::Proj(p))
                if p.d_in != affines[0].d_in || p.d_out != affines.last().unwrap().d_out =>
            {
                return Err(Error::Shape("residual projection dims must bridge in/out".into()));
            }
            _ => {}
        }
        Ok(MlpWeights { affines, pre_norm, residual })
    }

    pub fn single(linear: Linear) -> Self {
        MlpWeights { affines: vec![linear], pre_norm: None, residual: None }
    }

    pub fn d_in(&self) -> usize {
        self.affines[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.affines.last().unwrap().d_out
    }

    /// Affine–activation chain; pre-norm first when present, residual branch
    /// added last.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::Shape(format!(
                "MLP expects input of dim {}, got {}",
                self.d_in(),
                x.len()
            )));
        }
        let mut h = match &self.pre_norm {
            Some(norm) => norm.eval(x),
            None => x.to_vec(),
        };
        h = self.affines[0].eval(&h);
        for affine in &self.affines[1..] {
            for v in h.iter_mut() {
                *v = v.tanh();
            }
            h = affine.eval(&h);
        }
        match &self.residual {
            None => {}
            Some(Residual::Identity) => {
                for (o, v) in h.iter_mut().zip(x) {
                    *o += v;
                }
            }
            Some(Residual::Proj(p)) => {
                for (o, v) in h.iter_mut().zip(p.eval(x)) {
                    *o += v;
                }
            }
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.affines.iter().map(Linear::param_count).sum::<usize>()
            + self.pre_norm.as_ref().map_or(0, LayerNorm::param_count)
            + match &self.residual {
                Some(Residual::Proj(p)) => p.param_count(),
                _ => 0,
            }
    }
}

/// One MinMax recurrent neuron: reset MLP (output `d_state²`), set MLP
/// (output `d_state`), and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronWeights {
    pub reset_mlp: MlpWeights,
    pub set_mlp: MlpWeights,
    pub initial_state: Vec<f64>,
}

impl NeuronWeights {
    pub fn new(reset_mlp: MlpWeights, set_mlp: MlpWeights, initial_state: Vec<f64>) -> Result<Self> {
        let d = initial_state.len();
        if reset_mlp.d_out() != d * d {
            return Err(Error::Shape(format!(
                "reset MLP must output d_state²={}, got {}",
                d * d,
                reset_mlp.d_out()
            )));
        }
        if set_mlp.d_out() != d {
            return Err(Error::Shape(format!(
                "set MLP must output d_state={d}, got {}",
                set_mlp.d_out()
            )));
        }
        if reset_mlp.d_in() != set_mlp.d_in() {
            return Err(Error::Shape("reset and set MLPs must share the input dim".into()));
        }
        Ok(NeuronWeights { reset_mlp, set_mlp, initial_state })
    }

    pub fn d_state(&self) -> usize {
        self.initial_state.len()
    }

    pub fn d_in(&self) -> usize {
        self.reset_mlp.d_in()
    }

    /// One recurrence step `(R(u) ⊗ x_prev) ⊕ s(u)`.
    pub fn step(&self, x_prev: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let d = self.d_state();
        if x_prev.len() != d {
            return Err(Error::Shape(format!("state dim {} != {d}", x_prev.len())));
        }
        let r = self.reset_mlp.eval(u)?;
        let s = self.set_mlp.eval(u)?;
        Ok(minmax_step(&r, &s, x_prev, d))
    }
}

/// `(R ⊗ x) ⊕ s` over raw slices, `r` row-major `d×d`.
pub(crate) fn minmax_step(r: &[f64], s: &[f64], x_prev: &[f64], d: usize) -> Vec<f64> {
    let mut next = vec![0.0; d];
    for i in 0..d {
        let row = &r[i * d..(i + 1) * d];
        let mut acc = s[i];
        for j in 0..d {
            acc = oplus(acc, odot(row[j], x_prev[j]));
        }
        next[i] = acc;
    }
    next
}

/// A bank of neurons plus the layer output MLP over `(x_{t−1} ‖ x_t ‖ u_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub units: Vec<NeuronWeights>,
    pub output_mlp: MlpWeights,
}

impl LayerWeights {
    pub fn new(units: Vec<NeuronWeights>, output_mlp: MlpWeights) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Shape("layer needs at least one unit".into()));
        }
        let d_state = units[0].d_state();
        let d_in = units[0].d_in();
        if units.iter().any(|u| u.d_state() != d_state || u.d_in() != d_in) {
            return Err(Error::Shape("all units must share d_state and input dim".into()));
        }
        let expect = 2 * units.len() * d_state + d_in;
        if output_mlp.d_in() != expect {
            return Err(Error::Shape(format!(
                "output MLP input dim {} != 2·n_units·d_state + d_in = {expect}",
                output_mlp.d_in()
            )));
        }
        Ok(LayerWeights { units, output_mlp })
    }

    pub fn d_in(&self) -> usize {
        self.units[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.output_mlp.d_out()
    }

    pub fn d_state(&self) -> usize {
        self.units[0].d_state()
    }
}

/// Size tuple of a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CascadeDims {
    pub d_in: usize,
    pub d_out: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub n_units: usize,
    pub n_layers: usize,
    pub d_mlp: usize,
    pub n_mlp: usize,
}

impl CascadeDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.d_in,
            self.d_out,
            self.d_model,
            self.d_state,
            self.n_units,
            self.n_layers,
            self.d_mlp,
        ];
        if all.iter().any(|&v| v == 0) {
            return Err(Error::Domain("all cascade dims except n_mlp must be >= 1".into()));
        }
        Ok(())
    }

    /// Input dim of layer `l` under the size chaining (first layer takes
    /// `d_in`, later layers take `d_model`).
    pub fn layer_d_in(&self, l: usize) -> usize {
        if l == 0 {
            self.d_in
        } else {
            self.d_model
        }
    }

    /// Output dim of layer `l` (last layer emits `d_out`, others `d_model`).
    pub fn layer_d_out(&self, l: usize) -> usize {
        if l + 1 == self.n_layers {
            self.d_out
        } else {
            self.d_model
        }
    }

    /// Hidden width of per-unit reset/set MLPs.
    pub fn unit_mlp_width(&self) -> usize {
        self.d_mlp.div_ceil(self.n_units)
    }
}

/// Complete parameter set of a cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeWeights {
    pub dims: CascadeDims,
    pub layers: Vec<LayerWeights>,
}

/// Per-unit forward record: reset/set outputs and the state sequence
/// (including the initial state at index 0).
#[derive(Debug, Clone)]
pub struct UnitTrace {
    pub d_state: usize,
    /// T × d_state × d_state, row-major per step.
    pub r_seq: Vec<f64>,
    /// T × d_state.
    pub s_seq: Vec<f64>,
    /// (T + 1) × d_state; `states[0..d]` is the initial state.
    pub states: Vec<f64>,
}

/// Per-layer forward record.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub inputs: Vec<f64>, // T × layer_d_in
    pub units: Vec<UnitTrace>,
    pub outputs: Vec<f64>, // T × layer_d_out
}

/// Full forward record of a cascade evaluation.
#[derive(Debug, Clone)]
pub struct CascadeTrace {
    pub t_len: usize,
    pub layers: Vec<LayerTrace>,
}

impl CascadeTrace {
    /// Value closure: every state entry at step t equals an initial-state
    /// entry or an entry of some reset/set output emitted at a step ≤ t.
    pub fn value_closure_ok(&self) -> bool {
        for layer in &self.layers {
            for unit in &layer.units {
                let d = unit.d_state;
                let t_len = unit.s_seq.len() / d;
                let mut pool: Vec<f64> = unit.states[..d].to_vec();
                for t in 0..t_len {
                    pool.extend_from_slice(&unit.r_seq[t * d * d..(t + 1) * d * d]);
                    pool.extend_from_slice(&unit.s_seq[t * d..(t + 1) * d]);
                    let state = &unit.states[(t + 1) * d..(t + 2) * d];
                    if state.iter().any(|v| !pool.iter().any(|w| w == v)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Largest |state entry| across all layers, units, and steps.
    pub fn max_state_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.units.iter())
            .flat_map(|u| u.states.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeMode {
    Sequential,
    Parallel,
}

/// Evaluates the cascade on a `t_len × d_in` input (row-major), returning the
/// `t_len × d_out` outputs and the full trace. Sequential and parallel modes
/// produce bit-identical results.
pub fn cascade_eval(
    w: &CascadeWeights,
    u: &[f64],
    t_len: usize,
    mode: CascadeMode,
) -> Result<(Vec<f64>, CascadeTrace)> {
    if t_len == 0 {
        return Err(Error::Shape("cascade needs T >= 1".into()));
    }
    if u.len() != t_len * w.dims.d_in {
        return Err(Error::Shape(format!(
            "input length {} != T·d_in = {}",
            u.len(),
            t_len * w.dims.d_in
        )));
    }
    if let Some(bad) = u.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("input entry must be finite, got {bad}")));
    }
    let mut layer_traces = Vec::with_capacity(w.layers.len());
    let mut current = u.to_vec();
    for layer in &w.layers {
        let trace = layer_eval(layer, &current, t_len, mode)?;
        current = trace.outputs.clone();
        layer_traces.push(trace);
    }
    Ok((current, CascadeTrace { t_len, layers: layer_traces }))
}

fn layer_eval(
    layer: &LayerWeights,
    inputs: &[f64],
    t_len: usize,
    mode: CascadeMode,
) -> Result<LayerTrace> {
    let d_in = layer.d_in();
    let d = layer.d_state();
    let n_units = layer.units.len();
    let mut unit_traces = Vec::with_capacity(n_units);
    for unit in &layer.units {
        let mut r_seq = Vec::with_capacity(t_len * d * d);
        let mut s_seq = Vec::with_capacity(t_len * d);
        for t in 0..t_len {
            let u_t = &inputs[t * d_in..(t + 1) * d_in];
            r_seq.extend(unit.reset_mlp.eval(u_t)?);
            s_seq.extend(unit.set_mlp.eval(u_t)?);
        }
        let mut states = Vec::with_capacity((t_len + 1) * d);
        states.extend_from_slice(&unit.initial_state);
        match mode {
            CascadeMode::Sequential => {
                for t in 0..t_len {
                    let next = minmax_step(
                        &r_seq[t * d * d..(t + 1) * d * d],
                        &s_seq[t * d..(t + 1) * d],
                        &states[t * d..(t + 1) * d],
                        d,
                    );
                    states.extend(next);
                }
            }
            CascadeMode::Parallel => {
                let a_seq = (0..t_len)
                    .map(|t| MmMatrix::new(d, d, r_seq[t * d * d..(t + 1) * d * d].to_vec()))
                    .collect::<Result<Vec<_>>>()?;
                let b_seq = (0..t_len)
                    .map(|t| MmMatrix::column(&s_seq[t * d..(t + 1) * d]))
                    .collect::<Result<Vec<_>>>()?;
                let input = RecurrenceInput::new(unit.initial_state.clone(), a_seq, b_seq)?;
                let trajectory = parallel_rec_eval(&input)?;
                for t in 0..t_len {
                    states.extend_from_slice(trajectory.state(t));
                }
            }
        }
        unit_traces.push(UnitTrace { d_state: d, r_seq, s_seq, states });
    }

    let concat_dim = 2 * n_units * d + d_in;
    let mut outputs = Vec::with_capacity(t_len * layer.d_out());
    let mut concat = vec![0.0; concat_dim];
    for t in 0..t_len {
        let mut pos = 0;
        for unit in &unit_traces {
            concat[pos..pos + d].copy_from_slice(&unit.states[t * d..(t + 1) * d]);
            pos += d;
        }
        for unit in &unit_traces {
            concat[pos..pos + d].copy_from_slice(&unit.states[(t + 1) * d..(t + 2) * d]);
            pos += d;
        }
        concat[pos..].copy_from_slice(&inputs[t * d_in..(t + 1) * d_in]);
        outputs.extend(layer.output_mlp.eval(&concat)?);
    }
    Ok(LayerTrace { inputs: inputs.to_vec(), units: unit_traces, outputs })
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half_width..half_width)).collect()
}

fn init_linear(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Linear {
    let w = 1.0 / (d_in as f64).sqrt();
    Linear { d_in, d_out, weight: uniform(rng, d_in * d_out, w), bias: uniform(rng, d_out, w) }
}

fn init_mlp(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, d_h: usize, n_h: usize) -> MlpWeights {
    let mut affines = Vec::with_capacity(n_h + 2);
    affines.push(init_linear(rng, d_in, d_h));
    for _ in 0..n_h {
        affines.push(init_linear(rng, d_h, d_h));
    }
    affines.push(init_linear(rng, d_h, d_out));
    MlpWeights { affines, pre_norm: None, residual: None }
}

/// Deterministic weight initialization.
///
/// Reset MLPs get a final bias of +1 and set MLPs a final bias of −1, so
/// units start in the hold regime (`R > s`); everything else is uniform in
/// ±1/√fan_in, initial states uniform in [−1, 1]. Layer output MLPs are
/// pre-normed with a residual branch (identity when dims match, a learned
/// projection otherwise).
pub fn init_weights(dims: CascadeDims, seed: u64) -> Result<CascadeWeights> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = dims.unit_mlp_width();
    let mut layers = Vec::with_capacity(dims.n_layers);
    for l in 0..dims.n_layers {
        let d_in = dims.layer_d_in(l);
        let d_out = dims.layer_d_out(l);
        let mut units = Vec::with_capacity(dims.n_units);
        for _ in 0..dims.n_units {
            let mut reset = init_mlp(&mut rng, d_in, dims.d_state * dims.d_state, h, dims.n_mlp);
            reset.affines.last_mut().unwrap().bias.fill(1.0);
            let mut set = init_mlp(&mut rng, d_in, dims.d_state, h, dims.n_mlp);
            set.affines.last_mut().unwrap().bias.fill(-1.0);
            let initial_state = uniform(&mut rng, dims.d_state, 1.0);
            units.push(NeuronWeights::new(reset, set, initial_state)?);
        }
        let concat_dim = 2 * dims.n_units * dims.d_state + d_in;
        let mut output_mlp = init_mlp(&mut rng, concat_dim, d_out, dims.d_mlp, dims.n_mlp);
        output_mlp.pre_norm = Some(LayerNorm::unit(concat_dim));
        output_mlp.residual = Some(if concat_dim == d_out {
            Residual::Identity
        } else {
            Residual::Proj(init_linear(&mut rng, concat_dim, d_out))
        });
        layers.push(LayerWeights::new(units, output_mlp)?);
    }
    Ok(CascadeWeights { dims, layers })
}

/// Exact trainable-parameter count of `init_weights(dims, ·)`.
pub fn count_params(dims: CascadeDims) -> usize {
    let h = dims.unit_mlp_width();
    let mlp = |d_in: usize, d_out: usize| -> usize {
        d_in * h + h + dims.n_mlp * (h * h + h) + h * d_out + d_out
    };
    let out_mlp = |d_in: usize, d_out: usize| -> usize {
        let mut c = d_in * dims.d_mlp + dims.d_mlp;
        c += dims.n_mlp * (dims.d_mlp * dims.d_mlp + dims.d_mlp);
        c += dims.d_mlp * d_out + d_out;
        c += 2 * d_in; // layer norm
        if d_in != d_out {
            c += d_in * d_out + d_out; // learned residual projection
        }
        c
    };
    let mut total = 0;
    for l in 0..dims.n_layers {
        let d_in = dims.layer_d_in(l);
        let d_out = dims.layer_d_out(l);
        let per_unit =
            mlp(d_in, dims.d_state * dims.d_state) + mlp(d_in, dims.d_state) + dims.d_state;
        total += dims.n_units * per_unit;
        total += out_mlp(2 * dims.n_units * dims.d_state + d_in, d_out);
    }
    total
}

impl CascadeWeights {
    /// Visits every parameter array in a fixed deterministic order (the
    /// flatten/unflatten order).
    pub fn visit_params<F: FnMut(&[f64])>(&self, f: &mut F) {
        for layer in &self.layers {
            for unit in &layer.units {
                visit_mlp(&unit.reset_mlp, f);
                visit_mlp(&unit.set_mlp, f);
                f(&unit.initial_state);
            }
            visit_mlp(&layer.output_mlp, f);
        }
    }

    pub fn visit_params_mut<F: FnMut(&mut [f64])>(&mut self, f: &mut F) {
        for layer in &mut self.layers {
            for unit in &mut layer.units {
                visit_mlp_mut(&mut unit.reset_mlp, f);
                visit_mlp_mut(&mut unit.set_mlp, f);
                f(&mut unit.initial_state);
            }
            visit_mlp_mut(&mut layer.output_mlp, f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |a| n += a.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |a| out.extend_from_slice(a));
        out
    }

    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector length {} != {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        self.visit_params_mut(&mut |a| {
            a.copy_from_slice(&params[pos..pos + a.len()]);
            pos += a.len();
        });
        Ok(())
    }
}

fn visit_mlp<F: FnMut(&[f64])>(mlp: &MlpWeights, f: &mut F) {
    if let Some(norm) = &mlp.pre_norm {
        f(&norm.gamma);
        f(&norm.beta);
    }
    for affine in &mlp.affines {
        f(&affine.weight);
        f(&affine.bias);
    }
    if let Some(Residual::Proj(p)) = &mlp.residual {
        f(&p.weight);
        f(&p.bias);
    }
}

fn visit_mlp_mut<F: FnMut(&mut [f64])>(mlp: &mut MlpWeights, f: &mut F) {
    if let Some(norm) = &mut mlp.pre_norm {
        f(&mut norm.gamma);
        f(&mut norm.beta);
    }
    for affine in &mut mlp.affines {
        f(&mut affine.weight);
        f(&mut affine.bias);
    }
    if let Some(Residual::Proj(p)) = &mut mlp.residual {
        f(&mut p.weight);
        f(&mut p.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // Selects input component `idx` as the single output.
    fn rig_select_mlp(d_in: usize, idx: usize) -> MlpWeights {
        let mut w = vec![0.0; d_in];
        w[idx] = 1.0;
        MlpWeights::single(Linear::new(d_in, 1, w, vec![0.0]).unwrap())
    }

    #[test]
    fn mlp_single_identity_affine() {
        let mlp = MlpWeights::single(Linear::identity(3));
        let x = [0.5, -1.0, 2.0];
        assert_eq!(mlp.eval(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn mlp_single_linear_matches_matvec_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (d_in, d_out) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mlp = MlpWeights::single(Linear::new(d_in, d_out, w.clone(), b.clone()).unwrap());
            let got = mlp.eval(&x).unwrap();
            for i in 0..d_out {
                let want = b[i] + (0..d_in).map(|j| w[i * d_in + j] * x[j]).sum::<f64>();
                assert!((got[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layernorm_constant_vector_normalizes_to_zero() {
        let norm = LayerNorm::unit(4);
        assert_eq!(norm.normalize(&[3.5; 4]), vec![0.0; 4]);
        // with shift, the output is exactly beta
        let shifted = LayerNorm { gamma: vec![2.0; 4], beta: vec![0.25; 4] };
        assert_eq!(shifted.eval(&[3.5; 4]), vec![0.25; 4]);
    }

    #[test]
    fn mlp_residual_identity_adds_input() {
        let zero = Linear::new(2, 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
        let mlp = MlpWeights::new(vec![zero], None, Some(Residual::Identity)).unwrap();
        assert_eq!(mlp.eval(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    fn example1_neuron() -> NeuronWeights {
        // inputs are pairs (a, b); R(a,b) = a, s(a,b) = b
        NeuronWeights::new(rig_select_mlp(2, 0), rig_select_mlp(2, 1), vec![0.0]).unwrap()
    }

    #[test]
    fn neuron_step_worked_trajectory() {
        let neuron = example1_neuron();
        let inputs = [[0.0, 2.0], [7.0, 0.0], [5.0, 0.0], [0.0, 1.0]];
        let mut x = vec![0.0];
        let mut seen = Vec::new();
        for u in &inputs {
            x = neuron.step(&x, u).unwrap();
            seen.push(x[0]);
        }
        assert_eq!(seen, vec![2.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn neuron_step_set_dominates() {
        // s(u) >= R(u) >= x_prev forces next state to s(u)
        let neuron = example1_neuron();
        let next = neuron.step(&[0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(next, vec![2.0]);
    }

    #[test]
    fn neuron_step_matches_apply_oracle() {
        use crate::algebra::StepPair;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = CascadeDims {
            d_in: 3,
            d_out: 2,
            d_model: 2,
            d_state: 2,
            n_units: 1,
            n_layers: 1,
            d_mlp: 4,
            n_mlp: 1,
        };
        let w = init_weights(dims, 99).unwrap();
        let neuron = &w.layers[0].units[0];
        for _ in 0..50 {
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = neuron.reset_mlp.eval(&u).unwrap();
            let s = neuron.set_mlp.eval(&u).unwrap();
            let pair =
                StepPair::new(MmMatrix::new(2, 2, r).unwrap(), MmMatrix::column(&s).unwrap())
                    .unwrap();
            let oracle = pair.apply(&MmMatrix::column(&x).unwrap()).unwrap();
            assert_eq!(neuron.step(&x, &u).unwrap(), oracle.entries());
        }
    }

    fn example1_cascade() -> CascadeWeights {
        let unit = example1_neuron();
        // concat is (x_{t-1} ‖ x_t ‖ u_t) of dim 4; select x_t
        let output = rig_select_mlp(4, 1);
        let dims = CascadeDims {
            d_in: 2,
            d_out: 1,
            d_model: 1,
            d_state: 1,
            n_units: 1,
            n_layers: 1,
            d_mlp: 1,
            n_mlp: 0,
        };
        CascadeWeights { dims, layers: vec![LayerWeights::new(vec![unit], output).unwrap()] }
    }

    #[test]
    fn cascade_rigged_worked_example() {
        let w = example1_cascade();
        let u = [0.0, 2.0, 7.0, 0.0, 5.0, 0.0, 0.0, 1.0];
        for mode in [CascadeMode::Sequential, CascadeMode::Parallel] {
            let (y, trace) = cascade_eval(&w, &u, 4, mode).unwrap();
            assert_eq!(y, vec![2.0, 2.0, 2.0, 1.0]);
            assert!(trace.value_closure_ok());
        }
    }

    #[test]
    fn constant_input_state_settles_after_two_steps() {
        let dims = CascadeDims {
            d_in: 2,
            d_out: 2,
            d_model: 2,
            d_state: 1,
            n_units: 3,
            n_layers: 1,
            d_mlp: 4,
            n_mlp: 1,
        };
        for seed in 0..20 {
            let w = init_weights(dims, seed).unwrap();
            let u: Vec<f64> = [0.3, -0.7].repeat(10);
            let (_, trace) = cascade_eval(&w, &u, 10, CascadeMode::Sequential).unwrap();
            for unit in &trace.layers[0].units {
                // states[2], states[3], ... all equal (τ² = τ³ under constant input)
                let settled = unit.states[2];
                for t in 3..=10 {
                    assert_eq!(unit.states[t], settled, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn parallel_mode_matches_sequential() {
        let dims = CascadeDims {
            d_in: 3,
            d_out: 2,
            d_model: 4,
            d_state: 2,
            n_units: 3,
            n_layers: 2,
            d_mlp: 5,
            n_mlp: 1,
        };
        let w = init_weights(dims, 44).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let t_len = 40;
        let u: Vec<f64> = (0..t_len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y_seq, tr_seq) = cascade_eval(&w, &u, t_len, CascadeMode::Sequential).unwrap();
        let (y_par, tr_par) = cascade_eval(&w, &u, t_len, CascadeMode::Parallel).unwrap();
        assert_eq!(y_seq, y_par);
        for (a, b) in tr_seq.layers.iter().zip(&tr_par.layers) {
            for (ua, ub) in a.units.iter().zip(&b.units) {
                assert_eq!(ua.states, ub.states);
            }
        }
        assert!(tr_seq.value_closure_ok());
    }

    #[test]
    fn init_weights_deterministic_and_seed_sensitive() {
        let dims = CascadeDims {
            d_in: 2,
            d_out: 3,
            d_model: 4,
            d_state: 1,
            n_units: 2,
            n_layers: 2,
            d_mlp: 4,
            n_mlp: 1,
        };
        let a = init_weights(dims, 7).unwrap();
        let b = init_weights(dims, 7).unwrap();
        let c = init_weights(dims, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flatten(), c.flatten());
        assert!(a.flatten().iter().all(|v| v.is_finite()));
        for layer in &a.layers {
            for unit in &layer.units {
                assert!(unit.initial_state.iter().all(|v| (-1.0..=1.0).contains(v)));
                assert_eq!(unit.reset_mlp.affines.last().unwrap().bias, vec![1.0]);
                assert_eq!(unit.set_mlp.affines.last().unwrap().bias, vec![-1.0]);
            }
        }
    }

    #[test]
    fn init_forward_is_finite_and_closed() {
        let dims = CascadeDims {
            d_in: 3,
            d_out: 2,
            d_model: 4,
            d_state: 2,
            n_units: 2,
            n_layers: 2,
            d_mlp: 6,
            n_mlp: 1,
        };
        let w = init_weights(dims, 123).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(124);
        let u: Vec<f64> = (0..20 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, trace) = cascade_eval(&w, &u, 20, CascadeMode::Sequential).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(trace.value_closure_ok());
    }

    #[test]
    fn count_params_single_linear_example() {
        let mlp = MlpWeights::single(Linear::new(2, 3, vec![0.0; 6], vec![0.0; 3]).unwrap());
        assert_eq!(mlp.param_count(), 9);
    }

    #[test]
    fn count_params_matches_constructed_weights() {
        let dims = CascadeDims {
            d_in: 5,
            d_out: 7,
            d_model: 6,
            d_state: 2,
            n_units: 3,
            n_layers: 3,
            d_mlp: 8,
            n_mlp: 2,
        };
        assert_eq!(count_params(dims), init_weights(dims, 0).unwrap().param_count());
        let square = CascadeDims { d_in: 6, d_out: 6, d_model: 6, ..dims };
        assert_eq!(count_params(square), init_weights(square, 0).unwrap().param_count());
    }

    #[test]
    fn count_params_monotone_in_each_dim() {
        let base = CascadeDims {
            d_in: 3,
            d_out: 4,
            d_model: 5,
            d_state: 2,
            n_units: 3,
            n_layers: 2,
            d_mlp: 6,
            n_mlp: 1,
        };
        let c0 = count_params(base);
        for bump in [
            CascadeDims { d_in: 4, ..base },
            CascadeDims { d_out: 5, ..base },
            CascadeDims { d_model: 6, ..base },
            CascadeDims { d_state: 3, ..base },
            CascadeDims { n_units: 4, ..base },
            CascadeDims { n_layers: 3, ..base },
            CascadeDims { d_mlp: 7, ..base },
            CascadeDims { n_mlp: 2, ..base },
        ] {
            assert!(count_params(bump) > c0, "{bump:?}");
        }
    }

    #[test]
    fn dims_search_near_125k_exists() {
        // 2-layer configuration within 10% of the 125k budget
        let mut found = None;
        for d_mlp in 16..=256 {
            let dims = CascadeDims {
                d_in: 32,
                d_out: 80,
                d_model: 64,
                d_state: 1,
                n_units: 64,
                n_layers: 2,
                d_mlp,
                n_mlp: 1,
            };
            let count = count_params(dims);
            if (count as f64 - 125_000.0).abs() <= 12_500.0 {
                found = Some((dims, count));
                break;
            }
        }
        let (_, count) = found.expect("no dims near 125k");
        assert!((count as f64 - 125_000.0).abs() <= 12_500.0, "achieved {count}");
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let dims = CascadeDims {
            d_in: 3,
            d_out: 2,
            d_model: 4,
            d_state: 1,
            n_units: 2,
            n_layers: 2,
            d_mlp: 4,
            n_mlp: 1,
        };
        let w = init_weights(dims, 10).unwrap();
        let flat = w.flatten();
        let mut other = init_weights(dims, 11).unwrap();
        other.unflatten(&flat).unwrap();
        assert_eq!(other, w);
    }
}
