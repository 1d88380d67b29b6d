//! LIF neuron simulation over discrete timesteps and hand-derived
//! backpropagation-through-time with a surrogate spike derivative.
//!
//! Networks here are chains of linear masked layers. Every hidden layer is a
//! spiking LIF population; the final layer integrates membrane potential
//! without firing and its time-averaged potential is the readout.

use crate::error::{Error, Result};
use crate::sparse::{LayerKind, MaskedLayer};
use crate::tensor::{matmul, Tensor};

/// LIF neuron constants: membrane decay, firing threshold, timestep count.
#[derive(Debug, Clone, Copy)]
pub struct LifParams {
    pub alpha: f32,
    pub theta: f32,
    pub timesteps: usize,
}

impl LifParams {
    pub fn new(alpha: f32, theta: f32, timesteps: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1], got {alpha}")));
        }
        if theta <= 0.0 {
            return Err(Error::Config(format!("theta must be positive, got {theta}")));
        }
        if timesteps == 0 {
            return Err(Error::Config("timesteps must be at least 1".into()));
        }
        Ok(LifParams {
            alpha,
            theta,
            timesteps,
        })
    }
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            alpha: 0.5,
            theta: 1.0,
            timesteps: 5,
        }
    }
}

/// Per-neuron membrane potential and previous-step spikes for one batch.
#[derive(Debug, Clone)]
pub struct LifLayerState {
    pub v: Tensor,
    pub o_prev: Tensor,
}

impl LifLayerState {
    pub fn zeros(batch: usize, neurons: usize) -> Self {
        LifLayerState {
            v: Tensor::zeros(vec![batch, neurons]),
            o_prev: Tensor::zeros(vec![batch, neurons]),
        }
    }
}

/// One membrane/spike update:
/// v' = alpha*v + input - theta*o_prev, spike where v' >= theta.
pub fn lif_step(
    state: &LifLayerState,
    weighted_input: &Tensor,
    params: &LifParams,
) -> Result<(LifLayerState, Tensor)> {
    if state.v.shape() != weighted_input.shape() || state.o_prev.shape() != weighted_input.shape()
    {
        return Err(Error::Dimension(format!(
            "lif_step shapes disagree: v {:?}, o_prev {:?}, input {:?}",
            state.v.shape(),
            state.o_prev.shape(),
            weighted_input.shape()
        )));
    }
    let mut v = vec![0.0f32; weighted_input.len()];
    let mut spikes = vec![0.0f32; weighted_input.len()];
    for i in 0..v.len() {
        v[i] = params.alpha * state.v.data()[i] + weighted_input.data()[i]
            - params.theta * state.o_prev.data()[i];
        spikes[i] = if v[i] >= params.theta { 1.0 } else { 0.0 };
    }
    let v = Tensor::new(weighted_input.shape().to_vec(), v)?;
    let spikes = Tensor::new(weighted_input.shape().to_vec(), spikes)?;
    Ok((
        LifLayerState {
            v: v.clone(),
            o_prev: spikes.clone(),
        },
        spikes,
    ))
}

/// Surrogate spike derivative 1 / (1 + pi^2 x^2), evaluated at x = v - theta.
pub fn surrogate_grad(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (std::f32::consts::PI * v) * (std::f32::consts::PI * v)))
}

/// Recorded trajectory of one hidden layer: [T, batch, neurons] each.
#[derive(Debug, Clone)]
pub struct SpikeRecord {
    pub spikes: Tensor,
    pub potentials: Tensor,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input spike train [T, batch, features].
    pub input: Tensor,
    /// One record per hidden layer, in forward order.
    pub records: Vec<SpikeRecord>,
}

/// Error signals of one layer across time, exposed for inspection.
#[derive(Debug, Clone)]
pub struct BpttBuffers {
    pub delta: Tensor,
    pub eps: Tensor,
    pub phi: Tensor,
}

fn layer_dims(kind: LayerKind, index: usize) -> Result<(usize, usize)> {
    match kind {
        LayerKind::Linear { n_in, n_out } => Ok((n_in, n_out)),
        LayerKind::Conv { .. } => Err(Error::Config(format!(
            "layer {index}: conv layers are not supported in the spiking forward pass"
        ))),
    }
}

fn check_chain(net: &[MaskedLayer], features: usize) -> Result<Vec<(usize, usize)>> {
    if net.is_empty() {
        return Err(Error::Config("network has no layers".into()));
    }
    let mut dims = Vec::with_capacity(net.len());
    let mut expected = features;
    for (i, layer) in net.iter().enumerate() {
        let (n_in, n_out) = layer_dims(layer.kind(), i)?;
        if n_in != expected {
            return Err(Error::Config(format!(
                "layer {i} expects {n_in} inputs but receives {expected}"
            )));
        }
        dims.push((n_in, n_out));
        expected = n_out;
    }
    Ok(dims)
}

/// Simulates the network over all timesteps. Hidden layers spike per
/// `lif_step`; the output layer leaks and integrates without firing. The
/// readout is the output layer's potential averaged over time.
pub fn forward_pass(
    net: &[MaskedLayer],
    params: &LifParams,
    input: &Tensor,
) -> Result<(ForwardTrace, Tensor)> {
    if input.shape().len() != 3 {
        return Err(Error::Dimension(format!(
            "input must be [T, batch, features], got {:?}",
            input.shape()
        )));
    }
    let (t_steps, batch, features) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if t_steps != params.timesteps {
        return Err(Error::Config(format!(
            "input has {t_steps} timesteps but params specify {}",
            params.timesteps
        )));
    }
    let dims = check_chain(net, features)?;
    let hidden = net.len() - 1;

    // W^T per layer so batch activations multiply on the left.
    let w_t: Vec<Tensor> = net
        .iter()
        .map(|l| l.effective_weights().transpose2())
        .collect::<Result<_>>()?;

    let mut states: Vec<LifLayerState> = dims
        .iter()
        .map(|&(_, n_out)| LifLayerState::zeros(batch, n_out))
        .collect();
    let mut spike_rec: Vec<Vec<f32>> = dims[..hidden]
        .iter()
        .map(|&(_, n)| Vec::with_capacity(t_steps * batch * n))
        .collect();
    let mut pot_rec = spike_rec.clone();

    let (_, classes) = dims[hidden];
    let mut out_v = Tensor::zeros(vec![batch, classes]);
    let mut out_sum = vec![0.0f32; batch * classes];

    for t in 0..t_steps {
        let step_data =
            input.data()[t * batch * features..(t + 1) * batch * features].to_vec();
        let mut x = Tensor::new(vec![batch, features], step_data)?;
        for l in 0..hidden {
            let weighted = matmul(&x, &w_t[l])?;
            let (next, spikes) = lif_step(&states[l], &weighted, params)?;
            pot_rec[l].extend_from_slice(next.v.data());
            spike_rec[l].extend_from_slice(spikes.data());
            states[l] = next;
            x = spikes;
        }
        // Readout layer: leaky integration, no threshold, no reset.
        let weighted = matmul(&x, &w_t[hidden])?;
        let mut v = vec![0.0f32; batch * classes];
        for i in 0..v.len() {
            v[i] = params.alpha * out_v.data()[i] + weighted.data()[i];
            out_sum[i] += v[i];
        }
        out_v = Tensor::new(vec![batch, classes], v)?;
    }

    let readout = Tensor::new(
        vec![batch, classes],
        out_sum.iter().map(|&s| s / t_steps as f32).collect(),
    )?;
    let records = dims[..hidden]
        .iter()
        .enumerate()
        .map(|(l, &(_, n))| SpikeRecord {
            spikes: Tensor::new(vec![t_steps, batch, n], std::mem::take(&mut spike_rec[l]))
                .unwrap(),
            potentials: Tensor::new(vec![t_steps, batch, n], std::mem::take(&mut pot_rec[l]))
                .unwrap(),
        })
        .collect();
    Ok((
        ForwardTrace {
            input: input.clone(),
            records,
        },
        readout,
    ))
}

fn slice_step(t3: &Tensor, t: usize) -> Tensor {
    let (batch, n) = (t3.shape()[1], t3.shape()[2]);
    Tensor::new(
        vec![batch, n],
        t3.data()[t * batch * n..(t + 1) * batch * n].to_vec(),
    )
    .unwrap()
}

/// BPTT over the recorded trajectories. Returns one dense gradient tensor per
/// layer along with the per-layer error-signal buffers.
///
/// Recursion, backward in time with eps[t] zero beyond the last step:
///   eps_l[t]   = delta_l[t] * phi_l[t] + alpha * eps_l[t+1]
///   delta_l[t] = eps_{l+1}[t] W_{l+1}
///   dL/dW_l    = sum_t eps_l[t]^T s_l[t]
/// The reset term is treated as a constant, so no gradient flows through it.
pub fn bptt_backward_detailed(
    trace: &ForwardTrace,
    readout_grad: &Tensor,
    net: &[MaskedLayer],
    params: &LifParams,
) -> Result<(Vec<Tensor>, Vec<BpttBuffers>)> {
    let t_steps = params.timesteps;
    let (batch, features) = (trace.input.shape()[1], trace.input.shape()[2]);
    let dims = check_chain(net, features)?;
    let hidden = net.len() - 1;
    if trace.records.len() != hidden {
        return Err(Error::State(format!(
            "trace has {} hidden records but network has {hidden} hidden layers",
            trace.records.len()
        )));
    }
    for (l, rec) in trace.records.iter().enumerate() {
        let expect = [t_steps, batch, dims[l].1];
        if rec.spikes.shape() != expect || rec.potentials.shape() != expect {
            return Err(Error::State(format!(
                "record {l} shape {:?} does not match network layer ({:?} expected)",
                rec.spikes.shape(),
                expect
            )));
        }
    }
    let (_, classes) = dims[hidden];
    if readout_grad.shape() != [batch, classes] {
        return Err(Error::Dimension(format!(
            "readout_grad {:?}, expected [{batch}, {classes}]",
            readout_grad.shape()
        )));
    }

    let alpha = params.alpha;
    let mut grads: Vec<Tensor> = net
        .iter()
        .map(|l| Tensor::zeros(l.weights().shape().to_vec()))
        .collect();
    let mut buffers: Vec<Option<BpttBuffers>> = (0..net.len()).map(|_| None).collect();

    // delta w.r.t. each layer's input spikes, per timestep, filled while
    // walking layers from the top down.
    let input_of = |l: usize, t: usize| -> Tensor {
        if l == 0 {
            slice_step(&trace.input, t)
        } else {
            slice_step(&trace.records[l - 1].spikes, t)
        }
    };

    // Readout layer: readout = (1/T) sum_t v[t], v[t] = alpha v[t-1] + W s[t].
    let base = readout_grad.scale(1.0 / t_steps as f32);
    let mut eps_next = Tensor::zeros(vec![batch, classes]);
    let mut delta_below: Vec<Tensor> = Vec::with_capacity(t_steps);
    let mut eps_all = vec![0.0f32; t_steps * batch * classes];
    let w_top = net[hidden].effective_weights();
    for t in (0..t_steps).rev() {
        let eps = base.add(&eps_next.scale(alpha))?;
        let s = input_of(hidden, t);
        grads[hidden] = grads[hidden].add(&matmul(&eps.transpose2()?, &s)?)?;
        delta_below.push(matmul(&eps, &w_top)?);
        eps_all[t * batch * classes..(t + 1) * batch * classes].copy_from_slice(eps.data());
        eps_next = eps;
    }
    delta_below.reverse();
    buffers[hidden] = Some(BpttBuffers {
        delta: Tensor::new(
            vec![t_steps, batch, classes],
            std::iter::repeat(base.data())
                .take(t_steps)
                .flatten()
                .copied()
                .collect(),
        )?,
        eps: Tensor::new(vec![t_steps, batch, classes], eps_all)?,
        phi: Tensor::full(vec![t_steps, batch, classes], 1.0),
    });

    // Hidden layers, top down.
    let mut delta_t = delta_below;
    for l in (0..hidden).rev() {
        let n = dims[l].1;
        let w_l = net[l].effective_weights();
        let mut eps_next = Tensor::zeros(vec![batch, n]);
        let mut next_delta: Vec<Tensor> = Vec::with_capacity(t_steps);
        let mut eps_all = vec![0.0f32; t_steps * batch * n];
        let mut phi_all = vec![0.0f32; t_steps * batch * n];
        let mut delta_all = vec![0.0f32; t_steps * batch * n];
        for t in (0..t_steps).rev() {
            let v = slice_step(&trace.records[l].potentials, t);
            let phi = surrogate_grad(&v.map(|x| x - params.theta));
            let eps = delta_t[t].hadamard(&phi)?.add(&eps_next.scale(alpha))?;
            let s = input_of(l, t);
            grads[l] = grads[l].add(&matmul(&eps.transpose2()?, &s)?)?;
            next_delta.push(matmul(&eps, &w_l)?);
            let span = t * batch * n..(t + 1) * batch * n;
            eps_all[span.clone()].copy_from_slice(eps.data());
            phi_all[span.clone()].copy_from_slice(phi.data());
            delta_all[span].copy_from_slice(delta_t[t].data());
            eps_next = eps;
        }
        next_delta.reverse();
        buffers[l] = Some(BpttBuffers {
            delta: Tensor::new(vec![t_steps, batch, n], delta_all)?,
            eps: Tensor::new(vec![t_steps, batch, n], eps_all)?,
            phi: Tensor::new(vec![t_steps, batch, n], phi_all)?,
        });
        delta_t = next_delta;
    }

    Ok((grads, buffers.into_iter().map(|b| b.unwrap()).collect()))
}

/// Dense per-layer weight gradients from a recorded forward pass.
pub fn bptt_backward(
    trace: &ForwardTrace,
    readout_grad: &Tensor,
    net: &[MaskedLayer],
    params: &LifParams,
) -> Result<Vec<Tensor>> {
    bptt_backward_detailed(trace, readout_grad, net, params).map(|(g, _)| g)
}

/// Softmax cross-entropy, mean over the batch, with its readout gradient
/// (softmax - onehot) / batch.
pub fn cross_entropy_with_grad(readout: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if readout.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "readout must be [batch, classes], got {:?}",
            readout.shape()
        )));
    }
    let (batch, classes) = (readout.shape()[0], readout.shape()[1]);
    if labels.len() != batch {
        return Err(Error::Data(format!(
            "{} labels for batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = vec![0.0f32; batch * classes];
    let mut loss = 0.0f64;
    for b in 0..batch {
        let row = &readout.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&x| ((x - max) as f64).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss -= (exps[labels[b]] / sum).ln();
        for c in 0..classes {
            let p = (exps[c] / sum) as f32;
            grad[b * classes + c] =
                (p - if c == labels[b] { 1.0 } else { 0.0 }) / batch as f32;
        }
    }
    Ok((
        (loss / batch as f64) as f32,
        Tensor::new(vec![batch, classes], grad)?,
    ))
}
