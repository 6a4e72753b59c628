use super::{DECODER_HIDDEN, EMBED_DIM, FLOW_CHANNELS, INPUT_EXTENT, SAMPLES_PER_WINDOW};
use crate::dataio::KIN_DIM;
use crate::error::{Error, Result};
use crate::numerics::gradcheck::{central_differences, relative_error};
use crate::numerics::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, mse_loss, relu,
    relu_backward, ConvSpec, ParamSet, Tensor,
};
use crate::util::{derive_seed, seeded_rng};
use rand::Rng;

const KERNEL: usize = 3;
const CONV_SPEC: ConvSpec = ConvSpec { stride: 2, pad: 1 };

/// Layer sizes. The defaults are the reference architecture; smaller ones are
/// useful for tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_extent: usize,
    pub conv_channels: Vec<usize>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub samples: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_channels: FLOW_CHANNELS,
            input_extent: INPUT_EXTENT,
            conv_channels: vec![32, 64, 128, 128],
            embed_dim: EMBED_DIM,
            hidden: DECODER_HIDDEN,
            samples: SAMPLES_PER_WINDOW,
        }
    }
}

fn conv_names(i: usize) -> (String, String) {
    (
        format!("enc.conv{}.weight", i + 1),
        format!("enc.conv{}.bias", i + 1),
    )
}

const PROJ: (&str, &str) = ("enc.proj.weight", "enc.proj.bias");
const FC1: (&str, &str) = ("dec.fc1.weight", "dec.fc1.bias");
const FC2: (&str, &str) = ("dec.fc2.weight", "dec.fc2.bias");

/// Encoder parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub params: ParamSet,
    conv_layers: usize,
}

/// Decoder parameters φ.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub params: ParamSet,
}

/// Named gradients in the same naming scheme as the parameter sets.
pub type Gradients = Vec<(String, Tensor)>;

impl EncoderParams {
    /// Wraps a parameter set, checking that layer shapes chain together.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let conv_layers = (0..)
            .take_while(|&i| params.get(&conv_names(i).0).is_ok())
            .count();
        if conv_layers == 0 {
            return Err(Error::contract("encoder has no convolution layers"));
        }
        let mut channels = None;
        for i in 0..conv_layers {
            let (w, b) = conv_names(i);
            let w = params.value(&w)?;
            let b = params.value(&b)?;
            let s = w.shape();
            if s.len() != 4 || s[2] != KERNEL || s[3] != KERNEL || b.shape() != [s[0]] {
                return Err(Error::contract(format!(
                    "encoder conv{} has shape {s:?}",
                    i + 1
                )));
            }
            if channels.is_some_and(|c| c != s[1]) {
                return Err(Error::contract(format!(
                    "encoder conv{} input channels mismatch",
                    i + 1
                )));
            }
            channels = Some(s[0]);
        }
        let pw = params.value(PROJ.0)?.shape().to_vec();
        if pw.len() != 2 || Some(pw[1]) != channels || params.value(PROJ.1)?.shape() != [pw[0]] {
            return Err(Error::contract(format!(
                "encoder projection has shape {pw:?}"
            )));
        }
        if params.len() != 2 * conv_layers + 2 {
            return Err(Error::contract("encoder has unexpected extra parameters"));
        }
        Ok(EncoderParams {
            params,
            conv_layers,
        })
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.conv_layers)
            .flat_map(|i| {
                let (w, b) = conv_names(i);
                [w, b]
            })
            .collect();
        names.extend([PROJ.0.to_string(), PROJ.1.to_string()]);
        names
    }

    pub fn in_channels(&self) -> usize {
        self.params
            .value(&conv_names(0).0)
            .expect("validated")
            .shape()[1]
    }

    pub fn embed_dim(&self) -> usize {
        self.params.value(PROJ.0).expect("validated").shape()[0]
    }

    fn conv(&self, i: usize) -> (&Tensor, &Tensor) {
        let (w, b) = conv_names(i);
        (
            self.params.value(&w).expect("validated"),
            self.params.value(&b).expect("validated"),
        )
    }

    fn proj(&self) -> (&Tensor, &Tensor) {
        (
            self.params.value(PROJ.0).expect("validated"),
            self.params.value(PROJ.1).expect("validated"),
        )
    }
}

impl DecoderParams {
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let w1 = params.value(FC1.0)?.shape().to_vec();
        let w2 = params.value(FC2.0)?.shape().to_vec();
        let ok = w1.len() == 2
            && w2.len() == 2
            && w2[1] == w1[0]
            && w2[0] % KIN_DIM == 0
            && params.value(FC1.1)?.shape() == [w1[0]]
            && params.value(FC2.1)?.shape() == [w2[0]]
            && params.len() == 4;
        if !ok {
            return Err(Error::contract(format!(
                "decoder layer shapes {w1:?}, {w2:?} do not chain to a multiple of {KIN_DIM} outputs"
            )));
        }
        Ok(DecoderParams { params })
    }

    pub fn layer_names(&self) -> Vec<String> {
        [FC1.0, FC1.1, FC2.0, FC2.1].map(String::from).to_vec()
    }

    pub fn input_dim(&self) -> usize {
        self.params.value(FC1.0).expect("validated").shape()[1]
    }

    /// Kinematics rows produced per window.
    pub fn samples(&self) -> usize {
        self.params.value(FC2.0).expect("validated").shape()[0] / KIN_DIM
    }

    fn layer(&self, names: (&str, &str)) -> (&Tensor, &Tensor) {
        (
            self.params.value(names.0).expect("validated"),
            self.params.value(names.1).expect("validated"),
        )
    }
}

/// Kaiming-uniform weights in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
fn kaiming(shape: &[usize], fan_in: usize, rng: &mut impl rand::Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

pub fn init_params(seed: u64) -> (EncoderParams, DecoderParams) {
    init_params_with(&Architecture::default(), seed).expect("default architecture is valid")
}

/// Kaiming-uniform weights, zero biases; deterministic per seed.
pub fn init_params_with(arch: &Architecture, seed: u64) -> Result<(EncoderParams, DecoderParams)> {
    let mut rng = seeded_rng(seed);
    let mut enc = ParamSet::new();
    let mut c_in = arch.in_channels;
    for (i, &c_out) in arch.conv_channels.iter().enumerate() {
        let (w, b) = conv_names(i);
        enc.insert(
            w,
            kaiming(
                &[c_out, c_in, KERNEL, KERNEL],
                c_in * KERNEL * KERNEL,
                &mut rng,
            ),
        )?;
        enc.insert(b, Tensor::zeros(&[c_out]))?;
        c_in = c_out;
    }
    enc.insert(PROJ.0, kaiming(&[arch.embed_dim, c_in], c_in, &mut rng))?;
    enc.insert(PROJ.1, Tensor::zeros(&[arch.embed_dim]))?;

    let mut dec = ParamSet::new();
    let out = arch.samples * KIN_DIM;
    dec.insert(
        FC1.0,
        kaiming(&[arch.hidden, arch.embed_dim], arch.embed_dim, &mut rng),
    )?;
    dec.insert(FC1.1, Tensor::zeros(&[arch.hidden]))?;
    dec.insert(FC2.0, kaiming(&[out, arch.hidden], arch.hidden, &mut rng))?;
    dec.insert(FC2.1, Tensor::zeros(&[out]))?;
    Ok((
        EncoderParams::from_params(enc)?,
        DecoderParams::from_params(dec)?,
    ))
}

/// Intermediate values of an encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Input of each conv layer (the first is the flow stack).
    conv_inputs: Vec<Tensor>,
    /// Pre-activation output of each conv layer.
    conv_outputs: Vec<Tensor>,
    pooled: Tensor,
}

fn global_average_pool(x: &Tensor) -> Tensor {
    let c = x.shape()[0];
    let area = x.len() / c;
    let data = x
        .data()
        .chunks_exact(area)
        .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / area as f64) as f32)
        .collect();
    Tensor::from_vec(&[c], data).expect("one value per channel")
}

pub fn encode(flows: &Tensor, enc: &EncoderParams) -> Result<Tensor> {
    encode_traced(flows, enc).map(|(rep, _)| rep)
}

pub fn encode_traced(flows: &Tensor, enc: &EncoderParams) -> Result<(Tensor, EncoderTrace)> {
    flows.expect_rank(3, "encoder input")?;
    if flows.shape()[0] != enc.in_channels() {
        return Err(Error::contract(format!(
            "encoder expects {} flow channels, got shape {:?}",
            enc.in_channels(),
            flows.shape()
        )));
    }
    let mut conv_inputs = Vec::with_capacity(enc.conv_layers);
    let mut conv_outputs = Vec::with_capacity(enc.conv_layers);
    let mut x = flows.clone();
    for i in 0..enc.conv_layers {
        let (w, b) = enc.conv(i);
        let y = conv2d(&x, w, b, CONV_SPEC)?;
        let next = relu(&y);
        conv_inputs.push(x);
        conv_outputs.push(y);
        x = next;
    }
    let pooled = global_average_pool(&x);
    let (pw, pb) = enc.proj();
    let rep = fully_connected(&pooled, pw, pb)?;
    Ok((
        rep,
        EncoderTrace {
            conv_inputs,
            conv_outputs,
            pooled,
        },
    ))
}

/// Parameter gradients of the encoder given the gradient of its output.
pub fn encode_backward(
    trace: &EncoderTrace,
    enc: &EncoderParams,
    grad_rep: &Tensor,
) -> Result<Gradients> {
    let mut grads = Vec::with_capacity(2 * enc.conv_layers + 2);
    let (pw, pb) = enc.proj();
    let g = fully_connected_backward(&trace.pooled, pw, pb, grad_rep)?;
    grads.push((PROJ.0.to_string(), g.weights));
    grads.push((PROJ.1.to_string(), g.bias));

    let last = trace.conv_outputs.last().expect("at least one conv layer");
    let area = last.len() / last.shape()[0];
    let scale = 1.0 / area as f32;
    let mut grad = Tensor::from_fn(last.shape(), |i| g.input.data()[i / area] * scale);
    for i in (0..enc.conv_layers).rev() {
        let (w, b) = enc.conv(i);
        let pre = &trace.conv_outputs[i];
        let grad_pre = relu_backward(pre, &grad)?;
        let cg = conv2d_backward(&trace.conv_inputs[i], w, b, CONV_SPEC, &grad_pre, i > 0)?;
        let (wn, bn) = conv_names(i);
        grads.push((wn, cg.weights));
        grads.push((bn, cg.bias));
        if let Some(gi) = cg.input {
            grad = gi;
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    rep: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
}

/// Maps a representation to `[samples, 76]` kinematics rows.
pub fn decode(rep: &Tensor, dec: &DecoderParams) -> Result<Tensor> {
    decode_traced(rep, dec).map(|(out, _)| out)
}

pub fn decode_traced(rep: &Tensor, dec: &DecoderParams) -> Result<(Tensor, DecoderTrace)> {
    rep.expect_shape(&[dec.input_dim()], "decoder input")?;
    let (w1, b1) = dec.layer(FC1);
    let hidden_pre = fully_connected(rep, w1, b1)?;
    let hidden = relu(&hidden_pre);
    let (w2, b2) = dec.layer(FC2);
    let out = fully_connected(&hidden, w2, b2)?.reshape(&[dec.samples(), KIN_DIM])?;
    Ok((
        out,
        DecoderTrace {
            rep: rep.clone(),
            hidden_pre,
            hidden,
        },
    ))
}

/// Returns the decoder parameter gradients and the gradient w.r.t. its input.
pub fn decode_backward(
    trace: &DecoderTrace,
    dec: &DecoderParams,
    grad_out: &Tensor,
) -> Result<(Gradients, Tensor)> {
    let (w2, b2) = dec.layer(FC2);
    grad_out.expect_shape(&[dec.samples(), KIN_DIM], "decoder output gradient")?;
    let flat = grad_out.clone().reshape(&[dec.samples() * KIN_DIM])?;
    let g2 = fully_connected_backward(&trace.hidden, w2, b2, &flat)?;
    let grad_hidden = relu_backward(&trace.hidden_pre, &g2.input)?;
    let (w1, b1) = dec.layer(FC1);
    let g1 = fully_connected_backward(&trace.rep, w1, b1, &grad_hidden)?;
    let grads = vec![
        (FC1.0.to_string(), g1.weights),
        (FC1.1.to_string(), g1.bias),
        (FC2.0.to_string(), g2.weights),
        (FC2.1.to_string(), g2.bias),
    ];
    Ok((grads, g1.input))
}

/// MSE between `decode(encode(flows))` and `target` with all parameter
/// gradients (encoder first, then decoder).
pub fn loss_and_grads(
    flows: &Tensor,
    target: &Tensor,
    enc: &EncoderParams,
    dec: &DecoderParams,
) -> Result<(f32, Gradients, Gradients)> {
    let (rep, etrace) = encode_traced(flows, enc)?;
    let (pred, dtrace) = decode_traced(&rep, dec)?;
    let (loss, grad_pred) = mse_loss(&pred, target)?;
    let (dgrads, grad_rep) = decode_backward(&dtrace, dec, &grad_pred)?;
    let egrads = encode_backward(&etrace, enc, &grad_rep)?;
    Ok((loss, egrads, dgrads))
}

/// Which ReLUs are active; the loss is only differentiable where a
/// perturbation leaves this pattern unchanged.
fn activation_pattern(x: &Tensor, enc: &EncoderParams, dec: &DecoderParams) -> Result<Vec<bool>> {
    let (rep, et) = encode_traced(x, enc)?;
    let (_, dt) = decode_traced(&rep, dec)?;
    Ok(et
        .conv_outputs
        .iter()
        .chain([&dt.hidden_pre])
        .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
        .collect())
}

/// Central finite differences of the encode-decode MSE at `probes` seeded
/// coordinates of every parameter tensor, in f32 end to end, against
/// [`loss_and_grads`]. Probes whose perturbation would cross a ReLU kink are
/// redrawn. Returns the largest relative error.
pub fn composite_grad_check(arch: &Architecture, seed: u64, probes: usize) -> Result<f64> {
    // With the activation pattern fixed the loss is quadratic in any single
    // weight, so the central difference is exact for any step that keeps the
    // pattern; the widest such step least suffers from f32 rounding.
    const STEPS: [f32; 3] = [1e-2, 3e-3, 1e-3];
    let (enc, dec) = init_params_with(arch, seed)?;
    let e = arch.input_extent;
    let mut rng = seeded_rng(derive_seed(seed, "gradcheck/composite"));
    let x = Tensor::from_fn(&[arch.in_channels, e, e], |_| {
        rng.random_range(-1.0f32..1.0)
    });
    let target = Tensor::from_fn(&[arch.samples, KIN_DIM], |_| rng.random_range(-1.0f32..1.0));
    let (_, eg, dg) = loss_and_grads(&x, &target, &enc, &dec)?;
    let perturbed = |name: &str, idx: usize, v: f32| {
        let (mut e2, mut d2) = (enc.clone(), dec.clone());
        let p = if name.starts_with("enc.") {
            &mut e2.params
        } else {
            &mut d2.params
        };
        p.get_mut(name)
            .expect("gradient names match parameters")
            .value
            .data_mut()[idx] = v;
        (e2, d2)
    };
    let mut worst = 0.0f64;
    for (name, analytic) in eg.iter().chain(&dg) {
        let set = if name.starts_with("enc.") {
            &enc.params
        } else {
            &dec.params
        };
        let mut checked = 0;
        for _ in 0..100 * probes {
            if checked == probes {
                break;
            }
            let idx = rng.random_range(0..analytic.len());
            let v0 = set
                .value(name)
                .expect("gradient names match parameters")
                .data()[idx];
            let mut step = None;
            for eps in STEPS {
                let (ep, dp) = perturbed(name, idx, v0 + eps);
                let (em, dm) = perturbed(name, idx, v0 - eps);
                if activation_pattern(&x, &ep, &dp)? == activation_pattern(&x, &em, &dm)? {
                    step = Some(eps);
                    break;
                }
            }
            let Some(eps) = step else { continue };
            let mut value = [v0];
            let numeric = central_differences(&mut value, eps, |v| {
                let (e2, d2) = perturbed(name, idx, v[0]);
                let pred =
                    decode(&encode(&x, &e2).expect("shapes fixed"), &d2).expect("shapes fixed");
                mse_loss(&pred, &target).expect("shapes fixed").0 as f64
            })[0];
            worst = worst.max(relative_error(analytic.data()[idx] as f64, numeric));
            checked += 1;
        }
        if checked < probes {
            return Err(Error::contract(format!(
                "composite_grad_check: no kink-free probes for `{name}`"
            )));
        }
    }
    Ok(worst)
}
