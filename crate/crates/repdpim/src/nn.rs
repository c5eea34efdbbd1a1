//! Desk-scale quantized inference through the mapped macro datapath.
//!
//! Weights arrive as CSV, get packed onto the macro by the mapper, and
//! every multiply of every layer runs through the bit-serial datapath in
//! the requested mode. Quantization is symmetric per-tensor with zero
//! point 0, which pairs naturally with the sign-magnitude multiplier.
//! Accumulation is 32-bit, ReLU runs off-array between layers, biases are
//! added post-accumulation at full precision, and activations requantize
//! to 8 bits before the next layer. Quality reports always compare
//! against an exact-mode run on identical quantized inputs, so they
//! isolate the approximate-multiplier contribution; the published
//! large-model scores use an FP32 denominator instead and live in
//! [`reported`] as context.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::{MacroConfig, MacroState};
use crate::cia2m::CiaMode;
use crate::error::{Error, Result};
use crate::mapper::{apply_pruning, map_layer, schedule, LayerKind, LayerSpec, MappingPlan};

/// Published large-model results, recorded for context only; desk-scale
/// fixtures cannot reproduce them.
pub mod reported {
    /// CIFAR-10 top-1 under INT8 + iterative multiply + 30% pruning.
    pub const RESNET18_TOP1_PCT: f64 = 90.1;
    pub const VGG16_TOP1_PCT: f64 = 89.72;
    /// FP32 baselines of the same models.
    pub const RESNET18_FP32_TOP1_PCT: f64 = 93.2;
    pub const VGG16_FP32_TOP1_PCT: f64 = 92.64;
    /// Quality-of-result: quantized over FP32 top-1, the VGG-16 pair.
    pub const QOR_VS_FP32_PCT: f64 = 96.85;
}

/// Symmetric per-tensor quantized values, zero point 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub data: Vec<i32>,
    pub scale: f64,
    /// Always 0; kept explicit so serialized tensors are self-describing.
    pub zero_point: i32,
    pub shape: Vec<usize>,
    pub precision: u32,
}

impl QuantTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 * self.scale).collect()
    }
}

/// Symmetric quantization: `scale = max|x| / (2^(p-1) - 1)`, values
/// rounded half away from zero. An all-zero tensor takes scale 1 so
/// dequantization stays well-defined.
pub fn quantize(data: &[f64], precision: u32) -> Result<QuantTensor> {
    if !(2..=16).contains(&precision) {
        return Err(Error::InvalidWidth(precision));
    }
    let qmax = ((1i32 << (precision - 1)) - 1) as f64;
    let peak = data.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let scale = if peak == 0.0 { 1.0 } else { peak / qmax };
    let values: Vec<i32> = data.iter().map(|&x| (x / scale).round() as i32).collect();
    Ok(QuantTensor {
        shape: vec![values.len()],
        data: values,
        scale,
        zero_point: 0,
        precision,
    })
}

/// One weight tensor with its role in the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetLayer {
    pub name: String,
    pub kind: LayerKind,
    pub weights: QuantTensor,
    /// Full-precision bias values with their own scale.
    pub bias: Option<(Vec<i32>, f64)>,
}

/// Sequential layer chain parsed from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<NetLayer>,
}

/// Parses the weight CSV format.
///
/// Each tensor opens with a header `#layer,<name>,<kind>,<shape>,<scale>`
/// where kind is `fc`, `conv`, or `bias` and shape joins dims with `x`
/// (`4x8` for fc out-by-in, `4x3x3x2` for conv filters-by-side-by-side-
/// by-channels, `4` for bias). Data rows follow row-major, one row per
/// leading index, last dim across the row. Bias tensors attach to the
/// layer declared before them.
pub fn load_weights_csv(path: impl AsRef<Path>) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    parse_weights_csv(&text)
}

pub fn parse_weights_csv(text: &str) -> Result<Network> {
    let mut layers: Vec<NetLayer> = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((index, line)) = lines.next() {
        let lineno = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let header = parse_header(line, lineno)?;
        let rows = header.dims[..header.dims.len() - 1].iter().product::<usize>();
        let row_len = *header.dims.last().expect("dims verified non-empty");
        let mut data: Vec<i32> = Vec::with_capacity(rows * row_len);
        for _ in 0..rows {
            let Some(&(_, next)) = lines.peek() else { break };
            if next.starts_with("#layer") {
                break;
            }
            let (index, row) = lines.next().expect("peeked");
            parse_row(row, index + 1, row_len, header.is_weight(), &mut data)?;
        }
        if data.len() != rows * row_len {
            return Err(Error::ShapeMismatch(format!(
                "layer '{}' declares {} values, file holds {}",
                header.name,
                rows * row_len,
                data.len()
            )));
        }
        attach(&mut layers, header, data)?;
    }
    if layers.is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(Network { layers })
}

struct Header {
    name: String,
    kind: String,
    dims: Vec<usize>,
    scale: f64,
}

impl Header {
    fn is_weight(&self) -> bool {
        self.kind != "bias"
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<Header> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 || fields[0] != "#layer" {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: "header must be '#layer,<name>,<kind>,<shape>,<scale>'".into(),
        });
    }
    let kind = fields[2];
    let dims: Vec<usize> = fields[3]
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| Error::MalformedRow {
            line: lineno,
            reason: format!("invalid shape '{}'", fields[3]),
        }))
        .collect::<Result<_>>()?;
    let dims_ok = match kind {
        "fc" => dims.len() == 2,
        "conv" => dims.len() == 4 && dims[1] == dims[2],
        "bias" => dims.len() == 1,
        _ => {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: format!("unknown kind '{kind}'"),
            })
        }
    };
    if !dims_ok || dims.iter().any(|&d| d == 0) {
        return Err(Error::ShapeMismatch(format!(
            "kind '{kind}' cannot have shape '{}' (line {lineno})",
            fields[3]
        )));
    }
    let scale: f64 = fields[4].parse().map_err(|_| Error::MalformedRow {
        line: lineno,
        reason: format!("invalid scale '{}'", fields[4]),
    })?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonPositiveScale { scale, line: lineno });
    }
    Ok(Header {
        name: fields[1].to_string(),
        kind: kind.to_string(),
        dims,
        scale,
    })
}

fn parse_row(
    line: &str,
    lineno: usize,
    expected: usize,
    weight_range: bool,
    data: &mut Vec<i32>,
) -> Result<()> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: format!("expected {expected} values, got {}", fields.len()),
        });
    }
    for field in fields {
        let v: i32 = field.trim().parse().map_err(|_| Error::MalformedRow {
            line: lineno,
            reason: format!("invalid integer '{field}'"),
        })?;
        if weight_range && !(-127..=127).contains(&v) {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: format!("weight {v} outside the 8-bit signed range"),
            });
        }
        data.push(v);
    }
    Ok(())
}

fn attach(layers: &mut Vec<NetLayer>, header: Header, data: Vec<i32>) -> Result<()> {
    match header.kind.as_str() {
        "bias" => {
            let Some(last) = layers.last_mut() else {
                return Err(Error::InvalidLayer(format!(
                    "bias '{}' has no preceding weight layer",
                    header.name
                )));
            };
            if last.bias.is_some() {
                return Err(Error::InvalidLayer(format!(
                    "layer '{}' already has a bias",
                    last.name
                )));
            }
            let outputs = last.weights.shape[0];
            if header.dims[0] != outputs {
                return Err(Error::ShapeMismatch(format!(
                    "bias '{}' has {} values for {} outputs",
                    header.name, header.dims[0], outputs
                )));
            }
            last.bias = Some((data, header.scale));
        }
        kind => {
            layers.push(NetLayer {
                name: header.name,
                kind: if kind == "fc" { LayerKind::Fc } else { LayerKind::Conv },
                weights: QuantTensor {
                    data,
                    scale: header.scale,
                    zero_point: 0,
                    shape: header.dims,
                    precision: 8,
                },
                bias: None,
            });
        }
    }
    Ok(())
}

/// Serializes a network back to the CSV format; inverse of
/// [`parse_weights_csv`].
pub fn weights_to_csv(net: &Network) -> String {
    let mut out = String::new();
    for layer in &net.layers {
        let kind = match layer.kind {
            LayerKind::Fc => "fc",
            LayerKind::Conv => "conv",
        };
        write_tensor(
            &mut out,
            &layer.name,
            kind,
            &layer.weights.shape,
            layer.weights.scale,
            &layer.weights.data,
        );
        if let Some((bias, scale)) = &layer.bias {
            write_tensor(
                &mut out,
                &format!("{}_bias", layer.name),
                "bias",
                &[bias.len()],
                *scale,
                bias,
            );
        }
    }
    out
}

fn write_tensor(out: &mut String, name: &str, kind: &str, shape: &[usize], scale: f64, data: &[i32]) {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    writeln!(out, "#layer,{name},{kind},{},{scale}", dims.join("x")).expect("string write");
    let row_len = *shape.last().expect("non-empty shape");
    for row in data.chunks(row_len) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).expect("string write");
    }
}

/// Quality of a run relative to exact-mode INT8 on the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QorReport {
    pub mode: CiaMode,
    pub top1_agreement_vs_exact_int8: f64,
    pub output_mse_vs_exact_int8: f64,
    pub pruned_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// Dequantized final-layer values per batch element.
    pub outputs: Vec<Vec<f64>>,
    pub report: QorReport,
}

/// Marks the `round(fraction * n)` smallest-magnitude weights, ties
/// broken by index.
pub fn magnitude_mask(weights: &[i32], fraction: f64) -> Vec<bool> {
    let k = (fraction * weights.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (weights[i].unsigned_abs(), i));
    let mut mask = vec![false; weights.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

struct PreparedLayer {
    spec: LayerSpec,
    plan: MappingPlan,
    /// Pruned weights, masked entries zeroed.
    weights: Vec<i64>,
    w_scale: f64,
    bias: Option<(Vec<i32>, f64)>,
    last: bool,
}

/// Activation geometry flowing between layers.
#[derive(Clone, Copy)]
struct Dims {
    h: usize,
    w: usize,
    c: usize,
}

impl Dims {
    fn len(&self) -> usize {
        self.h * self.w * self.c
    }
}

fn prepare_layers(
    net: &Network,
    config: &MacroConfig,
    mode: CiaMode,
    pruning: f64,
    input_len: usize,
) -> Result<Vec<PreparedLayer>> {
    let mut dims = Dims {
        h: 1,
        w: 1,
        c: input_len,
    };
    let mut prepared = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let spec = match layer.kind {
            LayerKind::Fc => {
                let (out, inp) = (layer.weights.shape[0], layer.weights.shape[1]);
                if inp != dims.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "layer '{}' expects {} inputs, chain provides {}",
                        layer.name,
                        inp,
                        dims.len()
                    )));
                }
                dims = Dims { h: 1, w: 1, c: out };
                LayerSpec::fc(inp, out, 8, 8)?
            }
            LayerKind::Conv => {
                let (n, side, depth) =
                    (layer.weights.shape[0], layer.weights.shape[1], layer.weights.shape[3]);
                let (h, w) = conv_input_dims(&layer.name, dims, depth)?;
                let spec = LayerSpec::conv(side, depth, n, h, w, 8, 8)?;
                dims = Dims {
                    h: h - side + 1,
                    w: w - side + 1,
                    c: n,
                };
                spec
            }
        };
        let mask = magnitude_mask(&layer.weights.data, pruning);
        let weights: Vec<i64> = layer
            .weights
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &zeroed)| if zeroed { 0 } else { v as i64 })
            .collect();
        let plan = map_layer(&spec, config, mode)?;
        let plan = apply_pruning(&plan, &mask)?;
        prepared.push(PreparedLayer {
            spec,
            plan,
            weights,
            w_scale: layer.weights.scale,
            bias: layer.bias.clone(),
            last: i == net.layers.len() - 1,
        });
    }
    Ok(prepared)
}

/// First conv layer infers a square input; later geometry is tracked.
fn conv_input_dims(name: &str, dims: Dims, depth: usize) -> Result<(usize, usize)> {
    if dims.h == 1 && dims.w == 1 {
        if dims.c % depth != 0 {
            return Err(Error::DimensionMismatch(format!(
                "layer '{name}' needs {depth} channels, chain provides {} values",
                dims.c
            )));
        }
        let area = dims.c / depth;
        let side = (area as f64).sqrt().round() as usize;
        if side * side != area {
            return Err(Error::DimensionMismatch(format!(
                "layer '{name}' input area {area} is not square"
            )));
        }
        Ok((side, side))
    } else {
        if dims.c != depth {
            return Err(Error::DimensionMismatch(format!(
                "layer '{name}' needs {depth} channels, chain provides {}",
                dims.c
            )));
        }
        Ok((dims.h, dims.w))
    }
}

/// Runs one batch element through the prepared chain, returning the
/// final-layer real values.
fn forward(
    layers: &[PreparedLayer],
    macro_state: &mut MacroState,
    input: &[f64],
) -> Result<Vec<f64>> {
    let mut acts = quantize(input, 8)?;
    for layer in layers {
        let act_values: Vec<i64> = acts.data.iter().map(|&v| v as i64).collect();
        let trace = schedule(&layer.plan, &layer.weights, &act_values)?;
        let accumulated = trace.replay(macro_state)?;
        let scale = acts.scale * layer.w_scale;
        let real: Vec<f64> = accumulated
            .iter()
            .enumerate()
            .map(|(i, &acc)| {
                debug_assert!(
                    i32::try_from(acc).is_ok(),
                    "accumulator exceeded 32 bits"
                );
                let filter = i % layer.spec.filter_count;
                let mut v = acc as f64 * scale;
                if let Some((bias, b_scale)) = &layer.bias {
                    v += bias[filter] as f64 * b_scale;
                }
                v
            })
            .collect();
        if layer.last {
            return Ok(real);
        }
        let rectified: Vec<f64> = real.into_iter().map(|v| v.max(0.0)).collect();
        acts = quantize(&rectified, 8)?;
    }
    unreachable!("prepare_layers marks the final layer")
}

/// Runs the batch in the requested mode and again in exact mode on the
/// same quantized inputs, reporting agreement and output error between
/// the two. Every multiply goes through the mapped macro datapath.
pub fn run_network(
    net: &Network,
    batch: &[Vec<f64>],
    mode: CiaMode,
    pruning: f64,
    config: &MacroConfig,
) -> Result<InferenceResult> {
    if net.layers.is_empty() {
        return Err(Error::EmptyModel);
    }
    if batch.is_empty() {
        return Err(Error::ZeroSamples);
    }
    if !(0.0..=1.0).contains(&pruning) {
        return Err(Error::InvalidLayer(format!(
            "pruning fraction {pruning} outside [0, 1]"
        )));
    }
    let input_len = batch[0].len();
    if let Some(bad) = batch.iter().find(|b| b.len() != input_len) {
        return Err(Error::DimensionMismatch(format!(
            "batch elements disagree on input length: {} vs {}",
            input_len,
            bad.len()
        )));
    }
    let modal = prepare_layers(net, config, mode, pruning, input_len)?;
    let exact = prepare_layers(net, config, CiaMode::Exact, pruning, input_len)?;
    let mut macro_state = MacroState::new(*config)?;
    let mut outputs = Vec::with_capacity(batch.len());
    let mut exact_outputs = Vec::with_capacity(batch.len());
    for element in batch {
        outputs.push(forward(&modal, &mut macro_state, element)?);
        exact_outputs.push(forward(&exact, &mut macro_state, element)?);
    }
    let agree = outputs
        .iter()
        .zip(&exact_outputs)
        .filter(|(a, b)| argmax(a) == argmax(b))
        .count() as f64
        / batch.len() as f64;
    let (mut sq_sum, mut n) = (0.0f64, 0u64);
    for (a, b) in outputs.iter().zip(&exact_outputs) {
        for (&x, &y) in a.iter().zip(b) {
            sq_sum += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok(InferenceResult {
        outputs,
        report: QorReport {
            mode,
            top1_agreement_vs_exact_int8: agree,
            output_mse_vs_exact_int8: sq_sum / n as f64,
            pruned_fraction: pruning,
        },
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
