//! Finite-difference self-test over every differentiable op and a small
//! end-to-end model, in f64.

use dsunet::autodiff::ParamStore;
use dsunet::autodiff::{check_param_gradients, finite_difference_check, GradCheckReport, Graph, Var};
use dsunet::model::{AttentionGate, BasicBlock, BlockConfig, HybridUNet, ModelConfig, PoolingKind};
use dsunet::nn::Init;
use dsunet::rng::SplitMix64;
use dsunet::{Result, Shape, Tensor};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: String,
    /// Input holding the worst element.
    pub input: String,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= TOLERANCE
    }
}

type Loss<'a> = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a>;

/// Checks `f` against each of `inputs` in turn, holding the others fixed.
fn check_inputs(op: &str, inputs: &[(&str, Tensor<f64>)], f: Loss<'_>) -> Result<OpCheck> {
    let mut worst: Option<OpCheck> = None;
    for (k, (label, x)) in inputs.iter().enumerate() {
        let report = finite_difference_check(
            |g, xv| {
                let vars: Vec<Var> =
                    inputs.iter().enumerate().map(|(j, (_, t))| if j == k { xv } else { g.input(t.clone()) }).collect();
                f(g, &vars)
            },
            x,
            STEP,
        )?;
        let total = worst.as_ref().map_or(0, |w| w.report.checked) + report.checked;
        let replace = worst.as_ref().is_none_or(|w| report.max_rel_error > w.report.max_rel_error);
        if replace {
            worst = Some(OpCheck { op: op.into(), input: (*label).into(), report });
        }
        if let Some(w) = &mut worst {
            w.report.checked = total;
        }
    }
    Ok(worst.expect("at least one input"))
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn weighted_sum(g: &mut Graph<f64>, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = SplitMix64::new(rng_seed);
    let r = g.input(Tensor::uniform(g.shape(y), -1.0, 1.0, &mut rng));
    let p = g.mul(y, r)?;
    g.reduce_sum(p)
}

/// Values on a 0.01-spaced grid in shuffled order: no ties and no element
/// within a finite-difference step of another.
fn distinct(shape: Shape, rng: &mut SplitMix64) -> Tensor<f64> {
    let n = shape.numel();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    rng.shuffle(&mut v);
    Tensor::from_vec(shape, v).expect("shape")
}

/// Uniform values kept at least 0.1 away from zero.
fn off_zero(shape: Shape, rng: &mut SplitMix64) -> Tensor<f64> {
    let v = (0..shape.numel())
        .map(|_| {
            let m = rng.uniform(0.1, 1.0);
            if rng.next_u64() & 1 == 0 {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, v).expect("shape")
}

pub fn gradcheck_model_config(levels: usize) -> ModelConfig {
    ModelConfig {
        levels,
        channels: (0..levels).map(|l| 4 << l).collect(),
        bottleneck: 4 << levels,
        gn_groups: 2,
        pooling: PoolingKind::Attention,
        ..Default::default()
    }
}

/// Runs every check. `size` is the spatial side of the test inputs.
pub fn run_suite(size: usize, levels: usize, seed: u64, include_broken: bool) -> Result<Vec<OpCheck>> {
    let mut rng = SplitMix64::new(seed);
    let s = |n, c, h, w| Shape::new(n, c, h, w);
    let x_shape = s(2, 3, size, size)?;
    let u = |shape: Shape, rng: &mut SplitMix64| Tensor::<f64>::uniform(shape, -1.0, 1.0, rng);
    let small = s(1, 2, 3, 4)?;
    let mut out = Vec::new();
    let ws = seed ^ 0x5eed;

    let (a, b) = (u(small, &mut rng), u(small, &mut rng));
    out.push(check_inputs(
        "add",
        &[("a", a.clone()), ("b", b.clone())],
        Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "mul",
        &[("a", a.clone()), ("b", b.clone())],
        Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    let gate = u(s(1, 1, 3, 4)?, &mut rng);
    out.push(check_inputs(
        "mul_broadcast",
        &[("a", a.clone()), ("b", gate)],
        Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "scale",
        &[("a", a.clone())],
        Box::new(|g, v| {
            let y = g.scale(v[0], -2.5)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "sum_all",
        &[("a", a.clone()), ("b", b.clone()), ("c", u(small, &mut rng))],
        Box::new(|g, v| {
            let y = g.sum_all(v)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "reduce_sum",
        &[("a", a.clone())],
        Box::new(|g, v| {
            let y = g.mul(v[0], v[0])?;
            g.reduce_sum(y)
        }),
    )?);
    out.push(check_inputs(
        "concat",
        &[("a", a.clone()), ("b", u(s(1, 3, 3, 4)?, &mut rng))],
        Box::new(|g, v| {
            let y = g.concat(v[0], v[1])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "leaky_relu",
        &[("x", off_zero(small, &mut rng))],
        Box::new(|g, v| {
            let y = g.leaky_relu(v[0], 0.01)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "sigmoid",
        &[("x", u(small, &mut rng).map(|v| 3.0 * v))],
        Box::new(|g, v| {
            let y = g.sigmoid(v[0])?;
            weighted_sum(g, y, ws)
        }),
    )?);

    let x = u(x_shape, &mut rng);
    let w = u(s(4, 3, 3, 3)?, &mut rng);
    let bias = u(s(1, 4, 1, 1)?, &mut rng);
    out.push(check_inputs(
        "conv2d",
        &[("x", x.clone()), ("w", w.clone()), ("b", bias.clone())],
        Box::new(|g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "conv2d_strided",
        &[("x", x.clone()), ("w", w), ("b", bias)],
        Box::new(|g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 0)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "depthwise_conv2d",
        &[("x", x.clone()), ("w", u(s(3, 1, 3, 3)?, &mut rng))],
        Box::new(|g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], 1, 1)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "pointwise_conv2d",
        &[("x", x.clone()), ("w", u(s(5, 3, 1, 1)?, &mut rng)), ("b", u(s(1, 5, 1, 1)?, &mut rng))],
        Box::new(|g, v| {
            let y = g.pointwise_conv2d(v[0], v[1], Some(v[2]))?;
            weighted_sum(g, y, ws)
        }),
    )?);
    let x4 = u(s(2, 4, size, size)?, &mut rng);
    out.push(check_inputs(
        "group_norm",
        &[("x", x4.clone()), ("gamma", u(s(1, 4, 1, 1)?, &mut rng)), ("beta", u(s(1, 4, 1, 1)?, &mut rng))],
        Box::new(|g, v| {
            let y = g.group_norm(v[0], v[1], v[2], 2, 1e-5)?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "max_pool_2x",
        &[("x", distinct(x_shape, &mut rng))],
        Box::new(|g, v| {
            let y = g.max_pool_2x(v[0])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    let logits = u(s(2, 1, size, size)?, &mut rng).map(|v| 2.0 * v);
    out.push(check_inputs(
        "attention_pool_2x",
        &[("x", x.clone()), ("logits", logits)],
        Box::new(|g, v| {
            let y = g.attention_pool_2x(v[0], v[1])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "upsample_nearest_2x",
        &[("x", u(s(1, 2, size / 2, size / 2)?, &mut rng))],
        Box::new(|g, v| {
            let y = g.upsample_nearest_2x(v[0])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    let target =
        Tensor::<f64>::uniform(s(2, 1, size, size)?, 0.0, 1.0, &mut rng).map(|v| if v > 0.6 { 1.0 } else { 0.0 });
    let logit_in = u(s(2, 1, size, size)?, &mut rng).map(|v| 3.0 * v);
    out.push(check_inputs(
        "soft_dice_loss",
        &[("logits", logit_in.clone())],
        Box::new(|g, v| g.soft_dice_loss(v[0], &target)),
    )?);
    out.push(check_inputs("bce_loss", &[("logits", logit_in)], Box::new(|g, v| g.bce_loss(v[0], &target)))?);

    // composite layers, checked against their inputs and every parameter
    let mut store = ParamStore::<f64>::new();
    let mut init_rng = rng.fork(7);
    let mut init = Init::new(&mut store, &mut init_rng);
    let gate_layer = AttentionGate::new(&mut init, "gate", 4, 4, 0.01)?;
    let block_cfg = BlockConfig { c_in: 3, c_out: 4, depth: 2, groups: 2, slope: 0.01, residual: true, kernel: 3 };
    let block = BasicBlock::new(&mut init, "block", block_cfg)?;
    let gating = u(s(2, 4, size, size)?, &mut rng);
    out.push(check_inputs(
        "attention_gate",
        &[("x_skip", x4.clone()), ("gating", gating.clone())],
        Box::new(|g, v| {
            let (y, _) = gate_layer.forward(g, &store, v[0], v[1])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(check_inputs(
        "basic_block",
        &[("x", x.clone())],
        Box::new(|g, v| {
            let y = block.forward(g, &store, v[0])?;
            weighted_sum(g, y, ws)
        }),
    )?);
    out.push(merge_params(
        "layer_params",
        check_param_gradients(
            &mut store,
            |st: &ParamStore<f64>, g: &mut Graph<f64>| {
                let xs = g.input(x4.clone());
                let gv = g.input(gating.clone());
                let (y, _) = gate_layer.forward(g, st, xs, gv)?;
                let xb = g.input(x.clone());
                let z = block.forward(g, st, xb)?;
                let a = weighted_sum(g, y, ws)?;
                let b = weighted_sum(g, z, ws + 1)?;
                g.add(a, b)
            },
            STEP,
        )?,
    ));

    let mut model = HybridUNet::<f64>::build(&gradcheck_model_config(levels), seed)?;
    let image = Tensor::<f64>::uniform(s(1, 1, size, size)?, 0.0, 1.0, &mut rng);
    let reports = check_param_gradients(
        &mut model,
        |m: &HybridUNet<f64>, g: &mut Graph<f64>| {
            let xv = g.input(image.clone());
            let y = m.forward(g, xv)?;
            weighted_sum(g, y, ws)
        },
        STEP,
    )?;
    out.push(merge_params("model_end_to_end", reports));

    if include_broken {
        out.push(check_inputs(
            "broken_backward_fixture",
            &[("x", a)],
            Box::new(|g, v| {
                // x * detach(x): the detached factor hides half the gradient
                let d = g.detach(v[0])?;
                let y = g.mul(v[0], d)?;
                weighted_sum(g, y, ws)
            }),
        )?);
    }
    Ok(out)
}

fn merge_params(op: &str, reports: Vec<(String, GradCheckReport)>) -> OpCheck {
    let checked: usize = reports.iter().map(|(_, r)| r.checked).sum();
    let (input, mut report) = reports
        .into_iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .expect("model has parameters");
    report.checked = checked;
    OpCheck { op: op.into(), input, report }
}

pub const REPORT_HEADER: &str = "op,max_rel_error,worst_input,worst_index,checked,status";

pub fn report_csv(checks: &[OpCheck]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for c in checks {
        out.push_str(&format!(
            "{},{:.3e},{},{},{},{}\n",
            c.op,
            c.report.max_rel_error,
            c.input,
            c.report.worst_index,
            c.report.checked,
            if c.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}
