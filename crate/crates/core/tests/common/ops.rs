//! Finite-difference checks of every differentiable tape op.

use super::{check_graph, project, random_tensor};
use mgml::anchors::{propose_grid, propose_seven};
use mgml::autograd::Var;
use mgml::generators::{channel_separate_extract_traced, full_channel_extract_traced};
use mgml::nn::gradcheck::GradCheckReport;
use mgml::{Anchor, Tape};

fn unary(
    dims: [usize; 4],
    seed: u64,
    eps: f64,
    floor: f64,
    op: impl Fn(&mut Tape, Var) -> mgml::Result<Var>,
) -> GradCheckReport {
    let x = random_tensor(dims, seed);
    check_graph(
        &[x],
        |t, v| {
            let y = op(t, v[0])?;
            project(t, y, seed + 1)
        },
        eps,
        floor,
    )
}

/// One named report per op configuration.
pub fn op_suite(eps: f64, floor: f64) -> Vec<(String, GradCheckReport)> {
    let mut out: Vec<(String, GradCheckReport)> = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| out.push((name.to_string(), r));

    push("crop", unary([2, 4, 6, 6], 1, eps, floor, |t, x| t.crop_spatial(x, Anchor::new(1, 2, 5, 6).unwrap())));
    push("slice", unary([2, 4, 6, 6], 2, eps, floor, |t, x| t.slice_channels(x, 1, 3)));

    let parts = [random_tensor([2, 1, 3, 3], 3), random_tensor([2, 3, 3, 3], 4), random_tensor([2, 2, 3, 3], 5)];
    push(
        "concat",
        check_graph(
            &parts,
            |t, v| {
                let y = t.concat_channels(v)?;
                project(t, y, 6)
            },
            eps,
            floor,
        ),
    );

    push("pool 6x6->3x3", unary([2, 4, 6, 6], 7, eps, floor, |t, x| t.adaptive_avg_pool(x, 3, 3)));
    push("pool 5x5->2x2", unary([1, 2, 5, 5], 8, eps, floor, |t, x| t.adaptive_avg_pool(x, 2, 2)));
    push("pool 6x5->4x3", unary([1, 2, 6, 5], 9, eps, floor, |t, x| t.adaptive_avg_pool(x, 4, 3)));
    push("global pool", unary([2, 4, 6, 6], 10, eps, floor, |t, x| Ok(t.global_avg_pool(x))));

    let ab = [random_tensor([2, 4, 3, 3], 11), random_tensor([2, 4, 3, 3], 12)];
    push(
        "add",
        check_graph(
            &ab,
            |t, v| {
                let y = t.add(v[0], v[1])?;
                project(t, y, 13)
            },
            eps,
            floor,
        ),
    );

    push("relu", unary([2, 4, 6, 6], 14, eps, floor, |t, x| Ok(t.relu(x))));

    for (stride, kernel) in [(1, 3), (2, 3), (1, 1), (2, 1), (2, 5)] {
        let xwb = [
            random_tensor([2, 3, 6, 6], 15),
            random_tensor([4, 3, kernel, kernel], 16),
            random_tensor([1, 4, 1, 1], 17),
        ];
        push(
            &format!("conv k{kernel} s{stride}"),
            check_graph(
                &xwb,
                |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], stride)?;
                    project(t, y, 18)
                },
                eps,
                floor,
            ),
        );
    }

    let xwb = [random_tensor([3, 4, 2, 1], 19), random_tensor([5, 8, 1, 1], 20), random_tensor([1, 5, 1, 1], 21)];
    push(
        "linear",
        check_graph(
            &xwb,
            |t, v| {
                let y = t.linear(v[0], v[1], v[2], 5)?;
                project(t, y, 22)
            },
            eps,
            floor,
        ),
    );

    let logits = random_tensor([4, 6, 1, 1], 23).map(|v| 3.0 * v);
    push(
        "softmax cross-entropy",
        check_graph(&[logits], |t, v| t.softmax_cross_entropy(v[0], &[0, 5, 2, 2]), eps, floor),
    );

    let ab = [random_tensor([1, 3, 2, 2], 24), random_tensor([1, 3, 2, 2], 25)];
    push(
        "weighted sum",
        check_graph(
            &ab,
            |t, v| {
                let y = t.weighted_sum(&[(v[0], 0.7), (v[1], -1.3), (v[0], 0.2)])?;
                project(t, y, 26)
            },
            eps,
            floor,
        ),
    );

    let seven = propose_seven(6, 6, 0.5).unwrap();
    push("cs_fg 7crop", unary([2, 8, 6, 6], 27, eps, floor, |t, x| channel_separate_extract_traced(t, x, &seven)));
    push("fc_fg 7crop", unary([2, 4, 6, 6], 28, eps, floor, |t, x| full_channel_extract_traced(t, x, &seven)));
    let grid = propose_grid(5, 6, 0.7, 2).unwrap();
    push("cs_fg grid", unary([1, 9, 5, 6], 29, eps, floor, |t, x| channel_separate_extract_traced(t, x, &grid)));
    push("fc_fg grid", unary([1, 3, 5, 6], 30, eps, floor, |t, x| full_channel_extract_traced(t, x, &grid)));
    out
}
