//! Analytic gradients against central finite differences.

use crate::common;

use common::{away_from_zero, binary_mask, max_grad_error, max_grad_error_step, rng, uniform};
use derender::losses::{
    albedo_loss_var, objective, reconstruction_loss_var, shape_dependent_loss_var, shape_independent_loss_var,
    LossWeights, Targets,
};
use derender::network::{Ctx, DeRenderNet, ModelConfig};
use derender::tensor::{Tape, Tensor};

const F64_TOL: f64 = 1e-6;

pub fn conv2d_stride1_pad1() {
    let mut r = rng(1);
    let inputs = [
        uniform(&mut r, &[2, 3, 5, 6], -1.0, 1.0),
        uniform(&mut r, &[4, 3, 3, 3], -1.0, 1.0),
        uniform(&mut r, &[4], -1.0, 1.0),
    ];
    let e = max_grad_error(&inputs, |t, v| t.conv2d(v[0], v[1], v[2], 1, 1), None);
    assert!(e < F64_TOL, "{e}");
}

pub fn conv2d_stride2_odd_sizes() {
    let mut r = rng(2);
    for (h, w, pad) in [(7, 5, 1), (6, 9, 0), (5, 5, 2)] {
        let inputs = [
            uniform(&mut r, &[2, 2, h, w], -1.0, 1.0),
            uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0),
            uniform(&mut r, &[3], -1.0, 1.0),
        ];
        let e = max_grad_error(&inputs, |t, v| t.conv2d(v[0], v[1], v[2], 2, pad), None);
        assert!(e < F64_TOL, "{h}x{w} pad {pad}: {e}");
    }
}

pub fn conv2d_pointwise_kernel() {
    let mut r = rng(3);
    let inputs = [
        uniform(&mut r, &[1, 3, 4, 4], -1.0, 1.0),
        uniform(&mut r, &[2, 3, 1, 1], -1.0, 1.0),
        uniform(&mut r, &[2], -1.0, 1.0),
    ];
    let e = max_grad_error(&inputs, |t, v| t.conv2d(v[0], v[1], v[2], 1, 0), None);
    assert!(e < F64_TOL, "{e}");
}

pub fn conv2d_spanning_several_row_tiles() {
    // large enough that the forward and backward passes are split into tiles;
    // conv is linear in each argument, so a coarse step is exact up to the
    // rounding of the 25k-term loss, which a 1e-6 step would amplify
    let mut r = rng(4);
    for stride in [1, 2] {
        let inputs = [
            uniform(&mut r, &[1, 8, 70, 90], -1.0, 1.0),
            uniform(&mut r, &[4, 8, 3, 3], -1.0, 1.0),
            uniform(&mut r, &[4], -1.0, 1.0),
        ];
        let e = max_grad_error_step(&inputs, |t, v| t.conv2d(v[0], v[1], v[2], stride, 1), Some(40), 1e-2);
        assert!(e < F64_TOL, "stride {stride}: {e}");
    }
}

pub fn dense() {
    let mut r = rng(5);
    let inputs = [
        uniform(&mut r, &[3, 5], -1.0, 1.0),
        uniform(&mut r, &[4, 5], -1.0, 1.0),
        uniform(&mut r, &[4], -1.0, 1.0),
    ];
    let e = max_grad_error(&inputs, |t, v| t.dense(v[0], v[1], v[2]), None);
    assert!(e < F64_TOL, "{e}");
}

pub fn elementwise_binary() {
    let mut r = rng(6);
    let inputs = [uniform(&mut r, &[2, 3, 4], -2.0, 2.0), uniform(&mut r, &[2, 3, 4], -2.0, 2.0)];
    for (name, e) in [
        ("add", max_grad_error(&inputs, |t, v| t.add(v[0], v[1]), None)),
        ("sub", max_grad_error(&inputs, |t, v| t.sub(v[0], v[1]), None)),
        ("mul", max_grad_error(&inputs, |t, v| t.mul(v[0], v[1]), None)),
    ] {
        assert!(e < F64_TOL, "{name}: {e}");
    }
}

pub fn elementwise_unary() {
    let mut r = rng(7);
    let x = [uniform(&mut r, &[3, 7], -3.0, 3.0)];
    let kinked = [away_from_zero(&mut r, &[3, 7])];
    for (name, e) in [
        ("scale", max_grad_error(&x, |t, v| Ok(t.scale(v[0], -1.7)), None)),
        ("square", max_grad_error(&x, |t, v| Ok(t.square(v[0])), None)),
        ("relu", max_grad_error(&kinked, |t, v| Ok(t.relu(v[0])), None)),
        ("sigmoid", max_grad_error(&x, |t, v| Ok(t.sigmoid(v[0])), None)),
        ("softplus", max_grad_error(&x, |t, v| Ok(t.softplus(v[0])), None)),
        ("sum", max_grad_error(&x, |t, v| Ok(t.sum(v[0])), None)),
    ] {
        assert!(e < F64_TOL, "{name}: {e}");
    }
}

pub fn masked_mean() {
    let mut r = rng(8);
    let mask = binary_mask(&mut r, &[2, 1, 4, 5], 0.6);
    let x = [uniform(&mut r, &[2, 1, 4, 5], -1.0, 1.0)];
    let e = max_grad_error(&x, |t, v| t.mean_masked(v[0], &mask), None);
    assert!(e < F64_TOL, "{e}");
}

pub fn channel_ops() {
    let mut r = rng(9);
    let x3 = [uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0)];
    let x1 = [uniform(&mut r, &[2, 1, 4, 5], -1.0, 1.0)];
    let pair = [uniform(&mut r, &[2, 2, 3, 4], -1.0, 1.0), uniform(&mut r, &[2, 3, 3, 4], -1.0, 1.0)];
    let up = [uniform(&mut r, &[2, 2, 3, 4], -1.0, 1.0)];
    for (name, e) in [
        ("channel_mean", max_grad_error(&x3, |t, v| t.channel_mean(v[0]), None)),
        ("expand_channels", max_grad_error(&x1, |t, v| t.expand_channels(v[0], 3), None)),
        ("concat", max_grad_error(&pair, |t, v| t.concat(v[0], v[1]), None)),
        ("upsample2x", max_grad_error(&up, |t, v| t.upsample2x(v[0]), None)),
        ("reshape", max_grad_error(&x3, |t, v| t.reshape(v[0], &[6, 20]), None)),
    ] {
        assert!(e < F64_TOL, "{name}: {e}");
    }
}

pub fn batchnorm_train_and_eval() {
    let mut r = rng(10);
    let inputs = [
        uniform(&mut r, &[3, 2, 3, 4], -2.0, 2.0),
        uniform(&mut r, &[2], 0.5, 1.5),
        uniform(&mut r, &[2], -0.5, 0.5),
    ];
    let (rm, rv) = ([0.1, -0.2], [0.9, 1.3]);
    for training in [true, false] {
        let e = max_grad_error(
            &inputs,
            |t, v| Ok(t.batchnorm2d(v[0], v[1], v[2], &rm, &rv, training)?.0),
            None,
        );
        assert!(e < F64_TOL, "training={training}: {e}");
    }
}

pub fn neighbour_differences() {
    let mut r = rng(11);
    let mask = binary_mask(&mut r, &[2, 1, 5, 6], 0.7);
    let x = [uniform(&mut r, &[2, 2, 5, 6], -1.0, 1.0)];
    let e = max_grad_error(&x, |t, v| t.neighbor_sq_diff(v[0], &mask), None);
    assert!(e < F64_TOL, "{e}");
}

pub fn per_pixel_dot() {
    let mut r = rng(12);
    let inputs = [uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0), uniform(&mut r, &[2, 3], -1.0, 1.0)];
    let e = max_grad_error(&inputs, |t, v| t.pixel_dot(v[0], v[1]), None);
    assert!(e < F64_TOL, "{e}");
}

pub fn loss_terms() {
    let mut r = rng(13);
    let s = [2, 3, 5, 4];
    let g = [2, 1, 5, 4];
    let mask = binary_mask(&mut r, &g, 0.7);
    let a = [uniform(&mut r, &s, 0.1, 1.0), uniform(&mut r, &s, 0.1, 1.0)];
    let e = max_grad_error(&a, |t, v| albedo_loss_var(t, v[0], v[1], &mask), None);
    assert!(e < F64_TOL, "albedo: {e}");

    let si = [uniform(&mut r, &g, 0.0, 1.0), uniform(&mut r, &g, 0.0, 0.4)];
    let e = max_grad_error(&si, |t, v| shape_independent_loss_var(t, v[0], v[1], &mask), None);
    assert!(e < F64_TOL, "shape independent: {e}");

    let sd = [
        uniform(&mut r, &s, 0.2, 2.0),
        uniform(&mut r, &s, -1.0, 1.0),
        uniform(&mut r, &[2, 8], -1.0, 1.0),
        uniform(&mut r, &s, 0.1, 1.0),
        uniform(&mut r, &s, 0.0, 1.0),
        uniform(&mut r, &g, 0.6, 1.0),
    ];
    let e = max_grad_error(
        &sd,
        |t, v| shape_dependent_loss_var(t, v[0], v[1], v[2], v[3], v[4], v[5], &mask),
        None,
    );
    assert!(e < F64_TOL, "shape dependent: {e}");

    let rc = [
        uniform(&mut r, &s, 0.1, 1.0),
        uniform(&mut r, &s, 0.2, 2.0),
        uniform(&mut r, &g, 0.3, 1.0),
        uniform(&mut r, &s, 0.0, 1.0),
    ];
    let e = max_grad_error(&rc, |t, v| reconstruction_loss_var(t, v[0], v[1], v[2], v[3], &mask), None);
    assert!(e < F64_TOL, "reconstruction: {e}");
}

fn random_targets(seed: u64, n: usize, h: usize, w: usize) -> Targets<f64> {
    let mut r = rng(seed);
    Targets {
        image: uniform(&mut r, &[n, 3, h, w], 0.0, 1.0),
        albedo: uniform(&mut r, &[n, 3, h, w], 0.1, 1.0),
        normals: uniform(&mut r, &[n, 3, h, w], -1.0, 1.0),
        prior: uniform(&mut r, &[n, 1, h, w], 0.0, 0.4),
        mask: binary_mask(&mut r, &[n, 1, h, w], 0.8),
    }
}

pub fn weighted_objective() {
    let mut r = rng(14);
    let targets = random_targets(15, 2, 4, 5);
    let inputs = [
        uniform(&mut r, &[2, 3, 4, 5], 0.1, 1.0),
        uniform(&mut r, &[2, 1, 4, 5], 0.2, 1.0),
        uniform(&mut r, &[2, 3, 4, 5], 0.2, 2.0),
        uniform(&mut r, &[2, 8], -1.0, 1.0),
    ];
    let w = LossWeights::default();
    let e = max_grad_error(
        &inputs,
        |t, v| Ok(objective(t, v[0], v[1], v[2], v[3], &targets, &w)?.total),
        None,
    );
    assert!(e < F64_TOL, "{e}");
}

pub fn single_precision_objective() {
    // f32 tape against f64 central differences of the same function
    let mut r = rng(16);
    let t64 = random_targets(17, 1, 4, 4);
    let cast = |t: &Tensor<f64>| t.cast::<f32>();
    let t32 = Targets {
        image: cast(&t64.image),
        albedo: cast(&t64.albedo),
        normals: cast(&t64.normals),
        prior: cast(&t64.prior),
        mask: cast(&t64.mask),
    };
    let inputs = [
        uniform(&mut r, &[1, 3, 4, 4], 0.1, 1.0),
        uniform(&mut r, &[1, 1, 4, 4], 0.2, 1.0),
        uniform(&mut r, &[1, 3, 4, 4], 0.2, 2.0),
        uniform(&mut r, &[1, 8], -1.0, 1.0),
    ];
    let w = LossWeights::default();
    let f64_loss = |ins: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let v: Vec<_> = ins.iter().map(|x| t.leaf(x.clone())).collect();
        let l = objective(&mut t, v[0], v[1], v[2], v[3], &t64, &w).unwrap().total;
        t.value(l).item()
    };
    let mut t = Tape::<f32>::new();
    let v: Vec<_> = inputs.iter().map(|x| t.leaf(x.cast())).collect();
    let l = objective(&mut t, v[0], v[1], v[2], v[3], &t32, &w).unwrap().total;
    let g = t.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = g.get_or_zeros(v[k], x.shape());
        for i in 0..x.len() {
            let (mut p, mut m) = (inputs.to_vec(), inputs.to_vec());
            p[k].data_mut()[i] += 1e-6;
            m[k].data_mut()[i] -= 1e-6;
            let numeric = (f64_loss(&p) - f64_loss(&m)) / 2e-6;
            let a = analytic.data()[i] as f64;
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    assert!(worst < 1e-3, "{worst}");
}

pub fn end_to_end_network_gradients() {
    let config = ModelConfig {
        width_scale: 0.0625,
        input_h: 16,
        input_w: 16,
        code_dim: 8,
        seed: 3,
    };
    let mut net = DeRenderNet::<f64>::new(config).unwrap();
    let targets = random_targets(18, 2, 16, 16);
    let mut r = rng(19);
    let log_depth = uniform(&mut r, &[2, 1, 16, 16], 5.0, 8.0);
    let w = LossWeights::default();
    let loss = |net: &DeRenderNet<f64>, grads: bool| {
        let mut tape = Tape::new();
        let image = tape.constant(targets.image.clone());
        let depth = tape.constant(log_depth.clone());
        let mut ctx = Ctx::new(&mut tape, net.store(), true);
        let dec = net.decompose_vars(&mut ctx, image).unwrap();
        let s_d = net.render_vars(&mut ctx, depth, dec.code).unwrap();
        let total = objective(&mut tape, dec.albedo, dec.s_i, s_d, dec.code, &targets, &w)
            .unwrap()
            .total;
        let value = tape.value(total).item();
        let g = grads.then(|| {
            let mut store = net.store().clone();
            store.zero_grad();
            store.accumulate(&tape, &tape.backward(total).unwrap());
            store
        });
        (value, g)
    };
    let (_, store) = loss(&net, true);
    let store = store.unwrap();
    let ids: Vec<_> = store.trainable_ids().collect();
    let mut pick = rng(20);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for id in ids {
        for _ in 0..2 {
            let i = rand::Rng::gen_range(&mut pick, 0..store.value(id).len());
            let orig = net.store().value(id).data()[i];
            let h = 1e-5;
            net.store_mut().value_mut(id).data_mut()[i] = orig + h;
            let up = loss(&net, false).0;
            net.store_mut().value_mut(id).data_mut()[i] = orig - h;
            let down = loss(&net, false).0;
            net.store_mut().value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = store.grad(id).data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            checked += 1;
        }
    }
    assert!(checked > 50);
    assert!(worst < 1e-2, "{worst}");
}
