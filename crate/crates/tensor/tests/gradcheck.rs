//! Central-difference checks of every backward pass in f64.

use mcnet_tensor::{ConvSpec, Graph, Initializer, Tensor, Var, WindowSpec};

type Op = dyn Fn(&Graph<f64>, &[Var<f64>]) -> Var<f64>;

fn rand(init: &mut Initializer, shape: &[usize]) -> Tensor<f64> {
    init.uniform(shape.to_vec(), 1.0)
}

/// Compares analytic and numeric gradients of `sum(f(inputs) * r)` for a
/// fixed random `r`.
fn check(name: &str, inputs: Vec<Tensor<f64>>, f: &Op) {
    let mut init = Initializer::new(99);
    let probe_shape = {
        let g = Graph::inference();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vars).shape().to_vec()
    };
    let r = rand(&mut init, &probe_shape);
    let objective = |g: &Graph<f64>, vars: &[Var<f64>]| {
        let y = f(g, vars);
        let w = g.mul(&y, &g.constant(r.clone())).unwrap();
        g.sum_all(&w)
    };

    let g = Graph::eval_with_grad();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = objective(&g, &vars);
    let grads = g.backward(&loss).unwrap();

    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for i in 0..input.numel() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.clone();
                perturbed[k].data_mut()[i] += delta;
                let g = Graph::inference();
                let vars: Vec<_> = perturbed.into_iter().map(|t| g.constant(t)).collect();
                objective(&g, &vars).value().item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let tol = 1e-5 * (1.0 + numeric.abs().max(a.abs()));
            assert!((a - numeric).abs() < tol, "{name}: input {k} element {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn elementwise_ops() {
    let mut init = Initializer::new(1);
    let a = rand(&mut init, &[2, 3, 2, 2]);
    let b = rand(&mut init, &[2, 3, 2, 2]);
    let row = rand(&mut init, &[1, 3, 1, 1]);
    let pos = a.map(|v| v.abs() + 0.5);
    check("add", vec![a.clone(), row.clone()], &|g, v| g.add(&v[0], &v[1]).unwrap());
    check("sub", vec![row.clone(), a.clone()], &|g, v| g.sub(&v[0], &v[1]).unwrap());
    check("mul", vec![a.clone(), b.clone()], &|g, v| g.mul(&v[0], &v[1]).unwrap());
    check("mul_bcast", vec![a.clone(), row.clone()], &|g, v| g.mul(&v[0], &v[1]).unwrap());
    check("div", vec![b.clone(), pos.clone()], &|g, v| g.div(&v[0], &v[1]).unwrap());
    check("scale", vec![a.clone()], &|g, v| g.scale(&v[0], -2.5));
    check("add_scalar", vec![a.clone()], &|g, v| g.add_scalar(&v[0], 0.3));
    check("rsub_scalar", vec![a.clone()], &|g, v| g.rsub_scalar(1.0, &v[0]));
    check("relu", vec![a.clone()], &|g, v| g.relu(&v[0]));
    check("sigmoid", vec![a.clone()], &|g, v| g.sigmoid(&v[0]));
    check("gelu", vec![a.clone()], &|g, v| g.gelu(&v[0]));
    check("ln", vec![pos.clone()], &|g, v| g.ln(&v[0]));
    check("exp", vec![a.clone()], &|g, v| g.exp(&v[0]));
    check("square", vec![a.clone()], &|g, v| g.square(&v[0]));
    check("clamp", vec![a.clone()], &|g, v| g.clamp(&v[0], -0.5, 0.5).unwrap());
}

#[test]
fn reductions() {
    let mut init = Initializer::new(2);
    let a = rand(&mut init, &[2, 3, 2, 3]);
    check("sum_all", vec![a.clone()], &|g, v| g.sum_all(&v[0]));
    check("mean_all", vec![a.clone()], &|g, v| g.mean_all(&v[0]));
    check("sum_axes", vec![a.clone()], &|g, v| g.sum_axes(&v[0], &[2, 3]).unwrap());
    check("mean_axes", vec![a.clone()], &|g, v| g.mean_axes(&v[0], &[1]).unwrap());
    check("max_axes", vec![a.clone()], &|g, v| g.max_axes(&v[0], &[1]).unwrap());
    check("max_axes_spatial", vec![a.clone()], &|g, v| g.max_axes(&v[0], &[2, 3]).unwrap());
    check("sum_per_sample", vec![a.clone()], &|g, v| g.sum_per_sample(&v[0]).unwrap());
}

#[test]
fn convolutions() {
    let mut init = Initializer::new(3);
    let x = rand(&mut init, &[2, 3, 5, 5]);
    let w3 = rand(&mut init, &[4, 3, 3, 3]);
    let w1 = rand(&mut init, &[4, 3]);
    let b = rand(&mut init, &[4]);
    check("conv3", vec![x.clone(), w3.clone(), b.clone()], &|g, v| {
        g.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3, 1)).unwrap()
    });
    check("conv3_dilated", vec![x.clone(), w3.clone()], &|g, v| {
        g.conv2d(&v[0], &v[1], None, ConvSpec::same(3, 2)).unwrap()
    });
    check("conv3_strided", vec![x.clone(), w3.clone()], &|g, v| {
        g.conv2d(&v[0], &v[1], None, ConvSpec { stride: 2, padding: 1, dilation: 1 }).unwrap()
    });
    check("conv1", vec![x.clone(), w1, b], &|g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::default()).unwrap());
}

#[test]
fn pooling_and_resizing() {
    let mut init = Initializer::new(4);
    let x = rand(&mut init, &[1, 2, 5, 4]);
    check("max_pool", vec![x.clone()], &|g, v| g.max_pool2d(&v[0], 2, 2).unwrap());
    check("upsample", vec![x.clone()], &|g, v| g.upsample(&v[0], 2).unwrap());
    check("resize_down", vec![x.clone()], &|g, v| g.resize_bilinear(&v[0], 3, 3).unwrap());
    check("resize_odd", vec![x], &|g, v| g.resize_bilinear(&v[0], 7, 9).unwrap());
}

#[test]
fn normalization() {
    let mut init = Initializer::new(5);
    let x = rand(&mut init, &[2, 3, 3, 2]);
    let gamma = rand(&mut init, &[3]);
    let beta = rand(&mut init, &[3]);
    let rm = rand(&mut init, &[3]);
    let rv = rand(&mut init, &[3]).map(|v| v.abs() + 0.5);
    let ins = vec![x, gamma, beta];
    check("layer_norm", ins.clone(), &|g, v| g.layer_norm_channels(&v[0], &v[1], &v[2], 1e-5).unwrap());
    check("batch_norm_train", ins.clone(), &|g, v| g.batch_norm_train(&v[0], &v[1], &v[2], 1e-5).unwrap().0);
    check("batch_norm_eval", ins, &move |g, v| g.batch_norm_eval(&v[0], &v[1], &v[2], &rm, &rv, 1e-5).unwrap());
}

#[test]
fn layout_ops() {
    let mut init = Initializer::new(6);
    let a = rand(&mut init, &[2, 2, 4, 4]);
    let b = rand(&mut init, &[2, 3, 4, 4]);
    check("concat", vec![a.clone(), b.clone()], &|g, v| g.concat_channels(&[&v[0], &v[1]]).unwrap());
    check("slice", vec![b.clone()], &|g, v| g.slice_channels(&v[0], 1, 2).unwrap());
    check("pad", vec![a.clone()], &|g, v| g.pad_bottom_right(&v[0], 1, 2).unwrap());
    check("crop", vec![a.clone()], &|g, v| g.crop_top_left(&v[0], 3, 2).unwrap());
    check("space_to_depth", vec![a], &|g, v| g.space_to_depth2(&v[0]).unwrap());
}

#[test]
fn window_attention() {
    let mut init = Initializer::new(7);
    for (grid, window, shift, heads) in [(4, 2, 0, 2), (4, 2, 1, 2), (6, 3, 1, 1), (4, 4, 2, 2)] {
        let qkv = rand(&mut init, &[2, 3 * 4, grid, grid]);
        let span = 2 * window - 1;
        let table = rand(&mut init, &[span * span, heads]);
        let spec = WindowSpec { heads, window, shift };
        check(&format!("window_attention {grid}/{window}/{shift}"), vec![qkv, table], &move |g, v| {
            g.window_attention(&v[0], &v[1], spec).unwrap()
        });
    }
}
