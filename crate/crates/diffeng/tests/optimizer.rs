use diffeng::{AdamW, AdamWConfig, Checkpoint, Graph, ParamMut, Tensor};

/// Plain f64 Adam on a scalar, used as the reference trajectory.
fn reference_adam(w0: f64, lr: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    for t in 1..=steps {
        let g = 2.0 * (w - 3.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
    }
    w
}

#[test]
fn scalar_quadratic_converges() {
    let reference = reference_adam(1.0, 0.1, 100);
    assert!((reference - 3.0).abs() < 1e-2, "reference ended at {reference}");

    let mut opt = AdamW::new(AdamWConfig {
        lr: 0.1,
        ..Default::default()
    });
    let mut w = vec![1.0f32];
    for _ in 0..100 {
        let mut g = Graph::new();
        let wv = g.param(Tensor::new(vec![1], w.clone()).unwrap());
        let d = g.add_scalar(wv, -3.0);
        let loss = g.square(d);
        g.backward(loss).unwrap();
        let grad = g.grad(wv).unwrap().data().to_vec();
        opt.step(&mut [ParamMut {
            name: "w",
            value: &mut w,
            grad: &grad,
        }])
        .unwrap();
    }
    assert!((w[0] - 3.0).abs() < 1e-2, "w = {}", w[0]);
    assert!((w[0] as f64 - reference).abs() < 1e-4);
}

#[test]
fn clipped_update_equals_prescaled_gradient() {
    let cfg = AdamWConfig {
        lr: 0.01,
        clip_norm: Some(1.0),
        ..Default::default()
    };
    let mut clipped = AdamW::new(cfg);
    let mut plain = AdamW::new(AdamWConfig { clip_norm: None, ..cfg });
    let g = [6.0f32, 0.0, 8.0];
    let scaled: Vec<f32> = g.iter().map(|v| v * 0.1).collect();
    let (mut a, mut b) = (vec![0.5f32, -0.5, 1.0], vec![0.5f32, -0.5, 1.0]);
    for _ in 0..3 {
        let s = clipped
            .step(&mut [ParamMut {
                name: "a",
                value: &mut a,
                grad: &g,
            }])
            .unwrap();
        assert!((s.grad_norm - 10.0).abs() < 1e-9);
        plain
            .step(&mut [ParamMut {
                name: "b",
                value: &mut b,
                grad: &scaled,
            }])
            .unwrap();
    }
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ckpt");
    let mut ck = Checkpoint::new("{}");
    ck.push("layer.weight", Tensor::new(vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap());
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let t = back.get("layer.weight").unwrap();
    let bits: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
    let want: Vec<u32> = [1.0f32, -0.0, f32::MIN_POSITIVE, 3.5].iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits, want);
}
