use ddnet::losses::LossKind;
use ddnet::model::{decode_checkpoint, Model, ModelConfig, Variant};
use ddnet::{Error, Tape, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn desk_forward_shape_and_range() {
    let model = Model::<f32>::build(&ModelConfig::desk(), 1).unwrap();
    let x = model.random_input(2, &mut rng(2));
    let y = model.predict(&x).unwrap();
    assert_eq!(y.dims().as_array(), [2, 1, 64, 64]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn full_forward_shape_and_range() {
    let model = Model::<f32>::build(&ModelConfig::full(), 1).unwrap();
    let x = model.random_input(2, &mut rng(3));
    let y = model.predict(&x).unwrap();
    assert_eq!(y.dims().as_array(), [2, 1, 224, 224]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn non_square_inputs_keep_their_shape() {
    let cfg = ModelConfig {
        input_size: (32, 48),
        ..ModelConfig::tiny()
    };
    let model = Model::<f64>::build(&cfg, 4).unwrap();
    let y = model.predict(&model.random_input(1, &mut rng(1))).unwrap();
    assert_eq!(y.dims().as_array(), [1, 1, 32, 48]);
    let bad = Tensor4::<f64>::zeros((1, 3, 30, 48));
    assert!(matches!(model.predict(&bad), Err(Error::Shape(_))));
}

#[test]
fn build_is_seed_deterministic() {
    let a = Model::<f32>::build(&ModelConfig::desk(), 7).unwrap();
    let b = Model::<f32>::build(&ModelConfig::desk(), 7).unwrap();
    let c = Model::<f32>::build(&ModelConfig::desk(), 8).unwrap();
    assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
    assert_ne!(a.to_checkpoint_bytes(), c.to_checkpoint_bytes());
    let names = |m: &Model<f32>| m.params().iter().map(|p| p.name.clone()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&c));
    let mut sorted = names(&a);
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), a.params().len());
}

/// Hand count for the tiny preset: stem 4, growth 2, blocks (1, 2), two
/// dense deformable layers of width 4. Norm layers hold 2 scalars per channel.
#[test]
fn tiny_param_count_by_hand() {
    let stem = 4 * 3 * 7 * 7 + 2 * 4;
    // One dense layer: norm(c), 1x1 c->8, norm(8), 3x3 8->2.
    let dense = |c: usize| 2 * c + c * 8 + 2 * 8 + 8 * 2 * 9;
    let block1 = dense(4); // 4 -> 6 channels
    let transition = 2 * 6 + 6 * 3; // 6 -> 3
    let block2 = dense(3) + dense(5); // 3 -> 7
    let head = 2 * 7 + 7 * 4;
    // Deformable layer on c inputs: 3x3 c->4, offset branch 3x3 c->27 with bias, norm(4).
    let deform = |c: usize| 4 * c * 9 + 27 * c * 9 + 27 + 2 * 4;
    let block = deform(4) + deform(8);
    let decoder = 4 * 2 * 4 * 4 + 2 * 2 + 2 * 3 * 3 + 2 + 3 * 3 + 1;
    let total = stem + block1 + transition + block2 + head + block + decoder;
    assert_eq!(total, 4848);
    let model = Model::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    assert_eq!(model.param_count(), total);
}

#[test]
fn plain_variant_drops_concatenations() {
    let dense = Model::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    let plain = Model::<f32>::build(&ModelConfig::tiny().with_variant(Variant::PlainDeformable), 0).unwrap();
    // Only the second layer's input width changes, 8 -> 4 channels.
    assert_eq!(dense.param_count() - plain.param_count(), (4 + 27) * 4 * 9);
}

#[test]
fn dense_and_plain_differ_only_through_wiring() {
    let cfg = ModelConfig::tiny();
    let dense = Model::<f64>::build(&cfg, 3).unwrap();
    let plain = Model::<f64>::build(&cfg.clone().with_variant(Variant::PlainDeformable), 3).unwrap();
    let x = dense.random_input(2, &mut rng(9));
    let yd = dense.predict(&x).unwrap();
    let yp = plain.predict(&x).unwrap();
    assert!(yd.max_abs_diff(&yp) > 1e-9);
    for p in plain.params().iter() {
        let q = dense.params().value(dense.params().find(&p.name).unwrap());
        if q.dims() == p.value.dims() {
            assert_eq!(q, &p.value, "{}", p.name);
        }
    }
}

#[test]
fn gradients_reach_almost_every_parameter() {
    let mut model = Model::<f64>::build(&ModelConfig::desk(), 5).unwrap();
    let mut r = rng(6);
    let x = model.random_input(2, &mut r);
    let target = Tensor4::<f64>::uniform((2, 1, 64, 64), 0.0, 1.0, &mut r).map(|v| v.round());
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let tv = tape.constant(target);
    let y = model.forward_train(&mut tape, xv).unwrap();
    let loss = tape.loss(LossKind::Mse, y, tv).unwrap();
    model.params_mut().zero_grad();
    tape.backward_into(loss, model.params_mut()).unwrap();
    let mut total = 0usize;
    let mut nonzero = 0usize;
    for p in model.params().iter() {
        let g = p.grad.as_ref().unwrap_or_else(|| panic!("{} has no grad", p.name));
        total += g.len();
        nonzero += g.iter().filter(|&&v| v != 0.0).count();
    }
    let frac = nonzero as f64 / total as f64;
    assert!(frac >= 0.99, "only {frac} of parameters received gradient");
}

#[test]
fn eval_is_batch_independent() {
    let mut model = Model::<f32>::build(&ModelConfig::desk(), 11).unwrap();
    let mut r = rng(12);
    // A few training passes so the running statistics are not the identity.
    for _ in 0..3 {
        let mut tape = Tape::new();
        let x = tape.constant(model.random_input(4, &mut r));
        model.forward_train(&mut tape, x).unwrap();
    }
    let x = model.random_input(4, &mut r);
    let batch = model.predict(&x).unwrap();
    for i in 0..4 {
        let single = model.predict(&x.batch_item(i)).unwrap();
        let part = batch.batch_item(i);
        assert!(single.max_abs_diff(&part) < 1e-6, "sample {i}");
    }
}

#[test]
fn dilated_variant_is_deformable_with_constant_offsets() {
    for d in [5usize, 7] {
        let cfg = ModelConfig::tiny().with_variant(Variant::Dilated(d));
        let dilated = Model::<f64>::build(&cfg, 21).unwrap();
        let mut deform = Model::<f64>::build(&ModelConfig::tiny(), 99).unwrap();
        for p in dilated.params().iter() {
            let id = deform.params().find(&p.name).unwrap();
            deform.params_mut().get_mut(id).value = p.value.clone();
        }
        // Offset branch: zero weights, bias holding (d-1) * grid offsets per
        // tap and mask logits large enough that the logistic rounds to 1.
        for layer in 1..=cfg.deform_layers {
            let id = deform.params().find(&format!("deform.layer{layer}.offset.bias")).unwrap();
            let bias = Tensor4::from_fn((1, 27, 1, 1), |_, c, _, _| {
                if c >= 18 {
                    return 40.0;
                }
                let tap = c / 2;
                let g = if c % 2 == 0 { tap / 3 } else { tap % 3 } as f64 - 1.0;
                (d as f64 - 1.0) * g
            });
            deform.params_mut().get_mut(id).value = bias;
        }
        let x = dilated.random_input(2, &mut rng(d as u64));
        let a = dilated.predict(&x).unwrap();
        let b = deform.predict(&x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6, "dilation {d}: {}", a.max_abs_diff(&b));
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut model = Model::<f32>::build(&ModelConfig::tiny().with_variant(Variant::Dilated(5)), 2).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(model.random_input(2, &mut rng(1)));
    model.forward_train(&mut tape, x).unwrap();
    let bytes = model.to_checkpoint_bytes();
    let ckpt = decode_checkpoint(&bytes).unwrap();
    let back = Model::<f32>::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back.to_checkpoint_bytes(), bytes);
    assert_eq!(back.buffers(), model.buffers());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let loaded = Model::<f32>::load(&path).unwrap();
    let input = model.random_input(1, &mut rng(3));
    assert_eq!(loaded.predict(&input).unwrap(), model.predict(&input).unwrap());
}

#[test]
fn checkpoint_config_mismatch_is_rejected() {
    let model = Model::<f32>::build(&ModelConfig::tiny(), 2).unwrap();
    let mut ckpt = decode_checkpoint(&model.to_checkpoint_bytes()).unwrap();
    ckpt.config.growth_rate = 3;
    assert!(matches!(Model::<f32>::from_checkpoint(&ckpt), Err(Error::Config(_))));
    let mut ckpt = decode_checkpoint(&model.to_checkpoint_bytes()).unwrap();
    ckpt.entries.pop();
    assert!(matches!(Model::<f32>::from_checkpoint(&ckpt), Err(Error::Config(_))));
}

#[test]
fn corrupt_checkpoints_are_decode_errors() {
    let bytes = Model::<f32>::build(&ModelConfig::tiny(), 2).unwrap().to_checkpoint_bytes();
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
    assert!(decode_checkpoint(b"DDNETCKPT 2\n").is_err());
    assert!(decode_checkpoint(b"").is_err());
    let text = String::from_utf8_lossy(&bytes[..200]).replace("f32", "f16");
    assert!(decode_checkpoint(text.as_bytes()).is_err());
}

#[test]
fn binarized_output_is_zero_one() {
    let cfg = ModelConfig {
        binarize: true,
        ..ModelConfig::tiny()
    };
    let model = Model::<f32>::build(&cfg, 1).unwrap();
    let y = model.predict(&model.random_input(1, &mut rng(1))).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn f64_cast_matches_f32() {
    let model = Model::<f32>::build(&ModelConfig::tiny(), 8).unwrap();
    let wide = model.cast::<f64>();
    let x = model.random_input(1, &mut rng(4));
    let a = model.predict(&x).unwrap().cast::<f64>();
    let b = wide.predict(&x.cast()).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-5);
}
