use num_complex::Complex64;

use super::*;
use crate::error::Error;
use crate::numerics::{sample_normal, sigmoid, CMatrix, Rng};
use crate::poly::coefficient_distance;

fn batch_from(x: Matrix, batch: usize, steps: usize) -> SequenceBatch {
    let n = x.rows();
    SequenceBatch::new(batch, steps, x, Matrix::zeros(n, 1), vec![1.0; n]).unwrap()
}

fn random_batch(d: usize, batch: usize, steps: usize, seed: u64) -> SequenceBatch {
    batch_from(sample_normal(&mut Rng::new(seed), batch * steps, d, 1.0), batch, steps)
}

fn all_archs() -> Vec<ArchSpec> {
    vec![
        ArchSpec::Gated { n: 5, m: 4, augmented: true },
        ArchSpec::SideGated { n: 5, augmented: false },
        ArchSpec::DenseGated { n: 4, m: 3, augmented: true },
        ArchSpec::Lstm { hidden: 4, layers: 2 },
        ArchSpec::Gru { hidden: 4, layers: 2 },
        ArchSpec::Lru { hidden: 4, layers: 1, variant: LruVariant::Out },
        ArchSpec::Lru { hidden: 4, layers: 2, variant: LruVariant::InOut },
        ArchSpec::Lru { hidden: 4, layers: 1, variant: LruVariant::InOutMlp },
    ]
}

fn scalar_gated(lambda: f64) -> GatedRnnParams {
    let one = Matrix::filled(1, 1, 1.0);
    GatedRnnParams {
        w_m_in: one.clone(),
        w_x_in: one.clone(),
        recurrence: Recurrence::Clamped { lambda: vec![lambda] },
        w_m_out: one.clone(),
        w_x_out: one.clone(),
        d_readout: one,
        augmented: false,
    }
}

#[test]
fn integrator_accumulates_squares() {
    let p = Model::Gated(scalar_gated(1.0));
    let x = Matrix::from_rows(&[[1.0], [2.0], [-3.0]]);
    let f = p.forward(&batch_from(x, 1, 3)).unwrap();
    assert_eq!(f.hidden.unwrap().col(0), vec![1.0, 5.0, 14.0]);
    assert_eq!(f.output.col(0), vec![1.0, 25.0, 196.0]);
}

#[test]
fn memoryless_ignores_history() {
    let mut rng = Rng::new(3);
    let Model::Gated(mut p) = (ArchSpec::Gated { n: 4, m: 3, augmented: false }).init(2, 2, &mut rng) else {
        unreachable!()
    };
    p.recurrence = Recurrence::Clamped { lambda: vec![0.0; 4] };
    let model = Model::Gated(p);
    let batch = random_batch(2, 1, 5, 4);
    let y = model.forward(&batch).unwrap().output;
    let mut x = batch.inputs.clone();
    x.data_mut().swap(0, 6);
    x.data_mut().swap(3, 5);
    let y2 = model.forward(&batch.with_inputs(x).unwrap()).unwrap().output;
    assert_eq!(y.row(4), y2.row(4));
}

#[test]
fn side_gate_zero_paths() {
    let mut rng = Rng::new(5);
    let Model::SideGated(p) = (ArchSpec::SideGated { n: 4, augmented: false }).init(3, 2, &mut rng) else {
        unreachable!()
    };
    let batch = random_batch(3, 2, 4, 6);
    let mut no_state = p.clone();
    no_state.w_m_in = Matrix::zeros(4, 3);
    let mut no_side = p.clone();
    no_side.w_side = Matrix::zeros(4, 3);
    for q in [no_state, no_side] {
        assert_eq!(Model::SideGated(q).forward(&batch).unwrap().output.max_abs(), 0.0);
    }
}

#[test]
fn dense_with_diagonal_matches_diagonal() {
    let mut rng = Rng::new(7);
    let Model::Gated(p) = (ArchSpec::Gated { n: 4, m: 3, augmented: false }).init(2, 2, &mut rng) else {
        unreachable!()
    };
    let dense = DenseGatedRnnParams {
        w_m_in: p.w_m_in.clone(),
        w_x_in: p.w_x_in.clone(),
        a: Matrix::diag(&p.lambda()),
        w_m_out: p.w_m_out.clone(),
        w_x_out: p.w_x_out.clone(),
        d_readout: p.d_readout.clone(),
        augmented: false,
    };
    let batch = random_batch(2, 3, 6, 8);
    let a = Model::Gated(p).forward(&batch).unwrap().output;
    let b = Model::DenseGated(dense.clone()).forward(&batch).unwrap().output;
    assert!(a.max_abs_diff(&b).unwrap() < 1e-13);

    let mut zero = dense;
    zero.a = Matrix::zeros(4, 4);
    let zero = Model::DenseGated(zero);
    let y = zero.forward(&batch).unwrap().output;
    let last = batch_from(Matrix::from_fn(3, 2, |b, j| batch.input(5, b)[j]), 3, 1);
    let y1 = zero.forward(&last).unwrap().output;
    assert!(y.row_block(15, 3).max_abs_diff(&y1).unwrap() < 1e-14);
}

#[test]
fn dense_three_step_unroll() {
    let mut rng = Rng::new(9);
    let Model::DenseGated(p) = (ArchSpec::DenseGated { n: 3, m: 2, augmented: false }).init(2, 2, &mut rng) else {
        unreachable!()
    };
    let mut p = p;
    p.a = sample_normal(&mut rng, 3, 3, 0.5);
    let batch = random_batch(2, 1, 3, 10);
    let y = Model::DenseGated(p.clone()).forward(&batch).unwrap().output;
    let gin = |x: &[f64]| -> Vec<f64> {
        let a = p.w_m_in.matvec(x).unwrap();
        let b = p.w_x_in.matvec(x).unwrap();
        a.iter().zip(&b).map(|(a, b)| a * b).collect()
    };
    let mut h = vec![0.0; 3];
    for t in 0..3 {
        let ah = p.a.matvec(&h).unwrap();
        h = ah.iter().zip(gin(batch.input(t, 0))).map(|(a, g)| a + g).collect();
        let m = p.w_m_out.matvec(&h).unwrap();
        let x = p.w_x_out.matvec(&h).unwrap();
        let g: Vec<f64> = m.iter().zip(&x).map(|(a, b)| a * b).collect();
        let expect = p.d_readout.matvec(&g).unwrap();
        for i in 0..2 {
            assert!((y[(t, i)] - expect[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn dense_overflow_is_reported() {
    let p = DenseGatedRnnParams {
        w_m_in: Matrix::filled(1, 1, 1.0),
        w_x_in: Matrix::filled(1, 1, 1.0),
        a: Matrix::filled(1, 1, 1e4),
        w_m_out: Matrix::filled(1, 1, 1.0),
        w_x_out: Matrix::filled(1, 1, 1.0),
        d_readout: Matrix::filled(1, 1, 1.0),
        augmented: false,
    };
    let batch = batch_from(Matrix::filled(10, 1, 1.0), 1, 10);
    match Model::DenseGated(p).forward(&batch) {
        Err(Error::Overflow { step, .. }) => assert_eq!(step, 3),
        other => panic!("expected overflow, got {:?}", other.map(|_| ())),
    }
}

fn lstm_single(mode: ActivationMode, seed: u64) -> LstmParams {
    let mut rng = Rng::new(seed);
    let gate = |rng: &mut Rng| Gate {
        u: sample_normal(rng, 2, 2, 0.7),
        v: sample_normal(rng, 2, 2, 0.7),
        b: sample_normal(rng, 1, 2, 0.3),
    };
    LstmParams {
        embed: None,
        layers: vec![LstmLayer {
            f: gate(&mut rng),
            cand: gate(&mut rng),
            g: gate(&mut rng),
            o: gate(&mut rng),
            pin_f: None,
            pin_o: None,
        }],
        readout: None,
        mode,
    }
}

#[test]
fn lstm_saturated_gates_integrate() {
    let mut p = lstm_single(ActivationMode::Standard, 1);
    let layer = &mut p.layers[0];
    for gate in [&mut layer.f, &mut layer.g, &mut layer.o] {
        gate.u = Matrix::zeros(2, 2);
        gate.v = Matrix::zeros(2, 2);
        gate.b = Matrix::filled(1, 2, 40.0);
    }
    layer.cand.v = Matrix::zeros(2, 2);
    let batch = random_batch(2, 1, 4, 2);
    let f = Model::Lstm(p.clone()).forward(&batch).unwrap();
    let mut c = [0.0; 2];
    for t in 0..4 {
        let z = p.layers[0].cand.u.matvec(batch.input(t, 0)).unwrap();
        for i in 0..2 {
            c[i] += (z[i] + p.layers[0].cand.b[(0, i)]).tanh();
            assert!((f.output[(t, i)] - c[i].tanh()).abs() < 1e-12);
        }
    }
}

#[test]
fn lstm_zero_input_zero_trajectory() {
    let mut p = lstm_single(ActivationMode::Standard, 2);
    let l = &mut p.layers[0];
    for gate in [&mut l.f, &mut l.cand, &mut l.g, &mut l.o] {
        gate.b = Matrix::zeros(1, 2);
    }
    let batch = batch_from(Matrix::zeros(5, 2), 1, 5);
    assert_eq!(Model::Lstm(p).forward(&batch).unwrap().output.max_abs(), 0.0);
}

fn lstm_unroll(p: &LstmParams, xs: &[&[f64]]) -> Vec<Vec<f64>> {
    let l = &p.layers[0];
    let lin = p.mode == ActivationMode::Linearized;
    let pre = |g: &Gate, x: &[f64], h: &[f64]| -> Vec<f64> {
        let a = g.u.matvec(x).unwrap();
        let b = g.v.matvec(h).unwrap();
        (0..2).map(|i| a[i] + b[i] + g.b[(0, i)]).collect()
    };
    let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
    let mut out = Vec::new();
    for x in xs {
        let f: Vec<f64> = pre(&l.f, x, &h).into_iter().map(sigmoid).collect();
        let act = |v: Vec<f64>, nl: fn(f64) -> f64| -> Vec<f64> { v.into_iter().map(|z| if lin { z } else { nl(z) }).collect() };
        let cand = act(pre(&l.cand, x, &h), f64::tanh);
        let g = act(pre(&l.g, x, &h), sigmoid);
        let o = act(pre(&l.o, x, &h), sigmoid);
        for i in 0..2 {
            c[i] = f[i] * c[i] + g[i] * cand[i];
        }
        h = (0..2).map(|i| o[i] * if lin { c[i] } else { c[i].tanh() }).collect();
        out.push(h.clone());
    }
    out
}

#[test]
fn lstm_two_step_unroll() {
    for mode in [ActivationMode::Standard, ActivationMode::Linearized] {
        let p = lstm_single(mode, 3);
        let batch = random_batch(2, 1, 2, 4);
        let y = Model::Lstm(p.clone()).forward(&batch).unwrap().output;
        let expect = lstm_unroll(&p, &[batch.input(0, 0), batch.input(1, 0)]);
        for t in 0..2 {
            for i in 0..2 {
                assert!((y[(t, i)] - expect[t][i]).abs() < 1e-13, "{mode:?}");
            }
        }
    }
}

#[test]
fn gru_two_step_unroll() {
    let mut rng = Rng::new(11);
    let Model::Gru(p) = (ArchSpec::Gru { hidden: 3, layers: 1 }).init(2, 1, &mut rng) else {
        unreachable!()
    };
    let batch = random_batch(2, 1, 2, 12);
    let f = Model::Gru(p.clone()).forward(&batch).unwrap();
    let l = &p.layers[0];
    let emb = p.embed.as_ref().unwrap();
    let mut h = vec![0.0; 3];
    for t in 0..2 {
        let x = emb.matvec(batch.input(t, 0)).unwrap();
        let pre = |g: &Gate, hh: &[f64]| -> Vec<f64> {
            let a = g.u.matvec(&x).unwrap();
            let b = g.v.matvec(hh).unwrap();
            (0..3).map(|i| a[i] + b[i] + g.b[(0, i)]).collect()
        };
        let r: Vec<f64> = pre(&l.r, &h).into_iter().map(sigmoid).collect();
        let z: Vec<f64> = pre(&l.z, &h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = (0..3).map(|i| r[i] * h[i]).collect();
        let cand: Vec<f64> = pre(&l.cand, &rh).into_iter().map(f64::tanh).collect();
        h = (0..3).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
        let y = p.readout.as_ref().unwrap().matvec(&h).unwrap();
        assert!((f.output[(t, 0)] - y[0]).abs() < 1e-13);
    }
}

fn lru_model(variant: LruVariant, seed: u64) -> LruParams {
    let mut rng = Rng::new(seed);
    match (ArchSpec::Lru { hidden: 3, layers: 1, variant }).init(2, 2, &mut rng) {
        Model::Lru(p) => p,
        _ => unreachable!(),
    }
}

#[test]
fn lru_complex_oracle() {
    let p = lru_model(LruVariant::Out, 13);
    let batch = random_batch(2, 1, 3, 14);
    let y = Model::Lru(p.clone()).forward(&batch).unwrap().output;
    let l = &p.layers[0];
    let (lr, li) = l.lambda();
    let mut h = vec![Complex64::new(0.0, 0.0); 3];
    for t in 0..3 {
        let u = p.embed.as_ref().unwrap().matvec(batch.input(t, 0)).unwrap();
        let uc: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let bu = l.b.matvec(&uc).unwrap();
        for k in 0..3 {
            let gamma = l.gamma_log[(0, k)].exp();
            h[k] = Complex64::new(lr[k], li[k]) * h[k] + gamma * bu[k];
        }
        let ch = l.c.matvec(&h).unwrap();
        let du = l.d.matvec(&u).unwrap();
        let ytil: Vec<f64> = (0..3).map(|i| ch[i].re + du[i]).collect();
        let a = l.w_m.matvec(&ytil).unwrap();
        let b = l.w_x.matvec(&ytil).unwrap();
        let glu: Vec<f64> = (0..3).map(|i| sigmoid(a[i]) * b[i]).collect();
        let out = p.readout.as_ref().unwrap().matvec(&glu).unwrap();
        for i in 0..2 {
            assert!((y[(t, i)] - out[i]).abs() < 1e-13);
        }
    }
}

#[test]
fn lru_zero_phase_is_real_recurrence() {
    let mut p = lru_model(LruVariant::Out, 15);
    p.layers[0].theta_log = Matrix::filled(1, 3, -60.0);
    let (_, im) = p.layers[0].lambda();
    assert!(im.iter().all(|v| v.abs() < 1e-20));
    let f = Model::Lru(p).forward(&random_batch(2, 1, 6, 16)).unwrap();
    let h = f.hidden.unwrap();
    // With real λ and real inputs, imaginary parts evolve independently of real ones.
    assert_eq!(h.cols(), 6);
}

#[test]
fn lru_without_b_uses_skip_path_only() {
    let mut p = lru_model(LruVariant::Out, 17);
    p.layers[0].b = CMatrix::zeros(3, 3);
    let model = Model::Lru(p);
    let batch = random_batch(2, 1, 5, 18);
    let y = model.forward(&batch).unwrap().output;
    let last = batch_from(Matrix::row_vector(batch.input(4, 0)), 1, 1);
    let y1 = model.forward(&last).unwrap().output;
    assert!(y.row_block(4, 1).max_abs_diff(&y1).unwrap() < 1e-14);
}

#[test]
fn every_model_is_causal_and_deterministic() {
    for (k, spec) in all_archs().into_iter().enumerate() {
        let model = spec.init(3, 2, &mut Rng::new(20 + k as u64));
        let batch = random_batch(3, 2, 7, 30);
        let y = model.forward(&batch).unwrap().output;
        assert_eq!(y, model.forward(&batch).unwrap().output);
        let mut x = batch.inputs.clone();
        let s = 4;
        x.row_mut(s * 2 + 1)[0] += 1.0;
        let y2 = model.forward(&batch.with_inputs(x).unwrap()).unwrap().output;
        for t in 0..s {
            for b in 0..2 {
                assert_eq!(y.row(t * 2 + b), y2.row(t * 2 + b), "{}", spec.name());
            }
        }
        assert_ne!(y.row(s * 2 + 1), y2.row(s * 2 + 1), "{}", spec.name());
    }
}

#[test]
fn gated_single_step_is_quartic() {
    let model = (ArchSpec::Gated { n: 5, m: 4, augmented: false }).init(3, 2, &mut Rng::new(40));
    let batch = random_batch(3, 4, 1, 41);
    let scaled = batch.with_inputs(batch.inputs.scale(1.7)).unwrap();
    let a = model.forward(&batch).unwrap().output.scale(1.7f64.powi(4));
    let b = model.forward(&scaled).unwrap().output;
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12 * b.max_abs());
}

#[test]
fn wrong_input_width_is_shape_error() {
    let model = (ArchSpec::Lstm { hidden: 3, layers: 1 }).init(3, 2, &mut Rng::new(1));
    assert!(matches!(model.forward(&random_batch(4, 1, 2, 1)), Err(Error::Shape { .. })));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut models: Vec<Model> = all_archs()
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.init(3, 2, &mut Rng::new(50 + k as u64)))
        .collect();
    let mut rng = Rng::new(60);
    models.push(Model::Attention(
        AttentionParams::new(sample_normal(&mut rng, 3, 3, 1.0), sample_normal(&mut rng, 3, 3, 1.0), sample_normal(&mut rng, 3, 3, 1.0)).unwrap(),
    ));
    models.push(Model::Gated(scalar_gated(0.25)));
    for model in models {
        let path = dir.path().join(format!("{}.json", model.arch()));
        let ckpt = Checkpoint::new(model.clone(), 7);
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(&format!("\"arch\": \"{}\"", model.arch())));
    }
}

#[test]
fn floats_written_with_seventeen_digits() {
    let s = to_json_17(&vec![0.1f64, -1.0 / 3.0, 0.0]).unwrap();
    assert!(s.contains("1.0000000000000001e-1"), "{s}");
    assert!(s.contains("-3.3333333333333331e-1"), "{s}");
    let back: Vec<f64> = serde_json::from_str(&s).unwrap();
    assert_eq!(back[1].to_bits(), (-1.0f64 / 3.0).to_bits());
}

#[test]
fn identity_attention_fingerprint_at_d2() {
    let id = Matrix::identity(2);
    let model = Model::Attention(AttentionParams::new(id.clone(), id.clone(), id).unwrap());
    let fp = instantaneous_fingerprint(&model, 4).unwrap();
    // y_i = x_i (x_1² + x_2²)
    assert_eq!(fp.components[0].coefficient(&[3, 0]), 1.0);
    assert_eq!(fp.components[0].coefficient(&[1, 2]), 1.0);
    assert_eq!(fp.components[1].coefficient(&[2, 1]), 1.0);
    assert_eq!(fp.components[1].coefficient(&[0, 3]), 1.0);
    assert_eq!(fp.components[0].num_terms(), 2);
}

#[test]
fn attention_fingerprint_is_homogeneous_cubic() {
    let mut rng = Rng::new(70);
    let p = AttentionParams::new(sample_normal(&mut rng, 4, 4, 1.0), sample_normal(&mut rng, 4, 4, 1.0), sample_normal(&mut rng, 4, 4, 1.0)).unwrap();
    let fp = instantaneous_fingerprint(&Model::Attention(p), 4).unwrap();
    for c in &fp.components {
        assert!(c.terms().all(|(e, _)| crate::poly::total_degree(e) == 3));
    }
}

#[test]
fn fingerprint_agrees_with_single_step_forward() {
    let mut models: Vec<Model> = vec![
        (ArchSpec::Gated { n: 5, m: 4, augmented: true }).init(3, 2, &mut Rng::new(80)),
        (ArchSpec::SideGated { n: 5, augmented: true }).init(3, 2, &mut Rng::new(81)),
        (ArchSpec::DenseGated { n: 4, m: 3, augmented: false }).init(3, 2, &mut Rng::new(82)),
    ];
    let mut lstm = lstm_single(ActivationMode::Linearized, 83);
    lstm.layers[0].pin_o = Some(vec![Some(1.0), None]);
    models.push(Model::Lstm(lstm));
    let mut lru = lru_model(LruVariant::InOut, 84);
    lru.mode = ActivationMode::Linearized;
    models.push(Model::Lru(lru));
    for model in models {
        let d = model.d_data();
        let fp = instantaneous_fingerprint(&model, 12).unwrap();
        let batch = random_batch(d, 3, 1, 85);
        let y = model.forward(&batch).unwrap().output;
        for b in 0..3 {
            let p = fp.eval(batch.input(0, b)).unwrap();
            for (i, v) in p.iter().enumerate() {
                assert!((v - y[(b, i)]).abs() < 1e-12 * (1.0 + v.abs()), "{}", model.arch());
            }
        }
        assert_eq!(coefficient_distance(&fp, &fp, 12).unwrap(), 0.0);
    }
}

#[test]
fn standard_mode_is_not_polynomial() {
    for spec in [ArchSpec::Lstm { hidden: 2, layers: 1 }, ArchSpec::Gru { hidden: 2, layers: 1 }] {
        let m = spec.init(2, 2, &mut Rng::new(1));
        assert!(matches!(instantaneous_fingerprint(&m, 4), Err(Error::NotPolynomial { .. })));
    }
}
