use proptest::prelude::*;

use super::*;
use crate::compiler::{compile_compact, compile_full, compile_low_rank, compile_lstm_attention, compile_side, pad_hidden, permute_hidden, rescale_hidden, DEFAULT_RANK_TOL};
use crate::error::Error;
use crate::models::{AttentionParams, GatedRnnParams, Model, Recurrence, SequenceBatch, SideGatedRnnParams};
use crate::numerics::{sample_normal, Matrix, Rng};
use crate::tasks::{gd_baseline_predict, gen_icl_regression, optimal_eta, recall_attention_solution, AssocRecallSpec, IclRegressionSpec, Split};

fn random_attention(d: usize, seed: u64) -> AttentionParams {
    let mut rng = Rng::new(seed).substream("attention");
    let s = 1.0 / (d as f64).sqrt();
    AttentionParams::new(sample_normal(&mut rng, d, d, s), sample_normal(&mut rng, d, d, s), sample_normal(&mut rng, d, d, s)).unwrap()
}

fn random_batch(d: usize, n_seq: usize, steps: usize, seed: u64) -> SequenceBatch {
    let x = sample_normal(&mut Rng::new(seed), n_seq * steps, d, 1.0);
    SequenceBatch::new(n_seq, steps, x.clone(), x, vec![1.0; n_seq * steps]).unwrap()
}

#[test]
fn classify_compiled_and_trained() {
    let c = compile_full(&random_attention(3, 1));
    assert_eq!(class_counts(&classify_lambda(&c, DEFAULT_LAMBDA_TOL)), [9, 3, 0]);
    let trained = GatedRnnParams {
        recurrence: Recurrence::from_lambda_log(&[0.9999999, 1e-9, 0.5]),
        ..compile_full(&random_attention(1, 1))
    };
    assert_eq!(classify_lambda(&trained, 0.0), vec![LambdaClass::Other; 3]);
    assert_eq!(
        classify_lambda(&trained, DEFAULT_LAMBDA_TOL),
        vec![LambdaClass::Integrator, LambdaClass::Memoryless, LambdaClass::Other]
    );
}

#[test]
fn classify_invariant_under_gating_symmetries() {
    let c = compile_full(&random_attention(2, 2));
    let base = classify_lambda(&c, DEFAULT_LAMBDA_TOL);
    let perm = vec![5, 0, 4, 1, 3, 2];
    let permuted = classify_lambda(&permute_hidden(&c, &perm).unwrap(), DEFAULT_LAMBDA_TOL);
    assert_eq!(permuted, perm.iter().map(|&i| base[i]).collect::<Vec<_>>());
    let scaled = rescale_hidden(&c, &[2.0, -1.0, 0.5, 3.0, 1.0, 7.0]).unwrap();
    assert_eq!(classify_lambda(&scaled, DEFAULT_LAMBDA_TOL), base);
}

#[test]
fn prune_removes_padding_only() {
    let c = compile_full(&random_attention(3, 3));
    let padded = pad_hidden(&c, 5);
    let b = random_batch(3, 4, 16, 1);
    let (pruned, r) = prune(&padded, DEFAULT_WEIGHT_TOL, &b).unwrap();
    assert_eq!(r.removed_hidden, (12..17).collect::<Vec<_>>());
    assert!(r.removed_outputs.is_empty());
    assert_eq!(r.deviation, 0.0);
    assert_eq!(pruned, c);
    let (same, r) = prune(&padded, 0.0, &b).unwrap();
    assert!(r.removed_hidden.is_empty() && r.removed_outputs.is_empty());
    assert_eq!(same, padded);
}

#[test]
fn prune_cascades_through_dead_outputs() {
    let mut c = compile_full(&random_attention(2, 4));
    // Silence the readout of gated output 0: it is removed, and kv neuron 0,
    // which only that output uses, follows.
    for a in 0..2 {
        c.d_readout[(a, 0)] = 0.0;
    }
    let b = random_batch(2, 2, 8, 2);
    let (pruned, r) = prune(&c, DEFAULT_WEIGHT_TOL, &b).unwrap();
    assert_eq!(r.removed_outputs, vec![0]);
    assert_eq!(r.removed_hidden, vec![0]);
    assert_eq!(pruned.n(), 5);
    assert!(r.deviation <= 1e-14);
    let rerun = Model::Gated(c).forward(&b).unwrap().output;
    let again = Model::Gated(pruned).forward(&b).unwrap().output;
    assert!(rerun.max_abs_diff(&again).unwrap() <= r.deviation + 1e-15);
}

fn probe(c: &GatedRnnParams, p: &AttentionParams) -> ProbeReport {
    let b = random_batch(p.d(), 4, 16, 9);
    let h = Model::Gated(c.clone()).forward(&b).unwrap().hidden.unwrap();
    probe_kv_q(c, &h, p, &b, DEFAULT_LAMBDA_TOL).unwrap()
}

#[test]
fn probes_on_constructions() {
    let p = random_attention(3, 5);
    let full = probe(&compile_full(&p), &p);
    assert!(full.score_kv <= 1e-12 && full.score_q <= 1e-12, "{full:?}");
    assert_eq!((full.n_integrators, full.n_memoryless), (9, 3));
    let compact = probe(&compile_compact(&p).unwrap(), &p);
    assert!(compact.score_kv <= 1e-10 && compact.score_q <= 1e-10, "{compact:?}");
    let low = probe(&compile_low_rank(&p, DEFAULT_RANK_TOL).unwrap(), &p);
    assert!(low.score_kv <= 1e-10 && low.score_q <= 1e-10, "{low:?}");
}

#[test]
fn probe_detects_missing_information() {
    let p = random_attention(3, 6);
    let mut c = compile_full(&p);
    c.recurrence = Recurrence::Clamped { lambda: vec![0.5; 12] };
    let r = probe(&c, &p);
    assert_eq!(r.n_integrators, 0);
    assert!(r.score_kv > 0.1);
}

#[test]
fn fingerprint_distances() {
    let p = random_attention(3, 7);
    let teacher = Model::Attention(p.clone());
    let students = [
        Model::Gated(compile_full(&p)),
        Model::Gated(compile_compact(&p).unwrap()),
        Model::Gated(compile_low_rank(&p, DEFAULT_RANK_TOL).unwrap()),
        Model::SideGated(compile_side(&p)),
        Model::Lstm(compile_lstm_attention(&p)),
    ];
    for s in &students {
        assert!(fingerprint_distance(&teacher, s).unwrap() <= 1e-12, "{}", s.arch());
    }
    let doubled = Model::Attention(AttentionParams { w_v: p.w_v.scale(2.0), ..p.clone() });
    assert!((fingerprint_distance(&teacher, &doubled).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(fingerprint_distance(&teacher, &teacher).unwrap(), 0.0);
}

#[test]
fn merge_split_copies() {
    let p = random_attention(2, 8);
    let c = compile_full(&p);
    // Duplicate gated output 1 with its readout split 0.3 / 0.7 and the
    // gating rescaled, so rows 1 and 4 combine into one rank-1 kernel.
    let extra = 4;
    let w_m_out = Matrix::vstack(&[&c.w_m_out, &Matrix::row_vector(&c.w_m_out.row(1).iter().map(|v| 2.0 * v).collect::<Vec<_>>())]).unwrap();
    let w_x_out = Matrix::vstack(&[&c.w_x_out, &Matrix::row_vector(c.w_x_out.row(1))]).unwrap();
    let mut d_readout = Matrix::hstack(&[&c.d_readout, &Matrix::zeros(2, 1)]).unwrap();
    for a in 0..2 {
        let v = c.d_readout[(a, 1)];
        d_readout[(a, 1)] = 0.3 * v;
        d_readout[(a, extra)] = 0.35 * v;
    }
    let split = GatedRnnParams { w_m_out, w_x_out, d_readout, ..c.clone() };
    let b = random_batch(2, 3, 8, 3);
    let src = Model::Gated(c).forward(&b).unwrap().output;
    assert!(Model::Gated(split.clone()).forward(&b).unwrap().output.max_abs_diff(&src).unwrap() < 1e-12);
    let (merged, r) = merge_rank1_rows(&split, &[1, extra], MERGE_RANK_TOL, MERGE_COSINE_TOL, &b).unwrap();
    assert_eq!(merged.m(), 4);
    assert!(r.deviation < 1e-12, "{r:?}");
    let again = Model::Gated(merged).forward(&b).unwrap().output;
    assert!(again.max_abs_diff(&src).unwrap() < 1e-12);
}

#[test]
fn merge_refuses_rank_two() {
    let c = compile_full(&random_attention(2, 9));
    let b = random_batch(2, 2, 4, 1);
    // Outputs 0 and 1 feed the same readout row through different kernels.
    let err = merge_rank1_rows(&c, &[0, 1], MERGE_RANK_TOL, MERGE_COSINE_TOL, &b).unwrap_err();
    assert!(matches!(err, Error::MergeRefused(_)), "{err}");
    // Outputs 0 and 2 read into different rows with non-proportional kernels.
    let err = merge_rank1_rows(&c, &[0, 2], MERGE_RANK_TOL, MERGE_COSINE_TOL, &b).unwrap_err();
    assert!(matches!(err, Error::MergeRefused(_)), "{err}");
}

#[test]
fn gd_model_terms_are_eta() {
    let spec = IclRegressionSpec::default();
    let eta = optimal_eta(&spec);
    let model = Model::Attention(gd_attention_model(&spec, eta));
    let r = icl_polynomial_terms(&model, 3, 3, &table_terms(3, 3)).unwrap();
    assert_eq!(r.coefficients.len(), 9);
    for (_, c) in &r.coefficients {
        assert!((c - eta).abs() < 1e-15);
    }
    assert_eq!(r.residual, 0.0);
    assert_eq!(format!("{:.2e}", r.coefficients[0].1), "6.76e-2");
    assert_eq!(r.coefficients[1].0.label, "x2^2 y1");
    let first: Vec<_> = table_terms(3, 3).into_iter().filter(|t| t.output == 0).collect();
    let r1 = icl_polynomial_terms(&model, 3, 3, &first).unwrap();
    assert_eq!(r1.coefficients, r.coefficients[..3].to_vec());
    assert_eq!(r1.residual, 0.0);
    let partial = icl_polynomial_terms(&model, 3, 3, &first[..2]).unwrap();
    assert!((partial.residual - eta).abs() < 1e-15);
}

#[test]
fn gd_model_matches_baseline_prediction() {
    let spec = IclRegressionSpec::default();
    let b = gen_icl_regression(&spec, &mut Rng::new(3), 5, Split::Train);
    let eta = 0.07;
    let y = gd_attention_model(&spec, eta).forward(&b).unwrap();
    let p = gd_baseline_predict(&b, 3, eta).unwrap();
    for s in 0..5 {
        let row = y.row(b.row_index(spec.t, s));
        for i in 0..3 {
            assert!((row[3 + i] - p[(s, i)]).abs() < 1e-12);
        }
    }
}

#[test]
fn recall_probe_on_analytic_solution() {
    let spec = AssocRecallSpec { t: 4 };
    let side = compile_side(&recall_attention_solution(&spec));
    let r = recall_bilinear_probe(&side).unwrap();
    assert_eq!(r.maps.len(), 16);
    for m in &r.maps {
        let expect = Matrix::from_fn(8, 8, |a, b| if a == m.value && b == m.key { 1.0 } else { 0.0 });
        assert_eq!(m.matrix, expect);
        assert_eq!(m.rank, 1);
    }
    assert_eq!((r.rank1_fraction, r.peak_fraction), (1.0, 1.0));

    let mut biased = side.clone();
    let mut rng = Rng::new(21);
    let col = |m: &Matrix, rng: &mut Rng| Matrix::hstack(&[m, &sample_normal(rng, m.rows(), 1, 1.0)]).unwrap();
    biased.w_m_in = col(&side.w_m_in, &mut rng);
    biased.w_x_in = col(&side.w_x_in, &mut rng);
    biased.w_side = col(&side.w_side, &mut rng);
    biased.augmented = true;
    let rb = recall_bilinear_probe(&biased).unwrap();
    assert_eq!(rb.maps, r.maps);

    let zero = SideGatedRnnParams {
        w_m_in: Matrix::zeros(4, 4),
        w_x_in: Matrix::zeros(4, 4),
        recurrence: Recurrence::Clamped { lambda: vec![1.0; 4] },
        w_side: Matrix::zeros(4, 4),
        d_readout: Matrix::zeros(4, 4),
        augmented: false,
    };
    let r = recall_bilinear_probe(&zero).unwrap();
    assert!(r.maps.iter().all(|m| m.matrix.max_abs() == 0.0 && m.rank == 0));
    assert_eq!(r.peak_fraction, 0.0);
}

#[test]
fn display_order_groups_classes() {
    let c = compile_full(&random_attention(2, 10));
    let order = display_order(&permute_hidden(&c, &[4, 0, 5, 1, 2, 3]).unwrap(), DEFAULT_LAMBDA_TOL);
    let lam = permute_hidden(&c, &[4, 0, 5, 1, 2, 3]).unwrap().lambda();
    let classes: Vec<f64> = order.iter().map(|&i| lam[i]).collect();
    assert_eq!(classes, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fingerprint_distance_symmetric(seed in any::<u64>(), s in 0.1f64..3.0) {
        let p = random_attention(2, seed);
        let q = AttentionParams { w_q: p.w_q.scale(s), ..random_attention(2, seed ^ 1) };
        let (a, b) = (Model::Attention(p), Model::Gated(compile_full(&q)));
        let (x, y) = (fingerprint_distance(&a, &b).unwrap(), fingerprint_distance(&b, &a).unwrap());
        prop_assert!((x - y).abs() <= 1e-12);
        prop_assert!(x >= 0.0);
    }

    #[test]
    fn prune_preserves_function(seed in any::<u64>(), extra in 0usize..6) {
        let c = pad_hidden(&compile_full(&random_attention(2, seed)), extra);
        let b = random_batch(2, 2, 6, seed);
        let (pruned, r) = prune(&c, DEFAULT_WEIGHT_TOL, &b).unwrap();
        let y0 = Model::Gated(c).forward(&b).unwrap().output;
        let y1 = Model::Gated(pruned).forward(&b).unwrap().output;
        prop_assert!(y0.max_abs_diff(&y1).unwrap() <= r.deviation + 1e-15);
        prop_assert!(r.deviation <= 1e-12);
    }
}
