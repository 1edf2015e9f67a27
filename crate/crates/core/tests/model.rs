mod common;

use bcpredict::model::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, sli_bilinear, sli_ntn, sli_sum,
    CheckpointMeta, ModelError, SliParams, Variant,
};
use common::{model_grad_check, random_window, small_model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec_in(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_sli(rng: &mut ChaCha8Rng, n: usize, k: usize, m: usize) -> SliParams {
    let mut p = SliParams::ntn_zeros(n, k, m);
    for x in p.w.iter_mut().chain(&mut p.v).chain(&mut p.u).chain(&mut p.b) {
        *x = rng.random_range(-1.0..1.0);
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_gradients_match_finite_differences(v in 0usize..Variant::ALL.len(), seed in 0u64..10_000) {
        let report = model_grad_check(Variant::ALL[v], seed);
        prop_assert!(report.max_relative_error <= 1e-4, "{:?}", report);
    }

    #[test]
    fn bilinear_matches_triple_sum(seed in any::<u64>(), n in 1usize..7, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SliParams::bilinear_zeros(n, k);
        for x in p.w.iter_mut().chain(&mut p.b) {
            *x = rng.random_range(-1.0..1.0);
        }
        let (s, l) = (vec_in(&mut rng, n), vec_in(&mut rng, n));
        let out = sli_bilinear(&s, &l, &p).unwrap();
        prop_assert_eq!(out.len(), k);
        for j in 0..k {
            let mut z = p.b[j];
            for a in 0..n {
                for c in 0..n {
                    z += s[a] * p.w[j * n * n + a * n + c] * l[c];
                }
            }
            prop_assert!((out[j] - z).abs() < 1e-12);
        }
        // linear in each argument once the bias is removed
        let s2: Vec<f64> = s.iter().map(|x| 2.5 * x).collect();
        let scaled = sli_bilinear(&s2, &l, &p).unwrap();
        for j in 0..k {
            prop_assert!((scaled[j] - p.b[j] - 2.5 * (out[j] - p.b[j])).abs() < 1e-11);
        }
    }

    #[test]
    fn ntn_matches_direct_formula(seed in any::<u64>(), n in 1usize..6, k in 1usize..5, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_sli(&mut rng, n, k, m);
        let (s, l) = (vec_in(&mut rng, n), vec_in(&mut rng, n));
        let x: Vec<f64> = s.iter().chain(&l).copied().collect();
        let h: Vec<f64> = (0..k)
            .map(|j| {
                let mut z = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        z += s[a] * p.w[j * n * n + a * n + c] * l[c];
                    }
                }
                for (i, xi) in x.iter().enumerate() {
                    z += p.v[j * 2 * n + i] * xi;
                }
                z.tanh()
            })
            .collect();
        let out = sli_ntn(&s, &l, &p).unwrap();
        prop_assert_eq!(out.len(), m);
        for q in 0..m {
            let want = p.b[q] + (0..k).map(|j| p.u[j * m + q] * h[j]).sum::<f64>();
            prop_assert!((out[q] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_is_symmetric(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = (vec_in(&mut rng, n), vec_in(&mut rng, n));
        prop_assert_eq!(sli_sum(&s, &l).unwrap(), sli_sum(&l, &s).unwrap());
    }
}

#[test]
fn ntn_with_zero_interaction_returns_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = random_sli(&mut rng, 5, 5, 5);
    p.w.fill(0.0);
    p.v.fill(0.0);
    let out = sli_ntn(&vec_in(&mut rng, 5), &vec_in(&mut rng, 5), &p).unwrap();
    assert_eq!(out, p.b);
}

#[test]
fn sli_rejects_mismatched_lengths() {
    assert!(sli_sum(&[1.0, 2.0], &[1.0]).is_err());
    let p = SliParams::bilinear_zeros(3, 2);
    assert!(sli_bilinear(&[1.0; 3], &[1.0; 4], &p).is_err());
}

#[test]
fn eval_predictions_are_deterministic_distributions() {
    for variant in Variant::ALL {
        let model = small_model(variant, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = random_window(&mut rng, 24);
        let (s, l) = model.resolve_ids(Some("p"), Some("r")).unwrap();
        let a = model.predict_proba(&w, s, l).unwrap();
        let b = model.predict_proba(&w, s, l).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|p| *p > 0.0));
    }
}

#[test]
fn unknown_interlocutor_is_an_error() {
    let model = small_model(Variant::AcSL, 1);
    match model.resolve_ids(Some("p"), Some("zz")) {
        Err(ModelError::UnknownInterlocutor(id)) => assert_eq!(id, "zz"),
        other => panic!("expected unknown interlocutor, got {other:?}"),
    }
}

#[test]
fn checkpoint_file_roundtrip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        seed: 42,
        config_hash: "deadbeef".into(),
        run_config: serde_json::json!({"variant": "AC_SLI_NTN"}),
    };
    for variant in Variant::ALL {
        let model = small_model(variant, 20);
        let path = dir.path().join(format!("{variant}.bcck"));
        save_checkpoint(&path, &model, &meta).unwrap();
        let (back, back_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back.params, model.params);
        assert_eq!(back.config, model.config);
        assert_eq!(encode_checkpoint(&back, &meta), std::fs::read(&path).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = random_window(&mut rng, 24);
        let (s, l) = model.resolve_ids(Some("s"), Some("q")).unwrap();
        assert_eq!(back.predict_proba(&w, s, l).unwrap(), model.predict_proba(&w, s, l).unwrap());
    }

    let mut bytes = encode_checkpoint(&small_model(Variant::Ac, 1), &meta);
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    bytes[0] = b'Z';
    assert!(decode_checkpoint(&bytes).is_err());
}
