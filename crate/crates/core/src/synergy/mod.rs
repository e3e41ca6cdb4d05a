//! The synergy decoder `p(a|z)`, the multi-head latent policy `π(z|s,n)` and
//! the latent discriminator `q(z|a)`.

mod decoder;
mod discriminator;
mod policy;

pub use decoder::{
    ActionDecoder, Decoded, DecoderForm, Mode, SynergyModel, DECODER_INIT_STD, DECODER_LOG_STD, DECODER_NET, INIT_STD,
    PHI,
};
pub use discriminator::{disc_logprob, disc_update, DiscUpdateReport, Discriminator, DISC_LOG_STD, DISC_NET, DISC_RETRIES};
pub use policy::{
    act, pi_prefix, row_entropy, row_logprob, sample_rows, value_prefix, ActOutput, LatentSample, NetConfig,
    TaskPolicy,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{
        gaussian_entropy, gaussian_logprob, Activation, Checkpoint, DiagGaussian, MlpSpec, ParamSet, Tensor,
        HALF_LN_2PI, STD_MAX, STD_MIN,
    };
    use crate::linalg;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn zero_params(p: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, t) in p.iter() {
            out.insert(k.clone(), Tensor::zeros(t.shape().to_vec())).unwrap();
        }
        out
    }

    #[test]
    fn linear_decode_selects_rows() {
        let model = SynergyModel::linear(3, 6, &mut rng(0)).unwrap();
        let phi = model.phi().unwrap();
        match model.decode(&[1.0, 0.0, 0.0], Mode::Deterministic).unwrap() {
            Decoded::Mean(m) => assert_eq!(m, phi.row(0).to_vec()),
            other => panic!("{other:?}"),
        }
        match model.decode(&[0.0; 3], Mode::Stochastic).unwrap() {
            Decoded::Dist(d) => {
                assert_eq!(d.mean(), &[0.0; 6]);
                assert!(d.std().iter().all(|s| (s - DECODER_INIT_STD).abs() < 1e-15));
            }
            other => panic!("{other:?}"),
        }
        assert!(model.decode(&[1.0], Mode::Deterministic).is_err());
    }

    #[test]
    fn zero_mlp_decoder_outputs_bias() {
        let mut model = SynergyModel::mlp(2, 5, &[32, 32], Activation::Tanh, &mut rng(1)).unwrap();
        let mut p = zero_params(&model.params);
        let last = MlpSpec::bias_name(DECODER_NET, 2);
        p.get_mut(&last).unwrap().data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        model.params = p;
        match model.decode(&[3.0, -1.0], Mode::Deterministic).unwrap() {
            Decoded::Mean(m) => assert_eq!(m, vec![0.1, 0.2, 0.3, 0.4, 0.5]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_latent_of_zero_head_is_zero() {
        let mut policy = TaskPolicy::new(5, 2, 2, &NetConfig::default(), false, &mut rng(2)).unwrap();
        policy.params = zero_params(&policy.params);
        let s = policy.sample_latent(&[1.0, 2.0, 3.0, 4.0, 5.0], 1, Mode::Deterministic, &mut rng(0)).unwrap();
        assert_eq!(s.z, vec![0.0, 0.0]);
        assert!(policy.sample_latent(&[0.0; 5], 2, Mode::Deterministic, &mut rng(0)).is_err());
    }

    #[test]
    fn initial_latent_std_is_half() {
        let policy = TaskPolicy::new(4, 3, 1, &NetConfig::default(), false, &mut rng(3)).unwrap();
        let obs = Array2::from_shape_fn((7, 4), |(i, j)| (i * j) as f64 * 0.1 - 0.5);
        let (_, ls) = policy.head_outputs(&obs, 0).unwrap();
        assert!(ls.iter().all(|l| (l - INIT_STD.ln()).abs() < 1e-15));
    }

    #[test]
    fn sample_latent_is_self_consistent() {
        let policy = TaskPolicy::new(4, 3, 2, &NetConfig::default(), false, &mut rng(4)).unwrap();
        let s = [0.3, -0.2, 0.9, 0.0];
        let out = policy.sample_latent(&s, 1, Mode::Stochastic, &mut rng(9)).unwrap();
        let obs = Array2::from_shape_vec((1, 4), s.to_vec()).unwrap();
        let (mean, ls) = policy.head_outputs(&obs, 1).unwrap();
        let dist = DiagGaussian::from_log_std(mean.row(0).to_vec(), ls.row(0).as_slice().unwrap()).unwrap();
        assert!((gaussian_logprob(&dist, &out.z).unwrap() - out.log_prob).abs() < 1e-12);
        assert!((gaussian_entropy(&dist) - out.entropy).abs() < 1e-12);
    }

    #[test]
    fn deterministic_act_with_zero_nets_is_zero_and_repeatable() {
        let mut policy = TaskPolicy::new(4, 2, 1, &NetConfig::default(), false, &mut rng(5)).unwrap();
        policy.params = zero_params(&policy.params);
        let model = SynergyModel::linear(2, 6, &mut rng(6)).unwrap();
        let out = act(&policy, &model, &[1.0; 4], 0, Mode::Deterministic, &mut rng(0)).unwrap();
        assert_eq!(out.a, vec![0.0; 6]);
        let policy = TaskPolicy::new(4, 2, 1, &NetConfig::default(), false, &mut rng(5)).unwrap();
        let a1 = act(&policy, &model, &[0.2; 4], 0, Mode::Deterministic, &mut rng(0)).unwrap();
        let a2 = act(&policy, &model, &[0.2; 4], 0, Mode::Deterministic, &mut rng(1)).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn disc_logprob_examples() {
        let spec = MlpSpec::new(vec![2, 1], Activation::Identity);
        let mut disc = Discriminator::with_spec(spec, 0.0, &mut rng(0)).unwrap();
        disc.params = {
            let mut p = zero_params(&disc.params);
            p.get_mut(DISC_LOG_STD).unwrap().data_mut()[0] = 0.0;
            p
        };
        assert!((disc_logprob(&disc, &[0.3, 0.4], &[0.0]).unwrap() + 0.91894).abs() < 1e-5);
        assert!((disc_logprob(&disc, &[0.3, 0.4], &[1.0]).unwrap() + 1.41894).abs() < 1e-5);
        assert!(disc_logprob(&disc, &[0.3], &[1.0]).is_err());
    }

    #[test]
    fn perfect_disc_logprob_grows_as_std_shrinks() {
        // q's mean network is the identity map and a == z.
        let spec = MlpSpec::new(vec![2, 2], Activation::Identity);
        let mut prev = f64::NEG_INFINITY;
        for sigma in [1.0, 0.5, 0.1, 0.01] {
            let mut disc = Discriminator::with_spec(spec.clone(), f64::ln(sigma), &mut rng(0)).unwrap();
            let w = disc.params.get_mut(&MlpSpec::weight_name(DISC_NET, 0)).unwrap();
            w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            disc.params.get_mut(&MlpSpec::bias_name(DISC_NET, 0)).unwrap().data_mut().fill(0.0);
            let lp = disc_logprob(&disc, &[0.7, -0.2], &[0.7, -0.2]).unwrap();
            let expected = -2.0 * (HALF_LN_2PI + sigma.ln());
            assert!((lp - expected).abs() < 1e-12);
            assert!(lp > prev);
            prev = lp;
        }
    }

    fn linear_pairs(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut r = rng(seed);
        use rand::Rng;
        let a = Array2::from_shape_fn((n, 4), |_| r.random_range(-1.0..1.0));
        let m = ndarray::array![[0.5, -1.0], [0.2, 0.3], [-0.7, 0.1], [0.0, 0.9]];
        let z = a.dot(&m);
        (z, a)
    }

    #[test]
    fn disc_update_decreases_nll_monotonically() {
        let (z, a) = linear_pairs(200, 1);
        let mut disc = Discriminator::new(2, 4, &NetConfig::default(), &mut rng(2)).unwrap();
        let mut last = disc.mean_nll(&a, &z).unwrap();
        for _ in 0..30 {
            let rep = disc_update(&mut disc, &z, &a, 1e-3, 1).unwrap();
            assert!(rep.nll_after <= rep.nll_before);
            assert!((rep.nll_before - last).abs() < 1e-12);
            last = rep.nll_after;
        }
        let start = Discriminator::new(2, 4, &NetConfig::default(), &mut rng(2)).unwrap().mean_nll(&a, &z).unwrap();
        assert!(last < start);
    }

    #[test]
    fn disc_fits_identical_pairs() {
        let a = Array2::from_shape_fn((16, 3), |(_, j)| [0.2, -0.4, 0.6][j]);
        let z = Array2::from_shape_fn((16, 2), |(_, j)| [1.5, -0.5][j]);
        let mut disc = Discriminator::new(2, 3, &NetConfig::new(vec![16], Activation::Tanh), &mut rng(3)).unwrap();
        let rep = disc.update(&z, &a, 1e-2, 3000).unwrap();
        let mean = disc.mean_batch(&a).unwrap();
        assert!((mean[[0, 0]] - 1.5).abs() < 0.05 && (mean[[0, 1]] + 0.5).abs() < 0.05, "{mean:?}");
        assert!(rep.nll_after < rep.nll_before - 3.0);
        let floor = 2.0 * (HALF_LN_2PI + STD_MIN.ln());
        assert!(rep.nll_after >= floor - 1e-9);
    }

    #[test]
    fn disc_at_stationary_point_does_not_move() {
        let spec = MlpSpec::new(vec![2, 1], Activation::Identity);
        let mut disc = Discriminator::with_spec(spec, STD_MIN.ln(), &mut rng(0)).unwrap();
        let w = disc.params.get_mut(&MlpSpec::weight_name(DISC_NET, 0)).unwrap();
        w.data_mut().copy_from_slice(&[2.0, -1.0]);
        disc.params.get_mut(&MlpSpec::bias_name(DISC_NET, 0)).unwrap().data_mut().fill(0.0);
        let a = ndarray::array![[1.0, 0.0], [0.5, 0.5], [0.0, 2.0]];
        let z = ndarray::array![[2.0], [0.5], [-2.0]];
        let rep = disc.update(&z, &a, 1e-3, 5).unwrap();
        assert!((rep.nll_after - rep.nll_before).abs() < 1e-8);
    }

    #[test]
    fn disc_rejects_empty_batch() {
        let mut disc = Discriminator::new(1, 2, &NetConfig::default(), &mut rng(0)).unwrap();
        assert!(disc.update(&Array2::zeros((0, 1)), &Array2::zeros((0, 2)), 1e-3, 1).is_err());
    }

    #[test]
    fn head_isolation() {
        let mut policy = TaskPolicy::new(4, 2, 3, &NetConfig::default(), false, &mut rng(7)).unwrap();
        let obs = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.2);
        let before: Vec<_> = [0, 2].iter().map(|&n| policy.head_outputs(&obs, n).unwrap()).collect();
        let names: Vec<String> = policy.params.names().filter(|k| k.starts_with("head1.")).cloned().collect();
        for k in names {
            for v in policy.params.get_mut(&k).unwrap().data_mut() {
                *v += 0.37;
            }
        }
        let after: Vec<_> = [0, 2].iter().map(|&n| policy.head_outputs(&obs, n).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn checkpoints_roundtrip() {
        let model = SynergyModel::mlp(2, 5, &[8], Activation::Tanh, &mut rng(1)).unwrap();
        let back = SynergyModel::from_checkpoint(&Checkpoint::from_json_str(&model.to_checkpoint().to_json_string()).unwrap()).unwrap();
        assert_eq!(back, model);
        let lin = SynergyModel::linear(3, 7, &mut rng(2)).unwrap();
        let ck = lin.to_checkpoint();
        assert_eq!(ck.meta["form"], "linear");
        assert_eq!(ck.meta["b"], 3);
        assert_eq!(SynergyModel::from_checkpoint(&ck).unwrap(), lin);
        let policy = TaskPolicy::new(4, 2, 2, &NetConfig::default(), false, &mut rng(3)).unwrap();
        assert_eq!(TaskPolicy::from_checkpoint(&policy.to_checkpoint()).unwrap(), policy);
        let disc = Discriminator::new(2, 4, &NetConfig::default(), &mut rng(4)).unwrap();
        assert_eq!(Discriminator::from_checkpoint(&disc.to_checkpoint()).unwrap().params, disc.params);
    }

    #[test]
    fn identity_decoder_is_recognised() {
        let id = SynergyModel::identity(4);
        assert!(id.is_identity() && id.frozen);
        assert!(!SynergyModel::linear(2, 4, &mut rng(0)).unwrap().is_identity());
        assert!(SynergyModel::linear(5, 4, &mut rng(0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linear_actions_stay_in_rowspace(seed in 0u64..10_000, n in 0usize..3, s in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let model = SynergyModel::linear(3, 10, &mut rng(seed)).unwrap();
            let policy = TaskPolicy::new(6, 3, 3, &NetConfig::default(), false, &mut rng(seed + 1)).unwrap();
            let out = act(&policy, &model, &s, n, Mode::Deterministic, &mut rng(0)).unwrap();
            let basis = model.rowspace().unwrap();
            prop_assert!(linalg::projection_residual(&basis, &out.a) < 1e-10);
        }

        #[test]
        fn act_logprob_is_consistent(seed in 0u64..10_000, n in 0usize..2, s in proptest::collection::vec(-2.0f64..2.0, 5)) {
            let model = SynergyModel::linear(2, 6, &mut rng(seed)).unwrap();
            let policy = TaskPolicy::new(5, 2, 2, &NetConfig::default(), false, &mut rng(seed ^ 1)).unwrap();
            let out = act(&policy, &model, &s, n, Mode::Stochastic, &mut rng(seed)).unwrap();
            let obs = Array2::from_shape_vec((1, 5), s.clone()).unwrap();
            let (mean, ls) = policy.head_outputs(&obs, n).unwrap();
            let dist = DiagGaussian::from_log_std(mean.row(0).to_vec(), ls.row(0).as_slice().unwrap()).unwrap();
            prop_assert!((gaussian_logprob(&dist, &out.z).unwrap() - out.log_prob).abs() < 1e-12);
            prop_assert!((out.action_entropy - model.entropy()).abs() < 1e-12);
        }

        #[test]
        fn decoder_std_stays_clamped(updates in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let mut model = SynergyModel::linear(2, 4, &mut rng(0)).unwrap();
            for u in updates {
                for v in model.params.get_mut(DECODER_LOG_STD).unwrap().data_mut() {
                    *v += u;
                }
                model.clamp_std();
                for l in model.log_std() {
                    prop_assert!(l.exp() >= STD_MIN * (1.0 - 1e-12) && l.exp() <= STD_MAX * (1.0 + 1e-12));
                }
            }
        }
    }
}
