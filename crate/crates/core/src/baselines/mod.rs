//! Sequential synergy baselines: independent full-dimensional agents, action
//! datasets, PCA and autoencoder extraction, and low-dimensional retraining
//! on the frozen extracted decoder.

mod ae;
mod dataset;
mod pca;
mod sequential;

pub use ae::{ae_fit, AeConfig, AeModel, AE_DECODER, AE_DIVERGENCE_FACTOR, AE_ENCODER};
pub use dataset::{collect_dataset, ActionDataset, Provenance};
pub use pca::{
    explained_variance, latent_explained_variance, pca_explained_variance, pca_fit, ExplainedVariance, PcaModel,
    PCA_COMPONENTS, PCA_EIGENVALUES, PCA_MEAN,
};
pub use sequential::{
    meets_threshold, retrain_lowdim, train_independent, IndependentResult, RetrainResult, SUCCESS_FRACTION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Activation;
    use crate::linalg::orthonormality_error;
    use crate::synergy::{ActionDecoder, NetConfig, SynergyModel, TaskPolicy};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(rows: Array2<f64>) -> ActionDataset {
        let prov = (0..rows.nrows()).map(|i| Provenance { task: 0, episode: i / 10, step: i % 10 }).collect();
        ActionDataset::new(rows, prov).unwrap()
    }

    fn gaussian_rows(n: usize, scales: &[f64], seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, scales.len()), |(_, j)| scales[j] * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn pca_one_dimensional_data() {
        let rows = Array2::from_shape_fn((200, 2), |(i, j)| if j == 0 { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 });
        let m = pca_fit(&dataset(rows), 1).unwrap();
        assert_abs_diff_eq!(m.components[[0, 0]].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.components[[0, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.explained_ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pca_isotropic_and_full_basis() {
        let data = dataset(gaussian_rows(10_000, &[1.0, 1.0], 5));
        let m = pca_fit(&data, 1).unwrap();
        assert!((m.explained_ratio - 0.5).abs() < 0.05, "{}", m.explained_ratio);
        let ev = pca_explained_variance(&m, &data).unwrap();
        assert!((ev.ratio - 0.5).abs() < 0.05);
        let full = pca_fit(&data, 2).unwrap();
        assert_abs_diff_eq!(full.explained_ratio, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pca_explained_variance(&full, &data).unwrap().ratio, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pca_rejects_short_data_and_flags_rank() {
        assert!(pca_fit(&dataset(gaussian_rows(3, &[1.0; 4], 0)), 2).is_err());
        let rows = Array2::from_shape_fn((50, 3), |(i, j)| if j == 0 { i as f64 } else { 0.0 });
        let m = pca_fit(&dataset(rows), 2).unwrap();
        assert!(m.rank_deficient);
    }

    #[test]
    fn explained_variance_zero_variance_is_flagged() {
        let a = Array2::from_elem((10, 2), 3.0);
        let ev = explained_variance(&a, &a).unwrap();
        assert!(ev.ratio.is_nan() && ev.zero_variance);
    }

    #[test]
    fn linear_decoder_pairs_explain_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = SynergyModel::linear(3, 8, &mut rng).unwrap();
        let z = gaussian_rows(400, &[1.0, 2.0, 0.5], 9);
        let a = model.decode_mean_batch(&z).unwrap();
        let ev = latent_explained_variance(&z, &a).unwrap();
        assert_abs_diff_eq!(ev.ratio, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pca_checkpoint_round_trip() {
        let m = pca_fit(&dataset(gaussian_rows(100, &[3.0, 1.0, 0.2], 4)), 2).unwrap();
        let back = PcaModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(m, back);
        let z = array![[1.0, -2.0]];
        assert_eq!(m.decode_mean_batch(&z).unwrap(), back.decode_mean_batch(&z).unwrap());
    }

    #[test]
    fn ae_recovers_linear_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis = gaussian_rows(2, &[1.0; 6], 3);
        let z = Array2::from_shape_fn((600, 2), |_| rng.random_range(-1.0..1.0));
        let data = dataset(z.dot(&basis) * 0.3);
        let cfg = AeConfig { epochs: 300, hidden: vec![16], minibatch: 64, lr: 3e-3, ..AeConfig::default() };
        let m = ae_fit(&data, 2, &cfg).unwrap();
        assert!(m.heldout_mse.unwrap() < 1e-2, "{:?}", m.heldout_mse);
        let back = AeModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.params, m.params);
    }

    #[test]
    fn linear_ae_matches_pca_residual() {
        let data = dataset(gaussian_rows(500, &[2.0, 1.0, 0.3], 12));
        let pca = pca_fit(&data, 2).unwrap();
        let pca_mse = (&data.rows - &pca.reconstruct(&data.rows)).mapv(|v| v * v).mean().unwrap();
        let cfg = AeConfig { epochs: 400, hidden: vec![], activation: Activation::Identity, minibatch: 50, lr: 1e-2, heldout_fraction: 0.0, ..AeConfig::default() };
        let ae = ae_fit(&data, 2, &cfg).unwrap();
        assert!(ae.recon_mse <= 2.0 * pca_mse, "ae {} pca {}", ae.recon_mse, pca_mse);
    }

    #[test]
    fn ae_fits_constant_data() {
        let data = dataset(Array2::from_elem((100, 3), 0.4));
        let cfg = AeConfig { epochs: 300, hidden: vec![8], minibatch: 50, lr: 1e-2, ..AeConfig::default() };
        let m = ae_fit(&data, 1, &cfg).unwrap();
        assert!(m.recon_mse < 1e-4, "{}", m.recon_mse);
        assert!(ae_fit(&dataset(Array2::zeros((10, 3))), 1, &cfg).is_err());
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let tasks = crate::envs::make_task_set(crate::envs::TaskSetId::A, 20, 0).unwrap().tasks;
        let net = NetConfig::new(vec![8], Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policies: Vec<TaskPolicy> = (0..4).map(|_| TaskPolicy::new(tasks[0].obs_dim(), 20, 1, &net, false, &mut rng).unwrap()).collect();
        let identity = SynergyModel::identity(20);
        let pol: Vec<&TaskPolicy> = policies.iter().collect();
        let dec: Vec<&dyn ActionDecoder> = vec![&identity; 4];
        let a = collect_dataset(&pol, &dec, &tasks, 10, false, 3).unwrap();
        assert_eq!(a.len(), 4000);
        for t in 0..4 {
            assert_eq!(a.provenance.iter().filter(|p| p.task == t).count(), 1000);
        }
        assert_eq!(a, collect_dataset(&pol, &dec, &tasks, 10, false, 3).unwrap());
        assert!(collect_dataset(&pol[..3], &dec, &tasks, 10, false, 3).is_err());
    }

    #[test]
    fn threshold_rule() {
        assert!(meets_threshold(45.0, 50.0));
        assert!(!meets_threshold(44.9, 50.0));
        assert!(meets_threshold(-10.5, -10.0));
        assert!(!meets_threshold(-11.5, -10.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn pca_is_optimal_among_rank_b_projections(seed in 0u64..1000, b in 1usize..4) {
            let data = dataset(gaussian_rows(120, &[3.0, 2.0, 1.0, 0.5, 0.2], seed));
            let m = pca_fit(&data, b).unwrap();
            prop_assert!(orthonormality_error(&m.components) < 1e-10);
            prop_assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]) && m.eigenvalues.iter().all(|&e| e >= 0.0));
            let pca_err = (&data.rows - &m.reconstruct(&data.rows)).mapv(|v| v * v).sum();
            let ev = pca_explained_variance(&m, &data).unwrap();
            prop_assert!((ev.ratio - m.explained_ratio).abs() < 1e-8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
            for _ in 0..100 {
                let raw = Array2::from_shape_fn((b, 5), |_| rng.sample::<f64, _>(StandardNormal));
                let basis = crate::linalg::row_space_basis(&raw, 1e-12);
                let centred = &data.rows - &ndarray::Array1::from(data.mean.clone()).insert_axis(ndarray::Axis(0));
                let recon = centred.dot(&basis.t()).dot(&basis);
                let err = (&centred - &recon).mapv(|v| v * v).sum();
                prop_assert!(pca_err <= err + 1e-9);
            }
        }
    }
}
