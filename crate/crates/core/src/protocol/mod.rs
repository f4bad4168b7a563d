//! Split and federated-split training: server forward to the cut layer,
//! activation hand-off, client forward/backward, (optionally privatised)
//! cut-gradient return, server backward, optimizer steps.

mod config;
mod train;
mod views;

pub use config::{Retain, TrainConfig, TrainMode};
pub use train::{
    evaluate_auc, init_models, observe_gradients, predict, run_batch, train, train_fsl, train_monolithic, train_sl,
    BatchExchange, ClientParty, CutPrivatizer, EpochRecord, ServerParty, TrainedModels, TrainingLog,
};
pub use views::{ActivationMessage, ClientView, GradientMessage, ServerView};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{demo_schema, generate_synthetic, split_train_test, Dataset, SplitIndices};
    use crate::dp::{ClipMode, DpConfig, LabelDpConfig};
    use crate::nn::{Architecture, Parameterized};

    fn small() -> TrainConfig {
        TrainConfig {
            architecture: Architecture {
                embed_dim: 3,
                cut_width: 4,
                server_hidden: vec![8],
                client_hidden: vec![8, 4],
            },
            batch_size: 16,
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn data(n: usize, seed: u64) -> Dataset {
        generate_synthetic(&demo_schema(), n, 0.5, seed).unwrap()
    }

    fn same_models(a: &TrainedModels, b: &TrainedModels) -> bool {
        a.server.tensors() == b.server.tensors() && a.client.tensors() == b.client.tensors()
    }

    #[test]
    fn blocked_head_sends_zero_gradient() {
        let d = data(20, 1);
        let cfg = small();
        let sv = ServerView::from_dataset(&d);
        let cv = ClientView::from_dataset(&d, None, 0);
        let (s, mut c) = init_models(d.schema(), sv.fit_scalers(&[0, 1, 2]), &cfg.architecture, 1).unwrap();
        for l in c.head_mut().layers_mut() {
            l.weights.fill(0.0);
        }
        let mut server = ServerParty::new(s, 0.01);
        let mut client = ClientParty::new(c, 0.01, None);
        let ex = run_batch(&mut server, &mut client, &sv, &cv, &[5]).unwrap();
        assert_eq!(ex.gradients.len(), 1);
        assert_eq!(ex.gradients[0].sample_id, 5);
        assert!(ex.gradients[0].cut_gradient.as_slice().iter().all(|&v| v == 0.0));
        assert!(run_batch(&mut server, &mut client, &sv, &cv, &[]).is_err());
    }

    #[test]
    fn no_op_dp_equals_unmitigated() {
        let d = data(300, 2);
        let split = split_train_test(d.len(), 0.9, 2).unwrap();
        let plain = train(&d, &split, &small()).unwrap().0;
        let cfg = TrainConfig {
            dp: Some(DpConfig {
                noise_multiplier: 0.0,
                clip: ClipMode::Fixed(f64::INFINITY),
                delta: 1e-5,
            }),
            ..small()
        };
        let dp = train(&d, &split, &cfg).unwrap().0;
        assert!(same_models(&plain, &dp));
    }

    #[test]
    fn one_client_fsl_equals_sl_with_batch_16() {
        let d = data(20, 4);
        let split = SplitIndices {
            train: (0..16).collect(),
            test: (16..20).collect(),
        };
        let cfg = TrainConfig {
            retain: Retain::Last,
            epochs: 3,
            ..small()
        };
        let (sl, _) = train_sl(&d, &split, &cfg).unwrap();
        let (fsl, log) = train_fsl(&d, &split, &cfg).unwrap();
        assert_eq!(log.n_clients, Some(1));
        assert!(same_models(&sl, &fsl));
    }

    #[test]
    fn client_count_is_ceiling_of_train_over_16() {
        let d = data(10_050, 5);
        let split = SplitIndices {
            train: (0..10_000).collect(),
            test: (10_000..10_050).collect(),
        };
        let cfg = TrainConfig { epochs: 0, ..small() };
        assert_eq!(train_fsl(&d, &split, &cfg).unwrap().1.n_clients, Some(625));
        let split = SplitIndices {
            train: (0..10_001).collect(),
            test: (10_001..10_050).collect(),
        };
        assert_eq!(train_fsl(&d, &split, &cfg).unwrap().1.n_clients, Some(626));
    }

    #[test]
    fn split_training_is_bit_identical_to_monolithic() {
        let d = data(400, 6);
        let split = split_train_test(d.len(), 0.9, 6).unwrap();
        for mode in [TrainMode::Sl, TrainMode::Fsl] {
            let cfg = TrainConfig {
                mode,
                retain: Retain::Last,
                epochs: 3,
                ..small()
            };
            let (split_run, _) = train(&d, &split, &cfg).unwrap();
            let (s, c) = train_monolithic(&d, &split, &cfg).unwrap();
            assert_eq!(split_run.server.tensors(), s.tensors());
            assert_eq!(split_run.client.tensors(), c.tensors());
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let d = data(3000, 7);
        let split = split_train_test(d.len(), 0.9, 7).unwrap();
        let cfg = TrainConfig { epochs: 4, ..small() };
        let (a, log_a) = train(&d, &split, &cfg).unwrap();
        let (b, log_b) = train(&d, &split, &cfg).unwrap();
        assert!(same_models(&a, &b));
        assert_eq!(log_a.best_test_auc, log_b.best_test_auc);
        assert!(log_a.best_test_auc.unwrap() > 0.75, "{:?}", log_a.best_test_auc);
        assert_eq!(log_a.epochs.len(), 4);
        assert_eq!(log_a.steps, 4 * split.train.len().div_ceil(16));
    }

    #[test]
    fn zero_epochs_returns_initial_models() {
        let d = data(10_000, 8);
        let split = split_train_test(d.len(), 0.9, 8).unwrap();
        let cfg = TrainConfig { epochs: 0, ..small() };
        let (m, log) = train(&d, &split, &cfg).unwrap();
        let sv = ServerView::from_dataset(&d);
        let (s0, c0) = init_models(d.schema(), sv.fit_scalers(&split.train), &cfg.architecture, cfg.seed).unwrap();
        assert_eq!(m.server, s0);
        assert_eq!(m.client, c0);
        assert_eq!(log.best_epoch, 0);
        let a = log.best_test_auc.unwrap();
        assert!((a - 0.5).abs() < 0.1, "{a}");
    }

    #[test]
    fn label_dp_flips_once_per_row() {
        let d = data(20_000, 9);
        let cfg = LabelDpConfig { flip_probability: 0.1 };
        let a = ClientView::from_dataset(&d, Some(&cfg), 1);
        let b = ClientView::from_dataset(&d, Some(&cfg), 1);
        assert_eq!(a, b);
        let flipped = d.rows().iter().zip(a.labels()).filter(|(r, &y)| r.label != y).count();
        let rate = flipped as f64 / d.len() as f64;
        assert!((rate - 0.1).abs() < 0.01, "{rate}");
    }

    #[test]
    fn observed_gradients_match_client_computation() {
        let d = data(50, 10);
        let cfg = small();
        let sv = ServerView::from_dataset(&d);
        let cv = ClientView::from_dataset(&d, None, 0);
        let (s, c) = init_models(d.schema(), sv.fit_scalers(&[0, 1]), &cfg.architecture, 1).unwrap();
        let obs = observe_gradients(&s, &c, &sv, &cv, &[3, 7], None).unwrap();
        let a = s.forward(sv.row(7)).unwrap();
        assert_eq!(obs[1].1, a);
        assert_eq!(obs[1].2, c.cut_gradient(&a, cv.features(7), cv.label(7)).unwrap());
    }
}
