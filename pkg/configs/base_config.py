{
    ## Run Options
    # Global seed, overridden by the MMKD_SEED environment variable
    'seed': 7,
    # Directory where run-all writes corpus, checkpoints, shards and reports
    'run_dir': 'runs/desk',
    # TensorBoard log directory (None disables the summary writer)
    'log_dir': None,
    # Depth of the bounded background prefetch queue (0 disables prefetch)
    'prefetch_depth': 4,
    # Restart budget when a training step produces a non-finite loss
    'nan_restarts': 0,

    ## Corpus Options (synthetic planted-class world)
    'n_pairs': 512,
    'n_classes': 4,
    # Fraction of pairs held out as the evaluation split
    'test_fraction': 0.25,
    'latent_dim': 16,
    'image_shape': [16, 16, 3],
    # Quantization bins used to write each latent coordinate into the caption
    'n_bins': 24,
    'bin_range': 6.0,
    # Scale of the class prototypes and of the per-sample spread around them
    'class_scale': 2.0,
    'instance_spread': 1.0,
    'pixel_noise': 0.05,
    'max_text_len': 32,
    # Number of synthetic "modalities" tallied in the manifest
    'n_modalities': 4,

    ## Student Options
    'embed_dim': 512,
    'image_conv_filters': [16, 32],
    'image_hidden_dims': [256],
    'text_width': 128,
    'text_hidden_dims': [256],
    'tau_init': 0.07,
    'float_dtype': 'float32',

    ## Teacher Options
    # signal=0.0 gives a teacher that only emits seeded noise
    'teachers': [
        {'teacher_id': 0, 'seed': 101, 'native_dim': 512, 'signal': 1.0, 'noise': 0.05},
        {'teacher_id': 1, 'seed': 102, 'native_dim': 768, 'signal': 1.0, 'noise': 0.10},
        {'teacher_id': 2, 'seed': 103, 'native_dim': 512, 'signal': 1.0, 'noise': 0.15},
        {'teacher_id': 3, 'seed': 104, 'native_dim': 512, 'signal': 0.0, 'noise': 1.00},
    ],
    'trust_threshold': 0.9,
    'trust_tau': 0.07,
    'n_distractors': 4,
    'select_workers': 1,

    ## Alignment Options
    'joint_dim': 512,
    'align_latent_dim': 256,
    'align_epochs': 60,
    'align_lr': 1e-3,
    'align_batch_size': 64,
    # Weight of the cross-teacher reconstruction terms
    'align_cross_weight': 0.5,
    # Distillation target: 'projector' (encoder output) or 'autoencoded' (shared stream output)
    'distill_target': 'projector',

    ## Pretraining Options
    'pretrain_batch_size': 32,
    'pretrain_epochs': 50,
    'pretrain_lr': 1e-3,
    'pretrain_warmup_steps': 50,
    'weight_decay': 1e-4,
    # Post-warmup schedule: constant or cosine
    'lr_decay': 'constant',
    # Contrastive reduction: mean or sum
    'loss_reduction': 'mean',

    ## Distillation Options
    'distill_batch_size': 32,
    'distill_epochs': 40,
    'distill_lr': 5e-4,
    'distill_warmup_steps': 50,
    # alpha1 (CLIP), alpha2 (feature distillation), alpha3 (interactive contrastive)
    'kd_weights': [0.1, 50.0, 1.0],

    ## Evaluation Options
    'bootstrap_replicates': 1000,
    'ci_level': 0.95,
    'retrieval_ks': [1, 10, 50],
    'probe_fractions': [0.01, 0.1, 1.0],
    'probe_lr': 1e-2,
    'probe_epochs': 20,
    'probe_batch_size': 128,
    'probe_weight_decay': 0.0,

    ## Survival Options
    'survival_subjects': 200,
    'survival_intervals': 4,
    'survival_folds': 5,
    'survival_epochs': 50,
    'survival_lr': 1e-3,
    'survival_batch_size': 16,
    'survival_censor_rate': 0.2,
    # Strength of the independent risk term carried by the report (0 disables reports)
    'survival_report_signal': 1.0,
    'diagnosis_bags': 200,
    'bag_size_range': [8, 16],
    'mil_hidden_dim': 128,
    'mil_attention_dim': 64,
    # Gated attention variant of the MIL pooling
    'mil_gated': False,

    ## Acceptance Checks (run-all --check)
    'check_min_zeroshot_auc': 0.95,
    'check_min_auc_gain': 0.30,
    'check_kd_tolerance': 1e-5,
    # Seeds used by the ablation runner
    'ablation_seeds': [7, 8, 9],
}
