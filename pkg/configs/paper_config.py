{
    # Full-scale published hyperparameters; these runs are not
    # expected to fit on a desk machine.
    'run_dir': 'runs/paper',
    'image_shape': [224, 224, 3],
    'max_text_len': 512,
    'embed_dim': 512,

    'pretrain_batch_size': 512,
    'pretrain_epochs': 20,
    'pretrain_lr': 5e-5,
    'pretrain_warmup_steps': 2000,

    'distill_batch_size': 384,
    'distill_epochs': 20,
    'distill_lr': 5e-5,
    'distill_warmup_steps': 2000,
    'kd_weights': [0.1, 50.0, 1.0],

    'probe_lr': 5e-5,
    'probe_epochs': 20,
    'probe_batch_size': 128,

    'survival_epochs': 50,
    'survival_lr': 1e-4,
}
