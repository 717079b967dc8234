{
    # Laptop-CPU scale; everything else comes from base_config
    'run_dir': 'runs/desk',
    'pretrain_batch_size': 32,
    'distill_batch_size': 32,
}
