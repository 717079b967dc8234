from __future__ import absolute_import, division, print_function

from collections import OrderedDict

import numpy as np
import tensorflow as tf

from utils.viz import write_csv


class TensorBoard(tf.keras.callbacks.Callback):
    """Scalar-only TensorBoard writer driven by a custom training loop.

    The loop calls `on_epoch_begin`, `on_batch_begin`, `on_batch_end` and
    `on_epoch_end` itself; every float in `logs` becomes a scalar summary at
    step `epoch * n_batches + batch`.
    """

    def __init__(self, log_dir='./logs', epoch=0, n_batches=0):
        super(TensorBoard, self).__init__()
        self.log_dir = log_dir
        self.epoch = epoch
        self.n_batches = n_batches
        self.batch = 0
        self.writer = tf.summary.create_file_writer(log_dir)

    def _current_step(self):
        return (self.epoch * self.n_batches) + self.batch

    def _save_logs(self, logs):
        logs = logs or {}
        with self.writer.as_default():
            for name, value in logs.items():
                if name in ['batch', 'size']:
                    continue
                tf.summary.scalar(name, float(value), step=self._current_step())
        self.writer.flush()

    def on_batch_begin(self, batch, logs=None):
        self.batch = batch

    def on_batch_end(self, batch, logs=None):
        self.batch = batch
        self._save_logs(logs)

    def on_epoch_begin(self, epoch, logs=None):
        self.epoch = epoch
        self.batch = 0

    def on_epoch_end(self, epoch, logs=None):
        self.epoch = epoch
        self.batch = self.n_batches - 1
        self._save_logs(logs)

    def on_train_end(self, logs=None):
        self.writer.close()


class LossHistory(tf.keras.callbacks.Callback):
    """Keeps every per-step log and the per-epoch means of the main loss."""

    def __init__(self, loss_key):
        super(LossHistory, self).__init__()
        self.loss_key = loss_key
        self.steps = []
        self.epoch_losses = []
        self._epoch_values = []

    def on_epoch_begin(self, epoch, logs=None):
        self._epoch_values = []

    def on_batch_end(self, batch, logs=None):
        logs = OrderedDict(logs or {})
        self.steps.append(logs)
        if self.loss_key in logs:
            self._epoch_values.append(logs[self.loss_key])

    def on_epoch_end(self, epoch, logs=None):
        if self._epoch_values:
            self.epoch_losses.append(float(np.mean(self._epoch_values)))

    def discard_epoch(self):
        """Drops the logs of an epoch that is about to be restarted."""
        del self.steps[len(self.steps) - len(self._epoch_values):]
        self._epoch_values = []

    def write_csv(self, path, keys):
        """One row per step: the step index, then `keys` with their scope prefix dropped."""
        header = ['step'] + [k.split('/')[-1] for k in keys]
        return write_csv(path, header, [[i] + [logs.get(k) for k in keys]
                                        for i, logs in enumerate(self.steps)])


class CallbackList(object):
    def __init__(self, callbacks):
        self.callbacks = [c for c in callbacks if c is not None]

    def __getattr__(self, hook):
        def dispatch(*args, **kwargs):
            for callback in self.callbacks:
                getattr(callback, hook)(*args, **kwargs)
        return dispatch
