from __future__ import absolute_import, division, print_function

import json
import os
from collections import OrderedDict

import h5py
import numpy as np

from core import ShapeMismatchError


def _variables(model):
    if hasattr(model, 'weights'):
        return list(model.weights)
    return list(model)


def _variable_name(variable):
    name = getattr(variable, 'path', None) or variable.name
    return name.replace('/', '|')


def save_checkpoint(save_path, models, config=None):
    """Writes `{group name: model or variable list}` to one HDF5 file.

    Each group holds datasets named `<index>:<variable name>` in variable
    order; the root attribute `config` holds the run config as JSON.
    """
    dir_name = os.path.dirname(save_path)
    if dir_name:
        os.makedirs(dir_name, exist_ok=True)
    tmp_path = save_path + '.tmp'
    with h5py.File(tmp_path, mode='w') as f:
        if config is not None:
            config_dict = config if isinstance(config, dict) else config.to_dict()
            f.attrs['config'] = json.dumps(config_dict, sort_keys=True)
        for group_name, model in models.items():
            group = f.create_group(group_name)
            for index, variable in enumerate(_variables(model)):
                value = np.asarray(variable.numpy() if hasattr(variable, 'numpy') else variable)
                group.create_dataset('%04d:%s' % (index, _variable_name(variable)), data=value)
    os.replace(tmp_path, save_path)
    return save_path


def read_checkpoint(save_path):
    """Returns (OrderedDict group -> [(name, array)], config dict or None)."""
    groups = OrderedDict()
    with h5py.File(save_path, mode='r') as f:
        config = json.loads(f.attrs['config']) if 'config' in f.attrs else None
        for group_name in f.keys():
            names = sorted(f[group_name].keys())
            groups[group_name] = [(n.split(':', 1)[1], np.array(f[group_name][n])) for n in names]
    return groups, config


def restore_checkpoint(save_path, models):
    """Assigns stored values to the variables of each named model, in order."""
    groups, config = read_checkpoint(save_path)
    for group_name, model in models.items():
        if group_name not in groups:
            raise ShapeMismatchError('checkpoint %s has no group %r' % (save_path, group_name))
        variables = _variables(model)
        stored = groups[group_name]
        if len(stored) != len(variables):
            raise ShapeMismatchError('group %r holds %d tensors, model has %d variables' % (
                group_name, len(stored), len(variables)))
        for variable, (name, value) in zip(variables, stored):
            if tuple(variable.shape) != value.shape:
                raise ShapeMismatchError('%s: stored shape %s != variable shape %s' % (
                    name, value.shape, tuple(variable.shape)))
            variable.assign(value)
    return config
