"""Static plots written next to their CSV plot data."""
from __future__ import absolute_import, division, print_function

import csv
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GROUP_COLORS = {'high': '#e74c3c', 'low': '#3498db'}


def _ensure_dir(path):
    dir_name = os.path.dirname(path)
    if dir_name:
        os.makedirs(dir_name, exist_ok=True)


def write_csv(path, header, rows):
    _ensure_dir(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(['%.9g' % v if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def plot_loss_curves(curves, png_path):
    """curves: {name: per-epoch mean losses}."""
    _ensure_dir(png_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in curves.items():
        ax.plot(np.arange(1, len(values) + 1), values, label=name)
    ax.set_xlabel('epoch')
    ax.set_ylabel('loss')
    ax.set_yscale('log')
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    rows = []
    for name, values in curves.items():
        rows.extend((name, epoch + 1, float(v)) for epoch, v in enumerate(values))
    write_csv(os.path.splitext(png_path)[0] + '.csv', ['curve', 'epoch', 'loss'], rows)


def plot_km_groups(km_by_group, png_path, p_value=None):
    """km_by_group: {group name: KaplanMeier}; draws right-continuous steps."""
    _ensure_dir(png_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    rows = []
    for group, km in km_by_group.items():
        times = np.concatenate([[0.0], km.times])
        surv = np.concatenate([[1.0], km.survival])
        ax.step(times, surv, where='post', label='%s risk' % group,
                color=GROUP_COLORS.get(group))
        rows.extend((group, float(t), float(s)) for t, s in zip(times, surv))
    ax.set_xlabel('time')
    ax.set_ylabel('survival probability')
    ax.set_ylim(0.0, 1.05)
    if p_value is not None:
        ax.set_title('log-rank p = %.3g' % p_value)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    write_csv(os.path.splitext(png_path)[0] + '.csv', ['group', 'time', 'survival'], rows)


def plot_recall_at_k(recalls, png_path):
    """recalls: {direction: {k: recall}}."""
    _ensure_dir(png_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    directions = list(recalls.keys())
    width = 0.8 / max(len(directions), 1)
    rows = []
    for i, direction in enumerate(directions):
        ks = sorted(recalls[direction].keys())
        xs = np.arange(len(ks)) + i * width
        ax.bar(xs, [recalls[direction][k] for k in ks], width=width, label=direction)
        ax.set_xticks(np.arange(len(ks)) + 0.4 - width / 2)
        ax.set_xticklabels(['R@%d' % k for k in ks])
        rows.extend((direction, k, float(recalls[direction][k])) for k in ks)
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    write_csv(os.path.splitext(png_path)[0] + '.csv', ['direction', 'k', 'recall'], rows)


def plot_teacher_shares(shares, png_path):
    """shares: {teacher name: quadruplet count}."""
    _ensure_dir(png_path)
    fig, ax = plt.subplots(figsize=(5, 5))
    labels = list(shares.keys())
    counts = [shares[k] for k in labels]
    if sum(counts) > 0:
        ax.pie(counts, labels=labels, autopct='%1.1f%%')
    ax.set_title('quadruplets per teacher')
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
