import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import PHASES  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed ids and no timestamp, so reruns write identical SVG files.
matplotlib.rcParams['svg.hashsalt'] = 'visualwords'
SVG_METADATA = {'Date': None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logger.info("Wrote chart %s", path)
    return path


def write_accuracy_chart(results, path, title='Average recognition rate'):
    """Bar per (name, accuracy percent) pair."""
    names = [name for name, _ in results]
    values = [0.0 if value is None else value for _, value in results]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 4))
    bars = ax.bar(np.arange(len(names)), values, color='#4c72b0')
    for bar, value in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, value, '%.1f' % value,
                ha='center', va='bottom', fontsize=8)
    ax.set(xticks=np.arange(len(names)), ylim=(0, 105), ylabel='%',
           title=title)
    ax.set_xticklabels(names, rotation=30, ha='right')
    return _save(fig, path)


def write_timing_chart(rows, path, title='Training time per phase'):
    """Stacked phase seconds per benchmark row."""
    names = [row.name for row in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 4))
    bottom = np.zeros(len(rows))
    positions = np.arange(len(rows))
    for phase in PHASES:
        values = np.array([row.phases.get(phase, 0.0) for row in rows])
        ax.bar(positions, values, bottom=bottom, label=phase)
        bottom += values
    ax.set(xticks=positions, ylabel='seconds', title=title)
    ax.set_xticklabels(names, rotation=30, ha='right')
    ax.legend(fontsize=8)
    return _save(fig, path)


def write_confusion_chart(report, path):
    confusion = report.confusion
    labels = report.labels
    fig, ax = plt.subplots()
    image = ax.imshow(confusion, interpolation='nearest', cmap='Blues')
    fig.colorbar(image, ax=ax)
    ax.set(xticks=np.arange(len(labels)), yticks=np.arange(len(labels)),
           xticklabels=labels, yticklabels=labels, ylabel='True',
           xlabel='Predicted', title='Confusion matrix')
    plt.setp(ax.get_xticklabels(), rotation=45, ha='right',
             rotation_mode='anchor')
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, format(confusion[i, j], 'd'), ha='center',
                    va='center')
    return _save(fig, path)
