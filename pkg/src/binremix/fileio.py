"""Small file helpers shared by the writers."""

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    tmp.write_text(text, encoding='utf-8')
    tmp.replace(path)


def write_wav(path, samples, sample_rate):
    """Write a channels x T signal as 32-bit float WAVE."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    data = np.ascontiguousarray(np.atleast_2d(samples).T, dtype=np.float32)
    wavfile.write(tmp, int(round(sample_rate)), data)
    tmp.replace(path)
