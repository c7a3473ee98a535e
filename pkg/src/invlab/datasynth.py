"""Synthetic 14-channel trials with a texture signal and a movement nuisance.

The generator is a stand-in for recorded EEG. Each trial is the sum of a
texture-specific evoked deflection, a movement-specific motor-band
oscillation scaled by the leakage factor, and 1/f^alpha noise normalized to
unit RMS per channel. The acquisition helpers emulate a 1200 Hz stream that
is cut at force onsets and decimated to 300 Hz.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

CHANNELS = ("F3", "F4", "FC3", "FC4", "C1", "C3", "C5", "CZ", "C2", "C4", "C6",
            "CP1", "CPZ", "CP2")
TEXTURE_CHANNELS = ("CP1", "CPZ", "CP2", "C1", "C2")
MOTOR_CHANNELS = ("C3", "C4", "FC3", "FC4", "C5", "C6")
_LEFT_MOTOR = ("C3", "FC3", "C5")
_RIGHT_MOTOR = ("C4", "FC4", "C6")
N_TEXTURES = 3
N_MOVEMENTS = 2


@dataclass(frozen=True)
class GeneratorConfig:
    n_channels: int = 14
    fs_raw: float = 1200.0
    fs_out: float = 300.0
    trial_samples: int = 100
    snr_texture: float = 0.8
    leak_movement: float = 0.8
    noise_spectral_exponent: float = 1.0
    jitter: int = 3
    texture_latencies: tuple = (0.040, 0.050, 0.060)  # s
    texture_freqs: tuple = (10.0, 11.0, 12.0)  # Hz
    texture_decay: float = 0.08  # s
    texture_base_weight: float = 0.4
    movement_freq: float = 8.0  # Hz, low mu band
    movement_depths: tuple = (0.0, 0.0)  # per-class envelope modulation depth
    motor_base_weight: float = 0.5
    movement_laterality: tuple = (0.5, -0.5)  # per-class left-minus-right motor weighting
    seed: int = 0

    def validate(self):
        if self.n_channels != len(CHANNELS):
            raise ValueError(f"n_channels must be {len(CHANNELS)}")
        if self.fs_raw != 4 * self.fs_out:
            raise ValueError("fs_raw must be exactly 4 * fs_out")
        if self.trial_samples < 1:
            raise ValueError("trial_samples must be >= 1")
        if self.snr_texture < 0 or self.leak_movement < 0:
            raise ValueError("snr_texture and leak_movement must be >= 0")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if len(self.texture_latencies) != N_TEXTURES or len(self.texture_freqs) != N_TEXTURES:
            raise ValueError(f"texture_latencies/texture_freqs need {N_TEXTURES} entries")
        if len(self.movement_depths) != N_MOVEMENTS:
            raise ValueError(f"movement_depths needs {N_MOVEMENTS} entries")
        if len(self.movement_laterality) != N_MOVEMENTS:
            raise ValueError(f"movement_laterality needs {N_MOVEMENTS} entries")
        if any(abs(a) > 1 for a in self.movement_laterality):
            raise ValueError("movement_laterality entries must lie in [-1, 1]")

    @property
    def raw_trial_samples(self):
        return int(self.trial_samples * self.fs_raw / self.fs_out)

    def to_json(self):
        d = asdict(self)
        for k in _TUPLE_FIELDS:
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        for k in _TUPLE_FIELDS:
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


_TUPLE_FIELDS = ("texture_latencies", "texture_freqs", "movement_depths", "movement_laterality")


@dataclass
class TrialSet:
    X: np.ndarray            # (n, 14, 100) float32
    l_s: np.ndarray          # texture label in {0, 1, 2}
    l_m: np.ndarray          # movement label in {0, 1}
    channel_names: tuple = CHANNELS
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.l_s)

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return TrialSet(self.X[idx], self.l_s[idx], self.l_m[idx],
                        self.channel_names, dict(self.meta))

    @property
    def condition(self):
        """Six-way condition code ``l_s * 2 + l_m``."""
        return self.l_s * N_MOVEMENTS + self.l_m


def _unit_rms(a):
    return a / np.sqrt(np.mean(a ** 2))


def _channel_weights(names, focus, base, rng, spread=0.1):
    w = np.full(len(CHANNELS), base)
    for n in names:
        w[CHANNELS.index(n)] = focus
    return w * (1 + spread * rng.standard_normal(len(CHANNELS)))


def _texture_waveform(t, latency, freq, tau):
    s = t - latency
    return np.where(s > 0, np.exp(-s / tau) * np.sin(2 * np.pi * freq * s), 0.0)


def generate_templates(config, rng):
    """Unit-RMS (14, T) templates: three texture ERPs and two lateralized movement rhythms."""
    config.validate()
    t = np.arange(config.trial_samples) / config.fs_out
    duration = config.trial_samples / config.fs_out
    for _ in range(100):
        textures = []
        # class-distinct onset latency (s), dominant frequency (Hz), spatial profile
        for latency, freq in zip(config.texture_latencies, config.texture_freqs):
            w = _channel_weights(TEXTURE_CHANNELS, 1.0, config.texture_base_weight, rng,
                                 spread=0.3)
            wave = _texture_waveform(t, latency, freq, config.texture_decay)
            textures.append(_unit_rms(np.outer(w, wave)))
        textures = np.stack(textures)
        flat = textures.reshape(N_TEXTURES, -1)
        cos = flat @ flat.T / np.outer(np.linalg.norm(flat, axis=1), np.linalg.norm(flat, axis=1))
        if np.all(cos[np.triu_indices(N_TEXTURES, 1)] < 0.9):
            break
    else:
        raise RuntimeError("could not draw distinguishable texture templates")

    w_motor = _channel_weights(MOTOR_CHANNELS, 1.0, config.motor_base_weight, rng)
    carrier = np.sin(2 * np.pi * config.movement_freq * t)
    left = np.isin(CHANNELS, _LEFT_MOTOR)
    right = np.isin(CHANNELS, _RIGHT_MOTOR)
    movements = []
    for depth, lat in zip(config.movement_depths, config.movement_laterality):
        envelope = 1 - depth * np.cos(2 * np.pi * t / duration)
        w = w_motor * np.where(left, 1 + lat, np.where(right, 1 - lat, 1.0))
        movements.append(_unit_rms(np.outer(w, envelope * carrier)))
    return {"texture": textures, "movement": np.stack(movements)}


def pink_noise(shape, alpha, rng):
    """Noise with power spectrum ~ 1/f^alpha along the last axis, unit RMS per row."""
    n = shape[-1]
    white = rng.standard_normal(shape)
    spec = np.fft.rfft(white, axis=-1)
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-alpha / 2)
    x = np.fft.irfft(spec * scale, n=n, axis=-1)
    return x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))


def generate_trial(l_s, l_m, config, templates, rng, noise=True):
    if not (0 <= l_s < N_TEXTURES and 0 <= l_m < N_MOVEMENTS):
        raise ValueError(f"labels out of range: l_s={l_s}, l_m={l_m}")
    tex = templates["texture"][l_s]
    if config.jitter:
        tex = shift_template(tex, int(rng.integers(-config.jitter, config.jitter + 1)))
    X = config.snr_texture * tex + config.leak_movement * templates["movement"][l_m]
    if noise:
        X = X + pink_noise(tex.shape, config.noise_spectral_exponent, rng)
    return X


def dataset_templates(config):
    """The templates ``generate_dataset`` uses for ``config.seed``."""
    template_seq = np.random.SeedSequence(config.seed).spawn(2)[0]
    return generate_templates(config, np.random.default_rng(template_seq))


def generate_dataset(n_per_condition, config=None):
    """Balanced six-condition TrialSet, deterministic in ``config.seed``."""
    config = config or GeneratorConfig()
    config.validate()
    if n_per_condition < 1:
        raise ValueError("n_per_condition must be >= 1")
    templates = dataset_templates(config)
    trial_seq = np.random.SeedSequence(config.seed).spawn(2)[1]
    ls = np.repeat(np.arange(N_TEXTURES), N_MOVEMENTS * n_per_condition)
    lm = np.tile(np.repeat(np.arange(N_MOVEMENTS), n_per_condition), N_TEXTURES)
    order = np.random.default_rng(trial_seq).permutation(len(ls))
    ls, lm = ls[order], lm[order]
    # one counter-derived stream per trial
    streams = np.random.SeedSequence([config.seed, 1]).spawn(len(ls))
    X = np.stack([generate_trial(s, m, config, templates, np.random.default_rng(q))
                  for s, m, q in zip(ls, lm, streams)]).astype(np.float32)
    meta = {"generator": config.to_json(), "seed": config.seed}
    return TrialSet(X, ls.astype(np.int64), lm.astype(np.int64), CHANNELS, meta)


def _whiten(x, alpha):
    # undo the 1/f^alpha shaping along time; DC carries no noise and is dropped
    n = x.shape[-1]
    f = np.fft.rfftfreq(n)
    gain = np.zeros_like(f)
    gain[1:] = f[1:] ** (alpha / 2)
    return np.fft.irfft(np.fft.rfft(x, axis=-1) * gain, n=n, axis=-1)


def shift_template(tex, shift):
    """Delay (positive) or advance a template along time with zero fill."""
    out = np.roll(tex, shift, axis=-1)
    if shift > 0:
        out[..., :shift] = 0
    elif shift < 0:
        out[..., shift:] = 0
    return out


def matched_filter_predict(X, templates, config, whiten=True):
    """Brute-force matched filter over the six conditions and every latency jitter.

    Each candidate is ``snr * shifted texture + leak * movement``; data and
    candidates are optionally prewhitened by the known noise spectrum and
    scored by ``<x, c> - |c|^2 / 2``. The best-scoring candidate gives both
    labels.
    """
    combos, labels = [], []
    for s in range(N_TEXTURES):
        for shift in range(-config.jitter, config.jitter + 1):
            tex = shift_template(templates["texture"][s], shift)
            for m in range(N_MOVEMENTS):
                combos.append(config.snr_texture * tex
                              + config.leak_movement * templates["movement"][m])
                labels.append((s, m))
    C, W = np.stack(combos), np.asarray(X, dtype=float)
    if whiten:
        C = _whiten(C, config.noise_spectral_exponent)
        W = _whiten(W, config.noise_spectral_exponent)
    C, W = C.reshape(len(C), -1), W.reshape(len(W), -1)
    score = W @ C.T - 0.5 * np.sum(C ** 2, axis=1)
    best = np.argmax(score, axis=1)
    labels = np.array(labels)
    return labels[best, 0], labels[best, 1]


# ---------------------------------------------------------------------------
# acquisition emulation


def detect_onsets(force, threshold, refractory_samples):
    """Upward threshold crossings, ignoring re-triggers inside the refractory window."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if refractory_samples < 1:
        raise ValueError("refractory_samples must be >= 1")
    force = np.asarray(force, dtype=float)
    above = force >= threshold
    prev = np.concatenate(([False], above[:-1]))
    onsets, last = [], None
    for i in np.flatnonzero(above & ~prev):
        if last is None or i - last >= refractory_samples:
            onsets.append(int(i))
            last = i
    return onsets


_AA_KERNEL = np.array([1, 2, 3, 4, 3, 2, 1], dtype=float) / 16  # 4-tap boxcar, forward + backward


def downsample4(stream):
    """Zero-phase boxcar low-pass then keep every 4th sample (1200 Hz -> 300 Hz)."""
    stream = np.asarray(stream, dtype=float)
    n = stream.shape[-1]
    if n % 4:
        raise ValueError(f"stream length {n} is not divisible by 4")
    half = len(_AA_KERNEL) // 2
    pad = [(0, 0)] * (stream.ndim - 1) + [(half, half)]
    padded = np.pad(stream, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(_AA_KERNEL), axis=-1)
    smooth = win @ _AA_KERNEL
    return smooth[..., ::4]


def segment(stream, onsets, trial_samples=100):
    """Cut ``[onset, onset + trial_samples)`` windows; returns ``(trials, n_discarded)``."""
    n = stream.shape[-1]
    trials, discarded = [], 0
    for o in onsets:
        if o + trial_samples <= n and o >= 0:
            trials.append(stream[..., o:o + trial_samples].copy())
        else:
            discarded += 1
    return trials, discarded


def simulate_session(labels, config=None, gap_samples=600, force_level=5.0, rng=None):
    """Continuous 1200 Hz EEG and force streams with one touch per trial.

    ``labels`` is a sequence of ``(l_s, l_m)``. Trial content is generated at
    300 Hz, upsampled by sample repetition, and placed after each onset.
    Returns ``(eeg (14, L), force (L,), onsets)``.
    """
    config = config or GeneratorConfig()
    rng = rng or np.random.default_rng(config.seed)
    templates = generate_templates(config, rng)
    raw = config.raw_trial_samples
    stride = raw + gap_samples
    length = len(labels) * stride + gap_samples
    eeg = 0.1 * pink_noise((config.n_channels, length), config.noise_spectral_exponent, rng)
    force = np.zeros(length)
    onsets = []
    for i, (s, m) in enumerate(labels):
        o = gap_samples + i * stride
        trial = generate_trial(s, m, config, templates, rng)
        eeg[:, o:o + raw] += np.repeat(trial, 4, axis=-1)
        force[o:o + raw // 2] = force_level
        onsets.append(o)
    return eeg, force, onsets


def extract_trials(eeg, force, threshold=1.0, refractory_samples=400, trial_samples=100):
    """Force-onset segmentation of a 1200 Hz session into 300 Hz trials."""
    onsets = detect_onsets(force, threshold, refractory_samples)
    n = eeg.shape[-1] - eeg.shape[-1] % 4
    low = downsample4(eeg[..., :n])
    return segment(low, [o // 4 for o in onsets], trial_samples)


def with_leak(config, leak):
    return replace(config, leak_movement=leak)
