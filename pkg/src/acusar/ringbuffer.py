"""Fixed-capacity multi-channel circular audio store.

Supports retroactive extraction of a window around a trigger time: the
listening stage scores recent audio, and on a trigger the full-channel
window (including audio from before the trigger) is pulled back out,
sample-exact. Single writer, repeatable reads; extraction returns a copy.
"""

from __future__ import annotations

import numpy as np

from .errors import ChannelMismatch, WindowNotBuffered, WindowTooLong
from .scene import MultiChannelClip


class RingBuffer:
    """Circular store of the last `capacity_seconds` of M-channel audio."""

    def __init__(self, n_channels: int, fs: float, capacity_seconds: float):
        if capacity_seconds <= 0:
            raise ValueError("capacity must be positive")
        self.n_channels = n_channels
        self.fs = fs
        self.capacity = int(round(capacity_seconds * fs))
        self._store = np.zeros((n_channels, self.capacity))
        self._written = 0  # total samples ever pushed

    @property
    def write_clock(self) -> float:
        """Stream time of the most recent sample, in seconds."""
        return self._written / self.fs

    @property
    def stored_seconds(self) -> float:
        return min(self._written, self.capacity) / self.fs

    def push(self, frame: MultiChannelClip) -> None:
        """Append a frame; the oldest samples are overwritten once full.

        Raises:
            ChannelMismatch: channel count or sample rate differs.
        """
        if frame.n_channels != self.n_channels:
            raise ChannelMismatch(
                f"buffer has {self.n_channels} channels, frame has {frame.n_channels}")
        if frame.fs != self.fs:
            raise ChannelMismatch(f"buffer fs {self.fs}, frame fs {frame.fs}")
        data = frame.samples
        n = data.shape[1]
        # Stream sample at absolute position a lives at column a % capacity.
        if n >= self.capacity:
            tail = data[:, n - self.capacity:]
            pos = (self._written + n - self.capacity) % self.capacity
            first = self.capacity - pos
            self._store[:, pos:] = tail[:, :first]
            self._store[:, :pos] = tail[:, first:]
        else:
            head = self._written % self.capacity
            first = min(n, self.capacity - head)
            self._store[:, head:head + first] = data[:, :first]
            if first < n:
                self._store[:, :n - first] = data[:, first:]
        self._written += n

    def extract(self, t_trig: float, tau_retro: float, tau_post: float) -> MultiChannelClip:
        """Copy out the window [t_trig - tau_retro, t_trig + tau_post].

        Raises:
            WindowTooLong: window exceeds buffer capacity.
            WindowNotBuffered: part of the span was evicted or not yet written.
        """
        window = tau_retro + tau_post
        if int(round(window * self.fs)) > self.capacity:
            raise WindowTooLong(
                f"window {window} s exceeds capacity {self.capacity / self.fs} s")
        start = int(round((t_trig - tau_retro) * self.fs))
        end = int(round((t_trig + tau_post) * self.fs))
        oldest = max(0, self._written - self.capacity)
        if start < oldest or end > self._written:
            raise WindowNotBuffered(
                f"[{start / self.fs:.3f}, {end / self.fs:.3f}] s not within buffered "
                f"[{oldest / self.fs:.3f}, {self._written / self.fs:.3f}] s")
        idx = np.arange(start, end) % self.capacity
        return MultiChannelClip(samples=self._store[:, idx].copy(), fs=self.fs,
                                start_time=start / self.fs)
