import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acusar.errors import ChannelMismatch, WindowNotBuffered, WindowTooLong
from acusar.ringbuffer import RingBuffer
from acusar.scene import MultiChannelClip

FS = 1000.0  # small rate keeps hypothesis cases cheap


def clip_of(samples_2d):
    return MultiChannelClip(samples=np.asarray(samples_2d, dtype=float), fs=FS)


def sequential_clip(n_channels, start, length):
    base = np.arange(start, start + length, dtype=float)
    return clip_of(np.stack([base + 1000 * ch for ch in range(n_channels)]))


def test_stored_span_grows_then_clamps():
    buf = RingBuffer(2, FS, capacity_seconds=12.0)
    buf.push(sequential_clip(2, 0, int(1 * FS)))
    assert buf.stored_seconds == pytest.approx(1.0)
    for i in range(1, 20):
        buf.push(sequential_clip(2, i * int(FS), int(FS)))
    assert buf.stored_seconds == pytest.approx(12.0)
    assert buf.write_clock == pytest.approx(20.0)


def test_channel_mismatch():
    buf = RingBuffer(7, FS, 12.0)
    with pytest.raises(ChannelMismatch):
        buf.push(sequential_clip(6, 0, 100))
    with pytest.raises(ChannelMismatch):
        buf.push(MultiChannelClip(samples=np.zeros((7, 10)), fs=FS * 2))


def test_extract_without_wraparound():
    buf = RingBuffer(1, FS, 12.0)
    stream = np.arange(12 * int(FS), dtype=float)
    buf.push(clip_of(stream[None, :]))
    window = buf.extract(t_trig=11.5, tau_retro=0.5, tau_post=0.5)
    np.testing.assert_array_equal(window.samples[0], stream[int(11.0 * FS):])
    assert window.start_time == pytest.approx(11.0)


def test_extract_after_wraparound_matches_unwrapped_stream():
    buf = RingBuffer(3, FS, 12.0)
    stream = None
    for i in range(20):
        clip = sequential_clip(3, i * int(FS), int(FS))
        buf.push(clip)
        stream = clip.samples if stream is None else np.hstack([stream, clip.samples])
    tail = buf.extract(t_trig=19.5, tau_retro=0.5, tau_post=0.5)
    np.testing.assert_array_equal(tail.samples, stream[:, int(19.0 * FS):])


def test_window_too_long():
    buf = RingBuffer(1, FS, 12.0)
    buf.push(sequential_clip(1, 0, 12 * int(FS)))
    with pytest.raises(WindowTooLong):
        buf.extract(t_trig=12.0, tau_retro=12.5, tau_post=0.5)


def test_window_not_buffered():
    buf = RingBuffer(1, FS, 12.0)
    buf.push(sequential_clip(1, 0, 15 * int(FS)))
    with pytest.raises(WindowNotBuffered):  # evicted
        buf.extract(t_trig=3.0, tau_retro=0.5, tau_post=0.5)
    with pytest.raises(WindowNotBuffered):  # in the future
        buf.extract(t_trig=15.0, tau_retro=0.0, tau_post=0.5)


def test_extract_is_repeatable_and_copies():
    buf = RingBuffer(1, FS, 5.0)
    buf.push(sequential_clip(1, 0, 4 * int(FS)))
    first = buf.extract(2.0, 1.0, 1.0)
    first.samples[0, 0] = -999.0
    second = buf.extract(2.0, 1.0, 1.0)
    assert second.samples[0, 0] != -999.0
    third = buf.extract(2.0, 1.0, 1.0)
    np.testing.assert_array_equal(second.samples, third.samples)


@settings(max_examples=40, deadline=None)
@given(
    pushes=st.lists(st.integers(min_value=1, max_value=700), min_size=1, max_size=12),
    retro=st.integers(min_value=0, max_value=400),
    post=st.integers(min_value=1, max_value=400),
)
def test_wraparound_oracle(pushes, retro, post):
    """Any valid window equals the same slice of the concatenated stream."""
    capacity = 500
    buf = RingBuffer(2, FS, capacity / FS)
    chunks = []
    cursor = 0
    for n in pushes:
        clip = sequential_clip(2, cursor, n)
        chunks.append(clip.samples)
        buf.push(clip)
        cursor += n
    stream = np.hstack(chunks)
    total = stream.shape[1]
    window = retro + post
    t_trig = (total - post) / FS
    if window > capacity or window > total:
        return
    got = buf.extract(t_trig, retro / FS, post / FS)
    np.testing.assert_array_equal(got.samples, stream[:, total - window:])
