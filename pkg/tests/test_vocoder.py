import numpy as np
import pytest

from streamvc import vocoder as vc
from streamvc.errors import BuildError, ConfigError, ShapeError, StateError
from streamvc.vocoder import GlState, MgConfig, MgState, StftConfig

F32 = np.float32
CFG = StftConfig()


def sine(freq=440.0, seconds=1.0, cfg=CFG, amp=0.5):
    t = np.arange(int(cfg.sample_rate * seconds)) / cfg.sample_rate
    return (amp * np.sin(2 * np.pi * freq * t)).astype(F32)


def spec_snr_db(mags, wave, cfg=CFG):
    return -20.0 * np.log10(max(vc.spectral_convergence(mags, wave, cfg), 1e-10))


class TestStft:
    def test_config_defaults(self):
        assert (CFG.sample_rate, CFG.hop, CFG.win_length, CFG.n_fft) == (16000, 200, 800, 1024)
        assert CFG.out_dim == 513
        assert CFG.frame_ms == 12.5

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            StftConfig(hop=900, win_length=800)

    def test_frame_count(self):
        assert vc.frame_count(800, CFG) == 1
        assert vc.frame_count(999, CFG) == 1
        assert vc.frame_count(1000, CFG) == 2
        assert vc.frame_count(16000, CFG) == 77
        assert vc.frame_count(100, CFG) == 0

    def test_round_trip_interior_snr(self):
        wave = sine()
        mags, phases = vc.stft(wave, CFG)
        rec = vc.istft(mags, phases, CFG)
        # compare the interior where overlap-add has full window coverage
        lo, hi = CFG.win_length, rec.shape[0] - CFG.win_length
        err = rec[lo:hi] - wave[lo:hi]
        snr = 10 * np.log10(np.mean(wave[lo:hi] ** 2) / max(np.mean(err ** 2), 1e-20))
        assert snr >= 40.0

    def test_parseval_energy(self):
        wave = sine(seconds=0.2)
        w = vc.hann(CFG.win_length)
        mags, _ = vc.stft(wave, CFG)
        for t in range(mags.shape[0]):
            seg = wave[t * CFG.hop: t * CFG.hop + CFG.win_length] * w
            time_e = float(np.sum(seg ** 2))
            m = mags[t] ** 2
            freq_e = (2 * m.sum() - m[0] - m[-1]) / CFG.n_fft
            assert abs(time_e - freq_e) <= 1e-3 * max(time_e, 1.0)


class TestGlOffline:
    def test_sine_spectrogram_snr(self):
        mags, _ = vc.stft(sine(), CFG)
        wave = vc.gl_offline(mags, CFG, n_iters=60)
        assert spec_snr_db(mags, wave) >= 20.0

    def test_convergence_monotone_in_iterations(self):
        mags, _ = vc.stft(sine(seconds=0.5), CFG)
        errs = [vc.spectral_convergence(mags, vc.gl_offline(mags, CFG, n_iters=n), CFG)
                for n in (1, 5, 20, 60)]
        assert errs == sorted(errs, reverse=True)

    def test_empty_input(self):
        assert vc.gl_offline(np.zeros((0, 513), dtype=F32), CFG).shape == (0,)

    def test_negative_magnitudes_rejected(self):
        bad = -np.ones((3, 513), dtype=F32)
        with pytest.raises(ShapeError):
            vc.gl_offline(bad, CFG)

    def test_output_clipped_and_f32(self):
        mags, _ = vc.stft(sine(amp=0.9), CFG)
        wave = vc.gl_offline(mags * 4.0, CFG, n_iters=5)
        assert wave.dtype == F32
        assert np.abs(wave).max() <= 1.0


class TestGlStream:
    def test_delay_is_one_hop(self):
        state = GlState(CFG)
        assert state.delay_frames == 1
        mags, _ = vc.stft(sine(seconds=0.2), CFG)
        first = vc.gl_stream_push(state, mags[0])
        assert first.shape == (0,)
        second = vc.gl_stream_push(state, mags[1])
        assert second.shape == (CFG.hop,)

    def test_total_samples_after_flush(self):
        mags, _ = vc.stft(sine(seconds=0.3), CFG)
        state = GlState(CFG)
        n = mags.shape[0]
        got = sum(vc.gl_stream_push(state, f).shape[0] for f in mags)
        got += vc.gl_flush(state).shape[0]
        assert got == (n - 1) * CFG.hop + CFG.win_length

    def test_sine_quality_and_gap_to_offline(self):
        mags, _ = vc.stft(sine(), CFG)
        state = GlState(CFG)
        chunks = [vc.gl_stream_push(state, f) for f in mags]
        chunks.append(vc.gl_flush(state))
        stream_snr = spec_snr_db(mags, np.concatenate(chunks))
        offline_snr = spec_snr_db(mags, vc.gl_offline(mags, CFG, n_iters=60))
        assert stream_snr >= 10.0
        assert offline_snr - stream_snr <= 6.0

    def test_wrong_bin_count_rejected(self):
        with pytest.raises(ShapeError):
            vc.gl_stream_push(GlState(CFG), np.zeros(100, dtype=F32))

    def test_push_after_flush_raises(self):
        state = GlState(CFG)
        vc.gl_flush(state)
        with pytest.raises(StateError):
            vc.gl_stream_push(state, np.zeros(513, dtype=F32))

    def test_flush_twice_raises(self):
        state = GlState(CFG)
        vc.gl_flush(state)
        with pytest.raises(StateError):
            vc.gl_flush(state)

    def test_bad_window_index_rejected(self):
        with pytest.raises(ConfigError):
            GlState(CFG, w_size=3, ind=3)


def small_mg(seed=2):
    cfg = MgConfig(in_dim=12, base_channels=8)
    store = vc.init_mg_weights(cfg, seed)
    stft_cfg = StftConfig(hop=200, win_length=800, n_fft=1024)
    return vc.MgGenerator(cfg, store, stft_cfg)


class TestMelgan:
    def test_upsample_matches_hop(self):
        assert MgConfig().total_upsample == 200

    def test_mismatched_hop_rejected(self):
        cfg = MgConfig(in_dim=12, base_channels=8, up_factors=(5, 5, 4))
        store = vc.init_mg_weights(cfg, 0)
        with pytest.raises(ConfigError):
            vc.MgGenerator(cfg, store)

    def test_missing_weight_named(self):
        cfg = MgConfig(in_dim=12, base_channels=8)
        store = vc.init_mg_weights(cfg, 1)
        import streamvc.store as sm
        partial = sm.WeightStore()
        for name in store.names():
            if name != "voc.mg.up2.res1.w1":
                partial.put_entry(name, store.entry(name))
        with pytest.raises(BuildError, match="voc.mg.up2.res1.w1"):
            vc.MgGenerator(cfg, partial)

    def test_batch_output_shape_and_range(self):
        gen = small_mg()
        frames = np.random.default_rng(3).uniform(0, 1, (6, 12)).astype(F32)
        wave = vc.mg_batch(gen, frames)
        assert wave.shape == (6 * 200,)
        assert np.abs(wave).max() <= 1.0

    def test_chunked_matches_batch(self):
        gen = small_mg()
        frames = np.random.default_rng(4).uniform(0, 1, (12, 12)).astype(F32)
        ref = vc.mg_batch(gen, frames)
        state = MgState(gen)
        chunks = [vc.mg_stream_push(state, frames[t: t + 2]) for t in range(0, 12, 2)]
        chunks.append(vc.mg_flush(state))
        streamed = np.concatenate(chunks)
        assert streamed.shape == ref.shape
        assert np.abs(streamed - ref).max() <= 1e-5

    def test_warm_call_emits_two_hops(self):
        gen = small_mg()
        frames = np.random.default_rng(5).uniform(0, 1, (8, 12)).astype(F32)
        state = MgState(gen)
        first = vc.mg_stream_push(state, frames[0:2])
        assert first.shape == (200,)  # one frame held back by the look-ahead queue
        for t in range(2, 8, 2):
            out = vc.mg_stream_push(state, frames[t: t + 2])
            assert out.shape == (2 * 200,)
        assert vc.mg_flush(state).shape == (200,)

    def test_push_after_flush_raises(self):
        state = MgState(small_mg())
        vc.mg_flush(state)
        with pytest.raises(StateError):
            vc.mg_stream_push(state, np.zeros((2, 12), dtype=F32))


class TestVocodeWrapper:
    def test_ngl_matches_gl_offline(self):
        mags = vc.stft(sine(seconds=0.2), CFG)[0].astype(F32)
        assert np.array_equal(vc.vocode(mags, "ngl", gl_iters=5),
                              vc.gl_offline(mags, CFG, n_iters=5))

    def test_gl_matches_manual_stream(self):
        mags = vc.stft(sine(seconds=0.2), CFG)[0].astype(F32)
        state = GlState(CFG)
        chunks = [vc.gl_stream_push(state, f) for f in mags]
        chunks.append(vc.gl_flush(state))
        assert np.array_equal(vc.vocode(mags, "gl"), np.concatenate(chunks))

    def test_mg_requires_generator(self):
        with pytest.raises(ConfigError):
            vc.vocode(np.zeros((2, 513), dtype=F32), "mg")

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            vc.vocode(np.zeros((2, 513), dtype=F32), "wavenet")
