"""Acceptance gate: the twelve shipped guarantees, one printed PASS/FAIL line
each (run `pytest -s tests/test_acceptance.py` to see them; a plain `pytest`
run applies the same assertions silently).

The two end-to-end criteria (the CLI smoke chain and its determinism re-run)
share one session fixture so the corpus and the four trainings are built once.
"""

import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch
from torch import nn

from crgan import arch, cli, corpus, dsp, losses, quality, report, train
from crgan.dsp import Waveform


@contextmanager
def criterion(num: int, label: str):
    """Print exactly one verdict line for an acceptance criterion."""
    info = {}
    try:
        yield info
    except BaseException as exc:
        print(f"[criterion {num:02d}] FAIL {label} -- {exc}")
        raise
    detail = f" ({info['detail']})" if info.get("detail") else ""
    print(f"[criterion {num:02d}] PASS {label}{detail}")


# ---------------------------------------------------------------------------
# 1. full-scale results are declared out of reach, up front and in every table
# ---------------------------------------------------------------------------

def test_criterion_01_scale_disclaimer_up_front():
    with criterion(1, "desk-scale caveat stated up front and on every table") as info:
        readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
        head = readme[: readme.find("## Install")]
        assert "Nothing in this repository reproduces" in head
        for phrase in ("synthetic", "surrogate", "PESQ["):
            assert phrase in head, f"README opening never mentions {phrase!r}"

        assert "not comparable" in report.DESK_SCALE_DISCLAIMER
        row = {"id": "u0", "system": "demo", **{k: 1.0 for k in report.ALL_KEYS}}
        text = report.render_evaluation_text(report.EvaluationResult(rows=[row]))
        assert report.DESK_SCALE_DISCLAIMER in text
        assert quality.SURROGATE_LABEL in text  # provenance-labeled PESQ column
        info["detail"] = "README opening + rendered tables carry the caveat and a labeled PESQ column"


# ---------------------------------------------------------------------------
# 2. STFT round-trip reconstruction
# ---------------------------------------------------------------------------

def test_criterion_02_stft_round_trip():
    with criterion(2, "100 random 1-s round trips, interior SNR >= 60 dB, < 10 s") as info:
        rng = np.random.Generator(np.random.PCG64(2020))
        t0 = time.monotonic()
        worst = math.inf
        for _ in range(100):
            x = rng.normal(size=dsp.SAMPLE_RATE) * 0.3
            wave = Waveform(samples=x)
            back = dsp.istft(dsp.stft(wave)).samples
            covered = (dsp.n_frames_for(len(x)) - 1) * dsp.HOP + dsp.FRAME_LENGTH
            sl = slice(dsp.FRAME_LENGTH, covered - dsp.FRAME_LENGTH)
            err = back[sl] - x[sl]
            snr = 10.0 * np.log10(np.sum(x[sl] ** 2) / np.sum(err**2))
            worst = min(worst, snr)
        elapsed = time.monotonic() - t0
        assert worst >= 60.0, f"worst interior SNR {worst:.1f} dB"
        assert elapsed < 10.0, f"took {elapsed:.1f} s"
        info["detail"] = f"worst interior SNR {worst:.1f} dB in {elapsed:.1f} s"


# ---------------------------------------------------------------------------
# 3. oracle phase-sensitive mask beats the raw mixture
# ---------------------------------------------------------------------------

def test_criterion_03_oracle_mask_enhancement():
    with criterion(3, "clipped PSM: >= 5 dB segSNR gain and STOI win on >= 19/20 mixtures") as info:
        wins = 0
        gains = []
        for i in range(20):
            clean = corpus.synthesize_clean(100 + i, 1.6)
            noise = corpus.synthesize_noise(corpus.NOISE_KINDS[i % 5], 900 + i, len(clean))
            clean, noisy = corpus.mix_at_snr(clean, noise, 0.0)
            noisy_spec = dsp.stft(noisy)
            mask = dsp.phase_sensitive_mask(dsp.stft(clean), noisy_spec)
            enhanced = dsp.istft(dsp.apply_mask(noisy_spec, mask))
            gain = quality.seg_snr(clean, enhanced) - quality.seg_snr(clean, noisy)
            gains.append(gain)
            if gain >= 5.0 and quality.stoi(clean, enhanced) > quality.stoi(clean, noisy):
                wins += 1
        assert wins >= 19, f"only {wins}/20 mixtures improved on both measures"
        info["detail"] = f"{wins}/20 wins, segSNR gain min {min(gains):.2f} dB / mean {np.mean(gains):.2f} dB"


# ---------------------------------------------------------------------------
# 4. closed-form loss identities
# ---------------------------------------------------------------------------

def test_criterion_04_loss_identities():
    with criterion(4, "relativistic ln2 / average 2ln2 / metric fixed point / Wasserstein examples") as info:
        f64 = lambda *v: torch.tensor(v, dtype=torch.float64)

        d, g = losses.relativistic_losses(f64(0.3, -1.2, 4.0), f64(0.3, -1.2, 4.0))
        assert abs(float(d) - math.log(2.0)) <= 1e-6
        assert abs(float(g) - math.log(2.0)) <= 1e-6

        d, g = losses.relativistic_average_losses(f64(0.7, 0.7, 0.7), f64(0.7, 0.7, 0.7))
        assert abs(float(d) - 2.0 * math.log(2.0)) <= 1e-6
        assert abs(float(g) - 2.0 * math.log(2.0)) <= 1e-6

        q = f64(0.2, 0.9)
        fixed = losses.metric_d_loss(f64(1.0, 1.0), q.clone(), q)
        assert abs(float(fixed)) <= 1e-9

        assert float(losses.wasserstein_d_loss(f64(3.0), f64(1.0))) == -2.0
        assert float(losses.wasserstein_d_loss(f64(0.4, -2.0), f64(0.4, -2.0))) == 0.0
        assert float(losses.wasserstein_d_loss(f64(1.0, 3.0), f64(0.0, 0.0))) == -2.0
        assert float(losses.wasserstein_g_loss(f64(0.0))) == 0.0
        assert float(losses.wasserstein_g_loss(f64(2.0))) == -2.0
        assert float(losses.wasserstein_g_loss(f64(-1.0, 3.0))) == -1.0
        info["detail"] = "all closed-form values hit at the stated tolerances"


# ---------------------------------------------------------------------------
# 5. analytic gradients vs central finite differences, every family + GP
# ---------------------------------------------------------------------------

class _MiniGen(nn.Module):
    """17-parameter mask estimator: per-bin affine + sigmoid."""

    def __init__(self):
        super().__init__()
        self.scale = nn.Parameter(torch.tensor(0.8, dtype=torch.float64))
        self.bias = nn.Parameter(torch.linspace(-0.3, 0.3, 16, dtype=torch.float64))

    def forward(self, x):
        return torch.sigmoid(self.scale * x + self.bias)


class _MiniCritic(nn.Module):
    """Tiny smooth critic on (batch, frames, bins[*2]) inputs -> one logit each."""

    def __init__(self, width: int, seed: int):
        super().__init__()
        torch.manual_seed(seed)
        self.mix = nn.Linear(width, 2)
        self.head = nn.Linear(2, 1)
        self.double()

    def forward(self, x):
        h = torch.tanh(self.mix(x))
        return self.head(h.mean(dim=1)).squeeze(-1)


def _max_fd_error(loss_fn, params, h=1e-6):
    analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    worst = 0.0
    for p, grad in zip(params, analytic):
        grad = torch.zeros_like(p) if grad is None else grad
        flat, gflat = p.data.reshape(-1), grad.reshape(-1)
        for j in range(flat.numel()):
            orig = float(flat[j])
            flat[j] = orig + h
            f_plus = float(loss_fn().detach())
            flat[j] = orig - h
            f_minus = float(loss_fn().detach())
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, abs(float(gflat[j]) - fd) / max(1.0, abs(float(gflat[j])), abs(fd)))
    return worst


def test_criterion_05_finite_difference_gradients():
    with criterion(5, "FD gradient check, all four families incl. GP double backprop, < 60 s") as info:
        t0 = time.monotonic()
        rng = np.random.Generator(np.random.PCG64(55))
        x = torch.tensor(rng.normal(size=(2, 8, 16)), dtype=torch.float64)
        target = torch.tensor(rng.uniform(0.05, 0.95, size=(2, 8, 16)), dtype=torch.float64)
        eps = torch.tensor([0.25, 0.75], dtype=torch.float64)
        q = torch.tensor([0.3, 0.8], dtype=torch.float64)

        gen = _MiniGen()
        d_single = _MiniCritic(16, seed=1)
        d_pair = _MiniCritic(32, seed=2)
        assert sum(p.numel() for m in (gen, d_single) for p in m.parameters()) <= 500
        assert sum(p.numel() for m in (gen, d_pair) for p in m.parameters()) <= 500

        pair = lambda a, b: torch.cat([a, b], dim=-1)
        fake_const = gen(x).detach()  # D-side checks run against a frozen generator

        def w_d():
            adv = losses.wasserstein_d_loss(d_single(target), d_single(fake_const))
            gp = losses.gradient_penalty(d_single, target, fake_const, eps)
            return adv + 10.0 * gp

        def w_g():
            mask = gen(x)
            return losses.wasserstein_g_loss(d_single(mask)) + 200.0 * losses.l1_term(mask, target)

        def r_d():
            adv, _ = losses.relativistic_losses(
                d_pair(pair(target, target)), d_pair(pair(fake_const, target))
            )
            gp = losses.gradient_penalty(lambda c: d_pair(pair(c, target)), target, fake_const, eps)
            return adv + 10.0 * gp

        def r_g():
            mask = gen(x)
            _, adv = losses.relativistic_losses(d_pair(pair(target, target)), d_pair(pair(mask, target)))
            return adv + 200.0 * losses.l1_term(mask, target)

        def ra_d():
            adv, _ = losses.relativistic_average_losses(
                d_pair(pair(target, target)), d_pair(pair(fake_const, target))
            )
            gp = losses.gradient_penalty(lambda c: d_pair(pair(c, target)), target, fake_const, eps)
            return adv + 10.0 * gp

        def ra_g():
            mask = gen(x)
            _, adv = losses.relativistic_average_losses(
                d_pair(pair(target, target)), d_pair(pair(mask, target))
            )
            return adv + 200.0 * losses.l1_term(mask, target)

        def m_d():
            return losses.metric_d_loss(
                d_pair(pair(target, target)), d_pair(pair(fake_const, target)), q
            )

        def m_g():
            mask = gen(x)
            return losses.metric_g_loss(d_pair(pair(mask, target))) + 4.0 * losses.mse_term(mask, target)

        g_params = list(gen.parameters())
        cases = [
            ("wasserstein d+gp", w_d, list(d_single.parameters())),
            ("wasserstein g", w_g, g_params),
            ("relativistic d+gp", r_d, list(d_pair.parameters())),
            ("relativistic g", r_g, g_params),
            ("relativistic-average d+gp", ra_d, list(d_pair.parameters())),
            ("relativistic-average g", ra_g, g_params),
            ("metric d", m_d, list(d_pair.parameters())),
            ("metric g", m_g, g_params),
        ]
        worst = 0.0
        for name, fn, params in cases:
            err = _max_fd_error(fn, params)
            assert err <= 1e-3, f"{name}: max relative error {err:.2e}"
            worst = max(worst, err)
        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f} s"
        info["detail"] = f"worst relative error {worst:.1e} over 8 closures in {elapsed:.1f} s"


# ---------------------------------------------------------------------------
# 6. freeze contract over an alternating run
# ---------------------------------------------------------------------------

def test_criterion_06_freeze_contract():
    with criterion(6, "100 alternating steps: frozen side never moves (0 violations)") as info:
        records = corpus.build_manifest(
            corpus.CorpusConfig(n_train=4, n_test=0, duration_s=1.2, seed=21)
        )
        tr = train.Trainer(
            records,
            train.TrainConfig(
                variant="W-CGAN", epochs=1, batch_size=2, validation_fraction=0.0, seed=9
            ),
        )
        batches = itertools.cycle(list(tr._epoch_batches(1)))
        violations = 0
        d_moved = g_moved = False
        for _ in range(50):  # 50 D-steps + 50 G-steps = 100 alternating steps
            batch = next(batches)
            g_before = train.parameter_digest(tr.model.generator)
            d_before = train.parameter_digest(tr.model.discriminator)
            tr.d_step(batch)
            violations += train.parameter_digest(tr.model.generator) != g_before
            d_moved |= train.parameter_digest(tr.model.discriminator) != d_before
            d_after = train.parameter_digest(tr.model.discriminator)
            tr.g_step(batch)
            violations += train.parameter_digest(tr.model.discriminator) != d_after
            g_moved |= train.parameter_digest(tr.model.generator) != g_before
        assert violations == 0, f"{violations} frozen-side parameter changes"
        assert d_moved and g_moved, "digests never changed; the probe is vacuous"
        info["detail"] = "50 D + 50 G steps, 0 violations, both sides trained"


# ---------------------------------------------------------------------------
# 7. overfit sanity on one utterance
# ---------------------------------------------------------------------------

def test_criterion_07_overfit_single_utterance():
    with criterion(7, "tiny CRN-MSE, one utterance, 200 steps: mask MSE falls >= 10x, < 5 min") as info:
        t0 = time.monotonic()
        records = corpus.build_manifest(
            corpus.CorpusConfig(n_train=1, n_test=0, duration_s=1.2, seed=5)
        )
        cfg = train.TrainConfig(
            variant="CRN-MSE", epochs=1, batch_size=8, validation_fraction=0.0, seed=3
        )
        spec = arch.generator_spec_for(cfg.resolved_variant, cfg.scale)
        assert spec.encoder_channels == (4, 8, 16, 32, 64) and spec.lstm_hidden == 64

        tr = train.Trainer(records, cfg)
        batch = next(iter(tr._epoch_batches(1)))
        mse = [tr.g_step(batch)["mse"] for _ in range(200)]
        elapsed = time.monotonic() - t0
        ratio = mse[0] / mse[-1]
        assert ratio >= 10.0, f"mask MSE only fell {ratio:.1f}x ({mse[0]:.4g} -> {mse[-1]:.4g})"
        assert elapsed < 300.0, f"took {elapsed:.1f} s"
        info["detail"] = f"MSE {mse[0]:.4f} -> {mse[-1]:.5f} ({ratio:.1f}x) in {elapsed:.1f} s"


# ---------------------------------------------------------------------------
# 8. the metric-family discriminator learns the score it regresses
# ---------------------------------------------------------------------------

def test_criterion_08_metric_discriminator_regression():
    with criterion(8, "frozen G, 500 D steps: held-out quality MAE <= 0.1, < 10 min") as info:
        t0 = time.monotonic()
        records = corpus.build_manifest(corpus.CorpusConfig(n_train=16, n_test=8, seed=13))
        tr = train.Trainer(
            [r for r in records if r.split == "train"],
            train.TrainConfig(
                variant="M-CRGAN",
                epochs=1,
                batch_size=1,
                utterances_per_epoch=500,
                validation_fraction=0.0,
                seed=4,
            ),
        )
        g_digest = train.parameter_digest(tr.model.generator)
        steps = 0
        for batch in tr._epoch_batches(1):
            tr.d_step(batch)
            steps += 1
        assert steps == 500
        assert train.parameter_digest(tr.model.generator) == g_digest, "G moved during D training"

        errors = []
        for rec in (r for r in records if r.split == "test"):
            clean, noisy = corpus.load_record_audio(rec)
            feats = corpus.compute_features(clean, noisy, rec.id)
            batch = train.Batch(
                features=torch.from_numpy(feats.noisy_logmag[None]),
                target_mask=torch.from_numpy(feats.target_mask[None]),
                items=[feats],
            )
            mask = tr._frozen_mask(batch.features)
            with torch.no_grad():
                predicted, _, q = tr._metric_pairs(batch, mask, for_d_step=True)
            errors.append(abs(float(predicted[0]) - float(q[0])))
        elapsed = time.monotonic() - t0
        mae = float(np.mean(errors))
        assert mae <= 0.1, f"held-out MAE {mae:.4f}"
        assert elapsed < 600.0, f"took {elapsed:.1f} s"
        info["detail"] = f"held-out MAE {mae:.4f} over 8 utterances in {elapsed:.1f} s"


# ---------------------------------------------------------------------------
# 9. shape conformance for all 14 variants
# ---------------------------------------------------------------------------

def test_criterion_09_shape_conformance():
    with criterion(9, "257->128->63->31->15->7 chain, mirrored decoder, T kept, mask in (0,1), all 14") as info:
        chain = [257, 128, 63, 31, 15, 7]
        conv_variants = 0
        for variant in arch.ALL_VARIANTS:
            model = arch.build_model(variant, scale="desk", seed=1)
            gen = model.generator
            x = torch.randn(2, 9, dsp.N_BINS, generator=torch.Generator().manual_seed(3))
            if isinstance(gen, arch.MaskGenerator):
                conv_variants += 1
                assert gen.spec.freq_sizes == chain
                assert arch.generator_spec_for(variant, "full").freq_sizes == chain
                enc_f, dec_f = [], []
                hooks = [
                    blk.register_forward_hook(lambda m, i, o, acc=enc_f: acc.append(o.shape[-1]))
                    for blk in gen.encoder
                ] + [
                    blk.register_forward_hook(lambda m, i, o, acc=dec_f: acc.append(o.shape[-1]))
                    for blk in gen.decoder
                ]
                try:
                    mask = gen(x)
                finally:
                    for h in hooks:
                        h.remove()
                assert enc_f == chain[1:], f"{variant.value}: encoder bins {enc_f}"
                assert dec_f == chain[-2::-1], f"{variant.value}: decoder bins {dec_f}"
            else:
                mask = gen(x)
            mask = mask.detach()
            assert mask.shape == x.shape, f"{variant.value}: {tuple(mask.shape)}"
            assert 0.0 < float(mask.min()) and float(mask.max()) < 1.0, variant.value
            one = model.estimate_mask(torch.zeros(1, 1, dsp.N_BINS))
            assert one.shape == (1, 1, dsp.N_BINS), f"{variant.value} breaks on a single frame"
        assert conv_variants == 12 and len(arch.ALL_VARIANTS) == 14
        info["detail"] = "12 conv generators mirror the chain; all 14 keep T and emit (0,1) masks"


# ---------------------------------------------------------------------------
# 10. composite listening-score formulas
# ---------------------------------------------------------------------------

def test_criterion_10_composite_formula():
    with criterion(10, "composite(2,1,50,5) worked values and 100 random re-evaluations") as info:
        got = quality.composite(2.0, 1.0, 50.0, 5.0)
        for value, exact in zip((got.csig, got.cbak, got.covl), (2.820, 2.555, 2.342)):
            assert abs(value - exact) <= 1e-9
        for value, rounded in zip((got.csig, got.cbak, got.covl), (2.82, 2.56, 2.34)):
            # consistent with the two-decimal printed form; 2.555 sits exactly
            # half an ulp-of-print away from 2.56, so allow the boundary
            assert abs(value - rounded) <= 5e-3 + 1e-9

        clip = lambda v: min(5.0, max(1.0, v))
        rng = np.random.Generator(np.random.PCG64(1010))
        clipped = 0
        for _ in range(100):
            p = rng.uniform(-0.5, 4.5)
            llr = rng.uniform(0.0, 3.0)
            w = rng.uniform(0.0, 120.0)
            s = rng.uniform(-10.0, 35.0)
            sc = quality.composite(p, llr, w, s)
            want = (
                clip(3.093 - 1.029 * llr + 0.603 * p - 0.009 * w),
                clip(1.634 + 0.478 * p - 0.007 * w + 0.063 * s),
                clip(1.594 + 0.805 * p - 0.512 * llr - 0.007 * w),
            )
            clipped += any(v in (1.0, 5.0) for v in want)
            for value, expected in zip((sc.csig, sc.cbak, sc.covl), want):
                assert abs(value - expected) <= 1e-9
        assert clipped > 0, "random sweep never exercised the [1, 5] clip"
        info["detail"] = f"worked values exact; 100 random tuples match ({clipped} hit the clip)"


# ---------------------------------------------------------------------------
# 11 & 12. end-to-end CLI smoke and its determinism re-run
# ---------------------------------------------------------------------------

_FAMILY_VARIANTS = ("W-CGAN", "R-CGAN", "Ra-CGAN", "M-CGAN")


def _experiment_yaml(path: Path, out_dir: Path, variant: str):
    batch = 1 if variant.startswith("M-") else 8
    path.write_text(
        f"seed: 7\noutput_dir: {out_dir}\n"
        "corpus:\n  n_train: 32\n  n_test: 8\n  duration_s: 1.2\n"
        f"train:\n  variant: {variant}\n  epochs: 2\n  batch_size: {batch}\n"
        "  validation_fraction: 0.0\n"
    )


def _run_cli(*argv):
    rc = cli.main(list(argv))
    assert rc == 0, f"crgan {argv[0]} exited {rc}"


@pytest.fixture(scope="session")
def e2e_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-e2e")
    run = root / "run"
    t0 = time.monotonic()
    configs = {}
    for variant in _FAMILY_VARIANTS:
        configs[variant] = root / f"{variant}.yaml"
        _experiment_yaml(configs[variant], run, variant)

    _run_cli("synth-corpus", "--config", str(configs["W-CGAN"]))
    for variant in _FAMILY_VARIANTS:
        _run_cli("train", "--config", str(configs[variant]))

    tsvs = []
    for variant in _FAMILY_VARIANTS:
        _run_cli(
            "enhance",
            "--checkpoint", str(run / "train" / variant / "checkpoint-last.pt"),
            "--input", str(run / "corpus" / "test" / "noisy"),
            "--out", str(run / "enhanced" / variant),
        )
        _run_cli(
            "evaluate",
            "--clean", str(run / "corpus" / "test" / "clean"),
            "--enhanced", str(run / "enhanced" / variant),
            "--noisy", str(run / "corpus" / "test" / "noisy"),
            "--out", str(run / "eval" / variant),
            "--system", variant,
        )
        tsvs.append(run / "eval" / variant / "metrics.tsv")

    _run_cli("report", *[str(p) for p in tsvs], "--out", str(run / "report"))
    return {
        "root": root,
        "run": run,
        "configs": configs,
        "elapsed": time.monotonic() - t0,
    }


def test_criterion_11_end_to_end_smoke(e2e_run):
    with criterion(11, "synth -> 4x train -> enhance -> evaluate -> report, labeled table, < 30 min") as info:
        run = e2e_run["run"]
        header = (run / "report" / "report.tsv").read_text().splitlines()[0].split("\t")
        metric_columns = header[2 : 2 + len(report.REPORT_KEYS)]
        assert metric_columns == [quality.SURROGATE_LABEL, "STOI", "CSIG", "CBAK", "COVL"]
        assert header[:2] == ["system", "n"]

        systems = {line.split("\t")[0] for line in (run / "report" / "report.tsv").read_text().splitlines()[1:]}
        assert set(_FAMILY_VARIANTS) | {report.NOISY_SYSTEM} <= systems

        assert report.DESK_SCALE_DISCLAIMER in (run / "report" / "report.txt").read_text()
        assert (run / "report" / "report.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        for variant in _FAMILY_VARIANTS:
            assert (run / "train" / variant / "loss_curves.png").exists()
        assert e2e_run["elapsed"] < 1800.0, f"took {e2e_run['elapsed']:.0f} s"
        info["detail"] = (
            f"five labeled metric columns over {len(systems)} systems in {e2e_run['elapsed']:.0f} s"
        )


def _log_rows(path: Path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_criterion_12_determinism_rerun(e2e_run, tmp_path_factory):
    with criterion(12, "same seed: bit-identical corpus, epoch-loss logs equal to 1e-6") as info:
        root2 = tmp_path_factory.mktemp("acceptance-rerun")
        run2 = root2 / "run"
        configs = {}
        for variant in _FAMILY_VARIANTS:
            configs[variant] = root2 / f"{variant}.yaml"
            _experiment_yaml(configs[variant], run2, variant)

        _run_cli("synth-corpus", "--config", str(configs["W-CGAN"]))
        first_corpus = e2e_run["run"] / "corpus"
        wavs = sorted(p.relative_to(first_corpus) for p in first_corpus.rglob("*.wav"))
        assert len(wavs) == 80  # 40 mixtures, clean + noisy each
        for rel in wavs + [Path("manifest.jsonl")]:
            assert (first_corpus / rel).read_bytes() == (run2 / "corpus" / rel).read_bytes(), rel

        worst = 0.0
        for variant in _FAMILY_VARIANTS:
            _run_cli("train", "--config", str(configs[variant]))
            rows_a = _log_rows(e2e_run["run"] / "train" / variant / "training_log.jsonl")
            rows_b = _log_rows(run2 / "train" / variant / "training_log.jsonl")
            assert len(rows_a) == len(rows_b)
            for a, b in zip(rows_a, rows_b):
                assert a.keys() == b.keys()
                for key, value in a.items():
                    if key == "wall_time":
                        continue
                    if isinstance(value, float):
                        worst = max(worst, abs(value - b[key]))
                        assert abs(value - b[key]) <= 1e-6, f"{variant} {key}"
                    else:
                        assert value == b[key], f"{variant} {key}"
        info["detail"] = f"80 WAVs + manifest bit-identical; max log deviation {worst:.2e}"
