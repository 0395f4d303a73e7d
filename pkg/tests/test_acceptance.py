"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS line (visible with `pytest -s`). The two full
benchmark runs are session fixtures shared by the criteria that need them;
expect the module to take several minutes of CPU.
"""

import base64
import json
import math
import os
import socket
import tempfile
import threading
import time

import numpy as np
import pytest

from specdock.anchor import (
    AnchorConfig,
    LabeledExample,
    init_adapter,
    init_anchor,
    tokenize,
    forward,
    grad_b,
    loss,
)
from specdock.bench import BenchConfig, run_bench
from specdock.errors import (
    BadMagicError,
    HeaderJsonInvalidError,
    PayloadLengthMismatchError,
    TruncatedError,
)
from specdock.identify import cosine, identify, low_rank_agreement_probe
from specdock.registry import (
    MAGIC,
    Registry,
    read_spec_file,
    write_spec_file,
)
from specdock.specgen import GroundTruth, Specification, build_spec, preset

from conftest import SMALL, random_batch, separable_dataset
from test_identify import brute_force_ranking
from test_registry import make_spec

N_JOBS = max(1, min(os.cpu_count() or 1, 20))


@pytest.fixture(scope="session")
def bench_first_run():
    start = time.perf_counter()
    report = run_bench(BenchConfig(), n_jobs=N_JOBS)
    report.wall_seconds = time.perf_counter() - start
    return report


@pytest.fixture(scope="session")
def bench_second_run():
    return run_bench(BenchConfig(), n_jobs=N_JOBS)


def test_criterion_1_identification_accuracy(bench_first_run):
    """Family self-identification at rank 1 in >= 90% of (family x trial)."""
    report = bench_first_run
    cases = len(report.rows)
    assert cases == 8 * 20
    hits = sum(r.identified_family == r.family for r in report.rows)
    assert hits >= 0.9 * cases, f"only {hits}/{cases} rank-1 family matches"
    diag = sum(report.family_match_matrix[i][i] for i in range(8))
    assert diag == hits
    print(
        f"\nACCEPTANCE 1: PASS - {hits}/{cases} self-identifications "
        f"({hits / cases:.1%}), bench wall time {report.wall_seconds:.0f}s "
        f"with {N_JOBS} worker(s)"
    )


def test_criterion_2_contender_ordering(bench_first_run):
    """Learnware beats Random per trial in >= 95% of trials; Oracle dominates
    every row exactly."""
    report = bench_first_run
    by_trial: dict[int, list] = {}
    for row in report.rows:
        by_trial.setdefault(row.trial, []).append(row)
    assert len(by_trial) == 20
    trial_wins = sum(
        np.mean([r.learnware for r in rows]) > np.mean([r.random for r in rows])
        for rows in by_trial.values()
    )
    assert trial_wins >= math.ceil(0.95 * 20), f"learnware>random in {trial_wins}/20"
    for row in report.rows:
        assert row.oracle >= row.learnware
        assert row.oracle >= row.best_single
        assert row.oracle >= row.random
    print(
        f"\nACCEPTANCE 2: PASS - learnware mean beats random in {trial_wins}/20 "
        f"trials; oracle dominates all {len(report.rows)} rows"
    )


def test_criterion_3_gradient_correctness():
    """Analytic dB vs central finite differences (f64, step 1e-3) on
    (d=8, r=2, C=3): max relative error < 1e-4 over >= 5 random batches."""
    cfg = AnchorConfig(
        vocab_size=33, embed_dim=8, max_len=12, num_classes=3, rank=2,
        lora_alpha=4.0, base_seed=11, lora_seed=12,
    )
    anchor = init_anchor(cfg)
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(5):
        batch = random_batch(rng, 4, cfg)
        adapter = init_adapter(cfg)
        adapter.B[:] = rng.normal(0, 0.3, adapter.B.shape)
        analytic = np.stack(grad_b(anchor, adapter, batch))

        def batch_loss():
            return float(
                np.mean([loss(forward(anchor, adapter, s), y) for s, y in batch])
            )

        step = 1e-3
        numeric = np.zeros_like(analytic)
        for m in range(3):
            for i in range(cfg.embed_dim):
                for j in range(cfg.rank):
                    orig = adapter.B[m, i, j]
                    adapter.B[m, i, j] = orig + step
                    up = batch_loss()
                    adapter.B[m, i, j] = orig - step
                    down = batch_loss()
                    adapter.B[m, i, j] = orig
                    numeric[m, i, j] = (up - down) / (2 * step)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4
    print(f"\nACCEPTANCE 3: PASS - max relative gradient error {worst:.2e} < 1e-4")


def test_criterion_4_frozen_parameter_audit():
    """Anchor weights and A factors are byte-identical across build_spec."""
    anchor = init_anchor(SMALL)
    weights_before = anchor.weights_bytes()
    a_before = init_adapter(SMALL).a_bytes()
    data = separable_dataset(SMALL, n_per_class=12)
    spec = build_spec(anchor, data, GroundTruth(), preset("toy", shuffle_seed=1))
    assert spec.vector.any()
    assert anchor.weights_bytes() == weights_before
    assert init_adapter(SMALL).a_bytes() == a_before
    print("\nACCEPTANCE 4: PASS - anchor weights and A factors byte-identical "
          "after spec training")


def test_criterion_5_bench_determinism(bench_first_run, bench_second_run):
    """Two full bench runs with identical seeds emit byte-identical JSON."""
    j1, j2 = bench_first_run.to_json(), bench_second_run.to_json()
    assert j1.encode("utf-8") == j2.encode("utf-8")
    print(f"\nACCEPTANCE 5: PASS - two full bench runs byte-identical "
          f"({len(j1)} JSON bytes)")


def test_criterion_6_low_rank_proxy_fidelity():
    """Probe at (d=256, r=16, 200 pairs, fixed seed): Kendall tau >= 0.9 and
    mean absolute cosine gap <= 0.1."""
    stats = low_rank_agreement_probe(256, 16, 200, seed=0)
    assert stats.kendall_tau >= 0.9
    assert stats.mean_abs_gap <= 0.1
    print(
        f"\nACCEPTANCE 6: PASS - kendall tau {stats.kendall_tau:.4f} >= 0.9, "
        f"mean |cosine gap| {stats.mean_abs_gap:.4f} <= 0.1"
    )


def test_criterion_7_identify_oracle_equivalence(tmp_path):
    """20 random registries (<= 100 specs each): identify equals an
    independent brute-force sort exactly, ties included."""
    rng = np.random.default_rng(777)
    for trial in range(20):
        n = int(rng.integers(1, 101))
        reg = Registry.open(tmp_path / f"reg{trial}", SMALL)
        entries = []
        for i in range(n):
            spec = make_spec()
            spec.vector = rng.normal(size=SMALL.spec_dim).astype(np.float32)
            lw_id = reg.submit(f"uri://{i}", spec, {})
            entries.append((lw_id, spec.vector.astype(np.float64)))
        if n >= 3:  # inject exact ties
            for source in rng.choice(n, size=2, replace=False):
                dup = make_spec()
                dup.vector = entries[int(source)][1].astype(np.float32)
                lw_id = reg.submit("uri://dup", dup, {})
                entries.append((lw_id, dup.vector.astype(np.float64)))
        user = make_spec()
        user.vector = rng.normal(size=SMALL.spec_dim).astype(np.float32)
        got = [m.learnware_id for m in identify(reg, user, k=len(entries))]
        want = brute_force_ranking(user.vector.astype(np.float64), entries)
        assert got == want, f"registry {trial} ordering diverged"
    print("\nACCEPTANCE 7: PASS - 20 registries match the brute-force oracle "
          "exactly, including tie-breaks")


def test_criterion_8_codec():
    """1,000 randomized round-trips byte-identical; every malformed-input
    class raises its designated error."""
    rng = np.random.default_rng(4242)
    for _ in range(1000):
        dim = int(rng.integers(1, 257))
        spec = Specification(
            anchor_id=bytes(rng.integers(0, 256, 32)).hex(),
            spec_dim=dim,
            rank=int(rng.integers(1, 65)),
            lora_alpha=float(rng.uniform(0.25, 128.0)),
            target_modules=("q_proj", "k_proj", "v_proj"),
            dtype="f32",
            mode=("developer", "user")[int(rng.integers(0, 2))],
            created_unix_ms=int(rng.integers(0, 2**48)),
            vector=rng.normal(size=dim).astype(np.float32),
        )
        data = write_spec_file(spec)
        assert write_spec_file(read_spec_file(data)) == data

    good = write_spec_file(make_spec())
    with pytest.raises(BadMagicError):
        read_spec_file(b"LWSPEC99" + good[8:])
    for cut in (0, 3, 8, 11, len(good) // 2):
        with pytest.raises((TruncatedError, PayloadLengthMismatchError)):
            read_spec_file(good[:cut])
    with pytest.raises(TruncatedError):
        read_spec_file(good[:10])
    hlen = int.from_bytes(good[8:12], "little")
    with pytest.raises(HeaderJsonInvalidError):
        read_spec_file(good[:12] + b"x" * hlen + good[12 + hlen :])
    with pytest.raises(PayloadLengthMismatchError):
        read_spec_file(good + b"\0\0\0\0")
    with pytest.raises(PayloadLengthMismatchError):
        read_spec_file(good[:-4])
    print("\nACCEPTANCE 8: PASS - 1000 round-trips byte-identical; bad magic, "
          "truncation, header and payload corruption each raise their error")


class _HttpServer:
    """Real uvicorn server on a loopback socket."""

    def __init__(self, app):
        import uvicorn

        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            self.port = probe.getsockname()[1]
        self.config = uvicorn.Config(
            app, host="127.0.0.1", port=self.port, log_level="error"
        )
        self.server = uvicorn.Server(self.config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.02)
        return f"http://127.0.0.1:{self.port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


def test_criterion_9_service_conformance(tmp_path):
    """anchor -> gen-spec -> submit -> identify over real HTTP matches the
    in-process pipeline exactly; a restart preserves state."""
    import httpx

    from specdock.service import create_app

    anchor = init_anchor(SMALL)
    datasets = [separable_dataset(SMALL, n_per_class=6 + i) for i in range(3)]
    specs = [
        build_spec(anchor, ds, GroundTruth(), preset("toy", shuffle_seed=i),
                   created_unix_ms=0)
        for i, ds in enumerate(datasets)
    ]
    user_spec = build_spec(
        anchor, datasets[1], GroundTruth(), preset("toy", shuffle_seed=9),
        created_unix_ms=0,
    )

    # in-process reference pipeline
    ref_reg = Registry.open(tmp_path / "ref", SMALL)
    for i, spec in enumerate(specs):
        ref_reg.submit(f"file:///m/{i}", spec, {"name": f"m{i}"})
    expected = identify(ref_reg, user_spec, k=3)

    http_dir = tmp_path / "http"
    with _HttpServer(create_app(http_dir, SMALL)) as base:
        with httpx.Client(base_url=base, timeout=30) as client:
            descriptor = client.get("/api/v1/anchor").json()
            assert descriptor["anchor_id"] == SMALL.anchor_id()
            for i, spec in enumerate(specs):
                payload = base64.b64encode(write_spec_file(spec)).decode()
                r = client.post(
                    "/api/v1/learnwares",
                    json={"model_uri": f"file:///m/{i}", "spec_b64": payload,
                          "metadata": {"name": f"m{i}"}},
                )
                assert r.status_code == 200
            ub64 = base64.b64encode(write_spec_file(user_spec)).decode()
            got = client.post(
                "/api/v1/identify", json={"spec_b64": ub64, "k": 3}
            ).json()["matches"]

    assert [(m["id"], m["rank"]) for m in got] == [
        (m.learnware_id, m.rank) for m in expected
    ]
    assert [m["similarity"] for m in got] == [m.similarity for m in expected]

    # restart on the same directory: identical ids and rankings
    with _HttpServer(create_app(http_dir)) as base:
        with httpx.Client(base_url=base, timeout=30) as client:
            listing = client.get("/api/v1/learnwares").json()["learnwares"]
            assert [lw["id"] for lw in listing] == [1, 2, 3]
            again = client.post(
                "/api/v1/identify",
                json={"spec_b64": base64.b64encode(write_spec_file(user_spec)).decode(),
                      "k": 3},
            ).json()["matches"]
    assert again == got
    print("\nACCEPTANCE 9: PASS - HTTP pipeline matches in-process results "
          "exactly and survives restart")
