"""Interop with the dock: every emitted file must flow through the primary
codec, registry, and identification unchanged. Exercises the acceptance
criterion for the bridge."""

import numpy as np
import pytest
import torch

from hf_bridge import RealAnchorDescriptor, gen_real_spec

from specdock.anchor import anchor_id_of
from specdock.identify import identify
from specdock.registry import AnchorDescriptor, Registry, read_spec_file

torch.set_num_threads(1)

STEPS = 25  # enough for a clearly nonzero, reproducible vector on CPU


@pytest.fixture(scope="module")
def descriptor(tiny_model_dir):
    return RealAnchorDescriptor(tiny_model_dir, lora_seed=99)


@pytest.fixture(scope="module")
def spec_bytes(descriptor, dataset_path):
    return gen_real_spec(
        descriptor, dataset_path, mode="developer", steps=STEPS,
        shuffle_seed=1, created_unix_ms=0,
    )


def dock_descriptor(descriptor: RealAnchorDescriptor) -> AnchorDescriptor:
    """The dock-side view of the same descriptor JSON."""
    return AnchorDescriptor.from_dict(descriptor.to_dict())


class TestAnchorIdRule:
    def test_hash_rule_identical_across_components(self, descriptor, golden_anchor):
        assert (
            anchor_id_of(golden_anchor["config"]) == golden_anchor["anchor_id"]
        )
        assert dock_descriptor(descriptor).anchor_id == descriptor.anchor_id


class TestEmittedFile:
    def test_parses_in_primary_codec_with_matching_dims(self, spec_bytes, descriptor):
        spec = read_spec_file(spec_bytes)
        # two layers x q/k/v x (hidden=32 x rank=16)
        assert spec.spec_dim == 2 * 3 * 32 * 16 == len(spec.vector)
        assert spec.anchor_id == descriptor.anchor_id
        assert spec.mode == "developer"
        assert spec.rank == 16 and spec.lora_alpha == 32.0
        assert spec.vector.any()

    def test_round_trips_through_primary_writer_byte_exact(self, spec_bytes):
        from specdock.registry import write_spec_file

        assert write_spec_file(read_spec_file(spec_bytes)) == spec_bytes

    def test_zero_steps_gives_zero_vector_and_dock_rejects(
        self, descriptor, dataset_path, tmp_path
    ):
        from specdock.errors import ZeroVectorSpecError

        raw = gen_real_spec(descriptor, dataset_path, steps=0, created_unix_ms=0)
        spec = read_spec_file(raw)
        assert not spec.vector.any()
        reg = Registry.open(tmp_path / "dock", dock_descriptor(descriptor))
        with pytest.raises(ZeroVectorSpecError):
            reg.submit("hub://tiny", spec, {})

    def test_repeat_run_cosine(self, descriptor, dataset_path, spec_bytes):
        from specdock.identify import cosine

        again = gen_real_spec(
            descriptor, dataset_path, mode="developer", steps=STEPS,
            shuffle_seed=1, created_unix_ms=0,
        )
        v1 = read_spec_file(spec_bytes).vector
        v2 = read_spec_file(again).vector
        assert cosine(v1, v2) >= 0.999


class TestBridgeAcceptance:
    def test_submit_and_self_identify_rank_one(self, descriptor, dataset_path,
                                               spec_bytes, tmp_path):
        """Emitted spec parses, submits against a registry initialized with
        the same descriptor, and self-identifies at rank 1."""
        reg = Registry.open(tmp_path / "dock", dock_descriptor(descriptor))
        spec = read_spec_file(spec_bytes)
        lw_id = reg.submit("hub://tiny-lm-finetuned", spec, {"domain": "sentiment"})
        assert lw_id == 1

        # a second, differently-trained spec as a distractor
        other = read_spec_file(
            gen_real_spec(descriptor, dataset_path, steps=STEPS, shuffle_seed=5,
                          created_unix_ms=0)
        )
        perturbed = np.array(other.vector)
        perturbed += np.random.default_rng(0).normal(0, perturbed.std() + 1e-6,
                                                     perturbed.shape).astype(np.float32)
        other.vector = perturbed
        reg.submit("hub://other", other, {})

        matches = identify(reg, spec, k=2)
        assert matches[0].learnware_id == lw_id
        assert matches[0].rank == 1
        assert matches[0].similarity == 1.0
        print("\nACCEPTANCE 10: PASS - bridge spec parses, submits, and "
              "self-identifies at rank 1")

    def test_submit_over_http(self, descriptor, spec_bytes, tmp_path):
        import threading
        import time
        import socket

        import uvicorn

        from hf_bridge import submit_spec
        from specdock.service import create_app

        app = create_app(tmp_path / "httpdock", dock_descriptor(descriptor))
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.02)
        try:
            lw_id = submit_spec(
                f"http://127.0.0.1:{port}", spec_bytes, "hub://tiny", {"via": "http"}
            )
            assert lw_id == 1
        finally:
            server.should_exit = True
            thread.join(timeout=10)
