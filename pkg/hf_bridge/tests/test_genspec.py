"""Adapter wiring, flatten order, and training mechanics."""

import numpy as np
import pytest
import torch
from torch import nn

from hf_bridge import (
    BridgeTrainConfig,
    LowRankAdapter,
    PAPER_PRESET,
    RealAnchorDescriptor,
    attach_adapters,
    flatten_adapters,
    gen_real_spec,
    load_instruction_dataset,
)
from hf_bridge.genspec import _encode_batch, lr_at

torch.set_num_threads(1)


class TestDescriptor:
    def test_anchor_id_matches_shared_golden(self, golden_anchor):
        desc = RealAnchorDescriptor.from_dict({"config": golden_anchor["config"]})
        assert desc.anchor_id == golden_anchor["anchor_id"]

    def test_round_trip(self):
        desc = RealAnchorDescriptor("models/x", lora_seed=5)
        again = RealAnchorDescriptor.from_dict(desc.to_dict())
        assert again == desc

    def test_tampered_hash_rejected(self):
        data = RealAnchorDescriptor("models/x").to_dict()
        data["anchor_id"] = "0" * 64
        with pytest.raises(ValueError):
            RealAnchorDescriptor.from_dict(data)

    def test_paper_preset_constants(self):
        assert PAPER_PRESET["steps"] == 400
        assert PAPER_PRESET["peak_lr"] == 1e-5
        assert PAPER_PRESET["warmup_ratio"] == 0.03
        assert PAPER_PRESET["batch_size"] == 8
        assert (PAPER_PRESET["l2_decay"], PAPER_PRESET["l1_decay"]) == (0.5, 1.0)


class TestAdapterWiring:
    def test_all_layers_qkv_adapted_in_order(self, tiny_model_dir):
        from transformers import AutoModelForCausalLM

        model = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
        desc = RealAnchorDescriptor(tiny_model_dir)
        adapters = attach_adapters(model, desc)
        assert len(adapters) == 2 * 3  # two layers, q/k/v each
        for layer in model.model.layers:
            assert isinstance(layer.self_attn.q_proj, LowRankAdapter)
            assert isinstance(layer.self_attn.k_proj, LowRankAdapter)
            assert isinstance(layer.self_attn.v_proj, LowRankAdapter)
        # all base weights frozen; only B trainable
        trainable = [n for n, p in model.named_parameters() if p.requires_grad]
        assert trainable and all(n.endswith(".B") for n in trainable)

    def test_layer_subset(self, tiny_model_dir):
        from transformers import AutoModelForCausalLM

        model = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
        adapters = attach_adapters(model, RealAnchorDescriptor(tiny_model_dir), layers=[1])
        assert len(adapters) == 3

    def test_a_factors_deterministic_from_seed(self, tiny_model_dir):
        from transformers import AutoModelForCausalLM

        desc = RealAnchorDescriptor(tiny_model_dir, lora_seed=77)
        stacks = []
        for _ in range(2):
            model = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
            adapters = attach_adapters(model, desc)
            stacks.append(torch.cat([a.A.ravel() for a in adapters]))
        assert torch.equal(stacks[0], stacks[1])

    def test_fresh_adapter_changes_nothing(self, tiny_model_dir):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir)
        ids = torch.tensor([tokenizer.encode("label: positive")])
        base = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
        with torch.no_grad():
            reference = base(input_ids=ids).logits
        adapted = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
        attach_adapters(adapted, RealAnchorDescriptor(tiny_model_dir))
        with torch.no_grad():
            observed = adapted(input_ids=ids).logits
        assert torch.equal(reference, observed)


class TestFlattenOrder:
    def test_matches_shared_golden(self, golden_flatten):
        hidden, rank = golden_flatten["hidden"], golden_flatten["rank"]
        adapters = []
        for name in golden_flatten["modules"]:
            base = nn.Linear(hidden, hidden, bias=False)
            adapter = LowRankAdapter(base, rank, 2.0, torch.zeros(rank, hidden))
            with torch.no_grad():
                adapter.B.copy_(torch.tensor(golden_flatten["b_matrices"][name]))
            adapters.append(adapter)
        flat = flatten_adapters(adapters)
        assert flat.tolist() == golden_flatten["expected_flat"]
        assert flat.dtype == np.float32

    def test_layer_major_extension(self):
        adapters = []
        for value in (1.0, 2.0):  # two "layers" worth of q/k/v
            for offset in range(3):
                base = nn.Linear(2, 2, bias=False)
                adapter = LowRankAdapter(base, 1, 1.0, torch.zeros(1, 2))
                with torch.no_grad():
                    adapter.B.fill_(value * 10 + offset)
                adapters.append(adapter)
        flat = flatten_adapters(adapters)
        assert flat.tolist() == [
            10.0, 10.0, 11.0, 11.0, 12.0, 12.0,   # layer one: q, k, v
            20.0, 20.0, 21.0, 21.0, 22.0, 22.0,   # layer two: q, k, v
        ]


class TestTrainingMechanics:
    def test_labels_cover_answer_tokens_only(self, tiny_model_dir):
        from transformers import AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir)
        rows = [{"prompt": "classify: good.", "answer": " positive"}]
        input_ids, mask, labels = _encode_batch(tokenizer, rows, max_length=64)
        prompt_len = len(tokenizer.encode("classify: good.", add_special_tokens=False))
        assert (labels[0, :prompt_len] == -100).all()
        answer_ids = tokenizer.encode(" positive", add_special_tokens=False)
        got = labels[0, prompt_len : prompt_len + len(answer_ids)]
        assert got.tolist() == answer_ids
        assert labels[0, prompt_len + len(answer_ids)] == tokenizer.eos_token_id
        assert (mask[0] == 1).all()

    def test_padding_masked_out(self, tiny_model_dir):
        from transformers import AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir)
        rows = [
            {"prompt": "a long prompt with many words", "answer": " yes"},
            {"prompt": "short", "answer": " no"},
        ]
        input_ids, mask, labels = _encode_batch(tokenizer, rows, max_length=64)
        short_len = int(mask[1].sum())
        assert (labels[1, short_len:] == -100).all()
        assert (input_ids[1, short_len:] == tokenizer.pad_token_id).all()

    def test_lr_schedule_shape(self):
        cfg = BridgeTrainConfig(steps=400)
        warm = 12
        assert lr_at(cfg, 0) == pytest.approx(1e-5 / warm)
        assert lr_at(cfg, warm - 1) == pytest.approx(1e-5)
        assert lr_at(cfg, 399) < 1e-9

    def test_dataset_loader_validates(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"prompt": "x"}\n')
        with pytest.raises(ValueError):
            load_instruction_dataset(bad)
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(ValueError):
            load_instruction_dataset(empty)

    def test_missing_model_raises(self, dataset_path):
        with pytest.raises(FileNotFoundError):
            gen_real_spec(RealAnchorDescriptor("does/not/exist"), dataset_path, steps=1)
