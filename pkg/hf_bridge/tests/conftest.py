import json
from pathlib import Path

import pytest
import torch

GOLDEN_DIR = Path(__file__).resolve().parents[2] / "tests" / "golden"


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> str:
    """A local two-layer causal LM with separate q/k/v projections plus a
    byte-level tokenizer, built from scratch so no hub access is needed."""
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
    from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

    path = tmp_path_factory.mktemp("tiny-lm")
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=320,
        special_tokens=["<pad>", "</s>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    corpus = [
        "classify the sentiment: great service",
        "classify the sentiment: terrible delay",
        "label: positive",
        "label: negative",
        "the quick brown fox jumps over the lazy dog",
    ]
    tok.train_from_iterator(corpus, trainer)
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, pad_token="<pad>", eos_token="</s>"
    )
    fast.save_pretrained(path)

    config = LlamaConfig(
        vocab_size=max(len(fast), 320),
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=128,
        pad_token_id=fast.pad_token_id,
        eos_token_id=fast.eos_token_id,
    )
    torch.manual_seed(1234)
    model = LlamaForCausalLM(config)
    model.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def dataset_path(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("data") / "task.jsonl"
    rows = []
    for i in range(24):
        sentiment = "positive" if i % 2 == 0 else "negative"
        rows.append(
            {
                "prompt": f"classify the sentiment: sample number {i}. label:",
                "answer": f" {sentiment}",
            }
        )
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", "utf-8")
    return str(path)


@pytest.fixture(scope="session")
def golden_anchor():
    return json.loads((GOLDEN_DIR / "external_anchor_id.json").read_text("utf-8"))


@pytest.fixture(scope="session")
def golden_flatten():
    return json.loads((GOLDEN_DIR / "flatten_order.json").read_text("utf-8"))
