import json

import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from transformers import BertConfig, BertModel

TOY = dict(hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
           intermediate_size=64, vocab_size=100, max_position_embeddings=48)


def make_vocab_lines(size: int) -> list[str]:
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    return specials + [f"w{i}" for i in range(size - len(specials))]


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory):
    """A saved BertModel checkpoint directory with vocab and tokenizer config.

    hidden_act is the tanh GELU ("gelu_new") so encoder-output parity with the
    converter's target runtime is exact up to float32 arithmetic.
    """
    root = tmp_path_factory.mktemp("toybert")
    torch.manual_seed(1234)
    config = BertConfig(hidden_act="gelu_new", **TOY)
    model = BertModel(config).eval()
    model.save_pretrained(root)
    (root / "vocab.txt").write_text(
        "\n".join(make_vocab_lines(TOY["vocab_size"])) + "\n", encoding="utf-8")
    (root / "tokenizer_config.json").write_text(
        json.dumps({"do_lower_case": False}), encoding="utf-8")
    return {"dir": root, "model": model, "config": config}
