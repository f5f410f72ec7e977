import wave

import numpy as np
import pytest
import torch
from transformers import Wav2Vec2Config, Wav2Vec2Model


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small randomly initialized wav2vec2-style encoder saved to disk.

    Keeps the standard conv front-end (total stride 320) so frame counts
    match the full-size models; shrinks everything else for test speed.
    """
    torch.manual_seed(0)
    config = Wav2Vec2Config(
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        conv_dim=(32, 32, 32, 32, 32, 32, 32),
        num_feat_extract_layers=7,
    )
    model = Wav2Vec2Model(config)
    model.eval()
    out = tmp_path_factory.mktemp("tiny_model")
    model.save_pretrained(out)
    return out


@pytest.fixture(scope="session")
def wav_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("wavs")
    rng = np.random.default_rng(1)
    durations = {"utt_one": 1.0, "utt_half": 0.5}
    for name, seconds in durations.items():
        samples = (0.2 * rng.standard_normal(int(16000 * seconds)) * 32767).astype("<i2")
        with wave.open(str(out / f"{name}.wav"), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(samples.tobytes())
    return out
