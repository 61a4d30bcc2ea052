"""Cross-component golden test: the trainer's float forward pass must equal
the inference package's reference path on the exported checkpoint.
"""

import numpy as np
import torch

import nhalf
from nhalf_trainer import TrainConfig, checkpoint_bytes, train
from nhalf_trainer.config import toy_architecture


def test_forward_parity_with_reference(toy_data):
    train_data, test_data = toy_data
    cfg = TrainConfig(architecture=toy_architecture(), epochs=3, seed=0)
    result = train(cfg, train_data, test_data)
    net = result.net.double().eval()
    ckpt = nhalf.io.checkpoint_from_bytes(checkpoint_bytes(result.net))

    worst = 0.0
    for i in range(32):
        image = test_data.images[i].astype(np.float64)
        with torch.no_grad():
            trainer_scores = net(torch.from_numpy(image[None]))[0].numpy()
        trace = nhalf.reference_forward(image, ckpt)
        np.testing.assert_allclose(trainer_scores, trace.scores, rtol=1e-6, atol=1e-6)
        assert int(np.argmax(trainer_scores)) == trace.predicted
        worst = max(worst, float(np.max(np.abs(trainer_scores - trace.scores))))
    assert worst <= 1e-6


def test_fused_predictions_match_trainer_eval(toy_data):
    """End to end: compiled integer model reproduces the trainer's decisions."""
    train_data, test_data = toy_data
    cfg = TrainConfig(architecture=toy_architecture(), epochs=3, seed=1)
    result = train(cfg, train_data, test_data)
    ckpt = nhalf.io.checkpoint_from_bytes(checkpoint_bytes(result.net))
    model = nhalf.compile_checkpoint(ckpt)

    net = result.net.eval()
    agree = 0
    n = 40
    for i in range(n):
        image = test_data.images[i]
        with torch.no_grad():
            trainer_pred = int(net(torch.from_numpy(image[None]))[0].argmax())
        fused = nhalf.forward_fused(
            model, nhalf.BitTensor.from_signs(image.astype(np.int8))
        )
        agree += trainer_pred == fused.predicted
    assert agree >= n - 1  # boundary ties are the only tolerated source of drift
