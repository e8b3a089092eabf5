import numpy as np

from stimseq.models import build_model, forward_features, receptive_field
from stimseq.tensor import Tensor, cross_entropy, log_softmax, time_pool


def gradient_receptive_field(config, seed=0):
    """Receptive-field oracle via input-gradient support.

    Backpropagates from the final frame's output to the input at a random
    operating point; the count of input frames with nonzero gradient is the
    impulse response of the linearized network. Unlike a forward impulse
    difference, gradient magnitudes are pure chain-rule products, so the far
    edge of a deep stack cannot be absorbed into larger activations.
    """
    params = build_model(config, seed=seed, dtype=np.float64)
    t_len = receptive_field(config) + 20
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.standard_normal((1, t_len, config.input_dim)),
               requires_grad=True, dtype=np.float64)
    feats, _ = forward_features(config, params, x)
    last = time_pool(feats, "last")  # (1, F): the final frame's features
    loss = cross_entropy(log_softmax(last), np.array([0]))
    loss.backward()
    support = np.flatnonzero(np.abs(x.grad[0]).max(axis=1) > 0)
    assert support.size and support[-1] == t_len - 1
    return t_len - int(support[0])
