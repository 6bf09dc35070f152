"""Pure-numpy dense MLP kernels.

Reference implementation of the compiled ``_kernels`` module. Both expose the
same two functions with identical semantics; results agree to rounding.

Activation codes: 0 identity, 1 tanh, 2 relu.
"""

import numpy as np

NAME = "python"


def mlp_forward(x, weights, biases, codes):
    """Run a batched forward pass.

    ``x`` is ``(batch, n_in)``; ``weights[l]`` is ``(n_out, n_in)``.
    Returns the list of post-activation layer outputs, input first.
    """
    acts = [x]
    a = x
    for w, b, code in zip(weights, biases, codes):
        z = a @ w.T + b
        if code == 1:
            z = np.tanh(z)
        elif code == 2:
            z = np.maximum(z, 0.0)
        acts.append(z)
        a = z
    return acts


def mlp_backward(acts, weights, codes, grad_out):
    """Backpropagate ``grad_out`` through cached activations.

    Returns ``(weight_grads, bias_grads, input_grad)``.
    """
    n = len(weights)
    dws = [None] * n
    dbs = [None] * n
    delta = np.array(grad_out, dtype=np.float64)
    for layer in range(n - 1, -1, -1):
        out = acts[layer + 1]
        code = codes[layer]
        if code == 1:
            delta = delta * (1.0 - out * out)
        elif code == 2:
            # subgradient of relu at 0 is 0
            delta = delta * (out > 0.0)
        dws[layer] = delta.T @ acts[layer]
        dbs[layer] = delta.sum(axis=0)
        delta = delta @ weights[layer]
    return dws, dbs, delta
