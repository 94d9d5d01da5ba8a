"""Finite-difference validation of analytic gradients."""

import numpy as np

from ..errors import NumericError
from .layers import ReLU


def relative_error(a, b, floor=1e-7):
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero entries from dominating."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _relu_masks(model, cache):
    return [rec for layer, rec in zip(model.layers, cache.records) if isinstance(layer, ReLU)]


def _same_region(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(model, images, loss_closure, step=1e-5, samples_per_param=8,
               seed=0, unsaturated_only=False, floor=1e-7, skip_kinks=False, region=None,
               stats=None):
    """Worst relative error between backprop and central differences.

    ``loss_closure(output) -> (loss, d_loss/d_output)`` must be a
    differentiable scalar function of the weighted output.  A random subset
    of entries of every parameter tensor is perturbed by ``+-step``.

    With ``unsaturated_only`` the loss only sees code entries whose tanh-like
    pre-activation satisfies ``|v| < 2/beta``; saturated entries are frozen
    at their unperturbed values.  Near saturation the central difference
    stops resolving the curvature at large beta, so this keeps the check
    meaningful at the end of the beta schedule.

    With ``skip_kinks`` an entry whose perturbation flips any ReLU mask, or
    changes ``region(output)`` (e.g. the set of unclamped hinge terms), is
    replaced by another entry of the same tensor: a central difference across
    a kink measures the average of two one-sided slopes, not the gradient.
    ``stats`` (a dict) receives the ``checked`` and ``skipped`` counts.
    """
    rng = np.random.default_rng(seed)
    out0, cache = model.forward(images)
    closure = loss_closure
    if unsaturated_only:
        mask = np.abs(model.features(images)) < 2.0 / model.beta

        def closure(out):
            loss, g = loss_closure(np.where(mask, out, out0))
            return loss, g * mask

    loss0, gout = closure(out0)
    if not np.isfinite(loss0):
        raise NumericError("loss is not finite")
    analytic = model.backward(cache, gout)
    base = _relu_masks(model, cache) + ([np.asarray(region(out0))] if region else [])

    def evaluate():
        out, c = model.forward(images)
        sig = _relu_masks(model, c) + ([np.asarray(region(out))] if region else [])
        return closure(out)[0], sig

    worst, checked, skipped = 0.0, 0, 0
    for p, g in zip(model.params, analytic):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        count = min(samples_per_param, flat_p.size)
        done = 0
        for idx in rng.permutation(flat_p.size):
            if done == count:
                break
            orig = flat_p[idx]
            flat_p[idx] = orig + step
            lp, sp = evaluate()
            flat_p[idx] = orig - step
            lm, sm = evaluate()
            flat_p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("loss became non-finite under perturbation")
            if skip_kinks and not (_same_region(sp, base) and _same_region(sm, base)):
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * step)
            worst = max(worst, float(relative_error(flat_g[idx], numeric, floor)))
            done += 1
        checked += done
        if done < count:
            raise NumericError(f"only {done} of {count} entries could be checked away from kinks")
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return worst
