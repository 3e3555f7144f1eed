"""Central finite-difference gradient checking shared by the nn/model tests."""
import numpy as np

from topofuse.rng import Stream


def finite_difference_check(build_loss, tensors, stream: Stream,
                            n_coords: int = 20, h: float = 1e-5,
                            tol: float = 1e-6) -> float:
    """Compare autodiff gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild the forward pass from the current ``.data``
    of the given tensors each time it is called. Checks ``n_coords``
    stream-chosen coordinates per tensor, preferring coordinates whose
    finite-difference gradient is not vanishingly small; near-zero
    gradients are compared absolutely. Returns the worst relative error.
    """
    loss = build_loss()
    loss.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
             for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        n = min(n_coords, flat.size)
        coords = stream.integers(4 * n, 0, flat.size)
        picked = []
        for c in coords.tolist():
            if c not in picked:
                picked.append(c)
            if len(picked) >= n:
                break
        for c in picked:
            old = flat[c]
            flat[c] = old + h
            up = build_loss().item()
            flat[c] = old - h
            down = build_loss().item()
            flat[c] = old
            fd = (up - down) / (2.0 * h)
            ad = g.reshape(-1)[c]
            if max(abs(fd), abs(ad)) < 1e-4:
                assert abs(fd - ad) < 1e-7, (fd, ad)
                continue
            rel = abs(fd - ad) / max(abs(fd), abs(ad))
            worst = max(worst, rel)
            assert rel < tol, f"coordinate {c}: autodiff {ad} vs finite diff {fd} (rel {rel:.2e})"
    return worst
