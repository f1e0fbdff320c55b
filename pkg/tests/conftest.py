import numpy as np
import pytest

from mpcinfer.ring import FixedPointCodec
from mpcinfer.shares import LocalDealerClient
from mpcinfer.protocols import ProtocolSession
from mpcinfer.transport import channel_pair, run_pair


@pytest.fixture
def codec():
    return FixedPointCodec(16)


def make_sessions(dealer_seed=7, sharing_seed=11, frac_bits=16, timeout=60.0,
                  record_transcript=False):
    """Fresh pair of in-process party sessions."""
    c1, c2 = channel_pair(timeout=timeout, record_transcript=record_transcript)
    codec = FixedPointCodec(frac_bits)
    s1 = ProtocolSession(1, c1, LocalDealerClient(1, dealer_seed), codec,
                         sharing_seed=sharing_seed)
    s2 = ProtocolSession(2, c2, LocalDealerClient(2, dealer_seed), codec,
                         sharing_seed=sharing_seed)
    return s1, s2


def run_two_party(fn, dealer_seed=7, sharing_seed=11, frac_bits=16, timeout=120.0,
                  record_transcript=False):
    """Run fn(session) on both party threads; returns both results."""
    s1, s2 = make_sessions(dealer_seed, sharing_seed, frac_bits, timeout,
                           record_transcript)
    r1, r2 = run_pair(lambda: fn(s1), lambda: fn(s2), timeout=timeout)
    return (r1, r2), (s1, s2)


def decode_joint(sessions, shared_pair):
    """Reconstruct and decode a pair of SharedTensors from both parties."""
    from mpcinfer.shares import reconstruct
    s1, _ = sessions
    return s1.codec.decode(reconstruct(*shared_pair))


def finite_diff_check(build_loss, arrays, rtol=1e-4, h=1e-4, floor=1e-3):
    """Assert analytic gradients match central finite differences for
    every array in `arrays`; build_loss maps {name: Tensor} to a scalar."""
    from mpcinfer import autodiff as ad
    from mpcinfer.autodiff import Tensor

    params = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    ad.backward(build_loss(params))

    def numeric(arrs):
        return float(build_loss({k: Tensor(v) for k, v in arrs.items()}).data)

    worst = 0.0
    for name, base in arrays.items():
        work = {k: v.copy() for k, v in arrays.items()}
        fd = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = work[name][idx]
            work[name][idx] = orig + h
            hi = numeric(work)
            work[name][idx] = orig - h
            lo = numeric(work)
            work[name][idx] = orig
            fd[idx] = (hi - lo) / (2 * h)
            it.iternext()
        got = params[name].grad
        if got is None:
            got = np.zeros_like(base)  # parameter not on this loss's tape
        rel = np.max(np.abs(got - fd) / np.maximum(np.abs(fd), floor))
        worst = max(worst, float(rel))
        assert rel <= rtol, f"{name}: relative gradient error {rel:.2e}"
    return worst
