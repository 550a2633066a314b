"""Moment preservation of the conservative low-rank machinery.

Block-QR re-factoring, basis augmentation and SVD truncation all leave the
mass and momentum moments untouched because the fixed velocity functions
{1, v} stay pinned in the basis and the truncation only touches the block
orthogonal to them.
"""

import numpy as np

from vlasov_dlra import (DgSpace, FieldBundle, GAUSS_WEIGHT, LowRankState,
                         augment_bases, build_uniform, fixed_basis, observe,
                         orthonormalize, to_block_qr, truncate, zero_field)

rng = np.random.default_rng(42)
sx = DgSpace(build_uniform(1, [(0.0, 4 * np.pi)], [16]), 2)
sv = DgSpace(build_uniform(1, [(-6.0, 6.0)], [32]), 2)
m, r = 2, 6

fixed = fixed_basis(sv, GAUSS_WEIGHT, m)
xb, _ = orthonormalize(FieldBundle(sx, rng.standard_normal((r, sx.n_elements, sx.n_loc))))
vraw = rng.standard_normal((r, sv.n_elements, sv.n_loc))
vraw[:m] = fixed.bundle.data
vb, _ = orthonormalize(FieldBundle(sv, vraw), GAUSS_WEIGHT, fixed_prefix=m)
state = LowRankState(xb, rng.standard_normal((r, r)), vb, m, GAUSS_WEIGHT, fixed)

zf = zero_field(sx)
d0 = observe(state, zf)
print(f"random rank-{r} state: mass {d0.mass:+.12e}, momentum {d0.momentum[0]:+.12e}")

state = to_block_qr(state)
d = observe(state, zf)
print(f"after block QR       : mass drift {abs(d.mass - d0.mass):.2e}")

k_new = FieldBundle(sx, rng.standard_normal((r, sx.n_elements, sx.n_loc)))
l_new = FieldBundle(sv, rng.standard_normal((r - m, sv.n_elements, sv.n_loc)))
xt, vt, M, N = augment_bases(state.X, k_new, state.V, l_new, m, state.weight)
big = LowRankState(xt, M @ state.S @ N.T, vt, m, state.weight, fixed)
d = observe(big, zf)
print(f"after augmentation   : mass drift {abs(d.mass - d0.mass):.2e}")

small = truncate(big, fixed_rank=3)
d = observe(small, zf)
print(f"after truncation to 3: mass drift {abs(d.mass - d0.mass):.2e}, "
      f"momentum drift {abs(d.momentum[0] - d0.momentum[0]):.2e}")
print(f"discarded singular values carried no moment content: rank {big.rank} -> {small.rank}")
