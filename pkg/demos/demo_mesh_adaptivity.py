"""Mesh- and rank-adaptive free transport of a Maxwellian bump.

The electric field is switched off, so the exact solution is the freely
streaming initial condition.  The spatial mesh refines around the moving
bump and coarsens behind it while the rank grows with phase-space
entanglement.  Runs a coarse, short version of the benchmark.
"""

from vlasov_dlra import AdaptConfig, BUG, IntegratorConfig, run
from vlasov_dlra.scenarios import free_transport_2d

state = free_transport_2d(nx=8, nv=16)
config = IntegratorConfig(scheme=BUG, tau=2e-3, trunc_tol=1e-4, max_rank=12,
                          m=0, self_consistent_field=False, enrich_velocity=True,
                          adapt=AdaptConfig(epsilon=1e-3, c=0.15, max_level=2))

print(f"initial: {state.space_x.n_elements} spatial elements, rank {state.rank}")
print(f"{'t':>6} {'elements':>9} {'rank':>5}")


def watch(i, t, report):
    print(f"{t:6.3f} {report.state.space_x.n_elements:9d} {report.state.rank:5d}")


final = run(state, config, t_final=0.2, callbacks=[watch], observe_stride=10)
print(f"\nfinal: {final.space_x.n_elements} elements "
      f"(refined around the bump), rank {final.rank}")
