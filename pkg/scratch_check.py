"""Dev scratch: adjudicate closed forms vs generic engine."""
import numpy as np

from twoscale import (StateStack, abar_k, abar0, build_profile, make_regime,
                      spatial_trig_field, theta_harmonic_field, shear_field,
                      constant_field, validate_system, QuadratureConfig)

rng = np.random.default_rng(7)


def check(kind, field, k, n=5, label=""):
    reg = make_regime(kind, field)
    worst = 0.0
    for _ in range(n):
        stack = reg.sample_stack(rng, k)
        closed = reg.rhs(k, stack.t, np.stack(stack.ys))
        prof = build_profile(reg.system, stack, reg.quad, reg.fd)
        gen = prof.abar(k)
        dev = np.max(np.abs(closed - gen)) / max(np.max(np.abs(closed)), 1e-9)
        worst = max(worst, dev)
    print(f"{kind} k={k} {label}: rel dev {worst:.3e}")
    return worst


print("== flow validation ==")
for kind, field in [("irs_const", theta_harmonic_field(1.0, chi=0.2)),
                    ("gc_const", spatial_trig_field(1.0)),
                    ("flr_const", shear_field(1.0))]:
    reg = make_regime(kind, field)
    print(kind, validate_system(reg.system, rng=1))

reg = make_regime("gc_variable", constant_field([0.1, 0.2, 0.3]))
print("gc_variable", validate_system(reg.system, rng=1,
                                     sampler=lambda r: (r.uniform(0, 1), r.uniform(0, 6.28),
                                                        reg.sample_state(r))))

print("== rhs crosschecks ==")
check("gc_const", spatial_trig_field(1.0), 0)
check("gc_const", spatial_trig_field(1.0), 1)
check("irs_const", theta_harmonic_field(1.0, chi=0.2), 0)
check("irs_const", theta_harmonic_field(1.0, chi=0.2), 1)
check("flr_const", shear_field(1.0), 0)
check("gc_variable", constant_field([0.1, 0.2, 0.3]), 0)
check("gc_const", spatial_trig_field(1.0, time_mod=(0.3, 2.0)), 1, label="time-dep")
check("irs_const", theta_harmonic_field(1.0, chi=0.2, time_mod=(0.3, 2.0)), 1, label="time-dep")
