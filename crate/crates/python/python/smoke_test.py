"""Quick end-to-end check of the Python bindings.

Build and install the extension first, e.g. `maturin develop -m crates/python/Cargo.toml`,
or put the compiled shared library on PYTHONPATH as `brownian_manifold.so`.
"""

import math

import brownian_manifold as bm


def check(name, ok, detail=""):
    print(f"[{'ok' if ok else 'FAIL'}] {name} {detail}")
    if not ok:
        raise SystemExit(1)


def main():
    s2 = bm.Manifold("sphere:3")
    check("sphere dims", (s2.dim, s2.ambient_dim) == (2, 3))

    paths = bm.simulate_bm("sphere:3", horizon=1.0, dt=1e-3, paths=10, seed=1)
    again = bm.simulate_bm("sphere:3", horizon=1.0, dt=1e-3, paths=10, seed=1)
    check("bm is deterministic", [p.coords for p in paths] == [p.coords for p in again])
    worst = max(p.max_membership_defect() for p in paths)
    check("bm stays on the sphere", worst <= 1e-9, f"defect={worst:.1e}")

    q = s2.exp([0.0, 0.0, 1.0], [0.3, -0.2, 0.0])
    v = s2.log([0.0, 0.0, 1.0], q)
    check("exp/log round trip", max(abs(a - b) for a, b in zip(v, [0.3, -0.2, 0.0])) < 1e-12)

    plane = bm.simulate_bm("euclidean:2", dt=1e-2, seed=3)[0]
    rolled = bm.develop_onto_sphere(plane.times, plane.coords, 3)
    back = bm.antidevelop_from_sphere(rolled)
    err = max(abs(a - b) for x, y in zip(plane.coords, back.coords) for a, b in zip(x, y))
    check("develop/antidevelop round trip", err < 1e-8, f"err={err:.1e}")

    t, b = bm.brownian_on_grid(1.0, 100_000, seed=4)
    qv = bm.quadratic_variation(b)
    check("quadratic variation ≈ T", abs(qv - 1.0) < 0.02, f"qv={qv:.4f}")
    gap = bm.stratonovich(b, b) - bm.ito(b, b)
    check("strat − ito = qv/2", abs(gap - qv / 2) < 1e-12)

    c = [[0.3, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.1]]
    g = bm.expm([[0.0, -0.4, 0.0], [0.4, 0.0, 0.0], [0.0, 0.0, 0.0]])
    samples = bm.sample_brownian(g, c, 20_000, delta=1e-2, seed=9)
    report = bm.estimate(samples)
    c_err = max(abs(report["C_hat"][i][j] - c[i][j]) for i in range(3) for j in range(3))
    check("SO(3) covariance recovery", c_err < 0.02, f"max|Ĉ−C|={c_err:.4f}")

    try:
        bm.estimate([[[0.0, -1.0], [1.0, 0.0]], [[0.0, 1.0], [-1.0, 0.0]]])
    except bm.DegenerateError:
        check("degenerate samples raise", True)
    else:
        check("degenerate samples raise", False)

    (natural,) = bm.series("natural", 1_000_000)
    check("alternating harmonic → ln 2", abs(natural["final_sum"] - math.log(2)) < 1e-5)
    (target,) = bm.series("target", 1_000_000, target=5.0)
    check("rearrangement → 5", abs(target["final_sum"] - 5.0) < 1e-2)
    print("all checks passed")


if __name__ == "__main__":
    main()
