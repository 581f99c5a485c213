"""Compare compiled and pure-Python simulation kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Runs the three hot kernels (pack stepping, forward EOD, closed-loop flight
ticks) on identical inputs with each available backend, checks the outputs
agree, and prints timings.
"""

import argparse
import time

import numpy as np

from battmdp import kernels
from battmdp.battery import Grade
from battmdp.montecarlo import FlightScenario, Simulator


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(sim):
    sc = FlightScenario(health=(Grade.F1, Grade.F3), mission_duration=60.0)
    pack = sim.build(sc)
    arrays = kernels.PackArrays.from_pack(pack, sim.options)
    currents = np.full(2000, 30.0)
    ref = np.zeros((200, 12))
    ref[:, 2] = 5.0
    noise = np.random.default_rng(0).standard_normal((200, 12)) * sim.vehicle.noise_std
    wind = np.zeros((200, 3))

    def run_pack(impl):
        return lambda: kernels.pack_run(arrays.copy(), currents, 0.005, impl)[0]

    def run_eod(impl):
        return lambda: np.array(kernels.forward_eod(arrays, 30.0, 1.0, 3.3, 3600.0, impl)[0])

    def run_ticks(impl):
        def f():
            bus = np.array([pack.bus_voltage])
            return kernels.run_ticks(sim.ctrl, np.zeros(12), ref, noise, wind, arrays.copy(), bus,
                                     3.3, 0.0, sim.dt, impl)[0]
        return f

    return {"pack_run (2000 steps)": run_pack, "forward_eod (30 A)": run_eod,
            "run_ticks (1 s flight)": run_ticks}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    sim = Simulator()
    impls = kernels.backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    print(f"{'kernel':<26}" + "".join(f"{name:>12}" for name in impls) + "     speedup  max|diff|")
    for label, make in cases(sim).items():
        times, outs = {}, {}
        for name, impl in impls.items():
            times[name], outs[name] = _time(make(impl), args.repeat)
        line = f"{label:<26}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in impls)
        if "cython" in impls:
            diff = float(np.max(np.abs(outs["cython"] - outs["python"])))
            line += f"  {times['python'] / times['cython']:9.1f}x  {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
