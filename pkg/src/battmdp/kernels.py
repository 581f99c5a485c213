"""Flat-array simulation kernels with compiled/pure-Python backend selection.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
line-for-line Python mirror in ``_pykernels`` is used.  Setting the
environment variable ``BATTMDP_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import _pykernels

if os.environ.get("BATTMDP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

STATUS_OK = _pykernels.STATUS_OK
STATUS_CUTOFF = _pykernels.STATUS_CUTOFF
STATUS_NONFINITE = _pykernels.STATUS_NONFINITE
STATUS_NO_BRANCH = _pykernels.STATUS_NO_BRANCH


def backends() -> dict:
    """All importable kernel implementations, keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


@dataclass
class PackArrays:
    """Pack parameters and state as contiguous arrays (cells ordered branch-major).

    Cells with fewer RC pairs than the widest cell are padded with R=0, tau=1,
    which contributes nothing to the voltage.
    """

    cellp: np.ndarray  # (nc, 7): R0, Q, gamma, M, M0, eta_c, eta_d
    rrc: np.ndarray  # (nc, nrc)
    tau: np.ndarray  # (nc, nrc)
    ocv_soc: np.ndarray
    ocv_v: np.ndarray
    rc_sign: float
    split_ocv: int
    nb: int
    ns: int
    z: np.ndarray
    ir: np.ndarray
    h: np.ndarray
    s: np.ndarray
    sw: np.ndarray  # int32

    @classmethod
    def from_pack(cls, pack, options=None) -> "PackArrays":
        from .battery import DEFAULT_OPTIONS

        options = options or DEFAULT_OPTIONS
        cells = [c for branch in pack.branches for c in branch]
        ns_set = {len(b) for b in pack.branches}
        if len(ns_set) != 1:
            raise ValueError("all branches must have the same number of series cells")
        curve = cells[0].params.ocv
        if any(c.params.ocv != curve for c in cells):
            raise ValueError("flat-array kernels need one OCV curve shared by every cell")
        nc = len(cells)
        nrc = max(max(len(c.params.rc_pairs) for c in cells), 1)
        cellp = np.empty((nc, 7))
        rrc = np.zeros((nc, nrc))
        tau = np.ones((nc, nrc))
        ir = np.zeros((nc, nrc))
        for k, c in enumerate(cells):
            p = c.params
            cellp[k] = (p.R0, p.Q, p.gamma, p.M, p.M0, p.eta_charge, p.eta_discharge)
            for j, (r, cap) in enumerate(p.rc_pairs):
                rrc[k, j] = r
                tau[k, j] = r * cap
                ir[k, j] = c.state.i_r[j]
        return cls(
            cellp=cellp,
            rrc=rrc,
            tau=tau,
            ocv_soc=np.asarray(curve.soc, dtype=float),
            ocv_v=np.asarray(curve.voltage, dtype=float),
            rc_sign=1.0 if options.literal_rc_sign else -1.0,
            split_ocv=int(options.split_voltage == "ocv"),
            nb=pack.n_branches,
            ns=ns_set.pop(),
            z=np.array([c.state.z for c in cells], dtype=float),
            ir=ir,
            h=np.array([c.state.h for c in cells], dtype=float),
            s=np.array([c.state.s for c in cells], dtype=float),
            sw=np.array(pack.switches, dtype=np.int32),
        )

    def to_pack(self, pack):
        """Copy the array state back into a PackState with the same structure."""
        from .battery import Cell, CellState

        branches = []
        k = 0
        for branch in pack.branches:
            cells = []
            for c in branch:
                n_rc = len(c.params.rc_pairs)
                state = CellState(z=float(self.z[k]), i_r=tuple(self.ir[k, :n_rc]),
                                  h=float(self.h[k]), s=float(self.s[k]))
                cells.append(Cell(c.params, state))
                k += 1
            branches.append(tuple(cells))
        return replace(pack, branches=tuple(branches), switches=tuple(bool(v) for v in self.sw))

    def copy(self) -> "PackArrays":
        return replace(self, z=self.z.copy(), ir=self.ir.copy(), h=self.h.copy(),
                       s=self.s.copy(), sw=self.sw.copy())

    def set_switches(self, switches) -> None:
        self.sw[:] = [int(bool(v)) for v in switches]

    def cell_voltages(self, branch_currents) -> np.ndarray:
        """Terminal voltage of every cell (nb x ns) at the given branch currents."""
        oc = np.interp(self.z, self.ocv_soc, self.ocv_v)
        pol = np.sum(self.rrc * self.ir, axis=1)
        veff = oc + self.cellp[:, 4] * self.s + self.cellp[:, 3] * self.h + self.rc_sign * pol
        ib = np.repeat(np.asarray(branch_currents, dtype=float), self.ns)
        return (veff - self.cellp[:, 0] * ib).reshape(self.nb, self.ns)

    def _args(self):
        return (self.cellp, self.rrc, self.tau, self.ocv_soc, self.ocv_v, self.rc_sign,
                self.split_ocv, self.nb, self.ns, self.z, self.ir, self.h, self.s, self.sw)


def forward_eod(arrays: PackArrays, i_pred: float, dt: float, cutoff: float, horizon: float,
                impl=None) -> tuple[list[float], float]:
    """Per-branch and pack EOD at constant demand; ``arrays`` is not modified."""
    impl = impl or _impl
    work = arrays.copy()
    eod = np.empty(arrays.nb)
    pack = impl.forward_eod(*work._args(), float(i_pred), float(dt), float(cutoff), float(horizon), eod)
    return [float(v) for v in eod], float(pack)


def pack_run(arrays: PackArrays, currents, dt: float, impl=None):
    """Advance ``arrays`` in place through a current profile.

    Returns (log, status, soc_clamps) where log rows are
    [bus, i_branch..., v_cell...] for each completed step.
    """
    impl = impl or _impl
    currents = np.ascontiguousarray(currents, dtype=float)
    log = np.zeros((currents.shape[0], 1 + arrays.nb + arrays.nb * arrays.ns))
    done, status, n_clamp = impl.pack_run(*arrays._args(), currents, float(dt), log)
    return log[:done], status, n_clamp


def run_ticks(ctrl, x, ref, noise, wind, arrays: PackArrays, bus_io, cutoff, t0, dt, impl=None):
    """Closed-loop flight ticks; see ``_pykernels.run_ticks`` for the log layout.

    ``ctrl`` is a tuple (Ad, Bd, Ed, K, mix, pinv, veh).  ``x``, ``bus_io`` and
    the pack arrays are updated in place.
    """
    impl = impl or _impl
    n = ref.shape[0]
    log = np.zeros((n, log_width(arrays.nb)))
    done, status, n_sat, n_clamp = impl.run_ticks(*ctrl, x, ref, noise, wind, *arrays._args(),
                                                   bus_io, float(cutoff), float(t0), float(dt), log)
    return log[:done], status, n_sat, n_clamp


def log_width(nb: int) -> int:
    return 3 + 3 * nb + 18
