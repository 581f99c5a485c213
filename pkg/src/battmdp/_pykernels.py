"""Pure-Python simulation kernels.

Line-for-line mirror of ``_ckernels.pyx``; used when the compiled extension
is unavailable (or forced with ``BATTMDP_PURE_PYTHON=1``).  Arrays come in as
numpy buffers, are converted to lists for the inner loops, and are written
back in place on exit.

Cell parameter columns: R0, Q, gamma, M, M0, eta_charge, eta_discharge.
Vehicle parameter vector: mass, g, omega_max, a2, a1, a0, v_nominal,
hotel_current, min_tilt_cos.
"""

import math

STATUS_OK = 0
STATUS_CUTOFF = 1
STATUS_NONFINITE = 2
STATUS_NO_BRANCH = 3

TWO_PI = 2.0 * math.pi


def _ocv(xs, ys, z):
    n = len(xs)
    if z <= xs[0]:
        return ys[0]
    if z >= xs[n - 1]:
        return ys[n - 1]
    j = 0
    while z >= xs[j + 1]:
        j += 1
    return (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]) * (z - xs[j]) + ys[j]


class _Pack:
    """List-backed working copy of the pack arrays."""

    def __init__(self, cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns, z, ir, h, s, sw):
        self.nb = nb
        self.ns = ns
        self.nc = nb * ns
        self.nrc = rrc.shape[1]
        cp = cellp.tolist()
        self.R0 = [row[0] for row in cp]
        self.Q = [row[1] for row in cp]
        self.gamma = [row[2] for row in cp]
        self.M = [row[3] for row in cp]
        self.M0 = [row[4] for row in cp]
        self.eta_c = [row[5] for row in cp]
        self.eta_d = [row[6] for row in cp]
        self.rrc = rrc.tolist()
        self.tau = tau.tolist()
        self.xs = ocv_soc.tolist()
        self.ys = ocv_v.tolist()
        self.rc_sign = rc_sign
        self.split_ocv = split_ocv
        self.z = z.tolist()
        self.ir = ir.tolist()
        self.h = h.tolist()
        self.s = s.tolist()
        self.sw = [int(v) for v in sw]
        self.veff = [0.0] * self.nc
        self.vcell = [0.0] * self.nc
        self.ib = [0.0] * nb
        self.bus = 0.0
        self.n_clamp = 0

    def factors(self, dt):
        return [[math.exp(-dt / self.tau[c][k]) for k in range(self.nrc)] for c in range(self.nc)]

    def write_back(self, z, ir, h, s):
        for c in range(self.nc):
            z[c] = self.z[c]
            h[c] = self.h[c]
            s[c] = self.s[c]
            for k in range(self.nrc):
                ir[c, k] = self.ir[c][k]

    def tick(self, i_total, dt, F):
        nb, ns = self.nb, self.ns
        g = 0.0
        vg = 0.0
        n_on = 0
        vbr = [0.0] * nb
        rbr = [0.0] * nb
        for j in range(nb):
            v = 0.0
            r = 0.0
            for m in range(ns):
                c = j * ns + m
                pol = 0.0
                for k in range(self.nrc):
                    pol += self.rrc[c][k] * self.ir[c][k]
                oc = _ocv(self.xs, self.ys, self.z[c])
                ve = oc + self.M0[c] * self.s[c] + self.M[c] * self.h[c] + self.rc_sign * pol
                self.veff[c] = ve
                if self.split_ocv:
                    v += oc
                else:
                    v += ve
                r += self.R0[c]
            vbr[j] = v
            rbr[j] = r
            if self.sw[j]:
                g += 1.0 / r
                vg += v / r
                n_on += 1
        if n_on == 0:
            if i_total != 0.0:
                return STATUS_NO_BRANCH
            self.bus = 0.0
            for j in range(nb):
                self.ib[j] = 0.0
        else:
            bus = (vg - i_total) / g
            self.bus = bus
            for j in range(nb):
                if self.sw[j]:
                    self.ib[j] = (vbr[j] - bus) / rbr[j]
                else:
                    self.ib[j] = 0.0
        for j in range(nb):
            i = self.ib[j]
            for m in range(ns):
                c = j * ns + m
                self.vcell[c] = self.veff[c] - self.R0[c] * i
                if i >= 0:
                    eta = self.eta_d[c]
                else:
                    eta = self.eta_c[c]
                irc = self.ir[c]
                Fc = F[c]
                for k in range(self.nrc):
                    irc[k] = Fc[k] * irc[k] + (1.0 - Fc[k]) * i
                z = self.z[c] - eta * dt * i / self.Q[c]
                if z < 0.0:
                    z = 0.0
                    self.n_clamp += 1
                elif z > 1.0:
                    z = 1.0
                    self.n_clamp += 1
                self.z[c] = z
                a_h = math.exp(-abs(eta * i * self.gamma[c] * dt / self.Q[c]))
                sgn = float((i > 0) - (i < 0))
                self.h[c] = a_h * self.h[c] + (a_h - 1.0) * sgn
                if i != 0.0:
                    self.s[c] = sgn
        return STATUS_OK


def pack_run(cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns,
             z, ir, h, s, sw, currents, dt, log):
    """Step the pack through a current profile; log rows are [bus, ib..., vcell...]."""
    p = _Pack(cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns, z, ir, h, s, sw)
    F = p.factors(dt)
    n = currents.shape[0]
    status = STATUS_OK
    done = 0
    for k in range(n):
        status = p.tick(float(currents[k]), dt, F)
        if status != STATUS_OK:
            break
        log[k, 0] = p.bus
        for j in range(nb):
            log[k, 1 + j] = p.ib[j]
        for c in range(p.nc):
            log[k, 1 + nb + c] = p.vcell[c]
        done += 1
    p.write_back(z, ir, h, s)
    return done, status, p.n_clamp


def forward_eod(cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns,
                z, ir, h, s, sw, i_pred, dt, cutoff, horizon, eod):
    """Constant-current forward simulation; fills ``eod`` per branch, returns pack EOD."""
    p = _Pack(cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns, z, ir, h, s, sw)
    found = [0] * nb
    n_left = 0
    for j in range(nb):
        eod[j] = horizon
        if p.sw[j] and i_pred > 0.0:
            n_left += 1
        else:
            found[j] = 1
    F = p.factors(dt)
    k = 0
    while n_left > 0:
        t = k * dt
        if t >= horizon:
            break
        if p.tick(i_pred, dt, F) != STATUS_OK:
            break
        for j in range(nb):
            if found[j]:
                continue
            for m in range(ns):
                if p.vcell[j * ns + m] <= cutoff:
                    eod[j] = t
                    found[j] = 1
                    n_left -= 1
                    break
        k += 1
    pack = horizon
    for j in range(nb):
        if p.sw[j] and eod[j] < pack:
            pack = eod[j]
    return pack


def run_ticks(Ad, Bd, Ed, K, mix, pinv, veh, x, ref, noise, wind,
              cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns,
              z, ir, h, s, sw, bus_io, cutoff, t0, dt, log):
    """Closed-loop vehicle + pack simulation over ``ref.shape[0]`` control ticks.

    Returns (ticks_done, status, saturated_ticks, soc_clamps).
    """
    p = _Pack(cellp, rrc, tau, ocv_soc, ocv_v, rc_sign, split_ocv, nb, ns, z, ir, h, s, sw)
    F = p.factors(dt)
    A = Ad.tolist()
    B = Bd.tolist()
    E = Ed.tolist()
    Kl = K.tolist()
    Mx = mix.tolist()
    Pv = pinv.tolist()
    mass, g, omega_max, a2, a1, a0, v_nom, hotel, tilt_floor = veh.tolist()
    w2max = omega_max * omega_max
    xs = x.tolist()
    bus_prev = float(bus_io[0])
    n = ref.shape[0]
    c_pos = 3 + 3 * nb
    meas = [0.0] * 12
    err = [0.0] * 12
    u = [0.0] * 4
    wr = [0.0] * 4
    w2 = [0.0] * 6
    ach = [0.0] * 4
    ua = [0.0] * 4
    xn = [0.0] * 12
    status = STATUS_OK
    n_sat = 0
    done = 0
    for k in range(n):
        rk = ref[k].tolist()
        nk = noise[k].tolist()
        wk = wind[k].tolist()
        for i in range(12):
            meas[i] = xs[i] + nk[i]
            err[i] = meas[i] - rk[i]
        for r in range(4):
            acc = 0.0
            Kr = Kl[r]
            for i in range(12):
                acc += Kr[i] * err[i]
            u[r] = -acc
        tilt = math.cos(meas[6]) * math.cos(meas[7])
        if tilt < tilt_floor:
            tilt = tilt_floor
        wr[0] = (mass * g + u[0]) / tilt
        wr[1] = u[1]
        wr[2] = u[2]
        wr[3] = u[3]
        sat = 0
        for m in range(6):
            acc = 0.0
            Pm = Pv[m]
            for r in range(4):
                acc += Pm[r] * wr[r]
            if acc < 0.0:
                acc = 0.0
                sat = 1
            elif acc > w2max:
                acc = w2max
                sat = 1
            w2[m] = acc
        n_sat += sat
        for r in range(4):
            acc = 0.0
            Mr = Mx[r]
            for m in range(6):
                acc += Mr[m] * w2[m]
            ach[r] = acc
        ua[0] = ach[0] * (math.cos(xs[6]) * math.cos(xs[7])) - mass * g
        ua[1] = ach[1]
        ua[2] = ach[2]
        ua[3] = ach[3]
        for i in range(12):
            acc = 0.0
            Ai = A[i]
            for j in range(12):
                acc += Ai[j] * xs[j]
            Bi = B[i]
            for r in range(4):
                acc += Bi[r] * ua[r]
            Ei = E[i]
            for r in range(3):
                acc += Ei[r] * wk[r]
            xn[i] = acc
        i_motor = 0.0
        for m in range(6):
            om = math.sqrt(w2[m])
            im = a2 * w2[m] + a1 * om + a0
            if im < 0.0:
                im = 0.0
            i_motor += im
            log[k, c_pos + 10 + m] = om
        i_total = i_motor * v_nom / bus_prev + hotel
        st = p.tick(i_total, dt, F)
        if st != STATUS_OK:
            status = st
            break
        bus_prev = p.bus
        log[k, 0] = t0 + k * dt
        log[k, 1] = p.bus
        log[k, 2] = i_total
        cut = 0
        for j in range(nb):
            log[k, 3 + j] = p.ib[j]
            zmin = 2.0
            vmin = 1e300
            for m in range(ns):
                c = j * ns + m
                if p.vcell[c] < vmin:
                    vmin = p.vcell[c]
                if p.z[c] < zmin:
                    zmin = p.z[c]
            log[k, 3 + nb + j] = zmin
            log[k, 3 + 2 * nb + j] = vmin
            if p.sw[j] and vmin <= cutoff:
                cut = 1
        for i in range(3):
            log[k, c_pos + i] = xs[i]
            log[k, c_pos + 3 + i] = rk[i]
        log[k, c_pos + 6] = ach[0]
        log[k, c_pos + 7] = ach[1]
        log[k, c_pos + 8] = ach[2]
        log[k, c_pos + 9] = ach[3]
        log[k, c_pos + 16] = i_motor
        log[k, c_pos + 17] = sat
        finite = True
        for i in range(12):
            v = xn[i]
            if not math.isfinite(v):
                finite = False
            if 6 <= i <= 8:
                v = v - TWO_PI * math.floor((v + math.pi) / TWO_PI)
                if v == -math.pi:
                    v = math.pi
            xs[i] = v
        done += 1
        if not finite or not math.isfinite(i_total):
            status = STATUS_NONFINITE
            break
        if cut:
            status = STATUS_CUTOFF
            break
    for i in range(12):
        x[i] = xs[i]
    bus_io[0] = bus_prev
    p.write_back(z, ir, h, s)
    return done, status, n_sat, p.n_clamp
