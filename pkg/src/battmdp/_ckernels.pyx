# cython: language_level=3
"""Compiled simulation kernels; same algorithms as ``_pykernels.py``."""

from libc.math cimport exp, fabs, cos, sqrt, floor, isfinite, M_PI
from libc.stdlib cimport malloc, free

cdef int STATUS_OK = 0
cdef int STATUS_CUTOFF = 1
cdef int STATUS_NONFINITE = 2
cdef int STATUS_NO_BRANCH = 3

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _ocv(const double[::1] xs, const double[::1] ys, double z) noexcept nogil:
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t j = 0
    if z <= xs[0]:
        return ys[0]
    if z >= xs[n - 1]:
        return ys[n - 1]
    while z >= xs[j + 1]:
        j += 1
    return (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]) * (z - xs[j]) + ys[j]


cdef struct PackWork:
    int nb
    int ns
    int nc
    int nrc
    double rc_sign
    int split_ocv
    double bus
    long n_clamp
    double* veff
    double* vcell
    double* ib
    double* vbr
    double* rbr
    double* F


cdef int _alloc(PackWork* p, int nb, int ns, int nrc, double rc_sign, int split_ocv) noexcept nogil:
    p.nb = nb
    p.ns = ns
    p.nc = nb * ns
    p.nrc = nrc
    p.rc_sign = rc_sign
    p.split_ocv = split_ocv
    p.bus = 0.0
    p.n_clamp = 0
    p.veff = <double*> malloc(p.nc * sizeof(double))
    p.vcell = <double*> malloc(p.nc * sizeof(double))
    p.ib = <double*> malloc(nb * sizeof(double))
    p.vbr = <double*> malloc(nb * sizeof(double))
    p.rbr = <double*> malloc(nb * sizeof(double))
    p.F = <double*> malloc(p.nc * nrc * sizeof(double))
    return 0


cdef void _release(PackWork* p) noexcept nogil:
    free(p.veff)
    free(p.vcell)
    free(p.ib)
    free(p.vbr)
    free(p.rbr)
    free(p.F)


cdef void _factors(PackWork* p, const double[:, ::1] tau, double dt) noexcept nogil:
    cdef int c, k
    for c in range(p.nc):
        for k in range(p.nrc):
            p.F[c * p.nrc + k] = exp(-dt / tau[c, k])


cdef int _tick(PackWork* p, const double[:, ::1] cellp, const double[:, ::1] rrc,
               const double[::1] xs, const double[::1] ys,
               double[::1] z, double[:, ::1] ir, double[::1] h, double[::1] s,
               const int[::1] sw, double i_total, double dt) noexcept nogil:
    cdef int nb = p.nb, ns = p.ns, nrc = p.nrc
    cdef int j, m, c, k, n_on = 0
    cdef double g = 0.0, vg = 0.0, v, r, pol, oc, ve, bus, i, eta, zz, a_h, sgn, f
    for j in range(nb):
        v = 0.0
        r = 0.0
        for m in range(ns):
            c = j * ns + m
            pol = 0.0
            for k in range(nrc):
                pol += rrc[c, k] * ir[c, k]
            oc = _ocv(xs, ys, z[c])
            ve = oc + cellp[c, 4] * s[c] + cellp[c, 3] * h[c] + p.rc_sign * pol
            p.veff[c] = ve
            if p.split_ocv:
                v += oc
            else:
                v += ve
            r += cellp[c, 0]
        p.vbr[j] = v
        p.rbr[j] = r
        if sw[j]:
            g += 1.0 / r
            vg += v / r
            n_on += 1
    if n_on == 0:
        if i_total != 0.0:
            return STATUS_NO_BRANCH
        p.bus = 0.0
        for j in range(nb):
            p.ib[j] = 0.0
    else:
        bus = (vg - i_total) / g
        p.bus = bus
        for j in range(nb):
            if sw[j]:
                p.ib[j] = (p.vbr[j] - bus) / p.rbr[j]
            else:
                p.ib[j] = 0.0
    for j in range(nb):
        i = p.ib[j]
        for m in range(ns):
            c = j * ns + m
            p.vcell[c] = p.veff[c] - cellp[c, 0] * i
            if i >= 0:
                eta = cellp[c, 6]
            else:
                eta = cellp[c, 5]
            for k in range(nrc):
                f = p.F[c * nrc + k]
                ir[c, k] = f * ir[c, k] + (1.0 - f) * i
            zz = z[c] - eta * dt * i / cellp[c, 1]
            if zz < 0.0:
                zz = 0.0
                p.n_clamp += 1
            elif zz > 1.0:
                zz = 1.0
                p.n_clamp += 1
            z[c] = zz
            a_h = exp(-fabs(eta * i * cellp[c, 2] * dt / cellp[c, 1]))
            sgn = <double> ((i > 0) - (i < 0))
            h[c] = a_h * h[c] + (a_h - 1.0) * sgn
            if i != 0.0:
                s[c] = sgn
    return STATUS_OK


def pack_run(const double[:, ::1] cellp, const double[:, ::1] rrc, const double[:, ::1] tau,
             const double[::1] ocv_soc, const double[::1] ocv_v, double rc_sign, int split_ocv,
             int nb, int ns, double[::1] z, double[:, ::1] ir, double[::1] h, double[::1] s,
             const int[::1] sw, const double[::1] currents, double dt, double[:, ::1] log):
    cdef PackWork p
    cdef int st = STATUS_OK, j, c
    cdef Py_ssize_t k, n = currents.shape[0], done = 0
    _alloc(&p, nb, ns, rrc.shape[1], rc_sign, split_ocv)
    _factors(&p, tau, dt)
    with nogil:
        for k in range(n):
            st = _tick(&p, cellp, rrc, ocv_soc, ocv_v, z, ir, h, s, sw, currents[k], dt)
            if st != STATUS_OK:
                break
            log[k, 0] = p.bus
            for j in range(nb):
                log[k, 1 + j] = p.ib[j]
            for c in range(p.nc):
                log[k, 1 + nb + c] = p.vcell[c]
            done += 1
    n_clamp = p.n_clamp
    _release(&p)
    return done, st, n_clamp


def forward_eod(const double[:, ::1] cellp, const double[:, ::1] rrc, const double[:, ::1] tau,
                const double[::1] ocv_soc, const double[::1] ocv_v, double rc_sign, int split_ocv,
                int nb, int ns, double[::1] z, double[:, ::1] ir, double[::1] h, double[::1] s,
                const int[::1] sw, double i_pred, double dt, double cutoff, double horizon,
                double[::1] eod):
    cdef PackWork p
    cdef int j, m, n_left = 0
    cdef long k = 0
    cdef double t, pack
    cdef int* found = <int*> malloc(nb * sizeof(int))
    _alloc(&p, nb, ns, rrc.shape[1], rc_sign, split_ocv)
    _factors(&p, tau, dt)
    with nogil:
        for j in range(nb):
            eod[j] = horizon
            if sw[j] and i_pred > 0.0:
                found[j] = 0
                n_left += 1
            else:
                found[j] = 1
        while n_left > 0:
            t = k * dt
            if t >= horizon:
                break
            if _tick(&p, cellp, rrc, ocv_soc, ocv_v, z, ir, h, s, sw, i_pred, dt) != STATUS_OK:
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
            if sw[j] and eod[j] < pack:
                pack = eod[j]
    free(found)
    _release(&p)
    return pack


def run_ticks(const double[:, ::1] Ad, const double[:, ::1] Bd, const double[:, ::1] Ed,
              const double[:, ::1] K, const double[:, ::1] mix, const double[:, ::1] pinv,
              const double[::1] veh, double[::1] x, const double[:, ::1] ref,
              const double[:, ::1] noise, const double[:, ::1] wind,
              const double[:, ::1] cellp, const double[:, ::1] rrc, const double[:, ::1] tau,
              const double[::1] ocv_soc, const double[::1] ocv_v, double rc_sign, int split_ocv,
              int nb, int ns, double[::1] z, double[:, ::1] ir, double[::1] h, double[::1] s,
              const int[::1] sw, double[::1] bus_io, double cutoff, double t0, double dt,
              double[:, ::1] log):
    cdef PackWork p
    cdef double mass = veh[0], g = veh[1], omega_max = veh[2]
    cdef double a2 = veh[3], a1 = veh[4], a0 = veh[5], v_nom = veh[6], hotel = veh[7]
    cdef double tilt_floor = veh[8]
    cdef double w2max = omega_max * omega_max
    cdef double bus_prev = bus_io[0]
    cdef Py_ssize_t n = ref.shape[0], k, done = 0
    cdef int c_pos = 3 + 3 * nb
    cdef double meas[12]
    cdef double err[12]
    cdef double xs[12]
    cdef double xn[12]
    cdef double u[4]
    cdef double wr[4]
    cdef double ach[4]
    cdef double ua[4]
    cdef double w2[6]
    cdef double acc, tilt, i_motor, om, im, i_total, zmin, vmin, v
    cdef int i, j, r, m, c, sat, cut, st = STATUS_OK, status = STATUS_OK
    cdef bint finite
    cdef long n_sat = 0
    _alloc(&p, nb, ns, rrc.shape[1], rc_sign, split_ocv)
    _factors(&p, tau, dt)
    for i in range(12):
        xs[i] = x[i]
    with nogil:
        for k in range(n):
            for i in range(12):
                meas[i] = xs[i] + noise[k, i]
                err[i] = meas[i] - ref[k, i]
            for r in range(4):
                acc = 0.0
                for i in range(12):
                    acc += K[r, i] * err[i]
                u[r] = -acc
            tilt = cos(meas[6]) * cos(meas[7])
            if tilt < tilt_floor:
                tilt = tilt_floor
            wr[0] = (mass * g + u[0]) / tilt
            wr[1] = u[1]
            wr[2] = u[2]
            wr[3] = u[3]
            sat = 0
            for m in range(6):
                acc = 0.0
                for r in range(4):
                    acc += pinv[m, r] * wr[r]
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
                for m in range(6):
                    acc += mix[r, m] * w2[m]
                ach[r] = acc
            ua[0] = ach[0] * (cos(xs[6]) * cos(xs[7])) - mass * g
            ua[1] = ach[1]
            ua[2] = ach[2]
            ua[3] = ach[3]
            for i in range(12):
                acc = 0.0
                for j in range(12):
                    acc += Ad[i, j] * xs[j]
                for r in range(4):
                    acc += Bd[i, r] * ua[r]
                for r in range(3):
                    acc += Ed[i, r] * wind[k, r]
                xn[i] = acc
            i_motor = 0.0
            for m in range(6):
                om = sqrt(w2[m])
                im = a2 * w2[m] + a1 * om + a0
                if im < 0.0:
                    im = 0.0
                i_motor += im
                log[k, c_pos + 10 + m] = om
            i_total = i_motor * v_nom / bus_prev + hotel
            st = _tick(&p, cellp, rrc, ocv_soc, ocv_v, z, ir, h, s, sw, i_total, dt)
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
                    if z[c] < zmin:
                        zmin = z[c]
                log[k, 3 + nb + j] = zmin
                log[k, 3 + 2 * nb + j] = vmin
                if sw[j] and vmin <= cutoff:
                    cut = 1
            for i in range(3):
                log[k, c_pos + i] = xs[i]
                log[k, c_pos + 3 + i] = ref[k, i]
            log[k, c_pos + 6] = ach[0]
            log[k, c_pos + 7] = ach[1]
            log[k, c_pos + 8] = ach[2]
            log[k, c_pos + 9] = ach[3]
            log[k, c_pos + 16] = i_motor
            log[k, c_pos + 17] = sat
            finite = True
            for i in range(12):
                v = xn[i]
                if not isfinite(v):
                    finite = False
                if 6 <= i <= 8:
                    v = v - TWO_PI * floor((v + M_PI) / TWO_PI)
                    if v == -M_PI:
                        v = M_PI
                xs[i] = v
            done += 1
            if not finite or not isfinite(i_total):
                status = STATUS_NONFINITE
                break
            if cut:
                status = STATUS_CUTOFF
                break
    for i in range(12):
        x[i] = xs[i]
    bus_io[0] = bus_prev
    n_clamp = p.n_clamp
    _release(&p)
    return done, status, n_sat, n_clamp
