"""Numba kernels for the tile rasterizer.

Fragments are stored CSR-style: pixel p owns fragments offsets[p]:offsets[p+1],
in blending order (ascending center depth, ties by Gaussian index).
"""

import math

import numpy as np
from numba import njit

NEAR = 1e-4
CUTOFF2 = 9.0
PARALLEL_EPS = 1e-9


@njit(cache=True)
def _pixel_ray(Rw, fx, fy, cx, cy, row, col, d):
    xc = (col + 0.5 - cx) / fx
    yc = (row + 0.5 - cy) / fy
    for k in range(3):
        d[k] = Rw[0, k] * xc + Rw[1, k] * yc + Rw[2, k]


@njit(cache=True)
def bin_tiles(order, bbox, width, height, tile):
    """Per-tile Gaussian lists in blending order; bbox rows are (c0, c1, r0, r1), c0 > c1 means culled."""
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    counts = np.zeros(ntx * nty + 1, dtype=np.int64)
    for g in order:
        if bbox[g, 0] > bbox[g, 1] or bbox[g, 2] > bbox[g, 3]:
            continue
        for ty in range(bbox[g, 2] // tile, bbox[g, 3] // tile + 1):
            for tx in range(bbox[g, 0] // tile, bbox[g, 1] // tile + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[-1], dtype=np.int64)
    for g in order:
        if bbox[g, 0] > bbox[g, 1] or bbox[g, 2] > bbox[g, 3]:
            continue
        for ty in range(bbox[g, 2] // tile, bbox[g, 3] // tile + 1):
            for tx in range(bbox[g, 0] // tile, bbox[g, 1] // tile + 1):
                k = ty * ntx + tx
                ids[fill[k]] = g
                fill[k] += 1
    return offsets, ids


@njit(cache=True)
def _raster_pass(Rw, C, fx, fy, cx, cy, width, height, P, TU, TV, NR, SU, SV, OP, bbox,
                 tile_offsets, tile_ids, tile, t_min, store, offsets,
                 f_gid, f_w, f_G, f_z, f_T, f_u, f_v, f_sign):
    """Front-to-back walk of every pixel's tile list.

    With store=False returns per-pixel fragment counts; with store=True
    writes fragments starting at offsets[p].
    """
    ntx = (width + tile - 1) // tile
    counts = np.zeros(width * height + 1, dtype=np.int64)
    C0, C1, C2 = C[0], C[1], C[2]
    for row in range(height):
        yc = (row + 0.5 - cy) / fy
        for col in range(width):
            xc = (col + 0.5 - cx) / fx
            d0 = Rw[0, 0] * xc + Rw[1, 0] * yc + Rw[2, 0]
            d1 = Rw[0, 1] * xc + Rw[1, 1] * yc + Rw[2, 1]
            d2 = Rw[0, 2] * xc + Rw[1, 2] * yc + Rw[2, 2]
            dnorm = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            p = row * width + col
            tk = (row // tile) * ntx + col // tile
            base = offsets[p] if store else 0
            T = 1.0
            k = 0
            for j in range(tile_offsets[tk], tile_offsets[tk + 1]):
                g = tile_ids[j]
                if col < bbox[g, 0] or col > bbox[g, 1] or row < bbox[g, 2] or row > bbox[g, 3]:
                    continue
                denom = NR[g, 0] * d0 + NR[g, 1] * d1 + NR[g, 2] * d2
                if abs(denom) < PARALLEL_EPS * dnorm:
                    continue
                a0 = P[g, 0] - C0
                a1 = P[g, 1] - C1
                a2 = P[g, 2] - C2
                t = (NR[g, 0] * a0 + NR[g, 1] * a1 + NR[g, 2] * a2) / denom
                if t <= NEAR:
                    continue
                e0 = t * d0 - a0
                e1 = t * d1 - a1
                e2 = t * d2 - a2
                u = (TU[g, 0] * e0 + TU[g, 1] * e1 + TU[g, 2] * e2) / SU[g]
                v = (TV[g, 0] * e0 + TV[g, 1] * e1 + TV[g, 2] * e2) / SV[g]
                r2 = u * u + v * v
                if r2 > CUTOFF2:
                    continue
                G = math.exp(-0.5 * r2)
                alpha = OP[g] * G
                if store:
                    i = base + k
                    f_gid[i] = g
                    f_w[i] = alpha * T
                    f_G[i] = G
                    f_z[i] = t
                    f_T[i] = T
                    f_u[i] = u
                    f_v[i] = v
                    f_sign[i] = -1.0 if denom > 0 else 1.0
                k += 1
                T = T * (1.0 - alpha)
                if T < t_min:
                    break
            counts[p + 1] = k
    return counts


@njit(cache=True)
def rasterize(Rw, C, fx, fy, cx, cy, width, height, P, TU, TV, NR, SU, SV, OP, bbox,
              tile_offsets, tile_ids, tile, t_min):
    e_i = np.empty(0, dtype=np.int64)
    e_f = np.empty(0)
    counts = _raster_pass(Rw, C, fx, fy, cx, cy, width, height, P, TU, TV, NR, SU, SV, OP, bbox,
                          tile_offsets, tile_ids, tile, t_min, False, e_i,
                          e_i, e_f, e_f, e_f, e_f, e_f, e_f, e_f)
    offsets = np.cumsum(counts)
    nf = offsets[-1]
    f_gid = np.empty(nf, dtype=np.int64)
    f_w = np.empty(nf)
    f_G = np.empty(nf)
    f_z = np.empty(nf)
    f_T = np.empty(nf)
    f_u = np.empty(nf)
    f_v = np.empty(nf)
    f_sign = np.empty(nf)
    _raster_pass(Rw, C, fx, fy, cx, cy, width, height, P, TU, TV, NR, SU, SV, OP, bbox,
                 tile_offsets, tile_ids, tile, t_min, True, offsets,
                 f_gid, f_w, f_G, f_z, f_T, f_u, f_v, f_sign)
    return offsets, f_gid, f_w, f_G, f_z, f_T, f_u, f_v, f_sign


@njit(cache=True)
def pixel_maps(offsets, f_gid, f_w, f_z, f_T, f_sign, NR):
    """alpha, depth numerator, blended normal and median fragment index per pixel."""
    npix = len(offsets) - 1
    alpha = np.zeros(npix)
    dnum = np.zeros(npix)
    normal = np.zeros((npix, 3))
    median = -np.ones(npix, dtype=np.int64)
    for p in range(npix):
        deepest = -1
        for i in range(offsets[p], offsets[p + 1]):
            w = f_w[i]
            alpha[p] += w
            dnum[p] += w * f_z[i]
            g = f_gid[i]
            for k in range(3):
                normal[p, k] += w * f_sign[i] * NR[g, k]
            if median[p] < 0 and f_T[i] - w < 0.5:
                median[p] = i
            if deepest < 0 or f_z[i] > f_z[deepest]:
                deepest = i
        if median[p] < 0:
            median[p] = deepest
    return alpha, dnum, normal, median


@njit(cache=True)
def composite(offsets, f_gid, f_w, colors):
    npix = len(offsets) - 1
    out = np.zeros((npix, colors.shape[1]))
    for p in range(npix):
        for i in range(offsets[p], offsets[p + 1]):
            g = f_gid[i]
            w = f_w[i]
            for k in range(colors.shape[1]):
                out[p, k] += w * colors[g, k]
    return out


@njit(cache=True)
def backward(Rw, C, fx, fy, cx, cy, width, P, TU, TV, NR, SU, SV, OP, colors,
             offsets, f_gid, f_w, f_G, f_z, f_T, f_u, f_v, f_sign, alpha, dnum, median,
             g_color, g_alpha, g_ed, g_md, g_normal, g_fw, g_fz):
    n = P.shape[0]
    nc = colors.shape[1]
    dP = np.zeros((n, 3))
    dTU = np.zeros((n, 3))
    dTV = np.zeros((n, 3))
    dNR = np.zeros((n, 3))
    dlsu = np.zeros(n)
    dlsv = np.zeros(n)
    dlogit = np.zeros(n)
    dcol = np.zeros((n, nc))
    d = np.empty(3)
    npix = len(offsets) - 1
    for p in range(npix):
        start = offsets[p]
        stop = offsets[p + 1]
        if stop == start:
            continue
        row = p // width
        col = p % width
        _pixel_ray(Rw, fx, fy, cx, cy, row, col, d)
        A = alpha[p]
        if A > 1e-8:
            dD = g_ed[p] / A
            dA = g_alpha[p] - g_ed[p] * dnum[p] / (A * A)
        else:
            dD = g_ed[p] / 1e-8
            dA = g_alpha[p]
        S = 0.0
        for i in range(stop - 1, start - 1, -1):
            g = f_gid[i]
            s = f_sign[i]
            w = f_w[i]
            gw = dA + dD * f_z[i] + g_fw[i]
            for k in range(nc):
                gw += g_color[p, k] * colors[g, k]
                dcol[g, k] += g_color[p, k] * w
            for k in range(3):
                gw += g_normal[p, k] * s * NR[g, k]
            o = OP[g]
            G = f_G[i]
            a = o * G
            d_alpha = f_T[i] * (gw - S)
            S = gw * a + (1.0 - a) * S

            gz = dD * w + g_fz[i]
            if i == median[p]:
                gz += g_md[p]
            dlogit[g] += d_alpha * G * o * (1.0 - o)
            dG = d_alpha * o
            u = f_u[i]
            v = f_v[i]
            du = -dG * u * G
            dv = -dG * v * G
            su = SU[g]
            sv = SV[g]
            t = f_z[i]
            denom = NR[g, 0] * d[0] + NR[g, 1] * d[1] + NR[g, 2] * d[2]
            e0 = t * d[0] - (P[g, 0] - C[0])
            e1 = t * d[1] - (P[g, 1] - C[1])
            e2 = t * d[2] - (P[g, 2] - C[2])
            cu = du / su
            cv = dv / sv
            gD0 = cu * TU[g, 0] + cv * TV[g, 0]
            gD1 = cu * TU[g, 1] + cv * TV[g, 1]
            gD2 = cu * TU[g, 2] + cv * TV[g, 2]
            gt = gz + d[0] * gD0 + d[1] * gD1 + d[2] * gD2
            q = gt / denom
            dP[g, 0] += -gD0 + q * NR[g, 0]
            dP[g, 1] += -gD1 + q * NR[g, 1]
            dP[g, 2] += -gD2 + q * NR[g, 2]
            dNR[g, 0] += -q * e0 + g_normal[p, 0] * w * s
            dNR[g, 1] += -q * e1 + g_normal[p, 1] * w * s
            dNR[g, 2] += -q * e2 + g_normal[p, 2] * w * s
            dTU[g, 0] += cu * e0
            dTU[g, 1] += cu * e1
            dTU[g, 2] += cu * e2
            dTV[g, 0] += cv * e0
            dTV[g, 1] += cv * e1
            dTV[g, 2] += cv * e2
            dlsu[g] += -du * u
            dlsv[g] += -dv * v
    return dP, dTU, dTV, dNR, dlsu, dlsv, dlogit, dcol


@njit(cache=True)
def distortion(offsets, f_w, f_z):
    """Per-pixel sum over ordered pairs of w_i w_j |z_i - z_j| and its fragment gradients."""
    npix = len(offsets) - 1
    loss = np.zeros(npix)
    g_w = np.zeros(len(f_w))
    g_z = np.zeros(len(f_w))
    for p in range(npix):
        start = offsets[p]
        stop = offsets[p + 1]
        m = stop - start
        if m < 2:
            continue
        idx = np.argsort(f_z[start:stop], kind="mergesort") + start
        A_tot = 0.0
        D_tot = 0.0
        for i in idx:
            A_tot += f_w[i]
            D_tot += f_w[i] * f_z[i]
        A_lo = 0.0
        D_lo = 0.0
        total = 0.0
        for i in idx:
            w = f_w[i]
            z = f_z[i]
            A_hi = A_tot - A_lo - w
            D_hi = D_tot - D_lo - w * z
            s = (z * A_lo - D_lo) + (D_hi - z * A_hi)
            total += w * s
            g_w[i] = 2.0 * s
            g_z[i] = 2.0 * w * (A_lo - A_hi)
            A_lo += w
            D_lo += w * z
        loss[p] = total
    return loss, g_w, g_z
