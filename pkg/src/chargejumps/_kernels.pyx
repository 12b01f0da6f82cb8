# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rolling reduced-chi2 walk over one scan segment."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def walk_segment(const double[::1] x, const double[:, ::1] pred,
                 const double[:, ::1] weight, Py_ssize_t start,
                 double threshold, Py_ssize_t min_len):
    """Accumulate prefix chi2 from ``start`` until the trigger fires.

    ``pred`` and ``weight`` are laid out (point, theta).  Returns
    ``(trigger, chi2_min, argmin)`` where ``trigger`` is the absolute index of
    the first point whose prefix exceeds ``threshold`` once more than
    ``min_len`` points are in the segment, or -1.
    """
    cdef Py_ssize_t n_pts = x.shape[0]
    cdef Py_ssize_t n_theta = pred.shape[1]
    cdef Py_ssize_t i, j, n = 0, best_j, trigger = -1
    cdef double r, xi, best, c
    if start < 0 or start >= n_pts:
        raise ValueError("start outside scan")
    acc_arr = np.zeros(n_theta, dtype=np.float64)
    chi_arr = np.empty(n_pts - start, dtype=np.float64)
    arg_arr = np.empty(n_pts - start, dtype=np.intp)
    cdef double[::1] acc = acc_arr
    cdef double[::1] chi = chi_arr
    cdef Py_ssize_t[::1] arg = arg_arr
    with nogil:
        for i in range(start, n_pts):
            n = i - start + 1
            xi = x[i]
            for j in range(n_theta):
                r = xi - pred[i, j]
                acc[j] += r * r * weight[i, j]
            best = acc[0]
            best_j = 0
            for j in range(1, n_theta):
                if acc[j] < best:
                    best = acc[j]
                    best_j = j
            c = best / n
            chi[n - 1] = c
            arg[n - 1] = best_j
            if n > min_len and c > threshold:
                trigger = i
                break
    return trigger, chi_arr[:n], arg_arr[:n]
