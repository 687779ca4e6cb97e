"""Unit conversion constants used at the external interfaces."""

import math

KT = 0.514444  # m/s per knot
FT = 0.3048  # m per foot
DEG = math.pi / 180.0
G0 = 9.80665  # m/s^2


def kt_to_ms(v):
    return v * KT


def ms_to_kt(v):
    return v / KT


def ft_to_m(h):
    return h * FT


def m_to_ft(h):
    return h / FT
