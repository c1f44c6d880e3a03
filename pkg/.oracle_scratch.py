# Scratch oracle computations. Independent arithmetic (sympy/mpmath/plain python),
# no package imports. Values printed here get frozen into the test files.
import mpmath as mp
import sympy as sp

mp.mp.dps = 30

print("== geometry ==")
# sphere landing at x=(1.1,0,0): J = 1.21-1 = 0.21, gradJ = (2.2,0,0), G = 4.84
J = sp.Rational(21, 100)
gJ = sp.Rational(22, 10)
G = gJ * gJ
landing_x = gJ * J / G
print("sphere landing x-component:", sp.nsimplify(landing_x), float(landing_x))

# disk landing at (1.2,0), eps=0.05: J = 0.44+0.05 = 0.49, gradJ=(2.4,0), G=5.76
Jd = sp.Rational(49, 100)
gJd = sp.Rational(24, 10)
land_d = gJd * Jd / (gJd * gJd)
print("disk landing x-component:", sp.nsimplify(land_d), float(land_d))

# H2 sphere x=(1.1,0,0), p=(1,2,0): entry = p^T (2I) dir = 2 * (p . dir)
dirx = landing_x
h2 = 2 * 1 * dirx
print("H2 entry for p=(1,2,0):", float(h2))

print("\n== dynamics ==")
# forward OLLA euler landing example: alpha=50, sigma=1, dt=0.01
# coeff = alpha*sigma^4*dt/2 = 0.25; x_new = 1.1 - 0.25*landing
coeff = sp.Rational(50, 1) * sp.Rational(1, 100) / 2
xn = sp.Rational(11, 10) - coeff * landing_x
print("olla euler example x:", float(xn))

# friction factor gamma=3 sigma=1 dt=0.04
a = mp.e**(mp.mpf(-3) * mp.mpf("0.04"))
print("a = exp(-0.12):", a)
print("ulla ballistic y: 0.04*a =", mp.mpf("0.04") * a)

# under-loss weight: 1/(2 sigma^4 dt^2 (1-a^2)), sigma=1, dt=0.04
w = 1 / (2 * mp.mpf("0.04")**2 * (1 - a**2))
print("under weight:", w)

# decay oracle: 0.2*exp(-5)
print("0.2*e^-5 =", mp.mpf("0.2") * mp.e**-5)
# tau = ln(21)/50
print("tau = ln(21)/50 =", mp.log(21) / 50)
# S(1) for sigma_min=0, sigma_max=1, T=1: integral t^2 = 1/3
print("S(1) =", sp.Rational(1, 3), float(sp.Rational(1, 3)))

# pseudo-momentum example: x_prev=(1,0,0), x=(1,0.01,0), s2dt=0.01
# v = (0,1,0); gradJ at x = (2, 0.02, 0); G = 4.0004
v = sp.Matrix([0, 1, 0])
gJv = sp.Matrix([2, sp.Rational(2, 100), 0])
Gp = (gJv.T * gJv)[0]
pt = v - gJv * (gJv.dot(v)) / Gp
print("pseudo-momentum:", [float(c) for c in pt], "norm:", float(pt.norm()))

print("\n== metrics ==")
# JSD example P=(.5,.5), Q=(1,0)
def kl2(p, q):
    s = mp.mpf(0)
    for pi, qi in zip(p, q):
        if pi > 0:
            s += pi * mp.log(pi / qi) / mp.log(2)
    return s
P = [mp.mpf("0.5"), mp.mpf("0.5")]
Q = [mp.mpf(1), mp.mpf(0)]
M = [(p + q) / 2 for p, q in zip(P, Q)]
js = kl2(P, M) / 2 + kl2(Q, M) / 2
print("JS =", js, "sqrt:", mp.sqrt(js))

print("\n== decay feasibility (criterion 1) ==")
# euler relative error at |h|=1e-6 floor: c=0.05
c = mp.mpf("0.05")
h0 = mp.mpf("0.2")
k_star = mp.log(h0 / mp.mpf("1e-6")) / c
err = 1 - ((1 - c) * mp.e**c)**k_star
print("k* =", k_star, "euler rel err at floor:", err)

print("\n== vMF / bins floors ==")
for K, n in [(72, 10**4), (400, 10**4), (800, 10**4), (64, 10**4), (32, 10**4)]:
    js_floor = (K - 1) / (8 * n * mp.log(2))
    print(f"K={K} n={n}: E[JS]~{float(js_floor):.5f} bits, JSD~{float(mp.sqrt(js_floor)):.4f}")
# two-sample floors (both histograms empirical): double the chi2
for K, n in [(32, 10**4), (48, 10**4), (72, 10**4), (800, 10**4), (64, 5000)]:
    js_floor = 2 * (K - 1) / (8 * n * mp.log(2))
    print(f"two-sample K={K} n={n}: JSD~{float(mp.sqrt(js_floor)):.4f}")
